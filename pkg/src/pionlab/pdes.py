"""The four benchmark problems: residuals, initial/boundary terms, collocation.

Residuals are defined once over derivative channels, so the same formula
serves closed-form fields (tests), plain model evaluation, and the taped
training path.  All left-hand sides carry the time derivative with unit
coefficient:

    advection            s_t + u(x) s_x
    diffusion-reaction   s_t - D s_xx - k s^2 - u(x)
    burgers              s_t + s s_x - nu s_xx
    kdv                  s_t + s s_x + delta^2 s_xxx
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .models import (FunctionSample, OperatorModel, fourier_coeffs,
                     interp_with_slope, operator_channels)
from .network import Channels, philox

__all__ = [
    "PdeSpec", "CollocationBatch", "ModelField",
    "advection", "diffusion_reaction", "burgers", "kdv",
    "residual", "residual_channels", "initial_term", "initial_target",
    "boundary_term", "sample_collocation", "default_counts",
]


_KIND_ORDER = {"advection": 1, "diffusion_reaction": 2, "burgers": 2, "kdv": 3}


@dataclass(frozen=True)
class PdeSpec:
    kind: str
    length: float
    boundary: str                 # inflow | dirichlet_zero | periodic_implicit
    diffusion: float = 0.0        # D
    reaction: float = 0.0         # k
    viscosity: float = 0.0        # nu
    dispersion: float = 0.0       # delta

    def __post_init__(self):
        if self.kind not in _KIND_ORDER:
            raise ConfigError(f"unknown PDE kind {self.kind!r}")
        if (self.kind == "kdv") != (abs(self.length - 2 * np.pi) < 1e-12):
            raise ConfigError("domain length is 2*pi exactly for the kdv kind")

    @property
    def x_order(self) -> int:
        """Highest spatial derivative order in the residual."""
        return _KIND_ORDER[self.kind]

    @property
    def has_boundary_loss(self) -> bool:
        return self.boundary in ("inflow", "dirichlet_zero")


def advection() -> PdeSpec:
    return PdeSpec("advection", length=1.0, boundary="inflow")


def diffusion_reaction(D: float = 0.01, k: float = 0.01) -> PdeSpec:
    return PdeSpec("diffusion_reaction", length=1.0, boundary="dirichlet_zero",
                   diffusion=D, reaction=k)


def burgers(nu: float = 1e-2) -> PdeSpec:
    return PdeSpec("burgers", length=1.0, boundary="periodic_implicit",
                   viscosity=nu)


def kdv(delta: float = 0.1) -> PdeSpec:
    return PdeSpec("kdv", length=2 * np.pi, boundary="periodic_implicit",
                   dispersion=delta)


# ---------------------------------------------------------------------------
# residual and constraint terms


def residual_channels(spec: PdeSpec, ch: Channels, u_at_x=None):
    """PDE left-hand side from derivative channels; works on arrays or tape Vars."""
    if spec.kind == "advection":
        return ch.dt + u_at_x * ch.dx
    if spec.kind == "diffusion_reaction":
        return ch.dt - spec.diffusion * ch.dxx - spec.reaction * (ch.val * ch.val) - u_at_x
    if spec.kind == "burgers":
        return ch.dt + ch.val * ch.dx - spec.viscosity * ch.dxx
    return ch.dt + ch.val * ch.dx + spec.dispersion**2 * ch.dxxx


def _require_channels(spec: PdeSpec, ch: Channels) -> None:
    needed = ["dt", "dx"] + (["dxx"] if spec.x_order >= 2 else []) \
        + (["dxxx"] if spec.x_order >= 3 else [])
    for name in needed:
        if getattr(ch, name) is None:
            raise ContractError(f"field does not provide the {name} derivative "
                                f"required by the {spec.kind} residual")


def residual(spec: PdeSpec, field, sample: FunctionSample, t, x):
    """Residual of `field` at (t, x); scalar in, scalar out (arrays allowed)."""
    scalar = np.isscalar(t) and np.isscalar(x)
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    ch = field.channels(t, x, x_order=spec.x_order, with_t=True)
    _require_channels(spec, ch)
    u_at = None
    if spec.kind in ("advection", "diffusion_reaction"):
        u_at, _ = interp_with_slope(
            np.broadcast_to(sample.sensors, (x.size, sample.m)), spec.length, x)
    r = residual_channels(spec, ch, u_at)
    return float(r[0]) if scalar else r


def initial_target(spec: PdeSpec, sample: FunctionSample, x):
    """The prescribed s(0, x) for each problem."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "advection":
        return np.sin(np.pi * x)
    if spec.kind == "diffusion_reaction":
        return np.zeros_like(x)
    val, _ = interp_with_slope(np.broadcast_to(sample.sensors, (x.size, sample.m)),
                               spec.length, x)
    return val


def initial_term(spec: PdeSpec, field, sample: FunctionSample, x):
    """field(0, x) minus the initial condition."""
    scalar = np.isscalar(x)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    vals = field.channels(np.zeros_like(x), x, x_order=0, with_t=False).val
    out = vals - initial_target(spec, sample, x)
    return float(out[0]) if scalar else out


def boundary_term(spec: PdeSpec, field, sample: FunctionSample, t):
    """Boundary mismatch vector; only the kinds with explicit boundary losses."""
    if not spec.has_boundary_loss:
        raise ContractError(f"{spec.kind} enforces boundaries implicitly; "
                            "there is no boundary term")
    scalar = np.isscalar(t)
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    left = field.channels(t, np.zeros_like(t), x_order=0, with_t=False).val
    if spec.kind == "advection":
        out = (left - np.sin(np.pi * t / 2.0))[:, None]
    else:
        right = field.channels(t, np.full_like(t, spec.length), x_order=0,
                               with_t=False).val
        out = np.stack([left, right], axis=1)
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# fields


class ModelField:
    """Adapter making an operator model a differentiable field for one sample."""

    def __init__(self, model: OperatorModel, sample: FunctionSample):
        self.model = model
        self.sample = sample
        self._coeffs = None
        if model.spec.kind in ("TF", "BxTF"):
            self._coeffs = fourier_coeffs(sample.sensors, model.spec.fourier_modes)

    def channels(self, t, x, x_order: int, with_t: bool) -> Channels:
        B = np.asarray(t).size
        u_rows = np.broadcast_to(self.sample.sensors, (B, self.sample.m))
        coeff_rows = None
        if self._coeffs is not None:
            coeff_rows = np.broadcast_to(self._coeffs, (B, self._coeffs.shape[-1]))
        return operator_channels(self.model, t, x, u_rows, coeff_rows,
                                 x_order=x_order, with_t=with_t)


# ---------------------------------------------------------------------------
# collocation


@dataclass
class CollocationBatch:
    """Residual / initial / boundary points with per-point weights."""

    residual_idx: np.ndarray   # function index per residual point
    residual_t: np.ndarray
    residual_x: np.ndarray
    initial_idx: np.ndarray
    initial_x: np.ndarray
    boundary_idx: np.ndarray   # empty for periodic kinds
    boundary_t: np.ndarray
    residual_w: np.ndarray
    initial_w: np.ndarray
    boundary_w: np.ndarray


@dataclass(frozen=True)
class CollocationCounts:
    initial: int
    boundary: int
    residual: int


def default_counts(kind: str) -> CollocationCounts:
    return {
        "advection": CollocationCounts(101, 101, 2500),
        "diffusion_reaction": CollocationCounts(101, 101, 100),
        "burgers": CollocationCounts(101, 0, 2500),
        "kdv": CollocationCounts(257, 0, 101 * 257),
    }[kind]


def _open_uniform(rng: np.random.Generator, n: int, lo: float, hi: float) -> np.ndarray:
    """Uniform draws strictly inside (lo, hi)."""
    out = rng.uniform(lo, hi, size=n)
    bad = (out <= lo) | (out >= hi)
    while bad.any():
        out[bad] = rng.uniform(lo, hi, size=int(bad.sum()))
        bad = (out <= lo) | (out >= hi)
    return out


def kdv_residual_grid(m: int, n_t: int = 101) -> tuple[np.ndarray, np.ndarray]:
    """Fixed residual grid: cell-midpoint times x the full sensor grid."""
    t = (np.arange(n_t) + 0.5) / n_t
    x = np.linspace(0.0, 2 * np.pi, m)
    T, X = np.meshgrid(t, x, indexing="ij")
    return T.ravel(), X.ravel()


def sample_collocation(spec: PdeSpec, n_functions: int,
                       counts: CollocationCounts | None = None,
                       seed: int = 0, m: int | None = None) -> CollocationBatch:
    """Collocation points for `n_functions` input functions.

    Residual points are fresh uniform draws in the open domain on every call
    (except kdv, which uses its fixed grid); initial points are the full
    sensor grid; boundary times are uniform draws.  Weights start at 1.
    """
    counts = counts or default_counts(spec.kind)
    if m is None:
        m = counts.initial
    rng = philox(seed, 21)

    if spec.kind == "kdv":
        gt, gx = kdv_residual_grid(m)
        res_idx = np.repeat(np.arange(n_functions), gt.size)
        res_t = np.tile(gt, n_functions)
        res_x = np.tile(gx, n_functions)
    else:
        n_res = n_functions * counts.residual
        res_idx = np.repeat(np.arange(n_functions), counts.residual)
        res_t = _open_uniform(rng, n_res, 0.0, 1.0)
        res_x = _open_uniform(rng, n_res, 0.0, spec.length)

    # initial points live on the sensor grid itself
    grid = np.linspace(0.0, spec.length, m)
    ini_idx = np.repeat(np.arange(n_functions), m)
    ini_x = np.tile(grid, n_functions)

    if spec.has_boundary_loss and counts.boundary > 0:
        bnd_idx = np.repeat(np.arange(n_functions), counts.boundary)
        bnd_t = _open_uniform(rng, n_functions * counts.boundary, 0.0, 1.0)
    else:
        bnd_idx = np.zeros(0, dtype=np.int64)
        bnd_t = np.zeros(0)

    return CollocationBatch(
        residual_idx=res_idx, residual_t=res_t, residual_x=res_x,
        initial_idx=ini_idx, initial_x=ini_x,
        boundary_idx=bnd_idx, boundary_t=bnd_t,
        residual_w=np.ones(res_t.size), initial_w=np.ones(ini_x.size),
        boundary_w=np.ones(bnd_t.size))
