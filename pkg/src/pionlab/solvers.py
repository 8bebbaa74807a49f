"""Input-function sampling and high-accuracy reference solvers.

Four generators:
  * Gaussian random fields (squared-exponential kernel via Cholesky, or a
    periodic spectral measure) for the advection / diffusion-reaction
    coefficient and the Burgers initial condition;
  * variable-coefficient Lax-Wendroff for the advection equation;
  * Crank-Nicolson diffusion with explicit trapezoidal reaction/source for
    the diffusion-reaction equation;
  * a Fourier pseudo-spectral ETDRK4 integrator for Burgers and KdV, with
    2/3-rule dealiasing and contour-averaged scheme coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import GenerationError
from .network import philox

__all__ = [
    "GrfSpec", "SolverOutput", "sample_grf", "solve_advection",
    "solve_diffusion_reaction", "solve_spectral_etdrk4",
    "kdv_initial_condition",
]


@dataclass(frozen=True)
class GrfSpec:
    """Distribution of input functions on a uniform sensor grid.

    mode "rbf": zero-mean Gaussian with squared-exponential covariance
    (correlation length `corr_length`, pointwise std `scale`).
    mode "periodic_spectral": independent complex Fourier coefficients with
    variance amplitude^2 * (4 pi^2 k^2 / L^2 + shift)^(-power), conjugate
    symmetrized, so draws are periodic by construction.
    """

    mode: str
    m: int
    length: float = 1.0
    corr_length: float = 0.2
    scale: float = 1.0
    amplitude: float = 25.0
    shift: float = 25.0
    power: int = 4


@dataclass
class SolverOutput:
    solution: np.ndarray             # (n_t, n_x)
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Gaussian random fields


def _rbf_cholesky(x: np.ndarray, corr_length: float, scale: float) -> np.ndarray:
    K = scale**2 * np.exp(-0.5 * (x[:, None] - x[None, :])**2 / corr_length**2)
    jitter = 1e-10
    while jitter <= 1e-6:
        try:
            return np.linalg.cholesky(K + jitter * np.eye(len(x)))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise GenerationError("covariance factorization failed even with jitter 1e-6")


def sample_grf(spec: GrfSpec, seed: int, strictly_positive: bool = False,
               stream: int = 0) -> np.ndarray:
    """One draw on the sensor grid; `strictly_positive` rescales the draw to
    v - min(v) + 1 (used for advection velocities).  `stream` selects an
    independent draw under the same seed (per-sample streams)."""
    rng = philox(seed, 11, stream)
    if spec.mode == "rbf":
        x = np.linspace(0.0, spec.length, spec.m)
        L = _rbf_cholesky(x, spec.corr_length, spec.scale)
        u = L @ rng.standard_normal(spec.m)
    elif spec.mode == "periodic_spectral":
        M = spec.m - 1                      # distinct points; sensors duplicate x = L
        k = np.arange(M // 2 + 1)
        sigma = spec.amplitude * (4 * np.pi**2 * k**2 / spec.length**2
                                  + spec.shift) ** (-spec.power / 2.0)
        z = np.empty(M // 2 + 1, dtype=np.complex128)
        z[0] = sigma[0] * rng.standard_normal()
        re = rng.standard_normal(M // 2 - 1)
        im = rng.standard_normal(M // 2 - 1)
        z[1:-1] = sigma[1:-1] * (re + 1j * im) / np.sqrt(2.0)
        z[-1] = sigma[-1] * rng.standard_normal()
        u_inner = np.fft.irfft(z * M, n=M)
        u = np.concatenate([u_inner, u_inner[:1]])
    else:
        raise GenerationError(f"unknown GRF mode {spec.mode!r}")
    if strictly_positive:
        u = u - u.min() + 1.0
    return u


# ---------------------------------------------------------------------------
# advection: variable-coefficient Lax-Wendroff


def solve_advection(u: np.ndarray, n_t: int = 101, n_x: int = 101,
                    refine: int = 4, cfl: float = 0.5) -> SolverOutput:
    """s_t + u(x) s_x = 0 on [0,1]^2, s(0,x) = sin(pi x), s(t,0) = sin(pi t/2).

    Marches on an internal grid `refine` times finer than the output grid,
    substepping so that max(u) dt / dx <= cfl; the outflow node is filled by
    linear extrapolation.
    """
    u = np.asarray(u, dtype=np.float64)
    if not np.isfinite(u).all() or u.min() <= 0.0:
        raise GenerationError("advection velocity must be finite and strictly positive")
    nx_i = (n_x - 1) * refine + 1
    x_i = np.linspace(0.0, 1.0, nx_i)
    u_i = np.interp(x_i, np.linspace(0.0, 1.0, len(u)), u)
    dx = 1.0 / (nx_i - 1)
    dt_out = 1.0 / (n_t - 1)
    sub = max(1, int(np.ceil(u_i.max() * dt_out / (cfl * dx))))
    dt = dt_out / sub
    if not np.isfinite(dt) or dt <= 0.0:
        raise GenerationError("no admissible time step for the advection solve")

    uc = u_i[1:-1]
    u_ip = 0.5 * (u_i[2:] + u_i[1:-1])
    u_im = 0.5 * (u_i[1:-1] + u_i[:-2])
    c1 = uc * dt / (2.0 * dx)
    c2 = 0.5 * (dt / dx)**2 * uc

    s = np.sin(np.pi * x_i)
    out = np.empty((n_t, n_x))
    out[0] = s[::refine]
    t = 0.0
    for n in range(1, n_t):
        for _ in range(sub):
            t += dt
            interior = (s[1:-1]
                        - c1 * (s[2:] - s[:-2])
                        + c2 * (u_ip * (s[2:] - s[1:-1]) - u_im * (s[1:-1] - s[:-2])))
            s_new = np.empty_like(s)
            s_new[1:-1] = interior
            s_new[0] = np.sin(np.pi * t / 2.0)
            s_new[-1] = 2.0 * s_new[-2] - s_new[-3]
            s = s_new
        out[n] = s[::refine]
    return SolverOutput(out, meta={"refine": refine, "substeps": sub, "dt": dt})


# ---------------------------------------------------------------------------
# diffusion-reaction: Crank-Nicolson diffusion, explicit trapezoidal source


def solve_diffusion_reaction(u: np.ndarray, D: float = 0.01, k: float = 0.01,
                             n_t: int = 101, n_x: int = 101,
                             dt_int: float = 1e-3) -> SolverOutput:
    """s_t = D s_xx + k s^2 + u(x) with zero initial and boundary values."""
    u = np.asarray(u, dtype=np.float64)
    x = np.linspace(0.0, 1.0, n_x)
    src = np.interp(x, np.linspace(0.0, 1.0, len(u)), u)[1:-1]
    dx = 1.0 / (n_x - 1)
    dt_out = 1.0 / (n_t - 1)
    sub = max(1, round(dt_out / dt_int))
    dt = dt_out / sub
    alpha = D * dt / (2.0 * dx**2)

    n_in = n_x - 2
    ab = np.zeros((3, n_in))
    ab[0, 1:] = -alpha
    ab[1, :] = 1.0 + 2.0 * alpha
    ab[2, :-1] = -alpha

    def rhs_base(s):
        return (1.0 - 2.0 * alpha) * s + alpha * (np.r_[s[1:], 0.0] + np.r_[0.0, s[:-1]])

    def react(s):
        return k * s * s + src

    s = np.zeros(n_in)
    out = np.zeros((n_t, n_x))
    for n in range(1, n_t):
        for _ in range(sub):
            base = rhs_base(s)
            f0 = react(s)
            s_star = solve_banded((1, 1), ab, base + dt * f0)
            s = solve_banded((1, 1), ab, base + 0.5 * dt * (f0 + react(s_star)))
        out[n, 1:-1] = s
    return SolverOutput(out, meta={"dt": dt, "substeps": sub})


# ---------------------------------------------------------------------------
# spectral ETDRK4 for the periodic problems


def _etdrk4_coeffs(Lh: np.ndarray, n_contour: int = 32, radius: float = 1.0):
    """Scheme coefficients phi-functions averaged over a circular contour
    around each (possibly complex) symbol value, avoiding cancellation."""
    theta = (np.arange(1, n_contour + 1) - 0.5) * 2.0 * np.pi / n_contour
    circ = radius * np.exp(1j * theta)
    z = Lh[:, None] + circ[None, :]
    ez, ez2 = np.exp(z), np.exp(z / 2.0)
    Q = ((ez2 - 1.0) / z).mean(axis=1)
    f1 = ((-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z**3).mean(axis=1)
    f2 = ((2.0 + z + ez * (-2.0 + z)) / z**3).mean(axis=1)
    f3 = ((-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z**3).mean(axis=1)
    return Q, f1, f2, f3


def _bandlimited_ic(ic: np.ndarray, s: int) -> np.ndarray:
    """Spectral grid values of the trigonometric interpolant of the sensors."""
    inner = np.asarray(ic, dtype=np.float64)[:-1]   # drop duplicated endpoint
    M = inner.size
    spec = np.fft.rfft(inner)
    padded = np.zeros(s // 2 + 1, dtype=np.complex128)
    padded[: M // 2 + 1] = spec * (s / M)
    padded[M // 2] = padded[M // 2].real  # old Nyquist becomes an interior mode
    return np.fft.irfft(padded, n=s)


def _trig_design(x_out: np.ndarray, length: float, n_modes: int) -> tuple:
    q = 2.0 * np.pi * np.arange(n_modes) / length
    ang = x_out[:, None] * q[None, :]
    return np.cos(ang), np.sin(ang)


def solve_spectral_etdrk4(ic: np.ndarray, kind: str, coeff: float,
                          length: float, s: int = 4096, dt: float = 1e-4,
                          n_t: int = 101, n_x: int = 101,
                          sample_id: str = "") -> SolverOutput:
    """Integrate s_t = -s s_x + nu s_xx (burgers) or -s s_x - delta^2 s_xxx
    (kdv) on a periodic domain of the given length.

    `ic` is the sensor vector (duplicated endpoint); time advances in Fourier
    space with ETDRK4, the quadratic term is evaluated pseudo-spectrally with
    2/3-rule dealiasing, and output grids follow the stored-dataset shapes.
    """
    n_steps_out = round((1.0 / (n_t - 1)) / dt)
    if abs(n_steps_out * dt - 1.0 / (n_t - 1)) > 1e-12:
        raise GenerationError("dt must divide the output interval exactly")

    v = np.fft.rfft(_bandlimited_ic(ic, s))
    q = 2.0 * np.pi * np.arange(s // 2 + 1) / length
    if kind == "burgers":
        L = -coeff * q**2 + 0j
    elif kind == "kdv":
        L = 1j * coeff**2 * q**3
    else:
        raise GenerationError(f"unknown spectral kind {kind!r}")

    E = np.exp(L * dt)
    E2 = np.exp(L * dt / 2.0)
    Q, f1, f2, f3 = (dt * c for c in _etdrk4_coeffs(L * dt))
    # quadratic term -(1/2) d/dx (s^2) with a 2/3-rule mode cutoff
    mask = np.arange(s // 2 + 1) <= (2.0 / 3.0) * (s // 2)
    g = -0.5j * q * mask

    def nonlin(vh):
        w = np.fft.irfft(vh, n=s)
        return g * np.fft.rfft(w * w)

    snapshots = [v.copy()]
    for step in range(n_steps_out * (n_t - 1)):
        Nv = nonlin(v)
        a = E2 * v + Q * Nv
        Na = nonlin(a)
        b = E2 * v + Q * Na
        Nb = nonlin(b)
        c = E2 * a + Q * (2.0 * Nb - Nv)
        Nc = nonlin(c)
        v = E * v + f1 * Nv + 2.0 * f2 * (Na + Nb) + f3 * Nc
        if (step + 1) % n_steps_out == 0:
            field_now = np.fft.irfft(v, n=s)
            if not np.isfinite(field_now).all() or np.abs(field_now).max() > 1e6:
                raise GenerationError(
                    f"spectral solve blew up at step {step + 1}"
                    + (f" (sample {sample_id})" if sample_id else ""))
            snapshots.append(v.copy())

    out = np.empty((n_t, n_x))
    if s % (n_x - 1) == 0:
        stride = s // (n_x - 1)
        for i, vh in enumerate(snapshots):
            w = np.fft.irfft(vh, n=s)
            out[i, :-1] = w[::stride]
            out[i, -1] = w[0]
    else:
        x_out = np.linspace(0.0, length, n_x)
        cosm, sinm = _trig_design(x_out, length, s // 2 + 1)
        for i, vh in enumerate(snapshots):
            re, im = vh.real / s, vh.imag / s
            re[1:-1] *= 2.0
            im[1:-1] *= 2.0
            out[i] = cosm @ re - sinm @ im
    return SolverOutput(out, meta={"s": s, "dt": dt, "kind": kind})


def kdv_initial_condition(seed: int, m: int = 257,
                          coeffs: tuple[float, float] | None = None,
                          stream: int = 0) -> np.ndarray:
    """a sin(x) + b cos(x) on the m-point grid over [0, 2*pi]; a, b standard
    normal draws unless given explicitly."""
    if coeffs is None:
        rng = philox(seed, 13, stream)
        a, b = rng.standard_normal(), rng.standard_normal()
    else:
        a, b = coeffs
    x = np.linspace(0.0, 2.0 * np.pi, m)
    return a * np.sin(x) + b * np.cos(x)
