"""Branch/trunk operator models: input wiring for all eight variants.

Every model predicts G(u)(t, x) = sum_k b_k * g_k as an inner product of a
branch embedding (encodes the input function u at m sensors) and a trunk
embedding (encodes the query point).  The variants differ only in what each
subnetwork is fed:

    kind        branch input          trunk input
    vanilla     u                     t, e(x)
    modified    u                     t, e(x)            (+ two encoders)
    Bx          u, e(x)               t, e(x)
    TL          u                     t, e(x), u(x)
    BxTL        u, e(x)               t, e(x), u(x)
    BxTG        u, e(x)               t, e(x), u
    TF          u                     t, e(x), Re/Im u_hat over the mode set
    BxTF        u, e(x)               t, e(x), Re/Im u_hat over the mode set

e(x) is the configured coordinate embedding (raw x, deterministic harmonics,
or random Fourier features); t always enters raw.  u(x) off the sensor grid
is linear interpolation, and its x-derivative (the interpolant slope) is
carried through the jet so that model derivatives account for every
x-dependence of the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError, EvaluationError
from .network import (Channels, DenseNetwork, Layer, ch_linear, ch_mix,
                      ch_mul, ch_tanh, init_dense, mlp_channels, philox)

__all__ = [
    "KINDS", "EmbeddingSpec", "VariantSpec", "OperatorModel", "FunctionSample",
    "embed_coordinates", "fourier_coeffs", "operator_forward",
    "modified_forward", "build_operator_model", "branch_input_dim",
    "trunk_input_dim", "predict_grid", "model_networks",
]

KINDS = ("vanilla", "modified", "Bx", "TL", "BxTL", "BxTG", "TF", "BxTF")
_BRANCH_X = frozenset({"Bx", "BxTL", "BxTG", "BxTF"})
_TRUNK_LOCAL = frozenset({"TL", "BxTL"})
_TRUNK_FOURIER = frozenset({"TF", "BxTF"})


# ---------------------------------------------------------------------------
# coordinate embeddings


@dataclass(frozen=True)
class EmbeddingSpec:
    """How spatial coordinates are presented to the networks.

    mode "none" passes x through; "deterministic" uses paired sine/cosine
    harmonics k = 1..order of the domain period; "random" uses `count` random
    frequency draws (omega ~ N(0, (2*pi*scale)^2), shared random phase per
    draw, paired sine/cosine).
    """

    mode: str = "none"
    length: float = 1.0
    order: int = 0
    count: int = 0
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("none", "deterministic", "random"):
            raise ConfigError(f"unknown embedding mode {self.mode!r}")
        if self.mode == "deterministic" and self.order < 1:
            raise ConfigError("deterministic embedding needs order >= 1")
        if self.mode == "random" and self.count < 1:
            raise ConfigError("random embedding needs count >= 1")

    @property
    def dim(self) -> int:
        if self.mode == "none":
            return 1
        if self.mode == "deterministic":
            return 2 * self.order
        return 2 * self.count


def _embedding_freqs(spec: EmbeddingSpec) -> tuple[np.ndarray, np.ndarray]:
    """(angular frequencies, phases) for the sine/cosine pairs."""
    if spec.mode == "deterministic":
        k = np.arange(1, spec.order + 1, dtype=np.float64)
        return 2.0 * np.pi * k / spec.length, np.zeros_like(k)
    rng = philox(spec.seed, 7)
    omega = rng.normal(0.0, 2.0 * np.pi * spec.scale, size=spec.count)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=spec.count)
    return omega, phase


def _embed_block(spec: EmbeddingSpec, x: np.ndarray, x_order: int) -> Channels:
    """Feature block (B, dim) with x-derivative channels up to x_order."""
    x = np.asarray(x, dtype=np.float64)
    B = x.shape[0]
    if spec.mode == "none":
        val = x[:, None]
        out = Channels(val=val)
        if x_order >= 1:
            out.dx = np.ones((B, 1))
        if x_order >= 2:
            out.dxx = np.zeros((B, 1))
        if x_order >= 3:
            out.dxxx = np.zeros((B, 1))
        return out
    omega, phase = _embedding_freqs(spec)
    theta = x[:, None] * omega[None, :] + phase[None, :]
    s, c = np.sin(theta), np.cos(theta)
    dim = 2 * omega.size
    val = np.empty((B, dim))
    val[:, 0::2], val[:, 1::2] = s, c
    out = Channels(val=val)
    if x_order >= 1:
        dx = np.empty((B, dim))
        dx[:, 0::2], dx[:, 1::2] = omega * c, -omega * s
        out.dx = dx
    if x_order >= 2:
        w2 = omega * omega
        dxx = np.empty((B, dim))
        dxx[:, 0::2], dxx[:, 1::2] = -w2 * s, -w2 * c
        out.dxx = dxx
    if x_order >= 3:
        w3 = omega ** 3
        dxxx = np.empty((B, dim))
        dxxx[:, 0::2], dxxx[:, 1::2] = -w3 * c, w3 * s
        out.dxxx = dxxx
    return out


def embed_coordinates(spec: EmbeddingSpec, x: float) -> np.ndarray:
    """Feature vector for a single spatial coordinate."""
    return _embed_block(spec, np.asarray([x], dtype=np.float64), 0).val[0]


# ---------------------------------------------------------------------------
# truncated Fourier summaries of the input function


def fourier_coeffs(u: np.ndarray, modes, drop_endpoint: bool = True) -> np.ndarray:
    """(Re, Im) pairs of the normalized DFT of u for each requested mode.

    u must be sampled uniformly over one period.  With `drop_endpoint` the
    last sample is discarded first (our sensor grids duplicate x = L); pass
    False for raw period-M sample vectors.  Coefficients use the convention
    u_hat_k = (1/M) sum_j u_j exp(-2*pi*i*k*j/M), concatenated in ascending k.
    """
    u = np.asarray(u, dtype=np.float64)
    if drop_endpoint:
        u = u[:-1]
    M = u.shape[-1]
    modes = sorted(int(k) for k in modes)
    if modes and modes[-1] >= M / 2:
        raise ContractError(
            f"mode {modes[-1]} is not resolvable with {M} samples (aliasing)")
    if min(modes, default=0) < 0:
        raise ContractError("mode indices must be non-negative")
    spectrum = np.fft.rfft(u, axis=-1) / M
    out = np.empty(u.shape[:-1] + (2 * len(modes),))
    for i, k in enumerate(modes):
        out[..., 2 * i] = spectrum[..., k].real
        out[..., 2 * i + 1] = spectrum[..., k].imag
    return out


# ---------------------------------------------------------------------------
# model containers


@dataclass(frozen=True)
class VariantSpec:
    """Which architecture, with embedding and Fourier-truncation settings."""

    kind: str
    embedding: EmbeddingSpec = EmbeddingSpec()
    fourier_modes: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown variant kind {self.kind!r}")
        if self.kind in _TRUNK_FOURIER:
            if not self.fourier_modes:
                raise ConfigError(f"{self.kind} requires a non-empty mode set")
        elif self.fourier_modes:
            raise ConfigError(f"{self.kind} must not carry a Fourier mode set")

    @property
    def branch_has_x(self) -> bool:
        return self.kind in _BRANCH_X


def branch_input_dim(spec: VariantSpec, m: int) -> int:
    return m + (spec.embedding.dim if spec.branch_has_x else 0)


def trunk_input_dim(spec: VariantSpec, m: int) -> int:
    extra = 0
    if spec.kind in _TRUNK_LOCAL:
        extra = 1
    elif spec.kind == "BxTG":
        extra = m
    elif spec.kind in _TRUNK_FOURIER:
        extra = 2 * len(spec.fourier_modes)
    return 1 + spec.embedding.dim + extra


@dataclass
class OperatorModel:
    """All trainable state of one operator network."""

    spec: VariantSpec
    m: int
    branch: DenseNetwork
    trunk: DenseNetwork
    u_encoder: DenseNetwork | None = None  # single layer, modified kind only
    y_encoder: DenseNetwork | None = None

    def __post_init__(self):
        if self.branch.out_dim != self.trunk.out_dim:
            raise ConfigError("branch and trunk output widths must agree")
        if (self.spec.kind == "modified") != (self.u_encoder is not None):
            raise ConfigError("encoders are present iff the kind is modified")


@dataclass
class FunctionSample:
    """One input function at m sensors plus (optionally) its reference solution."""

    sensors: np.ndarray
    length: float
    solution: np.ndarray | None = None
    t_axis: np.ndarray | None = None
    x_axis: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.sensors.shape[0]

    def sensor_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.m)


def build_operator_model(spec: VariantSpec, m: int, width: int, depth: int,
                         basis: int | None = None, seed: int = 0) -> OperatorModel:
    """Glorot-initialized model; `depth` counts hidden layers, `basis` is the
    inner-product width (defaults to `width`)."""
    basis = width if basis is None else basis
    b_in, t_in = branch_input_dim(spec, m), trunk_input_dim(spec, m)
    branch = init_dense([b_in] + [width] * depth + [basis], seed, stream=1)
    trunk = init_dense([t_in] + [width] * depth + [basis], seed, stream=2)
    u_enc = y_enc = None
    if spec.kind == "modified":
        u_enc = init_dense([b_in, width], seed, stream=3)
        y_enc = init_dense([t_in, width], seed, stream=4)
    return OperatorModel(spec, m, branch, trunk, u_enc, y_enc)


def model_networks(model: OperatorModel) -> list[DenseNetwork]:
    nets = [model.branch, model.trunk]
    if model.spec.kind == "modified":
        nets += [model.u_encoder, model.y_encoder]
    return nets


def with_networks(model: OperatorModel, nets: list[DenseNetwork]) -> OperatorModel:
    out = OperatorModel.__new__(OperatorModel)
    out.spec, out.m = model.spec, model.m
    out.branch, out.trunk = nets[0], nets[1]
    out.u_encoder = nets[2] if len(nets) > 2 else None
    out.y_encoder = nets[3] if len(nets) > 3 else None
    return out


# ---------------------------------------------------------------------------
# input assembly


def interp_with_slope(u_rows: np.ndarray, length: float,
                      x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation of each row's sensor values at its x, plus slope.

    The sensor grid is uniform over [0, length].  At interior sensor points
    the slope of the interval to the left of x is used (right-continuous in
    the cell index).
    """
    u_rows = np.atleast_2d(u_rows)
    B, m = u_rows.shape
    h = length / (m - 1)
    idx = np.clip((x / h).astype(np.int64), 0, m - 2)
    rows = np.arange(B)
    lo = u_rows[rows, idx]
    slope = (u_rows[rows, idx + 1] - lo) / h
    return lo + slope * (x - idx * h), slope


def _stack_channels(blocks: list[Channels], x_order: int,
                    with_t: bool) -> Channels:
    """Concatenate feature blocks along the feature axis, channel by channel."""
    B = blocks[0].val.shape[0]

    def cat(name):
        parts = []
        for blk in blocks:
            ch = getattr(blk, name)
            if ch is None:
                ch = np.zeros_like(blk.val)
            parts.append(ch)
        return np.concatenate(parts, axis=1)

    out = Channels(val=np.concatenate([b.val for b in blocks], axis=1))
    if with_t:
        out.dt = cat("dt")
    if x_order >= 1:
        out.dx = cat("dx")
    if x_order >= 2:
        out.dxx = cat("dxx")
    if x_order >= 3:
        out.dxxx = cat("dxxx")
    return out


def _const_block(arr: np.ndarray) -> Channels:
    return Channels(val=arr)


def trunk_inputs(model: OperatorModel, t: np.ndarray, x: np.ndarray,
                 u_rows: np.ndarray, coeff_rows: np.ndarray | None,
                 x_order: int, with_t: bool) -> Channels:
    """Assemble trunk-network input rows (B, trunk_in) with jet channels."""
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    t_blk = Channels(val=t[:, None])
    if with_t:
        t_blk.dt = np.ones((t.shape[0], 1))
    blocks = [t_blk, _embed_block(model.spec.embedding, x, x_order)]
    kind = model.spec.kind
    if kind in _TRUNK_LOCAL:
        uval, slope = interp_with_slope(u_rows, model.spec.embedding.length, x)
        blk = Channels(val=uval[:, None])
        if x_order >= 1:
            blk.dx = slope[:, None]
        blocks.append(blk)
    elif kind == "BxTG":
        blocks.append(_const_block(u_rows))
    elif kind in _TRUNK_FOURIER:
        if coeff_rows is None:
            coeff_rows = fourier_coeffs(u_rows, model.spec.fourier_modes)
        blocks.append(_const_block(coeff_rows))
    return _stack_channels(blocks, x_order, with_t)


def branch_inputs(model: OperatorModel, x: np.ndarray, u_rows: np.ndarray,
                  x_order: int) -> Channels:
    """Assemble branch-network input rows (B, branch_in) with jet channels."""
    if not model.spec.branch_has_x:
        return Channels(val=np.atleast_2d(u_rows))
    blocks = [_const_block(np.atleast_2d(u_rows)),
              _embed_block(model.spec.embedding, np.asarray(x, dtype=np.float64),
                           x_order)]
    return _stack_channels(blocks, x_order, with_t=False)


# ---------------------------------------------------------------------------
# forward passes


def _sum_basis(ch: Channels) -> Channels:
    f = lambda z: None if z is None else z.sum(axis=1)
    return Channels(val=ch.val.sum(axis=1), dt=f(ch.dt), dx=f(ch.dx),
                    dxx=f(ch.dxx), dxxx=f(ch.dxxx))


def _mixed_mlp(layers: list[Layer], ch: Channels, u_ch: Channels,
               v_ch: Channels) -> Channels:
    """Hidden states are blended with the two encoder embeddings layer by layer."""
    h = ch
    for lay in layers[:-1]:
        z = ch_tanh(ch_linear(h, lay.W, lay.b))
        h = ch_mix(u_ch, v_ch, z)
    last = layers[-1]
    return ch_linear(h, last.W, last.b)


def forward_channels(model: OperatorModel, branch_ch: Channels,
                     trunk_ch: Channels) -> tuple[Channels, Channels, Channels]:
    """Returns (output, branch output, trunk output) jets; output is (B,)."""
    if model.spec.kind == "modified":
        enc_u, enc_y = model.u_encoder.layers[0], model.y_encoder.layers[0]
        u_ch = ch_tanh(ch_linear(branch_ch, enc_u.W, enc_u.b))
        v_ch = ch_tanh(ch_linear(trunk_ch, enc_y.W, enc_y.b))
        b = _mixed_mlp(model.branch.layers, branch_ch, u_ch, v_ch)
        g = _mixed_mlp(model.trunk.layers, trunk_ch, u_ch, v_ch)
    else:
        b = mlp_channels(model.branch.layers, branch_ch)
        g = mlp_channels(model.trunk.layers, trunk_ch)
    return _sum_basis(ch_mul(b, g)), b, g


def operator_channels(model: OperatorModel, t: np.ndarray, x: np.ndarray,
                      u_rows: np.ndarray, coeff_rows: np.ndarray | None = None,
                      x_order: int = 0, with_t: bool = False) -> Channels:
    """Batched operator output with the requested derivative channels."""
    b_ch = branch_inputs(model, x, u_rows, x_order)
    t_ch = trunk_inputs(model, t, x, u_rows, coeff_rows, x_order, with_t)
    out, _, _ = forward_channels(model, b_ch, t_ch)
    return out


def _point_eval(model: OperatorModel, sample: FunctionSample, t: float,
                x: float) -> float:
    u_rows = sample.sensors[None, :]
    out, b, g = forward_channels(
        model,
        branch_inputs(model, np.asarray([x]), u_rows, 0),
        trunk_inputs(model, np.asarray([t]), np.asarray([x]), u_rows, None, 0, False))
    if not (np.isfinite(b.val).all() and np.isfinite(g.val).all()):
        raise EvaluationError(f"variant {model.spec.kind}: non-finite "
                              f"subnetwork output at (t={t}, x={x})")
    return float(out.val[0])


def operator_forward(model: OperatorModel, sample: FunctionSample, t: float,
                     x: float) -> float:
    """G(u)(t, x) for any variant."""
    if sample.m != model.m:
        raise ConfigError(f"sample has {sample.m} sensors, model expects {model.m}")
    return _point_eval(model, sample, t, x)


def modified_forward(model: OperatorModel, sample: FunctionSample, t: float,
                     x: float) -> float:
    """Encoder-blended forward pass; the model must be the modified kind."""
    if model.spec.kind != "modified":
        raise ContractError("modified_forward requires a modified-kind model")
    return operator_forward(model, sample, t, x)


# ---------------------------------------------------------------------------
# grid prediction (value only, evaluation paths)


def _trunk_sample_independent(kind: str) -> bool:
    return kind in ("vanilla", "Bx")


def _branch_point_independent(kind: str) -> bool:
    return kind in ("vanilla", "TL", "TF")


def predict_grid(model: OperatorModel, sample: FunctionSample,
                 t_axis: np.ndarray, x_axis: np.ndarray,
                 _trunk_cache: dict | None = None) -> np.ndarray:
    """Evaluate G(u) on the full (t, x) grid; returns (n_t, n_x)."""
    n_t, n_x = len(t_axis), len(x_axis)
    T, X = np.meshgrid(np.asarray(t_axis, float), np.asarray(x_axis, float),
                       indexing="ij")
    t_flat, x_flat = T.ravel(), X.ravel()
    P = t_flat.size
    kind = model.spec.kind
    u_rows_pts = np.broadcast_to(sample.sensors, (P, sample.m))
    coeff_rows = None
    if kind in _TRUNK_FOURIER:
        one = fourier_coeffs(sample.sensors, model.spec.fourier_modes)
        coeff_rows = np.broadcast_to(one, (P, one.shape[-1]))

    if kind == "modified" or not _branch_point_independent(kind):
        b_ch = branch_inputs(model, x_flat, u_rows_pts, 0)
        t_ch = trunk_inputs(model, t_flat, x_flat, u_rows_pts, coeff_rows, 0, False)
        out, _, _ = forward_channels(model, b_ch, t_ch)
        return out.val.reshape(n_t, n_x)

    # branch is point-independent: one branch row, many trunk rows
    b_out = mlp_channels(model.branch.layers,
                         branch_inputs(model, np.zeros(1), sample.sensors[None, :], 0))
    if _trunk_sample_independent(kind) and _trunk_cache is not None and "g" in _trunk_cache:
        g_val = _trunk_cache["g"]
    else:
        t_ch = trunk_inputs(model, t_flat, x_flat, u_rows_pts, coeff_rows, 0, False)
        g_val = mlp_channels(model.trunk.layers, t_ch).val
        if _trunk_sample_independent(kind) and _trunk_cache is not None:
            _trunk_cache["g"] = g_val
    return (g_val @ b_out.val[0]).reshape(n_t, n_x)


def predict_grids(model: OperatorModel, samples: list[FunctionSample],
                  t_axis: np.ndarray, x_axis: np.ndarray) -> np.ndarray:
    """Grid predictions for many samples, reusing the trunk where possible."""
    cache: dict = {}
    return np.stack([predict_grid(model, s, t_axis, x_axis, _trunk_cache=cache)
                     for s in samples])
