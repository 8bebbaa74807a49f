"""Dense tanh networks with exact coordinate derivatives up to third order.

The same forward code runs in two modes: with plain ndarray parameters it is
straight numpy (evaluation), with `tape.Var` parameters the whole computation
lands on the differentiation tape so that any scalar built from the outputs
can be differentiated with respect to every weight and bias.

Coordinate derivatives are carried by truncated Taylor jets (`Channels`):
alongside the value we propagate d/dt to first order and d/dx up to third
order through every layer.  No mixed (t,x) partials are tracked; the PDE
residuals used here never need them.

Jet convention: a `None` channel is structurally zero.  Jets that flow
through a network must materialize the x-chain contiguously (dxx requires dx,
dxxx requires dxx); constant jets may leave any channel None.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tape
from .errors import ConfigError, ContractError, TrainingDivergenceError
from .tape import Var

__all__ = [
    "Layer", "DenseNetwork", "InputJet", "Channels",
    "init_dense", "forward", "mlp_channels", "input_derivatives",
    "param_gradient", "save_layers", "load_layers", "philox",
]


def philox(seed: int, *streams: int) -> np.random.Generator:
    """Counter-based seeded generator; distinct `streams` give distinct draws."""
    counter = list(streams) + [0] * (4 - len(streams))
    return np.random.Generator(np.random.Philox(key=np.uint64(seed), counter=counter))


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)


@dataclass
class DenseNetwork:
    """tanh hidden layers, affine output layer."""

    layers: list[Layer]

    def __post_init__(self):
        if self.layers and not isinstance(self.layers[0].W, np.ndarray):
            return  # taped view: parameters are tape Vars, skip validation
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.W.shape[0] != nxt.W.shape[1]:
                raise ConfigError(
                    f"layer dimensions do not chain: {prev.W.shape} -> {nxt.W.shape}")
        for lay in self.layers:
            if not (np.isfinite(lay.W).all() and np.isfinite(lay.b).all()):
                raise ConfigError("non-finite network parameters")

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[0]


def init_dense(sizes: list[int], seed: int, stream: int = 0) -> DenseNetwork:
    """Glorot-uniform weights, zero biases."""
    rng = philox(seed, stream)
    layers = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-lim, lim, size=(fan_out, fan_in))
        layers.append(Layer(W, np.zeros(fan_out)))
    return DenseNetwork(layers)


# ---------------------------------------------------------------------------
# generic scalar algebra: one code path for ndarray and Var entries


def _tanh(z):
    return z.tanh() if isinstance(z, Var) else np.tanh(z)


def _linear(x, W, b):
    if isinstance(W, Var) or isinstance(x, Var):
        return tape.linear(x, W, b)
    y = x @ W.T
    return y if b is None else y + b


# ---------------------------------------------------------------------------
# Taylor jets


@dataclass
class Channels:
    """Value plus derivative channels; None marks a structurally zero channel."""

    val: object
    dt: object = None
    dx: object = None
    dxx: object = None
    dxxx: object = None


def _nadd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _nmul(a, b):
    if a is None or b is None:
        return None
    return a * b


def ch_linear(ch: Channels, W, b) -> Channels:
    """Affine layer on a jet: the bias enters the value channel only."""
    f = lambda z: None if z is None else _linear(z, W, None)
    return Channels(val=_linear(ch.val, W, b), dt=f(ch.dt), dx=f(ch.dx),
                    dxx=f(ch.dxx), dxxx=f(ch.dxxx))


def ch_tanh(a: Channels) -> Channels:
    """tanh on a jet.

    With y = tanh(a): y' = 1 - y^2, y'' = -2 y y', y''' = -2 y'^2 - 2 y y''.
    """
    y = _tanh(a.val)
    out = Channels(val=y)
    if a.dt is None and a.dx is None and a.dxx is None and a.dxxx is None:
        return out
    u1 = 1.0 - y * y
    if a.dt is not None:
        out.dt = u1 * a.dt
    if a.dx is not None:
        out.dx = u1 * a.dx
    if a.dxx is not None:
        u2 = -2.0 * (y * u1)
        dx2 = a.dx * a.dx
        out.dxx = u2 * dx2 + u1 * a.dxx
        if a.dxxx is not None:
            u3 = -2.0 * (u1 * u1) - 2.0 * (y * u2)
            out.dxxx = (u3 * (dx2 * a.dx) + 3.0 * (u2 * (a.dx * a.dxx))
                        + u1 * a.dxxx)
    return out


def ch_mul(a: Channels, b: Channels) -> Channels:
    """Leibniz product rule on jets (t to first order, x to third)."""
    out = Channels(val=a.val * b.val)
    out.dt = _nadd(_nmul(a.dt, b.val), _nmul(a.val, b.dt))
    out.dx = _nadd(_nmul(a.dx, b.val), _nmul(a.val, b.dx))
    cross2 = None if (a.dx is None or b.dx is None) else 2.0 * (a.dx * b.dx)
    out.dxx = _nadd(_nadd(_nmul(a.dxx, b.val), _nmul(a.val, b.dxx)), cross2)
    c31 = None if (a.dxx is None or b.dx is None) else 3.0 * (a.dxx * b.dx)
    c32 = None if (a.dx is None or b.dxx is None) else 3.0 * (a.dx * b.dxx)
    out.dxxx = _nadd(_nadd(_nmul(a.dxxx, b.val), _nmul(a.val, b.dxxx)),
                     _nadd(c31, c32))
    return out


def ch_add(a: Channels, b: Channels) -> Channels:
    return Channels(val=a.val + b.val, dt=_nadd(a.dt, b.dt), dx=_nadd(a.dx, b.dx),
                    dxx=_nadd(a.dxx, b.dxx), dxxx=_nadd(a.dxxx, b.dxxx))


def ch_mix(u: Channels, v: Channels, z: Channels) -> Channels:
    """(1 - z) * u + z * v, the per-layer blend of the encoder architecture."""
    minus_z = Channels(val=1.0 - z.val,
                       dt=None if z.dt is None else -z.dt,
                       dx=None if z.dx is None else -z.dx,
                       dxx=None if z.dxx is None else -z.dxx,
                       dxxx=None if z.dxxx is None else -z.dxxx)
    return ch_add(ch_mul(minus_z, u), ch_mul(z, v))


def mlp_channels(layers: list[Layer], ch: Channels) -> Channels:
    """Run a jet through tanh hidden layers and the affine output layer."""
    for lay in layers[:-1]:
        ch = ch_tanh(ch_linear(ch, lay.W, lay.b))
    last = layers[-1]
    return ch_linear(ch, last.W, last.b)


# ---------------------------------------------------------------------------
# public operations


def forward(net: DenseNetwork, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.in_dim,):
        raise ConfigError(f"input has shape {x.shape}, network expects ({net.in_dim},)")
    h = x[None, :]
    for lay in net.layers[:-1]:
        h = np.tanh(h @ lay.W.T + lay.b)
    last = net.layers[-1]
    return (h @ last.W.T + last.b)[0]


@dataclass
class InputJet:
    """Value and derivatives of the network outputs w.r.t. one input coordinate."""

    value: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None
    d3: np.ndarray | None = None


def input_derivatives(net: DenseNetwork, x: np.ndarray, coord: int,
                      order: int) -> InputJet:
    """Exact derivatives of every output w.r.t. x[coord], up to `order` (1..3)."""
    if order not in (1, 2, 3):
        raise ContractError(f"derivative order must be 1..3, got {order}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.in_dim,):
        raise ConfigError(f"input has shape {x.shape}, network expects ({net.in_dim},)")
    if not 0 <= coord < net.in_dim:
        raise ContractError(f"coordinate {coord} outside input dimension {net.in_dim}")
    one_hot = np.zeros((1, net.in_dim))
    one_hot[0, coord] = 1.0
    zeros = np.zeros((1, net.in_dim))
    ch = Channels(val=x[None, :], dx=one_hot,
                  dxx=zeros if order >= 2 else None,
                  dxxx=zeros if order >= 3 else None)
    out = mlp_channels(net.layers, ch)
    return InputJet(value=out.val[0], d1=out.dx[0],
                    d2=None if out.dxx is None else out.dxx[0],
                    d3=None if out.dxxx is None else out.dxxx[0])


def as_taped(nets):
    """Clone a (list of) DenseNetwork with Var parameters; returns (clone, leaves)."""
    single = isinstance(nets, DenseNetwork)
    nets_list = [nets] if single else list(nets)
    leaves: list[Var] = []
    taped = []
    for net in nets_list:
        tl = []
        for lay in net.layers:
            W, b = tape.leaf(lay.W), tape.leaf(lay.b)
            leaves.extend([W, b])
            tl.append(Layer(W, b))
        taped.append(DenseNetwork(tl))
    return (taped[0] if single else taped), leaves


def param_gradient(loss_fn, nets):
    """Gradient of a scalar loss with respect to every parameter of `nets`.

    `loss_fn` receives network(s) whose layers hold tape Vars and must return
    a scalar Var built from tape operations.  The result mirrors the layer
    structure of `nets` as Layer(gradW, gradb) entries.
    """
    taped, leaves = as_taped(nets)
    loss = loss_fn(taped)
    if not isinstance(loss, Var):
        raise ContractError("loss function must return a tape Var")
    if not np.isfinite(loss.value).all():
        raise TrainingDivergenceError("loss is not finite")
    tape.backward(loss)
    # parameters the loss never touched get an exact zero gradient
    grads_flat = [lv.grad if lv.grad is not None else np.zeros_like(lv.value)
                  for lv in leaves]
    single = isinstance(nets, DenseNetwork)
    nets_list = [nets] if single else list(nets)
    out, i = [], 0
    for net in nets_list:
        g = []
        for _ in net.layers:
            g.append(Layer(grads_flat[i], grads_flat[i + 1]))
            i += 2
        out.append(g)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# checkpoint format
#
# magic "OPN1", little-endian, u32 layer count, then per layer:
# u32 rows, u32 cols, rows*cols f64 weights (row-major), rows f64 biases.

_MAGIC = b"OPN1"


def save_layers(path, layers: list[Layer]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(layers)))
        for lay in layers:
            rows, cols = lay.W.shape
            fh.write(struct.pack("<II", rows, cols))
            fh.write(np.ascontiguousarray(lay.W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(lay.b, dtype="<f8").tobytes())


def load_layers(path) -> list[Layer]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ConfigError(f"{path}: not a parameter checkpoint")
        (count,) = struct.unpack("<I", fh.read(4))
        layers = []
        for _ in range(count):
            rows, cols = struct.unpack("<II", fh.read(8))
            W = np.frombuffer(fh.read(8 * rows * cols), dtype="<f8").reshape(rows, cols)
            b = np.frombuffer(fh.read(8 * rows), dtype="<f8")
            layers.append(Layer(W.astype(np.float64), b.astype(np.float64)))
    return layers
