"""Physics-informed training: composite loss, adaptive weighting, AdamW.

One iteration draws a batch of (function, point, term-type) triples whose
term-type proportions follow the per-equation collocation allocation, builds
the weighted squared loss

    L = sum_g lambda_g * mean_i w_i * term_i^2

over the residual / initial / boundary groups, backpropagates through the
Taylor-jet forward pass, and applies a decoupled-weight-decay Adam update
with an exponentially decaying learning rate.

Two weighting schemes: "CK" adapts one weight per term group from the mean
squared parameter-gradient norm of the model output at group points; "BRDR"
keeps per-point weights driven by how fast each point's squared residual
decays relative to its running average (slowly decaying points are pushed
harder).  With BRDR the collocation pool is fixed at the start of the run so
points keep their identity; with CK residual points are redrawn every
iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tape
from .datasets import Dataset
from .errors import ConfigError, TrainingDivergenceError
from .models import (OperatorModel, VariantSpec, build_operator_model,
                     fourier_coeffs, interp_with_slope, model_networks,
                     operator_channels, predict_grids, with_networks)
from .network import DenseNetwork, Layer, as_taped, philox
from .pdes import (CollocationCounts, PdeSpec, default_counts,
                   residual_channels, sample_collocation)
from .stats import rel_l2

__all__ = [
    "TrainConfig", "TrainRecord", "WeightState", "lr_at", "adamw_step",
    "init_adam", "update_weights_ck", "update_weights_brdr", "train_run",
    "evaluate_errors",
]


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    batch_size: int
    lr0: float = 1e-3
    lr_transition: int = 500
    lr_decay: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    weighting: str = "CK"              # CK | BRDR
    weight_update_period: int = 1000
    eval_period: int = 1000
    ck_subsample: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size <= 0:
            raise ConfigError("iterations must be >= 0 and batch_size > 0")
        if not (0.0 < self.lr_decay < 1.0) or self.lr0 <= 0.0:
            raise ConfigError("need lr0 > 0 and decay in (0, 1)")
        if self.weighting not in ("CK", "BRDR"):
            raise ConfigError(f"unknown weighting scheme {self.weighting!r}")


def lr_at(t: int, cfg: TrainConfig) -> float:
    """lr0 * decay^(t / transition) with a continuous exponent."""
    return cfg.lr0 * cfg.lr_decay ** (t / cfg.lr_transition)


@dataclass
class TrainRecord:
    """Eval-time curve plus aggregate timing for one run."""

    rows: list = field(default_factory=list)   # (iteration, seconds, mean rel l2 %)
    total_seconds: float = 0.0
    mean_sec_per_iter: float = 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,seconds,mean_rel_l2_percent\n")
            for it, sec, err in self.rows:
                fh.write(f"{it},{sec!r},{err!r}\n")

    @staticmethod
    def from_csv(path) -> "TrainRecord":
        rows = []
        with open(path, encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                it, sec, err = line.strip().split(",")
                rows.append((int(it), float(sec), float(err)))
        rec = TrainRecord(rows=rows)
        if rows:
            rec.total_seconds = rows[-1][1]
            rec.mean_sec_per_iter = rows[-1][1] / rows[-1][0]
        return rec


# ---------------------------------------------------------------------------
# AdamW


@dataclass
class AdamState:
    m: list            # mirrors the [network][layer] structure
    v: list
    t: int = 0


def init_adam(nets: list[DenseNetwork]) -> AdamState:
    zeros = lambda lay: Layer(np.zeros_like(lay.W), np.zeros_like(lay.b))
    return AdamState(m=[[zeros(l) for l in n.layers] for n in nets],
                     v=[[zeros(l) for l in n.layers] for n in nets])


def _adamw_tensor(p, g, m, v, lr, cfg, bc1, bc2):
    if not np.isfinite(g).all():
        raise TrainingDivergenceError("non-finite gradient")
    m_new = cfg.beta1 * m + (1.0 - cfg.beta1) * g
    v_new = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
    m_hat = m_new / bc1
    den = np.sqrt(v_new / bc2) + cfg.eps
    step = np.divide(m_hat, den, out=np.zeros_like(m_hat), where=den > 0.0)
    return p - lr * (step + cfg.weight_decay * p), m_new, v_new


def adamw_step(nets: list[DenseNetwork], grads: list, state: AdamState,
               cfg: TrainConfig, iteration: int) -> tuple[list[DenseNetwork], AdamState]:
    """One decoupled-weight-decay update; returns new parameter containers."""
    lr = lr_at(iteration, cfg)
    t = state.t + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    new_nets, new_m, new_v = [], [], []
    for net, gnet, mnet, vnet in zip(nets, grads, state.m, state.v):
        layers, ms, vs = [], [], []
        for lay, g, m, v in zip(net.layers, gnet, mnet, vnet):
            W, mW, vW = _adamw_tensor(lay.W, g.W, m.W, v.W, lr, cfg, bc1, bc2)
            b, mb, vb = _adamw_tensor(lay.b, g.b, m.b, v.b, lr, cfg, bc1, bc2)
            layers.append(Layer(W, b))
            ms.append(Layer(mW, mb))
            vs.append(Layer(vW, vb))
        new_nets.append(DenseNetwork(layers))
        new_m.append(ms)
        new_v.append(vs)
    return new_nets, AdamState(m=new_m, v=new_v, t=t)


# ---------------------------------------------------------------------------
# adaptive weighting


@dataclass
class WeightState:
    """Adaptive loss weights; group-level for CK, per-pool-point for BRDR."""

    scheme: str
    group_weights: dict
    point_weights: dict | None = None   # group -> array over the fixed pool
    ema: dict | None = None             # group -> running mean of squared residuals
    last_sq: dict | None = None         # group -> latest squared residuals
    seen: dict | None = None            # group -> bool mask
    last_update: int = -1

    @staticmethod
    def for_ck(groups) -> "WeightState":
        return WeightState("CK", {g: 1.0 for g in groups})

    @staticmethod
    def for_brdr(sizes: dict) -> "WeightState":
        return WeightState(
            "BRDR", {g: 1.0 for g in sizes},
            point_weights={g: np.ones(n) for g, n in sizes.items()},
            ema={g: np.zeros(n) for g, n in sizes.items()},
            last_sq={g: np.zeros(n) for g, n in sizes.items()},
            seen={g: np.zeros(n, dtype=bool) for g, n in sizes.items()})


BRDR_DECAY = 0.999
BRDR_CLAMP = (1e-3, 1e3)


def _normalize_mean_one(values):
    mean = float(np.mean(values))
    return values / mean if mean > 0 else values


def update_weights_ck(T: dict, state: WeightState) -> WeightState:
    """Group weights from gradient statistics T_g (mean squared grad norms):
    lambda_g = sum(T) / (|groups| * T_g), then normalized to mean one.
    Groups with T_g = 0 keep their previous weight."""
    total = sum(T.values())
    raw = {}
    for g, t_g in T.items():
        raw[g] = state.group_weights[g] if t_g == 0.0 else total / (len(T) * t_g)
    mean = np.mean(list(raw.values()))
    new = {g: (w / mean if mean > 0 else w) for g, w in raw.items()}
    return WeightState("CK", new, last_update=state.last_update)


def _brdr_observe(state: WeightState, group: str, idx: np.ndarray,
                  sq_residuals: np.ndarray) -> None:
    ema, last, seen = state.ema[group], state.last_sq[group], state.seen[group]
    fresh = ~seen[idx]
    # first observation seeds the running average at the point's own value;
    # duplicate indices within one batch resolve last-write-wins
    seen[idx] = True
    old = ema[idx]
    ema[idx] = np.where(fresh, sq_residuals,
                        BRDR_DECAY * old + (1.0 - BRDR_DECAY) * sq_residuals)
    last[idx] = sq_residuals


def update_weights_brdr(state: WeightState, residuals: dict | None = None) -> WeightState:
    """Recompute per-point weights from decay rates.

    The decay rate of a point is ema / latest squared residual: large when
    the residual has fallen well below its history.  Weights are proportional
    to mean(rate) / rate (slow decay => more weight), clamped to [1e-3, 1e3]
    and normalized to mean one per group.  Passing `residuals` (group ->
    array over the whole pool) folds in an observation first.
    """
    if residuals is not None:
        for g, r in residuals.items():
            _brdr_observe(state, g, np.arange(r.size), np.asarray(r) ** 2)
    new_w = {}
    for g, w in state.point_weights.items():
        seen = state.seen[g]
        out = np.ones_like(w)
        if seen.any():
            rate = state.ema[g][seen] / np.maximum(state.last_sq[g][seen], 1e-300)
            raw = np.mean(rate) / rate
            out[seen] = np.clip(raw, *BRDR_CLAMP)
        new_w[g] = _normalize_mean_one(out)
    return WeightState("BRDR", dict(state.group_weights), point_weights=new_w,
                       ema=state.ema, last_sq=state.last_sq, seen=state.seen,
                       last_update=state.last_update)


# ---------------------------------------------------------------------------
# batches


@dataclass
class _Problem:
    """Precomputed per-run context shared by the batch builder."""

    pde: PdeSpec
    dataset: Dataset
    counts: CollocationCounts
    coeff_table: np.ndarray | None      # (n_train, 2|modes|) for TF kinds
    sensor_grid: np.ndarray
    groups: tuple
    split: dict                          # group -> rows per batch
    pool: object = None                  # CollocationBatch when BRDR


def _batch_split(batch_size: int, counts: CollocationCounts,
                 groups: tuple) -> dict:
    alloc = {"residual": counts.residual, "initial": counts.initial,
             "boundary": counts.boundary}
    weightsum = sum(alloc[g] for g in groups)
    exact = {g: batch_size * alloc[g] / weightsum for g in groups}
    out = {g: max(1, int(np.floor(exact[g]))) for g in groups}
    rest = batch_size - sum(out.values())
    order = sorted(groups, key=lambda g: exact[g] - np.floor(exact[g]), reverse=True)
    for g in order[:max(0, rest)]:
        out[g] += 1
    return out


def _draw_batch(prob: _Problem, rng: np.random.Generator) -> dict:
    """One batch of (function, point) draws per term group."""
    ds, pde = prob.dataset, prob.pde
    n_train = ds.train_sensors.shape[0]
    batch = {}
    for g in prob.groups:
        n = prob.split[g]
        if prob.pool is not None:
            batch[g] = _draw_from_pool(prob, g, n, rng)
            continue
        func = rng.integers(0, n_train, size=n)
        if g == "residual":
            if pde.kind == "kdv":
                ti = rng.integers(0, 101, size=n)
                xi = rng.integers(0, ds.m, size=n)
                t = (ti + 0.5) / 101.0
                x = prob.sensor_grid[xi]
            else:
                t = rng.uniform(0.0, 1.0, size=n)
                x = rng.uniform(0.0, pde.length, size=n)
            batch[g] = {"func": func, "t": t, "x": x, "w": 1.0, "idx": None}
        elif g == "initial":
            xi = rng.integers(0, ds.m, size=n)
            batch[g] = {"func": func, "t": np.zeros(n),
                        "x": prob.sensor_grid[xi], "grid_idx": xi,
                        "w": 1.0, "idx": None}
        else:
            t = rng.uniform(0.0, 1.0, size=n)
            if pde.kind == "advection":
                x = np.zeros(n)
            else:
                x = pde.length * rng.integers(0, 2, size=n).astype(np.float64)
            batch[g] = {"func": func, "t": t, "x": x, "w": 1.0, "idx": None}
    return batch


def _draw_from_pool(prob: _Problem, g: str, n: int,
                    rng: np.random.Generator) -> dict:
    pool = prob.pool
    if g == "residual":
        idx = rng.integers(0, pool.residual_t.size, size=n)
        return {"func": pool.residual_idx[idx], "t": pool.residual_t[idx],
                "x": pool.residual_x[idx], "w": None, "idx": idx}
    if g == "initial":
        idx = rng.integers(0, pool.initial_x.size, size=n)
        x = pool.initial_x[idx]
        gi = np.rint(x / prob.pde.length * (prob.dataset.m - 1)).astype(np.int64)
        return {"func": pool.initial_idx[idx], "t": np.zeros(n), "x": x,
                "grid_idx": gi, "w": None, "idx": idx}
    idx = rng.integers(0, pool.boundary_t.size, size=n)
    t = pool.boundary_t[idx]
    if prob.pde.kind == "advection":
        x = np.zeros(n)
    else:
        x = prob.pde.length * (idx % 2).astype(np.float64)
    return {"func": pool.boundary_idx[idx], "t": t, "x": x, "w": None, "idx": idx}


# ---------------------------------------------------------------------------
# the loss


def _term_channels(model: OperatorModel, prob: _Problem, group: str,
                   entry: dict):
    """The per-point term (a Var when the model is taped) for one group."""
    ds, pde = prob.dataset, prob.pde
    u_rows = ds.train_sensors[entry["func"]]
    coeff_rows = None if prob.coeff_table is None else prob.coeff_table[entry["func"]]
    t, x = entry["t"], entry["x"]
    if group == "residual":
        ch = operator_channels(model, t, x, u_rows, coeff_rows,
                               x_order=pde.x_order, with_t=True)
        u_at = None
        if pde.kind in ("advection", "diffusion_reaction"):
            u_at, _ = interp_with_slope(u_rows, pde.length, x)
        return residual_channels(pde, ch, u_at)
    out = operator_channels(model, t, x, u_rows, coeff_rows, x_order=0,
                            with_t=False)
    if group == "initial":
        if pde.kind == "advection":
            target = np.sin(np.pi * x)
        elif pde.kind == "diffusion_reaction":
            target = 0.0
        else:
            target = u_rows[np.arange(x.size), entry["grid_idx"]]
        return out.val - target
    # boundary group
    if pde.kind == "advection":
        return out.val - np.sin(np.pi * t / 2.0)
    return out.val  # dirichlet zero: target is 0 at both ends


def _loss_and_grads(model: OperatorModel, nets, prob: _Problem, batch: dict,
                    weights: WeightState):
    taped_nets, leaves = as_taped(nets)
    taped_model = with_networks(model, taped_nets)
    loss = None
    point_sq = {}
    for g in prob.groups:
        entry = batch[g]
        term = _term_channels(taped_model, prob, g, entry)
        point_sq[g] = (term.value ** 2, entry["idx"])
        if weights.scheme == "BRDR":
            w = weights.point_weights[g][entry["idx"]]
            contrib = (term * term * w).mean()
        else:
            contrib = (term * term).mean() * weights.group_weights[g]
        loss = contrib if loss is None else loss + contrib
    if not np.isfinite(loss.value):
        raise TrainingDivergenceError("non-finite training loss")
    tape.backward(loss)
    grads_flat = [lv.grad if lv.grad is not None else np.zeros_like(lv.value)
                  for lv in leaves]
    grads, i = [], 0
    for net in nets:
        lay = []
        for _ in net.layers:
            lay.append(Layer(grads_flat[i], grads_flat[i + 1]))
            i += 2
        grads.append(lay)
    return float(loss.value), grads, point_sq


def _ck_stats(model: OperatorModel, nets, prob: _Problem, batch: dict,
              rng: np.random.Generator, subsample: int) -> dict:
    """Mean squared parameter-gradient norm of the model output per group."""
    T = {}
    for g in prob.groups:
        entry = batch[g]
        n = entry["t"].size
        pick = rng.choice(n, size=min(subsample, n), replace=False)
        acc = 0.0
        for j in pick:
            taped_nets, leaves = as_taped(nets)
            taped_model = with_networks(model, taped_nets)
            func = entry["func"][j:j + 1]
            u_rows = prob.dataset.train_sensors[func]
            coeff = (None if prob.coeff_table is None
                     else prob.coeff_table[func])
            out = operator_channels(taped_model, entry["t"][j:j + 1],
                                    entry["x"][j:j + 1], u_rows, coeff,
                                    x_order=0, with_t=False)
            tape.backward(out.val.sum())
            acc += sum(float((lv.grad ** 2).sum()) for lv in leaves
                       if lv.grad is not None)
        T[g] = acc / len(pick)
    return T


# ---------------------------------------------------------------------------
# the run


def evaluate_errors(model: OperatorModel, dataset: Dataset,
                    split: str = "test") -> np.ndarray:
    """Per-case relative L2 errors (percent) over a dataset split."""
    sols = dataset.test_solutions if split == "test" else dataset.train_solutions
    n = sols.shape[0]
    samples = [dataset.sample(split, i) for i in range(n)]
    preds = predict_grids(model, samples, dataset.t_axis(), dataset.x_axis())
    return np.array([rel_l2(preds[i], sols[i]) for i in range(n)])


def train_run(vspec: VariantSpec, dataset: Dataset, pde: PdeSpec,
              cfg: TrainConfig, width: int, depth: int,
              basis: int | None = None,
              counts: CollocationCounts | None = None,
              ) -> tuple[OperatorModel, TrainRecord]:
    """Full training loop; returns the trained model and its timing/error curve.

    Wall-clock accounting covers batch construction, loss/gradient evaluation,
    the optimizer step, and weight updates; test-set evaluation runs between
    timed segments and never contributes.
    """
    counts = counts or default_counts(pde.kind)
    model = build_operator_model(vspec, dataset.m, width, depth, basis,
                                 seed=cfg.seed)
    nets = model_networks(model)
    adam = init_adam(nets)
    rng = philox(cfg.seed, 31)

    groups = ("residual", "initial") + (("boundary",) if pde.has_boundary_loss
                                        else ())
    coeff_table = None
    if vspec.kind in ("TF", "BxTF"):
        coeff_table = fourier_coeffs(dataset.train_sensors, vspec.fourier_modes)
    prob = _Problem(pde=pde, dataset=dataset, counts=counts,
                    coeff_table=coeff_table,
                    sensor_grid=np.linspace(0.0, pde.length, dataset.m),
                    groups=groups,
                    split=_batch_split(cfg.batch_size, counts, groups))

    if cfg.weighting == "BRDR":
        n_train = dataset.train_sensors.shape[0]
        prob.pool = sample_collocation(pde, n_train, counts, seed=cfg.seed,
                                       m=dataset.m)
        sizes = {"residual": prob.pool.residual_t.size,
                 "initial": prob.pool.initial_x.size}
        if pde.has_boundary_loss:
            sizes["boundary"] = prob.pool.boundary_t.size
        weights = WeightState.for_brdr(sizes)
    else:
        weights = WeightState.for_ck(groups)

    record = TrainRecord()
    t_train = 0.0
    last_loss = None
    for it in range(cfg.iterations):
        tic = time.perf_counter()
        batch = _draw_batch(prob, rng)
        try:
            loss_val, grads, point_sq = _loss_and_grads(model, nets, prob,
                                                        batch, weights)
            nets, adam = adamw_step(nets, grads, adam, cfg, it)
        except TrainingDivergenceError as exc:
            raise TrainingDivergenceError(
                f"diverged at iteration {it}: {exc}", iteration=it,
                last_loss=last_loss) from exc
        last_loss = loss_val
        model = with_networks(model, nets)

        if weights.scheme == "BRDR":
            for g in prob.groups:
                sq, idx = point_sq[g]
                if idx is not None:
                    _brdr_observe(weights, g, idx, sq)
        if (it + 1) % cfg.weight_update_period == 0 and (it + 1) < cfg.iterations:
            if weights.scheme == "CK":
                T = _ck_stats(model, nets, prob, batch, rng, cfg.ck_subsample)
                weights = update_weights_ck(T, weights)
            else:
                weights = update_weights_brdr(weights)
            weights.last_update = it + 1
        t_train += time.perf_counter() - tic

        if (it + 1) % cfg.eval_period == 0 or (it + 1) == cfg.iterations:
            err = float(np.mean(evaluate_errors(model, dataset)))
            record.rows.append((it + 1, t_train, err))

    record.total_seconds = t_train
    record.mean_sec_per_iter = t_train / cfg.iterations if cfg.iterations else 0.0
    return model, record
