"""Experiment configuration: a flat key=value file with a strict registry.

Unknown keys are rejected before any work starts; omitted keys fall back to
per-equation defaults (dataset sizes, grids, architecture, training budget,
weighting scheme, embeddings).  `emit_config` writes every resolved key, so
parse -> emit -> parse is the identity on resolved configurations.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .datasets import GenSettings
from .errors import ConfigError
from .models import EmbeddingSpec, VariantSpec, KINDS
from .pdes import (CollocationCounts, PdeSpec, advection, burgers,
                   diffusion_reaction, kdv)
from .training import TrainConfig

__all__ = ["ExperimentConfig", "parse_config", "emit_config", "load_config",
           "config_hash", "EQUATION_DEFAULTS"]


def _deterministic_order(nu: float) -> int:
    if nu >= 5e-3:
        return 4
    if nu >= 5e-4:
        return 6
    return 8


EQUATION_DEFAULTS = {
    "advection": dict(n_train=1000, n_test=100, m=101, n_t=101, n_x=101,
                      iterations=300_000, batch_size=10_000, weighting="BRDR",
                      width=100, depth=6, embedding="none",
                      n_initial=101, n_boundary=101, n_residual=2500,
                      fourier_modes=()),
    "diffusion_reaction": dict(n_train=10_000, n_test=1000, m=101, n_t=101,
                               n_x=101, iterations=120_000, batch_size=10_000,
                               weighting="CK", width=50, depth=4,
                               embedding="random", n_initial=101,
                               n_boundary=101, n_residual=100,
                               fourier_modes=()),
    "burgers": dict(n_train=1000, n_test=500, m=101, n_t=101, n_x=101,
                    iterations=200_000, batch_size=10_000, weighting="CK",
                    width=100, depth=6, embedding="deterministic",
                    n_initial=101, n_boundary=0, n_residual=2500,
                    fourier_modes=(0, 1, 2, 3, 4)),
    "kdv": dict(n_train=500, n_test=100, m=257, n_t=101, n_x=129,
                iterations=200_000, batch_size=16_384, weighting="CK",
                width=128, depth=6, embedding="deterministic",
                n_initial=257, n_boundary=0, n_residual=101 * 257,
                fourier_modes=(0, 1)),
}


def _parse_int_list(s: str) -> tuple[int, ...]:
    s = s.strip()
    return tuple(int(x) for x in s.split(",") if x.strip()) if s else ()


def _parse_str_list(s: str) -> tuple[str, ...]:
    s = s.strip()
    return tuple(x.strip() for x in s.split(",") if x.strip()) if s else ()


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class ExperimentConfig:
    equation: str
    dataset: str = "dataset.pids"
    outdir: str = "out"
    variants: tuple[str, ...] = ("modified",)
    seeds: tuple[int, ...] = (0,)
    baseline: str = "modified"
    compare_variant: str = ""

    # dataset generation
    n_train: int = 0
    n_test: int = 0
    m: int = 0
    n_t: int = 0
    n_x: int = 0
    gen_seed: int = 0
    grf_corr_length: float = 0.2
    grf_scale: float = 1.0
    viscosity: float = 1e-2
    diffusion: float = 0.01
    reaction: float = 0.01
    dispersion: float = 0.1
    spectral_s: int = 4096
    spectral_dt: float = 1e-4
    advection_refine: int = 16
    dr_dt: float = 1e-3

    # architecture
    width: int = 0
    depth: int = 0
    basis: int = 0                # 0 means "same as width"
    embedding: str = "none"
    embedding_order: int = 0      # 0 means per-equation default
    embedding_count: int = 150
    embedding_scale: float = 1.0
    fourier_modes: tuple[int, ...] = ()

    # training
    iterations: int = 0
    batch_size: int = 0
    lr0: float = 1e-3
    lr_transition: int = 500
    lr_decay: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    weighting: str = ""
    weight_update_period: int = 1000
    eval_period: int = 1000
    ck_subsample: int = 128
    n_initial: int = 0
    n_boundary: int = 0
    n_residual: int = 0

    # ------------------------------------------------------------------
    def pde(self) -> PdeSpec:
        if self.equation == "advection":
            return advection()
        if self.equation == "diffusion_reaction":
            return diffusion_reaction(self.diffusion, self.reaction)
        if self.equation == "burgers":
            return burgers(self.viscosity)
        return kdv(self.dispersion)

    def counts(self) -> CollocationCounts:
        return CollocationCounts(self.n_initial, self.n_boundary,
                                 self.n_residual)

    def embedding_spec(self) -> EmbeddingSpec:
        length = self.pde().length
        if self.embedding == "none":
            return EmbeddingSpec("none", length=length)
        if self.embedding == "deterministic":
            order = self.embedding_order
            if order == 0:
                order = (12 if self.equation == "kdv"
                         else _deterministic_order(self.viscosity))
            return EmbeddingSpec("deterministic", length=length, order=order)
        return EmbeddingSpec("random", length=length,
                             count=self.embedding_count,
                             scale=self.embedding_scale, seed=self.gen_seed)

    def variant_spec(self, kind: str) -> VariantSpec:
        modes = self.fourier_modes if kind in ("TF", "BxTF") else ()
        return VariantSpec(kind, self.embedding_spec(), modes)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(iterations=self.iterations,
                           batch_size=self.batch_size, lr0=self.lr0,
                           lr_transition=self.lr_transition,
                           lr_decay=self.lr_decay, beta1=self.beta1,
                           beta2=self.beta2, eps=self.eps,
                           weight_decay=self.weight_decay,
                           weighting=self.weighting,
                           weight_update_period=self.weight_update_period,
                           eval_period=self.eval_period,
                           ck_subsample=self.ck_subsample, seed=seed)

    def gen_settings(self) -> GenSettings:
        return GenSettings(equation=self.equation, n_train=self.n_train,
                           n_test=self.n_test, seed=self.gen_seed, m=self.m,
                           n_t=self.n_t, n_x=self.n_x,
                           grf_corr_length=self.grf_corr_length,
                           grf_scale=self.grf_scale,
                           viscosity=self.viscosity,
                           diffusion=self.diffusion, reaction=self.reaction,
                           dispersion=self.dispersion,
                           spectral_s=self.spectral_s,
                           spectral_dt=self.spectral_dt,
                           advection_refine=self.advection_refine,
                           dr_dt=self.dr_dt)


_PARSERS = {
    str: lambda s: s.strip(),
    int: int,
    float: float,
    tuple: None,  # handled per field
}

_INT_TUPLES = {"seeds", "fourier_modes"}
_STR_TUPLES = {"variants"}


def parse_config(text: str) -> ExperimentConfig:
    """Parse key=value lines; '#' starts a comment, blank lines are skipped."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = val.strip()

    known = {f.name: f.type for f in fields(ExperimentConfig)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "equation" not in raw:
        raise ConfigError("config must set 'equation'")
    equation = raw["equation"]
    if equation not in EQUATION_DEFAULTS:
        raise ConfigError(f"unknown equation {equation!r}")

    cfg = ExperimentConfig(equation=equation)
    # per-equation defaults first, then explicit keys on top
    for key, val in EQUATION_DEFAULTS[equation].items():
        setattr(cfg, key, val)
    for key, sval in raw.items():
        if key == "equation":
            continue
        try:
            if key in _INT_TUPLES:
                value = _parse_int_list(sval)
            elif key in _STR_TUPLES:
                value = _parse_str_list(sval)
            else:
                current = getattr(cfg, key)
                caster = type(current) if not isinstance(current, tuple) else None
                if caster is None:
                    value = _parse_int_list(sval)
                elif caster is bool:
                    value = sval.lower() in ("1", "true", "yes")
                else:
                    value = caster(sval)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {sval!r} ({exc})") from exc
        setattr(cfg, key, value)

    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    for v in cfg.variants + ((cfg.compare_variant,) if cfg.compare_variant else ()):
        if v not in KINDS:
            raise ConfigError(f"unknown variant {v!r}; valid: {KINDS}")
    if cfg.baseline not in KINDS:
        raise ConfigError(f"unknown baseline {cfg.baseline!r}")
    if cfg.weighting not in ("CK", "BRDR"):
        raise ConfigError(f"unknown weighting {cfg.weighting!r}")
    if cfg.embedding not in ("none", "deterministic", "random"):
        raise ConfigError(f"unknown embedding {cfg.embedding!r}")
    for key in ("n_train", "n_test", "m", "n_t", "n_x", "width", "depth",
                "batch_size"):
        if getattr(cfg, key) <= 0:
            raise ConfigError(f"{key} must be positive")
    if cfg.iterations < 0:
        raise ConfigError("iterations must be >= 0")
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    # the kdv grid sampler assumes the tabulated layout
    if cfg.equation == "kdv" and cfg.m != cfg.n_initial:
        raise ConfigError("kdv initial allocation must equal the sensor count")


def emit_config(cfg: ExperimentConfig) -> str:
    lines = [f"{f.name}={_fmt(getattr(cfg, f.name))}"
             for f in fields(ExperimentConfig)]
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(emit_config(cfg).encode()).hexdigest()[:16]
