"""Dataset generation and the PIDS1 on-disk format.

Layout (all little-endian):
  magic  b"PIDS1"
  u32    format version (1)
  u32    equation tag (0 advection, 1 diffusion_reaction, 2 burgers, 3 kdv)
  u64    n_train, n_test, m, n_t, n_x
  f64    domain length
  u32    coefficient count, then that many f64 coefficients
         (advection: none; diffusion_reaction: D, k; burgers: nu; kdv: delta)
  f64[n_train, m]          train sensors
  f64[n_train, n_t, n_x]   train solutions
  f64[n_test, m]           test sensors
  f64[n_test, n_t, n_x]    test solutions

A sidecar text file (path + ".meta.txt") records the generation settings so a
dataset is reproducible from its sidecar alone; it carries no timestamps, so
regeneration with the same seed is byte-identical.
"""

from __future__ import annotations

import multiprocessing
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GenerationError
from .models import FunctionSample
from .solvers import (GrfSpec, kdv_initial_condition, sample_grf,
                      solve_advection, solve_diffusion_reaction,
                      solve_spectral_etdrk4)

__all__ = ["Dataset", "GenSettings", "generate_dataset", "write_dataset",
           "read_dataset", "EQUATIONS"]

EQUATIONS = ("advection", "diffusion_reaction", "burgers", "kdv")
_MAGIC = b"PIDS1"


@dataclass
class Dataset:
    equation: str
    length: float
    coeffs: tuple[float, ...]
    train_sensors: np.ndarray    # (N, m)
    train_solutions: np.ndarray  # (N, n_t, n_x)
    test_sensors: np.ndarray
    test_solutions: np.ndarray

    @property
    def m(self) -> int:
        return self.train_sensors.shape[1]

    @property
    def n_t(self) -> int:
        return self.train_solutions.shape[1]

    @property
    def n_x(self) -> int:
        return self.train_solutions.shape[2]

    def t_axis(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_t)

    def x_axis(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n_x)

    def sample(self, split: str, i: int) -> FunctionSample:
        sensors = (self.train_sensors if split == "train" else self.test_sensors)[i]
        solution = (self.train_solutions if split == "train" else self.test_solutions)[i]
        return FunctionSample(sensors=sensors, length=self.length,
                              solution=solution, t_axis=self.t_axis(),
                              x_axis=self.x_axis())


@dataclass(frozen=True)
class GenSettings:
    """Everything that determines a dataset, gathered for the sidecar."""

    equation: str
    n_train: int
    n_test: int
    seed: int
    m: int
    n_t: int
    n_x: int
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


def default_settings(equation: str, **over) -> GenSettings:
    """Table defaults: sizes, grids, and solver parameters per equation."""
    base = {
        "advection": dict(n_train=1000, n_test=100, m=101, n_t=101, n_x=101),
        "diffusion_reaction": dict(n_train=10000, n_test=1000, m=101, n_t=101, n_x=101),
        "burgers": dict(n_train=1000, n_test=500, m=101, n_t=101, n_x=101),
        "kdv": dict(n_train=500, n_test=100, m=257, n_t=101, n_x=129),
    }
    if equation not in base:
        raise ConfigError(f"unknown equation {equation!r}")
    kw = dict(equation=equation, seed=0, **base[equation])
    kw.update(over)
    return GenSettings(**kw)


def _length(equation: str) -> float:
    return 2.0 * np.pi if equation == "kdv" else 1.0


def _coeffs(st: GenSettings) -> tuple[float, ...]:
    return {
        "advection": (),
        "diffusion_reaction": (st.diffusion, st.reaction),
        "burgers": (st.viscosity,),
        "kdv": (st.dispersion,),
    }[st.equation]


def _one_sample(st: GenSettings, index: int) -> tuple[np.ndarray, np.ndarray]:
    eq = st.equation
    if eq == "advection":
        u = sample_grf(GrfSpec("rbf", st.m, corr_length=st.grf_corr_length,
                               scale=st.grf_scale), st.seed, strictly_positive=True,
                       stream=index)
        sol = solve_advection(u, st.n_t, st.n_x, refine=st.advection_refine)
    elif eq == "diffusion_reaction":
        u = sample_grf(GrfSpec("rbf", st.m, corr_length=st.grf_corr_length,
                               scale=st.grf_scale), st.seed, stream=index)
        sol = solve_diffusion_reaction(u, st.diffusion, st.reaction,
                                       st.n_t, st.n_x, dt_int=st.dr_dt)
    elif eq == "burgers":
        u = sample_grf(GrfSpec("periodic_spectral", st.m), st.seed, stream=index)
        sol = solve_spectral_etdrk4(u, "burgers", st.viscosity, 1.0,
                                    s=st.spectral_s, dt=st.spectral_dt,
                                    n_t=st.n_t, n_x=st.n_x,
                                    sample_id=str(index))
    elif eq == "kdv":
        u = kdv_initial_condition(st.seed, m=st.m, stream=index)
        sol = solve_spectral_etdrk4(u, "kdv", st.dispersion, 2.0 * np.pi,
                                    s=st.spectral_s, dt=st.spectral_dt,
                                    n_t=st.n_t, n_x=st.n_x,
                                    sample_id=str(index))
    else:
        raise ConfigError(f"unknown equation {eq!r}")
    return u, sol.solution


def generate_dataset(st: GenSettings, jobs: int = 1) -> Dataset:
    """All train + test samples; per-sample seeds derive from (seed, index),
    so results do not depend on worker scheduling."""
    total = st.n_train + st.n_test
    if jobs > 1:
        with multiprocessing.Pool(jobs) as pool:
            results = pool.starmap(_one_sample, [(st, i) for i in range(total)])
    else:
        results = [_one_sample(st, i) for i in range(total)]
    sensors = np.stack([r[0] for r in results])
    solutions = np.stack([r[1] for r in results])
    if not np.isfinite(solutions).all():
        raise GenerationError("non-finite reference solution")
    return Dataset(equation=st.equation, length=_length(st.equation),
                   coeffs=_coeffs(st),
                   train_sensors=sensors[:st.n_train],
                   train_solutions=solutions[:st.n_train],
                   test_sensors=sensors[st.n_train:],
                   test_solutions=solutions[st.n_train:])


# ---------------------------------------------------------------------------
# file format


def write_dataset(path, ds: Dataset, settings: GenSettings | None = None) -> None:
    tag = EQUATIONS.index(ds.equation)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", 1, tag))
        fh.write(struct.pack("<5Q", ds.train_sensors.shape[0],
                             ds.test_sensors.shape[0], ds.m, ds.n_t, ds.n_x))
        fh.write(struct.pack("<d", ds.length))
        fh.write(struct.pack("<I", len(ds.coeffs)))
        for c in ds.coeffs:
            fh.write(struct.pack("<d", c))
        for arr in (ds.train_sensors, ds.train_solutions,
                    ds.test_sensors, ds.test_solutions):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    if settings is not None:
        lines = [f"{k}={v}" for k, v in sorted(vars(settings).items())]
        with open(str(path) + ".meta.txt", "w", encoding="utf-8") as fh:
            fh.write("\n".join(["format=PIDS1", "version=1"] + lines) + "\n")


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(5) != _MAGIC:
            raise ConfigError(f"{path}: not a PIDS1 dataset")
        version, tag = struct.unpack("<II", fh.read(8))
        if version != 1:
            raise ConfigError(f"unsupported dataset version {version}")
        n_train, n_test, m, n_t, n_x = struct.unpack("<5Q", fh.read(40))
        (length,) = struct.unpack("<d", fh.read(8))
        (ncoef,) = struct.unpack("<I", fh.read(4))
        coeffs = struct.unpack(f"<{ncoef}d", fh.read(8 * ncoef)) if ncoef else ()

        def block(*shape):
            n = int(np.prod(shape))
            return np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).astype(np.float64)

        return Dataset(equation=EQUATIONS[tag], length=length, coeffs=coeffs,
                       train_sensors=block(n_train, m),
                       train_solutions=block(n_train, n_t, n_x),
                       test_sensors=block(n_test, m),
                       test_solutions=block(n_test, n_t, n_x))
