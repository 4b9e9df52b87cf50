"""Recovery instances, noise models and the experiment sweeps.

A sweep is a grid of independent cells (dimension x sample multiple x seed).
Each cell builds an instance, its default penalty objective and runs one
solver. Cells can run in a process pool; results are always reduced in grid
order so the summary does not depend on scheduling.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, rng
from .objective import Task, build_default, estimate_sharpness, thresholded
from .sensing import Model, Scaling, build_sensing, estimate_rip, w_norm
from .solvers import (
    DEFAULT_ROUND_CAP, ConvergenceTrace, SolverSchedule, adaptive_rmd, p_norm_lipschitz,
    polyak_gd, polyak_rmd, rmd,
)
from .spaces import Geometry, Kind, Signal, norm_p

#: harness-wide cap on mirror-descent / subgradient steps per cell
GLOBAL_STEP_CAP = 50_000_000
#: recovery criterion on the l1 / nuclear distance to the planted signal
RECOVERY_TOL = 1e-6
#: threshold constant for the covariance tasks (no experiment fixes one)
COVARIANCE_THRESHOLD_CONSTANT = 3.0

EXTRAPOLATED_TASKS = frozenset({Task.COVARIANCE_I, Task.COVARIANCE_II})

SOLVERS = ("rmd", "polyak-rmd", "adaptive-rmd", "polyak-gd")


def threshold(task: Task | str, n: int, N: int | None = None, k: int = 1,
              cov_constant: float = COVARIANCE_THRESHOLD_CONSTANT) -> int:
    """Statistical threshold T(n, N, k), rounded up.

    Sparse: 2k ln(n/k) + 1.25k + 1. Matrix: 3k(n + N - k) + 1, which is
    6nk - 3k^2 + 1 for square matrices. Phase retrieval: 2n. Covariance:
    ``cov_constant * n * k``.
    """
    task = Task(task)
    N = n if N is None else N
    if k < 1 or k > min(n, N):
        raise ValueError(f"k must lie in [1, {min(n, N)}], got {k}")
    if task is Task.SPARSE_RECOVERY:
        return math.ceil(2 * k * math.log(n / k) + 1.25 * k + 1)
    if task is Task.MATRIX_SENSING:
        return 3 * k * (n + N - k) + 1
    if task is Task.PHASE_RETRIEVAL:
        return 2 * n
    return math.ceil(cov_constant * n * k)


# -- instances -------------------------------------------------------------------


class NoiseMode(str, enum.Enum):
    NONE = "none"
    DENSE = "dense"
    SPARSE = "sparse"


class CorruptionLaw(str, enum.Enum):
    GAUSSIAN = "gaussian"  # N(0, median|b|^2)
    ADVERSARIAL = "adversarial"  # +10 max|b|


@dataclass(frozen=True)
class NoiseSpec:
    """Observation noise.

    Dense noise is either an explicit ``delta``, i.i.d. Gaussian entries with
    standard deviation ``sigma``, or a Gaussian direction rescaled to W-norm
    ``norm``. Sparse corruption replaces ``ceil(alpha m)`` observations.
    """

    mode: NoiseMode = NoiseMode.NONE
    sigma: float | None = None
    norm: float | None = None
    delta: tuple | None = None
    alpha: float = 0.0
    law: CorruptionLaw = CorruptionLaw.GAUSSIAN

    def __post_init__(self):
        object.__setattr__(self, "mode", NoiseMode(self.mode))
        object.__setattr__(self, "law", CorruptionLaw(self.law))
        if self.mode is NoiseMode.SPARSE and not (0.0 <= self.alpha < 1.0):
            raise ValueError(f"corruption fraction must lie in [0, 1), got {self.alpha}")
        if self.mode is NoiseMode.DENSE:
            given = [v is not None for v in (self.sigma, self.norm, self.delta)]
            if sum(given) != 1:
                raise ValueError("dense noise needs exactly one of sigma, norm, delta")
            if (self.sigma is not None and self.sigma < 0) or (self.norm is not None and self.norm < 0):
                raise ValueError("noise level must be nonnegative")

    @classmethod
    def none(cls) -> "NoiseSpec":
        return cls()

    @classmethod
    def dense(cls, sigma=None, norm=None, delta=None) -> "NoiseSpec":
        if delta is not None:
            delta = tuple(float(v) for v in np.ravel(delta))
        return cls(NoiseMode.DENSE, sigma=sigma, norm=norm, delta=delta)

    @classmethod
    def sparse(cls, alpha: float, law: CorruptionLaw | str = CorruptionLaw.GAUSSIAN) -> "NoiseSpec":
        return cls(NoiseMode.SPARSE, alpha=alpha, law=law)

    @classmethod
    def parse(cls, text: str) -> "NoiseSpec":
        """``none``, ``dense:SIGMA``, ``dense-norm:NORM`` or ``sparse:ALPHA[:LAW]``."""
        text = text.strip()
        if text == "none":
            return cls.none()
        head, _, rest = text.partition(":")
        try:
            if head == "dense":
                return cls.dense(sigma=float(rest))
            if head == "dense-norm":
                return cls.dense(norm=float(rest))
            if head == "sparse":
                alpha, _, law = rest.partition(":")
                return cls.sparse(float(alpha), law or CorruptionLaw.GAUSSIAN)
        except ValueError as exc:
            raise ValueError(f"bad noise spec {text!r}: {exc}") from None
        raise ValueError(f"bad noise spec {text!r}")

    def describe(self) -> str:
        if self.mode is NoiseMode.NONE:
            return "none"
        if self.mode is NoiseMode.SPARSE:
            return f"sparse:{self.alpha!r}:{self.law.value}"
        if self.sigma is not None:
            return f"dense:{self.sigma!r}"
        if self.norm is not None:
            return f"dense-norm:{self.norm!r}"
        return "dense:explicit"


@dataclass(frozen=True, eq=False)
class Instance:
    task: Task
    x_true: Signal
    op: object
    b: np.ndarray
    k: int
    T: int
    seed: int
    b_clean: np.ndarray | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    corrupted: np.ndarray | None = None  # indices replaced by sparse corruption

    @property
    def m(self) -> int:
        return self.op.m

    @property
    def delta(self) -> np.ndarray:
        clean = self.b if self.b_clean is None else self.b_clean
        return self.b - clean

    @property
    def w_norm(self) -> Scaling:
        """Norm on the observation space used by the task's default objective."""
        return build_default(self.task, self.op, self.b, self.k).w_norm

    @property
    def noise_norm(self) -> float:
        return w_norm(self.delta, self.w_norm)

    def objective(self, c1: float = 9.0):
        return build_default(self.task, self.op, self.b, self.k, c1=c1)

    def clean_objective(self, c1: float = 9.0):
        clean = self.b if self.b_clean is None else self.b_clean
        return build_default(self.task, self.op, clean, self.k, c1=c1)


_TASK_MODEL = {
    Task.SPARSE_RECOVERY: Model.SPARSE_VECTOR,
    Task.MATRIX_SENSING: Model.MATRIX_DENSE,
    Task.PHASE_RETRIEVAL: Model.COVARIANCE_RANK_ONE,
    Task.COVARIANCE_I: Model.COVARIANCE_RANK_ONE,
    Task.COVARIANCE_II: Model.COVARIANCE_DIFFERENCE,
}


def _planted_signal(task: Task, n: int, N: int, k: int, gen: np.random.Generator) -> Signal:
    if task is Task.SPARSE_RECOVERY:
        x = np.zeros(n)
        idx = gen.choice(n, size=k, replace=False)
        x[idx] = gen.standard_normal(k)
        return Signal.vector(x / np.abs(x).sum())
    if task is Task.MATRIX_SENSING:
        U, s, Vt = np.linalg.svd(gen.standard_normal((n, N)), full_matrices=False)
        X = (U[:, :k] * s[:k]) @ Vt[:k]
        return Signal.rectangular(X / s[:k].sum())
    if task is Task.PHASE_RETRIEVAL:
        x = gen.standard_normal(n)
        x /= np.linalg.norm(x)
        return Signal.symmetric(np.outer(x, x))
    G = gen.standard_normal((n, k))
    X = G @ G.T
    return Signal.symmetric(X / np.trace(X))


def generate_instance(task: Task | str, n: int, N: int | None = None, k: int = 1, m: int | None = None,
                      seed: int = 0, *, m_multiple: float | None = None, model: Model | str | None = None,
                      scaling: Scaling | str | None = None) -> Instance:
    """Planted signal with unit l1 / nuclear norm and its noiseless observations.

    ``m`` may be given directly or as ``m_multiple * T``. Phase retrieval
    always has ``k = 1``. Matrix sensing defaults to the dense design; pass
    ``model="matrix_bilinear"`` for rank-one measurements.
    """
    task = Task(task)
    if task is Task.PHASE_RETRIEVAL:
        k = 1
    if task in (Task.PHASE_RETRIEVAL, Task.COVARIANCE_I, Task.COVARIANCE_II):
        if N is not None and N != n:
            raise ValueError(f"{task.value} signals are n x n; got N={N}")
        N = n
    elif task is Task.SPARSE_RECOVERY:
        N = None
    else:
        N = n if N is None else N
    if k > n or (N is not None and k > N):
        raise ValueError(f"k={k} exceeds the signal dimension")
    T = threshold(task, n, N, k)
    if m is None:
        if m_multiple is None:
            raise ValueError("give either m or m_multiple")
        m = max(1, math.ceil(m_multiple * T))
    if m < 1:
        raise ValueError(f"need at least one measurement, got m={m}")
    model = _TASK_MODEL[task] if model is None else Model(model)
    op = build_sensing(model, n, N, m, scaling=scaling, seed=seed)
    gen = rng.stream(seed, rng.TAG_SIGNAL)
    x = _planted_signal(task, op.n, op.N, k, gen)
    return Instance(task, x, op, op.apply(x), k, T, seed)


def apply_noise(inst: Instance, spec: NoiseSpec, seed: int | None = None) -> Instance:
    """Replace the observations with noisy ones; ``inst.delta`` records the change."""
    seed = inst.seed if seed is None else seed
    clean = inst.b if inst.b_clean is None else inst.b_clean
    if spec.mode is NoiseMode.NONE:
        return dataclasses.replace(inst, b=clean.copy(), b_clean=clean, noise=spec, corrupted=None)
    gen = rng.stream(seed, rng.TAG_NOISE)
    m = inst.m
    corrupted = None
    if spec.mode is NoiseMode.DENSE:
        if spec.delta is not None:
            delta = np.array(spec.delta, dtype=float)
            if delta.shape != (m,):
                raise ValueError(f"explicit noise must have length {m}, got {delta.shape}")
        elif spec.sigma is not None:
            delta = spec.sigma * gen.standard_normal(m)
        else:
            delta = gen.standard_normal(m)
            delta *= spec.norm / w_norm(delta, inst.w_norm)
        b = clean + delta
    else:
        count = math.ceil(spec.alpha * m)
        corrupted = np.sort(gen.choice(m, size=count, replace=False))
        b = clean.copy()
        if spec.law is CorruptionLaw.GAUSSIAN:
            b[corrupted] = float(np.median(np.abs(clean))) * gen.standard_normal(count)
        else:
            b[corrupted] = 10.0 * float(np.abs(clean).max())
    return dataclasses.replace(inst, b=b, b_clean=clean, noise=spec, corrupted=corrupted)


# -- single runs -----------------------------------------------------------------


@dataclass(frozen=True)
class CellSpec:
    """Everything one solver run depends on."""

    task: str = "sparse"
    n: int = 10_000
    N: int | None = None
    k: int = 5
    m_multiple: float = 4.0
    m: int | None = None
    seed: int = 0
    solver: str = "polyak-rmd"
    p: float | str = "auto"
    noise: str = "none"
    tol: float = RECOVERY_TOL
    eps_target: float = 1e-10
    budget: int = GLOBAL_STEP_CAP
    round_cap: int = DEFAULT_ROUND_CAP
    inflate_lipschitz: bool = True
    model: str | None = None
    scaling: str | None = None
    c1: float = 9.0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {', '.join(SOLVERS)}")


@dataclass
class CellResult:
    spec: CellSpec
    summary: dict
    trace: ConvergenceTrace | None = None
    x: Signal | None = None


def resolve_p(p, dim: int) -> float:
    if p == "auto" or p is None:
        return Geometry.for_dimension(dim).p
    return Geometry(float(p)).p


def suggested_mu(L1: float, dim: int, t_max: int) -> float | None:
    """Sharpness implied by a longest round of ``t_max`` steps: sqrt(e^3 L^2 ln(dim) / t)."""
    if t_max <= 0 or dim < 2:
        return None
    return math.sqrt(math.e**3 * L1**2 * math.log(dim) / t_max)


def cell_instance(spec: CellSpec) -> Instance:
    inst = generate_instance(spec.task, spec.n, spec.N, spec.k, m=spec.m, seed=spec.seed,
                             m_multiple=spec.m_multiple, model=spec.model, scaling=spec.scaling)
    noise = NoiseSpec.parse(spec.noise)
    if noise.mode is not NoiseMode.NONE:
        inst = apply_noise(inst, noise, spec.seed)
    return inst


def _oracle_and_target(inst: Instance, c1: float):
    """Objective handed to the solver and its optimal value.

    Noiseless: the penalty objective, optimum at the planted signal. Dense
    noise: the thresholded noisy objective, whose optimum is its level.
    Sparse corruption: the noisy objective, valued at the planted signal.
    """
    obj = inst.objective(c1)
    if inst.noise.mode is NoiseMode.DENSE:
        f0 = inst.clean_objective(c1).value(inst.x_true)
        oracle = thresholded(obj, f0, inst.noise_norm)
        return oracle, oracle.level
    return obj, obj.value(inst.x_true)


def run_cell(spec: CellSpec, *, keep_trace: bool = True) -> CellResult:
    inst = cell_instance(spec)
    oracle, f_star = _oracle_and_target(inst, spec.c1)
    truth = inst.x_true
    dim = truth.dim
    p = resolve_p(spec.p, dim)
    L1 = oracle.lipschitz_bound()
    L = p_norm_lipschitz(L1, spec.inflate_lipschitz)
    x0 = inst.op.zero_signal()
    extra = {}
    if spec.solver == "polyak-rmd":
        x, trace = polyak_rmd(oracle, f_star, x0, L, p, None, spec.eps_target, round_cap=spec.round_cap,
                              budget=spec.budget, truth=truth, dist_tol=spec.tol)
    elif spec.solver == "polyak-gd":
        x, trace = polyak_gd(oracle, f_star, x0, spec.eps_target, spec.budget, truth=truth, dist_tol=spec.tol)
    else:
        eps0 = max(oracle.value(x0) - f_star, spec.eps_target)
        if spec.solver == "adaptive-rmd":
            x, trace, log = adaptive_rmd(oracle, x0, spec.eps_target, eps0, p, L, budget=spec.budget,
                                         truth=truth, dist_tol=spec.tol)
            extra["workers"] = log.workers
            extra["restarts_per_worker"] = log.restarts_per_worker
        else:
            mu = estimate_sharpness(inst.clean_objective(spec.c1), truth, seed=spec.seed)
            schedule = SolverSchedule(eps0, spec.eps_target, L, p, mu=mu)
            affordable = spec.budget // schedule.t_inner
            truncated = affordable < schedule.K
            if truncated:
                # fewer rounds: the tolerance reached after ``affordable`` halvings of e
                schedule = SolverSchedule(eps0, eps0 * math.exp(-affordable / 2.0), L, p, mu=mu)
            x, trace = rmd(oracle, x0, schedule, truth=truth, dist_tol=spec.tol)
            if truncated and trace.status != "recovered":
                trace.status = "budget_exhausted"
            extra["mu_estimate"] = mu
            extra["t_inner"] = schedule.t_inner
    t_max = trace.max_round_length
    summary = {
        "task": inst.task.value,
        "n": spec.n,
        "N": None if truth.kind is Kind.VECTOR else (inst.op.N if spec.N is None else spec.N),
        "k": inst.k,
        "m": inst.m,
        "m_multiple": spec.m_multiple if spec.m is None else None,
        "T": inst.T,
        "threshold_extrapolated": inst.task in EXTRAPOLATED_TASKS,
        "seed": spec.seed,
        "solver": spec.solver,
        "p": p,
        "L1": L1,
        "L": L,
        "f_star": f_star,
        "noise": inst.noise.describe(),
        "noise_norm": inst.noise_norm,
        "output_dist_to_truth": norm_p(x - truth, 1),
        "recovered": trace.status == "recovered",
        "iterations_to_tol": trace.total_iterations if trace.status == "recovered" else None,
        "suggested_mu": None if spec.solver == "polyak-gd" else suggested_mu(L1, dim, t_max),
        **trace.summary(),
        **extra,
    }
    return CellResult(spec, summary, trace if keep_trace else None, x)


def _run_cell_light(spec: CellSpec) -> CellResult:
    return run_cell(spec, keep_trace=False)


def _run_cell_full(spec: CellSpec) -> CellResult:
    return run_cell(spec, keep_trace=True)


def run_cells(specs: list[CellSpec], jobs: int = 1, keep_traces: bool = False) -> list[CellResult]:
    """Run cells, optionally in a process pool; output order is the input order."""
    func = _run_cell_full if keep_traces else _run_cell_light
    if jobs <= 1 or len(specs) <= 1:
        return [func(s) for s in specs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, specs))


# -- sweeps ----------------------------------------------------------------------


def _median(values):
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


def convergence_table(results: list[CellResult]) -> list[dict]:
    """One row per (n, multiple): medians of the longest round and suggested sharpness."""
    keys = []
    for r in results:
        key = (r.spec.n, r.summary["m_multiple"], r.summary["m"] if r.spec.m is not None else None)
        if key not in keys:
            keys.append(key)
    table = []
    for n, mult, m in keys:
        rows = [r.summary for r in results
                if r.spec.n == n and r.summary["m_multiple"] == mult and (m is None or r.summary["m"] == m)]
        table.append({
            "n": n,
            "m_multiple": mult,
            "m": rows[0]["m"],
            "max_iter_median": _median(r["max_round_length"] for r in rows),
            "mu_median": _median(r["suggested_mu"] for r in rows),
            "recovered": sum(r["recovered"] for r in rows),
            "seeds": len(rows),
        })
    return table


def run_convergence_sweep(task: str, n: int, k: int, m_multiples, seeds, *, N: int | None = None,
                          solver: str = "polyak-rmd", jobs: int = 1, keep_traces: bool = False,
                          **cell_kw) -> dict:
    """Longest round and suggested sharpness per (multiple, seed).

    Returns ``{"cells": [...], "table": [...], "results": [...]}``; ``table``
    has one row per multiple with medians over seeds.
    """
    if not m_multiples:
        raise ValueError("need at least one sample multiple")
    specs = [CellSpec(task=task, n=n, N=N, k=k, m_multiple=mult, seed=s, solver=solver, **cell_kw)
             for mult in m_multiples for s in seeds]
    results = run_cells(specs, jobs, keep_traces)
    return {"cells": [r.summary for r in results], "table": convergence_table(results), "results": results}


def dimension_table(results: list[CellResult]) -> list[dict]:
    keys = []
    for r in results:
        key = (r.spec.n, r.spec.m_multiple, r.spec.solver)
        if key not in keys:
            keys.append(key)
    table = []
    for n, mult, sol in keys:
        rows = [r.summary for r in results if (r.spec.n, r.spec.m_multiple, r.spec.solver) == (n, mult, sol)]
        table.append({
            "n": n, "m_multiple": mult, "solver": sol,
            "iterations_median": _median(r["iterations_to_tol"] for r in rows),
            "recovered": sum(r["recovered"] for r in rows), "seeds": len(rows),
        })
    return table


def run_dimension_sweep(n_list, k: int, m_multiples, seeds, *, solvers=("polyak-rmd", "polyak-gd"),
                        jobs: int = 1, keep_traces: bool = False, **cell_kw) -> dict:
    """Iterations to recovery for Polyak-RMD and Polyak-GD across dimensions."""
    specs = [CellSpec(task="sparse", n=n, k=k, m_multiple=mult, seed=s, solver=sol, **cell_kw)
             for n in n_list for mult in m_multiples for sol in solvers for s in seeds]
    results = run_cells(specs, jobs, keep_traces)
    return {"cells": [r.summary for r in results], "table": dimension_table(results), "results": results}


def run_rip_sweep(task: str, n: int, k_prime: int, m_grid, seeds, *, N: int | None = None,
                  trials: int = 200, model: str | None = None, scaling: str | None = None) -> dict:
    """Sampled RIP bounds per (m, seed) and the median ratio per m."""
    if not m_grid:
        raise ValueError("need a nonempty grid of sample counts")
    task_ = Task(task)
    model = _TASK_MODEL[task_] if model is None else Model(model)
    if task_ in (Task.PHASE_RETRIEVAL, Task.COVARIANCE_I, Task.COVARIANCE_II):
        N = n
    cells = []
    for m in m_grid:
        for s in seeds:
            op = build_sensing(model, n, N, int(m), scaling=scaling, seed=s)
            est = estimate_rip(op, k_prime, trials=trials, seed=s)
            cells.append({"n": n, "m": int(m), "seed": s, "k_prime": k_prime, "lower": est.lower,
                          "upper": est.upper, "ratio": est.ratio, "trials": est.trials})
    table = [{"n": n, "m": int(m), "ratio_median": _median(c["ratio"] for c in cells if c["m"] == int(m))}
             for m in m_grid]
    return {"cells": cells, "table": table}


# -- configuration ---------------------------------------------------------------


class ConfigError(ValueError):
    """Bad configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _int_list(text: str) -> list[int]:
    # "0-9" is a range; "1e4" is accepted as an integer
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        if sep and lo:
            out.extend(range(int(lo), int(hi) + 1))
        else:
            value = float(part)
            if value != int(value):
                raise ValueError(f"not an integer: {part!r}")
            out.append(int(value))
    if not out:
        raise ValueError("empty list")
    return out


def _float_list(text: str) -> list[float]:
    out = [float(v) for v in text.split(",") if v.strip()]
    if not out:
        raise ValueError("empty list")
    return out


def _opt_int(text: str):
    return None if text.lower() in ("", "none") else int(text)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _p_value(text: str):
    if text == "auto":
        return "auto"
    return Geometry(float(text)).p


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _noise(text: str) -> str:
    NoiseSpec.parse(text)
    return text


def _model(text: str):
    if text.lower() in ("", "none"):
        return None
    return Model(text).value


def _scaling(text: str):
    if text.lower() in ("", "none"):
        return None
    return Scaling(text).value


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _positive_int(text: str) -> int:
    v = int(float(text))
    if v < 1:
        raise ValueError("must be at least 1")
    return v


#: config key -> (parser, default, help); keys mirror the command-line flags
CONFIG_SCHEMA = {
    "task": (_choice([t.value for t in Task]), "sparse", "recovery task: " + " | ".join(t.value for t in Task)),
    "n": (_int_list, [10_000], "signal dimension(s); a list makes a dimension grid"),
    "N": (_opt_int, None, "second matrix dimension (matrix sensing)"),
    "k": (_positive_int, 5, "sparsity or rank"),
    "m_multiple": (_float_list, [1.0, 2.0, 3.0, 4.0], "sample counts as multiples of the threshold T"),
    "m": (_opt_int, None, "absolute sample count (overrides m_multiple)"),
    "solver": (_choice(SOLVERS), "polyak-rmd", "solver: " + " | ".join(SOLVERS)),
    "p": (_p_value, "auto", "geometry exponent; auto = 1 + 1/ln(dim)"),
    "noise": (_noise, "none", "none | dense:SIGMA | dense-norm:NORM | sparse:ALPHA[:gaussian|adversarial]"),
    "seed": (_int_list, [0], "seed(s); ranges like 0-9 allowed"),
    "tol": (_positive_float, RECOVERY_TOL, "recovery tolerance on the l1 / nuclear distance"),
    "eps_target": (_positive_float, 1e-10, "final objective gap"),
    "budget": (_positive_int, GLOBAL_STEP_CAP, "step budget per run"),
    "round_cap": (_positive_int, DEFAULT_ROUND_CAP, "step cap per Polyak-RMD round"),
    "inflate_lipschitz": (_bool, True, "use e*L in the p-norm step sizes"),
    "model": (_model, None, "sensing model override: " + " | ".join(m.value for m in Model)),
    "scaling": (_scaling, None, "variance convention: ell_two | ell_one"),
    "jobs": (_positive_int, 1, "parallel worker processes"),
    "sweep": (_choice(["convergence", "dimension", "rip"]), "convergence", "sweep kind: convergence | dimension | rip"),
    "k_prime": (_positive_int, 2, "support / rank budget for RIP estimates"),
    "trials": (_positive_int, 200, "sampled directions for estimators"),
    "what": (_choice(["sharpness", "lipschitz", "conditioning", "rip"]), "conditioning",
             "what the estimate verb reports: sharpness | lipschitz | conditioning | rip"),
    "out": (str, "results", "output directory"),
}


def default_config() -> dict:
    return {key: (list(d) if isinstance(d, list) else d) for key, (_, d, _) in CONFIG_SCHEMA.items()}


def canonical_key(key: str) -> str:
    key = key.strip().lstrip("-").replace("-", "_")
    return key


def parse_value(key: str, text: str):
    key = canonical_key(key)
    if key not in CONFIG_SCHEMA:
        raise ConfigError(key, "unknown key")
    parser = CONFIG_SCHEMA[key][0]
    try:
        return parser(str(text).strip())
    except (ValueError, TypeError) as exc:
        raise ConfigError(key, str(exc)) from None


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line.split()[0], f"line {lineno} is not key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[canonical_key(key)] = parse_value(key, value)
    return out


def load_config(path) -> dict:
    return parse_config_text(Path(path).read_text())


def format_config_value(value) -> str:
    if isinstance(value, list):
        return ",".join(format_config_value(v) for v in value)
    if value is None:
        return "none"
    return str(value)


#: keys that do not influence results and stay out of summaries and hashes
_PLACEMENT_KEYS = ("out", "jobs")


def result_config(config: dict) -> dict:
    return {k: v for k, v in config.items() if k not in _PLACEMENT_KEYS}


def config_hash(config: dict) -> str:
    blob = json.dumps(_jsonable(result_config(config)), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def cell_options(config: dict) -> dict:
    """CellSpec keyword arguments shared by every cell of a config."""
    return dict(
        k=config["k"], p=config["p"], noise=config["noise"], tol=config["tol"],
        eps_target=config["eps_target"], budget=min(config["budget"], GLOBAL_STEP_CAP),
        round_cap=config["round_cap"], inflate_lipschitz=config["inflate_lipschitz"],
        model=config["model"], scaling=config["scaling"],
    )


def cell_specs(config: dict, solvers=None) -> list[CellSpec]:
    """Grid of cells (n x m_multiple x solver x seed) described by a config."""
    ms = [0.0] if config.get("m") is not None else config["m_multiple"]
    solvers = [config["solver"]] if solvers is None else solvers
    opts = cell_options(config)
    return [
        CellSpec(task=config["task"], n=n, N=config["N"], m_multiple=mult, m=config.get("m"),
                 seed=s, solver=sol, **opts)
        for n in config["n"] for mult in ms for sol in solvers for s in config["seed"]
    ]


def run_config_sweep(config: dict, keep_traces: bool = True) -> tuple[str, dict]:
    """Run the sweep a config describes; returns its kind and result."""
    kind = config["sweep"]
    if kind == "rip":
        cells, table = [], []
        for n in config["n"]:
            if config.get("m") is not None:
                grid = [config["m"]]
            else:
                T = threshold(config["task"], n, config["N"], config["k"])
                grid = [max(1, math.ceil(mult * T)) for mult in config["m_multiple"]]
            part = run_rip_sweep(config["task"], n, config["k_prime"], grid, config["seed"], N=config["N"],
                                 trials=config["trials"], model=config["model"], scaling=config["scaling"])
            cells += part["cells"]
            table += part["table"]
        return kind, {"cells": cells, "table": table}
    if kind == "dimension":
        if config["task"] != Task.SPARSE_RECOVERY.value:
            raise ConfigError("task", "the dimension sweep is defined for sparse recovery only")
        specs = cell_specs(config, solvers=("polyak-rmd", "polyak-gd"))
        results = run_cells(specs, config["jobs"], keep_traces)
        return kind, {"cells": [r.summary for r in results], "table": dimension_table(results),
                      "results": results}
    results = run_cells(cell_specs(config), config["jobs"], keep_traces)
    return kind, {"cells": [r.summary for r in results], "table": convergence_table(results),
                  "results": results}


# -- output files ----------------------------------------------------------------


def provenance(config: dict, seed=None) -> dict:
    return {"tool": f"sharprmd {__version__}", "config_hash": config_hash(config),
            "seed": config.get("seed") if seed is None else seed}


def provenance_lines(config: dict, seed=None) -> list[str]:
    prov = provenance(config, seed)
    return [f"tool: {prov['tool']}", f"config_hash: {prov['config_hash']}",
            f"seed: {format_config_value(prov['seed'])}"]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else ("inf" if math.isinf(v) else v)
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


def summary_json(config: dict, body: dict) -> str:
    """Deterministic summary: provenance first, sorted keys, no timings."""
    doc = {"provenance": provenance(config), "config": result_config(config), **body}
    return json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n"


def write_csv(path, header: list[str], columns: list[str], rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])


PLOT_COLUMNS = ["series", "n", "solver", "seed", "x", "y"]


def plot_rows(results: list[CellResult], max_points: int = 2000):
    """(series, n, solver, seed, iteration / 1000, distance) rows, at most ``max_points`` per trace."""
    for res in results:
        tr = res.trace
        if tr is None or len(tr) == 0:
            continue
        it = tr.column("iter")
        dist = tr.column("dist_to_truth")
        stride = max(1, math.ceil(len(it) / max_points))
        keep = np.arange(0, len(it), stride)
        if keep[-1] != len(it) - 1:
            keep = np.append(keep, len(it) - 1)
        series = f"{res.spec.m_multiple:g}T" if res.spec.m is None else f"m={res.spec.m}"
        for j in keep:
            yield series, res.spec.n, res.spec.solver, res.spec.seed, float(it[j]) / 1000.0, float(dist[j])


def write_sweep_outputs(out_dir, config: dict, sweep: dict, kind: str) -> dict:
    """Summary JSON, table CSV, plot-data CSV and per-cell trace CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = provenance_lines(config)
    body = {"sweep": kind, "cells": sweep["cells"], "table": sweep["table"]}
    paths = {"summary": out / "summary.json", "table": out / "table.csv"}
    paths["summary"].write_text(summary_json(config, body))
    if kind == "convergence":
        write_csv(paths["table"], header, ["n", "m", "m_multiple", "max_iter", "mu", "recovered", "seeds"],
                  [(r["n"], r["m"], r["m_multiple"], r["max_iter_median"], r["mu_median"], r["recovered"],
                    r["seeds"]) for r in sweep["table"]])
    elif kind == "dimension":
        write_csv(paths["table"], header, ["n", "m_multiple", "solver", "iterations", "recovered", "seeds"],
                  [(r["n"], r["m_multiple"], r["solver"], r["iterations_median"], r["recovered"], r["seeds"])
                   for r in sweep["table"]])
    else:
        write_csv(paths["table"], header, ["n", "m", "ratio_median"],
                  [(r["n"], r["m"], r["ratio_median"]) for r in sweep["table"]])
    results = sweep.get("results") or []
    if any(r.trace is not None for r in results):
        paths["plot"] = out / "plot_distance.csv"
        write_csv(paths["plot"], header, PLOT_COLUMNS, plot_rows(results))
        trace_dir = out / "traces"
        trace_dir.mkdir(exist_ok=True)
        for res in results:
            if res.trace is None:
                continue
            s = res.spec
            tag = f"{s.m_multiple:g}T" if s.m is None else f"m{s.m}"
            name = f"{s.task}_n{s.n}_{tag}_{s.solver}_seed{s.seed}.csv"
            res.trace.to_csv(trace_dir / name, provenance_lines(config, s.seed))
    return paths


def write_run_outputs(out_dir, config: dict, result: CellResult) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = result.spec
    stem = f"{s.task}_n{s.n}_{s.solver}_seed{s.seed}"
    paths = {"summary": out / f"{stem}_summary.json", "trace": out / f"{stem}_trace.csv"}
    paths["summary"].write_text(summary_json(config, {"run": result.summary}))
    if result.trace is not None:
        result.trace.to_csv(paths["trace"], provenance_lines(config, s.seed))
    return paths


def save_instance(path, inst: Instance, config: dict | None = None) -> None:
    """Planted signal, observations and the operator header in one ``.npz``."""
    extra = {}
    if config is not None:
        prov = provenance(config, inst.seed)
        extra = {"tool": np.array(prov["tool"]), "config_hash": np.array(prov["config_hash"])}
    np.savez(
        path,
        task=np.array(inst.task.value),
        x_true=inst.x_true.data,
        b=inst.b,
        b_clean=inst.b if inst.b_clean is None else inst.b_clean,
        k=np.array(inst.k),
        T=np.array(inst.T),
        seed=np.array(inst.seed),
        noise=np.array(inst.noise.describe()),
        operator=np.frombuffer(inst.op.to_bytes(), dtype=np.uint8),
        **extra,
    )
