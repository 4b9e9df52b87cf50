"""Mirror descent in l_p / Schatten-p geometry and its restart schemes.

All solvers take an *oracle*: any object with ``value(x)`` and
``value_and_subgrad(x) -> (float, Signal)``. The mirror map around an
anchor ``a`` is ``h_a(x) = 1/2 ||x - a||_p^2``, which is (p-1)-strongly
convex w.r.t. ``||.||_p``.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .spaces import Geometry, Kind, Signal, grad_half_sq_norm, norm_p

DEFAULT_ROUND_CAP = 10_000_000


class SolverStall(RuntimeError):
    """Raised by callers that treat a stalled round as fatal."""


# -- stop criteria -------------------------------------------------------------


@dataclass(frozen=True)
class MaxIters:
    t: int


@dataclass(frozen=True)
class ValueBelow:
    target: float
    cap: int = DEFAULT_ROUND_CAP


@dataclass(frozen=True)
class Improvement:
    amount: float
    cap: int = DEFAULT_ROUND_CAP


# -- traces --------------------------------------------------------------------


class _Column:
    __slots__ = ("buf", "n")

    def __init__(self, dtype):
        self.buf = np.empty(1024, dtype=dtype)
        self.n = 0

    def append(self, v):
        if self.n == self.buf.size:
            self.buf = np.concatenate([self.buf, np.empty_like(self.buf)])
        self.buf[self.n] = v
        self.n += 1

    def array(self) -> np.ndarray:
        return self.buf[: self.n].copy()


TRACE_COLUMNS = ("iter", "round", "value", "best_value", "dist_to_truth", "elapsed_s")


class ConvergenceTrace:
    """Per-evaluation rows plus restart markers.

    Every round contributes a row for its anchor (iteration 0 of the round,
    which shares the global iteration index of the previous round's last
    step) and one row per mirror-descent step.
    """

    def __init__(self, truth: Signal | None = None):
        self.truth = truth
        self._iter = _Column(np.int64)
        self._round = _Column(np.int64)
        self._value = _Column(float)
        self._best = _Column(float)
        self._dist = _Column(float)
        self._elapsed = _Column(float)
        self.restarts: list[int] = []
        self.round_lengths: list[int] = []
        self.status = "converged"
        self.stalled_round: int | None = None
        self.total_iterations = 0
        self.best_value = math.inf
        self._t0 = time.perf_counter()

    def distance(self, x: Signal) -> float:
        if self.truth is None:
            return math.nan
        if x.kind is Kind.VECTOR:
            return float(np.abs(x.data - self.truth.data).sum())
        return norm_p(x - self.truth, 1)

    def record(self, it: int, rnd: int, value: float, x: Signal) -> float:
        if value < self.best_value:
            self.best_value = value
        dist = self.distance(x)
        self._iter.append(it)
        self._round.append(rnd)
        self._value.append(value)
        self._best.append(self.best_value)
        self._dist.append(dist)
        self._elapsed.append(time.perf_counter() - self._t0)
        return dist

    def start_round(self, it: int):
        self.restarts.append(it)

    def __len__(self):
        return self._iter.n

    def column(self, name: str) -> np.ndarray:
        return {
            "iter": self._iter, "round": self._round, "value": self._value,
            "best_value": self._best, "dist_to_truth": self._dist, "elapsed_s": self._elapsed,
        }[name].array()

    @property
    def final_distance(self) -> float:
        return float(self._dist.buf[self._dist.n - 1]) if self._dist.n else math.nan

    @property
    def max_round_length(self) -> int:
        return max(self.round_lengths, default=0)

    def summary(self) -> dict:
        """JSON-ready summary; contains no wall-clock data so reruns match exactly."""
        return {
            "status": self.status,
            "stalled_round": self.stalled_round,
            "final_value": float(self._value.buf[self._value.n - 1]) if self._value.n else None,
            "best_value": self.best_value if self._value.n else None,
            "final_dist_to_truth": None if math.isnan(self.final_distance) else self.final_distance,
            "total_iterations": int(self.total_iterations),
            "rounds": len(self.round_lengths),
            "round_lengths": [int(v) for v in self.round_lengths],
            "max_round_length": int(self.max_round_length),
        }

    def to_csv(self, path, header_lines: list[str] | None = None):
        with open(path, "w", newline="") as fh:
            for line in header_lines or []:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            cols = [self.column(c) for c in TRACE_COLUMNS]
            for row in zip(*cols):
                it, rnd, val, best, dist, el = row
                writer.writerow([int(it), int(rnd), repr(float(val)), repr(float(best)),
                                 "" if math.isnan(dist) else repr(float(dist)), f"{el:.6f}"])


class SolveResult(NamedTuple):
    x: Signal
    trace: ConvergenceTrace


# -- mirror descent ------------------------------------------------------------


def mirror_inverse(theta: Signal, anchor: Signal, geom: Geometry) -> Signal:
    """``(grad h_anchor)^{-1}(theta) = anchor + sign(theta)|theta|^{q-1} / ||theta||_q^{q-2}``.

    Applied entrywise for vectors and to singular values (eigenvalues, with
    sign) for matrices. Returns ``anchor`` itself when ``theta`` is zero.
    """
    step = grad_half_sq_norm(theta, geom.q).data
    if not step.any():
        return anchor
    return anchor.like(anchor.data + step)


def mirror_forward(x: Signal, anchor: Signal, geom: Geometry) -> Signal:
    """``grad h_anchor(x)``; the inverse of :func:`mirror_inverse`."""
    return grad_half_sq_norm(x - anchor, geom.p)


class MDResult(NamedTuple):
    x: Signal
    value: float
    grad: Signal
    iterations: int
    status: str


def mirror_descent(
    oracle,
    anchor: Signal,
    eta: float,
    stop,
    geom: Geometry,
    *,
    anchor_eval: tuple[float, Signal] | None = None,
    trace: ConvergenceTrace | None = None,
    round_index: int = 0,
    iter_offset: int = 0,
    dist_tol: float | None = None,
) -> MDResult:
    """Mirror descent with ``h = h_anchor`` until ``stop`` fires.

    ``stop`` is :class:`MaxIters`, :class:`ValueBelow` or :class:`Improvement`;
    the last two carry an iteration cap and report ``"budget_exhausted"``
    when it is hit. The anchor counts as iteration 0 and is itself a
    candidate output. With a trace attached and ``dist_tol`` set, the run
    also stops (status ``"recovered"``) once an iterate is within
    ``dist_tol`` of the trace's ground truth.
    """
    if eta <= 0:
        raise ValueError("step size must be positive")
    if isinstance(stop, MaxIters):
        if stop.t < 0:
            raise ValueError("MaxIters needs t >= 0")
        cap = stop.t
    elif isinstance(stop, (ValueBelow, Improvement)):
        cap = stop.cap
    else:
        raise TypeError(f"unknown stop criterion {stop!r}")

    val, g = oracle.value_and_subgrad(anchor) if anchor_eval is None else anchor_eval
    anchor_val = val
    best_x, best_val, best_g = anchor, val, g
    if trace is not None:
        d = trace.record(iter_offset, round_index, val, anchor)
        if dist_tol is not None and d <= dist_tol:
            return MDResult(anchor, val, g, 0, "recovered")

    def done(v_best):
        if isinstance(stop, ValueBelow):
            return v_best <= stop.target
        if isinstance(stop, Improvement):
            return v_best <= anchor_val - stop.amount
        return False

    if done(best_val):
        return MDResult(best_x, best_val, best_g, 0, "converged")

    theta = np.zeros_like(anchor.data)
    t = 0
    while t < cap:
        t += 1
        theta -= eta * g.data
        x = mirror_inverse(Signal._wrap(anchor.kind, theta, anchor.flipped), anchor, geom)
        val, g = oracle.value_and_subgrad(x)
        if val < best_val:
            best_x, best_val, best_g = x, val, g
        if trace is not None:
            d = trace.record(iter_offset + t, round_index, val, x)
            if dist_tol is not None and d <= dist_tol:
                return MDResult(x, val, g, t, "recovered")
        if done(best_val):
            return MDResult(best_x, best_val, best_g, t, "converged")
    status = "converged" if isinstance(stop, MaxIters) else "budget_exhausted"
    return MDResult(best_x, best_val, best_g, t, status)


# -- schedules -----------------------------------------------------------------


def restart_count(eps0: float, eps_target: float) -> int:
    if eps_target >= eps0:
        return 0
    return math.ceil(2.0 * math.log(eps0 / eps_target))


@dataclass(frozen=True)
class SolverSchedule:
    """Round tolerances ``eps0 e^{-k/2}`` and steps ``(p-1) eps_k / L^2``.

    ``L`` and ``mu`` are the Lipschitz and sharpness constants w.r.t.
    ``||.||_p``. ``t_inner`` (the fixed round length of plain RMD) is only
    defined when ``mu`` is given.
    """

    eps0: float
    eps_target: float
    L: float
    p: float
    mu: float | None = None
    K: int = field(init=False)
    eps_k: tuple = field(init=False)
    eta_k: tuple = field(init=False)
    t_inner: int | None = field(init=False)

    def __post_init__(self):
        if self.eps0 <= 0 or self.eps_target <= 0:
            raise ValueError("tolerances must be positive")
        if self.L <= 0:
            raise ValueError("Lipschitz constant must be positive")
        Geometry(self.p)
        K = restart_count(self.eps0, self.eps_target)
        eps = tuple(self.eps0 * math.exp(-k / 2.0) for k in range(1, K + 1))
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "eps_k", eps)
        object.__setattr__(self, "eta_k", tuple((self.p - 1.0) * e / self.L**2 for e in eps))
        t = None
        if self.mu is not None:
            t = math.ceil(math.e * self.L**2 / (self.mu**2 * (self.p - 1.0)))
        object.__setattr__(self, "t_inner", t)

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.p)

    @property
    def total_budget(self) -> int | None:
        return None if self.t_inner is None else self.K * self.t_inner


def p_norm_lipschitz(L1: float, inflate: bool = True) -> float:
    """Lipschitz constant w.r.t. ``||.||_p`` for p = 1 + 1/ln(dim) from one w.r.t. ``||.||_1``.

    ``||w||_p >= ||w||_1 / e`` makes ``e * L1`` valid; ``inflate=False``
    passes ``L1`` through unchanged.
    """
    return math.e * L1 if inflate else L1


def _remaining(budget: int | None, used: int) -> int | None:
    return None if budget is None else max(budget - used, 0)


def rmd(oracle, x0: Signal, schedule: SolverSchedule, *, truth: Signal | None = None,
        dist_tol: float | None = None) -> SolveResult:
    """Restarted mirror descent with fixed rounds of ``schedule.t_inner`` steps."""
    if schedule.t_inner is None:
        raise ValueError("plain RMD needs a sharpness constant in the schedule")
    geom = schedule.geometry
    trace = ConvergenceTrace(truth)
    x = x0
    x_eval = oracle.value_and_subgrad(x0)
    if schedule.K == 0:
        trace.record(0, 0, x_eval[0], x0)
        return SolveResult(x0, trace)
    for k in range(schedule.K):
        trace.start_round(trace.total_iterations)
        res = mirror_descent(
            oracle, x, schedule.eta_k[k], MaxIters(schedule.t_inner), geom,
            anchor_eval=x_eval, trace=trace, round_index=k + 1,
            iter_offset=trace.total_iterations, dist_tol=dist_tol,
        )
        trace.total_iterations += res.iterations
        trace.round_lengths.append(res.iterations)
        x, x_eval = res.x, (res.value, res.grad)
        if res.status == "recovered":
            trace.status = "recovered"
            break
    return SolveResult(x, trace)


def polyak_rmd(oracle, f_star: float, x0: Signal, L: float, p: float, eps0: float | None,
               eps_target: float, *, round_cap: int = DEFAULT_ROUND_CAP, budget: int | None = None,
               truth: Signal | None = None, dist_tol: float | None = None) -> SolveResult:
    """Restarted mirror descent where round ``k`` runs until ``f(x) - f_star <= eps_k``.

    ``eps0`` defaults to ``f(x0) - f_star``. A round that hits ``round_cap``
    steps sets ``trace.status = "stalled"`` and ``trace.stalled_round``; a
    global ``budget`` overrun sets ``"budget_exhausted"``.
    """
    geom = Geometry(p)
    x_eval = oracle.value_and_subgrad(x0)
    if eps0 is None:
        eps0 = max(x_eval[0] - f_star, eps_target)
    schedule = SolverSchedule(eps0, eps_target, L, p)
    trace = ConvergenceTrace(truth)
    x = x0
    if schedule.K == 0:
        trace.record(0, 0, x_eval[0], x0)
        return SolveResult(x0, trace)
    for k in range(schedule.K):
        remaining = _remaining(budget, trace.total_iterations)
        cap = round_cap if remaining is None else min(round_cap, remaining)
        trace.start_round(trace.total_iterations)
        res = mirror_descent(
            oracle, x, schedule.eta_k[k], ValueBelow(f_star + schedule.eps_k[k], cap), geom,
            anchor_eval=x_eval, trace=trace, round_index=k + 1,
            iter_offset=trace.total_iterations, dist_tol=dist_tol,
        )
        trace.total_iterations += res.iterations
        trace.round_lengths.append(res.iterations)
        x, x_eval = res.x, (res.value, res.grad)
        if res.status == "recovered":
            trace.status = "recovered"
            break
        if res.status == "budget_exhausted":
            if cap == round_cap:
                trace.status = "stalled"
                trace.stalled_round = k + 1
            else:
                trace.status = "budget_exhausted"
            break
    return SolveResult(x, trace)


# -- adaptive RMD --------------------------------------------------------------


class _Worker:
    __slots__ = ("index", "eps", "eta", "anchor", "anchor_val", "anchor_g", "theta",
                 "g", "best", "restarts", "steps")

    def __init__(self, index, eps, eta, x, val, g):
        self.index = index
        self.eps = eps
        self.eta = eta
        self.restarts = 0
        self.steps = 0
        self.reset(x, val, g)

    def reset(self, x, val, g):
        self.anchor, self.anchor_val, self.anchor_g = x, val, g
        self.theta = np.zeros_like(x.data)
        self.g = g
        self.best = (x, val, g)


@dataclass
class AdaptiveLog:
    """Message and restart bookkeeping from an adaptive-RMD run."""

    workers: int
    rounds: int = 0
    steps_per_worker: list = field(default_factory=list)
    restarts_per_worker: list = field(default_factory=list)
    # (global round, sender, receiver, message value, receiver anchor value after delivery, accepted)
    deliveries: list = field(default_factory=list)


def adaptive_rmd(oracle, x_bar: Signal, eps_target: float, eps0: float, p: float, L: float, *,
                 budget: int = 50_000_000, truth: Signal | None = None,
                 dist_tol: float | None = None,
                 stop_rule: str = "ladder") -> tuple[Signal, ConvergenceTrace, AdaptiveLog]:
    """Lockstep simulation of the parallel restart ladder.

    Worker ``i`` (1-based) uses ``eps_i = eps0 2^{-i}`` and
    ``eta_i = (p-1) eps_i / L^2``; it restarts when its best iterate
    improves on its anchor by ``eps_i`` or when worker ``i-1`` delivers an
    iterate that does. Each global round every worker takes one step; new
    anchors are sent to the next worker and delivered at the round boundary.

    Without the optimal value the run cannot certify accuracy directly.
    With ``stop_rule="ladder"`` it stops once the top worker's anchor has
    improved on ``f(x_bar)`` by ``eps0 - eps_target``, which certifies
    ``f - f* <= eps_target`` whenever ``f(x_bar) - f* <= eps0``. With
    ``stop_rule="restarts"`` it stops after the top worker has restarted
    ``ceil(2 ln(eps0 / eps_target))`` times. Either way ``budget`` total
    steps bound the run.

    The returned trace follows the top worker.
    """
    if stop_rule not in ("ladder", "restarts"):
        raise ValueError(f"unknown stop rule {stop_rule!r}")
    geom = Geometry(p)
    K = 1 + max(0, math.ceil(math.log2(eps0 / eps_target)))
    restart_goal = restart_count(eps0, eps_target)
    val0, g0 = oracle.value_and_subgrad(x_bar)
    workers = [
        _Worker(i, eps0 * 2.0 ** (-i), (p - 1.0) * eps0 * 2.0 ** (-i) / L**2, x_bar, val0, g0)
        for i in range(1, K + 1)
    ]
    top = workers[-1]
    goal = val0 - (eps0 - eps_target)
    log = AdaptiveLog(K)
    trace = ConvergenceTrace(truth)
    trace.start_round(0)
    trace.record(0, 0, val0, x_bar)
    total = 0
    mail: dict[int, tuple] = {}
    rnd = 0

    def restart(w, cand):
        w.reset(*cand)
        w.restarts += 1

    while True:
        if (top.anchor_val <= goal if stop_rule == "ladder" else top.restarts >= restart_goal):
            trace.status = "converged"
            break
        if total + K > budget:
            trace.status = "budget_exhausted"
            break
        rnd += 1
        outbox: dict[int, tuple] = {}
        for w in workers:
            w.theta -= w.eta * w.g.data
            x = mirror_inverse(Signal._wrap(w.anchor.kind, w.theta, w.anchor.flipped), w.anchor, geom)
            val, g = oracle.value_and_subgrad(x)
            w.g = g
            w.steps += 1
            total += 1
            if val < w.best[1]:
                w.best = (x, val, g)
            if w is top:
                d = trace.record(total, top.restarts, val, x)
                if dist_tol is not None and d <= dist_tol:
                    trace.status = "recovered"
            if w.best[1] <= w.anchor_val - w.eps:
                restart(w, w.best)
                if w is top:
                    trace.start_round(total)
                elif w.index < K:
                    _post(outbox, w.index + 1, w.anchor, w.anchor_val, w.anchor_g, w.index)
        # deliveries from the previous boundary's mail, then this round's outbox
        for target, (x, val, g, sender) in sorted(mail.items()):
            w = workers[target - 1]
            ok = val <= w.anchor_val - w.eps
            if ok:
                restart(w, (x, val, g))
                if w is top:
                    trace.start_round(total)
                elif w.index < K:
                    _post(outbox, w.index + 1, x, val, g, w.index)
            log.deliveries.append((rnd, sender, target, val, w.anchor_val, ok))
        mail = outbox
        if trace.status == "recovered":
            break

    trace.total_iterations = total
    trace.round_lengths = _round_lengths(trace)
    log.rounds = rnd
    log.steps_per_worker = [w.steps for w in workers]
    log.restarts_per_worker = [w.restarts for w in workers]
    best_x = top.best[0] if top.best[1] <= top.anchor_val else top.anchor
    return best_x, trace, log


def _post(outbox, target, x, val, g, sender):
    prev = outbox.get(target)
    if prev is None or val < prev[1]:
        outbox[target] = (x, val, g, sender)


def _round_lengths(trace: ConvergenceTrace) -> list[int]:
    marks = trace.restarts + [trace.total_iterations]
    return [b - a for a, b in zip(marks[:-1], marks[1:])]


# -- Euclidean baseline ----------------------------------------------------------


def polyak_gd(oracle, f_star: float, x0: Signal, eps_target: float, max_iters: int, *,
              truth: Signal | None = None, dist_tol: float | None = None) -> SolveResult:
    """Subgradient method with Polyak steps ``(f(x) - f_star) / ||g||_2^2``.

    A zero subgradient at a point with positive gap means the oracle and
    ``f_star`` disagree; the trace status is then ``"contradiction"``.
    """
    trace = ConvergenceTrace(truth)
    trace.start_round(0)
    x = x0
    val, g = oracle.value_and_subgrad(x)
    t = 0
    trace.status = "budget_exhausted"
    while True:
        d = trace.record(t, 0, val, x)
        gap = val - f_star
        if gap <= eps_target:
            trace.status = "converged"
            break
        if dist_tol is not None and d <= dist_tol:
            trace.status = "recovered"
            break
        if t >= max_iters:
            break
        gn2 = float(np.vdot(g.data, g.data))
        if gn2 == 0.0:
            trace.status = "contradiction"
            break
        x = x.like(x.data - (gap / gn2) * g.data)
        val, g = oracle.value_and_subgrad(x)
        t += 1
    trace.total_iterations = t
    trace.round_lengths = [t]
    return SolveResult(x, trace)
