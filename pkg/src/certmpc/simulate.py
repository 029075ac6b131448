"""Receding-horizon closed-loop simulation and suboptimality metrics."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np

from .certify import Certificate, q_norm
from .errors import DimensionMismatch, EmptyGrid, InvalidSpec
from .model import CondensedQp, LtiModel, MpcSpec, value_from_solution
from .solvers import AdmmState, StopPolicy, admm_solve, oracle_solve, pgdm_solve

DELTA_FLOOR = 1e-12
METHODS = ("oracle", "pgdm", "admm")


@dataclass(frozen=True)
class Controller:
    """How the QP is solved at every closed-loop step.

    ``method`` is one of ``"oracle"``, ``"pgdm"``, ``"admm"``. ``certificate``
    supplies the constants of the per-step bound on ``|V(x+) - V(x1)|``.
    With ``warm_start`` the previous solution, shifted by one block and padded
    with zeros, seeds the solver; it is rescaled so that
    ``||u0|| <= gamma ||x||_Q``.
    """

    label: str
    method: str
    policy: Optional[StopPolicy] = None
    alpha: Optional[float] = None
    rho: Optional[float] = None
    certificate: Optional[Certificate] = None
    warm_start: bool = False
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidSpec(f"unknown method {self.method!r}")
        if self.method != "oracle" and self.policy is None:
            raise InvalidSpec(f"{self.method} controller needs a stop policy")
        if self.method == "admm" and self.rho is None:
            raise InvalidSpec("ADMM controller needs rho")


@dataclass
class StepRecord:
    step: int
    x: np.ndarray
    u0_applied: np.ndarray
    iterations: int
    V_now: float
    V_next_opt: float
    V_next_actual: float
    lyapunov_gap: float
    bound_rhs: float
    delta: float
    x_qnorm: float


TRACE_COLUMNS = ("step", "x", "u0", "iterations", "V_now", "V_next_opt",
                 "V_next_actual", "lyapunov_gap", "bound_rhs", "delta")


@dataclass
class ClosedLoopTrace:
    label: str
    steps: List[StepRecord]
    x_final: np.ndarray

    @property
    def iterations(self) -> np.ndarray:
        return np.array([s.iterations for s in self.steps], dtype=int)

    @property
    def total_iterations(self) -> int:
        return int(self.iterations.sum())

    @property
    def states(self) -> np.ndarray:
        """All visited states including the final one, shape ``(n_steps + 1, nx)``."""
        return np.vstack([s.x for s in self.steps] + [self.x_final])

    @property
    def deltas(self) -> np.ndarray:
        d = np.array([s.delta for s in self.steps])
        return d[np.isfinite(d)]

    def to_csv(self, header: Sequence[str] = ()) -> str:
        """One row per step; ``header`` lines are written first as ``#`` comments."""
        buf = io.StringIO()
        for line in header:
            buf.write(f"# {line}\n")
        nx = self.x_final.size
        nu = self.steps[0].u0_applied.size if self.steps else 0
        cols = (["step"] + [f"x{i}" for i in range(nx)] + [f"u0_{i}" for i in range(nu)]
                + list(TRACE_COLUMNS[3:]))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for s in self.steps:
            w.writerow([s.step] + [repr(float(v)) for v in s.x]
                       + [repr(float(v)) for v in s.u0_applied]
                       + [s.iterations] + [repr(float(v)) for v in (
                           s.V_now, s.V_next_opt, s.V_next_actual,
                           s.lyapunov_gap, s.bound_rhs, s.delta)])
        return buf.getvalue()


def step_plant(model: LtiModel, x, u0) -> np.ndarray:
    """``A x + B u0``."""
    x = np.asarray(x, dtype=float).ravel()
    u0 = np.asarray(u0, dtype=float).ravel()
    if x.size != model.nx or u0.size != model.nu:
        raise DimensionMismatch(
            f"expected x of length {model.nx} and u of length {model.nu}, "
            f"got {x.size} and {u0.size}")
    return model.A @ x + model.B @ u0


def _warm_guess(previous: np.ndarray, nu: int, gamma: Optional[float], xq: float):
    guess = np.concatenate([previous[nu:], np.zeros(nu)])
    if gamma is not None:
        norm = np.linalg.norm(guess)
        cap = gamma * xq
        if norm > cap:
            guess = guess * (cap / norm) if norm > 0 else guess
    return guess


def run_closed_loop(spec: MpcSpec, qp: CondensedQp, controller: Controller, x_init,
                    n_steps: int, oracle: Callable = oracle_solve,
                    delta_floor: float = DELTA_FLOOR) -> ClosedLoopTrace:
    """Simulate ``n_steps`` of receding-horizon control.

    At step ``j`` the controller solves from ``x_j`` and its first input block
    is applied, giving ``x_j+``. The oracle provides the optimal first input
    and hence ``x1 = A x_j + B u0*``. Recorded per step: ``V(x_j)``, ``V(x1)``,
    ``V(x_j+)``, ``gap = |V(x_j+) - V(x1)|``, the certificate bound evaluated
    with the iterations actually executed, and ``delta = gap / |V(x1)|``
    (NaN when ``V(x1) < delta_floor``).
    """
    model = spec.model
    nu = model.nu
    x = np.asarray(x_init, dtype=float).ravel()
    if x.size != model.nx:
        raise DimensionMismatch(f"x_init must have length {model.nx}, got {x.size}")
    if not n_steps >= 1:
        raise InvalidSpec("n_steps must be at least 1")
    Q = spec.Q
    cert = controller.certificate
    gamma = controller.gamma
    if gamma is None and cert is not None:
        gamma = cert.gamma

    u_star = oracle(qp, x)
    V_now = value_from_solution(qp, u_star, x)
    prev = np.zeros(qp.n)
    admm_prev: Optional[AdmmState] = None
    records: List[StepRecord] = []
    for j in range(n_steps):
        xq = q_norm(x, Q)
        if controller.method == "oracle":
            u, iters = u_star, 0
        else:
            u0 = _warm_guess(prev, nu, gamma, xq) if controller.warm_start else None
            if controller.method == "pgdm":
                run = pgdm_solve(qp, x, u0=u0, alpha=controller.alpha, policy=controller.policy)
            else:
                state = None
                if u0 is not None:
                    state = AdmmState(u0.copy(), u0.copy(), np.zeros(qp.n), controller.rho)
                run = admm_solve(qp, x, state, controller.policy, rho=controller.rho)
            u, iters = run.u_final, run.iterations
        prev = u
        x_plus = step_plant(model, x, u[:nu])
        x_one = step_plant(model, x, u_star[:nu])
        u_star_plus = oracle(qp, x_plus)
        V_plus = value_from_solution(qp, u_star_plus, x_plus)
        if np.array_equal(x_one, x_plus):
            V_one = V_plus
        else:
            V_one = value_from_solution(qp, oracle(qp, x_one), x_one)
        gap = abs(V_plus - V_one)
        bound = cert.bound(iters, xq) if cert is not None else math.nan
        delta = gap / abs(V_one) if abs(V_one) >= delta_floor else math.nan
        records.append(StepRecord(
            step=j, x=x, u0_applied=np.array(u[:nu]), iterations=int(iters),
            V_now=V_now, V_next_opt=V_one, V_next_actual=V_plus,
            lyapunov_gap=gap, bound_rhs=bound, delta=delta, x_qnorm=xq))
        x, u_star, V_now = x_plus, u_star_plus, V_plus
    return ClosedLoopTrace(label=controller.label, steps=records, x_final=x)


@dataclass
class SummaryRow:
    """Table-style statistics of one controller over a set of runs."""

    label: str
    m_avg: float
    m_max: int
    m_total: int
    delta_avg: float  # percent
    delta_max: float  # percent
    n_runs: int
    n_steps: int
    n_delta: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SweepResult:
    rows: List[SummaryRow]
    run_totals: dict = field(default_factory=dict)
    traces: Optional[dict] = None

    def row(self, label: str) -> SummaryRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def summarize(label: str, traces: Sequence[ClosedLoopTrace]) -> SummaryRow:
    its = np.concatenate([t.iterations for t in traces])
    ds = np.concatenate([t.deltas for t in traces])
    return SummaryRow(
        label=label, m_avg=float(its.mean()), m_max=int(its.max()),
        m_total=int(its.sum()),
        delta_avg=float(100.0 * ds.mean()) if ds.size else 0.0,
        delta_max=float(100.0 * ds.max()) if ds.size else 0.0,
        n_runs=len(traces), n_steps=int(its.size), n_delta=int(ds.size))


def _sweep_one(args):
    spec, qp, controllers, x0, n_steps, oracle = args
    return [run_closed_loop(spec, qp, c, x0, n_steps, oracle) for c in controllers]


def sweep_initial_conditions(spec: MpcSpec, qp: CondensedQp, controllers: Sequence[Controller],
                             x0_set: Iterable, n_steps: int, oracle: Callable = oracle_solve,
                             n_workers: int = 1, keep_traces: bool = False) -> SweepResult:
    """Run every controller from every initial condition and tabulate.

    Statistics pool all steps of all runs: ``m_avg``/``m_max`` are per-step
    iteration counts; ``delta_avg``/``delta_max`` are in percent. Runs are
    distributed over ``n_workers`` processes; results are ordered by the
    position of the initial condition in ``x0_set``.
    """
    x0_list = [np.asarray(x, dtype=float).ravel() for x in x0_set]
    if not x0_list:
        raise EmptyGrid("the set of initial conditions is empty")
    jobs = [(spec, qp, list(controllers), x0, n_steps, oracle) for x0 in x0_list]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    rows, totals, traces = [], {}, {}
    for k, c in enumerate(controllers):
        per_ctrl = [r[k] for r in results]
        rows.append(summarize(c.label, per_ctrl))
        totals[c.label] = [t.total_iterations for t in per_ctrl]
        if keep_traces:
            traces[c.label] = per_ctrl
    return SweepResult(rows=rows, run_totals=totals, traces=traces if keep_traces else None)


def _total(t) -> int:
    if isinstance(t, ClosedLoopTrace):
        return t.total_iterations
    if isinstance(t, SummaryRow):
        return t.m_total
    return int(t)


def iteration_reduction(unbounded, bounded) -> float:
    """Percentage drop in total iterations, ``100 (1 - bounded / unbounded)``.

    Accepts traces, summary rows or plain totals.
    """
    tu, tb = _total(unbounded), _total(bounded)
    if tu == 0:
        raise ZeroDivisionError("unbounded run performed no iterations")
    return 100.0 * (1.0 - tb / tu)
