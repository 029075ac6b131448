"""Double-integrator benchmark: plant, MPC design and initial-condition grid."""
from __future__ import annotations

import csv
from importlib import resources
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from .model import LtiModel, MpcSpec, condense
from .solvers import oracle_solve
from .simulate import step_plant

# Position/velocity double integrator, unit sampling time.
A_DI = np.array([[1.0, 1.0], [0.0, 1.0]])
B_DI = np.array([[0.5], [1.0]])
P_REPORTED = np.array([[2.367, 1.118], [1.118, 2.588]])

# Artifact choice: saturates the input during the first steps.
X_INIT = np.array([-6.0, 2.0])
N_STEPS = 40
GRID_SIZE = 201
GRID_BOX = ((-10.0, 10.0), (-10.0, 10.0))
GRID_SEED = 0
GRID_FILE = "grid_201.csv"


def double_integrator(N: int = 10, u_max: float = 1.0, P: Optional[np.ndarray] = None) -> MpcSpec:
    model = LtiModel(A_DI, B_DI, Ts=1.0)
    return MpcSpec(model, N, Q=np.eye(2), R=np.eye(1), u_lo=-u_max, u_hi=u_max, P=P)


def converges(spec: MpcSpec, qp, x0, n_steps: int = N_STEPS, tol: float = 1e-3,
              oracle=oracle_solve) -> bool:
    """True if the optimal closed loop from ``x0`` is within ``tol`` of the origin after ``n_steps``."""
    x = np.asarray(x0, dtype=float)
    for _ in range(n_steps):
        x = step_plant(spec.model, x, oracle(qp, x)[: spec.nu])
    return bool(np.linalg.norm(x) < tol)


def make_grid(spec: MpcSpec, n_points: int = GRID_SIZE,
              box: Sequence[Tuple[float, float]] = GRID_BOX, seed: int = GRID_SEED,
              n_steps: int = N_STEPS, tol: float = 1e-3, max_draws: int = 100_000) -> np.ndarray:
    """Scrambled Halton points in ``box`` kept only if the optimal closed loop converges.

    Points are drawn in sequence order and the first ``n_points`` admissible
    ones are returned, so the result is a deterministic function of the
    arguments.
    """
    qp = condense(spec)
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    sampler = qmc.Halton(d=len(box), scramble=True, seed=seed)
    kept, drawn = [], 0
    while len(kept) < n_points and drawn < max_draws:
        batch = qmc.scale(sampler.random(n_points), lo, hi)
        drawn += len(batch)
        for x in batch:
            if converges(spec, qp, x, n_steps, tol):
                kept.append(x)
                if len(kept) == n_points:
                    break
    return np.array(kept)


def load_grid() -> np.ndarray:
    """The shipped 201-point grid (generated by :func:`make_grid` with defaults)."""
    text = resources.files("certmpc.data").joinpath(GRID_FILE).read_text()
    rows = [r for r in csv.reader(line for line in text.splitlines() if not line.startswith("#"))]
    return np.array([[float(v) for v in r] for r in rows[1:]])


def write_grid(path, grid: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {len(grid)} initial conditions; Halton(scramble, seed={GRID_SEED}) "
                 f"over {GRID_BOX}, kept if the optimal loop converges in {N_STEPS} steps\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x0", "x1"])
        for x in grid:
            w.writerow([repr(float(v)) for v in x])
