"""Plant model, MPC design problem and its condensed (input-only) QP.

The MPC problem

    V(x0) = min  |x_N|_P^2 + sum_{k<N} (|x_k|_Q^2 + |u_k|_R^2)
            s.t. x_{k+1} = A x_k + B u_k,  u_lo <= u_k <= u_hi

is condensed by eliminating the predicted states, giving

    J(u; x0) = 1/2 u'Hu + x0'Su + 1/2 x0'Dx0,   u in U (a box).

With this scaling ``V(x0) = 2 J(u*; x0) + x0'Qx0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidSpec,
    NonConvergence,
    NotControllable,
    NotPositiveDefinite,
)

PD_RTOL = 1e-10
RANK_RTOL = 1e-10


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidSpec(f"{name} contains non-finite entries")
    return a


def _as_vector(v, n: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        v = np.full(n, float(v))
    v = v.ravel()
    if v.size != n:
        raise DimensionMismatch(f"{name} must have length {n}, got {v.size}")
    return v


def is_positive_definite(M: np.ndarray, rtol: float = PD_RTOL) -> bool:
    """True if the symmetric part of ``M`` has smallest eigenvalue > rtol*||M||."""
    M = np.asarray(M, dtype=float)
    sym = 0.5 * (M + M.T)
    scale = max(np.linalg.norm(sym, 2), np.finfo(float).tiny)
    return bool(np.linalg.eigvalsh(sym)[0] > rtol * scale)


def _check_spd(M: np.ndarray, name: str, sym_tol: float = 1e-9) -> None:
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got {M.shape}")
    if not np.allclose(M, M.T, rtol=0.0, atol=sym_tol * max(1.0, np.abs(M).max())):
        raise NotPositiveDefinite(f"{name} is not symmetric")
    if not is_positive_definite(M):
        raise NotPositiveDefinite(f"{name} is not positive definite")


@dataclass(frozen=True)
class LtiModel:
    """Discrete-time LTI plant ``x+ = A x + B u``.

    ``Ts`` is carried as metadata only; ``A`` and ``B`` are already discrete.
    Controllability of ``(A, B)`` is checked at construction.
    """

    A: np.ndarray
    B: np.ndarray
    Ts: float = 1.0

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        B = _as_matrix(B, "B")
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionMismatch(
                f"B must have {A.shape[0]} rows to match A, got {B.shape}")
        if not (np.isfinite(self.Ts) and self.Ts > 0):
            raise InvalidSpec("sampling time Ts must be positive")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "Ts", float(self.Ts))
        sv = np.linalg.svd(self.controllability_matrix(), compute_uv=False)
        rank = int(np.sum(sv > RANK_RTOL * sv[0])) if sv[0] > 0 else 0
        if rank < self.nx:
            raise NotControllable(
                f"(A, B) is not controllable: rank {rank} < {self.nx}")

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    def controllability_matrix(self) -> np.ndarray:
        blocks = [self.B]
        for _ in range(self.nx - 1):
            blocks.append(self.A @ blocks[-1])
        return np.hstack(blocks)


def riccati_map(A, B, Q, R, P):
    """One step of the Riccati recursion, ``Q + A'PA - A'PB (R+B'PB)^-1 B'PA``."""
    BtPA = B.T @ P @ A
    return Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)


def dare_residual(model: LtiModel, Q, R, P) -> float:
    """Frobenius norm of ``P - riccati_map(P)``."""
    return float(np.linalg.norm(P - riccati_map(model.A, model.B, Q, R, P)))


def solve_dare(model: LtiModel, Q, R, tol: float = 1e-12,
               max_iter: int = 1_000_000) -> np.ndarray:
    """Solve the discrete algebraic Riccati equation by fixed-point iteration.

    Starting from ``P = Q`` the recursion ``P <- riccati_map(P)`` is applied
    until the residual ``||P - riccati_map(P)||_F`` drops to ``tol``.

    Raises
    ------
    NonConvergence
        If the residual is still above ``tol`` after ``max_iter`` steps.
    NotPositiveDefinite
        If an iterate loses positive definiteness.
    """
    Q = _as_matrix(Q, "Q")
    R = _as_matrix(R, "R")
    if Q.shape != (model.nx, model.nx) or R.shape != (model.nu, model.nu):
        raise DimensionMismatch("Q or R does not match the model dimensions")
    _check_spd(Q, "Q")
    _check_spd(R, "R")
    A, B = model.A, model.B
    P = Q.copy()
    for _ in range(max_iter):
        P_next = riccati_map(A, B, Q, R, P)
        P_next = 0.5 * (P_next + P_next.T)
        res = np.linalg.norm(P_next - P)
        P = P_next
        if not is_positive_definite(P):
            raise NotPositiveDefinite("Riccati iterate lost positive definiteness")
        if res <= tol:
            # residual of the returned matrix, not of the previous iterate
            if dare_residual(model, Q, R, P) <= tol:
                return P
    raise NonConvergence(
        f"DARE residual {dare_residual(model, Q, R, P):.3e} > {tol:.1e} "
        f"after {max_iter} iterations")


@dataclass(frozen=True)
class MpcSpec:
    """Linear-quadratic MPC design with box input constraints.

    When ``P`` is omitted it is computed with :func:`solve_dare`. A supplied
    ``P`` must satisfy the Riccati equation to within ``dare_tol``.
    """

    model: LtiModel
    N: int
    Q: np.ndarray
    R: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    P: Optional[np.ndarray] = None
    dare_tol: float = 1e-8

    def __post_init__(self):
        nx, nu = self.model.nx, self.model.nu
        if int(self.N) != self.N or self.N < 1:
            raise InvalidSpec(f"horizon N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        if Q.shape != (nx, nx):
            raise DimensionMismatch(f"Q must be {nx}x{nx}, got {Q.shape}")
        if R.shape != (nu, nu):
            raise DimensionMismatch(f"R must be {nu}x{nu}, got {R.shape}")
        _check_spd(Q, "Q")
        _check_spd(R, "R")
        lo = _as_vector(self.u_lo, nu, "u_lo")
        hi = _as_vector(self.u_hi, nu, "u_hi")
        if not (np.all(lo < 0) and np.all(hi > 0)):
            raise InvalidSpec("input bounds must contain the origin in their interior")
        if self.P is None:
            P = solve_dare(self.model, Q, R)
        else:
            P = _as_matrix(self.P, "P")
            if P.shape != (nx, nx):
                raise DimensionMismatch(f"P must be {nx}x{nx}, got {P.shape}")
            _check_spd(P, "P")
            res = dare_residual(self.model, Q, R, P)
            if res > self.dare_tol:
                raise InvalidSpec(
                    f"P does not solve the Riccati equation: residual {res:.3e} "
                    f"> dare_tol {self.dare_tol:.1e}")
        for name, val in (("Q", Q), ("R", R), ("P", P), ("u_lo", lo), ("u_hi", hi)):
            object.__setattr__(self, name, _frozen(val))

    @property
    def nx(self) -> int:
        return self.model.nx

    @property
    def nu(self) -> int:
        return self.model.nu

    def stage_cost(self, x, u) -> float:
        return float(x @ self.Q @ x + u @ self.R @ u)


@dataclass(frozen=True)
class CondensedQp:
    """Dense QP in the inputs only, see the module docstring for the scaling."""

    H: np.ndarray
    S: np.ndarray
    D: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    G: np.ndarray
    w: np.ndarray
    q_const: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    N: int
    nx: int
    nu: int
    B: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        """Number of decision variables, ``N * nu``."""
        return self.N * self.nu

    def linear_term(self, x0) -> np.ndarray:
        """``S' x0``, the part of the gradient that depends on the state."""
        x0 = _check_state(self, x0)
        return self.S.T @ x0

    def first_input(self, u) -> np.ndarray:
        """First block ``u_0`` of an input sequence."""
        return np.asarray(u)[: self.nu]

    def project(self, u) -> np.ndarray:
        return np.minimum(np.maximum(u, self.lo), self.hi)


def _check_state(qp: CondensedQp, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != qp.nx:
        raise DimensionMismatch(f"x0 must have length {qp.nx}, got {x0.size}")
    return x0


def _check_input(qp: CondensedQp, u) -> np.ndarray:
    u = np.asarray(u, dtype=float).ravel()
    if u.size != qp.n:
        raise DimensionMismatch(f"u must have length {qp.n}, got {u.size}")
    return u


def prediction_matrices(model: LtiModel, N: int):
    """Return ``(Phi, Psi)`` with stacked predictions ``[x_1..x_N] = Psi x0 + Phi u``."""
    nx, nu = model.nx, model.nu
    A, B = model.A, model.B
    Phi = np.zeros((N * nx, N * nu))
    Psi = np.zeros((N * nx, nx))
    Ak = np.eye(nx)
    AkB = [B]
    for _ in range(N - 1):
        AkB.append(A @ AkB[-1])
    for k in range(1, N + 1):
        Ak = A @ Ak
        Psi[(k - 1) * nx:k * nx] = Ak
        for j in range(k):
            Phi[(k - 1) * nx:k * nx, j * nu:(j + 1) * nu] = AkB[k - 1 - j]
    return Phi, Psi


def condense(spec: MpcSpec) -> CondensedQp:
    """Eliminate the predicted states from the MPC problem."""
    N, nx, nu = spec.N, spec.nx, spec.nu
    Phi, Psi = prediction_matrices(spec.model, N)
    Q_bar = np.kron(np.eye(N), spec.Q)
    Q_bar[-nx:, -nx:] = spec.P
    R_bar = np.kron(np.eye(N), spec.R)
    H = R_bar + Phi.T @ Q_bar @ Phi
    H = 0.5 * (H + H.T)
    S = Psi.T @ Q_bar @ Phi
    D = Psi.T @ Q_bar @ Psi
    D = 0.5 * (D + D.T)
    I = np.eye(N * nu)
    G = np.vstack([I, -I])
    lo = np.tile(spec.u_lo, N)
    hi = np.tile(spec.u_hi, N)
    w = np.concatenate([hi, -lo])
    return CondensedQp(
        H=_frozen(H), S=_frozen(S), D=_frozen(D), Phi=_frozen(Phi),
        Psi=_frozen(Psi), G=_frozen(G), w=_frozen(w), q_const=spec.Q,
        lo=_frozen(lo), hi=_frozen(hi), N=N, nx=nx, nu=nu, B=spec.model.B)


def eval_cost(qp: CondensedQp, u, x0) -> float:
    """``J(u; x0) = 1/2 u'Hu + x0'Su + 1/2 x0'Dx0``."""
    u = _check_input(qp, u)
    x0 = _check_state(qp, x0)
    return float(0.5 * u @ qp.H @ u + x0 @ qp.S @ u + 0.5 * x0 @ qp.D @ x0)


def eval_gradient(qp: CondensedQp, u, x0) -> np.ndarray:
    """Gradient of ``J`` with respect to ``u``: ``Hu + S'x0``."""
    u = _check_input(qp, u)
    x0 = _check_state(qp, x0)
    return qp.H @ u + qp.S.T @ x0


def value_from_solution(qp: CondensedQp, u_star, x0) -> float:
    """Value function in the original (unhalved) scaling for a known minimizer."""
    x0 = _check_state(qp, x0)
    return 2.0 * eval_cost(qp, u_star, x0) + float(x0 @ qp.q_const @ x0)


def eval_value(qp: CondensedQp, x0,
               oracle: Optional[Callable[[CondensedQp, np.ndarray], np.ndarray]] = None
               ) -> float:
    """Optimal value ``V(x0) = 2 J(u*; x0) + x0'Qx0``.

    ``oracle`` maps ``(qp, x0)`` to the minimizer and defaults to
    :func:`certmpc.solvers.oracle_solve`.
    """
    if oracle is None:
        from .solvers import oracle_solve as oracle
    x0 = _check_state(qp, x0)
    return value_from_solution(qp, oracle(qp, x0), x0)
