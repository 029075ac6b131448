"""Offline certification of a fixed iteration count for first-order MPC.

A linearly convergent solver with factor ``kappa`` run for ``m`` iterations
from a start with ``||u0|| <= gamma ||x0||_Q`` perturbs the closed-loop value
by at most

    2 eta1_bar gamma kappa^m ||x0||_Q + 2 eta2_bar gamma^2 kappa^(2m) ||x0||_Q^2.

The certified count ``m_bar`` is the smallest integer with

    beta = (2 eta1_bar gamma + 2 eta2_bar gamma^2) kappa^m_bar < 1,

which keeps the closed-loop value function decreasing.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .errors import (
    CertificationFailure,
    DimensionMismatch,
    EmptySampleSet,
    InvalidSpec,
    KappaNotContractive,
    SingularSystem,
)
from .model import CondensedQp, LtiModel, value_from_solution
from .solvers import hessian_extremes, oracle_solve

# values stated for the double-integrator benchmark, kept for side-by-side reporting
REPORTED_BENCHMARK = {
    "PGDM": {"kappa": 0.9992, "m_bar": 172, "mu": 2.0, "L": 3200.0,
             "eta1": 0.4, "eta2": 0.1, "gamma": 1.0},
    "ADMM": {"kappa": 0.9980, "m_bar": 14, "rho": 3.1231,
             "eta1": 0.2, "eta2": 0.3, "gamma": 1.0},
}


def kappa_pgdm(qp: CondensedQp, mu: Optional[float] = None, L: Optional[float] = None):
    """Return ``(mu, L, kappa)`` with ``kappa = 1 - mu / L``.

    ``mu`` and ``L`` default to the extreme eigenvalues of ``H``.
    """
    lam_min, lam_max = hessian_extremes(qp)
    mu = lam_min if mu is None else float(mu)
    L = lam_max if L is None else float(L)
    if not (mu > 0 and L >= mu):
        raise InvalidSpec(f"need 0 < mu <= L, got mu={mu}, L={L}")
    return mu, L, 1.0 - mu / L


def admm_iteration_matrix(qp: CondensedQp, rho: float) -> np.ndarray:
    """``M = G~ - G~ (I + G~)^-1 G~`` with ``G~ = rho G H^-1 G'``."""
    if not rho > 0:
        raise InvalidSpec(f"rho must be positive, got {rho}")
    Gt = rho * qp.G @ np.linalg.solve(qp.H, qp.G.T)
    I = np.eye(Gt.shape[0])
    try:
        return Gt - Gt @ np.linalg.solve(I + Gt, Gt)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"I + G~ is singular: {exc}") from exc


def kappa_admm(qp: CondensedQp, rho: float) -> float:
    """``kappa = 1/2 ||2M - I||_2`` (spectral norm via SVD).

    Note that for box constraints ``G = [I; -I]`` the matrix ``G~`` has an
    ``N*nu``-dimensional null space, on which ``2M - I = -I``; the formula
    therefore evaluates to exactly 1/2 for every ``rho``.
    """
    M = admm_iteration_matrix(qp, rho)
    return 0.5 * float(np.linalg.norm(2.0 * M - np.eye(M.shape[0]), 2))


def first_block_selector(nu: int, N: int) -> np.ndarray:
    """``Gamma = [I 0 ... 0]``, picks ``u_0`` out of the stacked sequence."""
    Gamma = np.zeros((nu, N * nu))
    Gamma[:, :nu] = np.eye(nu)
    return Gamma


def eta_bars(eta1: float, eta2: float, model: LtiModel, N: int):
    """Scale the value-function Lipschitz constants to the input channel.

    Returns ``(eta1 * sqrt(nu), eta2 / 2 * nu)`` with ``nu`` the largest
    eigenvalue of ``Gamma' B' B Gamma``.
    """
    if eta1 < 0 or not eta2 > 0:
        raise InvalidSpec(f"need eta1 >= 0 and eta2 > 0, got {eta1}, {eta2}")
    BG = model.B @ first_block_selector(model.nu, N)
    nu_max = float(np.linalg.eigvalsh(BG.T @ BG)[-1])
    return eta1 * math.sqrt(nu_max), 0.5 * eta2 * nu_max


@dataclass
class GammaEstimate:
    gamma: float
    ratio_max: float
    argmax: np.ndarray
    safety: float
    n_samples: int


def q_norm(x, Q) -> float:
    return math.sqrt(float(x @ Q @ x))


def estimate_gamma(qp: CondensedQp, sample_set: Sequence, oracle: Callable = oracle_solve,
                   safety: float = 1.1) -> GammaEstimate:
    """Sampled bound ``||u*(x0)|| <= gamma ||x0||_Q``, inflated by ``safety``."""
    samples = [np.asarray(x, dtype=float).ravel() for x in sample_set]
    if not samples:
        raise EmptySampleSet("gamma estimation needs at least one sample")
    best, arg = -1.0, None
    for x in samples:
        qn = q_norm(x, qp.q_const)
        if qn == 0.0:
            raise InvalidSpec("x0 = 0 cannot be used to estimate gamma")
        r = float(np.linalg.norm(oracle(qp, x))) / qn
        if r > best:
            best, arg = r, x
    return GammaEstimate(gamma=safety * best, ratio_max=best, argmax=arg,
                         safety=safety, n_samples=len(samples))


@dataclass
class EtaEstimate:
    """Smallest ``eta2`` consistent with a given ``eta1`` over sampled state pairs."""

    eta1: float
    eta2: float
    n_pairs: int
    worst_pair: tuple


def estimate_eta(qp: CondensedQp, pairs: Sequence, eta1: float,
                 oracle: Callable = oracle_solve) -> EtaEstimate:
    """Fit ``|V(a) - V(b)| <= eta1 d + eta2/2 d^2``, ``d = ||a - b||``, over ``pairs``.

    For fixed ``eta1`` the least ``eta2`` that is not violated by any pair is
    ``max 2 (|dV| - eta1 d) / d^2``. This is a sampled lower estimate, not a
    guarantee.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptySampleSet("eta estimation needs at least one state pair")
    cache: Dict[bytes, float] = {}

    def V(x):
        key = x.tobytes()
        if key not in cache:
            cache[key] = value_from_solution(qp, oracle(qp, x), x)
        return cache[key]

    eta2, worst = 0.0, None
    for a, b in pairs:
        a = np.asarray(a, dtype=float).ravel()
        b = np.asarray(b, dtype=float).ravel()
        d = float(np.linalg.norm(a - b))
        if d == 0.0:
            continue
        need = 2.0 * (abs(V(a) - V(b)) - eta1 * d) / d ** 2
        if need > eta2:
            eta2, worst = need, (a, b)
    return EtaEstimate(eta1=eta1, eta2=eta2, n_pairs=len(pairs), worst_pair=worst)


def _check_kappa(kappa: float) -> None:
    if not kappa < 1.0:
        raise KappaNotContractive(f"convergence factor {kappa} is not below 1")
    if kappa < 0.0:
        raise InvalidSpec(f"convergence factor must be non-negative, got {kappa}")


def _integer_above(threshold: float) -> int:
    # smallest positive integer strictly greater than threshold
    return max(1, math.floor(threshold) + 1)


def compute_m_bar(kappa: float, eta1_bar: float, eta2_bar: float, gamma: float):
    """Certified iteration count and the resulting ``beta``.

    Returns ``(m_bar, beta)`` where ``m_bar`` is the smallest positive integer
    with ``m_bar > log(E) / log(1/kappa)``, ``E = 2 eta1_bar gamma + 2 eta2_bar
    gamma^2``, and ``beta = E kappa^m_bar < 1``.
    """
    _check_kappa(kappa)
    if not gamma > 0 or not eta2_bar > 0 or eta1_bar < 0:
        raise InvalidSpec("need gamma > 0, eta2_bar > 0, eta1_bar >= 0")
    E = 2.0 * eta1_bar * gamma + 2.0 * eta2_bar * gamma ** 2
    if kappa == 0.0:
        return 1, 0.0
    m = _integer_above(math.log(E) / math.log(1.0 / kappa))
    # guard against the floor landing on a rounding boundary
    while E * kappa ** m >= 1.0:
        m += 1
    beta = E * kappa ** m
    assert beta < 1.0
    return m, beta


def compute_m_bar_quadratic(kappa: float, eta2_bar: float, gamma: float) -> int:
    """Iteration bound for states with ``||x0||_Q <= 1``, where only the quadratic term matters.

    ``m > log(2 eta2_bar gamma^2) / (2 log(1/kappa))``. Never exceeds
    :func:`compute_m_bar` for the same ``kappa``, ``eta2_bar`` and ``gamma``.
    """
    _check_kappa(kappa)
    if not gamma > 0 or not eta2_bar > 0:
        raise InvalidSpec("need gamma > 0 and eta2_bar > 0")
    if kappa == 0.0:
        return 1
    return _integer_above(math.log(2.0 * eta2_bar * gamma ** 2) / (2.0 * math.log(1.0 / kappa)))


@dataclass
class BallCheckReport:
    """Outcome of sampling the unit Q-ellipsoid for active input constraints."""

    passed: bool
    worst_margin: float
    worst_x0: np.ndarray
    n_samples: int
    exhaustive: bool = False


def check_assumption_ball(qp: CondensedQp, oracle: Callable = oracle_solve,
                          n_samples: int = 256, rng=None,
                          margin_tol: float = 1e-9) -> BallCheckReport:
    """Sample ``||x0||_Q = 1`` and check no input constraint is active at ``u*``.

    This is a necessary, sampling-based check that the unit Q-ellipsoid lies
    inside the region where the MPC law is unconstrained; it cannot prove it.
    Since the unconstrained region is convex and contains the origin,
    checking the boundary of the ellipsoid is enough for the samples taken.
    """
    if n_samples < 1:
        raise EmptySampleSet("n_samples must be positive")
    rng = np.random.default_rng(rng)
    # x = L^-T z with Q = L L' maps the unit sphere onto ||x||_Q = 1
    Lq = np.linalg.cholesky(qp.q_const)
    worst, worst_x = math.inf, None
    for _ in range(n_samples):
        z = rng.standard_normal(qp.nx)
        z /= np.linalg.norm(z)
        x = np.linalg.solve(Lq.T, z)
        u = oracle(qp, x)
        margin = float(min((u - qp.lo).min(), (qp.hi - u).min()))
        if margin < worst:
            worst, worst_x = margin, x
    return BallCheckReport(passed=worst > margin_tol, worst_margin=worst,
                           worst_x0=worst_x, n_samples=n_samples)


@dataclass
class Certificate:
    """All quantities behind a certified iteration count for one solver."""

    method: str
    kappa: float
    eta1: float
    eta2: float
    eta1_bar: float
    eta2_bar: float
    gamma: float
    E: float
    threshold: float
    m_bar: int
    beta: float
    m_bar_formula: int
    beta_formula: float
    m_bar_quadratic: int
    mu: Optional[float] = None
    L: Optional[float] = None
    alpha: Optional[float] = None
    rho: Optional[float] = None
    kappa_formula: Optional[float] = None
    overrides: Dict[str, float] = field(default_factory=dict)
    computed: Dict[str, float] = field(default_factory=dict)
    reported: Dict[str, float] = field(default_factory=dict)

    def bound(self, iterations: int, x_qnorm: float) -> float:
        """Upper bound on ``|V(x+) - V(x1)|`` after ``iterations`` solver steps."""
        km = self.kappa ** iterations
        return (2.0 * self.eta1_bar * self.gamma * km * x_qnorm
                + 2.0 * self.eta2_bar * self.gamma ** 2 * km * km * x_qnorm ** 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (float(v) if isinstance(v, np.floating) else v) for k, v in d.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def discrepancies(self) -> Dict[str, dict]:
        """Computed-versus-reported values for keys present in ``reported``.

        ``computed`` comes from the problem data alone; ``used`` is added when
        an override made the certificate use a different value.
        """
        out = {}
        for key, value in self.reported.items():
            mine = self.computed.get(key, getattr(self, key, None))
            if mine is not None and isinstance(mine, (int, float)):
                out[key] = {"reported": value, "computed": mine,
                            "differs": not math.isclose(mine, value, rel_tol=1e-4)}
                used = getattr(self, key, None)
                if isinstance(used, (int, float)) and used != mine:
                    out[key]["used"] = used
        return out


def certify(qp: CondensedQp, model: LtiModel, method: str, *, eta1: float, eta2: float,
            gamma: float, mu: Optional[float] = None, L: Optional[float] = None,
            alpha: Optional[float] = None, rho: Optional[float] = None,
            kappa: Optional[float] = None, m_bar_override: Optional[int] = None,
            reported: Optional[Dict[str, float]] = None) -> Certificate:
    """Build the certificate for ``method`` in ``{"PGDM", "ADMM"}``.

    ``kappa`` overrides the convergence factor given by the method's formula
    (both are reported); ``m_bar_override`` replaces the certified count, in
    which case ``beta`` is recomputed for the override and may be >= 1
    (reported, not raised).
    """
    method = method.upper()
    overrides: Dict[str, float] = {}
    computed: Dict[str, float] = {}
    if method == "PGDM":
        mu_c, L_c, k_c = kappa_pgdm(qp)
        computed.update(mu=mu_c, L=L_c, kappa=k_c)
        mu_u, L_u, k_formula = kappa_pgdm(qp, mu, L)
        if mu is not None:
            overrides["mu"] = mu_u
        if L is not None:
            overrides["L"] = L_u
        if alpha is None:
            alpha = 1.0 / L_c
        else:
            overrides["alpha"] = alpha
        rho = None
    elif method == "ADMM":
        if rho is None:
            raise InvalidSpec("ADMM certification requires rho")
        k_formula = kappa_admm(qp, rho)
        computed["kappa"] = k_formula
        mu_u = L_u = None
        alpha = None
    else:
        raise InvalidSpec(f"unknown method {method!r}")
    k = k_formula
    if kappa is not None:
        overrides["kappa"] = kappa
        k = float(kappa)
    e1b, e2b = eta_bars(eta1, eta2, model, qp.N)
    E = 2.0 * e1b * gamma + 2.0 * e2b * gamma ** 2
    m_f, beta_f = compute_m_bar(k, e1b, e2b, gamma)
    m_q = compute_m_bar_quadratic(k, e2b, gamma)
    if m_q > m_f:
        raise CertificationFailure("quadratic-regime bound exceeds the certified count")
    threshold = math.log(E) / math.log(1.0 / k) if k > 0 else -math.inf
    computed.update(m_bar=m_f, beta=beta_f)
    m, beta = m_f, beta_f
    if m_bar_override is not None:
        if int(m_bar_override) != m_bar_override or m_bar_override < 1:
            raise InvalidSpec(f"m_bar_override must be a positive integer, got {m_bar_override}")
        m = int(m_bar_override)
        beta = E * k ** m
        overrides["m_bar"] = m
    return Certificate(
        method=method, kappa=k, eta1=eta1, eta2=eta2, eta1_bar=e1b, eta2_bar=e2b,
        gamma=gamma, E=E, threshold=threshold, m_bar=m, beta=beta,
        m_bar_formula=m_f, beta_formula=beta_f, m_bar_quadratic=m_q,
        mu=mu_u, L=L_u, alpha=alpha, rho=rho, kappa_formula=k_formula,
        overrides=overrides, computed=computed, reported=dict(reported or {}))
