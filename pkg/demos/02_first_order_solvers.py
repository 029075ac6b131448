"""
Projected gradient and ADMM on the box-constrained QP
=====================================================

Both solvers start from zero. PGDM takes steps of length 1/L followed by a
clip; ADMM alternates a linear solve with (H + rho I), a clip and a dual
update. The exact minimizer comes from an active-set oracle.
"""
# %%
import numpy as np

from certmpc import StopPolicy, admm_solve, oracle_solve, pgdm_solve
from certmpc.benchmark import double_integrator
from certmpc.certify import kappa_pgdm
from certmpc.model import condense

qp = condense(double_integrator())
x0 = np.array([-6.0, 2.0])
u_star = oracle_solve(qp, x0)
print("first optimal input:", u_star[0])

# %%
for eps in (1e-3, 1e-6, 1e-9):
    p = pgdm_solve(qp, x0, policy=StopPolicy.tolerance(eps))
    a = admm_solve(qp, x0, policy=StopPolicy.tolerance(eps), rho=3.1231)
    print(f"eps={eps:g}: PGDM {p.iterations:6d} it, err {np.linalg.norm(p.u_final - u_star):.1e};"
          f"  ADMM {a.iterations:6d} it, err {np.linalg.norm(a.u_final - u_star):.1e}")

# %%
# PGDM contracts towards u* by at least kappa = 1 - mu/L every iteration.
mu, L, kappa = kappa_pgdm(qp)
run = pgdm_solve(qp, x0, policy=StopPolicy.fixed(2000), trace=True, reference=u_star)
d = np.array([r.distance for r in run.trace])
print(f"kappa = {kappa:.6f}, worst observed ratio = {np.max(d[1:] / d[:-1]):.6f}")

# %%
# A fixed iteration budget gives a feasible but suboptimal sequence.
for m in (14, 172, 1000):
    u = pgdm_solve(qp, x0, policy=StopPolicy.fixed(m)).u_final
    print(f"PGDM after {m:4d} iterations: |u - u*| = {np.linalg.norm(u - u_star):.3f}")
