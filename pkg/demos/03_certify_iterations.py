"""
Certified iteration counts
==========================

The certificate turns a convergence factor kappa and the Lipschitz-type
constants of the value function into an iteration count m_bar for which the
closed loop keeps a Lyapunov decrease. Reported benchmark values are carried
along and compared with what the formulas give.
"""
# %%
from certmpc.benchmark import double_integrator, load_grid
from certmpc.certify import (REPORTED_BENCHMARK, certify, check_assumption_ball,
                             estimate_gamma, kappa_admm)
from certmpc.model import condense

spec = double_integrator()
qp = condense(spec)

# %%
pg = certify(qp, spec.model, "PGDM", eta1=0.4, eta2=0.1, gamma=1.0, mu=2, L=3200,
             reported=REPORTED_BENCHMARK["PGDM"])
print(f"PGDM: kappa {pg.kappa:.6f}, E {pg.E:.4f}, m_bar {pg.m_bar}, beta {pg.beta:.4f}")
for key, row in pg.discrepancies().items():
    print(f"  {key:6s} reported {row['reported']!s:8s} computed {row['computed']:.6g}")

# %%
# For a box written as G = [I; -I] the ADMM factor is 1/2 for every rho, so
# the certificate accepts a kappa override.
print("kappa_ADMM:", [round(kappa_admm(qp, r), 6) for r in (0.1, 3.1231, 100.0)])
ad = certify(qp, spec.model, "ADMM", eta1=0.2, eta2=0.3, gamma=1.0, rho=3.1231,
             kappa=0.998, m_bar_override=14, reported=REPORTED_BENCHMARK["ADMM"])
print(f"ADMM: formula m_bar {ad.m_bar_formula}, used {ad.m_bar}, beta {ad.beta:.4f}")

# %%
# gamma bounds |u*| by gamma |x0|_Q; a sampled estimate over the grid:
est = estimate_gamma(qp, load_grid())
print(f"gamma estimate {est.gamma:.3f} (max ratio {est.ratio_max:.3f} at {est.argmax.round(3)})")

# %%
# Sampling check that the unit Q-ball stays in the unconstrained region.
rep = check_assumption_ball(qp, n_samples=256, rng=0)
print("unit ball check:", "pass" if rep.passed else "fail",
      f"(worst margin {rep.worst_margin:.3f})")
