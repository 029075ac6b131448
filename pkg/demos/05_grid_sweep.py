"""
Statistics over many initial conditions
=======================================

The shipped grid holds 201 states from a scrambled Halton sequence on
[-10, 10]^2, kept when the optimal closed loop reaches |x| < 1e-3 in 40
steps. Pass ``--full`` to use all of them (about half a minute).
"""
# %%
import sys

from certmpc.benchmark import load_grid
from certmpc.config import builtin_config_text, parse_config
from certmpc.model import condense
from certmpc.simulate import iteration_reduction, sweep_initial_conditions

cfg = parse_config(builtin_config_text())
qp = condense(cfg.spec)
grid = load_grid() if "--full" in sys.argv else load_grid()[::10]
res = sweep_initial_conditions(cfg.spec, qp, cfg.controllers(cfg.certificates(qp)), grid, 40)

# %%
print(f"{len(grid)} initial conditions")
print(f"{'':12s} {'m_avg':>8s} {'m_max':>6s} {'d_avg%':>8s} {'d_max%':>8s}")
for r in res.rows:
    print(f"{r.label:12s} {r.m_avg:8.1f} {r.m_max:6d} {r.delta_avg:8.3f} {r.delta_max:8.3f}")
for name in ("ADMM", "PGDM"):
    print(f"{name} iteration reduction: "
          f"{iteration_reduction(res.row(name), res.row(name + '(m_bar)')):.1f}%")
