"""
Building the condensed MPC problem
==================================

A double integrator (position, velocity) with a unit sampling time is
controlled over a horizon of N = 10 steps. The terminal weight P comes from
the discrete algebraic Riccati equation, and the states are eliminated so
that the inputs are the only decision variables.
"""
# %%
import numpy as np

from certmpc import LtiModel, MpcSpec, condense, eval_cost, solve_dare

A = np.array([[1.0, 1.0], [0.0, 1.0]])
B = np.array([[0.5], [1.0]])
model = LtiModel(A, B, Ts=1.0)

# %%
# The Riccati solution is found by iterating the Riccati map from P = Q.
P = solve_dare(model, Q=np.eye(2), R=np.eye(1))
print("P =\n", P.round(4))

# %%
# With P omitted, MpcSpec computes it itself.
spec = MpcSpec(model, N=10, Q=np.eye(2), R=np.eye(1), u_lo=-1.0, u_hi=1.0)
qp = condense(spec)
print("H is", qp.H.shape, "with eigenvalues in",
      np.linalg.eigvalsh(qp.H)[[0, -1]].round(4))

# %%
# The QP objective reproduces the rolled-out cost: 2 J(u; x0) + x0'Q x0.
rng = np.random.default_rng(0)
u = rng.uniform(-1, 1, qp.n)
x0 = np.array([-6.0, 2.0])
x, cost = x0.copy(), 0.0
for k in range(spec.N):
    cost += x @ x + u[k] ** 2
    x = A @ x + B[:, 0] * u[k]
cost += x @ P @ x
print("rolled out:", cost, " condensed:", 2 * eval_cost(qp, u, x0) + x0 @ x0)
