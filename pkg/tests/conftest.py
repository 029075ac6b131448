import numpy as np
import pytest

from certmpc.benchmark import double_integrator
from certmpc.model import LtiModel, MpcSpec, condense


@pytest.fixture(scope="session")
def di_spec():
    return double_integrator()


@pytest.fixture(scope="session")
def di_qp(di_spec):
    return condense(di_spec)


def random_spec(rng, nx=None, nu=None, N=None, bound=1.0):
    """Random controllable system with SPD weights and a symmetric input box."""
    nx = nx or int(rng.integers(1, 4))
    nu = nu or int(rng.integers(1, 3))
    N = N or int(rng.integers(1, 6))
    while True:
        A = rng.normal(size=(nx, nx))
        A *= rng.uniform(0.5, 1.1) / np.abs(np.linalg.eigvals(A)).max()
        B = rng.normal(size=(nx, nu))
        try:
            model = LtiModel(A, B)
        except ValueError:
            continue
        # keep the Riccati fixed-point iteration fast
        sv = np.linalg.svd(model.controllability_matrix(), compute_uv=False)
        if sv[-1] > 0.1 * sv[0]:
            break
    Mq = rng.normal(size=(nx, nx))
    Mr = rng.normal(size=(nu, nu))
    Q = Mq @ Mq.T + 0.5 * np.eye(nx)
    R = Mr @ Mr.T + 0.5 * np.eye(nu)
    return MpcSpec(model, N, Q, R, u_lo=-bound * np.ones(nu), u_hi=bound * np.ones(nu))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
