import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import HealthCheck, settings

from imor.decouple import ComponentwiseNonlinearity, DescriptorSystem

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def _scaled_orthogonal(rng, n, lo=0.5, hi=2.0):
    Q, _ = la.qr(rng.standard_normal((n, n)))
    return Q * rng.uniform(lo, hi, n)


def random_index1_pencil(rng, n, k):
    """``(E, A)`` of tractability index 1 with ``rank E = k``.

    Built as ``E = U diag(I_k, 0) W`` and ``A = U [[A11, A12], [A21, A22]] W``
    with a well-conditioned ``A22`` and a stable ``A11``.
    """
    U, W = _scaled_orthogonal(rng, n), _scaled_orthogonal(rng, n)
    D = np.zeros((n, n))
    D[:k, :k] = np.eye(k)
    Ab = 0.3 * rng.standard_normal((n, n))
    Ab[:k, :k] -= 2.0 * np.eye(k)
    if n > k:
        Ab[k:, k:] = np.eye(n - k) + 0.2 * rng.standard_normal((n - k, n - k))
    return U @ D @ W, U @ Ab @ W


def random_index1_system(rng, n, k, m=2, ell=2, nonlinear=True):
    E, A = random_index1_pencil(rng, n, k)
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((ell, n))
    f = None
    if nonlinear:
        rows = np.arange(min(3, n))
        f = ComponentwiseNonlinearity(n, rows, lambda z: -0.2 * np.tanh(z), lambda z: -0.2 / np.cosh(z) ** 2)
    return DescriptorSystem(E, A, B, C, f)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --------------------------------------------------------------------------
# acceptance report: one line per criterion in the terminal summary

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``record = criterion(k)`` then ``record(ok, detail)``."""
    store = request.config.stash.setdefault(_ACCEPTANCE, {})

    def open_(k):
        store[k] = (False, "did not complete")

        def record(ok, detail):
            store[k] = (bool(ok), detail)
            print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
            return bool(ok)

        return record

    return open_


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE, None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(store):
        ok, detail = store[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
