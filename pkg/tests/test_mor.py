import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given
from hypothesis import strategies as st

from imor.decouple import consistent_initialize
from imor.errors import (
    DimensionError,
    EmptySnapshotsError,
    RankDeficiencyError,
    SingularReducedPencilError,
    ValidationError,
    ZeroReferenceError,
)
from imor.gasnet import GasProperties, assemble_dae, chain_network, structured_decouple
from imor.integrate import TimeGrid, implicit_euler, simulate_decoupled, steady_state
from imor.mor import (
    DeimInterpolant,
    baseline_pod_reduce,
    block_pod_basis,
    build_irom,
    deim_interpolant,
    nonlinear_snapshots,
    percent_reduction,
    pod_basis,
    relative_error,
    supported_deim_size,
)
from imor.signals import InputSignal, step


def rank_k(seed, n, m, k):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, k)) @ rng.standard_normal((k, m))


# --------------------------------------------------------------------------
# POD


def test_pod_equal_snapshots():
    v = np.array([1.0, -2.0, 0.5])
    V = pod_basis(np.tile(v[:, None], 5))
    assert V.shape == (3, 1)
    assert np.allclose(V[:, 0], -v / np.linalg.norm(v))  # sign: largest entry positive


def test_pod_full_rank_reproduces(rng):
    X = rng.standard_normal((8, 5))
    V = pod_basis(X, r=5)
    assert np.abs(V @ (V.T @ X) - X).max() < 1e-12


def test_pod_energy_recovers_rank():
    X = rank_k(7, 30, 20, 3)
    assert pod_basis(X, energy=0.9999).shape[1] == 3


@given(st.integers(0, 10**6), st.integers(2, 12), st.integers(2, 12))
def test_pod_error_tail_identity(seed, n, m):
    X = np.random.default_rng(seed).standard_normal((n, m))
    _, sv = pod_basis(X, r=1, return_singular_values=True)
    prev = np.inf
    for r in range(0, min(n, m) + 1):
        V = pod_basis(X, r=r)
        err = np.linalg.norm(X - V @ (V.T @ X))
        assert err <= prev + 1e-12
        assert err == pytest.approx(np.sqrt(np.sum(sv[r:] ** 2)), rel=1e-8, abs=1e-10)
        prev = err


def test_pod_errors():
    with pytest.raises(EmptySnapshotsError):
        pod_basis(np.zeros((3, 0)))
    with pytest.raises(ValidationError):
        pod_basis(np.eye(3), r=4)
    with pytest.raises(ValidationError):
        pod_basis(np.eye(3), r=1, energy=0.9)
    with pytest.raises(ValidationError):
        pod_basis(np.array([[np.nan]]))


def test_block_pod_structure_and_allocation():
    rng = np.random.default_rng(0)
    X = np.vstack([1e-3 * rank_k(1, 6, 10, 2), 1e6 * rank_k(2, 5, 10, 3)])
    blocks = [np.arange(6), np.arange(6, 11)]
    V = block_pod_basis(X, blocks, r=5)
    assert np.allclose(V.T @ V, np.eye(5))
    # the small block still gets its columns: allocation is by relative singular value
    assert np.count_nonzero(np.abs(V[:6]).sum(axis=0)) == 2
    assert np.count_nonzero(np.abs(V[6:]).sum(axis=0)) == 3
    assert np.all((np.abs(V[:6]).sum(axis=0) == 0) | (np.abs(V[6:]).sum(axis=0) == 0))
    Ve = block_pod_basis(X, blocks, energy=1 - 1e-10)
    assert Ve.shape[1] == 5
    with pytest.raises(ValidationError):
        block_pod_basis(X, [np.arange(6)], r=2)
    with pytest.raises(ValidationError):
        block_pod_basis(X, blocks, r=99)
    del rng


# --------------------------------------------------------------------------
# DEIM


def test_deim_full_selection_is_exact(rng):
    F = rng.standard_normal((6, 10))
    d = deim_interpolant(F, 6)
    f = rng.standard_normal(6)
    assert np.allclose(d.interpolate(f[d.rows]), f)


def test_deim_unit_vector_picks_its_row():
    U = np.zeros((5, 1))
    U[2, 0] = 1.0
    assert DeimInterpolant.from_basis(U).rows.tolist() == [2]


def test_deim_rank_two_in_span():
    F = rank_k(3, 40, 15, 2)
    d = deim_interpolant(F, 2)
    g = F @ np.random.default_rng(4).standard_normal(15)
    assert np.abs(d.interpolate(g[d.rows]) - g).max() <= 1e-12 * np.abs(g).max()
    with pytest.raises(RankDeficiencyError):
        deim_interpolant(F, 3)
    assert supported_deim_size(F) == 2


@given(st.integers(0, 10**6), st.integers(3, 30), st.data())
def test_deim_exact_in_span(seed, n, data):
    m = data.draw(st.integers(1, min(n, 6)))
    rng = np.random.default_rng(seed)
    U, _ = la.qr(rng.standard_normal((n, m)), mode="economic")
    d = DeimInterpolant.from_basis(U)
    assert len(set(d.rows.tolist())) == m
    g = U @ rng.standard_normal(m)
    assert np.allclose(d.interpolate(g[d.rows]), g, atol=1e-9 * max(1, np.abs(g).max()))


# --------------------------------------------------------------------------
# reduced models on a gas chain


@pytest.fixture(scope="module")
def chain_run():
    net = chain_network(20, length=3630.0 / 20, diameter=1.422, roughness=1e-6, gas=GasProperties(Rs=1530.0))
    dae = assemble_dae(net)
    dec = structured_decouple(dae)
    u = InputSignal.of(50e5, step(2000.0, 100.0, 150.0))
    x = steady_state(dae, u(0), dae.initial_guess([50e5], [100.0]))
    xp, _, _ = consistent_initialize(dec, x, u(0))
    grid = TimeGrid(0, 10000, 100)
    tr = simulate_decoupled(dec, u, grid, xp)
    return dict(dae=dae, dec=dec, u=u, x=x, xp=xp, grid=grid, tr=tr)


def test_irom_sizes(chain_run):
    dec, tr = chain_run["dec"], chain_run["tr"]
    Vp = pod_basis(tr.states.T, r=2)
    Vq = pod_basis(tr.algebraic_states.T, r=4)
    rom = build_irom(dec, Vp, Vq)
    assert (rom.r_p, rom.r_q, rom.r) == (2, 4, 6)
    assert rom.n_full == dec.n


def test_irom_full_basis_reproduces_parent(chain_run):
    dec, tr = chain_run["dec"], chain_run["tr"]
    m = dec.nonlinearity.active_rows.size
    rom = build_irom(dec, np.eye(dec.n_p), np.eye(dec.n_q), DeimInterpolant.from_basis(np.eye(m)))
    out = simulate_decoupled(rom, chain_run["u"], chain_run["grid"], chain_run["xp"])
    assert np.abs(out.outputs - tr.outputs).max() <= 1e-10 * np.abs(tr.outputs).max()


def test_irom_algebraic_block_nonsingular_for_random_bases(chain_run, rng):
    dec, tr = chain_run["dec"], chain_run["tr"]
    Vp = pod_basis(tr.states.T, r=3)
    for _ in range(20):
        Vq, _ = la.qr(rng.standard_normal((dec.n_q, 4)), mode="economic")
        rom = build_irom(dec, Vp, Vq)
        assert np.linalg.cond(rom.E_qr) < 1e12


def test_irom_dimension_checks(chain_run):
    dec = chain_run["dec"]
    with pytest.raises(DimensionError):
        build_irom(dec, np.eye(dec.n_p + 1)[:, :2], np.eye(dec.n_q)[:, :2])
    with pytest.raises(ValidationError):
        build_irom(dec, np.ones((dec.n_p, 2)), np.eye(dec.n_q)[:, :2])
    with pytest.raises(DimensionError):
        build_irom(dec, np.eye(dec.n_p)[:, :2], np.eye(dec.n_q)[:, :2], DeimInterpolant.from_basis(np.eye(3)))


def test_deim_online_cost_independent_of_n():
    per_step = {}
    for N in (30, 120):
        net = chain_network(N, length=3630.0 / N, diameter=1.422, roughness=1e-6, gas=GasProperties(Rs=1530.0))
        dae = assemble_dae(net)
        dec = structured_decouple(dae)
        u = InputSignal.of(50e5, step(2000.0, 100.0, 150.0))
        x = steady_state(dae, u(0), dae.initial_guess([50e5], [100.0]))
        xp, _, _ = consistent_initialize(dec, x, u(0))
        grid = TimeGrid(0, 5000, 250)
        tr = simulate_decoupled(dec, u, grid, xp)
        F = nonlinear_snapshots(dec.nonlinearity, dec.transport @ tr.states.T)
        Vp = block_pod_basis(tr.states.T, dec.blocks_p.values(), r=4)
        Vq = block_pod_basis(tr.algebraic_states.T, dec.blocks_q.values(), r=4)
        rom = build_irom(dec, Vp, Vq, deim_interpolant(F, 3))
        f = dec.nonlinearity
        f.evaluations = 0
        out = simulate_decoupled(rom, u, grid, Vp.T @ xp)
        evals = out.newton_iterations.sum() + out.newton_iterations.size  # residuals per step
        per_step[N] = f.evaluations / evals
    assert per_step[30] == per_step[120] == 3


def test_baseline_identity_reduction(chain_run):
    dae, u, grid, x = chain_run["dae"], chain_run["u"], chain_run["grid"], chain_run["x"]
    g = baseline_pod_reduce(dae, np.eye(dae.n))
    full = implicit_euler(dae, u, grid, x).outputs
    red = implicit_euler(g, u, grid, x).outputs
    # equal up to the Newton stopping tolerance
    assert np.abs(full - red).max() <= 1e-8 * np.abs(full).max()


def _pencil_regular(M, A, rng):
    # oracle: det(lam M - A) at random complex lam, relative to the scale
    for _ in range(3):
        lam = rng.standard_normal() + 1j * rng.standard_normal()
        s = np.linalg.svd(lam * M - A, compute_uv=False)
        if s[-1] > 1e-12 * s[0]:
            return True
    return False


def test_dae_pod_regularity_flag(chain_run, rng):
    dae = chain_run["dae"]
    E, A = dae.E.toarray(), dae.A.toarray()
    Q, _ = la.qr(rng.standard_normal((dae.n, 2)), mode="economic")
    assert _pencil_regular(Q.T @ E @ Q, Q.T @ A @ Q, rng)
    baseline_pod_reduce(dae, Q)
    # two pressure coordinates of demand/interior nodes: both projected blocks vanish
    b = dae.blocks["p_d"][:2]
    V = np.eye(dae.n)[:, b]
    assert not _pencil_regular(V.T @ E @ V, V.T @ A @ V, rng)
    with pytest.raises(SingularReducedPencilError):
        baseline_pod_reduce(dae, V)


# --------------------------------------------------------------------------
# errors


def test_relative_error_basics():
    y = np.array([[1.0, 0.0]])
    assert relative_error(y, y)["output_error"] == 0.0
    assert relative_error(y, np.array([[0.0, 1.0]]))["output_error"] == pytest.approx(np.sqrt(2))
    groups = {"a": [0], "b": [1]}
    Y = np.array([[1.0, 2.0], [1.0, 2.0]])
    e = relative_error(Y, Y * [1.1, 1.0], groups)
    assert e["a"] == pytest.approx(0.1) and e["b"] == 0.0 and e["output_error"] == pytest.approx(0.1)
    with pytest.raises(ZeroReferenceError):
        relative_error(np.zeros((2, 1)), np.ones((2, 1)))
    z = relative_error(np.zeros((2, 1)), np.ones((2, 1)), zero_reference="absolute")
    assert z["output_error"] == pytest.approx(np.sqrt(2)) and z["absolute"] == ["all"]
    with pytest.raises(DimensionError):
        relative_error(np.zeros((2, 1)), np.zeros((3, 1)))


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=10), st.floats(0.01, 10))
def test_relative_error_scale_invariant(v, c):
    y = np.array(v)[:, None] + 1.0
    if np.linalg.norm(y) == 0:
        return
    yr = y + 0.1
    assert relative_error(c * y, c * yr)["output_error"] == pytest.approx(relative_error(y, yr)["output_error"])


def test_percent_reduction():
    assert round(percent_reduction(6, 15001), 2) == 99.96
    assert percent_reduction(0, 10) == 100.0
