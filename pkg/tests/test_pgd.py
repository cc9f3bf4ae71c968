import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from ddpgd import benchmarks as B
from ddpgd import fem as F
from ddpgd import mesh as M
from ddpgd import pgd as P


def small_grid(*sizes):
    return P.ParametricGrid(tuple(P.GridDim(f"p{k}", 1.0, 2.0 + k, n) for k, n in enumerate(sizes)))


def random_tensor(rng, n, sizes, rank):
    g = small_grid(*sizes)
    return P.SeparatedTensor(rng.standard_normal((n, rank)),
                             tuple(rng.standard_normal((rank, m)) for m in sizes), g)


# ---------------------------------------------------------------- grids

def test_grid_from_spacing_and_locate():
    d = P.GridDim.from_spacing("mu", 1.0, 50.0, 1e-3)
    assert d.n == 49001
    g = P.ParametricGrid((d,))
    (i, j, t), = g.locate([3.0])
    assert i == 2000 and t == 0.0
    (i, j, t), = g.locate([3.0005])
    assert (i, j) == (2000, 2001) and t == pytest.approx(0.5)
    with pytest.raises(P.OutOfRangeError):
        g.locate([50.5])
    with pytest.raises(P.ShapeError):
        g.locate([1.0, 2.0])


def test_grid_round_trip_and_concatenation():
    g = small_grid(3, 4)
    assert P.ParametricGrid.from_dict(g.to_dict()) == g
    assert (g + small_grid(5)).sizes == (3, 4, 5)
    np.testing.assert_allclose(g.weights(1), 0.25)


def test_rank_zero_tensor():
    g = small_grid(3, 2)
    z = P.SeparatedTensor.zeros(7, g)
    assert z.rank == 0
    np.testing.assert_array_equal(z.evaluate([1.5, 2.0]), 0.0)
    assert P.compress(z) is z


def test_shape_validation():
    g = small_grid(3)
    with pytest.raises(P.ShapeError):
        P.SeparatedTensor(np.zeros((4, 2)), (np.zeros((2, 4)),), g)
    with pytest.raises(P.ShapeError):
        P.SeparatedTensor(np.zeros((4, 2)), (), g)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.floats(-3, 3), st.floats(-3, 3))
def test_evaluate_exact_on_grid_and_linear(seed, rank, a, b):
    rng = np.random.default_rng(seed)
    s = random_tensor(rng, 5, (4, 3), rank)
    t = random_tensor(rng, 5, (4, 3), rank)
    i, j = rng.integers(4), rng.integers(3)
    mu = (s.grid.points(0)[i], s.grid.points(1)[j])
    np.testing.assert_allclose(s.evaluate(mu), s.dense()[:, i, j], rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(s.evaluate(mu), s.evaluate_index((i, j)), rtol=1e-13, atol=1e-13)
    x = (rng.uniform(1.0, 2.0), rng.uniform(1.0, 3.0))
    lin = P.add(P.scale(s, a), P.scale(t, b))
    np.testing.assert_allclose(lin.evaluate(x), a * s.evaluate(x) + b * t.evaluate(x), rtol=1e-11, atol=1e-11)


def test_off_grid_is_linear_interpolation():
    g = P.ParametricGrid((P.GridDim("mu", 0.0, 1.0, 3),))
    t = P.SeparatedTensor(np.array([[1.0]]), (np.array([[0.0, 4.0, 2.0]]),), g)
    assert t.evaluate([0.25])[0] == pytest.approx(2.0)
    assert t.evaluate([0.75])[0] == pytest.approx(3.0)


def test_norm_matches_dense():
    rng = np.random.default_rng(3)
    t = random_tensor(rng, 6, (3, 5), 3)
    d = t.dense()
    assert P.norm(t) ** 2 == pytest.approx(np.sum(d**2) / 15)


# ---------------------------------------------------------------- greedy solver

def _laplace_problem(n=6):
    c = np.linspace(0, 1, n + 1)
    m = M.build_rect_mesh((0, 1), (0, 1), c, c)
    d = m.nodes_with_tag(M.DIRICHLET)
    K, Bc = F.split(F.diffusion_matrix(m), d)
    free = F.free_dofs(m.n_nodes, d)
    return m, K, Bc, free, d


def test_rank_one_problem_detected_by_first_mode():
    m, K, Bc, free, d = _laplace_problem()
    g = P.ParametricGrid((P.GridDim("mu", 1.0, 10.0, 46),))
    mu = g.points(0)
    op = F.AffineOperator(m.n_nodes, free, d, g, (F.AffineTerm(K, Bc, (mu,)),))
    f = F.load_vector(m, 1.0)[free]
    t, rep = P.greedy_solve(op, F.SeparatedLoad(len(free), g, ((f, (None,)),)), 1e-4)
    assert rep.amplitudes[1] <= 1e-4 * rep.amplitudes[0]
    first = P.SeparatedTensor(t.spatial[:, :1], (t.params[0][:1],), g)
    u = sp.linalg.spsolve(K.tocsc(), f)
    for i in (0, 17, 45):
        np.testing.assert_allclose(first.evaluate_index((i,))[free], u / mu[i], rtol=1e-8)
    assert P.compress(t, 1e-3).rank == 1


def test_zero_rhs_gives_rank_zero():
    m, K, Bc, free, d = _laplace_problem(3)
    g = small_grid(4)
    op = F.AffineOperator(m.n_nodes, free, d, g, (F.AffineTerm(K, Bc, (None,)),))
    t, rep = P.greedy_solve(op, F.SeparatedLoad(len(free), g, ()))
    assert t.rank == 0 and rep.termination == "zero right-hand side"


def test_max_modes_termination():
    bench = B.poisson_2d(h=0.25, h_mu=0.1)
    op, load, _ = bench.references["omega1"].affine_system()
    t, rep = P.greedy_solve(op, load, 1e-12, max_modes=3)
    assert t.rank == 3 and rep.termination == "max modes"


@pytest.fixture(scope="module")
def coarse_data_problem():
    bench = B.poisson_2d(h=0.25, h_mu=0.1)
    ref = bench.references["omega1"]
    op, load, _ = ref.affine_system()
    t, rep = P.greedy_solve(op, load, 1e-4, seed=0)
    return op, load, t, rep


def test_galerkin_consistency_at_random_grid_points(coarse_data_problem):
    op, load, t, rep = coarse_data_problem
    assert rep.termination == "enrichment tolerance"
    rng = np.random.default_rng(5)
    for i in rng.integers(0, op.grid.sizes[0], 5):
        u = sp.linalg.spsolve(op.matrix_at((i,)).tocsc(), load.at((i,)))
        v = t.evaluate_index((i,))[op.free]
        assert np.linalg.norm(v - u) <= 10 * 1e-4 * np.linalg.norm(u)


def test_modes_vanish_on_constrained_nodes(coarse_data_problem):
    op, _, t, _ = coarse_data_problem
    assert np.all(t.spatial[op.constrained] == 0)


def test_greedy_is_deterministic_for_a_seed(coarse_data_problem):
    op, load, t, _ = coarse_data_problem
    t2, _ = P.greedy_solve(op, load, 1e-4, seed=0)
    np.testing.assert_array_equal(t.spatial, t2.spatial)


# ---------------------------------------------------------------- compression

@st.composite
def redundant_tensors(draw):
    """Tensors whose nominal rank exceeds their numerical rank."""
    seed = draw(st.integers(0, 2**31 - 1))
    true_rank = draw(st.integers(1, 3))
    copies = draw(st.integers(1, 3))
    noise = draw(st.sampled_from([0.0, 1e-6, 1e-2]))
    rng = np.random.default_rng(seed)
    base = random_tensor(rng, 8, (5, 4), true_rank)
    spatial, p0, p1 = [], [], []
    for _ in range(copies):
        w = rng.uniform(0.2, 1.0, true_rank)
        spatial.append(base.spatial * w + noise * rng.standard_normal(base.spatial.shape))
        p0.append(base.params[0])
        p1.append(base.params[1])
    return P.SeparatedTensor(np.hstack(spatial), (np.vstack(p0), np.vstack(p1)), base.grid), seed


@settings(max_examples=100, deadline=None)
@given(redundant_tensors())
def test_compression_rank_error_and_idempotence(data):
    t, seed = data
    tol = 1e-3
    c = P.compress(t, tol)
    assert c.rank <= t.rank
    assert P.norm(P.add(t, P.scale(c, -1.0))) <= tol * P.norm(t) * (1 + 1e-9)
    cc = P.compress(c, tol)
    assert cc.rank <= c.rank
    assert P.norm(P.add(c, P.scale(cc, -1.0))) <= tol * P.norm(c) * (1 + 1e-9)
    rng = np.random.default_rng(seed)
    for _ in range(3):
        i, j = rng.integers(5), rng.integers(4)
        ref = t.evaluate_index((i, j))
        scale = max(np.linalg.norm(t.dense().reshape(8, -1), axis=0).max(), 1e-300)
        assert np.linalg.norm(c.evaluate_index((i, j)) - ref) <= 10 * tol * scale


def test_compression_finds_exact_rank():
    rng = np.random.default_rng(11)
    base = random_tensor(rng, 10, (6, 5), 2)
    dup = P.add(base, P.scale(base, 0.5))
    c = P.compress(dup, 1e-6)
    assert c.rank == 2
    np.testing.assert_allclose(c.dense(), dup.dense(), rtol=1e-5, atol=1e-5 * np.abs(dup.dense()).max())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-4, 1e-1))
def test_compression_pointwise_relative_error(seed, smallest):
    """The tolerance holds at every grid point, also where the field is small."""
    rng = np.random.default_rng(seed)
    g = P.ParametricGrid((P.GridDim("mu", 0.0, 1.0, 40),))
    profile = np.geomspace(smallest, 1.0, 40)
    decay = 10.0 ** -np.arange(8)
    t = P.SeparatedTensor(rng.standard_normal((30, 8)) * decay,
                          (rng.standard_normal((8, 40)) * profile,), g)
    tol = 1e-3
    c = P.compress(t, tol)
    assert c.rank <= t.rank
    for i in range(40):
        ref = t.evaluate_index((i,))
        assert np.linalg.norm(c.evaluate_index((i,)) - ref) <= tol * np.linalg.norm(ref) * (1 + 1e-9)
