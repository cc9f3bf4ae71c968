import numpy as np
import pytest

from ddpgd import benchmarks as B
from ddpgd import dd_offline as O
from ddpgd import dd_online as N
from ddpgd import fullorder as FO
from ddpgd.coupling import CouplingLayout, build_system
from ddpgd.linalg import linearity_defect


def full_order_system(bench, mu):
    tops = bench.topologies(mu)
    layout = CouplingLayout(tops, {i: dict(s.fixed_interfaces) for i, s in enumerate(bench.instances)})
    return build_system(layout, [FO.local_full_order(bench, i, mu, t.mesh) for i, t in enumerate(tops)])


def test_reduced_operator_is_linear(coarse, coarse_lib):
    sys_ = N.OnlineSolver(coarse_lib, coarse).build_interface_system((7.0,))
    assert linearity_defect(sys_.operator(), 0) < 1e-12


def test_assembled_matrix_matches_matrix_free_action(coarse, coarse_lib, rng):
    sys_ = N.OnlineSolver(coarse_lib, coarse).build_interface_system((7.0,))
    A = sys_.matrix()
    assert A.shape == (sys_.dim, sys_.dim)
    for _ in range(3):
        lam = rng.standard_normal(sys_.dim)
        np.testing.assert_allclose(A.dot(lam), sys_.apply(lam), rtol=0, atol=1e-12 * np.linalg.norm(lam))
    stacked = coarse_lib.surrogates["omega1"]
    ev = N.EvaluatedSurrogate(stacked, (7.0,))
    cols = np.column_stack([t.evaluate((7.0,)) for t in stacked.interface_parts])
    np.testing.assert_allclose(ev.columns(), cols, rtol=0, atol=1e-12 * np.abs(cols).max())


def test_sigma_action_matches_full_order(coarse, coarse_lib, rng):
    solver = N.OnlineSolver(coarse_lib, coarse)
    pts = coarse.grid.points(0)
    for i in rng.choice(len(pts), 5, replace=False):
        mu = (pts[i],)
        pgd = solver.build_interface_system(mu)
        fom = full_order_system(coarse, mu)
        lam = rng.standard_normal(pgd.dim)
        a, b = pgd.apply(lam), fom.apply(lam)
        assert np.linalg.norm(a - b) <= 1e-3 * np.linalg.norm(b)
        assert np.linalg.norm(pgd.rhs - fom.rhs) <= 1e-3 * np.linalg.norm(fom.rhs)


def test_trace_continuity_after_solve(coarse, coarse_lib):
    sol = N.OnlineSolver(coarse_lib, coarse).solve((12.0,))
    mismatch = sol.system.residual(sol.lam)
    assert np.linalg.norm(mismatch) <= 1e-5 * np.linalg.norm(sol.lam)
    assert sol.history[-1] <= 1e-6
    assert np.all(np.diff(sol.history) <= 1e-14)


def test_repeated_solves_bit_identical(coarse, coarse_lib):
    solver = N.OnlineSolver(coarse_lib, coarse)
    a, b = solver.solve((4.2,)), solver.solve((4.2,))
    assert a.iterations == b.iterations
    for x, y in zip(a.fields, b.fields):
        np.testing.assert_array_equal(x, y)


def test_parameter_independent_problem_matches_ddfem():
    bench = B.poisson_2d(h=0.25, mu_range=(3.0, 3.0), h_mu=1.0)
    lib = O.build_library(bench)
    for s in lib.surrogates.values():
        assert s.data_part.rank == 1
        assert all(t.rank == 1 for t in s.interface_parts)
    sol = N.OnlineSolver(lib, bench).solve((3.0,))
    ref = FO.solve_ddfem(bench, (3.0,))
    _, values, _ = sol.global_field(bench)
    assert sol.iterations == ref.iterations
    assert np.max(np.abs(values - ref.values)) <= 1e-8 * np.max(np.abs(ref.values))


def test_out_of_range_parameter(coarse, coarse_lib):
    with pytest.raises(N.ParameterError):
        N.OnlineSolver(coarse_lib, coarse).solve((60.0,))


def test_library_must_match_benchmark(coarse_lib):
    with pytest.raises(O.SchemaError):
        N.OnlineSolver(coarse_lib, B.poisson_2d(h=0.125, h_mu=0.1))
    with pytest.raises(O.SchemaError):
        N.OnlineSolver(coarse_lib, B.graetz())


def test_clustered_online_matches_reduced(coarse, coarse_lib, coarse_aip1):
    a = N.OnlineSolver(coarse_lib, coarse).solve((30.0,))
    b = N.OnlineSolver(coarse_aip1, coarse).solve((30.0,))
    for x, y in zip(a.fields, b.fields):
        assert np.linalg.norm(x - y) <= 1e-3 * np.linalg.norm(x)


def test_clustered_clamp_option(coarse, coarse_aip1):
    ev = N.EvaluatedSurrogate(coarse_aip1.surrogates["omega1"], (30.0,))
    ev.prepare(coarse.references["omega1"].topology.interface_nodes)
    big = np.full(ev.n_slots, 1e3)
    with pytest.raises(Exception):
        ev.trace(big)
    clamped = N.EvaluatedSurrogate(coarse_aip1.surrogates["omega1"], (30.0,), clamp=True)
    clamped.prepare(coarse.references["omega1"].topology.interface_nodes)
    assert np.all(np.isfinite(clamped.trace(big)))
