import math

import numpy as np
import pytest

from polyiv.dgp import DgpSpec, Gaussian, Uniform
from polyiv.identify import check_relevance
from polyiv.moments import estimate_moments, population_table
from polyiv.polysys import PolySystem, build_system, eval_gamma, eval_lambda
from polyiv.sim import simulate
from polyiv.solver import (
    SolverConfig,
    estimate_g_hat,
    estimate_g_tilde,
    select_root,
    sobol_ball,
    solve_zero_set,
)

G0 = DgpSpec([[0.7, 0.3], [0.3, 0.7]], [0.0, 0.0], Gaussian(1.0))
K2 = DgpSpec([[0.7, 0.3], [0.3, 0.7]], [1.0, -0.5], Gaussian(1.0))


def check_invariants(zs, sys_):
    if len(zs.roots):
        assert np.all(np.linalg.norm(zs.roots, axis=1) <= zs.R * (1 + 1e-12))
        assert np.all(np.linalg.norm(eval_lambda(sys_, zs.roots), axis=1) <= zs.root_tol)
        d = np.linalg.norm(zs.roots[:, None] - zs.roots[None], axis=2)
        assert np.all(d[np.triu_indices(len(zs.roots), 1)] >= zs.dedup_tol)
    assert 0.0 <= zs.converged_fraction <= 1.0


def test_population_k2_unique_root():
    sys_ = build_system(population_table(G0))
    zs = solve_zero_set(sys_, 10.0)
    assert len(zs.roots) == 1
    assert zs.residuals[0] < 1e-12
    np.testing.assert_allclose(zs.roots[0], 0.0, atol=1e-12)
    check_invariants(zs, sys_)


def test_affine_case_matches_linear_solve():
    for dgp in (K2, DgpSpec([[0.2, 0.8], [0.6, 0.4]], [3.0, -2.0], Uniform(-2, 2))):
        sys_ = build_system(estimate_moments(simulate(dgp, 2000, seed=1)))
        # Lambda(h) = c0 + A h with c0 the constant terms and A the linear coefficients
        c0 = sys_.coeffs[:2, :, 0].sum(axis=1)
        A = -sys_.coeffs[:2, :, 1]
        direct = np.linalg.solve(A, -c0)
        zs = solve_zero_set(sys_, 10.0)
        assert len(zs.roots) == 1
        np.testing.assert_allclose(zs.roots[0], direct, atol=1e-10)


def test_zero_difference_system_gives_manifold():
    dgp = DgpSpec([[0.4, 0.3, 0.3], [0.4, 0.3, 0.3]], [0.0, 0.0, 0.0], Gaussian(1.0))
    sys_ = build_system(population_table(dgp))
    zs = solve_zero_set(sys_, 3.0, SolverConfig(starts=300))
    assert len(zs.roots) > math.factorial(3)
    assert "rank_deficient" in zs.flags and "bezout_exceeded" in zs.flags
    assert zs.rank_deficient.all()
    check_invariants(zs, sys_)


def test_random_k3_population_within_bound():
    rng = np.random.default_rng(0)
    done = 0
    while done < 5:
        dgp = DgpSpec(rng.dirichlet(np.ones(3), size=2), rng.uniform(-2, 2, 3), Gaussian(1.0))
        if check_relevance(population_table(dgp, 1)).min_margin < 0.05:
            continue
        sys_ = build_system(population_table(dgp))
        zs = solve_zero_set(sys_, 5.0)
        assert 1 <= len(zs.roots) <= 6
        assert np.min(np.linalg.norm(zs.roots - dgp.g, axis=1)) < 1e-6
        check_invariants(zs, sys_)
        done += 1


def test_deterministic_bitwise():
    sys_ = build_system(estimate_moments(simulate(K2, 3000, seed=2)))
    a = solve_zero_set(sys_, 10.0, SolverConfig(seed=4))
    b = solve_zero_set(sys_, 10.0, SolverConfig(seed=4))
    assert a.roots.tobytes() == b.roots.tobytes()
    assert a.to_dict() == b.to_dict()


@pytest.mark.parametrize(
    "kwargs", [{"root_tol": 0.0}, {"root_tol": -1.0}, {"dedup_tol": 0.0}, {"starts": 0}, {"max_iter": 0}]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_radius_must_be_positive():
    sys_ = build_system(population_table(G0))
    with pytest.raises(ValueError):
        solve_zero_set(sys_, 0.0)
    with pytest.raises(ValueError):
        estimate_g_hat(sys_, -1.0)


def test_no_root_in_ball_falls_back():
    dgp = DgpSpec([[0.7, 0.3], [0.3, 0.7]], [20.0, 20.0], Gaussian(1.0))
    sys_ = build_system(population_table(dgp))
    zs = solve_zero_set(sys_, 1.0)
    assert zs.no_root and "no_root" in zs.flags
    assert np.linalg.norm(zs.best_point) <= 1.0 + 1e-12
    g, zs2 = estimate_g_tilde(sys_, 1.0)
    assert zs2.no_root
    assert np.linalg.norm(g) <= 1.0 + 1e-9


def test_g_tilde_population_is_truth():
    g, zs = estimate_g_tilde(build_system(population_table(G0)), 10.0)
    np.testing.assert_allclose(g, 0.0, atol=1e-12)


def test_selection_prefers_small_gamma():
    dgp = DgpSpec([[0.5, 0.3, 0.2], [0.1, 0.3, 0.6]], [0.5, -1.0, 1.5], Gaussian(1.0))
    sys_ = build_system(population_table(dgp))
    other = dgp.g + np.array([0.3, 0.0, -0.2])
    roots = np.array([other, dgp.g])
    assert np.linalg.norm(eval_gamma(sys_, other)) > np.linalg.norm(eval_gamma(sys_, dgp.g))
    assert select_root(sys_, roots) == 1


def test_selection_tie_breaks():
    sys_ = PolySystem(2, np.zeros((4, 2, 4)))
    roots = np.array([[1.0, 0.0], [0.0, -1.0], [0.5, 0.5]])
    assert select_root(sys_, roots) == 2  # smallest norm
    roots = np.array([[0.0, 1.0], [0.0, -1.0], [1.0, 0.0]])
    assert select_root(sys_, roots) == 1  # equal norms: lexicographic


def test_g_hat_population():
    res = estimate_g_hat(build_system(population_table(G0)), 10.0)
    np.testing.assert_allclose(res.g, 0.0, atol=1e-6)
    assert not res.boundary


def test_g_hat_boundary_flag():
    dgp = DgpSpec([[0.7, 0.3], [0.3, 0.7]], [3.0, 3.0], Gaussian(1.0))
    res = estimate_g_hat(build_system(population_table(dgp)), 1.0)
    assert np.linalg.norm(res.g) <= 1.0 + 1e-12
    assert res.objective > 0
    assert res.boundary and "boundary_solution" in res.flags


def test_sobol_ball_points():
    P = sobol_ball(3, 500, 2.5, seed=1)
    assert P.shape == (500, 3)
    assert np.all(np.linalg.norm(P, axis=1) <= 2.5)
    np.testing.assert_array_equal(P, sobol_ball(3, 500, 2.5, seed=1))
    # roughly uniform in volume: fraction inside half radius near 1/8
    assert abs(np.mean(np.linalg.norm(P, axis=1) <= 1.25) - 0.125) < 0.03


def test_finite_sample_accuracy_k2():
    hits = 0
    for rep in range(200):
        sys_ = build_system(estimate_moments(simulate(K2, 10000, seed=31, stream=(rep,))))
        g, _ = estimate_g_tilde(sys_, 10.0)
        hits += np.linalg.norm(g - K2.g) < 0.15
    assert hits >= 190


def test_g_hat_and_g_tilde_agree_at_large_n():
    for rep in range(5):
        sys_ = build_system(estimate_moments(simulate(K2, 100000, seed=32, stream=(rep,))))
        g_tilde, _ = estimate_g_tilde(sys_, 10.0)
        g_hat = estimate_g_hat(sys_, 10.0).g
        assert np.linalg.norm(g_tilde - g_hat) < 2e-2


def test_solution_set_to_dict_roundtrips_json():
    import json

    zs = solve_zero_set(build_system(population_table(G0)), 10.0)
    d = json.loads(json.dumps(zs.to_dict()))
    assert d["roots"] == zs.roots.tolist() and d["starts_used"] == 400
