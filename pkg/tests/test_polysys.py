import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import fd_jacobian, lambda_direct, psi_direct
from polyiv.dgp import DgpSpec, Gaussian, Uniform
from polyiv.moments import MomentTable, estimate_moments, iota, population_table
from polyiv.polysys import (
    build_system,
    eval_gamma,
    eval_lambda,
    jacobian_h,
    jacobian_w,
    psi,
)
from polyiv.sim import simulate

G0 = DgpSpec([[0.7, 0.3], [0.3, 0.7]], [0.0, 0.0], Gaussian(1.0))


@pytest.fixture
def sys0():
    return build_system(population_table(G0))


def test_gamma_closed_form_values(sys0):
    # E[(U - d)^2] = 1 + d^2, E[(U - d)^3] = -3d - d^3
    np.testing.assert_allclose(eval_gamma(sys0, [1.0, -1.0]), [-0.4, -0.8, 0.0, -3.2], atol=1e-12)
    np.testing.assert_allclose(eval_gamma(sys0, [0.0, 0.0]), 0.0, atol=1e-12)


def test_lambda_values(sys0):
    np.testing.assert_allclose(eval_lambda(sys0, [1.0, -1.0]), [-0.4, -0.8], atol=1e-12)
    assert eval_lambda(build_system(population_table(DgpSpec(
        [[0.2, 0.3, 0.5], [0.5, 0.3, 0.2]], [0, 0, 0], Gaussian()))), np.zeros(3)).shape == (3,)


def test_jacobian_at_truth(sys0):
    V = jacobian_h(sys0, [0.0, 0.0])
    np.testing.assert_allclose(V, [[-0.7, -0.3], [-0.4, 0.4]], atol=1e-12)
    assert np.linalg.det(V) == pytest.approx(-0.4)


def test_zero_difference_system_has_vanishing_rows():
    dgp = DgpSpec([[0.4, 0.6], [0.4, 0.6]], [1.0, 2.0], Gaussian(1.0))
    sys_ = build_system(population_table(dgp))
    assert np.all(sys_.coeffs[1:] == 0.0)
    assert np.all(jacobian_h(sys_, [0.3, -0.2], rows=range(1, 4)) == 0.0)


def test_empty_category_does_not_matter():
    sample = simulate(DgpSpec([[0.5, 0.5, 0.0], [0.2, 0.8, 0.0]], [1.0, 0.0, 0.0], Gaussian()), 300, seed=1)
    sys_ = build_system(estimate_moments(sample))
    assert np.all(sys_.coeffs[:, 2, :] == 0.0)
    np.testing.assert_array_equal(eval_gamma(sys_, [0.1, 0.2, 5.0]), eval_gamma(sys_, [0.1, 0.2, -7.0]))


def test_insufficient_power():
    t = estimate_moments(simulate(G0, 50, seed=0), 2)
    with pytest.raises(ValueError, match="J=2"):
        build_system(t)


def test_zero_instrument_probability():
    t = MomentTable(2, 3, np.ones((4, 2, 2)), [1.0, 0.0])
    with pytest.raises(ValueError, match="positive probability"):
        build_system(t)


def test_matches_direct_expansion():
    rng = np.random.default_rng(4)
    for K in (2, 3, 4):
        C = rng.normal(size=(K + 2, 2, K))
        t = MomentTable(K, K + 1, C, [0.4, 0.6])
        sys_ = build_system(t)
        h = rng.uniform(-3, 3, K)
        np.testing.assert_allclose(eval_gamma(sys_, h), lambda_direct(t, h, range(K + 2)), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("family", [Gaussian(0.7), Uniform(-1.0, 1.0)])
@pytest.mark.parametrize("c", [-1.0, 0.5, 2.0])
def test_constant_shift_leaves_difference_rows_unchanged(family, c):
    dgp = DgpSpec([[0.5, 0.3, 0.2], [0.1, 0.3, 0.6]], [0.5, -1.0, 1.5], family)
    sys_ = build_system(population_table(dgp))
    a = eval_gamma(sys_, dgp.g)
    b = eval_gamma(sys_, dgp.g + c)
    np.testing.assert_allclose(b[1:], a[1:], atol=1e-9)


def test_derivative_along_ones():
    # d/dc P_m(h + c 1) = -m P_{m-1}(h) for m >= 2 and 0 for m = 1
    dgp = DgpSpec([[0.5, 0.3, 0.2], [0.1, 0.3, 0.6]], [0.5, -1.0, 1.5], Gaussian(1.3))
    sys_ = build_system(population_table(dgp))
    for h in (np.array([0.2, 1.0, -0.7]), dgp.g):
        J = jacobian_h(sys_, h, rows=range(1, 4))
        P = eval_gamma(sys_, h)
        np.testing.assert_allclose(J @ np.ones(3), [0.0, -2 * P[1], -3 * P[2]], atol=1e-12)
        fd = fd_jacobian(lambda v: eval_gamma(sys_, v)[1:4], h) @ np.ones(3)
        np.testing.assert_allclose(fd, J @ np.ones(3), atol=1e-7)
    np.testing.assert_allclose(jacobian_h(sys_, dgp.g, rows=range(1, 4)) @ np.ones(3), 0.0, atol=1e-12)


def test_jacobian_w_closed_form_entries():
    t = population_table(G0)
    w = t.coefficient_vector()
    K = 2
    g = G0.g
    D = jacobian_w(K, g, w)
    expected = -sum(t.C[1, 0, k] - g[k] * t.C[0, 0, k] for k in range(K)) / t.pW[0] ** 2
    assert D[0, 2 * K * K] == pytest.approx(expected)
    for k in range(1, K + 1):
        for j in range(K):
            assert D[0, iota(j, 1, k, K) - 1] == 0.0
    assert D[0, 2 * K * K + 1] == 0.0


def test_scale_invariance_direction():
    rng = np.random.default_rng(8)
    t = estimate_moments(simulate(DgpSpec([[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]], [1, 0, -1], Gaussian()), 400, seed=9))
    w = t.coefficient_vector()
    h = rng.uniform(-1, 1, 3)
    np.testing.assert_allclose(psi(3, h, 2 * w), psi(3, h, w), atol=1e-12)
    np.testing.assert_allclose(jacobian_w(3, h, w) @ w, 0.0, atol=1e-10)


def test_psi_agrees_with_eval_lambda():
    t = estimate_moments(simulate(DgpSpec([[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]], [1, 0, -1], Gaussian()), 400, seed=9))
    h = np.array([0.3, -0.4, 1.1])
    w = t.coefficient_vector()
    np.testing.assert_allclose(psi(3, h, w), eval_lambda(build_system(t), h), atol=1e-12)
    np.testing.assert_allclose(psi(3, h, w), psi_direct(3, h, w), atol=1e-12)


def test_jacobian_w_rejects_nonpositive_probability():
    with pytest.raises(ValueError):
        jacobian_w(2, [0, 0], np.r_[np.ones(8), 0.0, 1.0])


@given(st.permutations([1, 2, 3]), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_relabel_invariance(perm, h):
    t = estimate_moments(simulate(DgpSpec([[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]], [1, 0, -1], Gaussian()), 300, seed=4))
    h = np.array(h)
    hp = np.empty(3)
    hp[np.array(perm) - 1] = h
    np.testing.assert_allclose(
        eval_gamma(build_system(t.relabel(perm)), hp), eval_gamma(build_system(t), h), rtol=1e-12, atol=1e-12
    )


def test_sample_system_close_to_population():
    dgp = DgpSpec([[0.6, 0.4], [0.3, 0.7]], [0.5, -0.5], Gaussian(1.0))
    pop = build_system(population_table(dgp)).coeffs
    est = build_system(estimate_moments(simulate(dgp, 200000, seed=5))).coeffs
    assert np.abs(est - pop).max() < 0.05


def test_batched_evaluation():
    sys_ = build_system(population_table(G0))
    H = np.random.default_rng(0).normal(size=(5, 7, 2))
    out = eval_gamma(sys_, H)
    assert out.shape == (5, 7, 4)
    np.testing.assert_allclose(out[2, 3], eval_gamma(sys_, H[2, 3]))
    assert jacobian_h(sys_, H).shape == (5, 7, 2, 2)


def test_system_json_round_trip():
    sys_ = build_system(population_table(G0))
    d = json.loads(sys_.to_json())
    assert np.array_equal(np.array(d["coeffs"]), sys_.coeffs)
    assert d["source_sha256"] == population_table(G0).digest()
