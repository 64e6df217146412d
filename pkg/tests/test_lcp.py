import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drosc.errors import NotPositiveDefiniteError
from drosc.lcp import (LcpInstance, brute_force_lcp, dump_json, lemke, natural_residual,
                       regularization_path, regularize, solve_pd_lcp)
from drosc.pcd import block_matrix

from conftest import random_pd


def pcd_block(u, eps=None):
    u = np.asarray(u, dtype=float)
    inst = LcpInstance(block_matrix(len(u)), np.r_[-u, 1.0], monotone=True)
    return inst if eps is None else regularize(inst, eps)


# --- regularize -----------------------------------------------------------------

def test_regularize_adds_eps_identity():
    inst = LcpInstance(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.zeros(2), monotone=True)
    reg = regularize(inst, 0.5)
    np.testing.assert_array_equal(reg.M, [[0.5, 1.0], [-1.0, 0.5]])
    np.testing.assert_array_equal(reg.q, inst.q)
    assert reg.positive_definite


def test_regularize_scalar_zero_matrix():
    reg = regularize(LcpInstance(np.zeros((1, 1)), np.array([1.0]), monotone=True), 0.1)
    np.testing.assert_array_equal(reg.M, [[0.1]])


@pytest.mark.parametrize("eps", [0.0, -1.0])
def test_regularize_rejects_nonpositive(eps):
    with pytest.raises(ValueError):
        regularize(LcpInstance(np.eye(2), np.zeros(2)), eps)


def test_monotone_tag_checked():
    with pytest.raises(ValueError):
        LcpInstance(-np.eye(2), np.zeros(2), monotone=True)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        LcpInstance(np.eye(2), np.zeros(3))


# --- natural residual -----------------------------------------------------------

@pytest.mark.parametrize("q, y, expected", [
    ((1.0, 1.0), (0.0, 0.0), 0.0),
    ((-1.0, 2.0), (1.0, 0.0), 0.0),
    ((-1.0, 2.0), (0.0, 0.0), 1.0),
])
def test_natural_residual_examples(q, y, expected):
    inst = LcpInstance(np.eye(2), np.array(q))
    assert natural_residual(inst, np.array(y)) == expected


def test_natural_residual_dimension_mismatch():
    with pytest.raises(ValueError):
        natural_residual(LcpInstance(np.eye(2), np.zeros(2)), np.zeros(3))


# --- solvers --------------------------------------------------------------------

def test_solve_identity_examples():
    sol = solve_pd_lcp(LcpInstance(np.eye(2), np.array([-1.0, 2.0])))
    np.testing.assert_allclose(sol.y, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(sol.w, [0.0, 2.0], atol=1e-12)
    sol = solve_pd_lcp(LcpInstance(np.eye(3), np.array([0.0, 1.0, 2.0])))
    np.testing.assert_array_equal(sol.y, np.zeros(3))


def test_solve_pcd_block_closed_form():
    eps = 0.1
    sol = solve_pd_lcp(pcd_block([1.0, 1.0], eps))
    t = (1 + eps) / (2 + eps ** 2)
    g = (2 - eps) / (2 + eps ** 2)
    np.testing.assert_allclose(sol.y, [t, t, g], atol=1e-12)
    np.testing.assert_allclose(sol.y, [0.5473, 0.5473, 0.9453], atol=1e-3)
    assert sol.residual <= 1e-10


def test_solve_rejects_non_pd():
    with pytest.raises(NotPositiveDefiniteError):
        solve_pd_lcp(LcpInstance(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.zeros(2)))


def test_solve_is_deterministic(rng):
    M = random_pd(rng, 5)
    q = rng.normal(size=5)
    a = solve_pd_lcp(LcpInstance(M, q))
    b = solve_pd_lcp(LcpInstance(M.copy(), q.copy()))
    assert a.y.tobytes() == b.y.tobytes()


def test_lemke_matches_newton(rng):
    for _ in range(50):
        m = int(rng.integers(1, 7))
        inst = LcpInstance(random_pd(rng, m), rng.normal(size=m))
        np.testing.assert_allclose(lemke(inst), solve_pd_lcp(inst).y, atol=1e-8)


def test_oracle_equivalence_random_pd(rng):
    """Newton/Lemke against exhaustive basis enumeration."""
    for _ in range(300):
        m = int(rng.integers(1, 7))
        inst = LcpInstance(random_pd(rng, m), rng.normal(size=m) * 2)
        sol = solve_pd_lcp(inst)
        sols = brute_force_lcp(inst)
        assert len(sols) == 1
        assert np.max(np.abs(sol.y - sols[0].y)) <= 1e-8
        assert sol.residual <= 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_solution_complementarity_property(m, seed):
    r = np.random.default_rng(seed)
    inst = LcpInstance(random_pd(r, m), r.normal(size=m) * 3)
    sol = solve_pd_lcp(inst)
    assert np.all(sol.y >= -1e-10)
    assert np.all(sol.w >= -1e-10)
    assert np.all(np.abs(sol.y * sol.w) <= 1e-8)
    np.testing.assert_allclose(sol.w, inst.M @ sol.y + inst.q, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_lipschitz_in_q(m, seed):
    r = np.random.default_rng(seed)
    M = random_pd(r, m, shift=0.3)
    lam = np.linalg.eigvalsh(0.5 * (M + M.T)).min()
    q1, q2 = r.normal(size=m), r.normal(size=m)
    y1 = solve_pd_lcp(LcpInstance(M, q1)).y
    y2 = solve_pd_lcp(LcpInstance(M, q2)).y
    assert np.linalg.norm(y1 - y2) <= np.linalg.norm(q1 - q2) / lam + 1e-9


# --- brute force ----------------------------------------------------------------

def test_brute_force_identity():
    sols = brute_force_lcp(LcpInstance(np.eye(2), np.array([-1.0, 2.0])))
    assert len(sols) == 1
    np.testing.assert_allclose(sols[0].y, [1.0, 0.0])


def test_brute_force_skew_contains_zero():
    sols = brute_force_lcp(LcpInstance(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.zeros(2)))
    assert any(np.allclose(s.y, 0.0) for s in sols)


def test_brute_force_pcd_block_unique():
    inst = pcd_block([1.0, 1.0], 0.1)
    sols = brute_force_lcp(inst)
    assert len(sols) == 1
    np.testing.assert_allclose(sols[0].y, solve_pd_lcp(inst).y, atol=1e-8)


def test_brute_force_size_limit():
    with pytest.raises(ValueError):
        brute_force_lcp(LcpInstance(np.eye(13), np.ones(13)))


# --- regularization path --------------------------------------------------------

def test_path_pcd_block_distance_formula():
    eps_list = [0.5, 0.1, 0.01]
    path = regularization_path(pcd_block([1.0, 1.0]), eps_list)
    for eps, sol in zip(eps_list, path):
        gap = np.max(np.abs(sol.y[:2] - 0.5))
        assert abs(gap - eps * (2 - eps) / (2 * (2 + eps ** 2))) <= 1e-10
    assert abs(np.max(np.abs(path[1].y[:2] - 0.5)) - 0.0473) < 1e-4
    assert abs(np.max(np.abs(path[2].y[:2] - 0.5)) - 0.0050) < 1e-4


def test_path_identity_closed_form():
    inst = LcpInstance(np.eye(2), np.array([-1.0, 2.0]), monotone=True)
    eps_list = [1.0, 0.5, 0.1, 0.01]
    path = regularization_path(inst, eps_list)
    for eps, sol in zip(eps_list, path):
        np.testing.assert_allclose(sol.y, [1 / (1 + eps), 0.0], atol=1e-12)


def test_path_empty():
    assert regularization_path(pcd_block([1.0, 1.0]), []) == []


def test_path_requires_decreasing():
    with pytest.raises(ValueError):
        regularization_path(pcd_block([1.0, 1.0]), [0.1, 0.5])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from([-1.0, -0.5, 0.0, 0.5, 1.0, 1.5]), min_size=2, max_size=5))
def test_path_monotone_toward_least_norm(u):
    """Distance to the least-norm solution shrinks along a decreasing eps list."""
    from drosc.pcd import argmax_share_set
    u = np.array(u)
    ybar = np.r_[argmax_share_set(u).least_norm, max(u.max(), 0.0)]
    path = regularization_path(pcd_block(u), [0.1, 0.05, 0.02, 0.01, 0.001])
    d = [np.linalg.norm(s.y - ybar) for s in path]
    assert all(b <= a + 1e-9 for a, b in zip(d, d[1:]))


def test_dump_json_keys():
    inst = LcpInstance(np.eye(2), np.array([-1.0, 2.0]))
    d = dump_json(inst, solve_pd_lcp(inst))
    assert set(d) == {"M", "q", "y", "w", "residual"}
    assert d["M"] == [[1.0, 0.0], [0.0, 1.0]]
