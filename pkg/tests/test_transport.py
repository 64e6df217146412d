import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drosc.ambiguity import SampleSet
from drosc.transport import (DiscreteDistribution, deviation, fill_distance, load_csv,
                             save_csv, voronoi_assign, voronoi_projection, wasserstein,
                             wasserstein_1d)


def grid(r):
    ax = -1 + (2 * np.arange(1, r + 1) - 1) / r
    g1, g2 = np.meshgrid(ax, ax, indexing="ij")
    return SampleSet(np.column_stack([g1.ravel(), g2.ravel()]), [-1, -1], [1, 1])


def random_dist(r, n, nu=2):
    w = r.random(n) + 0.05
    return DiscreteDistribution(r.uniform(-1, 1, size=(n, nu)), w / w.sum())


# --- Voronoi --------------------------------------------------------------------

def test_voronoi_assign_nearest():
    s = grid(2)
    i = voronoi_assign(s, [0.9, 0.9])
    np.testing.assert_array_equal(s.points[i], [0.5, 0.5])


def test_voronoi_assign_tie_lowest_index():
    s = SampleSet([[-0.5, 0.0], [0.5, 0.0], [0.0, 0.9]], [-1, -1], [1, 1])
    assert voronoi_assign(s, [0.0, 0.0]) == 0


def test_voronoi_assign_at_sample():
    s = grid(3)
    assert voronoi_assign(s, s.points[3]) == 3


def test_voronoi_assign_outside_domain():
    with pytest.raises(ValueError):
        voronoi_assign(grid(2), [1.5, 0.0])


def test_voronoi_assign_batch_matches_single(rng):
    s = grid(4)
    X = rng.uniform(-1, 1, size=(50, 2))
    batch = voronoi_assign(s, X)
    assert list(batch) == [voronoi_assign(s, x) for x in X]


# --- fill distance --------------------------------------------------------------

def test_fill_distance_2x2():
    fd = fill_distance(grid(2))
    assert abs(fd.value - np.sqrt(2) / 2) < 1e-12
    assert abs(fd.probe - fd.corner) < 1e-12


def test_fill_distance_single_center():
    s = SampleSet([[0.0, 0.0]], [-1, -1], [1, 1])
    assert abs(fill_distance(s).value - np.sqrt(2)) < 1e-12


@pytest.mark.parametrize("k", [4, 25, 100])
def test_fill_distance_midpoint_grid(k):
    assert abs(fill_distance(grid(int(np.sqrt(k)))).value - np.sqrt(2 / k)) < 1e-12


def test_fill_distance_probe_is_lower_bound(rng):
    s = SampleSet(rng.uniform(-1, 1, size=(6, 2)), [-1, -1], [1, 1])
    coarse = fill_distance(s, probe_resolution=11)
    fine = fill_distance(s, probe_resolution=801)
    assert coarse.probe <= fine.probe + 1e-12
    assert fine.probe >= fine.corner - 1e-12


def test_fill_distance_resolution_check():
    with pytest.raises(ValueError):
        fill_distance(grid(2), probe_resolution=1)


# --- Voronoi projection ---------------------------------------------------------

def test_projection_on_samples_is_identity():
    s = grid(3)
    P = DiscreteDistribution(s.points, np.arange(1, 10) / 45)
    Pk = voronoi_projection(P, s)
    np.testing.assert_allclose(Pk.weights, P.weights)


def test_projection_point_mass():
    s = grid(2)
    Pk = voronoi_projection(DiscreteDistribution.point_mass([0.9, 0.9]), s)
    np.testing.assert_allclose(Pk.weights @ Pk.atoms, [0.5, 0.5])
    assert Pk.weights.max() == 1.0


def test_projection_symmetric_points_uniform():
    s = grid(2)
    P = DiscreteDistribution([[0.3, 0.3], [-0.3, 0.3], [0.3, -0.3], [-0.3, -0.3]], [0.25] * 4)
    np.testing.assert_allclose(voronoi_projection(P, s).weights, [0.25] * 4)


def test_projection_rejects_outside_atoms():
    with pytest.raises(ValueError):
        voronoi_projection(DiscreteDistribution.point_mass([1.2, 0.0]), grid(2))


# --- Wasserstein ----------------------------------------------------------------

def test_wasserstein_point_masses():
    a, b = np.array([0.1, -0.3]), np.array([0.7, 0.5])
    d = wasserstein(DiscreteDistribution.point_mass(a), DiscreteDistribution.point_mass(b))
    assert abs(d - np.linalg.norm(a - b)) < 1e-12


def test_wasserstein_two_atom_line():
    P = DiscreteDistribution([[0.0], [1.0]], [0.5, 0.5])
    assert abs(wasserstein(P, DiscreteDistribution.point_mass([0.5])) - 0.5) < 1e-12


def test_wasserstein_identity(rng):
    P = random_dist(rng, 8)
    assert wasserstein(P, P) == pytest.approx(0.0, abs=1e-12)


def test_wasserstein_methods_agree(rng):
    for _ in range(20):
        P, Q = random_dist(rng, int(rng.integers(1, 15))), random_dist(rng, int(rng.integers(1, 15)))
        assert abs(wasserstein(P, Q, "emd") - wasserstein(P, Q, "lp")) < 1e-9


def test_wasserstein_dimension_mismatch():
    with pytest.raises(ValueError):
        wasserstein(DiscreteDistribution.point_mass([0.0]), DiscreteDistribution.point_mass([0.0, 0.0]))


def test_wasserstein_matches_1d_closed_form(rng):
    for _ in range(50):
        P, Q = random_dist(rng, int(rng.integers(1, 31)), 1), random_dist(rng, int(rng.integers(1, 31)), 1)
        ref = wasserstein_1d(P.atoms[:, 0], P.weights, Q.atoms[:, 0], Q.weights)
        assert abs(wasserstein(P, Q) - ref) < 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_metric_axioms(seed):
    r = np.random.default_rng(seed)
    P, Q, R = (random_dist(r, int(r.integers(1, 10))) for _ in range(3))
    pq, qp = wasserstein(P, Q), wasserstein(Q, P)
    assert abs(pq - qp) <= 1e-10
    assert pq <= wasserstein(P, R) + wasserstein(R, Q) + 1e-9
    assert pq >= 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_kantorovich_dual_lower_bound(seed):
    """Any 1-Lipschitz test function gives |E_P f - E_Q f| <= W(P, Q)."""
    r = np.random.default_rng(seed)
    P, Q = random_dist(r, int(r.integers(1, 12))), random_dist(r, int(r.integers(1, 12)))
    centers = r.uniform(-1, 1, size=(4, 2))
    slopes = r.uniform(-1, 1, size=4)
    slopes /= max(1.0, np.abs(slopes).sum())

    def f(X):
        return np.linalg.norm(X[:, None, :] - centers[None], axis=2) @ slopes

    gap = abs(P.weights @ f(P.atoms) - Q.weights @ f(Q.atoms))
    assert gap <= wasserstein(P, Q) + 1e-10


def test_fill_distance_certificate(rng):
    s = grid(5)
    beta = fill_distance(s).value
    for _ in range(20):
        P = random_dist(rng, int(rng.integers(1, 51)))
        Pk = voronoi_projection(P, s)
        keep = Pk.weights > 0
        Pk = DiscreteDistribution(Pk.atoms[keep], Pk.weights[keep])
        assert wasserstein(P, Pk) <= beta + 1e-10


def test_deviation_examples(rng):
    d0, d1 = DiscreteDistribution.point_mass([0.0]), DiscreteDistribution.point_mass([1.0])
    assert deviation([d0, d1], [d0]) == pytest.approx(1.0)
    P, Q = random_dist(rng, 5), random_dist(rng, 6)
    assert deviation([P], [Q]) == pytest.approx(wasserstein(P, Q))
    assert deviation([P], [Q, P]) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        deviation([], [P])


def test_deviation_shrinks_with_finer_grids(rng):
    """Distance from fixed distributions to their grid projections decreases with k."""
    ps = [random_dist(rng, 40) for _ in range(5)]
    vals = []
    for r in (2, 4, 8, 16):
        s = grid(r)
        projected = []
        for P in ps:
            Pk = voronoi_projection(P, s)
            keep = Pk.weights > 0
            projected.append(DiscreteDistribution(Pk.atoms[keep], Pk.weights[keep]))
        vals.append(max(wasserstein(P, Q) for P, Q in zip(ps, projected)))
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_distribution_validation():
    with pytest.raises(ValueError):
        DiscreteDistribution([[0.0], [1.0]], [0.7, 0.7])
    with pytest.raises(ValueError):
        DiscreteDistribution([[0.0], [0.0]], [0.5, 0.5])


def test_csv_round_trip(tmp_path, rng):
    P = random_dist(rng, 7)
    save_csv(P, tmp_path / "p.csv")
    Q = load_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(P.atoms, Q.atoms)
    np.testing.assert_array_equal(P.weights, Q.weights)
    header = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert header == "coordinate_1,coordinate_2,weight"
