import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from garde import (
    DataError,
    NumericalError,
    ObservationSet,
    calibration_error,
    classical_mds,
    complete_distances,
    pairwise_distances,
)
from conftest import random_geometry


def observations_for(nodes, sources):
    return ObservationSet(pairwise_distances(nodes, sources))


class TestCompleteDistances:
    def test_two_source_hand_case(self):
        # d_i = (3, 2), d_j = (1, 2): lower = max(2, 0), upper = min(4, 4)
        obs = ObservationSet(distances=[[3.0, 2.0], [1.0, 2.0]])
        comp = complete_distances(obs)
        assert comp.lower[0, 1] == 2.0
        assert comp.upper[0, 1] == 4.0
        assert comp.d_hat[0, 1] == 3.0

    def test_tight_bounds_with_collinear_sources(self):
        # A source between the nodes makes the upper bound exact; a source
        # on the same line beyond a node makes the lower bound exact.
        nodes = np.array([[0.0, 0.0], [4.0, 0.0]])
        sources = np.array([[1.5, 0.0], [6.0, 0.0]])
        comp = complete_distances(observations_for(nodes, sources))
        assert comp.lower[0, 1] == pytest.approx(4.0, abs=1e-12)
        assert comp.upper[0, 1] == pytest.approx(4.0, abs=1e-12)
        assert comp.d_hat[0, 1] == pytest.approx(4.0, abs=1e-12)

    def test_bounds_bracket_truth_and_match_scripted_oracle(self, rng):
        nodes = np.array([[0.0, 0.0], [4.0, 0.0]])
        sources = rng.uniform(0.0, 4.0, size=(200, 2))
        obs = observations_for(nodes, sources)
        comp = complete_distances(obs)
        # scripted re-evaluation of the bound formulas
        di, dj = obs.distances[0], obs.distances[1]
        lower = np.abs(di - dj).max()
        upper = (di + dj).min()
        assert comp.lower[0, 1] == pytest.approx(lower, abs=0)
        assert comp.upper[0, 1] == pytest.approx(upper, abs=0)
        assert lower <= 4.0 <= upper
        assert abs(comp.d_hat[0, 1] - 4.0) / 4.0 < 0.5

    def test_missing_pair_error_names_pair(self):
        valid = np.array(
            [
                [True, True, False, False],
                [False, False, True, True],
                [True, True, True, True],
            ]
        )
        obs = ObservationSet(np.ones((3, 4)), valid)
        with pytest.raises(DataError, match=r"\(0, 1\)"):
            complete_distances(obs)

    def test_missing_entries_shrink_candidate_set(self, rng):
        g = random_geometry(rng, n_nodes=3, n_sources=10)
        obs_full = observations_for(g.nodes, g.sources)
        valid = np.ones((3, 10), dtype=bool)
        valid[0, :5] = False
        obs_masked = ObservationSet(obs_full.distances, valid)
        full = complete_distances(obs_full)
        masked = complete_distances(obs_masked)
        assert (masked.lower <= full.lower + 1e-12).all()
        assert (masked.upper >= full.upper - 1e-12).all()

    def test_symmetry_and_zero_diagonal(self, rng):
        g = random_geometry(rng, n_nodes=5, n_sources=8)
        comp = complete_distances(observations_for(g.nodes, g.sources))
        for m in (comp.d_hat, comp.lower, comp.upper):
            assert np.array_equal(m, m.T)
            assert np.all(np.diag(m) == 0.0)


@settings(max_examples=40, deadline=None, derandomize=True)
@given(seed=st.integers(0, 2**31 - 1))
def test_property_bounds_sandwich_true_distance(seed):
    rng = np.random.default_rng(seed)
    g = random_geometry(rng, n_nodes=4, n_sources=6, min_sep=0.05)
    comp = complete_distances(observations_for(g.nodes, g.sources))
    true_d = pairwise_distances(g.nodes, g.nodes)
    off = ~np.eye(4, dtype=bool)
    assert (comp.lower[off] <= true_d[off] + 1e-9).all()
    assert (comp.upper[off] >= true_d[off] - 1e-9).all()


@settings(max_examples=25, deadline=None, derandomize=True)
@given(seed=st.integers(0, 2**31 - 1))
def test_property_more_sources_never_loosen_bounds(seed):
    rng = np.random.default_rng(seed)
    g = random_geometry(rng, n_nodes=4, n_sources=8, min_sep=0.05)
    obs = observations_for(g.nodes, g.sources)
    fewer = complete_distances(obs.restrict_sources(np.arange(5)))
    more = complete_distances(obs)
    assert (more.lower >= fewer.lower - 1e-12).all()
    assert (more.upper <= fewer.upper + 1e-12).all()


class TestClassicalMds:
    def test_unit_square_is_exactly_embeddable(self):
        corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        d = pairwise_distances(corners, corners)
        coords = classical_mds(d)
        rebuilt = pairwise_distances(coords, coords)
        assert np.abs(rebuilt - d).max() < 1e-9

    def test_output_is_centered(self, rng):
        g = random_geometry(rng, n_nodes=6, n_sources=1)
        d = pairwise_distances(g.nodes, g.nodes)
        coords = classical_mds(d)
        assert np.abs(coords.mean(axis=0)).max() < 1e-9

    def test_collinear_points_raise(self):
        line = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
        d = pairwise_distances(line, line)
        with pytest.raises(NumericalError):
            classical_mds(d)

    def test_perturbed_matrix_matches_independent_eigensolver(self, rng):
        g = random_geometry(rng, n_nodes=5, n_sources=12)
        comp = complete_distances(observations_for(g.nodes, g.sources))
        d = comp.d_hat  # generally non-Euclidean
        coords = classical_mds(d)

        # independent reconstruction via scipy's symmetric eigensolver
        n = d.shape[0]
        j = np.eye(n) - np.ones((n, n)) / n
        b = -0.5 * j @ (d**2) @ j
        evals, evecs = scipy.linalg.eigh(b)
        top = np.argsort(evals)[::-1][:2]
        expected = evecs[:, top] * np.sqrt(np.maximum(evals[top], 0.0))
        rebuilt = pairwise_distances(expected, expected)
        assert np.abs(pairwise_distances(coords, coords) - rebuilt).max() < 1e-6

    def test_validation_errors(self):
        with pytest.raises(DataError):
            classical_mds(np.array([[0.0, 1.0], [2.0, 0.0]]))  # not symmetric
        with pytest.raises(DataError):
            classical_mds(np.array([[1.0, 1.0], [1.0, 1.0]]))  # nonzero diagonal
        bad = np.array([[0.0, -1.0], [-1.0, 0.0]])
        with pytest.raises(DataError):
            classical_mds(bad)

    def test_rigid_motion_canonical_up_to_alignment(self, rng):
        g = random_geometry(rng, n_nodes=6, n_sources=1)
        theta = 0.83
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        moved = g.nodes @ rot.T + [3.0, -1.0]
        d1 = pairwise_distances(g.nodes, g.nodes)
        d2 = pairwise_distances(moved, moved)
        c1 = classical_mds(d1)
        c2 = classical_mds(d2)
        assert calibration_error(c2, c1) < 1e-9
