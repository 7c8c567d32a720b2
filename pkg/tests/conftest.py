import numpy as np
import pytest

from garde import Geometry, ObservationSet, pairwise_distances


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_geometry(rng, n_nodes=4, n_sources=5, box=5.0, min_sep=0.3):
    """Random geometry with a minimum pairwise separation (rejection sampled)."""
    points = []
    while len(points) < n_nodes + n_sources:
        cand = rng.uniform(0.0, box, 2)
        if all(np.linalg.norm(cand - p) >= min_sep for p in points):
            points.append(cand)
    pts = np.asarray(points)
    return Geometry(nodes=pts[:n_nodes], sources=pts[n_nodes:])


def exact_observations(geometry) -> ObservationSet:
    return ObservationSet(pairwise_distances(geometry.nodes, geometry.sources))
