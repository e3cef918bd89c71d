import numpy as np
import pytest

from mocapfit.errors import DegenerateFacet, DepthViolation
from mocapfit.experiments import icosphere, random_closed_mesh
from mocapfit.visibility import (Ray, compute_visibility, facet_visibility,
                                 facet_visibility_accelerated, ray_facet_intersect, vertex_visibility)

import oracles

TRI = [(-1, -1, 2), (1, -1, 2), (0, 1, 2)]


def test_axis_ray_hits_plane():
    assert ray_facet_intersect(Ray(np.zeros(3), [0, 0, 1]), TRI) == pytest.approx(2.0, abs=1e-15)


def test_ray_behind_misses():
    assert ray_facet_intersect(Ray(np.zeros(3), [0, 0, -1]), TRI) is None


def test_degenerate_facet_raises():
    with pytest.raises(DegenerateFacet):
        ray_facet_intersect(Ray(np.zeros(3), [0, 0, 1]), [(0, 0, 1), (1, 0, 1), (2, 0, 1)])


def test_intersection_matches_moller_trumbore(rng):
    checked = 0
    while checked < 1000:
        tri = rng.normal(size=(3, 3)) + [0, 0, 3]
        d = rng.normal(size=3) * 0.3 + [0, 0, 1]
        d /= np.linalg.norm(d)
        hit, t, uv = oracles.moller_trumbore(d, tri)
        n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        n /= np.linalg.norm(n)
        if uv is None or abs(n @ d) < 1e-6:
            continue
        u, v = uv
        if min(abs(u), abs(v), abs(1 - u - v)) < 1e-6 or abs(t) < 1e-6:
            continue
        got = ray_facet_intersect(Ray(np.zeros(3), d), tri)
        assert (got is not None) == hit
        if hit:
            assert abs(got - t) < 1e-9
        checked += 1


def test_single_and_stacked_facets():
    V = np.array(TRI, float)
    assert facet_visibility(V, [[0, 1, 2]]).tolist() == [True]
    V2 = np.vstack([V, V * [1, 1, 2]])
    F = [[0, 1, 2], [3, 4, 5]]
    for fn in (facet_visibility, facet_visibility_accelerated):
        assert fn(V2, F).tolist() == [True, False]


def test_icosphere_backface_oracle(rng):
    for k in range(10):
        V, F = icosphere(k % 3, radius=rng.uniform(0.5, 1.5))
        V = V + [rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(4, 8)]
        expected = oracles.backface_visible(V, F)
        assert np.array_equal(facet_visibility(V, F), expected)
        assert np.array_equal(facet_visibility_accelerated(V, F), expected)


def test_accelerated_identical_on_random_meshes():
    rng = np.random.default_rng(7)
    for _ in range(10):
        V, F = random_closed_mesh(rng, 600)
        assert np.array_equal(facet_visibility(V, F), facet_visibility_accelerated(V, F))


def test_accelerated_single_facet():
    V = np.array(TRI, float)
    assert np.array_equal(facet_visibility_accelerated(V, [[0, 1, 2]]), facet_visibility(V, [[0, 1, 2]]))


def test_vertex_visibility_examples(rng):
    F = np.array([[0, 1, 2], [2, 3, 4], [4, 5, 0]])
    assert vertex_visibility(np.ones(3, bool), F, 6).vertex.all()
    assert not vertex_visibility(np.zeros(3, bool), F, 7).vertex.any()
    for _ in range(20):
        flags = rng.random(3) < 0.5
        got = vertex_visibility(flags, F, 7).vertex
        expected = [any(flags[f] for f in range(3) if i in F[f]) for i in range(7)]
        assert got.tolist() == expected


def test_visibility_scale_invariant():
    rng = np.random.default_rng(3)
    V, F = random_closed_mesh(rng, 300)
    assert np.array_equal(facet_visibility(V, F), facet_visibility(V * 2.5, F))


def test_deleting_a_facet_never_hides_another():
    rng = np.random.default_rng(5)
    V, F = random_closed_mesh(rng, 200)
    base = facet_visibility(V, F)
    for drop in rng.choice(len(F), 10, replace=False):
        keep = np.arange(len(F)) != drop
        assert np.all(facet_visibility(V, F[keep]) >= base[keep])


def test_depth_violation_propagates():
    V = np.array([(0, 0, -1), (1, 0, -1), (0, 1, -1)], float)
    with pytest.raises(DepthViolation):
        compute_visibility(V, [[0, 1, 2]])
