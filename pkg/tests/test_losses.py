import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mocapfit import losses as L
from mocapfit.camera import CameraParams, ImageGeometry, project
from mocapfit.errors import ConfigurationError, EmptyObservation

import oracles


def test_keypoint_examples(rng):
    obs = rng.normal(size=(8, 2))
    assert L.keypoint_loss(obs, obs) == 0.0
    pred = obs.copy()
    pred[2] += [3, 4]
    assert L.keypoint_loss(pred, obs) == pytest.approx(25.0, abs=1e-12)
    for _ in range(100):
        p, o = rng.normal(size=(8, 2)) * 50, rng.normal(size=(8, 2)) * 50
        present = rng.random(8) < 0.8
        present[0] = True
        assert abs(L.keypoint_loss(p, o, present) - oracles.keypoint_oracle(p, o, present)) < 1e-12 * max(1, oracles.keypoint_oracle(p, o, present))


def test_keypoint_absent_and_empty():
    obs = np.zeros((2, 2))
    pred = np.array([[1.0, 0.0], [100.0, 0.0]])
    assert L.keypoint_loss(pred, obs, [True, False]) == 1.0
    with pytest.raises(EmptyObservation):
        L.keypoint_loss(pred, obs, [False, False])


def test_bilinear_examples(rng):
    field = rng.normal(size=(5, 6, 2))
    np.testing.assert_array_equal(L.bilinear_sample(field, (3, 2)), field[2, 3])
    const = np.full((4, 4, 2), 1.5)
    np.testing.assert_allclose(L.bilinear_sample(const, rng.uniform(0, 3, 2)), [1.5, 1.5], atol=1e-15)
    np.testing.assert_allclose(L.bilinear_sample(field, (2.5, 1)), 0.5 * (field[1, 2] + field[1, 3]), atol=1e-15)


def test_bilinear_matches_oracle(rng):
    field = rng.normal(size=(7, 9, 2))
    for u, v in rng.uniform(-2, 11, (200, 2)):
        np.testing.assert_allclose(L.bilinear_sample(field, (u, v)), oracles.bilinear_oracle(field, u, v), atol=1e-12)


def _motion_instance(rng, n=30, size=32):
    geom = ImageGeometry(size, size)
    V1 = rng.normal(size=(n, 3)) * 0.3 + [0, 0, 3]
    V2 = V1 + rng.normal(size=(n, 3)) * 0.01
    c1 = CameraParams(40.0, tuple(rng.uniform(-0.1, 0.1, 3)), tuple(rng.uniform(-0.1, 0.1, 2)))
    c2 = CameraParams(40.0, tuple(rng.uniform(-0.1, 0.1, 3)), tuple(rng.uniform(-0.1, 0.1, 2)))
    flow = rng.normal(size=(size, size, 2))
    vis = rng.random(n) < 0.7
    return V1, V2, c1, c2, geom, flow, vis


def test_motion_matches_oracle(rng):
    for _ in range(100):
        V1, V2, c1, c2, geom, flow, vis = _motion_instance(rng)
        got = L.motion_loss(V1, V2, c1, c2, geom, flow, vis)
        uv1, uv2 = project(V1, c1, geom), project(V2, c2, geom)
        assert abs(got - oracles.motion_oracle(uv1, uv2, flow, vis, 32, 32)) < 1e-10


def test_motion_static_and_empty(rng):
    V1, _, c1, _, geom, _, vis = _motion_instance(rng)
    assert L.motion_loss(V1, V1, c1, c1, geom, np.zeros((32, 32, 2)), vis) == 0.0
    loss, empty = L.motion_loss(V1, V1, c1, c1, geom, np.zeros((32, 32, 2)), np.zeros(len(V1), bool), return_flag=True)
    assert loss == 0.0 and empty


def test_motion_permutation_invariant(rng):
    V1, V2, c1, c2, geom, flow, vis = _motion_instance(rng)
    perm = rng.permutation(len(V1))
    a = L.motion_loss(V1, V2, c1, c2, geom, flow, vis)
    b = L.motion_loss(V1[perm], V2[perm], c1, c2, geom, flow, vis[perm])
    assert abs(a - b) < 1e-12


def test_image_chamfer_examples():
    m = np.zeros((6, 6), bool)
    m[0, 0] = True
    assert L.image_chamfer(m)[4, 3] == 5.0
    assert not L.image_chamfer(np.ones((3, 4), bool)).any()
    with pytest.raises(EmptyObservation):
        L.image_chamfer(np.zeros((3, 3), bool))


def test_image_chamfer_brute_force(rng):
    for _ in range(5):
        h, w = rng.integers(2, 24, 2)
        m = rng.random((h, w)) < rng.uniform(0.02, 0.3)
        m[rng.integers(h), rng.integers(w)] = True
        np.testing.assert_allclose(L.image_chamfer(m), oracles.chamfer_oracle(m), atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(arrays(bool, st.tuples(st.integers(2, 12), st.integers(2, 12))))
def test_image_chamfer_lipschitz(m):
    if not m.any():
        return
    C = L.image_chamfer(m)
    h, w = m.shape
    P = L.pixel_centers((h, w))
    d = np.linalg.norm(P[:, None] - P[None], axis=2)
    assert np.all(np.abs(C.ravel()[:, None] - C.ravel()[None]) <= d + 1e-12)
    assert np.all(C[m] == 0)


def test_model_distance_examples(rng):
    geom = ImageGeometry(5, 4)
    D, _ = L.model_distance_map([[2.0, 1.0]], geom)
    assert D[1, 2] == 0.0 and D[1, 4] == 2.0
    D, _ = L.model_distance_map([[0.5, 0.0]], ImageGeometry(2, 2))
    assert D[0, 0] == 0.5 and D[0, 1] == 0.5
    for _ in range(20):
        pts = rng.uniform(-2, 12, (rng.integers(1, 15), 2))
        D, _ = L.model_distance_map(pts, ImageGeometry(11, 9))
        np.testing.assert_allclose(D, oracles.distance_map_oracle(pts, 11, 9), atol=1e-12)
    with pytest.raises(EmptyObservation):
        L.model_distance_map(np.zeros((0, 2)), geom)


def test_model_chamfer_literal_formulas():
    D = np.array([0.0, 0.3, 0.5, 2.0])
    C, S = L.model_chamfer(D)
    np.testing.assert_array_equal(C, [0.5, 0.5, 0.5, 2.0])
    np.testing.assert_allclose(S, [0.5, 0.8, 0.5, 0.5], atol=1e-15)


def test_seg_loss_oracle_and_errors(rng):
    for _ in range(20):
        h, w = rng.integers(2, 10, 2)
        SM, CI, SI, CM = (rng.random((h, w)) for _ in range(4))
        assert abs(L.seg_loss(SM, CI, SI, CM) - oracles.seg_loss_oracle(SM, CI, SI, CM)) < 1e-9
    with pytest.raises(ConfigurationError):
        L.seg_loss(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)), np.zeros((2, 2)))


def test_seg_loss_background_image_is_positive():
    geom = ImageGeometry(8, 8)
    SI = np.zeros((8, 8), bool)
    SI[0, 0] = True
    CI = L.image_chamfer(SI)
    loss, _, _ = L.seg_chamfer_terms([[5.0, 5.0]], SI, geom, CI)
    assert loss > 0


def test_seg_proj_examples(rng):
    fg = np.array([[1.0, 1.0], [2.0, 1.0]])
    assert L.seg_proj_loss(fg, fg) == 0.0
    assert L.seg_proj_loss([[0.0, 0.0]], [[1.0, 0.0]]) == 2.0
    for _ in range(50):
        p, q = rng.uniform(0, 20, (rng.integers(1, 30), 2)), rng.uniform(0, 20, (rng.integers(1, 30), 2))
        assert abs(L.seg_proj_loss(p, q) - oracles.seg_proj_oracle(p, q)) < 1e-10 * max(1, oracles.seg_proj_oracle(p, q))
    with pytest.raises(EmptyObservation):
        L.seg_proj_loss(np.zeros((0, 2)), fg)


def test_seg_proj_roles_swap(rng):
    p, q = rng.uniform(0, 9, (7, 2)), rng.uniform(0, 9, (11, 2))
    _, _, (a, b) = L.seg_proj_terms(p, q)
    over = np.sum((p - q[a]) ** 2)
    under = np.sum((q - p[b]) ** 2)
    _, _, (c, d) = L.seg_proj_terms(q, p)
    assert np.isclose(np.sum((q - p[c]) ** 2), under) and np.isclose(np.sum((p - q[d]) ** 2), over)


def test_point_gradients_match_differences(rng):
    pts = rng.uniform(1, 14, (12, 2))
    mask = rng.random((16, 16)) < 0.3
    mask[4, 4] = True
    geom = ImageGeometry(16, 16)
    CI = L.image_chamfer(mask)
    fg = L.foreground_centers(mask)
    _, g_proj, assign = L.seg_proj_terms(pts, fg)
    _, g_ch, maps = L.seg_chamfer_terms(pts, mask, geom, CI)
    h = 1e-6
    for i in range(len(pts)):
        for d in range(2):
            E = np.zeros_like(pts)
            E[i, d] = h
            num = (L.seg_proj_terms(pts + E, fg, assign)[0] - L.seg_proj_terms(pts - E, fg, assign)[0]) / (2 * h)
            assert abs(num - g_proj[i, d]) < 1e-5
            num = (L.seg_chamfer_terms(pts + E, mask, geom, CI, maps.argmin)[0]
                   - L.seg_chamfer_terms(pts - E, mask, geom, CI, maps.argmin)[0]) / (2 * h)
            assert abs(num - g_ch[i, d]) < 1e-4


def test_half_resolution_mapping():
    # full pixels 2j and 2j+1 average to 2j + 0.5, which maps to half pixel j
    np.testing.assert_allclose(L.to_half([[0.5, 2.5]]), [[0.0, 1.0]])
    m = np.zeros((4, 4), bool)
    m[0:2, 0] = True
    m[2, 2] = True
    assert L.half_mask(m).tolist() == [[True, False], [False, False]]
