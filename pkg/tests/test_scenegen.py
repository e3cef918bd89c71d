from dataclasses import replace

import numpy as np
import pytest

from mocapfit.camera import CameraParams, ImageGeometry, project, to_camera
from mocapfit.errors import ConfigurationError
from mocapfit.scenegen import (SceneSpec, perturb_observations, rasterize, rasterize_flow,
                               rasterize_mask, sample_scene)

import oracles
from conftest import SMALL

CAM = CameraParams(1.0, (0, 0, 0), (0, 0))


def _plane(points_px, geom, depth=2.0):
    """Model-space points at one depth that project to the given pixel positions (f = 1)."""
    P = np.asarray(points_px, float)
    x = (P[:, 0] - geom.cx) * depth
    y = (P[:, 1] - geom.cy) * depth
    return np.column_stack([x, y, np.full(len(P), depth)])


def test_sample_scene_deterministic(model):
    a = sample_scene(model, replace(SMALL, seed=11))
    b = sample_scene(model, replace(SMALL, seed=11))
    assert np.array_equal(a.params, b.params)
    assert np.array_equal(a.obs.flow, b.obs.flow)
    for fa, fb in zip(a.obs.frames, b.obs.frames):
        assert np.array_equal(fa.segmentation, fb.segmentation)
        assert np.array_equal(fa.keypoints, fb.keypoints)


def test_scene_invariants_over_seeds(model):
    for seed in range(20):
        sc = sample_scene(model, replace(SMALL, seed=seed))
        assert sc.params.shape == (sc.layout.size,)
        assert np.all(np.isfinite(sc.obs.flow))
        for (body, cam), fr, X in zip(sc.frames, sc.obs.frames, sc.vertices):
            assert cam.focal > 0 and np.all(np.linalg.norm(body.pose, axis=1) < np.pi)
            assert fr.segmentation.any()
            assert np.all(to_camera(X, cam)[:, 2] > 1e-4)


def test_full_frame_triangle_is_all_foreground():
    geom = ImageGeometry(10, 8)
    V = _plane([(-50, -50), (100, -50), (-50, 100)], geom)
    assert rasterize_mask(V, [[0, 1, 2]], CAM, geom).all()


def test_union_mask_ignores_occlusion():
    geom = ImageGeometry(16, 16)
    square = [(3.3, 3.3), (10.7, 3.3), (10.7, 10.7), (3.3, 10.7)]
    front = _plane(square, geom, 2.0)
    small = _plane([(5.2, 5.2), (8.8, 5.2), (8.8, 8.8), (5.2, 8.8)], geom, 5.0)
    F = [[0, 1, 2], [0, 2, 3]]
    both = rasterize_mask(np.vstack([front, small]), F + [[4, 5, 6], [4, 6, 7]], CAM, geom)
    assert np.array_equal(both, rasterize_mask(front, F, CAM, geom))


def test_raster_matches_brute_force(rng):
    geom = ImageGeometry(20, 18)
    for _ in range(5):
        uv = rng.uniform(-3, 22, (9, 2))
        depth = rng.uniform(2, 5, 9)
        F = np.array([rng.choice(9, 3, replace=False) for _ in range(6)])
        ids, bary = rasterize(uv, depth, F, geom)
        o_ids, o_bary, amb = oracles.raster_oracle(uv, depth, F, 20, 18)
        ok = ~amb
        assert np.array_equal(ids[ok], o_ids[ok])
        np.testing.assert_allclose(bary[ok], o_bary[ok], atol=1e-9)


def test_shared_edge_claimed_once():
    geom = ImageGeometry(8, 8)
    uv = np.array([(1.0, 1.0), (6.0, 1.0), (6.0, 6.0), (1.0, 6.0)])
    F = np.array([[0, 1, 2], [0, 2, 3]])
    ids, _ = rasterize(uv, np.full(4, 2.0), F, geom)
    diag = [(k, k) for k in range(1, 6)]
    # top-left rule: top and left edges are in, bottom and right edges out
    assert all(ids[r, c] >= 0 for r, c in diag)
    assert ids[1, 1:6].min() >= 0 and ids[6].max() < 0 and ids[:, 6].max() < 0
    counts = np.zeros((8, 8), int)
    for f in range(2):
        counts += rasterize(uv, np.full(4, 2.0), F[f:f + 1], geom)[0] >= 0
    assert counts.max() == 1


def test_mask_invariant_to_facet_order(model, small_scene, rng):
    body, cam = small_scene.frames[0]
    X = small_scene.vertices[0]
    perm = rng.permutation(len(model.facets))
    a = rasterize_mask(X, model.facets, cam, small_scene.obs.geom)
    b = rasterize_mask(X, model.facets[perm], cam, small_scene.obs.geom)
    assert np.array_equal(a, b)


def test_flow_static_is_zero(small_scene, model):
    body, cam = small_scene.frames[0]
    X = small_scene.vertices[0]
    flow = rasterize_flow(X, X, model.facets, cam, cam, small_scene.obs.geom)
    assert not flow.any()


def test_flow_of_translated_plane_is_constant():
    geom = ImageGeometry(16, 16)
    V1 = _plane([(2.2, 2.2), (12.7, 2.2), (2.2, 12.7)], geom)
    V2 = _plane([(4.2, 5.2), (14.7, 5.2), (4.2, 15.7)], geom)
    flow = rasterize_flow(V1, V2, [[0, 1, 2]], CAM, CAM, geom)
    fg = rasterize_mask(V1, [[0, 1, 2]], CAM, geom)
    np.testing.assert_allclose(flow[fg], np.tile([2.0, 3.0], (fg.sum(), 1)), atol=1e-12)
    assert not flow[~fg].any()


def test_flow_matches_barycentric_oracle(rng):
    geom = ImageGeometry(18, 18)
    for _ in range(4):
        V1 = rng.normal(size=(8, 3)) * [0.35, 0.35, 0.3] + [0, 0, 3]
        V2 = V1 + rng.normal(size=(8, 3)) * 0.02
        F = np.array([rng.choice(8, 3, replace=False) for _ in range(6)])
        cam = CameraParams(20.0, (0, 0, 0), (0, 0))
        flow = rasterize_flow(V1, V2, F, cam, cam, geom)
        uv1, uv2 = project(V1, cam, geom), project(V2, cam, geom)
        ids, bary, amb = oracles.raster_oracle(uv1, to_camera(V1, cam)[:, 2], F, 18, 18)
        for r in range(18):
            for c in range(18):
                if amb[r, c]:
                    continue
                expected = np.zeros(2) if ids[r, c] < 0 else bary[r, c] @ (uv2 - uv1)[F[ids[r, c]]]
                np.testing.assert_allclose(flow[r, c], expected, atol=1e-9)


def test_flow_at_vertex_pixel_equals_vertex_motion():
    geom = ImageGeometry(16, 16)
    # corner on a top and a left edge, so its pixel is owned
    V1 = _plane([(3.0, 3.0), (12.0, 3.0), (3.0, 12.0)], geom)
    V2 = V1 + [[0.02, 0.01, 0.0], [-0.01, 0.03, 0.05], [0.0, -0.02, 0.1]]
    assert rasterize_mask(V1, [[0, 1, 2]], CAM, geom)[3, 3]
    flow = rasterize_flow(V1, V2, [[0, 1, 2]], CAM, CAM, geom)
    d = project(V2, CAM, geom) - project(V1, CAM, geom)
    np.testing.assert_allclose(flow[3, 3], d[0], atol=1e-6)


def test_flow_margin_extends_motion(small_scene, model):
    (b1, c1), (b2, c2) = small_scene.frames
    X1, X2 = small_scene.vertices
    geom = small_scene.obs.geom
    plain = rasterize_flow(X1, X2, model.facets, c1, c2, geom)
    wide = rasterize_flow(X1, X2, model.facets, c1, c2, geom, margin=2)
    fg = small_scene.obs.frames[0].segmentation
    assert np.array_equal(plain[fg], wide[fg])
    assert np.abs(wide[~fg]).sum() > 0 and not plain[~fg].any()


def test_keypoint_noise_statistics(model):
    spec = replace(SMALL, seed=2, noise_kpt=2.0)
    clean = sample_scene(model, replace(spec, noise_kpt=0.0))
    diffs = []
    for seed in range(63):
        sc = perturb_observations(replace(clean, spec=replace(spec, seed=seed)), replace(spec, seed=seed))
        diffs.append(np.concatenate([(f.keypoints - g.keypoints).ravel() for f, g in zip(sc.obs.frames, clean.obs.frames)]))
    sd = np.concatenate(diffs)[:1000].std()
    assert 1.6 <= sd <= 2.4


def test_mask_morphology(model):
    base = sample_scene(model, replace(SMALL, seed=4))
    dil = perturb_observations(base, replace(SMALL, seed=4, mask_ops=1))
    ero = perturb_observations(base, replace(SMALL, seed=4, mask_ops=-1))
    for b, d, e in zip(base.obs.frames, dil.obs.frames, ero.obs.frames):
        assert np.all(d.segmentation >= b.segmentation) and d.segmentation.sum() > b.segmentation.sum()
        assert np.all(e.segmentation <= b.segmentation)
    assert perturb_observations(base, replace(SMALL, seed=4)) is base


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        SceneSpec(frames=3)
    with pytest.raises(ConfigurationError):
        SceneSpec(pose_range=1.9)
    with pytest.raises(ConfigurationError):
        SceneSpec(noise_kpt=-1)
