"""Experiment harness shared by the scripts, the CLI and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import SEG_SAMPLES, LossWeights, Problem, gradcheck_point
from .errors import DivergenceError, SceneGenError
from .fitting import (FinetuneConfig, FitConfig, fit_direct, observation_features, perturb,
                      pretrain_regressor, random_init, scene_metrics, selfsup_finetune)
from .scenegen import SceneSpec, rng_for, sample_scene

# stream ids for rng_for(seed, stream); 1 is observation noise in scenegen
PERTURB_STREAM = 3
INIT_STREAM = 2
GRADCHECK_STREAM = 4


# -- meshes for visibility checks ---------------------------------------------------

def uv_sphere(rings, segments):
    """Closed triangulated sphere (unit radius), facets counter-clockwise from outside."""
    verts = [(0.0, 0.0, 1.0)]
    for i in range(1, rings):
        th = np.pi * i / rings
        for j in range(segments):
            ph = 2 * np.pi * j / segments
            verts.append((np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)))
    verts.append((0.0, 0.0, -1.0))
    V = np.array(verts)
    S = segments

    def ring(i, j):
        return 1 + (i - 1) * S + (j % S)

    F = []
    for j in range(S):
        F.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, rings - 1):
        for j in range(S):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            F.append((a, c, d))
            F.append((a, d, b))
    last = len(V) - 1
    for j in range(S):
        F.append((ring(rings - 1, j), last, ring(rings - 1, j + 1)))
    return V, np.array(F)


def icosphere(subdivisions=0, radius=1.0):
    t = (1.0 + 5 ** 0.5) / 2.0
    V = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    V = [np.array(v, float) / np.linalg.norm(v) for v in V]
    F = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = V[a] + V[b]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        nf = []
        for a, b, c in F:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        F = nf
    return radius * np.array(V), np.array(F)


def random_closed_mesh(rng, max_facets=2000, depth=(3.0, 6.0)):
    """Random star-shaped closed mesh in front of the camera.

    A UV sphere with radial noise (so it self-occludes), random anisotropic
    scale and rotation, centred at a random depth; at most ``max_facets``
    facets.
    """
    segments = int(rng.integers(4, 40))
    rings = int(rng.integers(3, max(4, min(40, max_facets // (2 * segments) + 1))))
    while 2 * segments * (rings - 1) > max_facets and rings > 3:
        rings -= 1
    V, F = uv_sphere(rings, segments)
    V = V * rng.uniform(0.6, 1.4, (len(V), 1)) * rng.uniform(0.5, 1.5, 3)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                  [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                  [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])
    center = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(*depth)])
    return V @ R.T + center, F


# -- gradient certification ------------------------------------------------------------

GRADCHECK_SPEC = SceneSpec(width=64, height=64, focal_range=(80.0, 100.0))


def gradcheck_scene(model, weights, seed, trial=0, spec=GRADCHECK_SPEC, offset=0.02, h=1e-5,
                    max_resample=20, seg_samples=SEG_SAMPLES):
    """Worst-case block errors of analytic vs central-difference gradients.

    The check point is the scene's truth plus a small Gaussian offset, so the
    L1 residuals are off their kinks; draws whose probes cross a switching
    surface are redrawn. Returns ``(errors keyed by block, redraw count)``.
    """
    scene = sample_scene(model, replace(spec, seed=seed * 1000 + trial))
    problem = Problem(model, scene.obs, weights, seg_samples=seg_samples)
    rng = rng_for(seed * 1000 + trial, GRADCHECK_STREAM)
    for redraw in range(max_resample + 1):
        p = perturb(scene.layout, scene.params, offset, rng)
        errs, boundary = gradcheck_point(problem, p, h)
        if not boundary:
            return errs, redraw
    raise DivergenceError(f"no boundary-free draw after {max_resample} redraws", p)


# -- recovery / ablation ----------------------------------------------------------------

EXPERIMENT_SPEC = SceneSpec(width=128, height=128, focal_range=(160.0, 200.0), flow_margin=2)
# Gauss-Newton steps are already curvature-scaled, so the natural step is 1
EXPERIMENT_FIT = FitConfig(lr=1.0, iters=500, precondition="gauss_newton", refresh=10)
ABLATION = {
    "kpt": LossWeights(keypoint=1.0, motion=0.0, seg=0.0),
    "kpt+seg": LossWeights(keypoint=1.0, motion=0.0, seg=1e-3),
    "kpt+seg+motion": LossWeights(keypoint=1.0, motion=1.0, seg=1e-3),
}


@dataclass
class RecoveryResult:
    seed: int
    initial: float
    final: float
    iterations: int
    stopped: str

    @property
    def ratio(self):
        return self.final / self.initial


def recovery_run(model, seed, weights, cfg=None, spec=EXPERIMENT_SPEC, sigma=0.05):
    scene = sample_scene(model, replace(spec, seed=seed))
    init = perturb(scene.layout, scene.params, sigma, rng_for(seed, PERTURB_STREAM))
    cfg = replace(cfg or EXPERIMENT_FIT, weights=weights, log_every=10**9)
    e0 = scene_metrics(model, scene.layout, init, scene.params)["surface"]
    rep = fit_direct(model, scene.obs, init, cfg, truth=scene.params)
    return RecoveryResult(seed, e0, rep.metrics[-1][1]["surface"], len(rep.losses) - 1, rep.stopped)


def run_recovery(model, seeds=range(20), weights=None, cfg=None, spec=EXPERIMENT_SPEC, sigma=0.05):
    weights = weights or ABLATION["kpt+seg+motion"]
    return [recovery_run(model, s, weights, cfg, spec, sigma) for s in seeds]


def run_ablation(model, seeds=range(20), cfg=None, spec=EXPERIMENT_SPEC, configs=None):
    configs = configs or ABLATION
    return {name: run_recovery(model, seeds, w, cfg, spec) for name, w in configs.items()}


# -- learned predictor ------------------------------------------------------------------

def synthetic_dataset(model, spec, n, seed0=0):
    """``(features, targets, scenes)`` for ``n`` scenes with consecutive seeds."""
    feats, targets, scenes = [], [], []
    seed = seed0
    while len(scenes) < n:
        try:
            sc = sample_scene(model, replace(spec, seed=seed))
        except SceneGenError:
            seed += 1
            continue
        feats.append(observation_features(sc.obs))
        targets.append(sc.params)
        scenes.append(sc)
        seed += 1
    return np.array(feats), np.array(targets), scenes


@dataclass
class AdaptationConfig:
    train_scenes: int = 400
    test_scenes: int = 20
    train_spec: SceneSpec = field(default_factory=lambda: replace(EXPERIMENT_SPEC, frames=2))
    shift_pose_offset: float = 0.25
    weights: LossWeights = field(default_factory=lambda: ABLATION["kpt+seg+motion"])
    finetune: FinetuneConfig = field(default_factory=lambda: FinetuneConfig(lr=0.5, steps=60))
    direct: FitConfig = field(default_factory=lambda: EXPERIMENT_FIT)
    seed: int = 0


def run_adaptation(model, cfg=None):
    """Median surface error on shifted scenes: pretrained, finetuned, direct from random init."""
    cfg = cfg or AdaptationConfig()
    t0 = time.perf_counter()
    feats, targets, _ = synthetic_dataset(model, cfg.train_spec, cfg.train_scenes, seed0=100_000 + cfg.seed)
    reg, holdout = pretrain_regressor(feats, targets)
    test_spec = replace(cfg.train_spec, pose_offset=cfg.shift_pose_offset)
    tfeats, ttargets, tscenes = synthetic_dataset(model, test_spec, cfg.test_scenes, seed0=200_000 + cfg.seed)
    layout = tscenes[0].layout

    def errors(r):
        P = r.predict(tfeats)
        return [scene_metrics(model, layout, p, t)["surface"] for p, t in zip(P, ttargets)]

    pre = errors(reg)
    fcfg = replace(cfg.finetune, weights=cfg.weights)
    tuned, history = selfsup_finetune(reg, model, [sc.obs for sc in tscenes], fcfg)
    post = errors(tuned)
    direct = []
    dcfg = replace(cfg.direct, weights=cfg.weights, log_every=10**9)
    for i, sc in enumerate(tscenes):
        init = random_init(model, layout, sc.obs.geom, rng_for(sc.spec.seed, INIT_STREAM),
                           focal_range=cfg.train_spec.focal_range)
        try:
            rep = fit_direct(model, sc.obs, init, dcfg, truth=sc.params)
            direct.append(rep.metrics[-1][1]["surface"])
        except DivergenceError as exc:
            direct.append(scene_metrics(model, layout, exc.last_state, sc.params)["surface"])
    return {
        "holdout_mse": holdout,
        "pretrained": pre,
        "finetuned": post,
        "direct_random": direct,
        "history": history,
        "seconds": time.perf_counter() - t0,
    }
