"""Flat parameter layout, the weighted total loss, and its analytic gradient.

Layout of a ParamVector (shared shape, the default)::

    [shape (M)] + per frame [pose (3J), alpha, beta_e, gamma, T_x, T_y, f]

With ``shared_shape=False`` every frame carries its own leading shape block:
``per frame [shape (M), pose (3J), alpha, beta_e, gamma, T_x, T_y, f]``.

Gradients are computed by a hand-written reverse pass. Quantities that are
not differentiable (vertex visibility, nearest-neighbour assignments, the
flow-sampling mask and bilinear cells) are computed once at the evaluation
point and held fixed in an ``EvalState``; passing that state back in lets
finite differences probe the very same piecewise-smooth function.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from .camera import CameraParams, project, project_backward, to_camera, check_depth
from .errors import ConfigurationError, EmptyObservation
from .mesh import BodyParams, joints3d, mesh_vertices, mesh_vertices_backward
from .visibility import compute_visibility

CAMERA_FIELDS = ("alpha", "beta_e", "gamma", "T_x", "T_y", "f")
SEG_SAMPLES = 8


@dataclass(frozen=True)
class ParamLayout:
    n_shape: int
    n_joints: int
    n_frames: int = 1
    shared_shape: bool = True

    @classmethod
    def for_model(cls, model, n_frames=1, shared_shape=True):
        return cls(model.n_shape, model.joint_count, n_frames, shared_shape)

    @property
    def frame_size(self):
        return 3 * self.n_joints + 6 + (0 if self.shared_shape else self.n_shape)

    @property
    def size(self):
        return (self.n_shape if self.shared_shape else 0) + self.n_frames * self.frame_size

    def slices(self, frame):
        """Named slices into the flat vector for one frame."""
        if not 0 <= frame < self.n_frames:
            raise ConfigurationError(f"frame {frame} out of range")
        M, P = self.n_shape, 3 * self.n_joints
        if self.shared_shape:
            start = M + frame * self.frame_size
            shape = slice(0, M)
        else:
            start = frame * self.frame_size
            shape = slice(start, start + M)
            start += M
        return {
            "shape": shape,
            "pose": slice(start, start + P),
            "euler": slice(start + P, start + P + 3),
            "translation": slice(start + P + 3, start + P + 5),
            "focal": slice(start + P + 5, start + P + 6),
            "camera": slice(start + P, start + P + 6),
        }

    def blocks(self):
        """(name, slice) pairs covering the whole vector without overlap."""
        out = []
        if self.shared_shape:
            out.append(("shape", slice(0, self.n_shape)))
        for fr in range(self.n_frames):
            sl = self.slices(fr)
            names = ["pose", "euler", "translation", "focal"]
            if not self.shared_shape:
                names.insert(0, "shape")
            out.extend((f"{name}[{fr}]", sl[name]) for name in names)
        return out


def pack(layout, frames):
    """Flatten a sequence of ``(BodyParams, CameraParams)`` into a ParamVector."""
    if len(frames) != layout.n_frames:
        raise ConfigurationError(f"expected {layout.n_frames} frames, got {len(frames)}")
    pv = np.empty(layout.size)
    for fr, (body, cam) in enumerate(frames):
        if body.shape.shape[0] != layout.n_shape or body.pose.shape[0] != layout.n_joints:
            raise ConfigurationError("body parameter dimensions do not match the layout")
        sl = layout.slices(fr)
        if layout.shared_shape and fr > 0 and not np.array_equal(body.shape, pv[sl["shape"]]):
            raise ConfigurationError("shared-shape layout needs identical shape coefficients in every frame")
        pv[sl["shape"]] = body.shape
        pv[sl["pose"]] = body.pose.ravel()
        pv[sl["camera"]] = cam.as_array()
    return pv


def unpack(layout, pv):
    """Inverse of ``pack``; validates length, finiteness and f > 0."""
    pv = np.asarray(pv, dtype=float)
    if pv.shape != (layout.size,):
        raise ConfigurationError(f"parameter vector has shape {pv.shape}, layout needs ({layout.size},)")
    frames = []
    for fr in range(layout.n_frames):
        sl = layout.slices(fr)
        body = BodyParams(pv[sl["shape"]], pv[sl["pose"]].reshape(-1, 3))
        cam = CameraParams.from_array(pv[sl["camera"]])
        frames.append((body, cam))
    return frames


@dataclass(frozen=True)
class LossWeights:
    keypoint: float = 1.0
    motion: float = 1.0
    seg: float = 1.0
    seg_mode: str = "proj"              # "proj" or "chamfer"
    keypoint_mean: bool = False
    motion_through_sample: bool = True

    def __post_init__(self):
        if self.seg_mode not in ("proj", "chamfer"):
            raise ConfigurationError(f"seg_mode must be 'proj' or 'chamfer', got {self.seg_mode!r}")
        for name in ("keypoint", "motion", "seg"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"loss weight {name} must be nonnegative")

    @classmethod
    def from_names(cls, names, **kw):
        """Unit weights for the listed losses (``kpt``, ``motion``, ``seg``), zero elsewhere."""
        if isinstance(names, str):
            names = [s for s in names.split(",") if s]
        names = set(names)
        unknown = names - {"kpt", "motion", "seg"}
        if unknown:
            raise ConfigurationError(f"unknown loss names {sorted(unknown)}; valid: kpt, motion, seg")
        return cls(keypoint=float("kpt" in names), motion=float("motion" in names), seg=float("seg" in names), **kw)


@dataclass
class EvalState:
    """Non-differentiable quantities frozen at one evaluation point."""

    visibility: list
    seg_assign: list
    motion_mask: np.ndarray | None = None
    motion_cells: tuple | None = None
    facet_visibility: list | None = None


class Problem:
    """A body model, its observations, a parameter layout and loss weights."""

    def __init__(self, model, obs, weights=None, shared_shape=True, accelerated_visibility=True,
                 seg_samples=SEG_SAMPLES):
        self.model = model
        self.seg_samples = seg_samples
        self._bary = facet_samples(seg_samples)
        self._sample_cache = {}
        self.obs = obs
        self.weights = weights or LossWeights()
        self.layout = ParamLayout.for_model(model, len(obs.frames), shared_shape)
        self.accelerated_visibility = accelerated_visibility
        self.half_geom = obs.geom.half()
        self._half_masks = [L.half_mask(fr.segmentation) for fr in obs.frames]
        self._fg = [L.foreground_centers(m) for m in self._half_masks]
        self._chamfer = [None] * len(obs.frames)

    def with_weights(self, weights):
        p = Problem.__new__(Problem)
        p.__dict__.update(self.__dict__)
        p.weights = weights
        return p

    def image_chamfer(self, fr):
        if self._chamfer[fr] is None:
            self._chamfer[fr] = L.image_chamfer(self._half_masks[fr])
        return self._chamfer[fr]

    @property
    def uses_motion(self):
        return self.weights.motion > 0 and self.obs.flow is not None and self.layout.n_frames >= 2


def facet_samples(level):
    """Barycentric sample weights strictly off the corners of a facet.

    ``level`` k places points on the k-subdivided barycentric grid; corners
    are excluded because they are the vertices themselves. Level 0 or 1
    yields no extra samples.
    """
    out = []
    for i in range(level + 1):
        for j in range(level + 1 - i):
            k = level - i - j
            if max(i, j, k) < level:
                out.append((i / level, j / level, k / level))
    return np.array(out).reshape(-1, 3)


def _sample_matrix(n, vis_vertex, facets, bary):
    verts = np.flatnonzero(vis_vertex)
    rows = [np.eye(n)[verts]] if verts.size else [np.zeros((0, n))]
    if len(bary) and len(facets):
        W = np.zeros((len(facets) * len(bary), n))
        r = np.arange(len(W))
        for c in range(3):
            np.add.at(W, (r, np.repeat(facets[:, c], len(bary))), np.tile(bary[:, c], len(facets)))
        rows.append(W)
    return np.vstack(rows)


def segmentation_points(problem, uv, vis_vertex, vis_facet):
    """Projected points used by the segmentation losses and their linear map.

    Returns ``(points (P, 2), weights (P, n))`` where ``points = weights @ uv``:
    the visible vertices followed by barycentric samples on visible facets.
    The map depends only on the visibility pattern and is cached on it.
    """
    vis_vertex = np.asarray(vis_vertex, dtype=bool)
    vis_facet = np.asarray(vis_facet, dtype=bool)
    key = (vis_vertex.tobytes(), vis_facet.tobytes())
    cache = problem._sample_cache
    W = cache.get(key)
    if W is None:
        if len(cache) >= 16:
            cache.pop(next(iter(cache)))
        W = cache[key] = _sample_matrix(len(uv), vis_vertex, problem.model.facets[vis_facet], problem._bary)
    return W @ uv, W


@dataclass
class Evaluation:
    loss: float
    grad: np.ndarray | None
    state: EvalState
    parts: dict = field(default_factory=dict)
    signature: np.ndarray | None = None


def _forward_frames(problem, pv):
    out = []
    for body, cam in unpack(problem.layout, pv):
        X = mesh_vertices(problem.model, body)
        Xc = to_camera(X, cam)
        check_depth(Xc)
        joints = joints3d(X, problem.model.joint_regressor)
        out.append({
            "body": body, "cam": cam, "X": X, "Xc": Xc,
            "uv": project(X, cam, problem.obs.geom),
            "joints": joints,
            "kuv": project(joints, cam, problem.obs.geom),
        })
    return out


def evaluate(pv, problem, state=None, need_grad=True):
    """Weighted total loss (and gradient) at ``pv``.

    With ``state=None`` visibility and assignments are recomputed here and
    returned in ``Evaluation.state``; otherwise the given state is used as-is.
    """
    w = problem.weights
    geom = problem.obs.geom
    frames = _forward_frames(problem, pv)
    fresh = state is None
    if fresh:
        vis = [compute_visibility(fd["Xc"], problem.model.facets, problem.accelerated_visibility)
               for fd in frames]
        state = EvalState(visibility=[v.vertex for v in vis], seg_assign=[None] * len(frames),
                          facet_visibility=[v.facet for v in vis])
    g_uv = [np.zeros_like(fd["uv"]) for fd in frames]
    g_kuv = [np.zeros_like(fd["kuv"]) for fd in frames]
    parts = {"kpt": 0.0, "motion": 0.0, "seg": 0.0}
    sig = []

    if w.keypoint > 0:
        for fr, fd in enumerate(frames):
            obs = problem.obs.frames[fr]
            val, g = L.keypoint_terms(fd["kuv"], obs.keypoints, obs.present, w.keypoint_mean)
            parts["kpt"] += val
            g_kuv[fr] += w.keypoint * g

    if problem.uses_motion:
        uv1, uv2 = frames[0]["uv"], frames[1]["uv"]
        if fresh:
            state.motion_mask = state.visibility[0] & L.flow_sample_mask(uv1, geom)
            state.motion_cells = L.bilinear_cells(problem.obs.flow.shape, uv1)
        val, g1, g2, r = L.motion_terms(uv1, uv2, problem.obs.flow, state.motion_mask,
                                        state.motion_cells, w.motion_through_sample)
        parts["motion"] = val
        g_uv[0] += w.motion * g1
        g_uv[1] += w.motion * g2
        m = state.motion_mask
        sig.append(np.sign(r[m]).ravel())
        inside = (uv1[m] >= 0) & (uv1[m] <= np.array([geom.width - 1, geom.height - 1]))
        sig.append(inside.ravel().astype(float))

    if w.seg > 0:
        for fr, fd in enumerate(frames):
            vis = state.visibility[fr]
            if not vis.any():
                continue
            pts, W = segmentation_points(problem, fd["uv"], vis, state.facet_visibility[fr])
            pts = L.to_half(pts)
            if w.seg_mode == "proj":
                if len(problem._fg[fr]) == 0:
                    raise EmptyObservation(f"frame {fr}: segmentation has no foreground at half resolution")
                val, g, assign = L.seg_proj_terms(pts, problem._fg[fr], state.seg_assign[fr])
            else:
                val, g, maps = L.seg_chamfer_terms(pts, problem._half_masks[fr], problem.half_geom,
                                                   problem.image_chamfer(fr), state.seg_assign[fr])
                assign = maps.argmin
                d = maps.distance.ravel()
                sig.append(np.sign(d - 0.5))
            if fresh:
                state.seg_assign[fr] = assign
            parts["seg"] += val
            g_uv[fr] += w.seg * 0.5 * (W.T @ g)

    loss = w.keypoint * parts["kpt"] + w.motion * parts["motion"] + w.seg * parts["seg"]
    signature = np.concatenate(sig) if sig else np.zeros(0)
    if not need_grad:
        return Evaluation(loss, None, state, parts, signature)

    layout = problem.layout
    grad = np.zeros(layout.size)
    A = problem.model.joint_regressor
    for fr, fd in enumerate(frames):
        sl = layout.slices(fr)
        gX, gcam = project_backward(fd["X"], fd["cam"], g_uv[fr])
        gJ, gcam_k = project_backward(fd["joints"], fd["cam"], g_kuv[fr])
        gX = gX + A.T @ gJ
        g_shape, g_pose = mesh_vertices_backward(problem.model, fd["body"], gX)
        grad[sl["shape"]] += g_shape
        grad[sl["pose"]] += g_pose.ravel()
        grad[sl["camera"]] += gcam + gcam_k
    return Evaluation(loss, grad, state, parts, signature)


def total_loss(pv, problem, state=None):
    return evaluate(pv, problem, state, need_grad=False).loss


def loss_gradient(pv, problem, state=None):
    return evaluate(pv, problem, state, need_grad=True).grad


def finite_diff(fun, pv, h=1e-5):
    """Central differences of a scalar function along each coordinate."""
    if h <= 0:
        raise ConfigurationError("finite-difference step must be positive")
    p = np.array(pv, dtype=float)
    g = np.empty_like(p)
    for i in range(len(p)):
        old = p[i]
        p[i] = old + h
        fp = fun(p)
        p[i] = old - h
        fm = fun(p)
        p[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g


def frozen_loss(problem, pv):
    """``(fun, evaluation)``: the loss as a function of parameters with the
    non-differentiable state frozen at ``pv``."""
    ev = evaluate(pv, problem)
    state = ev.state

    def fun(p):
        return evaluate(p, problem, state, need_grad=False).loss

    return fun, ev


def block_relative_errors(layout, analytic, numeric, floor=1e-8):
    """Relative error per named block: |a - n| / max(|n|, |a|, floor)."""
    out = {}
    for name, sl in layout.blocks():
        a, n = analytic[sl], numeric[sl]
        denom = max(np.linalg.norm(n), np.linalg.norm(a), floor)
        out[name] = float(np.linalg.norm(a - n) / denom)
    return out


def gradcheck_point(problem, pv, h=1e-5):
    """Compare the analytic gradient with frozen-state central differences.

    Returns ``(errors per block, boundary)`` where ``boundary`` is True when
    some probe crossed an L1 sign change or a distance-threshold switch.
    """
    ev = evaluate(pv, problem)
    state = ev.state
    p = np.array(pv, dtype=float)
    g = np.empty_like(p)
    boundary = False
    for i in range(len(p)):
        old = p[i]
        vals = []
        for step in (h, -h):
            p[i] = old + step
            probe = evaluate(p, problem, state, need_grad=False)
            if probe.signature.shape != ev.signature.shape or np.any(probe.signature != ev.signature):
                boundary = True
            vals.append(probe.loss)
        p[i] = old
        g[i] = (vals[0] - vals[1]) / (2.0 * h)
    return block_relative_errors(problem.layout, ev.grad, g), boundary
