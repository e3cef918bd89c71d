"""Synthetic ground truth: sampled parameters rendered to keypoints, masks and flow.

Rasterization samples pixel centers (pixel (u, v) covers [u - 0.5, u + 0.5) x
[v - 0.5, v + 0.5)). Each projected facet is reoriented to positive signed
area; a center exactly on an edge belongs to the facet for which that edge
runs with dv < 0, or dv == 0 and du > 0 (top and left edges, with v down).
Two facets sharing an edge traverse it in opposite directions, so a
shared-edge pixel is claimed exactly once.

Random draws use a Philox counter-based generator. Draw order for one
attempt of ``sample_scene``: shape (M), focal (1), then for frame 0 pose
(3J), Euler angles (3), translation jitter (2); for frame 1 the pose delta
(3J), Euler delta (3), translation delta (2). Observation noise uses the same
key with the counter jumped once, drawing keypoint noise frame by frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import autodiff
from .camera import CameraParams, ImageGeometry, project, to_camera, check_depth, Z_MIN
from .errors import ConfigurationError, DepthViolation, SceneGenError
from .losses import FrameObservations, SceneObservations
from .mesh import BodyParams, joints3d, mesh_vertices


def rng_for(seed, stream=0):
    bitgen = np.random.Philox(key=int(seed))
    if stream:
        bitgen = bitgen.jumped(stream)
    return np.random.Generator(bitgen)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    width: int = 256
    height: int = 256
    frames: int = 2
    shape_range: float = 1.0
    pose_range: float = 0.35
    euler_range: tuple = (0.15, 0.5, 0.15)
    translation_jitter: float = 0.05
    focal_range: tuple = (320.0, 400.0)
    pose_offset: float = 0.0
    motion_pose: float = 0.08
    motion_euler: float = 0.02
    motion_translation: float = 0.02
    noise_kpt: float = 0.0
    mask_ops: int = 0            # > 0 dilation rounds, < 0 erosion rounds
    flow_margin: int = 0

    def __post_init__(self):
        if self.frames not in (1, 2):
            raise ConfigurationError("frames must be 1 or 2")
        if self.focal_range[0] <= 0 or self.focal_range[1] < self.focal_range[0]:
            raise ConfigurationError("focal_range must be positive and ordered")
        if self.noise_kpt < 0:
            raise ConfigurationError("keypoint noise must be nonnegative")
        if self.pose_range < 0 or abs(self.pose_offset) + self.pose_range + self.motion_pose >= np.pi / np.sqrt(3):
            raise ConfigurationError("pose sampling range must keep |theta_j| < pi")

    @property
    def geom(self):
        return ImageGeometry(self.width, self.height)


@dataclass(frozen=True, eq=False)
class GroundTruthScene:
    spec: SceneSpec
    layout: autodiff.ParamLayout
    params: np.ndarray
    obs: SceneObservations
    vertices: tuple
    joints: tuple

    @property
    def frames(self):
        return autodiff.unpack(self.layout, self.params)


# -- rasterization -------------------------------------------------------------

def _edge(a, b, pu, pv):
    return (b[0] - a[0]) * (pv - a[1]) - (b[1] - a[1]) * (pu - a[0])


def _owns_edge(a, b):
    du, dv = b[0] - a[0], b[1] - a[1]
    return dv < 0 or (dv == 0 and du > 0)


def _facet_pixels(tri2d, geom):
    """Pixels covered by one projected triangle and their barycentric weights.

    Returns ``(rows, cols, bary (P, 3))`` with bary ordered as the input
    vertices; empty for degenerate triangles.
    """
    a, b, c = (np.asarray(p, dtype=float) for p in tri2d)
    area = _edge(a, b, c[0], c[1])
    order = (0, 1, 2)
    if area < 0:
        b, c = c, b
        area = -area
        order = (0, 2, 1)
    if area == 0:
        return np.zeros(0, int), np.zeros(0, int), np.zeros((0, 3))
    lo = np.minimum(np.minimum(a, b), c)
    hi = np.maximum(np.maximum(a, b), c)
    u0 = max(int(np.ceil(lo[0])), 0)
    u1 = min(int(np.floor(hi[0])), geom.width - 1)
    v0 = max(int(np.ceil(lo[1])), 0)
    v1 = min(int(np.floor(hi[1])), geom.height - 1)
    if u1 < u0 or v1 < v0:
        return np.zeros(0, int), np.zeros(0, int), np.zeros((0, 3))
    vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
    pu, pv = uu.ravel().astype(float), vv.ravel().astype(float)
    w0 = _edge(b, c, pu, pv)
    w1 = _edge(c, a, pu, pv)
    w2 = _edge(a, b, pu, pv)
    inside = np.ones(len(pu), dtype=bool)
    for wgt, (p, q) in ((w0, (b, c)), (w1, (c, a)), (w2, (a, b))):
        inside &= (wgt > 0) | ((wgt == 0) & _owns_edge(p, q))
    bary = np.stack([w0, w1, w2], axis=1)[inside] / area
    out = np.empty_like(bary)
    out[:, order[0]] = bary[:, 0]
    out[:, order[1]] = bary[:, 1]
    out[:, order[2]] = bary[:, 2]
    return vv.ravel()[inside], uu.ravel()[inside], out


def rasterize(uv, depth, facets, geom):
    """Z-buffered facet id per pixel (-1 for background) and barycentrics.

    Depth is resolved on interpolated inverse depth (exact for planar facets
    under perspective); ties keep the lower facet index.
    """
    h, w = geom.height, geom.width
    ids = np.full((h, w), -1, dtype=np.int64)
    inv_z = np.full((h, w), -np.inf)
    bary = np.zeros((h, w, 3))
    inv_depth = 1.0 / np.asarray(depth, dtype=float)
    for fi, tri in enumerate(np.asarray(facets)):
        rows, cols, b = _facet_pixels(uv[tri], geom)
        if rows.size == 0:
            continue
        iz = b @ inv_depth[tri]
        closer = iz > inv_z[rows, cols]
        rows, cols = rows[closer], cols[closer]
        ids[rows, cols] = fi
        inv_z[rows, cols] = iz[closer]
        bary[rows, cols] = b[closer]
    return ids, bary


def rasterize_mask(vertices, facets, cam, geom):
    """Binary silhouette of the mesh (union of all projected facets)."""
    Xc = to_camera(vertices, cam)
    check_depth(Xc)
    uv = project(vertices, cam, geom)
    ids, _ = rasterize(uv, Xc[:, 2], facets, geom)
    return ids >= 0


def _barycentric(tri2d, pts):
    a, b, c = tri2d
    area = _edge(a, b, c[0], c[1])
    w0 = _edge(b, c, pts[:, 0], pts[:, 1]) / area
    w1 = _edge(c, a, pts[:, 0], pts[:, 1]) / area
    return np.stack([w0, w1, 1.0 - w0 - w1], axis=1)


def rasterize_flow(verts1, verts2, facets, cam1, cam2, geom, margin=0):
    """Dense (h, w, 2) flow: frame-1 z-buffered facet, barycentric vertex motion.

    Background pixels within ``margin`` pixels of the silhouette take the
    affine motion of the facet seen at their nearest foreground pixel,
    extrapolated to their own center; the rest of the background is 0.
    """
    if np.shape(verts1) != np.shape(verts2):
        raise ConfigurationError("frames must share topology")
    Xc1 = to_camera(verts1, cam1)
    check_depth(Xc1)
    uv1 = project(verts1, cam1, geom)
    uv2 = project(verts2, cam2, geom)
    motion = uv2 - uv1
    facets = np.asarray(facets)
    ids, bary = rasterize(uv1, Xc1[:, 2], facets, geom)
    flow = np.zeros((geom.height, geom.width, 2))
    fg = ids >= 0
    flow[fg] = np.einsum("pk,pkc->pc", bary[fg], motion[facets[ids[fg]]])
    if margin > 0 and fg.any():
        dist, (ri, ci) = ndimage.distance_transform_edt(~fg, return_indices=True)
        ring = ~fg & (dist <= margin)
        rows, cols = np.nonzero(ring)
        src = ids[ri[ring], ci[ring]]
        for f in np.unique(src):
            sel = src == f
            pts = np.stack([cols[sel], rows[sel]], axis=1).astype(float)
            b = _barycentric(uv1[facets[f]], pts)
            flow[rows[sel], cols[sel]] = b @ motion[facets[f]]
    return flow


# -- sampling -------------------------------------------------------------------

def _centered_camera(X, euler, jitter, focal):
    R = CameraParams(focal, euler, (0.0, 0.0)).rotation
    c = R @ X.mean(axis=0)
    return CameraParams(focal, euler, (-c[0] + jitter[0], -c[1] + jitter[1]))


def sample_parameters(model, spec, rng):
    """Draw true per-frame ``(BodyParams, CameraParams)`` following the documented order."""
    M, J = model.n_shape, model.joint_count
    shape = rng.uniform(-spec.shape_range, spec.shape_range, M)
    focal = rng.uniform(*spec.focal_range)
    pose = spec.pose_offset + rng.uniform(-spec.pose_range, spec.pose_range, (J, 3))
    euler = rng.uniform(-1.0, 1.0, 3) * np.asarray(spec.euler_range)
    jitter = rng.uniform(-spec.translation_jitter, spec.translation_jitter, 2)
    body = BodyParams(shape, pose)
    cam = _centered_camera(mesh_vertices(model, body), euler, jitter, focal)
    frames = [(body, cam)]
    if spec.frames == 2:
        d_pose = rng.uniform(-spec.motion_pose, spec.motion_pose, (J, 3))
        d_euler = rng.uniform(-spec.motion_euler, spec.motion_euler, 3)
        d_trans = rng.uniform(-spec.motion_translation, spec.motion_translation, 2)
        body2 = BodyParams(shape, pose + d_pose)
        cam2 = CameraParams(focal, tuple(np.add(cam.euler, d_euler)), tuple(np.add(cam.translation, d_trans)))
        frames.append((body2, cam2))
    for body_i, _ in frames:
        body_i.check_principal()
    return frames


def render_scene(model, frames, geom, flow_margin=0):
    """Noise-free observations plus true vertices/joints for given frames."""
    verts, joints, obs_frames = [], [], []
    for body, cam in frames:
        X = mesh_vertices(model, body)
        check_depth(to_camera(X, cam))
        Jt = joints3d(X, model.joint_regressor)
        kp = project(Jt, cam, geom)
        mask = rasterize_mask(X, model.facets, cam, geom)
        verts.append(X)
        joints.append(Jt)
        obs_frames.append(FrameObservations(kp, np.ones(len(kp), dtype=bool), mask))
    flow = None
    if len(frames) == 2:
        flow = rasterize_flow(verts[0], verts[1], model.facets, frames[0][1], frames[1][1], geom, flow_margin)
    return SceneObservations(geom, tuple(obs_frames), flow), tuple(verts), tuple(joints)


def sample_scene(model, spec, max_attempts=100):
    """Deterministic ground-truth scene for ``spec.seed``.

    Parameter draws that put a vertex closer than z_min (or off-image entirely)
    are redrawn, up to ``max_attempts`` times.
    """
    rng = rng_for(spec.seed)
    geom = spec.geom
    layout = autodiff.ParamLayout.for_model(model, spec.frames)
    for _ in range(max_attempts):
        frames = sample_parameters(model, spec, rng)
        try:
            obs, verts, joints = render_scene(model, frames, geom, spec.flow_margin)
        except DepthViolation:
            continue
        if not all(fr.segmentation.any() for fr in obs.frames):
            continue
        scene = GroundTruthScene(spec, layout, autodiff.pack(layout, frames), obs, verts, joints)
        return perturb_observations(scene, spec)
    raise SceneGenError(f"no valid scene after {max_attempts} attempts (seed {spec.seed})")


def perturb_observations(scene, spec):
    """Keypoint pixel noise and mask morphology; flow stays clean."""
    if spec.noise_kpt < 0:
        raise ConfigurationError("noise levels must be nonnegative")
    if spec.noise_kpt == 0 and spec.mask_ops == 0:
        return scene
    rng = rng_for(spec.seed, stream=1)
    frames = []
    for fr in scene.obs.frames:
        kp = fr.keypoints + rng.normal(0.0, spec.noise_kpt, fr.keypoints.shape) if spec.noise_kpt > 0 else fr.keypoints
        mask = fr.segmentation
        if spec.mask_ops > 0:
            mask = ndimage.binary_dilation(mask, iterations=spec.mask_ops)
        elif spec.mask_ops < 0:
            mask = ndimage.binary_erosion(mask, iterations=-spec.mask_ops)
        frames.append(FrameObservations(kp, fr.present, mask))
    obs = SceneObservations(scene.obs.geom, tuple(frames), scene.obs.flow)
    return replace(scene, obs=obs)


def truth_state_floor(model, scene, weights=None):
    """Loss parts evaluated at the true parameters (the rasterization floor)."""
    problem = autodiff.Problem(model, scene.obs, weights)
    return autodiff.evaluate(scene.params, problem, need_grad=False).parts
