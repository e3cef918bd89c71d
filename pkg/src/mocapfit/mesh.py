"""Blendshape body model: rest mesh plus shape and pose correctives.

Vertices are produced by a purely additive forward model::

    X_i = rest_i + sum_m beta_m * s_{m,i} + sum_n (T_n(theta) - T_n(theta_rest)) * p_{n,i}

where ``T(theta)`` concatenates the row-major flattened per-joint rotation
matrices. There is no skinning stage after the sum.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

SMALL_ANGLE = 1e-8


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues(axis_angle):
    """Axis-angle 3-vector to a 3x3 rotation matrix.

    Below a magnitude of 1e-8 the first-order expansion ``I + [v]x`` is used,
    which is smooth through zero.
    """
    v = np.asarray(axis_angle, dtype=float)
    angle = np.sqrt(v @ v)
    K = skew(v)
    if angle < SMALL_ANGLE:
        return np.eye(3) + K
    return np.eye(3) + (np.sin(angle) / angle) * K + ((1.0 - np.cos(angle)) / angle**2) * (K @ K)


def rodrigues_jacobian(axis_angle):
    """Derivatives of ``rodrigues`` with respect to each input component.

    Returns an array ``dR`` of shape (3, 3, 3) with ``dR[c] = dR/dv_c``.
    Uses the compact form dR/dv_c = (v_c [v]x + [v x (I - R) e_c]x) R / |v|^2.
    """
    v = np.asarray(axis_angle, dtype=float)
    sq = v @ v
    out = np.empty((3, 3, 3))
    if np.sqrt(sq) < SMALL_ANGLE:
        for c in range(3):
            out[c] = skew(np.eye(3)[c])
        return out
    R = rodrigues(v)
    K = skew(v)
    I_minus_R = np.eye(3) - R
    for c in range(3):
        w = np.cross(v, I_minus_R[:, c])
        out[c] = (v[c] * K + skew(w)) @ R / sq
    return out


def pose_feature(pose):
    """Concatenated row-major flattenings of the per-joint rotations, length 9J."""
    pose = np.asarray(pose, dtype=float).reshape(-1, 3)
    return np.concatenate([rodrigues(p).ravel() for p in pose])


def pose_feature_jacobian(pose):
    """(J, 9, 3) array: derivative of joint j's 9 entries w.r.t. its 3 angles."""
    pose = np.asarray(pose, dtype=float).reshape(-1, 3)
    jac = np.empty((len(pose), 9, 3))
    for j, p in enumerate(pose):
        dR = rodrigues_jacobian(p)
        jac[j] = dR.reshape(3, 9).T
    return jac


@dataclass(frozen=True)
class BodyParams:
    shape: np.ndarray
    pose: np.ndarray

    def __post_init__(self):
        shape = np.array(self.shape, dtype=float).reshape(-1)
        pose = np.array(self.pose, dtype=float).reshape(-1, 3)
        if not (np.all(np.isfinite(shape)) and np.all(np.isfinite(pose))):
            raise ConfigurationError("body parameters must be finite")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "pose", pose)

    def check_principal(self):
        """Raise unless every joint angle magnitude is below pi."""
        mags = np.linalg.norm(self.pose, axis=1)
        if np.any(mags >= np.pi):
            raise ConfigurationError(f"axis-angle magnitude >= pi at joints {np.flatnonzero(mags >= np.pi).tolist()}")
        return self


@dataclass(frozen=True, eq=False)
class BlendshapeModel:
    """Immutable container for the body model arrays.

    Shapes: rest_vertices (n, 3), shape_blendshapes (M, n, 3),
    pose_blendshapes (9J, n, 3), facets (F, 3) int, joint_regressor (K, n),
    rest_pose (J, 3).
    """

    rest_vertices: np.ndarray
    shape_blendshapes: np.ndarray
    pose_blendshapes: np.ndarray
    facets: np.ndarray
    joint_regressor: np.ndarray
    rest_pose: np.ndarray
    _rest_feature: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        arrays = {
            "rest_vertices": np.array(self.rest_vertices, dtype=float),
            "shape_blendshapes": np.array(self.shape_blendshapes, dtype=float),
            "pose_blendshapes": np.array(self.pose_blendshapes, dtype=float),
            "facets": np.array(self.facets, dtype=np.int64),
            "joint_regressor": np.array(self.joint_regressor, dtype=float),
            "rest_pose": np.array(self.rest_pose, dtype=float).reshape(-1, 3),
        }
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._validate()
        rf = pose_feature(self.rest_pose)
        rf.setflags(write=False)
        object.__setattr__(self, "_rest_feature", rf)

    def _validate(self):
        X = self.rest_vertices
        if X.ndim != 2 or X.shape[1] != 3 or X.shape[0] < 3:
            raise ConfigurationError(f"rest_vertices must be (n>=3, 3), got {X.shape}")
        n = X.shape[0]
        S = self.shape_blendshapes
        if S.ndim != 3 or S.shape[1:] != (n, 3) or S.shape[0] < 1:
            raise ConfigurationError(f"shape_blendshapes must be (M>=1, {n}, 3), got {S.shape}")
        J = self.rest_pose.shape[0]
        if J < 1:
            raise ConfigurationError("rest_pose needs at least one joint")
        P = self.pose_blendshapes
        if P.shape != (9 * J, n, 3):
            raise ConfigurationError(f"pose_blendshapes must be ({9 * J}, {n}, 3), got {P.shape}")
        F = self.facets
        if F.ndim != 2 or F.shape[1] != 3 or F.shape[0] < 1:
            raise ConfigurationError(f"facets must be (F>=1, 3), got {F.shape}")
        if F.min() < 0 or F.max() >= n:
            raise ConfigurationError("facet index out of range")
        if np.any((F[:, 0] == F[:, 1]) | (F[:, 1] == F[:, 2]) | (F[:, 0] == F[:, 2])):
            raise ConfigurationError("degenerate facet (repeated vertex index)")
        A = self.joint_regressor
        if A.ndim != 2 or A.shape[1] != n or A.shape[0] < 1:
            raise ConfigurationError(f"joint_regressor must be (K>=1, {n}), got {A.shape}")
        if np.any(A < 0) or np.any(np.abs(A.sum(axis=1) - 1.0) > 1e-9):
            raise ConfigurationError("joint_regressor rows must be nonnegative and sum to 1")
        for name in ("rest_vertices", "shape_blendshapes", "pose_blendshapes", "joint_regressor", "rest_pose"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigurationError(f"{name} contains non-finite values")

    @property
    def n_vertices(self):
        return self.rest_vertices.shape[0]

    @property
    def n_shape(self):
        return self.shape_blendshapes.shape[0]

    @property
    def joint_count(self):
        return self.rest_pose.shape[0]

    @property
    def n_keypoints(self):
        return self.joint_regressor.shape[0]

    @property
    def n_facets(self):
        return self.facets.shape[0]

    @property
    def rest_feature(self):
        return self._rest_feature

    def zero_params(self):
        return BodyParams(np.zeros(self.n_shape), self.rest_pose.copy())


def _check_params(model, params):
    if params.shape.shape[0] != model.n_shape or params.pose.shape[0] != model.joint_count:
        raise ConfigurationError(
            f"params have M={params.shape.shape[0]}, J={params.pose.shape[0]}; "
            f"model expects M={model.n_shape}, J={model.joint_count}"
        )


def mesh_vertices(model, params):
    """Evaluate the additive blendshape model, returning (n, 3) vertices."""
    _check_params(model, params)
    delta_pose = pose_feature(params.pose) - model.rest_feature
    X = model.rest_vertices + np.tensordot(params.shape, model.shape_blendshapes, axes=1)
    X = X + np.tensordot(delta_pose, model.pose_blendshapes, axes=1)
    return X


def mesh_vertices_backward(model, params, grad_vertices):
    """Pull a vertex-space gradient (n, 3) back to (d shape, d pose[J, 3])."""
    _check_params(model, params)
    g = np.asarray(grad_vertices, dtype=float)
    g_shape = np.tensordot(model.shape_blendshapes, g, axes=([1, 2], [0, 1]))
    g_feat = np.tensordot(model.pose_blendshapes, g, axes=([1, 2], [0, 1])).reshape(-1, 9)
    jac = pose_feature_jacobian(params.pose)
    g_pose = np.einsum("jk,jkc->jc", g_feat, jac)
    return g_shape, g_pose


def joints3d(vertices, regressor):
    V = np.asarray(vertices, dtype=float)
    A = np.asarray(regressor, dtype=float)
    if A.ndim != 2 or V.ndim != 2 or A.shape[1] != V.shape[0]:
        raise ConfigurationError(f"regressor {A.shape} incompatible with vertices {V.shape}")
    return A @ V


# -- desk-scale default model -------------------------------------------------

RINGS = 8
SEGMENTS = 8
BODY_DEPTH = 3.0


def _lattice():
    ys = np.linspace(-0.8, 0.8, RINGS)
    half_width = np.array([0.09, 0.11, 0.22, 0.19, 0.17, 0.18, 0.13, 0.10])
    half_depth = 0.6 * half_width
    phi = 2.0 * np.pi * np.arange(SEGMENTS) / SEGMENTS
    verts = []
    for r in range(RINGS):
        for k in range(SEGMENTS):
            verts.append((half_width[r] * np.cos(phi[k]), ys[r], BODY_DEPTH + half_depth[r] * np.sin(phi[k])))
    return np.array(verts)


def _lattice_facets(verts):
    def vid(r, k):
        return r * SEGMENTS + (k % SEGMENTS)

    tris = []
    for r in range(RINGS - 1):
        for k in range(SEGMENTS):
            a, b, c, d = vid(r, k), vid(r, k + 1), vid(r + 1, k + 1), vid(r + 1, k)
            tris.append((a, b, c))
            tris.append((a, c, d))
    for r in (0, RINGS - 1):
        for k in range(1, SEGMENTS - 1):
            tris.append((vid(r, 0), vid(r, k), vid(r, k + 1)))
    tris = np.array(tris)
    # orient every facet outward
    center = verts.mean(axis=0)
    for t in range(len(tris)):
        v0, v1, v2 = verts[tris[t]]
        normal = np.cross(v1 - v0, v2 - v0)
        outward = (v0 + v1 + v2) / 3.0 - center
        if tris[t, 0] // SEGMENTS == tris[t, 1] // SEGMENTS == tris[t, 2] // SEGMENTS:
            outward = np.array([0.0, np.sign(v0[1] - center[1]), 0.0])
        if normal @ outward < 0:
            tris[t, [1, 2]] = tris[t, [2, 1]]
    return tris


def default_model():
    """Toy body: an 8x8 ring lattice (n=64, F=124), J=4 parts, M=4, K=8.

    The body stands along the image y axis (head up, i.e. negative y) at
    depth 3 m. Pose correctives rotate each soft-weighted part about its
    pivot and then apply a fixed shear that leaks depth motion into the image
    plane, so every pose component moves the projection to first order.
    """
    X = _lattice()
    n = len(X)
    ring = np.arange(n) // SEGMENTS
    x, y = X[:, 0], X[:, 1]
    facets = _lattice_facets(X)

    # shape blendshapes (M = 4)
    S = np.zeros((4, n, 3))
    shoulders = np.isin(ring, (2, 3))
    S[0, shoulders, 0] = 0.25 * x[shoulders]
    hips = np.isin(ring, (4, 5))
    S[1, hips, 0] = 0.25 * x[hips]
    legs = ring >= 4
    S[2, legs, 1] = 0.12 * (y[legs] - X[4 * SEGMENTS, 1])
    head = ring <= 1
    S[3, head, 1] = -0.06
    S[3, head, 0] = 0.15 * x[head]

    # part weights and pivots (J = 4)
    ring_centers = X.reshape(RINGS, SEGMENTS, 3).mean(axis=1)
    weights = np.zeros((4, n))
    weights[0] = np.select([ring <= 1, ring == 2], [1.0, 0.5], 0.0)
    weights[1] = np.select([ring >= 6, ring == 5], [1.0, 0.5], 0.0)
    side = np.isin(ring, (2, 3, 4, 5))
    weights[2] = np.where(side & (x > 1e-9), 1.0, 0.0) * np.where(np.isin(ring, (2, 5)), 0.5, 1.0)
    weights[3] = np.where(side & (x < -1e-9), 1.0, 0.0) * np.where(np.isin(ring, (2, 5)), 0.5, 1.0)
    pivots = np.array([
        ring_centers[2],
        ring_centers[5],
        0.5 * (ring_centers[3] + ring_centers[4]) + np.array([0.05, 0.0, 0.0]),
        0.5 * (ring_centers[3] + ring_centers[4]) - np.array([0.05, 0.0, 0.0]),
    ])
    shears = [
        np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.3], [0.0, 0.0, 1.0]]),
        np.array([[1.0, 0.0, -0.4], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0]]),
        np.array([[1.0, 0.0, 0.6], [0.0, 1.0, -0.4], [0.0, 0.0, 1.0]]),
        np.array([[1.0, 0.0, -0.6], [0.0, 1.0, -0.4], [0.0, 0.0, 1.0]]),
    ]
    P = np.zeros((36, n, 3))
    for j in range(4):
        rel = X - pivots[j]
        for a in range(3):
            for b in range(3):
                P[9 * j + 3 * a + b] = weights[j][:, None] * np.outer(rel[:, b], shears[j][:, a])

    def vtx(r, k):
        return r * SEGMENTS + k

    A = np.zeros((8, n))
    A[0, ring == 0] = 1.0 / SEGMENTS                                  # head
    A[1, ring == 1] = 1.0 / SEGMENTS                                  # neck
    A[2, [vtx(2, 0), vtx(2, 7), vtx(3, 0)]] = 1.0 / 3.0               # right shoulder
    A[3, [vtx(2, 4), vtx(2, 5), vtx(3, 4)]] = 1.0 / 3.0               # left shoulder
    A[4, [vtx(5, 0), vtx(5, 6)]] = 0.5                                # right hip
    A[5, [vtx(5, 4), vtx(5, 6)]] = 0.5                                # left hip
    A[6, [vtx(7, 0), vtx(7, 1), vtx(6, 7)]] = 1.0 / 3.0               # right foot
    A[7, [vtx(7, 3), vtx(7, 4), vtx(6, 5)]] = 1.0 / 3.0               # left foot

    return BlendshapeModel(
        rest_vertices=X,
        shape_blendshapes=S,
        pose_blendshapes=P,
        facets=facets,
        joint_regressor=A,
        rest_pose=np.zeros((4, 3)),
    )
