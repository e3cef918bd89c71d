"""Keypoint, motion and segmentation reprojection losses.

Image-space conventions: a point is (u, v) = (column, row) in pixels, pixel
centers sit at integer coordinates, and grids are stored row-major as numpy
arrays of shape (h, w) or (h, w, 2).

The ``*_terms`` functions return the loss together with its gradient with
respect to the 2D input points. Nonsmooth pieces follow one convention:
``sign(0) = 0`` for L1 terms, and nearest-neighbour assignments can be passed
in to hold them fixed while probing nearby parameter values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .camera import ImageGeometry, project
from .errors import ConfigurationError, EmptyObservation


@dataclass(frozen=True, eq=False)
class FrameObservations:
    keypoints: np.ndarray                 # (K, 2) pixels
    present: np.ndarray                   # (K,) bool
    segmentation: np.ndarray              # (h, w) bool

    def __post_init__(self):
        kp = np.array(self.keypoints, dtype=float).reshape(-1, 2)
        present = np.array(self.present, dtype=bool).reshape(-1)
        seg = np.array(self.segmentation, dtype=bool)
        if present.shape[0] != kp.shape[0]:
            raise ConfigurationError("keypoints and presence flags differ in length")
        if not np.all(np.isfinite(kp[present])):
            raise ConfigurationError("present keypoints must be finite")
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "present", present)
        object.__setattr__(self, "segmentation", seg)


@dataclass(frozen=True, eq=False)
class SceneObservations:
    """Per-frame keypoints and masks, plus the frame-1 to frame-2 flow for pairs."""

    geom: ImageGeometry
    frames: tuple
    flow: np.ndarray | None = None        # (h, w, 2), channels (u, v)

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        shape = (self.geom.height, self.geom.width)
        for fr in frames:
            if fr.segmentation.shape != shape:
                raise ConfigurationError(f"mask shape {fr.segmentation.shape} != image {shape}")
        if self.flow is not None:
            flow = np.array(self.flow, dtype=float)
            if flow.shape != shape + (2,):
                raise ConfigurationError(f"flow shape {flow.shape} != {shape + (2,)}")
            if not np.all(np.isfinite(flow)):
                raise ConfigurationError("flow must be finite")
            object.__setattr__(self, "flow", flow)


@dataclass(frozen=True, eq=False)
class ChamferMaps:
    image_chamfer: np.ndarray
    distance: np.ndarray
    model_chamfer: np.ndarray
    model_mask: np.ndarray
    argmin: np.ndarray = field(default=None, repr=False)


# -- keypoints ----------------------------------------------------------------

def keypoint_terms(pred, obs, present=None, mean=False):
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    obs = np.asarray(obs, dtype=float).reshape(-1, 2)
    if pred.shape != obs.shape:
        raise ConfigurationError(f"keypoint count mismatch: {pred.shape[0]} vs {obs.shape[0]}")
    present = np.ones(len(pred), dtype=bool) if present is None else np.asarray(present, dtype=bool)
    count = int(present.sum())
    if count == 0:
        raise EmptyObservation("no present keypoints")
    r = np.where(present[:, None], pred - np.where(present[:, None], obs, 0.0), 0.0)
    scale = 1.0 / count if mean else 1.0
    return scale * float(np.sum(r * r)), 2.0 * scale * r


def keypoint_loss(pred, obs, present=None, mean=False):
    """Sum over present keypoints of squared pixel distance (mean if ``mean``)."""
    return keypoint_terms(pred, obs, present, mean)[0]


# -- bilinear sampling ----------------------------------------------------------

def bilinear_cells(field_shape, locations):
    """Clamped sample locations and the lower-left cell index for each one."""
    h, w = field_shape[:2]
    loc = np.asarray(locations, dtype=float).reshape(-1, 2)
    x = np.clip(loc[:, 0], 0.0, w - 1)
    y = np.clip(loc[:, 1], 0.0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    return x0, y0


def bilinear_terms(field, locations, cells=None):
    """Sample ``field`` (h, w, C) at subpixel ``locations`` (N, 2).

    Returns ``(values (N, C), d/du (N, C), d/dv (N, C))``. Locations are clamped
    to the grid; the derivative along a clamped coordinate is zero. ``cells``
    pins the interpolation cell, extending its bilinear patch beyond the cell.
    """
    field = np.asarray(field, dtype=float)
    if field.ndim == 2:
        field = field[:, :, None]
    h, w = field.shape[:2]
    loc = np.asarray(locations, dtype=float).reshape(-1, 2)
    x = np.clip(loc[:, 0], 0.0, w - 1)
    y = np.clip(loc[:, 1], 0.0, h - 1)
    gx = ((loc[:, 0] >= 0.0) & (loc[:, 0] <= w - 1)).astype(float)
    gy = ((loc[:, 1] >= 0.0) & (loc[:, 1] <= h - 1)).astype(float)
    x0, y0 = bilinear_cells(field.shape, loc) if cells is None else cells
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    f00 = field[y0, x0]
    f01 = field[y0, x1]
    f10 = field[y1, x0]
    f11 = field[y1, x1]
    top = f00 + fx * (f01 - f00)
    bottom = f10 + fx * (f11 - f10)
    val = top + fy * (bottom - top)
    d_du = ((1.0 - fy) * (f01 - f00) + fy * (f11 - f10)) * gx[:, None]
    d_dv = (bottom - top) * gy[:, None]
    return val, d_du, d_dv


def bilinear_sample(field, location):
    """Bilinear value of a (h, w, C) grid at one subpixel (u, v) location."""
    val, _, _ = bilinear_terms(field, np.asarray(location, dtype=float).reshape(1, 2))
    return val[0]


# -- motion ---------------------------------------------------------------------

def flow_sample_mask(uv1, geom, margin=1.0):
    """Vertices whose frame-1 projection lies within ``margin`` px of the grid."""
    u, v = uv1[:, 0], uv1[:, 1]
    return (u >= -margin) & (u <= geom.width - 1 + margin) & (v >= -margin) & (v <= geom.height - 1 + margin)


def motion_terms(uv1, uv2, flow, mask, cells=None, through_sample=True):
    """L1 flow mismatch averaged over the masked vertices.

    Returns ``(loss, d/duv1, d/duv2, residual)``. An empty mask gives a zero
    loss and zero gradients.
    """
    uv1 = np.asarray(uv1, dtype=float)
    uv2 = np.asarray(uv2, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    obs, d_du, d_dv = bilinear_terms(flow, uv1, cells)
    r = (uv2 - uv1) - obs
    if count == 0:
        z = np.zeros_like(uv1)
        return 0.0, z, z.copy(), r
    w = mask.astype(float) / count
    loss = float(np.sum(w[:, None] * np.abs(r)))
    s = np.sign(r) * w[:, None]
    g2 = s.copy()
    g1 = -s
    if through_sample:
        g1[:, 0] -= np.sum(s * d_du, axis=1)
        g1[:, 1] -= np.sum(s * d_dv, axis=1)
    return loss, g1, g2, r


def motion_loss(verts1, verts2, cam1, cam2, geom, flow, vis, return_flag=False):
    """Mean L1 difference between projected vertex motion and sampled flow.

    ``vis`` is a boolean per-vertex mask (or a ``VisibilityMask``). Vertices
    projecting more than 1 px outside the frame are dropped. With nothing
    left the loss is 0 and, if ``return_flag``, the flag is True.
    """
    vmask = getattr(vis, "vertex", vis)
    uv1 = project(verts1, cam1, geom)
    uv2 = project(verts2, cam2, geom)
    mask = np.asarray(vmask, dtype=bool) & flow_sample_mask(uv1, geom)
    loss = motion_terms(uv1, uv2, flow, mask)[0]
    if return_flag:
        return loss, not mask.any()
    return loss


# -- segmentation -----------------------------------------------------------------

def image_chamfer(mask):
    """Exact Euclidean distance from every pixel to the nearest foreground pixel."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyObservation("segmentation mask has no foreground")
    return ndimage.distance_transform_edt(~m)


def pixel_centers(shape):
    """(h*w, 2) array of (u, v) centers in row-major order."""
    h, w = shape
    vv, uu = np.mgrid[0:h, 0:w]
    return np.stack([uu.ravel(), vv.ravel()], axis=1).astype(float)


def foreground_centers(mask):
    rows, cols = np.nonzero(np.asarray(mask, dtype=bool))
    return np.stack([cols, rows], axis=1).astype(float)


def nearest(a, b):
    """Index into ``b`` of a nearest point for each row of ``a``.

    Exact Euclidean nearest neighbour via a k-d tree; among exactly tied
    candidates the choice is deterministic but unspecified (the distance is
    the same either way).
    """
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    if len(a) == 0:
        return np.zeros(0, dtype=np.int64)
    _, idx = cKDTree(np.asarray(b, dtype=float).reshape(-1, 2)).query(a)
    return np.asarray(idx, dtype=np.int64)


def model_distance_map(points, geom, argmin=None):
    """Distance from each pixel center to the nearest projected point.

    Returns ``(D (h, w), argmin (h*w,))``. Passing ``argmin`` evaluates the
    distance to those fixed points instead of searching.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyObservation("no visible projected points")
    centers = pixel_centers((geom.height, geom.width))
    if argmin is None:
        argmin = nearest(centers, pts)
    diff = centers - pts[argmin]
    D = np.sqrt(np.sum(diff * diff, axis=1))
    return D.reshape(geom.height, geom.width), argmin


def model_chamfer(D):
    """Threshold a model distance map into (C^M, S^M).

    C^M = max(0.5, D); S^M = min(0.5, D) + 0.5 * [D < 0.5], taken literally.
    """
    D = np.asarray(D, dtype=float)
    C = np.maximum(0.5, D)
    S = np.minimum(0.5, D) + 0.5 * (D < 0.5)
    return C, S


def seg_loss(model_mask, image_chamfer_map, image_mask, model_chamfer_map):
    """Sum over pixels of S^M * C^I + S^I * C^M."""
    arrays = [np.asarray(a, dtype=float) for a in (model_mask, image_chamfer_map, image_mask, model_chamfer_map)]
    if len({a.shape for a in arrays}) != 1:
        raise ConfigurationError(f"segmentation grids differ in shape: {[a.shape for a in arrays]}")
    SM, CI, SI, CM = arrays
    return float(np.sum(SM * CI) + np.sum(SI * CM))


def seg_chamfer_terms(points, image_mask, geom, image_chamfer_map=None, argmin=None):
    """Chamfer-map segmentation loss and its gradient w.r.t. ``points``.

    Returns ``(loss, grad (N, 2), ChamferMaps)``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    SI = np.asarray(image_mask, dtype=bool)
    CI = image_chamfer(SI) if image_chamfer_map is None else image_chamfer_map
    D, argmin = model_distance_map(pts, geom, argmin)
    CM, SM = model_chamfer(D)
    loss = seg_loss(SM, CI, SI, CM)
    d = D.ravel()
    dL_dD = CI.ravel() * (d < 0.5) + SI.ravel() * (d > 0.5)
    centers = pixel_centers(D.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(d[:, None] > 0, (pts[argmin] - centers) / d[:, None], 0.0)
    grad = np.zeros_like(pts)
    np.add.at(grad, argmin, dL_dD[:, None] * unit)
    return loss, grad, ChamferMaps(CI, D, CM, SM, argmin)


def seg_proj_terms(points, fg, assign=None):
    """Two-sided squared nearest-neighbour loss between points and foreground.

    ``assign`` is ``(nearest fg per point, nearest point per fg)``; pass it to
    hold the assignments fixed. Returns ``(loss, grad (N, 2), assign)``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    fg = np.asarray(fg, dtype=float).reshape(-1, 2)
    if len(pts) == 0 or len(fg) == 0:
        raise EmptyObservation("seg-proj loss needs nonempty point and foreground sets")
    if assign is None:
        assign = (nearest(pts, fg), nearest(fg, pts))
    to_fg, to_pt = assign
    over = pts - fg[to_fg]
    under = fg - pts[to_pt]
    loss = float(np.sum(over * over) + np.sum(under * under))
    grad = 2.0 * over
    np.add.at(grad, to_pt, -2.0 * under)
    return loss, grad, assign


def seg_proj_loss(points, fg):
    """Over-coverage plus under-coverage squared nearest-neighbour distances."""
    return seg_proj_terms(points, fg)[0]


# -- half-resolution helpers ---------------------------------------------------------

def to_half(points):
    """Map full-resolution pixel coordinates onto the half-resolution grid.

    Half pixel j covers full pixels 2j and 2j+1, so its center is at 2j + 0.5.
    """
    return 0.5 * np.asarray(points, dtype=float) - 0.25


def half_mask(mask):
    """2x2 block downsampling: a half pixel is foreground if >= 2 of 4 are."""
    m = np.asarray(mask, dtype=float)
    h, w = m.shape
    padded = np.zeros((h + h % 2, w + w % 2))
    padded[:h, :w] = m
    blocks = padded.reshape(padded.shape[0] // 2, 2, padded.shape[1] // 2, 2).sum(axis=(1, 3))
    return blocks >= 2
