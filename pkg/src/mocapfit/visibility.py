"""Per-facet and per-vertex visibility by ray casting from the camera center.

One ray is cast from the origin through each facet centroid. Every facet the
ray hits is a candidate; the nearest one (ties broken by lowest facet index)
is the facet seen along that ray. A facet is visible iff it is the one seen
along its own ray, and a vertex is visible iff it belongs to a visible facet.

Visibility is a constant mask as far as the losses are concerned; nothing
here is differentiated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Z_MIN
from .errors import DegenerateFacet, DepthViolation

EPS_PARALLEL = 1e-8
MIN_AREA = 1e-12


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        norm = np.sqrt(d @ d)
        if abs(norm - 1.0) > 1e-12:
            d = d / norm
        object.__setattr__(self, "origin", np.zeros(3))
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class VisibilityMask:
    vertex: np.ndarray
    facet: np.ndarray

    @property
    def count(self):
        return int(self.vertex.sum())


def _dot(a, b):
    # explicit component order keeps every path bit-identical
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _cross(a, b):
    return np.stack([
        a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
        a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
        a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
    ], axis=-1)


def facet_normals(tri):
    """Unit normals of (F, 3, 3) triangles; raises on zero-area facets."""
    c = _cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norm = np.sqrt(_dot(c, c))
    bad = np.flatnonzero(~(0.5 * norm > MIN_AREA))
    if bad.size:
        raise DegenerateFacet(f"zero-area facets at indices {bad[:10].tolist()}")
    return c / norm[:, None]


def _intersect_pairs(dirs, tri, normals):
    """Vectorized ray/facet test over aligned arrays of rays and facets.

    ``dirs`` (P, 3), ``tri`` (P, 3, 3), ``normals`` (P, 3). Returns hit flags and
    distances (inf where missed).
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        return _intersect_pairs_unchecked(dirs, tri, normals)


def _intersect_pairs_unchecked(dirs, tri, normals):
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    nd = _dot(normals, dirs)
    nv0 = _dot(normals, v0)
    hit = np.abs(nd) > EPS_PARALLEL
    hit &= np.sign(nd) == np.sign(nv0)
    t = np.where(hit, nv0 / np.where(hit, nd, 1.0), np.inf)
    p = dirs * t[:, None]
    for vi, vj in ((v1, v0), (v2, v1), (v0, v2)):
        side = _dot(_cross(vi - vj, p - vj), normals)
        hit &= side >= 0.0
    dist = np.where(hit, t, np.inf)
    return hit, dist


def ray_facet_intersect(ray, facet_vertices):
    """Distance along ``ray`` to the facet, or ``None`` on a miss."""
    tri = np.asarray(facet_vertices, dtype=float).reshape(1, 3, 3)
    normals = facet_normals(tri)
    hit, dist = _intersect_pairs(ray.direction.reshape(1, 3), tri, normals)
    return float(dist[0]) if hit[0] else None


def _facet_rays(vertices, facets, z_min):
    tri = np.asarray(vertices, dtype=float)[np.asarray(facets)]
    centroids = (tri[:, 0] + tri[:, 1] + tri[:, 2]) / 3.0
    bad = np.flatnonzero(~(centroids[:, 2] > z_min))
    if bad.size:
        raise DepthViolation(bad, z_min)
    dirs = centroids / np.sqrt(_dot(centroids, centroids))[:, None]
    return tri, dirs


def _select(ray_idx, facet_idx, dist, n_rays):
    """Per ray, the hit facet with minimum distance, ties to lowest index (-1 if none)."""
    seen = np.full(n_rays, -1, dtype=np.int64)
    ok = np.isfinite(dist)
    ray_idx, facet_idx, dist = ray_idx[ok], facet_idx[ok], dist[ok]
    if ray_idx.size == 0:
        return seen
    order = np.lexsort((facet_idx, dist, ray_idx))
    r = ray_idx[order]
    first = np.ones(len(r), dtype=bool)
    first[1:] = r[1:] != r[:-1]
    seen[r[first]] = facet_idx[order][first]
    return seen


def facet_visibility(vertices, facets, geom=None, z_min=Z_MIN, chunk=256):
    """Brute force: every ray is tested against every facet."""
    tri, dirs = _facet_rays(vertices, facets, z_min)
    normals = facet_normals(tri)
    F = len(tri)
    seen = np.full(F, -1, dtype=np.int64)
    for start in range(0, F, chunk):
        rays = np.arange(start, min(start + chunk, F))
        ri = np.repeat(rays, F)
        fi = np.tile(np.arange(F), len(rays))
        _, dist = _intersect_pairs(dirs[ri], tri[fi], normals[fi])
        seen[rays] = _select(ri - start, fi, dist, len(rays))
    return seen == np.arange(F)


def facet_visibility_accelerated(vertices, facets, geom=None, z_min=Z_MIN, cells_per_axis=None):
    """Uniform-grid accelerated variant of ``facet_visibility``.

    All rays start at the origin, so facets are binned by the bounding box of
    their central projection onto the plane z = 1. A ray only needs the
    facets binned in the cell its own direction falls into. Facets with a
    vertex at or behind z = 0 cannot be projected and are tested against every
    ray. The per-pair test and the selection rule are shared with the brute
    force path, so the result is identical.
    """
    tri, dirs = _facet_rays(vertices, facets, z_min)
    normals = facet_normals(tri)
    F = len(tri)
    ray_xy = dirs[:, :2] / dirs[:, 2:3]

    front = np.all(tri[:, :, 2] > 1e-12, axis=1)
    proj = tri[front][:, :, :2] / tri[front][:, :, 2:3]
    lo = proj.min(axis=1)
    hi = proj.max(axis=1)
    pad = 1e-9 + 1e-9 * np.maximum(np.abs(lo), np.abs(hi))
    lo -= pad
    hi += pad

    if cells_per_axis is None:
        cells_per_axis = max(1, int(np.sqrt(F)))
    g_lo = ray_xy.min(axis=0)
    g_hi = ray_xy.max(axis=0)
    size = np.maximum((g_hi - g_lo) / cells_per_axis, 1e-12)

    def cell_of(xy):
        return np.clip(np.floor((xy - g_lo) / size).astype(np.int64), 0, cells_per_axis - 1)

    # facet bounding boxes that miss the ray extent entirely are dropped
    overlaps = np.all(hi >= g_lo, axis=1) & np.all(lo <= g_hi, axis=1)
    front_ids = np.flatnonzero(front)[overlaps]
    c_lo = cell_of(lo[overlaps])
    c_hi = cell_of(hi[overlaps])
    spans = (c_hi - c_lo + 1)
    counts = spans[:, 0] * spans[:, 1]
    owner = np.repeat(np.arange(len(front_ids)), counts)
    offset = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    cx = c_lo[owner, 0] + offset % spans[owner, 0]
    cy = c_lo[owner, 1] + offset // spans[owner, 0]
    cell_ids = cy * cells_per_axis + cx
    order = np.argsort(cell_ids, kind="stable")
    cell_sorted = cell_ids[order]
    facet_sorted = front_ids[owner[order]]
    n_cells = cells_per_axis * cells_per_axis
    starts = np.searchsorted(cell_sorted, np.arange(n_cells), side="left")
    ends = np.searchsorted(cell_sorted, np.arange(n_cells), side="right")

    rc = cell_of(ray_xy)
    ray_cell = rc[:, 1] * cells_per_axis + rc[:, 0]
    n_cand = ends[ray_cell] - starts[ray_cell]
    ri = np.repeat(np.arange(F), n_cand)
    pos = np.arange(n_cand.sum()) - np.repeat(np.cumsum(n_cand) - n_cand, n_cand)
    fi = facet_sorted[np.repeat(starts[ray_cell], n_cand) + pos]

    behind = np.flatnonzero(~front)
    if behind.size:
        ri = np.concatenate([ri, np.repeat(np.arange(F), behind.size)])
        fi = np.concatenate([fi, np.tile(behind, F)])

    _, dist = _intersect_pairs(dirs[ri], tri[fi], normals[fi])
    seen = _select(ri, fi, dist, F)
    return seen == np.arange(F)


def vertex_visibility(facet_flags, facets, n):
    flags = np.asarray(facet_flags, dtype=bool)
    vertex = np.zeros(n, dtype=bool)
    vertex[np.asarray(facets)[flags].ravel()] = True
    return VisibilityMask(vertex=vertex, facet=flags)


def compute_visibility(cam_vertices, facets, accelerated=True, z_min=Z_MIN):
    """Visibility mask for camera-frame vertices."""
    fn = facet_visibility_accelerated if accelerated else facet_visibility
    flags = fn(cam_vertices, facets, z_min=z_min)
    return vertex_visibility(flags, facets, len(cam_vertices))
