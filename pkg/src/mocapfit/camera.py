"""Euler-angle camera rotation, in-plane translation and perspective projection.

Conventions: right-handed, camera at the origin looking along +z, image y
pointing down, pixel (0, 0) at the top-left pixel center, principal point at
the crop center ((w - 1) / 2, (h - 1) / 2). Points are rotated by R, then
translated by (T_x, T_y, 0), then divided by depth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DepthViolation

Z_MIN = 1e-4


@dataclass(frozen=True)
class ImageGeometry:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ConfigurationError("image dimensions must be integers")
        if self.width < 2 or self.height < 2:
            raise ConfigurationError(f"image must be at least 2x2, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def cx(self):
        return (self.width - 1) / 2.0

    @property
    def cy(self):
        return (self.height - 1) / 2.0

    def half(self):
        """Geometry of the half-resolution grid used by the segmentation losses."""
        return ImageGeometry((self.width + 1) // 2, (self.height + 1) // 2)


@dataclass(frozen=True)
class CameraParams:
    focal: float
    euler: tuple
    translation: tuple

    def __post_init__(self):
        euler = tuple(float(a) for a in self.euler)
        translation = tuple(float(t) for t in self.translation)
        if len(euler) != 3 or len(translation) != 2:
            raise ConfigurationError("camera needs 3 Euler angles and 2 translation components")
        focal = float(self.focal)
        if not np.all(np.isfinite((focal,) + euler + translation)):
            raise ConfigurationError("camera parameters must be finite")
        if focal <= 0:
            raise ConfigurationError(f"focal length must be positive, got {focal}")
        object.__setattr__(self, "focal", focal)
        object.__setattr__(self, "euler", euler)
        object.__setattr__(self, "translation", translation)

    def as_array(self):
        return np.array(self.euler + self.translation + (self.focal,))

    @classmethod
    def from_array(cls, arr):
        a = np.asarray(arr, dtype=float)
        return cls(focal=a[5], euler=tuple(a[0:3]), translation=tuple(a[3:5]))

    @property
    def rotation(self):
        return euler_rotation(*self.euler)

    @property
    def translation3(self):
        return np.array([self.translation[0], self.translation[1], 0.0])


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _drot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def euler_rotation(alpha, beta, gamma):
    """R = Rx(alpha) @ Ry(beta) @ Rz(gamma)."""
    return rot_x(alpha) @ rot_y(beta) @ rot_z(gamma)


def euler_rotation_jacobian(alpha, beta, gamma):
    """(3, 3, 3) array of dR/d(alpha), dR/d(beta), dR/d(gamma)."""
    Rx, Ry, Rz = rot_x(alpha), rot_y(beta), rot_z(gamma)
    return np.stack([
        _drot_x(alpha) @ Ry @ Rz,
        Rx @ _drot_y(beta) @ Rz,
        Rx @ Ry @ _drot_z(gamma),
    ])


def to_camera(points, cam):
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    return P @ cam.rotation.T + cam.translation3


def check_depth(cam_points, z_min=Z_MIN):
    bad = np.flatnonzero(~(cam_points[:, 2] >= z_min))
    if bad.size:
        raise DepthViolation(bad, z_min)


def project(points, cam, geom, z_min=Z_MIN):
    """Project (N, 3) model-space points to (N, 2) pixel coordinates (u, v)."""
    Xc = to_camera(points, cam)
    check_depth(Xc, z_min)
    inv_z = 1.0 / Xc[:, 2]
    u = cam.focal * Xc[:, 0] * inv_z + geom.cx
    v = cam.focal * Xc[:, 1] * inv_z + geom.cy
    return np.stack([u, v], axis=1)


def project_backward(points, cam, grad_uv):
    """Pull a pixel-space gradient (N, 2) back through ``project``.

    Returns ``(grad_points (N, 3), grad_cam (6,))`` where the camera gradient
    follows the ``CameraParams.as_array`` layout (alpha, beta, gamma, T_x, T_y, f).
    """
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    g = np.asarray(grad_uv, dtype=float).reshape(-1, 2)
    R = cam.rotation
    Xc = X @ R.T + cam.translation3
    inv_z = 1.0 / Xc[:, 2]
    f = cam.focal
    gx = g[:, 0] * f * inv_z
    gy = g[:, 1] * f * inv_z
    gz = -(gx * Xc[:, 0] + gy * Xc[:, 1]) * inv_z
    g_c = np.stack([gx, gy, gz], axis=1)
    g_f = np.sum(g[:, 0] * Xc[:, 0] * inv_z + g[:, 1] * Xc[:, 1] * inv_z)
    g_R = g_c.T @ X
    dR = euler_rotation_jacobian(*cam.euler)
    g_euler = np.einsum("kab,ab->k", dR, g_R)
    g_cam = np.concatenate([g_euler, [g_c[:, 0].sum(), g_c[:, 1].sum(), g_f]])
    return g_c @ R, g_cam
