"""
Pinhole camera with ground-level extrinsics and its viewing frustum.

Conventions: the world frame is z-up with the camera standing at
(0, 0, height) and looking along +y, pitched up by the inclination angle.
The camera frame has X to the right, Y down (image v grows downward) and
Z along the optical axis. No lens distortion is modelled.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from utils.errors import BehindCamera, InvalidRange

MIN_DEPTH = 1e-9
BOUNDARY_SLACK = 1e-9
PLANE_NAMES = ("near", "far", "left", "right", "top", "bottom")


@dataclass(frozen=True)
class Intrinsics:
    focal: float = 1240.0
    principal_x: float = 579.0
    principal_y: float = 212.0
    width: int = 1176
    height: int = 640

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError(f"Focal length must be positive, got {self.focal}")
        if not 0 <= self.principal_x < self.width:
            raise ValueError(f"Principal point x {self.principal_x} outside [0, {self.width})")
        if not 0 <= self.principal_y < self.height:
            raise ValueError(f"Principal point y {self.principal_y} outside [0, {self.height})")


@dataclass(frozen=True)
class Extrinsics:
    height: float
    inclination: float

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError(f"Camera height must be positive, got {self.height}")

    @cached_property
    def rotation(self):
        """World-to-camera rotation; rows are the camera X, Y, Z axes in world coordinates"""
        c, s = np.cos(self.inclination), np.sin(self.inclination)
        return np.array([
            [1.0, 0.0, 0.0],
            [0.0, s, -c],
            [0.0, c, s],
        ])

    @cached_property
    def center(self):
        return np.array([0.0, 0.0, self.height])

    @cached_property
    def matrix(self):
        """3 x 4 world-to-camera rigid transform [R | -R C]"""
        return np.hstack([self.rotation, (-self.rotation @ self.center)[:, None]])


@dataclass(frozen=True)
class CameraRig:
    intrinsics: Intrinsics
    extrinsics: Extrinsics

    def to_camera(self, points):
        points = np.asarray(points, dtype=float)
        return (points - self.extrinsics.center) @ self.extrinsics.rotation.T

    def to_dict(self):
        return {
            "f": self.intrinsics.focal,
            "px": self.intrinsics.principal_x,
            "py": self.intrinsics.principal_y,
            "W": self.intrinsics.width,
            "H": self.intrinsics.height,
            "height": self.extrinsics.height,
            "inclination": self.extrinsics.inclination,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            Intrinsics(
                focal=float(data["f"]),
                principal_x=float(data["px"]),
                principal_y=float(data["py"]),
                width=int(data["W"]),
                height=int(data["H"]),
            ),
            Extrinsics(height=float(data["height"]), inclination=float(data["inclination"])),
        )


@dataclass(frozen=True, eq=False)
class Frustum:
    """
    Closed truncated pyramid between the near and far planes.

    A point p is inside iff normals @ p <= offsets + BOUNDARY_SLACK for all
    six outward unit normals, ordered as PLANE_NAMES.
    """
    normals: np.ndarray
    offsets: np.ndarray
    corners: np.ndarray
    d_near: float
    d_far: float

    @property
    def bounding_box(self):
        return self.corners.min(axis=0), self.corners.max(axis=0)

    def plane(self, name):
        index = PLANE_NAMES.index(name)
        return self.normals[index], self.offsets[index]


def project_many(rig, points):
    """
    Project world points to pixels

    Returns:
        (k x 2 pixel array, k camera depths)
    """
    camera_points = np.atleast_2d(rig.to_camera(points))
    depth = camera_points[:, 2]
    if np.any(depth <= MIN_DEPTH):
        raise BehindCamera(float(depth.min()))
    intr = rig.intrinsics
    u = intr.focal * camera_points[:, 0] / depth + intr.principal_x
    v = intr.focal * camera_points[:, 1] / depth + intr.principal_y
    return np.column_stack([u, v]), depth


def project(rig, world_point):
    """Pixel (u, v) of a single world point"""
    pixels, _ = project_many(rig, np.asarray(world_point, dtype=float).reshape(1, 3))
    return pixels[0]


def backproject(rig, pixel, depth):
    """World point whose projection is pixel and whose camera depth is depth"""
    pixel = np.asarray(pixel, dtype=float)
    intr = rig.intrinsics
    camera_point = np.array([
        (pixel[0] - intr.principal_x) * depth / intr.focal,
        (pixel[1] - intr.principal_y) * depth / intr.focal,
        depth,
    ])
    return rig.extrinsics.rotation.T @ camera_point + rig.extrinsics.center


def in_image(rig, pixels):
    """Closed image-rectangle test 0 <= u <= W, 0 <= v <= H"""
    pixels = np.atleast_2d(pixels)
    intr = rig.intrinsics
    return (
        (pixels[:, 0] >= 0) & (pixels[:, 0] <= intr.width)
        & (pixels[:, 1] >= 0) & (pixels[:, 1] <= intr.height)
    )


def make_frustum(rig, d_near, d_far):
    """
    Viewing frustum of the rig between the near and far depths

    Side planes pass through the camera center; near and far planes lie
    at perpendicular distances d_near and d_far along the optical axis.
    """
    if not 0 < d_near < d_far:
        raise InvalidRange(f"Frustum needs 0 < d_near < d_far, got {d_near}, {d_far}")

    intr = rig.intrinsics
    f, px, py, w, h = intr.focal, intr.principal_x, intr.principal_y, intr.width, intr.height
    camera_normals = np.array([
        [0.0, 0.0, -1.0],
        [0.0, 0.0, 1.0],
        [-f, 0.0, -px],
        [f, 0.0, px - w],
        [0.0, -f, -py],
        [0.0, f, py - h],
    ])
    camera_offsets = np.array([-d_near, d_far, 0.0, 0.0, 0.0, 0.0])
    lengths = np.linalg.norm(camera_normals, axis=1)
    camera_normals /= lengths[:, None]
    camera_offsets /= lengths

    rotation = rig.extrinsics.rotation
    center = rig.extrinsics.center
    normals = camera_normals @ rotation
    offsets = camera_offsets + normals @ center

    corners = []
    for depth in (d_near, d_far):
        for u in (0.0, w):
            for v in (0.0, h):
                corners.append(backproject(rig, (u, v), depth))

    return Frustum(
        normals=normals,
        offsets=offsets,
        corners=np.array(corners),
        d_near=float(d_near),
        d_far=float(d_far),
    )


def contains(frustum, point):
    """
    True iff the point is on the interior side of all six planes

    The set is closed: points on a face count as inside, so the image
    rectangle matches in_image with 0 <= u <= W and 0 <= v <= H, and the
    depth range is d_near <= Z <= d_far.
    """
    point = np.asarray(point, dtype=float)
    return bool(np.all(frustum.normals @ point <= frustum.offsets + BOUNDARY_SLACK))


def contains_many(frustum, points):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return np.all(points @ frustum.normals.T <= frustum.offsets + BOUNDARY_SLACK, axis=1)
