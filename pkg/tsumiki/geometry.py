"""Camera model, back-projection, normalization and point sampling.

Conventions used throughout:

- pixel (u, v) is the ray through the integer coordinate (u, v), i.e.
  pixel centers sit on integers; u runs along columns, v along rows
- the vertical (gravity) axis is +y
"""
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np

from .errors import (BehindCameraError, DegenerateError,
                     DimensionMismatchError, EmptyMeshError, ValidationError)
from .mesh import TriangleMesh
from .pose import GravityBox, rotation_y, wrap_angle
from .utils import package_name

logger = logging.getLogger(package_name)

max_yaw = math.pi / 4
scale_range = (0.75, 1.0)
shift_range = (0.0, 0.2)
default_depth_jitter = 0.02


class CameraIntrinsics(NamedTuple):
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    @classmethod
    def create(cls, fx: float, fy: float, cx: float, cy: float,
               width: int, height: int) -> 'CameraIntrinsics':
        k = cls(float(fx), float(fy), float(cx), float(cy),
                int(width), int(height))
        k.validate()
        return k

    def validate(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError('focal lengths must be positive')

        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(
                f'principal point ({self.cx}, {self.cy}) outside '
                f'{self.width}x{self.height} image')

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass(eq=False)
class DepthMap:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

        if self.values.ndim != 2:
            raise ValidationError('depth map must be a 2D raster')

        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValidationError('depth values must be finite and >= 0')

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(eq=False)
class InstanceMask:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values).astype(bool)

        if self.values.ndim != 2:
            raise ValidationError('instance mask must be a 2D raster')

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray
    pixels: Optional[np.ndarray] = field(default=None)
    features: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

        if not np.all(np.isfinite(self.points)):
            raise ValidationError('point coordinates must be finite')

        if self.pixels is not None:
            self.pixels = np.asarray(self.pixels,
                                     dtype=np.float64).reshape(-1, 2)
            if len(self.pixels) != len(self.points):
                raise ValidationError('pixels must be parallel to points')

        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.ndim == 1:
                self.features = self.features[:, None]
            if self.features.ndim != 2 \
                    or len(self.features) != len(self.points):
                raise ValidationError('features must be parallel to points')

    def __len__(self):
        return len(self.points)

    def take(self, index: np.ndarray) -> 'PointCloud':
        return PointCloud(
            self.points[index],
            None if self.pixels is None else self.pixels[index],
            None if self.features is None else self.features[index])

    def with_points(self, points: np.ndarray) -> 'PointCloud':
        return PointCloud(points, self.pixels, self.features)


@dataclass(eq=False)
class FeatureMap:
    values: np.ndarray  # (height, width, channels)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

        if self.values.ndim == 2:
            self.values = self.values[:, :, None]

        if self.values.ndim != 3 or self.values.shape[2] < 1:
            raise ValidationError('feature map must be (height, width, '
                                  'channels) with channels >= 1')

        if not np.all(np.isfinite(self.values)):
            raise ValidationError('feature values must be finite')

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


class NormalizationFrame(NamedTuple):
    center: tuple[float, float, float]
    half_extent: float

    @classmethod
    def identity(cls) -> 'NormalizationFrame':
        return cls((0.0, 0.0, 0.0), 1.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return apply_frame(self, points)

    def invert(self, points: np.ndarray) -> np.ndarray:
        return invert_frame(self, points)


class AugmentationParams(NamedTuple):
    yaw: float = 0.0
    scale: float = 1.0
    shift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    depth_jitter_max: float = default_depth_jitter
    seed: int = 0

    @classmethod
    def sample(cls, seed: int, max_yaw: float = max_yaw,
               scale_range: tuple[float, float] = scale_range,
               shift_range: tuple[float, float] = shift_range,
               depth_jitter_max: float = default_depth_jitter
               ) -> 'AugmentationParams':
        """Draws training-time augmentation parameters."""
        rng = np.random.default_rng(seed)
        yaw = float(rng.uniform(-max_yaw, max_yaw))
        scale = float(rng.uniform(*scale_range))
        shift = tuple(float(x) for x in rng.uniform(*shift_range, size=3))
        params = cls(yaw, scale, shift, depth_jitter_max,  # type: ignore
                     int(rng.integers(2 ** 31)))
        params.validate()
        return params

    def validate(self) -> None:
        # 浮動小数の誤差分だけ余裕を持たせる
        eps = 1e-12

        if not -max_yaw - eps <= self.yaw <= max_yaw + eps:
            raise ValidationError(f'yaw {self.yaw} outside [-pi/4, pi/4]')

        if not scale_range[0] - eps <= self.scale <= scale_range[1] + eps:
            raise ValidationError(f'scale {self.scale} outside [0.75, 1]')

        if len(self.shift) != 3 or not all(
                shift_range[0] - eps <= x <= shift_range[1] + eps
                for x in self.shift):
            raise ValidationError(f'shift {self.shift} outside [0, 0.2]^3')

        if self.depth_jitter_max < 0:
            raise ValidationError('depth_jitter_max must be >= 0')


def back_project(depth: DepthMap, k: CameraIntrinsics,
                 mask: Optional[InstanceMask] = None) -> PointCloud:
    if (depth.width, depth.height) != (k.width, k.height):
        raise DimensionMismatchError(
            f'depth is {depth.width}x{depth.height} but intrinsics declare '
            f'{k.width}x{k.height}')

    valid = depth.values > 0

    if mask is not None:
        if mask.values.shape != depth.values.shape:
            raise DimensionMismatchError(
                f'depth is {depth.width}x{depth.height} but mask is '
                f'{mask.width}x{mask.height}')
        valid &= mask.values

    v, u = np.nonzero(valid)
    d = depth.values[v, u]
    x = (u - k.cx) * d / k.fx
    y = (v - k.cy) * d / k.fy

    logger.debug(f'back-projected {len(d)} of {valid.size} pixels')

    return PointCloud(np.stack([x, y, d], axis=1),
                      pixels=np.stack([u, v], axis=1).astype(np.float64))


def project_points(k: CameraIntrinsics, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = points[:, 2]

    if np.any(z <= 0):
        raise BehindCameraError('cannot project points with z <= 0')

    u = k.fx * points[:, 0] / z + k.cx
    v = k.fy * points[:, 1] / z + k.cy
    return np.stack([u, v], axis=1)


def project(k: CameraIntrinsics, p) -> tuple[float, float]:
    u, v = project_points(k, np.asarray(p, dtype=np.float64))[0]
    return float(u), float(v)


def gather_features(fm: FeatureMap, pixels: np.ndarray,
                    image_size: tuple[int, int]) -> np.ndarray:
    """Bilinear lookup of per-pixel features with edge clamping.

    Image pixel centers are mapped onto feature cell centers, so a
    feature map of the image's own resolution is sampled without shift.
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    width, height = image_size

    fu = (pixels[:, 0] + 0.5) * (fm.width / width) - 0.5
    fv = (pixels[:, 1] + 0.5) * (fm.height / height) - 0.5
    fu = np.clip(fu, 0, fm.width - 1)
    fv = np.clip(fv, 0, fm.height - 1)

    u0 = np.minimum(np.floor(fu).astype(np.int64), fm.width - 1)
    v0 = np.minimum(np.floor(fv).astype(np.int64), fm.height - 1)
    u1 = np.minimum(u0 + 1, fm.width - 1)
    v1 = np.minimum(v0 + 1, fm.height - 1)
    a = (fu - u0)[:, None]
    b = (fv - v0)[:, None]

    values = fm.values
    return ((1 - a) * (1 - b) * values[v0, u0]
            + a * (1 - b) * values[v0, u1]
            + (1 - a) * b * values[v1, u0]
            + a * b * values[v1, u1])


def _as_points(points: Union[PointCloud, np.ndarray]) -> np.ndarray:
    if isinstance(points, PointCloud):
        return points.points
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def compute_unit_cube_frame(points: Union[PointCloud, np.ndarray]
                            ) -> NormalizationFrame:
    p = _as_points(points)

    if not len(p):
        raise ValidationError('cannot normalize an empty point set')

    lo, hi = p.min(axis=0), p.max(axis=0)
    half_extent = float(np.max(hi - lo)) / 2

    if half_extent <= 0:
        raise DegenerateError('points have zero extent')

    center = (lo + hi) / 2
    return NormalizationFrame(tuple(float(x) for x in center),  # type: ignore
                              half_extent)


def apply_frame(frame: NormalizationFrame, points: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    return (p - np.asarray(frame.center)) / frame.half_extent


def invert_frame(frame: NormalizationFrame, points: np.ndarray
                 ) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    return p * frame.half_extent + np.asarray(frame.center)


def normalize_mesh(mesh: TriangleMesh
                   ) -> tuple[TriangleMesh, NormalizationFrame]:
    frame = compute_unit_cube_frame(mesh.vertices)
    return mesh.with_vertices(apply_frame(frame, mesh.vertices)), frame


def normalize_scene(scene: PointCloud, instances: list[PointCloud]
                    ) -> tuple[NormalizationFrame, PointCloud,
                               list[PointCloud]]:
    """Normalizes the scene cloud and every instance cloud into one frame.

    The frame comes from the scene cloud alone, which keeps the relative
    placement of the instances.
    """
    frame = compute_unit_cube_frame(scene)
    return (frame, scene.with_points(apply_frame(frame, scene.points)),
            [x.with_points(apply_frame(frame, x.points)) for x in instances])


def augment(points: PointCloud, boxes: list[GravityBox], depth_like: bool,
            params: AugmentationParams
            ) -> tuple[PointCloud, list[GravityBox]]:
    params.validate()

    p = points.points.copy()

    if depth_like and params.depth_jitter_max > 0 and len(p):
        # 視線方向 (原点からの光線) に沿ってずらす
        rng = np.random.default_rng(params.seed)
        noise = rng.uniform(-params.depth_jitter_max,
                            params.depth_jitter_max, size=len(p))
        norm = np.linalg.norm(p, axis=1)
        ray = np.divide(p, norm[:, None], out=np.zeros_like(p),
                        where=norm[:, None] > 0)
        p = p + noise[:, None] * ray

    rotation = rotation_y(params.yaw)
    shift = np.asarray(params.shift, dtype=np.float64)
    p = params.scale * (p @ rotation.T) + shift

    out_boxes = []
    for box in boxes:
        center = params.scale * (rotation @ np.asarray(box.center)) + shift
        out_boxes.append(GravityBox(
            center, params.scale * np.asarray(box.scale, dtype=np.float64),
            wrap_angle(box.yaw + params.yaw)))

    return points.with_points(p), out_boxes


def sample_surface(mesh: TriangleMesh, n: int, seed: int
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted surface samples and the face each one lies on."""
    if n < 1:
        raise ValidationError('sample count must be >= 1')

    if not len(mesh.faces):
        raise EmptyMeshError('cannot sample a mesh without faces')

    areas = mesh.face_areas()
    total = areas.sum()

    if not total > 0:
        raise DegenerateError('mesh has zero total area')

    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.vertices[mesh.faces[face]]
    weights = np.stack([1 - r1, r1 * (1 - r2), r1 * r2], axis=1)
    return np.einsum('nk,nkd->nd', weights, tri), face


def sample_points(source: Union[TriangleMesh, PointCloud], n: int,
                  seed: int) -> PointCloud:
    """Area-weighted surface samples of a mesh, or a subsample of a cloud.

    Clouds are subsampled without replacement when ``n`` fits, with
    replacement otherwise; pixels and features follow their points.
    """
    if n < 1:
        raise ValidationError('sample count must be >= 1')

    if isinstance(source, PointCloud):
        if not len(source):
            raise ValidationError('cannot sample an empty point cloud')
        rng = np.random.default_rng(seed)
        index = rng.choice(len(source), size=n, replace=n > len(source))
        return source.take(index)

    return PointCloud(sample_surface(source, n, seed)[0])
