"""Gravity-aligned boxes, their corner tokens and the affine fit back."""
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Any, NamedTuple, Optional

import numpy as np
from scipy.linalg import qr, solve_triangular

from .codecs.base import MeshVocabulary, TokenSequence
from .codecs.block_patch import block_vocabulary, join_bins, split_bins
from .codecs.coordinate import coordinate_vocabulary
from .errors import DegenerateError, ParseError, ValidationError
from .mesh import TriangleMesh
from .quantize import QuantizationGrid
from .utils import package_name

logger = logging.getLogger(package_name)

styles = ('axis', 'block')

# 符号ベクトルの 2 進カウント順 (x が最上位ビット)
canonical_signs = np.array([[1 if k >> (2 - i) & 1 else -1 for i in range(3)]
                            for k in range(8)], dtype=np.float64)


def wrap_angle(a: float) -> float:
    """Wraps an angle into (-pi, pi]."""
    a = math.remainder(float(a), 2 * math.pi)
    return math.pi if a <= -math.pi else a


def rotation_y(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


class GravityBox(NamedTuple):
    center: np.ndarray
    scale: np.ndarray
    yaw: float

    @classmethod
    def create(cls, center: Sequence[float], scale: Sequence[float],
               yaw: float = 0.0) -> 'GravityBox':
        box = cls(np.asarray(center, dtype=np.float64).reshape(3),
                  np.asarray(scale, dtype=np.float64).reshape(3),
                  wrap_angle(yaw))
        box.validate()
        return box

    def validate(self) -> None:
        if not (np.all(np.isfinite(self.center))
                and np.all(np.isfinite(self.scale))
                and math.isfinite(self.yaw)):
            raise ValidationError('box must be finite')

        if np.any(self.scale <= 0):
            raise ValidationError('box scale must be positive')

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> 'GravityBox':
        try:
            return cls.create(d['center'], d['scale'], d.get('yaw', 0.0))
        except (KeyError, TypeError) as e:
            raise ValidationError(f'invalid box: {e}') from e

    def to_dict(self) -> dict[str, Any]:
        return {'center': self.center.tolist(), 'scale': self.scale.tolist(),
                'yaw': self.yaw}


@dataclass(eq=False)
class AffineTransform:
    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation,
                                      dtype=np.float64).reshape(3)

        if not (np.all(np.isfinite(self.linear))
                and np.all(np.isfinite(self.translation))):
            raise ValidationError('transform must be finite')

    @classmethod
    def identity(cls) -> 'AffineTransform':
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: Iterable) -> 'AffineTransform':
        m = np.asarray(m, dtype=np.float64)

        if m.shape not in ((3, 4), (4, 4)):
            raise ValidationError(
                f'transform must be 3x4 or 4x4, got {m.shape}')

        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        return np.concatenate([self.linear, self.translation[:, None]],
                              axis=1)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.linear.T + self.translation


def corners_from_box(box: GravityBox) -> np.ndarray:
    """The 8 corners in binary-count sign order."""
    return affine_from_box(box).apply(canonical_signs)


def affine_from_box(box: GravityBox) -> AffineTransform:
    """Maps the canonical cube [-1, 1]³ onto the box."""
    return AffineTransform(rotation_y(box.yaw) @ np.diag(box.scale / 2),
                           box.center)


def _pose_vocabulary(grid: QuantizationGrid, style: str) -> MeshVocabulary:
    if style == 'axis':
        return coordinate_vocabulary('coord', grid.resolution)
    if style == 'block':
        return block_vocabulary('block', grid.resolution)
    raise ValidationError(f'unknown pose style {style}')


def pose_length(style: str) -> int:
    return {'axis': 24, 'block': 16}[style]


def encode_pose(box: GravityBox, grid: QuantizationGrid, style: str = 'axis',
                vocab: Optional[MeshVocabulary] = None) -> TokenSequence:
    """Corner tokens of ``box``; corners outside the grid are clamped.

    Token ids are those of the mesh vocabulary the style belongs to, so
    ``vocab`` may be any vocabulary sharing that layout.
    """
    vocab = vocab or _pose_vocabulary(grid, style)
    bins = grid.quantize(corners_from_box(box))

    if style == 'axis':
        return TokenSequence(tuple(bins.reshape(-1).tolist()), vocab)

    if style != 'block':
        raise ValidationError(f'unknown pose style {style}')

    block, offset = split_bins(bins, grid.resolution)
    offset = offset + vocab.range('offset').start
    return TokenSequence(
        tuple(np.stack([block, offset], axis=1).reshape(-1).tolist()), vocab)


def decode_corners(tokens: Iterable[int], grid: QuantizationGrid,
                   style: str = 'axis',
                   vocab: Optional[MeshVocabulary] = None,
                   start: int = 0) -> np.ndarray:
    vocab = vocab or _pose_vocabulary(grid, style)
    tokens = [int(t) for t in tokens]
    n = pose_length(style)

    if len(tokens) != n:
        raise ParseError(f'pose needs {n} tokens, got {len(tokens)}',
                         offset=start + min(len(tokens), n),
                         expected=f'{n} pose tokens')

    if style == 'axis':
        for i, t in enumerate(tokens):
            if vocab.token_class(t) != 'coord':
                raise ParseError(f'token {t} is not a coordinate',
                                 offset=start + i, expected='coord')
        return grid.dequantize(np.array(tokens).reshape(8, 3))

    offset_start = vocab.range('offset').start
    for i, t in enumerate(tokens):
        want = 'offset' if i % 2 else 'block'
        if vocab.token_class(t) != want:
            raise ParseError(f'token {t} is not a {want} token',
                             offset=start + i, expected=want)

    pairs = np.array(tokens).reshape(8, 2)
    bins = join_bins(pairs[:, 0], pairs[:, 1] - offset_start,
                     grid.resolution)
    return grid.dequantize(bins)


def fit_affine(local: np.ndarray, target: np.ndarray
               ) -> tuple[AffineTransform, float]:
    """Least-squares affine map taking ``local`` points onto ``target``.

    Returns the transform and the sum of squared residuals.
    """
    local = np.asarray(local, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)

    if len(local) != len(target):
        raise ValidationError('point sets must have the same length')

    a = np.concatenate([local, np.ones((len(local), 1))], axis=1)

    if len(a) < 4:
        raise DegenerateError('affine fit needs at least 4 points')

    q, r, p = qr(a, mode='economic', pivoting=True)
    d = np.abs(np.diag(r))

    if d[0] == 0 or d[-1] <= 1e-10 * d[0]:
        raise DegenerateError('local points do not span 3D')

    x = np.empty((4, 3))
    x[p] = solve_triangular(r, q.T @ target)
    residual = float(np.sum((a @ x - target) ** 2))

    logger.debug(f'affine fit residual {residual:.3e}')
    return AffineTransform(x[:3].T, x[3]), residual


def box_from_affine(t: AffineTransform) -> GravityBox:
    """Reads (center, scale, yaw) off a transform column by column."""
    norms = np.linalg.norm(t.linear, axis=0)

    if np.any(norms <= 1e-12):
        raise DegenerateError('transform has a collapsed axis')

    c0 = t.linear[:, 0]
    yaw = wrap_angle(math.atan2(-c0[2], c0[0]))
    return GravityBox(t.translation.copy(), 2 * norms, yaw)


def inflate_collapsed(t: AffineTransform,
                      grid: QuantizationGrid) -> AffineTransform:
    """Widens axes thinner than one bin to exactly one bin."""
    half = grid.bin_width / 2
    linear = t.linear.copy()
    norms = np.linalg.norm(linear, axis=0)
    collapsed = norms < half

    if not np.any(collapsed):
        return t

    if not collapsed[0]:
        yaw = math.atan2(-linear[2, 0], linear[0, 0])
    elif not collapsed[2]:
        yaw = math.atan2(linear[0, 2], linear[2, 2])
    else:
        yaw = 0.0

    directions = rotation_y(yaw)

    for i in np.flatnonzero(collapsed):
        linear[:, i] = directions[:, i] * half

    logger.debug(f'inflated collapsed axes {np.flatnonzero(collapsed)}')
    return AffineTransform(linear, t.translation)


def transform_mesh(t: AffineTransform, mesh: TriangleMesh) -> TriangleMesh:
    return mesh.with_vertices(t.apply(mesh.vertices))


def decode_pose(tokens: Iterable[int], grid: QuantizationGrid,
                style: str = 'axis', vocab: Optional[MeshVocabulary] = None,
                start: int = 0) -> tuple[AffineTransform, float]:
    """Corner tokens to the fitted, collapse-free placement transform."""
    corners = decode_corners(tokens, grid, style, vocab, start)
    t, residual = fit_affine(canonical_signs, corners)
    return inflate_collapsed(t, grid), residual
