"""Reconstruction metrics over sampled point sets and boxes.

Chamfer distances use squared nearest-neighbour distances averaged per
direction (the symmetric one halves the sum); F-score thresholds plain
distances. Reports print both Chamfer values scaled by 10³.
"""
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Optional, Union

import numpy as np
from scipy.spatial import cKDTree
from shapely.geometry import Polygon

from .errors import DegenerateError, ManifestError, ValidationError
from .geometry import (PointCloud, compute_unit_cube_frame, normalize_mesh,
                       sample_points)
from .mesh import TriangleMesh, canonicalize
from .pose import (AffineTransform, GravityBox, box_from_affine,
                   corners_from_box, rotation_y, transform_mesh)
from .quantize import QuantizationGrid
from .utils import package_name

logger = logging.getLogger(package_name)

Points = Union[PointCloud, np.ndarray]

convention = 'CD = 1/2 (mean sq. NN a->b + mean sq. NN b->a); ' \
             'CD-S = mean sq. NN gt->pred; F-score on unsquared distance'

# 整列後の座標を丸める格子の細かさ (対角線の 2^-bits)
snap_bits = 18


@dataclass(frozen=True)
class MetricConfig:
    fscore_threshold: float = 0.002
    samples_per_mesh: int = 10000
    seed: int = 0

    def __post_init__(self):
        if not self.fscore_threshold > 0:
            raise ValidationError('fscore_threshold must be > 0')

        if self.samples_per_mesh < 1:
            raise ValidationError('samples_per_mesh must be >= 1')


def _points(p: Points) -> np.ndarray:
    p = p.points if isinstance(p, PointCloud) else \
        np.asarray(p, dtype=np.float64).reshape(-1, 3)

    if not len(p):
        raise ValidationError('point set is empty')

    return p


def brute_force_sq_dists(a: Points, b: Points,
                         chunk: int = 1024) -> np.ndarray:
    """Exhaustive nearest squared distances, for checking the index."""
    a, b = _points(a), _points(b)
    out = np.empty(len(a))

    for i in range(0, len(a), chunk):
        d = a[i:i + chunk, None, :] - b[None, :, :]
        out[i:i + chunk] = np.einsum('ijk,ijk->ij', d, d).min(axis=1)

    return out


def nearest_sq_dists(a: Points, b: Points,
                     method: str = 'kdtree') -> np.ndarray:
    """Squared distance from each point of ``a`` to its nearest in ``b``."""
    if method == 'brute':
        return brute_force_sq_dists(a, b)

    if method != 'kdtree':
        raise ValidationError(f'unknown nearest-neighbour method {method}')

    a, b = _points(a), _points(b)
    d, _ = cKDTree(b).query(a, k=1)
    return np.square(d)


def chamfer(a: Points, b: Points) -> float:
    return 0.5 * (float(np.mean(nearest_sq_dists(a, b)))
                  + float(np.mean(nearest_sq_dists(b, a))))


def chamfer_single(gt: Points, pred: Points) -> float:
    """Ground-truth coverage: mean over ``gt`` of squared NN to ``pred``."""
    return float(np.mean(nearest_sq_dists(gt, pred)))


class FScore(NamedTuple):
    fscore: float
    precision: float
    recall: float


def fscore(gt: Points, pred: Points, threshold: float) -> FScore:
    """F-score in percent; precision is measured from the prediction."""
    if not threshold > 0:
        raise ValidationError('threshold must be > 0')

    precision = 100.0 * float(np.mean(
        np.sqrt(nearest_sq_dists(pred, gt)) <= threshold))
    recall = 100.0 * float(np.mean(
        np.sqrt(nearest_sq_dists(gt, pred)) <= threshold))

    if precision + recall == 0:
        return FScore(0.0, precision, recall)

    return FScore(2 * precision * recall / (precision + recall),
                  precision, recall)


def _footprint(box: GravityBox) -> Polygon:
    # y を下にした 4 隅を (x, z) 平面で一周する順に並べる
    corners = corners_from_box(box)[[0, 1, 5, 4]]
    return Polygon(corners[:, [0, 2]])


def box_iou(a: GravityBox, b: GravityBox) -> float:
    """IoU of two boxes sharing the vertical axis."""
    for box in (a, b):
        try:
            box.validate()
        except ValidationError as e:
            raise DegenerateError(f'degenerate box: {e}') from e

    area = _footprint(a).intersection(_footprint(b)).area
    lo = max(a.center[1] - a.scale[1] / 2, b.center[1] - b.scale[1] / 2)
    hi = min(a.center[1] + a.scale[1] / 2, b.center[1] + b.scale[1] / 2)
    inter = area * max(0.0, hi - lo)
    union = float(np.prod(a.scale) + np.prod(b.scale)) - inter
    return float(inter / union) if union > 0 else 0.0


def _inside(box: GravityBox, p: np.ndarray) -> np.ndarray:
    local = (p - box.center) @ rotation_y(box.yaw) / (box.scale / 2)
    return np.all(np.abs(local) <= 1, axis=1)


def box_iou_monte_carlo(a: GravityBox, b: GravityBox,
                        samples: int = 1000000, seed: int = 0,
                        chunk: int = 1000000) -> float:
    """Sampled IoU over the joint bounding volume of both boxes."""
    corners = np.concatenate([corners_from_box(a), corners_from_box(b)])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    rng = np.random.default_rng(seed)
    both = either = 0

    for i in range(0, samples, chunk):
        p = rng.uniform(lo, hi, size=(min(chunk, samples - i), 3))
        ia, ib = _inside(a, p), _inside(b, p)
        both += int(np.count_nonzero(ia & ib))
        either += int(np.count_nonzero(ia | ib))

    return both / either if either else 0.0


class Alignment(NamedTuple):
    scale: float
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points) + self.translation

    def compose(self, t: AffineTransform) -> AffineTransform:
        return AffineTransform(self.scale * t.linear,
                               self.scale * t.translation + self.translation)


class SnapGrid(NamedTuple):
    """A lattice of step ``step`` centred on ``origin``.

    Both scenes are rounded onto it after alignment, so a prediction
    that differs only by a global similarity scores bit for bit the same.
    """
    origin: np.ndarray
    step: float

    @classmethod
    def around(cls, points: np.ndarray) -> 'SnapGrid':
        lo, hi = points.min(axis=0), points.max(axis=0)
        diag = float(np.linalg.norm(hi - lo))

        if not diag > 0:
            raise DegenerateError('points have zero extent')

        return cls((lo + hi) / 2, diag * 2.0 ** -snap_bits)

    def points(self, p: np.ndarray) -> np.ndarray:
        return np.rint((p - self.origin) / self.step) * self.step \
            + self.origin

    def box(self, b: GravityBox) -> GravityBox:
        yaw_step = 2.0 ** -snap_bits
        scale = np.maximum(np.rint(b.scale / self.step), 1) * self.step
        return GravityBox(self.points(b.center), scale,
                          float(np.rint(b.yaw / yaw_step)) * yaw_step)


def align_scene(pred: Points, gt: Points) -> Alignment:
    """Scale and translation matching the bounding boxes of two scenes."""
    p, g = _points(pred), _points(gt)
    p_lo, p_hi = p.min(axis=0), p.max(axis=0)
    g_lo, g_hi = g.min(axis=0), g.max(axis=0)
    p_diag = float(np.linalg.norm(p_hi - p_lo))
    g_diag = float(np.linalg.norm(g_hi - g_lo))

    if p_diag <= 0 or g_diag <= 0:
        raise DegenerateError('scene bounding box has zero diagonal')

    scale = g_diag / p_diag
    return Alignment(scale, (g_lo + g_hi) / 2 - scale * (p_lo + p_hi) / 2)


class MeshStats(NamedTuple):
    faces: int
    vertices: int
    per_mesh: list[tuple[int, int]]


def mesh_stats(meshes: Sequence[TriangleMesh],
               grid: Optional[QuantizationGrid] = None) -> MeshStats:
    """Face and vertex counts after unit-cube normalization and
    canonicalization on ``grid``."""
    grid = grid or QuantizationGrid(512)
    per_mesh = []

    for mesh in meshes:
        if not len(mesh.faces):
            per_mesh.append((0, 0))
            continue
        c = canonicalize(normalize_mesh(mesh)[0], grid)
        per_mesh.append((len(c.faces), len(c.vertices)))

    return MeshStats(sum(f for f, _ in per_mesh),
                     sum(v for _, v in per_mesh), per_mesh)


class PlacedObject(NamedTuple):
    id: int
    mesh: TriangleMesh
    transform: AffineTransform

    @property
    def posed(self) -> TriangleMesh:
        return transform_mesh(self.transform, self.mesh)

    def layout(self) -> AffineTransform:
        """The placement of the mesh's local bounding box."""
        lo, hi = self.mesh.bounds()
        half = (hi - lo) / 2
        half = np.maximum(half, 1e-9 * max(float(half.max()), 1e-9))
        t = self.transform
        return AffineTransform(t.linear @ np.diag(half),
                               t.apply((lo + hi) / 2))


class ObjectScore(NamedTuple):
    id: int
    cd: float
    cd_s: float
    fscore: float
    precision: float
    recall: float
    layout_iou: float


@dataclass
class ScoreReport:
    cd: float
    cd_s: float
    fscore: float
    precision: float
    recall: float
    threshold: float
    alignment: Alignment
    objects: list[ObjectScore] = field(default_factory=list)
    missing: list[int] = field(default_factory=list)

    def _mean(self, name: str) -> Optional[float]:
        if not self.objects:
            return None
        return float(np.mean([getattr(x, name) for x in self.objects]))

    @property
    def object_cd(self) -> Optional[float]:
        return self._mean('cd')

    @property
    def object_fscore(self) -> Optional[float]:
        return self._mean('fscore')

    @property
    def layout_iou(self) -> Optional[float]:
        return self._mean('layout_iou')

    def to_dict(self) -> dict[str, Any]:
        return {
            'convention': convention,
            'threshold': self.threshold,
            'scene': {'cd': self.cd, 'cd_s': self.cd_s,
                      'fscore': self.fscore, 'precision': self.precision,
                      'recall': self.recall},
            'alignment': {'scale': self.alignment.scale,
                          'translation':
                              self.alignment.translation.tolist()},
            'objects': [x._asdict() for x in self.objects],
            'object_mean': {'cd': self.object_cd,
                            'fscore': self.object_fscore,
                            'layout_iou': self.layout_iou},
            'missing': self.missing
        }

    def table(self) -> str:
        rows = [('', 'CD (x1e-3)', 'CD-S (x1e-3)', 'F-Score', 'IoU'),
                ('scene', f'{self.cd * 1e3:.3f}', f'{self.cd_s * 1e3:.3f}',
                 f'{self.fscore:.2f}', '')]

        for x in self.objects:
            rows.append((f'object {x.id}', f'{x.cd * 1e3:.3f}',
                         f'{x.cd_s * 1e3:.3f}', f'{x.fscore:.2f}',
                         f'{x.layout_iou:.3f}'))

        for i in self.missing:
            rows.append((f'object {i}', 'missing', '', '', ''))

        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = ['  '.join(c.rjust(w) if i else c.ljust(w)
                           for i, (c, w) in enumerate(zip(r, widths)))
                 .rstrip() for r in rows]
        return '\n'.join(lines + [f'# {convention}'])


def _seed(seed: int, object_id: int) -> int:
    # 同じ物体は予測側と正解側で同じ乱数列を使う
    return int(np.random.SeedSequence(
        [seed, object_id & 0xffffffff]).generate_state(1)[0])


def _check_ids(objects: Sequence[PlacedObject], what: str) -> None:
    ids = [x.id for x in objects]

    if len(set(ids)) != len(ids):
        raise ManifestError(f'duplicate object ids in {what}')


def _unit(points: np.ndarray) -> np.ndarray:
    frame = compute_unit_cube_frame(points)
    return frame.apply(points)


def evaluate_scene(pred: Sequence[PlacedObject], gt: Sequence[PlacedObject],
                   config: Optional[MetricConfig] = None) -> ScoreReport:
    """Scene- and object-level scores of a predicted scene.

    The predicted scene is aligned to the ground truth by one scale and
    translation before anything is measured. Objects are matched by id;
    each matched pair is normalized to the unit cube on its own.
    """
    config = config or MetricConfig()

    if not gt:
        raise ValidationError('ground truth scene has no objects')

    _check_ids(gt, 'ground truth')
    _check_ids(pred, 'prediction')

    gt_ids = {x.id for x in gt}
    extra = sorted(x.id for x in pred if x.id not in gt_ids)

    if extra:
        raise ManifestError(f'predicted objects {extra} not in ground truth')

    if not pred:
        raise ValidationError('predicted scene has no objects')

    n = config.samples_per_mesh

    def sample(objects):
        return {x.id: sample_points(x.posed, n,
                                    _seed(config.seed, x.id)).points
                for x in objects}

    gt_points = sample(gt)
    pred_points = sample(pred)

    gt_scene = np.concatenate(list(gt_points.values()))
    alignment = align_scene(np.concatenate(list(pred_points.values())),
                            gt_scene)

    # 両シーンを正解側の同じ格子に載せてから測る
    grid = SnapGrid.around(gt_scene)
    gt_points = {i: grid.points(p) for i, p in gt_points.items()}
    pred_points = {i: grid.points(alignment.apply(p))
                   for i, p in pred_points.items()}
    gt_scene = np.concatenate(list(gt_points.values()))
    pred_scene = np.concatenate(list(pred_points.values()))

    f = fscore(gt_scene, pred_scene, config.fscore_threshold)
    report = ScoreReport(
        chamfer(pred_scene, gt_scene), chamfer_single(gt_scene, pred_scene),
        f.fscore, f.precision, f.recall, config.fscore_threshold, alignment)

    pred_map = {x.id: x for x in pred}

    for g in sorted(gt, key=lambda x: x.id):
        p = pred_map.get(g.id)

        if p is None:
            report.missing.append(g.id)
            continue

        a, b = _unit(pred_points[g.id]), _unit(gt_points[g.id])
        f = fscore(b, a, config.fscore_threshold)
        local = SnapGrid.around(gt_points[g.id])
        placed = box_from_affine(alignment.compose(p.layout()))
        iou = box_iou(local.box(placed),
                      local.box(box_from_affine(g.layout())))
        report.objects.append(ObjectScore(
            g.id, chamfer(a, b), chamfer_single(b, a),
            f.fscore, f.precision, f.recall, iou))

    logger.info(f'scene CD {report.cd:.6f} CD-S {report.cd_s:.6f} '
                f'F {report.fscore:.2f}; {len(report.objects)} matched, '
                f'{len(report.missing)} missing')
    return report
