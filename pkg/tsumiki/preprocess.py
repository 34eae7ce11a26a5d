"""Asset preparation: vertex merging, decimation and candidate selection.

Every asset is worked on inside its unit cube. For each quantization
level the merged mesh is planar-decimated once, then quadric-decimated
towards each face target; the candidates are compared to the original
by sampled Hausdorff distance and one is kept.
"""
import heapq
import logging
import math
import zlib
from collections import deque
from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyMeshError, PreprocessError, TsumikiError
from .errors import ValidationError
from .geometry import normalize_mesh, sample_surface
from .mesh import TriangleMesh
from .quantize import resolutions
from .utils import package_name

logger = logging.getLogger(package_name)

default_planar_angle = math.radians(1.0)


@dataclass(frozen=True)
class PreprocessConfig:
    quant_levels: tuple[int, ...] = resolutions
    face_targets: tuple[int, ...] = (800, 2000, 4000)
    hausdorff_tau: float = 0.01
    hausdorff_samples: int = 50000
    planar_angle: float = default_planar_angle
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'quant_levels',
                           tuple(int(x) for x in self.quant_levels))
        object.__setattr__(self, 'face_targets',
                           tuple(int(x) for x in self.face_targets))

        if not self.quant_levels or any(q not in resolutions
                                        for q in self.quant_levels):
            raise ValidationError(
                f'quant_levels must be taken from {resolutions}')

        t = self.face_targets
        if not t or t[0] < 4 or any(a >= b for a, b in zip(t, t[1:])):
            raise ValidationError(
                'face_targets must be ascending and at least 4')

        if not self.hausdorff_tau > 0:
            raise ValidationError('hausdorff_tau must be > 0')

        if self.hausdorff_samples < 1:
            raise ValidationError('hausdorff_samples must be >= 1')

        if not 0 <= self.planar_angle < math.pi / 2:
            raise ValidationError('planar_angle must be in [0, pi/2)')


class CandidateResult(NamedTuple):
    mesh: TriangleMesh
    quant_level: int
    face_target: int
    hausdorff: float
    faces: int

    @property
    def reached(self) -> bool:
        """False when decimation stopped above the face target."""
        return self.faces <= self.face_target

    def provenance(self) -> dict:
        return {'quant_level': self.quant_level,
                'face_target': self.face_target,
                'hausdorff': self.hausdorff, 'faces': self.faces,
                'reached_target': self.reached}


def _drop_degenerate(faces: np.ndarray) -> np.ndarray:
    keep = ((faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
            & (faces[:, 0] != faces[:, 2]))
    return faces[keep]


def merge_vertices(mesh: TriangleMesh, q: int) -> TriangleMesh:
    """Merges vertices sharing a cell of side 1/q into their mean."""
    if q < 1:
        raise ValidationError('quantization level must be >= 1')

    cells = np.floor(mesh.vertices * q).astype(np.int64)
    _, inverse, counts = np.unique(cells, axis=0, return_inverse=True,
                                   return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, mesh.vertices)

    faces = _drop_degenerate(inverse[mesh.faces])

    if not len(faces):
        raise EmptyMeshError(f'nothing left after merging at q={q}')

    return TriangleMesh(sums / counts[:, None], faces).compact()


class _PlanarDecimator:
    """Removes vertices that lie inside flat regions or on straight
    region borders, re-triangulating the hole each removal leaves."""

    def __init__(self, mesh: TriangleMesh, angle_tol: float):
        self.vertices = mesh.vertices
        self.cos_tol = math.cos(angle_tol) - 1e-12
        self.faces: dict[int, tuple[int, int, int]] = {
            f: (a, b, c) for f, (a, b, c) in enumerate(mesh.faces.tolist())}
        self.next_id = len(self.faces)
        self.edges: dict[tuple[int, int], int] = {}
        self.locked: set[int] = set()
        self.incident: list[set[int]] = [set() for _ in self.vertices]

        normals = mesh.face_normals()
        flat = np.linalg.norm(normals, axis=1) == 0

        for f, face in self.faces.items():
            for e in _half_edges(face):
                if e in self.edges:
                    self.locked.update(e)
                else:
                    self.edges[e] = f
            for v in face:
                self.incident[v].add(f)
            if flat[f]:
                self.locked.update(face)

        self.region: dict[int, int] = {}
        self.normals: list[np.ndarray] = []
        self._grow_regions(normals)

    def _grow_regions(self, normals: np.ndarray) -> None:
        for seed in self.faces:
            if seed in self.region:
                continue

            r = len(self.normals)
            n = normals[seed]
            self.normals.append(n)
            self.region[seed] = r
            queue = deque([seed])

            while queue:
                f = queue.popleft()
                for a, b in _half_edges(self.faces[f]):
                    g = self.edges.get((b, a))
                    if g is None or g in self.region:
                        continue
                    if float(normals[g] @ n) >= self.cos_tol:
                        self.region[g] = r
                        queue.append(g)

        logger.debug(f'{len(self.faces)} faces in {len(self.normals)} '
                     'planar regions')

    def run(self) -> TriangleMesh:
        changed = True

        while changed:
            changed = False
            for v in range(len(self.vertices)):
                if v not in self.locked and self.incident[v] \
                        and self._remove(v):
                    changed = True

        faces = np.array(list(self.faces.values()),
                         dtype=np.int64).reshape(-1, 3)
        return TriangleMesh(self.vertices, faces).compact()

    def _ring(self, v: int) -> Optional[tuple[list[int], list[int], bool]]:
        """Link of ``v`` in winding order with the fan faces between."""
        succ: dict[int, tuple[int, int]] = {}
        has_pred: set[int] = set()

        for f in self.incident[v]:
            face = self.faces[f]
            k = face.index(v)
            x, y = face[(k + 1) % 3], face[(k + 2) % 3]
            if x in succ or y in has_pred:
                return None
            succ[x] = (y, f)
            has_pred.add(y)

        starts = [x for x in succ if x not in has_pred]
        closed = not starts

        if len(starts) > 1:
            return None

        start = starts[0] if starts else min(succ)
        ring = [start]
        fan: list[int] = []
        cur = start

        while cur in succ and len(fan) < len(succ):
            cur, f = succ[cur]
            fan.append(f)
            if closed and cur == start:
                break
            ring.append(cur)

        if len(fan) != len(succ):
            return None

        return ring, fan, closed

    def _remove(self, v: int) -> bool:
        found = self._ring(v)

        if found is None:
            return False

        ring, fan, closed = found
        regions = [self.region[f] for f in fan]

        if closed and len(set(regions)) == 1:
            if len(ring) < 3:
                return False
            runs = [(regions[0], ring)]
        else:
            runs = self._border_runs(v, ring, fan, regions, closed)
            if runs is None:
                return False

        new: list[tuple[tuple[int, int, int], int]] = []
        for r, polygon in runs:
            tris = _ear_clip(self.vertices, polygon, self.normals[r])
            if tris is None:
                return False
            new.extend((t, r) for t in tris)

        old = set(fan)
        created: set[tuple[int, int]] = set()
        for t, _ in new:
            for e in _half_edges(t):
                if e in created or self.edges.get(e, -1) not in (-1, *old):
                    return False
                created.add(e)

        for f in fan:
            face = self.faces.pop(f)
            del self.region[f]
            for e in _half_edges(face):
                del self.edges[e]
            for u in face:
                self.incident[u].discard(f)

        for t, r in new:
            f = self.next_id
            self.next_id += 1
            self.faces[f] = t
            self.region[f] = r
            for e in _half_edges(t):
                self.edges[e] = f
            for u in t:
                self.incident[u].add(f)

        return True

    def _border_runs(self, v: int, ring: list[int], fan: list[int],
                     regions: list[int], closed: bool
                     ) -> Optional[list[tuple[int, list[int]]]]:
        """Splits the fan of a vertex on a straight border into the two
        (or, on an open boundary, one) polygons left after removal."""
        n = len(fan)

        if closed:
            # 領域の切れ目から始まるように回す
            k = next((i for i in range(n) if regions[i] != regions[i - 1]),
                     None)
            if k is None:
                return None
            ring = ring[k:] + ring[:k]
            fan = fan[k:] + fan[:k]
            regions = regions[k:] + regions[:k]
            ring = ring + [ring[0]]

        runs: list[tuple[int, list[int]]] = []
        start = 0
        for i in range(1, n + 1):
            if i == n or regions[i] != regions[start]:
                runs.append((regions[start], ring[start:i + 1]))
                start = i

        if len(runs) != (2 if closed else 1):
            return None

        a, b = runs[0][1][0], runs[0][1][-1]

        if any(len(p) < 3 for _, p in runs):
            return None

        p = self.vertices
        d1 = p[v] - p[a]
        d2 = p[b] - p[v]
        l1, l2 = np.linalg.norm(d1), np.linalg.norm(d2)

        if l1 == 0 or l2 == 0 or float(d1 @ d2) / (l1 * l2) < self.cos_tol:
            return None

        return runs


def _half_edges(face: Sequence[int]) -> tuple[tuple[int, int], ...]:
    a, b, c = face
    return (a, b), (b, c), (c, a)


def _ear_clip(vertices: np.ndarray, polygon: list[int], normal: np.ndarray
              ) -> Optional[list[tuple[int, int, int]]]:
    """Triangulates a polygon wound counter-clockwise about ``normal``."""
    axis = np.eye(3)[int(np.argmin(np.abs(normal)))]
    u = np.cross(axis, normal)
    u /= np.linalg.norm(u)
    w = np.cross(normal, u)
    pts = {i: np.array([vertices[i] @ u, vertices[i] @ w]) for i in polygon}

    span = np.ptp(np.array(list(pts.values())), axis=0).max()
    eps = 1e-12 * max(float(span), 1e-300) ** 2

    def cross(o, a, b):
        return float((a[0] - o[0]) * (b[1] - o[1])
                     - (a[1] - o[1]) * (b[0] - o[0]))

    def inside(q, a, b, c):
        return (cross(a, b, q) >= -eps and cross(b, c, q) >= -eps
                and cross(c, a, q) >= -eps)

    index = list(polygon)
    tris = []

    while len(index) > 3:
        m = len(index)
        for i in range(m):
            a, b, c = index[i - 1], index[i], index[(i + 1) % m]
            if cross(pts[a], pts[b], pts[c]) <= eps:
                continue
            if any(inside(pts[q], pts[a], pts[b], pts[c])
                   for q in index if q not in (a, b, c)):
                continue
            tris.append((a, b, c))
            del index[i]
            break
        else:
            return None

    a, b, c = index
    if cross(pts[a], pts[b], pts[c]) <= eps:
        return None

    tris.append((a, b, c))
    return tris


def planar_decimate(mesh: TriangleMesh,
                    angle_tol: float = default_planar_angle) -> TriangleMesh:
    """Re-triangulates flat regions with fewer faces.

    Faces join a region when their normal is within ``angle_tol`` of the
    region's first face. Region borders keep their corners, so shared
    borders stay watertight.
    """
    if angle_tol < 0:
        raise ValidationError('angle_tol must be >= 0')

    if not len(mesh.faces):
        return mesh.copy()

    out = _PlanarDecimator(mesh, angle_tol).run()
    logger.debug(f'planar decimation {len(mesh.faces)} -> {len(out.faces)}')
    return out


class _QuadricDecimator:
    def __init__(self, mesh: TriangleMesh, boundary_weight: float):
        self.vertices = mesh.vertices.copy()
        self.faces = mesh.faces.copy()
        self.face_alive = np.ones(len(self.faces), dtype=bool)
        self.alive = np.ones(len(self.vertices), dtype=bool)
        self.version = [0] * len(self.vertices)
        self.incident: list[set[int]] = [set() for _ in self.vertices]
        self.count = len(self.faces)
        self.heap: list[tuple] = []
        self.counter = 0

        for f, face in enumerate(self.faces.tolist()):
            for v in face:
                self.incident[v].add(f)

        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        area = np.linalg.norm(cross, axis=1)
        normal = np.divide(cross, area[:, None], out=np.zeros_like(cross),
                           where=area[:, None] > 0)
        plane = np.concatenate(
            [normal, -np.einsum('ij,ij->i', normal, tri[:, 0])[:, None]],
            axis=1)
        k = 0.5 * area[:, None, None] * plane[:, :, None] * plane[:, None, :]

        self.quadrics = np.zeros((len(self.vertices), 4, 4))
        for i in range(3):
            np.add.at(self.quadrics, self.faces[:, i], k)

        edge_faces: dict[tuple[int, int], list[int]] = {}
        for f, face in enumerate(self.faces.tolist()):
            for a, b in _half_edges(face):
                edge_faces.setdefault((min(a, b), max(a, b)), []).append(f)

        # 境界辺には面に垂直な制約面を足す
        for (a, b), fs in edge_faces.items():
            if len(fs) != 1:
                continue
            e = self.vertices[b] - self.vertices[a]
            n = np.cross(e, normal[fs[0]])
            length = np.linalg.norm(n)
            if length == 0:
                continue
            n /= length
            p = np.append(n, -n @ self.vertices[a])
            kb = boundary_weight * float(e @ e) * np.outer(p, p)
            self.quadrics[a] += kb
            self.quadrics[b] += kb

        for a, b in edge_faces:
            self._push(a, b)

    def _target(self, q: np.ndarray, i: int, j: int) -> np.ndarray:
        a = q[:3, :3]

        if np.linalg.cond(a) < 1e10:
            return np.linalg.solve(a, -q[:3, 3])

        return (self.vertices[i] + self.vertices[j]) / 2

    def _push(self, i: int, j: int) -> None:
        q = self.quadrics[i] + self.quadrics[j]
        x = self._target(q, i, j)
        h = np.append(x, 1.0)
        cost = max(float(h @ q @ h), 0.0)
        self.counter += 1
        heapq.heappush(self.heap, (cost, self.counter, i, j, self.version[i],
                                   self.version[j], x))

    def _neighbors(self, v: int) -> set[int]:
        return {u for f in self.incident[v] for u in self.faces[f]} - {v}

    def _is_boundary(self, v: int) -> bool:
        seen: dict[int, int] = {}
        for f in self.incident[v]:
            for u in self.faces[f]:
                if u != v:
                    seen[u] = seen.get(u, 0) + 1
        return any(c == 1 for c in seen.values())

    def _can_collapse(self, i: int, j: int, x: np.ndarray) -> bool:
        shared = self.incident[i] & self.incident[j]

        if not shared or len(shared) > 2:
            return False

        opposite = {u for f in shared for u in self.faces[f]} - {i, j}

        if self._neighbors(i) & self._neighbors(j) != opposite:
            return False

        if len(shared) == 2 and self._is_boundary(i) \
                and self._is_boundary(j):
            return False

        for f in (self.incident[i] | self.incident[j]) - shared:
            tri = self.vertices[self.faces[f]]
            moved = tri.copy()
            moved[np.isin(self.faces[f], (i, j))] = x
            before = np.cross(tri[1] - tri[0], tri[2] - tri[0])
            after = np.cross(moved[1] - moved[0], moved[2] - moved[0])
            nb, na = np.linalg.norm(before), np.linalg.norm(after)
            if na <= 1e-12 * max(nb, 1e-300) or float(before @ after) <= 0:
                return False

        return True

    def _collapse(self, i: int, j: int, x: np.ndarray) -> None:
        shared = self.incident[i] & self.incident[j]

        for f in shared:
            self.face_alive[f] = False
            for u in self.faces[f]:
                self.incident[u].discard(f)
            self.count -= 1

        for f in self.incident[j]:
            self.faces[f][self.faces[f] == j] = i
            self.incident[i].add(f)

        self.incident[j] = set()
        self.alive[j] = False
        self.vertices[i] = x
        self.quadrics[i] += self.quadrics[j]
        self.version[i] += 1

        for k in self._neighbors(i):
            self._push(i, k)

    def run(self, target: int) -> TriangleMesh:
        while self.count > target and self.heap:
            _, _, i, j, vi, vj, x = heapq.heappop(self.heap)

            if not (self.alive[i] and self.alive[j]) \
                    or self.version[i] != vi or self.version[j] != vj:
                continue

            if self._can_collapse(i, j, x):
                self._collapse(i, j, x)

        if self.count > target:
            logger.warning(f'quadric decimation stopped at {self.count} '
                           f'faces, target {target}')

        return TriangleMesh(self.vertices,
                            self.faces[self.face_alive]).compact()


def quadric_decimate(mesh: TriangleMesh, target_faces: int,
                     boundary_weight: float = 1000.0) -> TriangleMesh:
    """Edge collapse by least quadric error down to ``target_faces``.

    Collapses that break the link condition, pinch two boundaries
    together or flip a face are skipped; when none remain the result
    keeps more faces than asked for and a warning is logged. Callers
    compare ``len(result.faces)`` with the target, as
    ``CandidateResult.reached`` does.
    """
    if target_faces < 4:
        raise ValidationError('target_faces must be >= 4')

    if len(mesh.faces) <= target_faces:
        return mesh.copy()

    out = _QuadricDecimator(mesh, boundary_weight).run(target_faces)
    logger.debug(f'quadric decimation {len(mesh.faces)} -> '
                 f'{len(out.faces)} (target {target_faces})')
    return out


def _digest(mesh: TriangleMesh) -> int:
    return zlib.crc32(mesh.faces.tobytes(),
                      zlib.crc32(mesh.vertices.tobytes()))


def closest_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray,
                         c: np.ndarray) -> np.ndarray:
    """Closest points on triangles (a, b, c) to points ``p``, row-wise."""
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c

    def dot(x, y):
        return np.einsum('...i,...i->...', x, y)

    d1, d2 = dot(ab, ap), dot(ac, ap)
    d3, d4 = dot(ab, bp), dot(ac, bp)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide='ignore', invalid='ignore'):
        on_ab = a + (d1 / (d1 - d3))[..., None] * ab
        on_ac = a + (d2 / (d2 - d6))[..., None] * ac
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        on_bc = b + t[..., None] * (c - b)
        denom = 1 / (va + vb + vc)
        inside = a + (vb * denom)[..., None] * ab \
            + (vc * denom)[..., None] * ac

    # 頂点, 辺, 内部の順に判定する
    conditions = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    ]
    choices = [a, b, on_ab, c, on_ac, on_bc]
    out = inside.copy()

    for cond, x in zip(reversed(conditions), reversed(choices)):
        out = np.where(cond[..., None], x, out)

    return out


def _directed(p: np.ndarray, mesh: TriangleMesh, q: np.ndarray,
              q_faces: np.ndarray, to_surface: bool, k: int = 16) -> float:
    k = min(k, len(q))
    dist, index = cKDTree(q).query(p, k=k)
    dist = dist.reshape(len(p), k)
    index = index.reshape(len(p), k)
    best = dist[:, 0]

    if to_surface:
        tri = mesh.vertices[mesh.faces[q_faces[index]]]
        closest = closest_on_triangles(p[:, None, :], tri[..., 0, :],
                                       tri[..., 1, :], tri[..., 2, :])
        exact = np.linalg.norm(closest - p[:, None, :], axis=-1)
        exact = np.where(np.isfinite(exact), exact, np.inf)
        best = np.minimum(best, exact.min(axis=1))

    return float(best.max())


def hausdorff(a: TriangleMesh, b: TriangleMesh, samples: int = 50000,
              seed: int = 0, to_surface: bool = True) -> float:
    """Symmetric Hausdorff distance between surface samples.

    Each sample's distance is taken to the nearest sample of the other
    mesh, or with ``to_surface`` to the nearest point on the faces under
    its nearest samples, which is never farther. The two meshes draw
    from independent streams of ``seed``; streams are handed out by mesh
    content so that swapping the arguments gives the same value.
    """
    for m in (a, b):
        if not len(m.faces):
            raise EmptyMeshError('cannot sample a mesh without faces')

    streams = np.random.SeedSequence(seed).spawn(2)
    first, second = (a, b) if _digest(a) <= _digest(b) else (b, a)
    p, p_faces = sample_surface(first, samples,
                                int(streams[0].generate_state(1)[0]))
    q, q_faces = sample_surface(second, samples,
                                int(streams[1].generate_state(1)[0]))

    return max(_directed(p, second, q, q_faces, to_surface),
               _directed(q, first, p, p_faces, to_surface))


def select_best(candidates: Sequence[CandidateResult],
                tau: float) -> CandidateResult:
    """Fewest faces among candidates closer than ``tau``; failing that,
    the closest candidate."""
    if not candidates:
        raise ValidationError('no candidates to select from')

    good = [c for c in candidates if c.hausdorff < tau]

    if good:
        return min(good, key=lambda c: (c.faces, c.hausdorff))

    return min(candidates, key=lambda c: (c.hausdorff, c.faces))


def preprocess_asset(mesh: TriangleMesh,
                     config: Optional[PreprocessConfig] = None
                     ) -> CandidateResult:
    """Runs every quantization level and face target, keeps the best.

    The chosen mesh is returned in the asset's own coordinates; the
    Hausdorff distance is measured in its unit cube.
    """
    config = config or PreprocessConfig()
    unit, frame = normalize_mesh(mesh)
    candidates = []

    for q in config.quant_levels:
        try:
            planar = planar_decimate(merge_vertices(unit, q),
                                     config.planar_angle)
        except TsumikiError as e:
            logger.warning(f'q={q}: {e}')
            continue

        for target in config.face_targets:
            try:
                m = quadric_decimate(planar, target)
                h = hausdorff(m, unit, config.hausdorff_samples,
                              config.seed)
            except TsumikiError as e:
                logger.warning(f'q={q} target={target}: {e}')
                continue

            logger.debug(f'q={q} target={target}: {len(m.faces)} faces, '
                         f'hausdorff {h:.5f}')
            candidates.append(CandidateResult(
                m.with_vertices(frame.invert(m.vertices)), q, target, h,
                len(m.faces)))

    if not candidates:
        raise PreprocessError('every preprocessing candidate failed')

    best = select_best(candidates, config.hausdorff_tau)
    logger.info(f'selected q={best.quant_level} target={best.face_target} '
                f'({best.faces} faces, hausdorff {best.hausdorff:.5f})')

    if not best.reached:
        logger.warning(f'selected mesh keeps {best.faces} faces, above its '
                       f'target {best.face_target}')

    return best
