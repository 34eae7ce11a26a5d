from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyMeshError, ValidationError
from .quantize import QuantizationGrid


@dataclass(eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    # 面ごとのオブジェクト ID (シーン合成時のみ)
    face_objects: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices,
                                   dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

        if self.faces.size and (self.faces.min() < 0
                                or self.faces.max() >= len(self.vertices)):
            raise ValidationError('face index out of range')

        if not np.all(np.isfinite(self.vertices)):
            raise ValidationError('mesh vertices must be finite')

        if self.face_objects is not None:
            self.face_objects = np.asarray(self.face_objects,
                                           dtype=np.int64).reshape(-1)
            if len(self.face_objects) != len(self.faces):
                raise ValidationError(
                    'face_objects must be parallel to faces')

    @classmethod
    def empty(cls) -> 'TriangleMesh':
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    def __len__(self):
        return len(self.faces)

    def copy(self) -> 'TriangleMesh':
        return TriangleMesh(
            self.vertices.copy(), self.faces.copy(),
            None if self.face_objects is None else self.face_objects.copy())

    def with_vertices(self, vertices: np.ndarray) -> 'TriangleMesh':
        return TriangleMesh(vertices, self.faces.copy(),
                            None if self.face_objects is None
                            else self.face_objects.copy())

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_cross(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])

    def face_normals(self) -> np.ndarray:
        cross = self.face_cross()
        norm = np.linalg.norm(cross, axis=1, keepdims=True)
        return np.divide(cross, norm, out=np.zeros_like(cross),
                         where=norm > 0)

    def bounds(self) -> np.ndarray:
        if not len(self.vertices):
            raise EmptyMeshError('mesh has no vertices')
        return np.stack([self.vertices.min(axis=0),
                         self.vertices.max(axis=0)])

    def compact(self) -> 'TriangleMesh':
        """Drops vertices no face refers to, keeping their order."""
        used = np.zeros(len(self.vertices), dtype=bool)
        used[self.faces.reshape(-1)] = True
        remap = np.cumsum(used) - 1
        return TriangleMesh(self.vertices[used], remap[self.faces],
                            self.face_objects)

    def same_as(self, other: 'TriangleMesh') -> bool:
        return (self.vertices.shape == other.vertices.shape
                and self.faces.shape == other.faces.shape
                and bool(np.array_equal(self.vertices, other.vertices))
                and bool(np.array_equal(self.faces, other.faces)))


def rotate_faces_min_first(faces: np.ndarray) -> np.ndarray:
    """Cyclically rotates each face so its lowest index comes first.

    Winding is preserved.
    """
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    k = np.argmin(faces, axis=1)
    cols = (k[:, None] + np.arange(3)[None, :]) % 3
    return np.take_along_axis(faces, cols, axis=1)


def canonical_form(bins: np.ndarray, faces: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Canonical (bins, faces) of an integer-vertex mesh.

    Bins are merged when equal and sorted by (z, y, x); faces with
    repeated indices or zero integer area are dropped, exact duplicates
    removed, faces rotated min-first and sorted lexicographically. Only
    referenced vertices survive.
    """
    bins = np.asarray(bins, dtype=np.int64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)

    if not len(faces):
        return np.zeros((0, 3), dtype=np.int64), faces

    # (z, y, x) の辞書順で一意化
    keys, inverse = np.unique(bins[:, ::-1], axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    faces = inverse[faces]
    merged = keys[:, ::-1]

    distinct = ((faces[:, 0] != faces[:, 1])
                & (faces[:, 1] != faces[:, 2])
                & (faces[:, 0] != faces[:, 2]))
    faces = faces[distinct]

    tri = merged[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    faces = faces[np.any(cross != 0, axis=1)]

    if not len(faces):
        return np.zeros((0, 3), dtype=np.int64), faces

    used = np.zeros(len(merged), dtype=bool)
    used[faces.reshape(-1)] = True
    remap = np.cumsum(used) - 1
    merged = merged[used]
    faces = rotate_faces_min_first(remap[faces])
    faces = np.unique(faces, axis=0)

    return merged, faces


def canonicalize(mesh: TriangleMesh, grid: QuantizationGrid) -> TriangleMesh:
    """Deterministic quantized form of ``mesh`` on ``grid``.

    Vertices of the result sit on bin centers, so quantizing them again
    gives back the canonical bins exactly.
    """
    bins, faces = canonical_form(grid.quantize(mesh.vertices), mesh.faces)

    if not len(faces):
        raise EmptyMeshError('mesh is empty after canonicalization')

    return TriangleMesh(grid.dequantize(bins), faces)


def mesh_from_bins(grid: QuantizationGrid, bins: np.ndarray,
                   faces: np.ndarray) -> TriangleMesh:
    bins, faces = canonical_form(bins, faces)

    if not len(faces):
        return TriangleMesh.empty()

    return TriangleMesh(grid.dequantize(bins), faces)


def concatenate(meshes: list[TriangleMesh],
                object_ids: Optional[list[int]] = None) -> TriangleMesh:
    if not meshes:
        return TriangleMesh.empty()

    offsets = np.cumsum([0] + [len(m.vertices) for m in meshes])
    vertices = np.concatenate([m.vertices for m in meshes])
    faces = np.concatenate([m.faces + o for m, o in zip(meshes, offsets)])

    face_objects = None
    if object_ids is not None:
        face_objects = np.concatenate([
            np.full(len(m.faces), i, dtype=np.int64)
            for m, i in zip(meshes, object_ids)
        ])

    return TriangleMesh(vertices, faces, face_objects)
