from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .mesh import TriangleMesh


@dataclass(eq=False)
class HalfEdgeMesh:
    """Half-edge connectivity of a triangle mesh.

    Half-edge ``3 * f + k`` runs from ``faces[f][k]`` to
    ``faces[f][(k + 1) % 3]``. Twins are only linked across edges shared
    by exactly two oppositely oriented half-edges; everything else is
    reported and left unlinked.
    """

    faces: np.ndarray
    origin: np.ndarray
    twin: np.ndarray
    outgoing: np.ndarray
    non_manifold_edges: list[tuple[int, int]] = field(default_factory=list)
    inconsistent_edges: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self):
        return len(self.origin)

    @staticmethod
    def face_of(h: int) -> int:
        return h // 3

    @staticmethod
    def next(h: int) -> int:
        return h - h % 3 + (h % 3 + 1) % 3

    @staticmethod
    def prev(h: int) -> int:
        return h - h % 3 + (h % 3 + 2) % 3

    def target(self, h: int) -> int:
        return int(self.origin[self.next(h)])

    def opposite_vertex(self, h: int) -> int:
        return int(self.origin[self.prev(h)])

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.twin < 0)

    @property
    def is_manifold(self) -> bool:
        return not (self.non_manifold_edges or self.inconsistent_edges)

    def bad_faces(self) -> np.ndarray:
        """Faces touching a non-manifold or inconsistently oriented edge."""
        bad = np.zeros(len(self.faces), dtype=bool)
        edges = set(self.non_manifold_edges) | set(self.inconsistent_edges)

        if edges:
            a = self.origin
            b = self.origin[[self.next(h) for h in range(len(a))]]
            keys = zip(np.minimum(a, b).tolist(), np.maximum(a, b).tolist())
            for h, key in enumerate(keys):
                if key in edges:
                    bad[h // 3] = True

        return bad

    def components(self) -> np.ndarray:
        """Labels faces by edge-connected component.

        Faces count as connected through any shared edge, including
        the ones left without twins.
        """
        n = len(self.faces)

        if not n:
            return np.zeros(0, dtype=np.int64)

        a = self.origin
        b = self.origin[[self.next(h) for h in range(len(a))]]
        key = np.minimum(a, b) * (int(a.max()) + 1) + np.maximum(a, b)
        order = np.argsort(key, kind='stable')
        same = key[order][1:] == key[order][:-1]
        rows = order[:-1][same] // 3
        cols = order[1:][same] // 3
        graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        _, labels = connected_components(graph, directed=False)
        return labels


def build_half_edge(mesh: TriangleMesh) -> HalfEdgeMesh:
    faces = mesh.faces
    origin = faces.reshape(-1).copy()
    target = np.roll(faces, -1, axis=1).reshape(-1)
    twin = np.full(len(origin), -1, dtype=np.int64)

    groups: dict[tuple[int, int], list[int]] = {}
    for h, (a, b) in enumerate(zip(origin.tolist(), target.tolist())):
        groups.setdefault((min(a, b), max(a, b)), []).append(h)

    non_manifold = []
    inconsistent = []

    for key, hs in groups.items():
        if len(hs) > 2:
            non_manifold.append(key)
        elif len(hs) == 2:
            h0, h1 = hs
            if origin[h0] == origin[h1]:
                # 同じ向きの半辺が 2 本ある = 向きが揃っていない
                inconsistent.append(key)
            else:
                twin[h0], twin[h1] = h1, h0

    outgoing = np.full(len(mesh.vertices), -1, dtype=np.int64)
    outgoing[origin[::-1]] = np.arange(len(origin))[::-1]

    return HalfEdgeMesh(faces=faces.copy(), origin=origin, twin=twin,
                        outgoing=outgoing,
                        non_manifold_edges=sorted(non_manifold),
                        inconsistent_edges=sorted(inconsistent))
