"""Compact traversal tokenization over a half-edge structure.

A stream is a series of records, each a control token optionally
followed by coordinate tokens:

- ``B`` + 9 coords: a seed triangle; starts a component and drops the
  open edges left by the previous one
- ``C`` + 3 coords: crosses the next open edge into a triangle whose
  third vertex is visited for the first time
- ``L``: as ``C``, where the third vertex is the only one with an open
  edge into the start of the crossed edge
- ``R``: as ``C``, where the third vertex is the only one with an open
  edge out of the end of the crossed edge
- ``S`` + k coords: as ``C``, where the third vertex is named by its
  index in first-visit order, written big-endian in base N with the
  fewest digits that cover every vertex seen so far
- ``E``: the next open edge is a border and is dropped

An open edge is a decoded half-edge whose twin is not decoded yet.
Crossing the open edge (a, c) adds the triangle (c, a, v) and opens
(v, c) and then (a, v), which is crossed first. Open edges whose twin
got decoded in the meantime are skipped without a token. Non-manifold
components are sent as one ``B`` record per triangle.
"""
import logging
from collections import defaultdict
from typing import Optional

import numpy as np

from ..halfedge import HalfEdgeMesh, build_half_edge
from ..mesh import TriangleMesh
from ..quantize import QuantizationGrid
from ..utils import package_name
from .base import (Codec, MeshVocabulary, StreamDecoder, TokenRange,
                   TokenSequence, canonical_bins, codec)

logger = logging.getLogger(package_name)

controls = ('B', 'C', 'L', 'R', 'S', 'E')

Edge = tuple[int, int]


def compact_vocabulary(scheme: str, resolution: int) -> MeshVocabulary:
    return MeshVocabulary(
        scheme, resolution,
        (TokenRange('coord', 0, resolution),
         TokenRange('control', resolution, resolution + len(controls))),
        controls)


def index_width(count: int, resolution: int) -> int:
    k = 1
    while resolution ** k < count:
        k += 1
    return k


class Frontier:
    """Decoded half-edges and the stack of open edges.

    The encoder replays the decoder's frontier, so ``L`` and ``R`` are
    only written when the decoder resolves them to the same vertex.
    """

    def __init__(self):
        self.half_edges: set[Edge] = set()
        self.incoming: defaultdict[int, set[int]] = defaultdict(set)
        self.outgoing: defaultdict[int, set[int]] = defaultdict(set)
        self.stack: list[Edge] = []

    def _record(self, a: int, b: int, c: int) -> None:
        for x, y in ((a, b), (b, c), (c, a)):
            self.half_edges.add((x, y))
            self.outgoing[x].add(y)
            self.incoming[y].add(x)

    def seed(self, a: int, b: int, c: int) -> None:
        self._record(a, b, c)
        self.stack = [(c, a), (b, c), (a, b)]

    def pop(self) -> Optional[Edge]:
        while self.stack:
            a, c = self.stack.pop()
            if (c, a) not in self.half_edges:
                return a, c
        return None

    def cross(self, gate: Edge, v: int) -> bool:
        a, c = gate

        if {(c, a), (a, v), (v, c)} & self.half_edges:
            return False

        self._record(c, a, v)
        self.stack.extend(((v, c), (a, v)))
        return True

    def left(self, gate: Edge) -> Optional[int]:
        a = gate[0]
        found = [x for x in self.incoming.get(a, ())
                 if (a, x) not in self.half_edges]
        return found[0] if len(found) == 1 else None

    def right(self, gate: Edge) -> Optional[int]:
        c = gate[1]
        found = [y for y in self.outgoing.get(c, ())
                 if (y, c) not in self.half_edges]
        return found[0] if len(found) == 1 else None


class _Encoder:
    def __init__(self, he: HalfEdgeMesh, bins: np.ndarray,
                 vocab: MeshVocabulary):
        self.he = he
        self.faces = he.faces.tolist()
        self.bins = bins.tolist()
        self.resolution = vocab.resolution
        self.owner = {(f[i], f[(i + 1) % 3]): j
                      for j, f in enumerate(self.faces) for i in range(3)}
        self.visited = [False] * len(self.faces)
        self.order: dict[int, int] = {}
        self.frontier = Frontier()
        self.control = {x: vocab.control(x) for x in controls}
        self.tokens: list[int] = []

    def run(self) -> list[int]:
        labels = self.he.components()
        bad = set(labels[self.he.bad_faces()].tolist())

        for f in range(len(self.faces)):
            if self.visited[f]:
                continue

            members = np.flatnonzero(labels == labels[f]).tolist()
            if labels[f] in bad:
                self._fallback(members)
            else:
                self._traverse(f, len(members))

        return self.tokens

    def _vertex(self, v: int) -> None:
        self.order.setdefault(v, len(self.order))
        self.tokens.extend(self.bins[v])

    def _seed(self, f: int) -> None:
        self.visited[f] = True
        self.tokens.append(self.control['B'])
        for v in self.faces[f]:
            self._vertex(v)
        self.frontier.seed(*self.faces[f])

    def _fallback(self, faces: list[int]) -> None:
        logger.info(f'non-manifold component of {len(faces)} faces '
                    'stored as seed triangles')

        for f in faces:
            self._seed(f)

    def _traverse(self, f: int, size: int) -> None:
        self._seed(f)
        frontier = self.frontier

        for _ in range(size - 1):
            while True:
                gate = frontier.pop()
                assert gate is not None, 'component ran out of open edges'
                a, c = gate
                g = self.owner.get((c, a))
                if g is not None:
                    break
                self.tokens.append(self.control['E'])

            self.visited[g] = True
            (v,) = set(self.faces[g]) - {a, c}

            if v not in self.order:
                self.tokens.append(self.control['C'])
                self._vertex(v)
            elif frontier.left(gate) == v:
                self.tokens.append(self.control['L'])
            elif frontier.right(gate) == v:
                self.tokens.append(self.control['R'])
            else:
                self.tokens.append(self.control['S'])
                i = self.order[v]
                k = index_width(len(self.order), self.resolution)
                self.tokens.extend(
                    (i // self.resolution ** j) % self.resolution
                    for j in reversed(range(k)))

            crossed = frontier.cross(gate, v)
            assert crossed, f'half-edge repeated at face {g}'


class CompactDecoder(StreamDecoder):
    def __init__(self, vocab: MeshVocabulary, start: int = 0):
        super().__init__(vocab, start)
        self.state = 'control'
        self.buffer: list[int] = []
        self.frontier = Frontier()
        self.gate: Optional[Edge] = None
        self.width = 0
        self.started = False

    @property
    def at_boundary(self) -> bool:
        return self.state == 'control' and not self.buffer

    @property
    def expected(self) -> str:
        if self.state == 'control':
            return 'control' if self.started else 'B'
        return 'coord'

    def _feed(self, token: int, name: str) -> None:
        if name == 'control':
            self._control(controls[token - self.vocab.range(name).start])
            return

        if self.state == 'control':
            raise self.error('unexpected coord token')

        self.buffer.append(token)
        b = self.buffer

        if self.state == 'seed' and len(b) == 9:
            vs = [self.vertex((b[i], b[i + 1], b[i + 2])) for i in (0, 3, 6)]
            self.add_face(*vs)
            self.frontier.seed(*vs)
            self._done()
        elif self.state == 'new' and len(b) == 3:
            bins = (b[0], b[1], b[2])
            if bins in self.index:
                raise self.error('C names a vertex already decoded')
            self._cross(self.vertex(bins))
        elif self.state == 'index' and len(b) == self.width:
            i = 0
            for digit in b:
                i = i * self.vocab.resolution + digit
            if i >= len(self.bins):
                raise self.error(f'vertex index {i} out of range')
            self._cross(i)

    def _control(self, c: str) -> None:
        if self.state != 'control':
            raise self.error(f'unexpected control token {c}')

        if c == 'B':
            self.started = True
            self.state = 'seed'
            return

        if not self.started:
            raise self.error(f'{c} before a seed triangle')

        gate = self.frontier.pop()
        if gate is None:
            raise self.error('no open edge left to cross')

        if c == 'E':
            return

        self.gate = gate

        if c == 'C':
            self.state = 'new'
        elif c == 'S':
            self.state = 'index'
            self.width = index_width(len(self.bins), self.vocab.resolution)
        else:
            v = self.frontier.left(gate) if c == 'L' \
                else self.frontier.right(gate)
            if v is None:
                raise self.error(f'{c} does not name a single vertex')
            self._cross(v)

    def _cross(self, v: int) -> None:
        assert self.gate is not None
        a, c = self.gate
        self.add_face(c, a, v)

        if not self.frontier.cross(self.gate, v):
            raise self.error('half-edge used twice')

        self._done()

    def _done(self) -> None:
        self.state = 'control'
        self.buffer = []
        self.gate = None


@codec('compact')
class CompactCodec(Codec):
    scheme_id = 1

    def vocabulary(self, resolution: int) -> MeshVocabulary:
        return compact_vocabulary(self.key, resolution)

    def encode(self, mesh: TriangleMesh,
               grid: QuantizationGrid) -> TokenSequence:
        bins, faces = canonical_bins(mesh, grid)
        vocab = self.vocabulary(grid.resolution)

        if not len(faces):
            return TokenSequence((), vocab)

        he = build_half_edge(TriangleMesh(grid.dequantize(bins), faces))
        return TokenSequence(tuple(_Encoder(he, bins, vocab).run()), vocab)

    def decoder(self, vocab: MeshVocabulary,
                start: int = 0) -> StreamDecoder:
        return CompactDecoder(vocab, start)
