"""Blocked and patchified tokenization.

The N³ grid is cut into cells of side 8. A vertex is written as a block
token (which cell) and an offset token (where inside the cell); the
block token is left out when it repeats the block of the previous
vertex. Faces are grouped into fans around a shared center vertex, and
each fan starts with a fused token carrying both the fan shape and the
center's offset:

    [block] fused(slot, offset)   ([block] offset)*

Slot ``s < 36`` is an open fan of ``s + 1`` faces, whose ring has
``s + 2`` vertices. Slot ``s >= 36`` is a closed fan of ``s - 33``
faces with as many ring vertices.
"""
import logging
from typing import NamedTuple, Optional

import numpy as np

from ..errors import ValidationError
from ..mesh import TriangleMesh
from ..quantize import QuantizationGrid
from ..utils import package_name
from .base import (Codec, MeshVocabulary, StreamDecoder, TokenRange,
                   TokenSequence, canonical_bins, codec)

logger = logging.getLogger(package_name)

cell = 8
offsets = cell ** 3

max_open = 36
min_closed = 3
max_closed = 37
slots = max_open + max_closed - min_closed + 1


def block_vocabulary(scheme: str, resolution: int) -> MeshVocabulary:
    if resolution % cell or resolution < cell:
        raise ValidationError(
            f'block scheme needs a resolution divisible by {cell}, '
            f'got {resolution}')

    blocks = (resolution // cell) ** 3
    return MeshVocabulary(
        scheme, resolution,
        (TokenRange('block', 0, blocks),
         TokenRange('offset', blocks, blocks + offsets),
         TokenRange('fused', blocks + offsets,
                    blocks + offsets + slots * offsets)))


def split_bins(bins: np.ndarray, resolution: int
               ) -> tuple[np.ndarray, np.ndarray]:
    """(block, offset) indices of integer vertices, both zero-based."""
    bins = np.asarray(bins, dtype=np.int64)
    m = resolution // cell
    b = bins // cell
    o = bins % cell
    block = (b[..., 2] * m + b[..., 1]) * m + b[..., 0]
    offset = (o[..., 2] * cell + o[..., 1]) * cell + o[..., 0]
    return block, offset


def join_bins(block: np.ndarray, offset: np.ndarray,
              resolution: int) -> np.ndarray:
    m = resolution // cell
    block = np.asarray(block, dtype=np.int64)
    offset = np.asarray(offset, dtype=np.int64)
    b = np.stack([block % m, block // m % m, block // (m * m)], axis=-1)
    o = np.stack([offset % cell, offset // cell % cell,
                  offset // (cell * cell)], axis=-1)
    return b * cell + o


class Patch(NamedTuple):
    center: int
    ring: list[int]
    faces: list[int]
    closed: bool

    @property
    def slot(self) -> int:
        if self.closed:
            return len(self.faces) + max_open - min_closed
        return len(self.faces) - 1


def _fan(faces: list[list[int]], incident: list[int], remaining: list[bool],
         f: int, c: int) -> Patch:
    """Maximal fan of remaining faces around ``c`` that contains ``f``."""
    succ: dict[int, tuple[int, int]] = {}
    pred: dict[int, tuple[int, int]] = {}

    for g in [f] + [h for h in incident if h != f and remaining[h]]:
        face = faces[g]
        k = face.index(c)
        x, y = face[(k + 1) % 3], face[(k + 2) % 3]
        # 分岐する辺は使わない
        if x in succ or y in pred:
            continue
        succ[x] = (y, g)
        pred[y] = (x, g)

    face = faces[f]
    k = face.index(c)
    x0, y0 = face[(k + 1) % 3], face[(k + 2) % 3]
    ring = [x0, y0]
    fan = [f]
    seen = {f}

    cur = y0
    while cur in succ:
        nxt, g = succ[cur]
        if g in seen:
            break
        if nxt == x0:
            fan.append(g)
            return _closed(Patch(c, ring, fan, True), f)
        ring.append(nxt)
        fan.append(g)
        seen.add(g)
        cur = nxt

    cur = x0
    while cur in pred:
        prv, g = pred[cur]
        if g in seen or prv in ring:
            break
        ring.insert(0, prv)
        fan.insert(0, g)
        seen.add(g)
        cur = prv

    return _open(Patch(c, ring, fan, False), f)


def _closed(patch: Patch, f: int) -> Patch:
    n = len(patch.faces)

    if min_closed <= n <= max_closed:
        return patch

    # 二重面の 2 枚や長すぎる輪は開いた扇として送る
    ring = patch.ring + [patch.ring[0]]
    return _open(Patch(patch.center, ring, patch.faces, False), f)


def _open(patch: Patch, f: int) -> Patch:
    n = len(patch.faces)

    if n <= max_open:
        return patch

    start = min(patch.faces.index(f), n - max_open)
    return Patch(patch.center, patch.ring[start:start + max_open + 1],
                 patch.faces[start:start + max_open], False)


def patchify(faces: np.ndarray, n_vertices: int) -> list[Patch]:
    """Greedy cover of canonical faces by fans.

    Faces are taken in canonical order; the first remaining face is
    covered by the largest fan around one of its vertices, ties going
    to the lowest vertex index.
    """
    face_list = faces.tolist()
    incident: list[list[int]] = [[] for _ in range(n_vertices)]
    for g, face in enumerate(face_list):
        for v in face:
            incident[v].append(g)

    remaining = [True] * len(face_list)
    patches = []

    for f in range(len(face_list)):
        if not remaining[f]:
            continue

        best: Optional[Patch] = None
        for c in face_list[f]:
            patch = _fan(face_list, incident[c], remaining, f, c)
            if best is None or len(patch.faces) > len(best.faces) or (
                    len(patch.faces) == len(best.faces)
                    and c < best.center):
                best = patch

        assert best is not None
        for g in best.faces:
            remaining[g] = False
        patches.append(best)

    logger.debug(f'{len(face_list)} faces in {len(patches)} patches')
    return patches


class BlockPatchDecoder(StreamDecoder):
    def __init__(self, vocab: MeshVocabulary, start: int = 0):
        super().__init__(vocab, start)
        self.block_start = vocab.range('block').start
        self.offset_start = vocab.range('offset').start
        self.fused_start = vocab.range('fused').start
        self.previous_block: Optional[int] = None
        self.pending_block: Optional[int] = None
        self.center: Optional[int] = None
        self.closed = False
        self.ring_size = 0
        self.ring: list[int] = []

    @property
    def at_boundary(self) -> bool:
        return self.center is None and self.pending_block is None

    @property
    def expected(self) -> str:
        kind = 'offset' if self.center is not None else 'fused'

        if self.pending_block is not None:
            return kind

        return f'block or {kind}'

    def _feed(self, token: int, name: str) -> None:
        if name == 'block':
            if self.pending_block is not None:
                raise self.error('two block tokens in a row')
            self.pending_block = token - self.block_start
            return

        if name == 'fused':
            if self.center is not None:
                raise self.error('patch started inside a ring')
            slot, offset = divmod(token - self.fused_start, offsets)
            self.center = self._vertex(offset)
            self.closed = slot >= max_open
            self.ring_size = slot - max_open + min_closed \
                if self.closed else slot + 2
            self.ring = []
            return

        if self.center is None:
            raise self.error('offset token outside a ring')

        self.ring.append(self._vertex(token - self.offset_start))

        if len(self.ring) == self.ring_size:
            self._emit()

    def _vertex(self, offset: int) -> int:
        block = self.pending_block
        if block is None:
            block = self.previous_block
        if block is None:
            raise self.error('first vertex has no block token',
                             expected='block')

        self.previous_block = block
        self.pending_block = None
        xyz = join_bins(block, offset, self.vocab.resolution)
        return self.vertex(tuple(int(v) for v in xyz))  # type: ignore

    def _emit(self) -> None:
        c = self.center
        assert c is not None
        ring = self.ring
        n = len(ring) if self.closed else len(ring) - 1

        for i in range(n):
            self.add_face(c, ring[i], ring[(i + 1) % len(ring)])

        self.center = None
        self.ring = []


@codec('block')
class BlockPatchCodec(Codec):
    scheme_id = 2

    def vocabulary(self, resolution: int) -> MeshVocabulary:
        return block_vocabulary(self.key, resolution)

    def encode(self, mesh: TriangleMesh,
               grid: QuantizationGrid) -> TokenSequence:
        vocab = self.vocabulary(grid.resolution)
        bins, faces = canonical_bins(mesh, grid)

        if not len(faces):
            return TokenSequence((), vocab)

        block, offset = split_bins(bins, grid.resolution)
        block = block.tolist()
        offset = offset.tolist()
        offset_start = vocab.range('offset').start
        fused_start = vocab.range('fused').start

        tokens: list[int] = []
        previous: Optional[int] = None

        for patch in patchify(faces, len(bins)):
            for i, v in enumerate([patch.center] + patch.ring):
                if block[v] != previous:
                    tokens.append(block[v])
                    previous = block[v]
                if i == 0:
                    tokens.append(fused_start + patch.slot * offsets
                                  + offset[v])
                else:
                    tokens.append(offset_start + offset[v])

        return TokenSequence(tuple(tokens), vocab)

    def decoder(self, vocab: MeshVocabulary,
                start: int = 0) -> StreamDecoder:
        return BlockPatchDecoder(vocab, start)
