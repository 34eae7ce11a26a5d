from collections.abc import Iterable, Sequence
from typing import NamedTuple, Optional

from ..errors import ValidationError
from ..mesh import TriangleMesh
from ..quantize import QuantizationGrid
from .base import (Codec, MeshVocabulary, StreamDecoder, TokenRange,
                   TokenSequence, canonical_bins, codec, codec_keys,
                   get_codec, get_codec_by_scheme_id)
from .block_patch import (BlockPatchCodec, Patch, block_vocabulary,
                          join_bins, patchify, split_bins)
from .compact import CompactCodec, compact_vocabulary
from .coordinate import CoordinateCodec, coordinate_vocabulary


def encode(mesh: TriangleMesh, grid: QuantizationGrid,
           scheme: str = 'coord') -> TokenSequence:
    return get_codec(scheme).encode(mesh, grid)


def decode(tokens: Iterable[int], vocab: MeshVocabulary) -> TriangleMesh:
    return get_codec(vocab.scheme).decode(tokens, vocab)


class SchemeReport(NamedTuple):
    scheme: str
    resolution: int
    vocab_size: int
    tokens: int
    faces: int
    ratio: float

    @property
    def tokens_per_face(self) -> float:
        return self.tokens / self.faces if self.faces else 0.0


def compression_report(corpus: Sequence[TriangleMesh],
                       grid: QuantizationGrid,
                       schemes: Optional[Sequence[str]] = None,
                       grids: Optional[dict[str, QuantizationGrid]] = None
                       ) -> list[SchemeReport]:
    """Mean token counts per scheme against the coordinate baseline.

    ``grids`` overrides the grid per scheme; the baseline for a scheme
    is the coordinate encoding on that scheme's grid.
    """
    if not corpus:
        raise ValidationError('compression report needs a nonempty corpus')

    grids = grids or {}
    report = []

    # 基準の座標方式を先頭に並べる
    for scheme in schemes or sorted(codec_keys(),
                                    key=lambda k: get_codec(k).scheme_id):
        g = grids.get(scheme, grid)
        c = get_codec(scheme)
        tokens = 0
        baseline = 0
        faces = 0

        for mesh in corpus:
            n = len(canonical_bins(mesh, g)[1])
            faces += n
            baseline += 9 * n
            tokens += len(c.encode(mesh, g))

        report.append(SchemeReport(
            scheme, g.resolution, c.vocabulary(g.resolution).size,
            tokens, faces, tokens / baseline if baseline else 1.0))

    return report


__all__ = [
    'BlockPatchCodec',
    'Codec',
    'CompactCodec',
    'CoordinateCodec',
    'MeshVocabulary',
    'Patch',
    'SchemeReport',
    'StreamDecoder',
    'TokenRange',
    'TokenSequence',
    'block_vocabulary',
    'canonical_bins',
    'codec',
    'codec_keys',
    'compact_vocabulary',
    'compression_report',
    'coordinate_vocabulary',
    'decode',
    'encode',
    'get_codec',
    'get_codec_by_scheme_id',
    'join_bins',
    'patchify',
    'split_bins'
]
