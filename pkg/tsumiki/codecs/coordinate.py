from ..mesh import TriangleMesh
from ..quantize import QuantizationGrid
from .base import (Codec, MeshVocabulary, StreamDecoder, TokenRange,
                   TokenSequence, canonical_bins, codec)


def coordinate_vocabulary(scheme: str, resolution: int) -> MeshVocabulary:
    return MeshVocabulary(scheme, resolution,
                          (TokenRange('coord', 0, resolution),))


class CoordinateDecoder(StreamDecoder):
    def __init__(self, vocab: MeshVocabulary, start: int = 0):
        super().__init__(vocab, start)
        self.buffer: list[int] = []

    def _feed(self, token: int, name: str) -> None:
        if name != 'coord':
            raise self.error(f'unexpected {name} token')

        self.buffer.append(token)

        if len(self.buffer) == 9:
            b = self.buffer
            self.add_face(*(self.vertex((b[i], b[i + 1], b[i + 2]))
                            for i in (0, 3, 6)))
            self.buffer = []

    @property
    def at_boundary(self) -> bool:
        return not self.buffer

    @property
    def expected(self) -> str:
        return 'coord' if self.buffer else 'coord or end of stream'


@codec('coord')
class CoordinateCodec(Codec):
    """Nine coordinate tokens per face, faces in canonical order."""

    scheme_id = 0

    def vocabulary(self, resolution: int) -> MeshVocabulary:
        return coordinate_vocabulary(self.key, resolution)

    def encode(self, mesh: TriangleMesh,
               grid: QuantizationGrid) -> TokenSequence:
        bins, faces = canonical_bins(mesh, grid)
        return TokenSequence(tuple(bins[faces].reshape(-1).tolist()),
                             self.vocabulary(grid.resolution))

    def decoder(self, vocab: MeshVocabulary,
                start: int = 0) -> StreamDecoder:
        return CoordinateDecoder(vocab, start)
