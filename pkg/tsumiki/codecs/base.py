from abc import ABC, abstractmethod
from collections.abc import Iterable
from dataclasses import dataclass
from typing import NamedTuple, Optional, Type, TypeVar

import numpy as np

from ..errors import EmptyMeshError, ParseError, ValidationError
from ..mesh import TriangleMesh, canonical_form, mesh_from_bins
from ..quantize import QuantizationGrid


class TokenRange(NamedTuple):
    name: str
    start: int
    stop: int

    def __contains__(self, token) -> bool:
        return self.start <= token < self.stop

    def __len__(self):
        return self.stop - self.start


@dataclass(frozen=True)
class MeshVocabulary:
    scheme: str
    resolution: int
    ranges: tuple[TokenRange, ...]
    controls: tuple[str, ...] = ()

    def __post_init__(self):
        start = 0
        for r in self.ranges:
            if r.start != start or r.stop <= r.start:
                raise ValidationError(
                    f'vocabulary range {r.name} is not contiguous')
            start = r.stop

    @property
    def size(self) -> int:
        return self.ranges[-1].stop if self.ranges else 0

    @property
    def grid(self) -> QuantizationGrid:
        return QuantizationGrid(self.resolution)

    def range(self, name: str) -> TokenRange:
        for r in self.ranges:
            if r.name == name:
                return r
        raise KeyError(name)

    def token_class(self, token: int) -> Optional[str]:
        for r in self.ranges:
            if token in r:
                return r.name
        return None

    def control(self, name: str) -> int:
        return self.range('control').start + self.controls.index(name)

    def describe(self, token: int) -> str:
        name = self.token_class(token)

        if name is None:
            return 'invalid'

        if name == 'control':
            return f'control:{self.controls[token - self.range(name).start]}'

        return name


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    vocab: MeshVocabulary

    def __post_init__(self):
        object.__setattr__(self, 'tokens', tuple(int(x) for x in self.tokens))
        size = self.vocab.size
        for i, t in enumerate(self.tokens):
            if not 0 <= t < size:
                raise ParseError(f'token {t} outside vocabulary of {size}',
                                 offset=i)

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, index):
        return self.tokens[index]


class StreamDecoder(ABC):
    """Left-to-right decoder usable as a prefix validator.

    ``feed`` raises ParseError as soon as a token cannot continue any
    valid stream; ``finish`` raises if the stream stops mid-record.
    """

    def __init__(self, vocab: MeshVocabulary, start: int = 0):
        self.vocab = vocab
        self.grid = vocab.grid
        self.offset = start
        self.bins: list[tuple[int, int, int]] = []
        self.index: dict[tuple[int, int, int], int] = {}
        self.faces: list[tuple[int, int, int]] = []

    def feed(self, token: int) -> None:
        token = int(token)
        name = self.vocab.token_class(token)

        if name is None:
            raise self.error(f'token {token} outside vocabulary')

        self._feed(token, name)
        self.offset += 1

    def feed_all(self, tokens: Iterable[int]) -> 'StreamDecoder':
        for t in tokens:
            self.feed(t)
        return self

    @abstractmethod
    def _feed(self, token: int, name: str) -> None:
        ...

    @property
    @abstractmethod
    def at_boundary(self) -> bool:
        ...

    @property
    def expected(self) -> str:
        return 'end of stream'

    def finish(self) -> TriangleMesh:
        if not self.at_boundary:
            raise ParseError('stream ends mid-record', offset=self.offset,
                             expected=self.expected)

        return mesh_from_bins(self.grid, np.array(self.bins).reshape(-1, 3),
                              np.array(self.faces).reshape(-1, 3))

    def error(self, message: str, expected: Optional[str] = None
              ) -> ParseError:
        return ParseError(message, offset=self.offset,
                          expected=expected or self.expected)

    def vertex(self, bins: tuple[int, int, int]) -> int:
        i = self.index.get(bins)

        if i is None:
            i = self.index[bins] = len(self.bins)
            self.bins.append(bins)

        return i

    def add_face(self, a: int, b: int, c: int) -> None:
        if a == b or b == c or a == c:
            raise self.error('degenerate face')

        self.faces.append((a, b, c))


Self = TypeVar('Self', bound='Codec')


@dataclass
class Codec(ABC):
    key: str

    scheme_id = -1

    @abstractmethod
    def vocabulary(self: Self, resolution: int) -> MeshVocabulary:
        ...

    @abstractmethod
    def encode(self: Self, mesh: TriangleMesh,
               grid: QuantizationGrid) -> TokenSequence:
        ...

    @abstractmethod
    def decoder(self: Self, vocab: MeshVocabulary,
                start: int = 0) -> StreamDecoder:
        ...

    def decode(self: Self, tokens: Iterable[int],
               vocab: MeshVocabulary) -> TriangleMesh:
        return self.decoder(vocab).feed_all(tokens).finish()

    def __str__(self: Self):
        return self.key


_map: dict[str, Codec] = {}


def get_codec(key: str) -> Codec:
    return _map[key]


def get_codec_by_scheme_id(scheme_id: int) -> Codec:
    for c in _map.values():
        if c.scheme_id == scheme_id:
            return c
    raise KeyError(scheme_id)


def codec_keys() -> list[str]:
    return list(_map)


def codec(key: str):
    def wrap(cls: Type[Codec]):
        _map[key] = cls(key)
        return cls

    return wrap


def canonical_bins(mesh: TriangleMesh, grid: QuantizationGrid
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Canonical integer vertices and faces an encoder works on."""
    if not len(mesh.faces):
        return np.zeros((0, 3), dtype=np.int64), mesh.faces

    bins, faces = canonical_form(grid.quantize(mesh.vertices), mesh.faces)

    if not len(faces):
        raise EmptyMeshError('mesh is empty after canonicalization')

    return bins, faces
