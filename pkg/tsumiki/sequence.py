"""``<bos> pose <sep> mesh <eos>`` streams for one object."""
from collections.abc import Iterable
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .codecs import MeshVocabulary, StreamDecoder, TokenRange, TokenSequence
from .codecs import get_codec
from .errors import AssemblyError, GrammarError, ParseError
from .pose import pose_length

specials = ('bos', 'sep', 'eos')

# 統合ストリームのスキーム ID は上位ビットを立てる
unified_flag = 0x80


@dataclass(frozen=True)
class UnifiedVocabulary(MeshVocabulary):
    """A mesh vocabulary followed by the three special ids."""

    @classmethod
    def create(cls, base: MeshVocabulary) -> 'UnifiedVocabulary':
        if isinstance(base, UnifiedVocabulary):
            return base

        top = base.size
        return cls(base.scheme, base.resolution,
                   base.ranges + (TokenRange('special', top,
                                             top + len(specials)),),
                   base.controls)

    @property
    def base(self) -> MeshVocabulary:
        return MeshVocabulary(self.scheme, self.resolution, self.ranges[:-1],
                              self.controls)

    @property
    def bos(self) -> int:
        return self.range('special').start

    @property
    def sep(self) -> int:
        return self.bos + 1

    @property
    def eos(self) -> int:
        return self.bos + 2

    @property
    def pose_style(self) -> str:
        return pose_style_of(self)

    def describe(self, token: int) -> str:
        if self.token_class(token) == 'special':
            return f'special:{specials[token - self.bos]}'
        return super().describe(token)


def pose_style_of(vocab: MeshVocabulary) -> str:
    """Corner style fixed by the mesh scheme: block layouts use offsets."""
    return 'block' if any(r.name == 'block' for r in vocab.ranges) \
        else 'axis'


class ObjectRecord(NamedTuple):
    pose_tokens: TokenSequence
    mesh_tokens: TokenSequence


class PrefixStatus(NamedTuple):
    state: str
    offset: Optional[int] = None
    reason: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.state != 'invalid'


valid_prefix = 'valid-prefix'
complete = 'complete'
invalid = 'invalid'


def assemble(record: ObjectRecord,
             vocab: MeshVocabulary) -> TokenSequence:
    unified = UnifiedVocabulary.create(vocab)
    style = pose_style_of(unified)
    n = pose_length(style)

    if len(record.pose_tokens) != n:
        raise AssemblyError(
            f'{style} pose needs {n} tokens, got {len(record.pose_tokens)}')

    tokens = [unified.bos, *record.pose_tokens, unified.sep,
              *record.mesh_tokens, unified.eos]
    return TokenSequence(tuple(tokens), unified)


class _Parser:
    def __init__(self, vocab: MeshVocabulary):
        self.vocab = UnifiedVocabulary.create(vocab)
        self.style = pose_style_of(self.vocab)
        self.n_pose = pose_length(self.style)
        self.state = 'bos'
        self.offset = 0
        self.pose: list[int] = []
        self.mesh: list[int] = []
        self.decoder: Optional[StreamDecoder] = None

    @property
    def expected(self) -> str:
        if self.state == 'pose':
            return self._pose_class()
        if self.state == 'mesh' and self.decoder is not None:
            e = self.decoder.expected
            return f'{e} or eos' if self.decoder.at_boundary else e
        return {'bos': 'bos', 'sep': 'sep', 'end': 'end of input'
                }[self.state]

    def _pose_class(self) -> str:
        if self.style == 'axis':
            return 'coord'
        return 'offset' if len(self.pose) % 2 else 'block'

    def error(self, message: str) -> GrammarError:
        return GrammarError(message, offset=self.offset,
                            expected=self.expected)

    def feed(self, token: int) -> None:
        token = int(token)
        name = self.vocab.token_class(token)

        if name is None:
            raise self.error(f'token {token} outside vocabulary')

        if self.state == 'end':
            raise self.error('trailing tokens after eos')

        if self.state == 'bos':
            if token != self.vocab.bos:
                raise self.error('sequence must start with bos')
            self.state = 'pose'
        elif self.state == 'pose':
            if name != self._pose_class():
                raise self.error(f'{self.vocab.describe(token)} token '
                                 f'inside pose ({len(self.pose)} of '
                                 f'{self.n_pose})')
            self.pose.append(token)
            if len(self.pose) == self.n_pose:
                self.state = 'sep'
        elif self.state == 'sep':
            if token != self.vocab.sep:
                raise self.error('missing sep after pose')
            self.state = 'mesh'
            self.decoder = get_codec(self.vocab.scheme).decoder(
                self.vocab.base, self.offset + 1)
        else:
            assert self.decoder is not None
            if token == self.vocab.eos:
                if not self.decoder.at_boundary:
                    raise self.error('eos inside a mesh record')
                self.state = 'end'
            elif name == 'special':
                raise self.error(f'{self.vocab.describe(token)} inside mesh')
            else:
                self.decoder.feed(token)
                self.mesh.append(token)

        self.offset += 1

    def record(self) -> ObjectRecord:
        base = self.vocab.base
        return ObjectRecord(TokenSequence(tuple(self.pose), base),
                            TokenSequence(tuple(self.mesh), base))


def parse(tokens: Iterable[int], vocab: MeshVocabulary) -> ObjectRecord:
    p = _Parser(vocab)

    for t in tokens:
        p.feed(t)

    if p.state != 'end':
        raise p.error('sequence ends early')

    return p.record()


def validate_prefix(tokens: Iterable[int],
                    vocab: MeshVocabulary) -> PrefixStatus:
    """Classifies a possibly partial stream without raising."""
    p = _Parser(vocab)

    try:
        for t in tokens:
            p.feed(t)
    except ParseError as e:
        return PrefixStatus(invalid, e.offset, e.args[0])

    return PrefixStatus(complete if p.state == 'end' else valid_prefix)


def scheme_byte(vocab: MeshVocabulary) -> int:
    """Container scheme id; unified streams carry the high bit."""
    base = get_codec(vocab.scheme).scheme_id

    if isinstance(vocab, UnifiedVocabulary):
        return unified_flag | base

    return base
