"""Token stream containers.

An ARMT file is an 11-byte header (magic, scheme byte, resolution, count)
followed by little-endian u32 ids.
"""
import json
import struct

import numpy as np

from ..codecs import MeshVocabulary, TokenSequence, get_codec_by_scheme_id
from ..errors import FormatError, ValidationError
from ..sequence import UnifiedVocabulary, scheme_byte, unified_flag
from .base import reader, writer

magic = b'ARMT'
header = struct.Struct('<4sBHI')


def vocabulary_of(scheme: int, resolution: int) -> MeshVocabulary:
    try:
        codec = get_codec_by_scheme_id(scheme & ~unified_flag)
    except KeyError as e:
        raise FormatError(f'unknown token scheme id {scheme}') from e

    try:
        vocab = codec.vocabulary(resolution)
    except ValidationError as e:
        raise FormatError(f'bad resolution {resolution}: {e}') from e

    if scheme & unified_flag:
        return UnifiedVocabulary.create(vocab)

    return vocab


@reader('tokens', suffix='.armt')
def read_armt(data: bytes) -> TokenSequence:
    if len(data) < header.size:
        raise FormatError('token file header is truncated')

    m, scheme, resolution, count = header.unpack_from(data)

    if m != magic:
        raise FormatError('not an ARMT token file')

    if len(data) - header.size != count * 4:
        raise FormatError(f'token file holds {(len(data) - header.size) / 4}'
                          f' ids, header says {count}')

    vocab = vocabulary_of(scheme, resolution)
    ids = np.frombuffer(data, '<u4', count, header.size)
    # 語彙外 ID は ParseError (終了コード 3) として報告する
    return TokenSequence(tuple(ids.tolist()), vocab)


@writer('tokens', suffix='.armt')
def write_armt(tokens: TokenSequence) -> bytes:
    vocab = tokens.vocab
    return header.pack(magic, scheme_byte(vocab), vocab.resolution,
                       len(tokens)) \
        + np.asarray(tokens.tokens, dtype='<u4').tobytes()


@writer('tokens', suffix='.jsonl')
def write_jsonl(tokens: TokenSequence) -> bytes:
    """One ``{"offset", "token", "class"}`` object per line."""
    vocab = tokens.vocab
    return ''.join(json.dumps({'offset': i, 'token': t,
                               'class': vocab.describe(t)}) + '\n'
                   for i, t in enumerate(tokens)).encode('utf8')
