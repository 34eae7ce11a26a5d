from collections.abc import Callable
from pathlib import Path
from typing import Any, Union

from ..errors import FormatError
from ..utils import URL, read_bytes

Reader = Callable[..., Any]
Writer = Callable[..., bytes]

_readers: dict[tuple[str, str], Reader] = {}
_writers: dict[tuple[str, str], Writer] = {}


class FormatNotFoundError(FormatError):
    ...


def get_reader(kind: str, suffix: str) -> Reader:
    try:
        return _readers[kind, suffix.lower()]
    except KeyError as e:
        raise FormatNotFoundError(
            f'no {kind} reader for "{suffix}" files') from e


def get_writer(kind: str, suffix: str) -> Writer:
    try:
        return _writers[kind, suffix.lower()]
    except KeyError as e:
        raise FormatNotFoundError(
            f'no {kind} writer for "{suffix}" files') from e


def reader(kind: str, *, suffix: str):
    def wrap(fn: Reader):
        _readers[kind, suffix] = fn
        return _readers[kind, suffix]

    return wrap


def writer(kind: str, *, suffix: str):
    def wrap(fn: Writer):
        _writers[kind, suffix] = fn
        return _writers[kind, suffix]

    return wrap


def suffixes(kind: str) -> list[str]:
    return sorted(s for k, s in _readers if k == kind)


def read(kind: str, url: Union[URL, Path, str], **options) -> Any:
    url = URL.create(url)
    fn = get_reader(kind, url.suffix)
    return fn(read_bytes(url), **options)


def write(kind: str, path: Union[Path, str], obj: Any, **options) -> None:
    path = Path(path)
    data = get_writer(kind, path.suffix)(obj, **options)
    path.write_bytes(data)


class Cursor:
    """Reads whitespace-separated header words off a binary buffer."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def word(self) -> bytes:
        data = self.data

        while True:
            while self.pos < len(data) and data[self.pos:self.pos + 1] \
                    .isspace():
                self.pos += 1
            if data[self.pos:self.pos + 1] == b'#':
                end = data.find(b'\n', self.pos)
                self.pos = len(data) if end < 0 else end + 1
                continue
            break

        start = self.pos
        while self.pos < len(data) and not data[self.pos:self.pos + 1] \
                .isspace():
            self.pos += 1

        if start == self.pos:
            raise FormatError('unexpected end of header')

        return data[start:self.pos]

    def number(self, cast=int):
        w = self.word()
        try:
            return cast(w)
        except ValueError as e:
            raise FormatError(f'expected a number, got {w!r}') from e

    def line(self) -> bytes:
        end = self.data.find(b'\n', self.pos)

        if end < 0:
            raise FormatError('unexpected end of header')

        r = self.data[self.pos:end].rstrip(b'\r')
        self.pos = end + 1
        return r
