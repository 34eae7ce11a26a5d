from typing import Any, Optional


class TsumikiError(Exception):
    code = 5

    def to_dict(self) -> dict[str, Any]:
        return {'error': type(self).__name__, 'code': self.code,
                'message': str(self)}


class ValidationError(TsumikiError, ValueError):
    code = 2


class DimensionMismatchError(ValidationError):
    ...


class BehindCameraError(ValidationError):
    ...


class DegenerateError(ValidationError):
    ...


class EmptyMeshError(ValidationError):
    ...


class ManifestError(ValidationError):
    ...


class AssemblyError(ValidationError):
    ...


class ParseError(TsumikiError, ValueError):
    code = 3

    def __init__(self, message: str, offset: Optional[int] = None,
                 expected: Optional[str] = None):
        super().__init__(message)
        self.offset = offset
        self.expected = expected

    def __str__(self):
        r = super().__str__()

        if self.offset is not None:
            r = f'{r} (at token {self.offset}'
            if self.expected:
                r += f', expected {self.expected}'
            r += ')'

        return r

    def to_dict(self) -> dict[str, Any]:
        return {**super().to_dict(), 'offset': self.offset,
                'expected': self.expected}


class GrammarError(ParseError):
    ...


class FormatError(TsumikiError, OSError):
    code = 4


class InvariantError(TsumikiError):
    ...


class PreprocessError(TsumikiError):
    ...


def exit_code(e: BaseException) -> int:
    if isinstance(e, TsumikiError):
        return e.code

    if isinstance(e, OSError):
        return 4

    return 5
