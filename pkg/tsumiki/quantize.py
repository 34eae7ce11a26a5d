from typing import NamedTuple, Union

import numpy as np

from .errors import ValidationError

resolutions = (128, 256, 512, 1024)

ArrayLike = Union[float, int, np.ndarray, list, tuple]


class QuantizationGrid(NamedTuple):
    """Uniform grid over [-1, 1] with ``resolution`` bins per axis."""

    resolution: int
    lo: float = -1.0
    hi: float = 1.0

    @classmethod
    def create(cls, resolution: int) -> 'QuantizationGrid':
        resolution = int(resolution)

        # 2 のべき乗のみ (ブロック分割で割り切れる必要がある)
        if resolution < 2 or resolution & (resolution - 1):
            raise ValidationError(
                f'resolution must be a power of two >= 2, got {resolution}')

        return cls(resolution)

    @property
    def bin_width(self) -> float:
        return (self.hi - self.lo) / self.resolution

    def quantize(self, x: ArrayLike) -> np.ndarray:
        return quantize(self, x)

    def dequantize(self, index: ArrayLike) -> np.ndarray:
        return dequantize(self, index)


def quantize(grid: QuantizationGrid, x: ArrayLike) -> np.ndarray:
    """Maps coordinates to bin indices, clamping outside values."""
    x = np.asarray(x, dtype=np.float64)

    if not np.all(np.isfinite(x)):
        raise ValidationError('cannot quantize non-finite coordinates')

    n = grid.resolution
    index = np.floor((x - grid.lo) / (grid.hi - grid.lo) * n)
    return np.clip(index, 0, n - 1).astype(np.int64)


def dequantize(grid: QuantizationGrid, index: ArrayLike) -> np.ndarray:
    """Maps bin indices to bin centers."""
    index = np.asarray(index)

    if index.size and (not np.issubdtype(index.dtype, np.integer)
                       or index.min() < 0
                       or index.max() >= grid.resolution):
        raise ValidationError(
            f'bin index out of range [0, {grid.resolution})')

    return grid.lo + (index.astype(np.float64) + 0.5) * grid.bin_width
