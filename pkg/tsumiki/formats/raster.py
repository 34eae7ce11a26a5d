"""Depth, mask, feature and camera inputs of the back-projection path."""
import json
import struct
from typing import Optional

import numpy as np

from ..errors import FormatError, ValidationError
from ..geometry import CameraIntrinsics, DepthMap, FeatureMap, InstanceMask
from .base import Cursor, reader, writer

fmap_header = struct.Struct('<4sIII')


def _pnm(data: bytes, magic: bytes) -> tuple[np.ndarray, int]:
    c = Cursor(data)

    if c.word() != magic:
        raise FormatError(f'expected a {magic.decode()} image')

    width, height, maxval = c.number(), c.number(), c.number()
    c.pos += 1

    if not 0 < maxval < 65536:
        raise FormatError(f'bad PGM maxval {maxval}')

    dtype = '>u2' if maxval > 255 else 'u1'
    n = width * height

    if len(data) - c.pos < n * np.dtype(dtype).itemsize:
        raise FormatError('PGM raster is truncated')

    return (np.frombuffer(data, dtype, n, c.pos).reshape(height, width),
            maxval)


@reader('depth', suffix='.pfm')
def read_pfm(data: bytes) -> DepthMap:
    c = Cursor(data)

    if c.word() != b'Pf':
        raise FormatError('expected a single-channel PFM (Pf)')

    width, height = c.number(), c.number()
    scale = c.number(float)
    c.pos += 1
    dtype = '<f4' if scale < 0 else '>f4'

    if len(data) - c.pos < width * height * 4:
        raise FormatError('PFM raster is truncated')

    # PFM は下の行から格納される
    values = np.frombuffer(data, dtype, width * height, c.pos) \
        .reshape(height, width)[::-1].astype(np.float64)
    values[~np.isfinite(values) | (values < 0)] = 0
    return DepthMap(values)


@writer('depth', suffix='.pfm')
def write_pfm(depth: DepthMap) -> bytes:
    header = f'Pf\n{depth.width} {depth.height}\n-1.0\n'.encode('ascii')
    return header + depth.values[::-1].astype('<f4').tobytes()


@reader('depth', suffix='.pgm')
def read_depth_pgm(data: bytes, depth_scale: float = 1.0) -> DepthMap:
    """16-bit depth in units of ``depth_scale`` millimeters."""
    raw, maxval = _pnm(data, b'P5')

    if maxval <= 255:
        raise FormatError('depth PGM must be 16-bit')

    if not depth_scale > 0:
        raise ValidationError('depth_scale must be > 0')

    return DepthMap(raw.astype(np.float64) * depth_scale / 1000)


@writer('depth', suffix='.pgm')
def write_depth_pgm(depth: DepthMap, depth_scale: float = 1.0) -> bytes:
    raw = np.round(depth.values * 1000 / depth_scale)

    if raw.max(initial=0) > 65535:
        raise ValidationError('depth exceeds the 16-bit range')

    header = f'P5\n{depth.width} {depth.height}\n65535\n'.encode('ascii')
    return header + raw.astype('>u2').tobytes()


@reader('mask', suffix='.pgm')
def read_mask_pgm(data: bytes, instance: Optional[int] = None
                  ) -> InstanceMask:
    """Nonzero pixels are members; ``instance`` picks one label value."""
    raw, _ = _pnm(data, b'P5')
    return InstanceMask(raw != 0 if instance is None else raw == instance)


@writer('mask', suffix='.pgm')
def write_mask_pgm(mask: InstanceMask) -> bytes:
    header = f'P5\n{mask.width} {mask.height}\n255\n'.encode('ascii')
    return header + (mask.values.astype(np.uint8) * 255).tobytes()


def encode_rle(values: np.ndarray) -> list[int]:
    """Run lengths over row-major pixels, starting with background."""
    flat = np.asarray(values, dtype=bool).reshape(-1)
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [len(flat)]])
    runs = np.diff(bounds).tolist()

    if len(flat) and flat[0]:
        runs.insert(0, 0)

    return runs


def decode_rle(runs: list[int], width: int, height: int) -> np.ndarray:
    if any(r < 0 for r in runs) or sum(runs) != width * height:
        raise FormatError(f'RLE runs do not cover {width}x{height} pixels')

    flat = np.repeat(np.arange(len(runs)) % 2 == 1, runs)
    return flat.reshape(height, width)


@reader('mask', suffix='.rle')
def read_rle(data: bytes, instance: Optional[int] = None) -> InstanceMask:
    """Text sidecar: a ``width height`` line, then ``id,runs`` records.

    Without ``instance`` the union of all records is returned.
    """
    lines = [x.strip() for x in data.decode('utf8').splitlines()]
    lines = [x for x in lines if x and not x.startswith('#')]

    try:
        width, height = (int(x) for x in lines[0].split())
        masks = {}
        for line in lines[1:]:
            key, runs = line.split(',', 1)
            masks[int(key)] = decode_rle([int(x) for x in runs.split()],
                                         width, height)
    except (IndexError, ValueError) as e:
        raise FormatError(f'bad RLE sidecar: {e}') from e

    if instance is not None:
        if instance not in masks:
            raise FormatError(f'instance {instance} not in RLE sidecar')
        return InstanceMask(masks[instance])

    union = np.zeros((height, width), dtype=bool)
    for m in masks.values():
        union |= m

    return InstanceMask(union)


@writer('mask', suffix='.rle')
def write_rle(masks: dict[int, InstanceMask]) -> bytes:
    shapes = {m.values.shape for m in masks.values()}

    if len(shapes) != 1:
        raise ValidationError('RLE masks must share one size')

    height, width = shapes.pop()
    lines = [f'{width} {height}']
    lines += [f'{i},' + ' '.join(str(x) for x in encode_rle(m.values))
              for i, m in sorted(masks.items())]
    return ('\n'.join(lines) + '\n').encode('utf8')


@reader('features', suffix='.fmap')
def read_fmap(data: bytes) -> FeatureMap:
    if len(data) < fmap_header.size:
        raise FormatError('feature map header is truncated')

    magic, width, height, channels = fmap_header.unpack_from(data)

    if magic != b'FMAP':
        raise FormatError('not a FMAP feature map')

    n = width * height * channels

    if len(data) - fmap_header.size < n * 4:
        raise FormatError('feature map is truncated')

    values = np.frombuffer(data, '<f4', n, fmap_header.size)
    return FeatureMap(values.reshape(height, width, channels)
                      .astype(np.float64))


@writer('features', suffix='.fmap')
def write_fmap(fm: FeatureMap) -> bytes:
    return fmap_header.pack(b'FMAP', fm.width, fm.height, fm.channels) \
        + fm.values.astype('<f4').tobytes()


@reader('intrinsics', suffix='.json')
def read_intrinsics(data: bytes) -> CameraIntrinsics:
    try:
        d = json.loads(data)
        return CameraIntrinsics.create(
            d['fx'], d['fy'], d['cx'], d['cy'], d['width'], d['height'])
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ValidationError):
            raise
        raise FormatError(f'bad intrinsics JSON: {e}') from e


@writer('intrinsics', suffix='.json')
def write_intrinsics(k: CameraIntrinsics) -> bytes:
    return json.dumps(k._asdict()).encode('utf8')
