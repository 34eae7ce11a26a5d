from pathlib import Path
from typing import Union

from ..codecs import TokenSequence
from ..geometry import (CameraIntrinsics, DepthMap, FeatureMap, InstanceMask,
                        PointCloud)
from ..mesh import TriangleMesh
from ..utils import URL
from .base import (Cursor, FormatNotFoundError, get_reader, get_writer, read,
                   reader, suffixes, write, writer)
from .obj import read_obj, write_obj
from .ply import read_ply, write_ply
from .raster import (decode_rle, encode_rle, read_depth_pgm, read_fmap,
                     read_intrinsics, read_mask_pgm, read_pfm, read_rle,
                     write_depth_pgm, write_fmap, write_intrinsics,
                     write_mask_pgm, write_pfm, write_rle)
from .tokens import read_armt, vocabulary_of, write_armt, write_jsonl

Source = Union[URL, Path, str]


def read_mesh(url: Source) -> TriangleMesh:
    return read('mesh', url)


def write_mesh(path: Union[Path, str],
               mesh: Union[TriangleMesh, PointCloud]) -> None:
    write('mesh', path, mesh)


def read_tokens(url: Source) -> TokenSequence:
    return read('tokens', url)


def write_tokens(path: Union[Path, str], tokens: TokenSequence) -> None:
    write('tokens', path, tokens)


def read_depth(url: Source, depth_scale: float = 1.0) -> DepthMap:
    if URL.create(url).suffix == '.pgm':
        return read('depth', url, depth_scale=depth_scale)
    return read('depth', url)


def read_mask(url: Source, instance=None) -> InstanceMask:
    return read('mask', url, instance=instance)


def read_features(url: Source) -> FeatureMap:
    return read('features', url)


def read_camera(url: Source) -> CameraIntrinsics:
    return read('intrinsics', url)


__all__ = [
    'Cursor',
    'FormatNotFoundError',
    'decode_rle',
    'encode_rle',
    'get_reader',
    'get_writer',
    'read',
    'read_armt',
    'read_camera',
    'read_depth',
    'read_depth_pgm',
    'read_features',
    'read_fmap',
    'read_intrinsics',
    'read_mask',
    'read_mask_pgm',
    'read_mesh',
    'read_obj',
    'read_pfm',
    'read_ply',
    'read_rle',
    'read_tokens',
    'reader',
    'suffixes',
    'vocabulary_of',
    'write',
    'write_armt',
    'write_depth_pgm',
    'write_fmap',
    'write_intrinsics',
    'write_jsonl',
    'write_mask_pgm',
    'write_mesh',
    'write_obj',
    'write_pfm',
    'write_ply',
    'write_rle',
    'write_tokens',
    'writer'
]
