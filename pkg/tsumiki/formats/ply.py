"""Binary little-endian PLY for meshes and point clouds."""
from typing import Union

import numpy as np

from ..errors import FormatError, ValidationError
from ..geometry import PointCloud
from ..mesh import TriangleMesh
from .base import Cursor, reader, writer

_types = {
    'char': 'i1', 'int8': 'i1', 'uchar': 'u1', 'uint8': 'u1',
    'short': '<i2', 'int16': '<i2', 'ushort': '<u2', 'uint16': '<u2',
    'int': '<i4', 'int32': '<i4', 'uint': '<u4', 'uint32': '<u4',
    'float': '<f4', 'float32': '<f4', 'double': '<f8', 'float64': '<f8'
}


def _type(name: bytes) -> str:
    try:
        return _types[name.decode()]
    except (KeyError, UnicodeDecodeError) as e:
        raise FormatError(f'unknown PLY type {name!r}') from e


def _header(c: Cursor) -> list[tuple[str, int, list[tuple]]]:
    if c.line() != b'ply':
        raise FormatError('not a PLY file')

    elements: list[tuple[str, int, list[tuple]]] = []

    while True:
        words = c.line().split()

        if not words or words[0] in (b'comment', b'obj_info'):
            continue

        if words[0] == b'format':
            if words[1] != b'binary_little_endian':
                raise FormatError(
                    f'unsupported PLY format {words[1].decode()}')
        elif words[0] == b'element':
            elements.append((words[1].decode(), int(words[2]), []))
        elif words[0] == b'property':
            if not elements:
                raise FormatError('PLY property outside an element')
            if words[1] == b'list':
                elements[-1][2].append((words[4].decode(), _type(words[2]),
                                        _type(words[3])))
            else:
                elements[-1][2].append((words[2].decode(), _type(words[1])))
        elif words[0] == b'end_header':
            return elements
        else:
            raise FormatError(f'bad PLY header line {words[0]!r}')


def _read_faces(data: bytes, pos: int, count: int, props: list[tuple]
                ) -> tuple[np.ndarray, dict[str, np.ndarray], int]:
    lists = [p for p in props if len(p) == 3]

    if len(lists) != 1 or lists[0][0] not in ('vertex_indices',
                                              'vertex_index'):
        raise FormatError('PLY face needs one vertex_indices list')

    # 全面が三角形なら固定長として一括で読む
    fields = []
    for p in props:
        if len(p) == 3:
            fields += [('n', p[1]), ('v', p[2], 3)]
        else:
            fields.append((p[0], p[1]))
    fixed = np.dtype(fields)

    if pos + fixed.itemsize * count <= len(data):
        rows = np.frombuffer(data, fixed, count, pos)
        if count == 0 or np.all(rows['n'] == 3):
            extra = {p[0]: rows[p[0]] for p in props if len(p) == 2}
            return (rows['v'].astype(np.int64),
                    extra, pos + fixed.itemsize * count)

    faces = []
    extra_rows: dict[str, list] = {p[0]: [] for p in props if len(p) == 2}

    for _ in range(count):
        for p in props:
            if len(p) == 3:
                n = int(np.frombuffer(data, p[1], 1, pos)[0])
                pos += np.dtype(p[1]).itemsize
                index = np.frombuffer(data, p[2], n, pos).tolist()
                pos += np.dtype(p[2]).itemsize * n
                for k in range(1, n - 1):
                    faces.append((index[0], index[k], index[k + 1]))
            else:
                extra_rows[p[0]].append(np.frombuffer(data, p[1], 1, pos)[0])
                pos += np.dtype(p[1]).itemsize

    return (np.array(faces, dtype=np.int64).reshape(-1, 3),
            {k: np.array(v) for k, v in extra_rows.items()}, pos)


@reader('mesh', suffix='.ply')
def read_ply(data: bytes) -> TriangleMesh:
    c = Cursor(data)
    elements = _header(c)
    pos = c.pos
    vertices = np.zeros((0, 3))
    faces = np.zeros((0, 3), dtype=np.int64)
    face_objects = None

    try:
        for name, count, props in elements:
            if name == 'face':
                faces, extra, pos = _read_faces(data, pos, count, props)
                if 'object_id' in extra:
                    face_objects = extra['object_id'].astype(np.int64)
                continue

            if any(len(p) == 3 for p in props):
                raise FormatError(f'unsupported list in PLY {name}')

            dtype = np.dtype([(p[0], p[1]) for p in props])
            rows = np.frombuffer(data, dtype, count, pos)
            pos += dtype.itemsize * count

            if name == 'vertex':
                vertices = np.stack([rows[k].astype(np.float64)
                                     for k in 'xyz'], axis=1)

        return TriangleMesh(vertices, faces, face_objects)
    except (ValueError, ValidationError) as e:
        raise FormatError(f'PLY: {e}') from e


def _ply(elements: list[tuple[str, int, list[str]]],
         body: list[bytes]) -> bytes:
    lines = ['ply', 'format binary_little_endian 1.0']

    for name, count, props in elements:
        lines.append(f'element {name} {count}')
        lines += props

    lines.append('end_header')
    return ('\n'.join(lines) + '\n').encode('ascii') + b''.join(body)


@writer('mesh', suffix='.ply')
def write_ply(obj: Union[TriangleMesh, PointCloud]) -> bytes:
    if isinstance(obj, PointCloud):
        return _write_cloud(obj)

    mesh = obj
    vertex = mesh.vertices.astype('<f8')
    face_fields = [('n', 'u1'), ('v', '<i4', 3)]
    face_props = ['property list uchar int vertex_indices']

    if mesh.face_objects is not None:
        face_fields.append(('object_id', '<u4'))
        face_props.append('property uint object_id')

    rows = np.zeros(len(mesh.faces), dtype=np.dtype(face_fields))
    rows['n'] = 3
    rows['v'] = mesh.faces

    if mesh.face_objects is not None:
        if np.any(mesh.face_objects < 0):
            raise ValidationError('object ids must be >= 0 for PLY')
        rows['object_id'] = mesh.face_objects

    return _ply([('vertex', len(vertex),
                  [f'property double {k}' for k in 'xyz']),
                 ('face', len(rows), face_props)],
                [vertex.tobytes(), rows.tobytes()])


def _write_cloud(cloud: PointCloud) -> bytes:
    columns = [cloud.points]
    names = ['x', 'y', 'z']

    if cloud.pixels is not None:
        columns.append(cloud.pixels)
        names += ['u', 'v']

    if cloud.features is not None:
        columns.append(cloud.features)
        names += [f'f{i}' for i in range(cloud.features.shape[1])]

    table = np.ascontiguousarray(
        np.concatenate(columns, axis=1).astype('<f4'))
    return _ply([('vertex', len(table),
                  [f'property float {k}' for k in names])],
                [table.tobytes()])
