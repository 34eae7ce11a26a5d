import io
import re

import numpy as np

from ..errors import FormatError, ValidationError
from ..mesh import TriangleMesh
from .base import reader, writer

_group = re.compile(r'object_(-?\d+)$')


@reader('mesh', suffix='.obj')
def read_obj(data: bytes) -> TriangleMesh:
    """Reads ``v`` and ``f`` records; polygons are split into fans.

    ``g object_<id>`` groups tag the faces that follow them.
    """
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    objects: list[int] = []
    current = -1
    tagged = False

    for n, line in enumerate(data.decode('utf8', 'replace').splitlines(), 1):
        words = line.split('#', 1)[0].split()

        if not words:
            continue

        try:
            if words[0] == 'v':
                vertices.append([float(x) for x in words[1:4]])
                if len(vertices[-1]) != 3:
                    raise ValueError('vertex needs 3 coordinates')
            elif words[0] == 'f':
                index = []
                for w in words[1:]:
                    i = int(w.split('/', 1)[0])
                    # 負のインデックスは直前の頂点からの相対位置
                    index.append(i - 1 if i > 0 else len(vertices) + i)
                if len(index) < 3:
                    raise ValueError('face needs 3 vertices')
                for k in range(1, len(index) - 1):
                    faces.append((index[0], index[k], index[k + 1]))
                    objects.append(current)
            elif words[0] in ('g', 'o'):
                m = _group.match(words[-1]) if len(words) > 1 else None
                current = int(m.group(1)) if m else -1
                tagged = tagged or m is not None
        except ValueError as e:
            raise FormatError(f'OBJ line {n}: {e}') from e

    try:
        return TriangleMesh(np.array(vertices).reshape(-1, 3),
                            np.array(faces, dtype=np.int64).reshape(-1, 3),
                            np.array(objects) if tagged else None)
    except ValidationError as e:
        raise FormatError(f'OBJ: {e}') from e


@writer('mesh', suffix='.obj')
def write_obj(mesh: TriangleMesh) -> bytes:
    out = io.StringIO()

    for v in mesh.vertices.tolist():
        out.write(f'v {v[0]!r} {v[1]!r} {v[2]!r}\n')

    faces = (mesh.faces + 1).tolist()

    if mesh.face_objects is None:
        for f in faces:
            out.write(f'f {f[0]} {f[1]} {f[2]}\n')
    else:
        current = None
        for f, i in zip(faces, mesh.face_objects.tolist()):
            if i != current:
                out.write(f'g object_{i}\n')
                current = i
            out.write(f'f {f[0]} {f[1]} {f[2]}\n')

    return out.getvalue().encode('utf8')
