import json
import tempfile
from pathlib import Path

import numpy as np

from tsumiki.assembly import (compose, compose_scene, decode_object,
                              load_manifest, manifest_to_dict,
                              parse_manifest, placed_objects)
from tsumiki.codecs import encode, get_codec
from tsumiki.errors import FormatError, ManifestError, ValidationError
from tsumiki.formats import write_mesh, write_tokens
from tsumiki.mesh import canonicalize
from tsumiki.metrics import PlacedObject
from tsumiki.pose import (AffineTransform, GravityBox, affine_from_box,
                          canonical_signs, corners_from_box, encode_pose,
                          transform_mesh)
from tsumiki.quantize import QuantizationGrid
from tsumiki.sequence import ObjectRecord, assemble, pose_style_of
from tsumiki.utils import URL

from corpus import box, chair, icosphere, tetrahedron


def stream(mesh, b: GravityBox, scheme: str = 'compact', n: int = 512):
    grid = QuantizationGrid.create(n)
    vocab = get_codec(scheme).vocabulary(n)
    pose = encode_pose(b, grid, pose_style_of(vocab), vocab)
    return assemble(ObjectRecord(pose, encode(mesh, grid, scheme)), vocab)


def test_parse_manifest():
    m = parse_manifest([{'id': 2, 'mesh_path': 'b.obj',
                         'transform': np.eye(4)[:3].tolist()},
                        {'id': 1, 'token_path': 'sub/a.armt'}],
                       '/data/scene/manifest.json')
    assert (_ := [x.id for x in m.objects]) == [2, 1], _
    assert (_ := str(m.objects[0].mesh_path)) == '/data/scene/b.obj', _
    assert (_ := str(m.objects[1].token_path)) \
        == '/data/scene/sub/a.armt', _
    assert (_ := m.frame.half_extent) == 1.0, _

    # 絶対パスと他のスキームはそのまま
    m = parse_manifest({'objects': [{'id': 1, 'mesh_path': '/abs/x.ply'},
                                    {'id': 2, 'mesh_path': 's3://b/y.obj'},
                                    {'id': 3, 'mesh_path': 'z.obj'}],
                        'frame': {'center': [1, 2, 3], 'half_extent': 2}},
                       's3://bucket/scenes/m.json')
    assert (_ := [str(x.source) for x in m.objects]) == [
        '/abs/x.ply', 's3://b/y.obj', 's3://bucket/scenes/z.obj'], _
    assert (_ := m.frame) == ((1.0, 2.0, 3.0), 2.0), _

    d = manifest_to_dict(m)
    assert (_ := d['frame']) == {'center': [1.0, 2.0, 3.0],
                                 'half_extent': 2.0}, _
    assert (_ := d['objects'][2]) == {'id': 3, 'mesh_path':
                                      's3://bucket/scenes/z.obj'}, _

    bad = [
        [{'id': 1, 'mesh_path': 'a.obj'}, {'id': 1, 'mesh_path': 'b.obj'}],
        [{'id': 1, 'mesh_path': 'a.obj', 'token_path': 'a.armt'}],
        [{'id': 1}],
        [{'mesh_path': 'a.obj'}],
        [{'id': 1, 'token_path': 'a.armt',
          'transform': np.eye(4)[:3].tolist()}],
        [{'id': 1, 'mesh_path': 'a.obj', 'scale': 2}],
        [{'id': 1, 'mesh_path': 'a.obj', 'transform': np.eye(3).tolist()}],
        [{'id': 1, 'mesh_path': 'a.obj', 'transform': 'identity'}],
        {'objects': [], 'frame': {'center': [0, 0], 'half_extent': 1}},
        {'objects': [], 'frame': {'center': [0, 0, 0], 'half_extent': 0}},
        {'objects': [], 'frame': {'center': [0, 0, 0]}},
        {'items': []},
        'a.obj',
    ]
    for data in bad:
        try:
            parse_manifest(data)
        except ManifestError:
            pass
        else:
            assert False, data


def test_decode_object():
    rng = np.random.default_rng(0)

    for scheme, n in (('coord', 128), ('compact', 512), ('block', 128)):
        grid = QuantizationGrid.create(n)
        for mesh in (tetrahedron(), icosphere(1), chair()):
            b = GravityBox.create(rng.uniform(-0.3, 0.3, 3),
                                  rng.uniform(0.1, 0.6, 3),
                                  rng.uniform(-np.pi, np.pi))
            tokens = stream(mesh, b, scheme, n)
            t, posed = decode_object(tokens)

            assert np.all(np.abs(t.apply(canonical_signs)
                                 - corners_from_box(b)) <= 1.5 / n + 1e-12)

            canonical = canonicalize(mesh, grid)
            assert posed.same_as(transform_mesh(t, canonical)), scheme

            # 姿勢と量子化の誤差を合わせた上限
            truth = affine_from_box(b)
            bound = (1.5 + np.abs(truth.linear).sum(axis=1).max()) / n
            target = truth.apply(mesh.vertices)
            gap = np.abs(target[:, None, :] - posed.vertices[None, :, :])
            assert np.all(gap.max(axis=2).min(axis=1) <= bound + 1e-12), \
                scheme

            # 生の ID 列は語彙を添えれば読める
            u, again = decode_object(list(tokens), tokens.vocab)
            assert again.same_as(posed) and np.array_equal(u.matrix,
                                                           t.matrix)

    try:
        decode_object(list(stream(box(), GravityBox.create((0, 0, 0),
                                                           (1, 1, 1)))))
    except ValidationError:
        pass
    else:
        assert False, 'raw ids need a vocabulary'


def test_compose():
    objects = [PlacedObject(3, box(), AffineTransform(np.eye(3), [2, 0, 0])),
               PlacedObject(1, tetrahedron(), AffineTransform.identity())]
    scene = compose(objects)

    assert (_ := len(scene.faces)) == 12 + 4, _
    assert scene.face_objects is not None
    assert (_ := scene.face_objects.tolist()) == [1] * 4 + [3] * 12, _
    assert np.allclose(scene.bounds()[1], [2.5, 0.5, 0.5])


def test_compose_scene():
    b = GravityBox.create((0.2, 0.1, -0.1), (0.5, 0.3, 0.4), 0.5)
    tokens = stream(chair(), b, 'block', 128)

    with tempfile.TemporaryDirectory() as d:
        write_tokens(Path(d) / 'chair.armt', tokens)
        write_mesh(Path(d) / 'cube.obj', box())
        manifest = Path(d) / 'scene.json'
        manifest.write_text(json.dumps({
            'frame': {'center': [1, 2, 3], 'half_extent': 2},
            'objects': [
                {'id': 7, 'token_path': 'chair.armt'},
                {'id': 4, 'mesh_path': 'cube.obj',
                 'transform': [[0.5, 0, 0, -0.5], [0, 0.5, 0, 0],
                               [0, 0, 0.5, 0]]}]}))

        m = load_manifest(manifest)
        assert (_ := [x.source.suffix for x in m.objects]) == ['.armt',
                                                               '.obj'], _

        objects = placed_objects(m)
        assert (_ := [x.id for x in objects]) == [4, 7], _
        _, chair_posed = decode_object(tokens)
        assert objects[1].posed.same_as(chair_posed)

        scene = compose_scene(m)
        assert scene.face_objects is not None
        assert (_ := sorted(set(scene.face_objects.tolist()))) == [4, 7], _
        assert (_ := len(scene.faces)) == 12 + len(chair_posed.faces), _
        assert np.allclose(scene.vertices[:8].min(axis=0), [-0.75, -0.25,
                                                            -0.25])

        metric = compose_scene(m, denormalize=True)
        assert np.allclose(metric.vertices, 2 * scene.vertices + [1, 2, 3])

        broken = Path(d) / 'broken.yaml'
        broken.write_text('objects: [: bad')
        try:
            load_manifest(broken)
        except FormatError:
            pass
        else:
            assert False, 'malformed manifests must be rejected'

        try:
            compose_scene(parse_manifest([{'id': 1, 'mesh_path': 'no.obj'}],
                                         Path(d) / 'x.json'))
        except OSError:
            pass
        else:
            assert False, 'missing meshes must be reported'

    assert (_ := URL.create('a/b.json').joinpath('c.obj').path.as_posix()) \
        == 'a/c.obj', _


if __name__ == '__main__':
    test_parse_manifest()
    test_decode_object()
    test_compose()
    test_compose_scene()
