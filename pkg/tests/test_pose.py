import math

import numpy as np

from tsumiki.codecs import get_codec
from tsumiki.errors import DegenerateError, ParseError, ValidationError
from tsumiki.pose import (AffineTransform, GravityBox, affine_from_box,
                          box_from_affine, canonical_signs, corners_from_box,
                          decode_corners, decode_pose, encode_pose, fit_affine,
                          inflate_collapsed, rotation_y, transform_mesh,
                          wrap_angle)
from tsumiki.quantize import QuantizationGrid

from corpus import box


def random_box(rng: np.random.Generator) -> GravityBox:
    scale = rng.uniform(0.05, 0.8, 3)
    center = rng.uniform(-0.4, 0.4, 3)
    return GravityBox.create(center, scale, rng.uniform(-math.pi, math.pi))


def test_corners():
    corners = corners_from_box(GravityBox.create((0, 0, 0), (2, 2, 2)))
    assert np.allclose(corners, canonical_signs)
    assert (_ := canonical_signs[1].tolist()) == [-1, -1, 1], _
    assert (_ := canonical_signs[4].tolist()) == [1, -1, -1], _

    corners = corners_from_box(GravityBox.create((0, 0, 0), (2, 1, 1),
                                                 math.pi / 2))
    assert np.allclose(corners[7], [0.5, 0.5, -1]), corners[7]

    shifted = corners_from_box(GravityBox.create((1, 2, 3), (2, 1, 1),
                                                 math.pi / 2))
    assert np.allclose(shifted - corners, [1, 2, 3])

    assert (_ := wrap_angle(-math.pi)) == math.pi, _
    assert abs(wrap_angle(3 * math.pi / 2) + math.pi / 2) < 1e-12

    for scale in ((0, 1, 1), (1, -1, 1)):
        try:
            GravityBox.create((0, 0, 0), scale)
        except ValidationError:
            pass
        else:
            assert False, scale


def test_encode_pose():
    rng = np.random.default_rng(0)

    for n in (128, 512):
        grid = QuantizationGrid.create(n)
        for _ in range(1000):
            b = random_box(rng)
            assert (_ := len(encode_pose(b, grid, 'axis'))) == 24, _
            assert (_ := len(encode_pose(b, grid, 'block'))) == 16, _

    grid = QuantizationGrid.create(128)
    tokens = encode_pose(GravityBox.create((0, 0, 0), (1, 1, 1)), grid)
    assert (_ := tokens.tokens[:3]) == (32, 32, 32), _

    # ブロック形式はメッシュ語彙の ID をそのまま使う
    vocab = get_codec('block').vocabulary(128)
    tokens = encode_pose(GravityBox.create((0, 0, 0), (1, 1, 1)), grid,
                         'block', vocab)
    classes = [vocab.token_class(t) for t in tokens]
    assert (_ := classes[:4]) == ['block', 'offset', 'block', 'offset'], _


def test_decode_corners():
    rng = np.random.default_rng(1)

    for n in (128, 512):
        grid = QuantizationGrid.create(n)
        for style in ('axis', 'block'):
            for _ in range(10000):
                b = random_box(rng)
                corners = decode_corners(encode_pose(b, grid, style), grid,
                                         style)
                assert np.all(np.abs(corners - corners_from_box(b))
                              <= 1 / n + 1e-12)

    grid = QuantizationGrid.create(128)
    corners = decode_corners([0] * 24, grid)
    assert np.allclose(corners, -1 + 1 / 128)

    try:
        decode_corners([0] * 23, grid)
    except ParseError as e:
        assert (_ := e.offset) == 23, _
    else:
        assert False, 'short pose must be rejected'

    try:
        decode_corners([0] * 16, grid, 'block')
    except ParseError as e:
        assert (_ := e.offset) == 1, _
        assert (_ := e.expected) == 'offset', _
    else:
        assert False, 'block pose needs offsets in odd slots'


def test_fit_affine():
    t, residual = fit_affine(canonical_signs, canonical_signs)
    assert np.allclose(t.linear, np.eye(3)) and np.allclose(t.translation, 0)
    assert residual < 1e-20

    t, residual = fit_affine(canonical_signs, canonical_signs + [1, 2, 3])
    assert np.allclose(t.linear, np.eye(3))
    assert np.allclose(t.translation, [1, 2, 3])
    assert residual < 1e-9

    linear = rotation_y(0.7) @ np.diag([1.5, 0.8, 1.2])
    target = canonical_signs @ linear.T + [0.1, -0.2, 0.3]
    t, residual = fit_affine(canonical_signs, target)
    assert np.max(np.abs(t.linear - linear)) < 1e-9
    assert residual < 1e-12

    # 重力方向に揃った変換は量子化なしなら厳密に戻る
    rng = np.random.default_rng(2)
    for i in range(10000):
        expected = affine_from_box(random_box(rng))
        target = expected.apply(canonical_signs)
        t, residual = fit_affine(canonical_signs, target)
        assert residual < 1e-12, residual
        assert (_ := np.max(np.abs(t.matrix - expected.matrix))) < 1e-9, _

        # 対応を保った並べ替えで結果は変わらない
        if i % 10 == 0:
            perm = rng.permutation(8)
            u, _ = fit_affine(canonical_signs[perm], target[perm])
            assert np.max(np.abs(u.matrix - t.matrix)) < 1e-12

    # 一般のアフィン像も合う
    for _ in range(100):
        linear = rng.normal(size=(3, 3))
        shift = rng.normal(size=3)
        t, residual = fit_affine(canonical_signs,
                                 canonical_signs @ linear.T + shift)
        assert residual < 1e-12
        assert np.max(np.abs(t.linear - linear)) < 1e-9
        assert np.max(np.abs(t.translation - shift)) < 1e-9

    flat = canonical_signs.copy()
    flat[:, 2] = 0
    try:
        fit_affine(flat, canonical_signs)
    except DegenerateError:
        pass
    else:
        assert False, 'coplanar corners must be rejected'


def test_box_from_affine():
    b = box_from_affine(AffineTransform.identity())
    assert np.allclose(b.center, 0) and np.allclose(b.scale, 2)
    assert (_ := b.yaw) == 0.0, _

    rng = np.random.default_rng(3)
    for _ in range(500):
        original = random_box(rng)
        b = box_from_affine(affine_from_box(original))
        assert np.allclose(b.center, original.center, atol=1e-6)
        assert np.allclose(b.scale, original.scale, atol=1e-6)
        assert abs(wrap_angle(b.yaw - original.yaw)) < 1e-6

    b = box_from_affine(AffineTransform(rotation_y(0.3)
                                        @ np.diag([0.5, 1, 1.5]), [0, 0, 0]))
    assert abs(b.yaw - 0.3) < 1e-6 and np.allclose(b.scale, [1, 2, 3])

    try:
        box_from_affine(AffineTransform(np.zeros((3, 3)), np.zeros(3)))
    except DegenerateError:
        pass
    else:
        assert False, 'zero linear part must be rejected'


def test_decode_pose():
    rng = np.random.default_rng(4)

    for n in (128, 512):
        grid = QuantizationGrid.create(n)
        for style in ('axis', 'block'):
            for _ in range(10000):
                b = random_box(rng)
                tokens = encode_pose(b, grid, style)
                t, residual = decode_pose(tokens, grid, style)
                target = decode_corners(tokens, grid, style)
                # 最小二乗の射影で隅の誤差は半ビンの 1.5 倍まで広がりうる
                fitted = t.apply(canonical_signs)
                assert np.all(np.abs(fitted - target) <= 1.5 / n + 1e-12), \
                    residual
                assert np.all(np.abs(fitted - corners_from_box(b))
                              <= 1.5 / n + 1e-12)

    # 軸の揃った箱ではビン中心を厳密に再現する
    grid = QuantizationGrid.create(128)
    tokens = encode_pose(GravityBox.create((0.1, 0.2, -0.3), (0.5, 0.3, 0.4)),
                         grid)
    t, residual = decode_pose(tokens, grid)
    assert residual <= 1e-9, residual
    assert np.allclose(t.apply(canonical_signs),
                       decode_corners(tokens, grid))

    # 1 ビンより薄い箱は 1 ビンまで膨らむ
    thin = GravityBox.create((0.1, 0.003, 0.0), (0.5, 0.001, 0.5))
    t, _ = decode_pose(encode_pose(thin, grid), grid)
    assert np.all(np.linalg.norm(t.linear, axis=0) >= grid.bin_width / 2
                  - 1e-12)
    assert np.all(box_from_affine(t).scale > 0)
    assert (_ := inflate_collapsed(AffineTransform.identity(), grid).linear
            .tolist()) == np.eye(3).tolist(), _


def test_transform_mesh():
    mesh = box(n=2)
    same = transform_mesh(AffineTransform.identity(), mesh)
    assert same.same_as(mesh)

    moved = transform_mesh(AffineTransform(np.eye(3), [1, 2, 3]), mesh)
    tri = mesh.vertices[mesh.faces]
    moved_tri = moved.vertices[moved.faces]
    for i, j in ((0, 1), (1, 2), (2, 0)):
        assert np.allclose(np.linalg.norm(tri[:, i] - tri[:, j], axis=1),
                           np.linalg.norm(moved_tri[:, i] - moved_tri[:, j],
                                          axis=1))
    assert np.array_equal(moved.faces, mesh.faces)

    try:
        AffineTransform.from_matrix(np.eye(3))
    except ValidationError:
        pass
    else:
        assert False, '3x3 matrices carry no translation'

    m = AffineTransform.from_matrix(np.eye(4))
    assert (_ := m.matrix.shape) == (3, 4), _


if __name__ == '__main__':
    test_corners()
    test_encode_pose()
    test_decode_corners()
    test_fit_affine()
    test_box_from_affine()
    test_decode_pose()
    test_transform_mesh()
