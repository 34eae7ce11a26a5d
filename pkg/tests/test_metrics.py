import math

import numpy as np

from tsumiki.errors import DegenerateError, ManifestError, ValidationError
from tsumiki.geometry import PointCloud
from tsumiki.metrics import (MetricConfig, PlacedObject, align_scene, box_iou,
                             box_iou_monte_carlo, brute_force_sq_dists,
                             chamfer, chamfer_single, evaluate_scene, fscore,
                             mesh_stats, nearest_sq_dists)
from tsumiki.pose import AffineTransform, GravityBox, rotation_y

from corpus import box, chair, corpus, icosphere, tetrahedron, triangle


def test_nearest():
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[1.0, 0.0, 0.0]])
    assert (_ := nearest_sq_dists(a, b).tolist()) == [1.0], _
    assert (_ := nearest_sq_dists(b, b).tolist()) == [0.0], _

    # 木による近傍探索は総当たりと一致する (最大 2000 点の 500 組)
    rng = np.random.default_rng(0)
    for _ in range(500):
        n, m = (int(x) for x in rng.integers(1, 2001, 2))
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
        ab, ba = brute_force_sq_dists(a, b), brute_force_sq_dists(b, a)
        assert np.max(np.abs(nearest_sq_dists(a, b) - ab)) <= 1e-12
        assert np.array_equal(nearest_sq_dists(a, b, 'brute'), ab)
        assert abs(chamfer(a, b) - (ab.mean() + ba.mean()) / 2) <= 1e-12
        assert abs(chamfer_single(a, b) - ab.mean()) <= 1e-12

        # a を正解、b を予測とみなす
        precision = 100 * np.mean(np.sqrt(ba) <= 0.2)
        recall = 100 * np.mean(np.sqrt(ab) <= 0.2)
        f = fscore(a, b, 0.2)
        assert abs(f.precision - precision) <= 1e-12, f
        assert abs(f.recall - recall) <= 1e-12, f

    for args in (([], b), (b, np.zeros((0, 3)))):
        try:
            nearest_sq_dists(*args)
        except ValidationError:
            pass
        else:
            assert False, 'empty point sets must be rejected'

    try:
        nearest_sq_dists(a, b, 'octree')
    except ValidationError:
        pass
    else:
        assert False, 'unknown methods must be rejected'


def test_chamfer():
    a = np.array([[0.0, 0.0, 0.0]])
    assert (_ := chamfer(a, a)) == 0.0, _
    assert (_ := chamfer(a, [[1.0, 0.0, 0.0]])) == 1.0, _
    assert (_ := chamfer_single(a, [[2.0, 0.0, 0.0]])) == 4.0, _

    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(300, 3)), rng.uniform(size=(500, 3))
    assert abs(chamfer(a, b) - chamfer(b, a)) < 1e-15
    assert abs(chamfer(3 * a, 3 * b) - 9 * chamfer(a, b)) < 1e-12

    # 片方向は chamfer の gt -> pred の項と一致する
    two = chamfer_single(a, b) + chamfer_single(b, a)
    assert abs(chamfer(a, b) - two / 2) < 1e-15

    # 予測が正解を含めば片方向は 0
    assert (_ := chamfer_single(a, np.concatenate([a, b]))) == 0.0, _

    cloud = PointCloud(a)
    assert (_ := chamfer(cloud, a)) == 0.0, _


def test_fscore():
    a = np.random.default_rng(2).uniform(size=(100, 3))
    assert (_ := fscore(a, a, 0.002)) == (100.0, 100.0, 100.0), _
    assert (_ := fscore(a, a + 10, 0.002)) == (0.0, 0.0, 0.0), _

    f = fscore([[0, 0, 0]], [[0, 0, 0], [1, 0, 0]], 0.1)
    assert (_ := (f.precision, f.recall)) == (50.0, 100.0), _
    assert abs(f.fscore - 200 / 3) < 1e-12

    # 距離と閾値を同じ倍率で変えても結果は同じ
    b = a + np.random.default_rng(3).normal(scale=0.01, size=a.shape)
    assert (_ := fscore(4 * a, 4 * b, 0.04)) == fscore(a, b, 0.01), _

    for t in (0, -1):
        try:
            fscore(a, a, t)
        except ValidationError:
            pass
        else:
            assert False, t


def test_box_iou():
    cube = GravityBox.create((0, 0, 0), (1, 1, 1))
    assert abs(box_iou(cube, cube) - 1) < 1e-12
    far = GravityBox.create((3, 0, 0), (1, 1, 1))
    assert (_ := box_iou(cube, far)) == 0.0, _

    # 45 度回した立方体との重なりは正八角形
    turned = GravityBox.create((0, 0, 0), (1, 1, 1), math.pi / 4)
    area = 2 * (math.sqrt(2) - 1)
    expected = area / (2 - area)
    assert abs(box_iou(cube, turned) - expected) < 1e-9
    assert abs(box_iou_monte_carlo(cube, turned, 2000000) - expected) < 0.003

    # 上下にずらすと縦方向の重なりだけ減る
    lifted = GravityBox.create((0, 0.5, 0), (1, 1, 1))
    assert abs(box_iou(cube, lifted) - 1 / 3) < 1e-12

    # 1e7 点の Monte Carlo と 0.003 以内で一致する
    rng = np.random.default_rng(4)
    for _ in range(100):
        a = GravityBox.create(rng.uniform(-0.2, 0.2, 3),
                              rng.uniform(0.3, 1.0, 3),
                              rng.uniform(-math.pi, math.pi))
        b = GravityBox.create(rng.uniform(-0.2, 0.2, 3),
                              rng.uniform(0.3, 1.0, 3),
                              rng.uniform(-math.pi, math.pi))
        iou = box_iou(a, b)
        assert 0.0 <= iou <= 1.0
        assert abs(iou - box_iou(b, a)) < 1e-12
        assert abs(iou - box_iou_monte_carlo(a, b, 10 ** 7, seed=5)) < 0.003

        # 両方に同じ回転と平行移動をかけても変わらない
        phi, shift = rng.uniform(-math.pi, math.pi), rng.normal(size=3)
        r = rotation_y(phi)
        moved = [GravityBox.create(r @ x.center + shift, x.scale, x.yaw + phi)
                 for x in (a, b)]
        assert abs(box_iou(*moved) - iou) < 1e-9

    flat = GravityBox(np.zeros(3), np.array([1.0, 0.0, 1.0]), 0.0)
    try:
        box_iou(cube, flat)
    except DegenerateError:
        pass
    else:
        assert False, 'zero-volume boxes must be rejected'


def test_align_scene():
    gt = np.random.default_rng(6).uniform(-1, 1, size=(500, 3))

    a = align_scene(gt, gt)
    assert (_ := a.scale) == 1.0, _
    assert np.allclose(a.translation, 0)

    a = align_scene(0.5 * gt, gt)
    assert abs(a.scale - 2) < 1e-12
    assert np.allclose(a.apply(0.5 * gt), gt)

    a = align_scene(gt + [1, 0, 0], gt)
    assert abs(a.scale - 1) < 1e-12
    assert np.allclose(a.translation, [-1, 0, 0])

    try:
        align_scene(np.ones((4, 3)), gt)
    except DegenerateError:
        pass
    else:
        assert False, 'a single-point scene cannot be aligned'


def test_mesh_stats():
    assert (_ := mesh_stats([triangle()])[:2]) == (1, 3), _
    assert (_ := mesh_stats([tetrahedron()])[:2]) == (4, 4), _

    meshes = list(corpus().values())
    stats = mesh_stats(meshes)
    assert (_ := len(stats.per_mesh)) == len(meshes), _
    assert (_ := stats.faces) == sum(mesh_stats([m]).faces for m in meshes), _
    assert (_ := stats.vertices) == sum(v for _, v in stats.per_mesh), _


def scene(scale: float = 1.0) -> list[PlacedObject]:
    objects = [(1, chair(), rotation_y(0.3), (0.0, 0.0, 0.0)),
               (2, icosphere(1), 0.4 * np.eye(3), (1.5, 0.2, 0.3)),
               (3, box(n=2), np.diag([0.8, 0.3, 0.5]), (-1.0, 0.0, 1.0))]
    return [PlacedObject(i, m, AffineTransform(scale * np.asarray(linear),
                                               scale * np.asarray(shift)))
            for i, m, linear, shift in objects]


def test_evaluate_scene():
    config = MetricConfig(samples_per_mesh=2000)
    report = evaluate_scene(scene(), scene(), config)

    assert (_ := (report.cd, report.cd_s)) == (0.0, 0.0), _
    assert (_ := report.fscore) == 100.0, _
    assert (_ := [x.id for x in report.objects]) == [1, 2, 3], _
    assert not report.missing
    assert all(x.cd == 0.0 and x.fscore == 100.0 for x in report.objects)
    assert all(abs(x.layout_iou - 1) < 1e-9 for x in report.objects)

    # 予測全体の相似変換は整列で打ち消され、整列以外の結果は一致する
    scaled = evaluate_scene(scene(0.7), scene(), config)
    assert abs(scaled.alignment.scale - 1 / 0.7) < 1e-9
    assert (_ := (scaled.cd, scaled.cd_s, scaled.fscore)) == (0.0, 0.0,
                                                              100.0), _

    moved = [x if x.id != 2 else PlacedObject(
        2, x.mesh, AffineTransform(1.2 * x.transform.linear,
                                   x.transform.translation + [0.1, 0, -0.2]))
        for x in scene()]
    rng = np.random.default_rng(7)
    for pred in (scene(), moved):
        expected = evaluate_scene(pred, scene(), config).to_dict()
        del expected['alignment']
        for _ in range(20):
            s = float(rng.uniform(0.1, 10))
            t = rng.uniform(-5, 5, 3)
            similar = [PlacedObject(x.id, x.mesh, AffineTransform(
                s * x.transform.linear, s * x.transform.translation + t))
                for x in pred]
            d = evaluate_scene(similar, scene(), config).to_dict()
            del d['alignment']
            assert (_ := d) == expected, (s, t)

    partial = evaluate_scene(scene()[:2], scene(), config)
    assert (_ := partial.missing) == [3], _
    assert partial.cd_s > report.cd_s
    assert (_ := len(partial.objects)) == 2, _

    d = partial.to_dict()
    assert (_ := d['missing']) == [3], _
    assert (_ := d['threshold']) == 0.002, _
    assert 'CD-S' in d['convention']
    table = partial.table()
    assert 'object 3' in table and 'missing' in table, table

    # 同じ設定なら同じ結果
    again = evaluate_scene(scene()[:2], scene(), config)
    assert (_ := again.to_dict()) == d, _

    extra = scene() + [PlacedObject(9, triangle(), AffineTransform.identity())]
    duplicate = scene() + scene()[:1]
    for pred, gt in ((extra, scene()), (duplicate, scene()),
                     (scene(), duplicate)):
        try:
            evaluate_scene(pred, gt, config)
        except ManifestError:
            pass
        else:
            assert False, 'object ids must match'

    try:
        evaluate_scene(scene(), [], config)
    except ValidationError:
        pass
    else:
        assert False, 'an empty ground truth must be rejected'

    try:
        MetricConfig(fscore_threshold=0)
    except ValidationError:
        pass
    else:
        assert False, 'threshold must be positive'


if __name__ == '__main__':
    test_nearest()
    test_chamfer()
    test_fscore()
    test_box_iou()
    test_align_scene()
    test_mesh_stats()
    test_evaluate_scene()
