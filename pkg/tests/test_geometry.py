import math

import numpy as np

from tsumiki.errors import (BehindCameraError, DegenerateError,
                            DimensionMismatchError, ValidationError)
from tsumiki.geometry import (AugmentationParams, CameraIntrinsics, DepthMap,
                              FeatureMap, InstanceMask, PointCloud, augment,
                              back_project, compute_unit_cube_frame,
                              gather_features, normalize_mesh,
                              normalize_scene, project, sample_points,
                              sample_surface)
from tsumiki.pose import GravityBox, corners_from_box

from corpus import box, quad


def test_intrinsics():
    k = CameraIntrinsics.create(500, 500, 320, 240, 640, 480)
    assert (_ := k.matrix[0].tolist()) == [500, 0, 320], _

    for args in ((0, 500, 320, 240, 640, 480),
                 (500, 500, 640, 240, 640, 480),
                 (500, 500, -1, 240, 640, 480)):
        try:
            CameraIntrinsics.create(*args)
        except ValidationError:
            pass
        else:
            assert False, args


def test_back_project():
    k = CameraIntrinsics.create(2, 2, 1, 1, 3, 3)
    depth = np.array([[1.0, 0.0, 2.0],
                      [0.0, 4.0, 0.0],
                      [0.0, 0.0, 2.0]])
    cloud = back_project(DepthMap(depth), k)

    # 深度 0 の画素は飛ばす
    assert (_ := len(cloud)) == 4, _
    assert cloud.pixels is not None
    assert (_ := cloud.pixels.tolist()) == [[0, 0], [2, 0], [1, 1], [2, 2]], _
    assert np.allclose(cloud.points[0], [-0.5, -0.5, 1.0])
    assert np.allclose(cloud.points[2], [0.0, 0.0, 4.0])

    # 投影で元の画素に戻る
    for p, uv in zip(cloud.points, cloud.pixels):
        assert np.allclose(project(k, p), uv)

    mask = InstanceMask(depth > 1.5)
    cloud = back_project(DepthMap(depth), k, mask)
    assert (_ := len(cloud)) == 3, _

    try:
        back_project(DepthMap(np.ones((2, 3))), k)
    except DimensionMismatchError:
        pass
    else:
        assert False, 'depth size must match the intrinsics'

    try:
        back_project(DepthMap(depth), k, InstanceMask(np.ones((3, 2))))
    except DimensionMismatchError:
        pass
    else:
        assert False, 'mask size must match the depth'

    empty = back_project(DepthMap(np.zeros((3, 3))), k)
    assert (_ := len(empty)) == 0, _


def test_project():
    k = CameraIntrinsics.create(100, 50, 10, 20, 64, 48)
    assert (_ := project(k, (1.0, 2.0, 4.0))) == (35.0, 45.0), _

    for p in ((0, 0, 0), (1, 1, -1)):
        try:
            project(k, p)
        except BehindCameraError:
            pass
        else:
            assert False, p


def test_rasters():
    for bad in (np.ones(3), [[1.0, -1.0]], [[np.inf]]):
        try:
            DepthMap(np.asarray(bad))
        except ValidationError:
            pass
        else:
            assert False, bad

    fm = FeatureMap(np.zeros((4, 5)))
    assert (_ := fm.channels) == 1, _

    cloud = PointCloud(np.zeros((3, 3)), features=np.arange(3))
    assert cloud.features is not None
    assert (_ := cloud.features.shape) == (3, 1), _

    try:
        PointCloud(np.zeros((3, 3)), features=np.zeros((2, 4)))
    except ValidationError:
        pass
    else:
        assert False, 'features must follow the points'

    assert (_ := len(PointCloud(np.zeros((0, 3)), features=np.zeros(0)))) \
        == 0, _


def test_gather_features():
    values = np.arange(12, dtype=np.float64).reshape(3, 4)
    fm = FeatureMap(values)

    # 画像と同じ解像度ならずれずに各画素を拾う
    pixels = np.array([[0, 0], [3, 0], [1, 2]])
    f = gather_features(fm, pixels, (4, 3))
    assert (_ := f[:, 0].tolist()) == [0.0, 3.0, 9.0], _

    # 半分の解像度の特徴は補間される
    half = FeatureMap(np.array([[0.0, 2.0], [4.0, 6.0]]))
    f = gather_features(half, np.array([[0, 0], [1, 0], [3, 3]]), (4, 4))
    assert np.allclose(f[:, 0], [0.0, 0.5, 6.0]), f


def test_normalize():
    mesh = box((1, 2, 3), (3, 3, 4))
    unit, frame = normalize_mesh(mesh)

    assert np.allclose(frame.center, (2, 2.5, 3.5))
    assert (_ := frame.half_extent) == 1.0, _
    lo, hi = unit.bounds()
    assert np.allclose(lo, [-1, -0.5, -0.5]) and np.allclose(hi, [1, 0.5, 0.5])
    assert np.allclose(frame.invert(unit.vertices), mesh.vertices)

    try:
        compute_unit_cube_frame(np.ones((4, 3)))
    except DegenerateError:
        pass
    else:
        assert False, 'zero extent must be rejected'

    scene = PointCloud(np.array([[0, 0, 0], [4, 2, 2]]))
    inst = PointCloud(np.array([[2, 1, 1]]))
    frame, s, (i,) = normalize_scene(scene, [inst])
    assert (_ := frame.half_extent) == 2.0, _
    assert np.allclose(s.points, [[-1, -0.5, -0.5], [1, 0.5, 0.5]])
    assert np.allclose(i.points, [[0, 0, 0]])


def test_augment():
    params = AugmentationParams.sample(7)
    assert abs(params.yaw) <= math.pi / 4
    assert 0.75 <= params.scale <= 1.0
    assert all(0 <= x <= 0.2 for x in params.shift)
    assert (_ := AugmentationParams.sample(7)) == params, _

    try:
        AugmentationParams(yaw=1.0).validate()
    except ValidationError:
        pass
    else:
        assert False, 'yaw beyond pi/4 must be rejected'

    # 点と箱に同じ相似変換がかかる
    b = GravityBox.create((0.2, 0.1, -0.3), (0.4, 0.2, 0.6), 0.3)
    corners = corners_from_box(b)
    params = AugmentationParams(0.5, 0.8, (0.1, 0.0, 0.2), 0.0)
    cloud, (moved,) = augment(PointCloud(corners), [b], False, params)
    assert np.allclose(cloud.points, corners_from_box(moved))

    # 深度ノイズは光線方向のみ
    p = np.array([[0.0, 0.0, 2.0], [1.0, 0.0, 1.0]])
    params = AugmentationParams(0.0, 1.0, (0, 0, 0), 0.05, seed=3)
    cloud, boxes = augment(PointCloud(p), [], True, params)
    assert not boxes
    ray = p / np.linalg.norm(p, axis=1, keepdims=True)
    delta = cloud.points - p
    assert np.allclose(np.cross(delta, ray), 0)
    assert np.all(np.linalg.norm(delta, axis=1) <= 0.05 + 1e-12)


def test_sample_points():
    mesh = quad()
    a = sample_points(mesh, 1000, 0)
    b = sample_points(mesh, 1000, 0)
    assert np.array_equal(a.points, b.points)
    assert np.allclose(a.points[:, 2], 0)
    assert np.all(np.abs(a.points[:, :2]) <= 0.5 + 1e-12)

    points, faces = sample_surface(mesh, 1000, 0)
    assert np.array_equal(points, a.points)
    assert set(faces.tolist()) == {0, 1}

    cloud = PointCloud(np.arange(30, dtype=np.float64).reshape(10, 3),
                       features=np.arange(10))
    sub = sample_points(cloud, 4, 1)
    assert (_ := len(set(map(tuple, sub.points.tolist())))) == 4, _
    assert sub.features is not None
    assert np.array_equal(sub.features[:, 0] * 3, sub.points[:, 0])
    assert (_ := len(sample_points(cloud, 25, 1))) == 25, _

    for n in (0, -1):
        try:
            sample_points(mesh, n, 0)
        except ValidationError:
            pass
        else:
            assert False, n


if __name__ == '__main__':
    test_intrinsics()
    test_back_project()
    test_project()
    test_rasters()
    test_gather_features()
    test_normalize()
    test_augment()
    test_sample_points()
