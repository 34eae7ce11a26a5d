import math

import numpy as np

from tsumiki.errors import EmptyMeshError, ValidationError
from tsumiki.mesh import TriangleMesh
from tsumiki.preprocess import (CandidateResult, PreprocessConfig,
                                closest_on_triangles, hausdorff,
                                merge_vertices, planar_decimate,
                                preprocess_asset, quadric_decimate,
                                select_best)

from corpus import box, chair, icosphere, quad, torus, triangle


def test_merge_vertices():
    cube = box(n=2)
    merged = merge_vertices(cube, 1024)
    assert (_ := len(merged.faces)) == len(cube.faces), _
    assert (_ := len(merged.vertices)) == len(cube.vertices), _

    # 同じセルの 2 頂点は平均の位置に 1 つになる
    mesh = TriangleMesh([[0, 0, 0], [0.5, 0, 0], [0, 0.5, 0],
                         [0.5001, 0.0001, 0], [0.5, 0.5, 0]],
                        [[0, 1, 2], [3, 4, 2]])
    merged = merge_vertices(mesh, 128)
    assert (_ := len(merged.vertices)) == 4, _
    assert (_ := len(merged.faces)) == 2, _
    assert np.any(np.all(np.isclose(merged.vertices, [0.50005, 0.00005, 0]),
                         axis=1))

    # 潰れた面は消える
    merged = merge_vertices(mesh, 2)
    assert len(merged.vertices) < len(mesh.vertices)
    assert (_ := merged.faces.tolist()) == [
        f for f in merged.faces.tolist() if len(set(f)) == 3], _

    for q in (8, 64, 1024):
        once = merge_vertices(icosphere(2), q)
        assert len(once.vertices) <= len(icosphere(2).vertices)
        assert merge_vertices(once, q).same_as(once), q

    try:
        merge_vertices(TriangleMesh([[0.1, 0.1, 0], [0.2, 0.1, 0],
                                     [0.1, 0.2, 0]], [[0, 1, 2]]), 1)
    except EmptyMeshError:
        pass
    else:
        assert False, 'a triangle inside one cell must vanish'


def test_planar_decimate():
    for n in (1, 2, 4):
        cube = box(n=n)
        out = planar_decimate(cube)
        assert (_ := len(out.faces)) == 12, (n, _)
        assert (_ := len(out.vertices)) == 8, (n, _)
        assert np.allclose(out.bounds(), cube.bounds())

    assert (_ := len(box(n=4).faces)) == 192, _

    sphere = icosphere(2)
    out = planar_decimate(sphere, 0.0)
    assert (_ := len(out.faces)) == len(sphere.faces), _

    out = planar_decimate(quad())
    assert (_ := len(out.faces)) == 2, _

    try:
        planar_decimate(quad(), -0.1)
    except ValidationError:
        pass
    else:
        assert False, 'negative tolerance must be rejected'


def test_quadric_decimate():
    sphere = icosphere(3)
    assert (_ := len(sphere.faces)) == 1280, _

    out = quadric_decimate(sphere, 800)
    assert len(out.faces) <= 800, len(out.faces)
    assert np.all((out.faces[:, 0] != out.faces[:, 1])
                  & (out.faces[:, 1] != out.faces[:, 2])
                  & (out.faces[:, 0] != out.faces[:, 2]))
    # 閉じた球面のまま
    assert (_ := len(out.faces)) == 2 * len(out.vertices) - 4, _

    diagonal = float(np.linalg.norm(np.subtract(*sphere.bounds()[::-1])))
    h = hausdorff(out, sphere, 20000)
    assert h < 0.05 * diagonal, h

    same = quadric_decimate(sphere, 2000)
    assert same.same_as(sphere)

    # 平らな面の上の崩しは立方体の外に出ない
    out = quadric_decimate(box(n=4), 12)
    assert len(out.faces) < 192, len(out.faces)
    assert np.all(np.abs(out.vertices) <= 0.5 + 1e-9)

    # トーラスは 14 面より減らせないので目標の手前で止まる
    out = quadric_decimate(torus(), 4)
    assert 14 <= len(out.faces) < 192, len(out.faces)
    assert (_ := len(out.faces)) == 2 * len(out.vertices), _

    try:
        quadric_decimate(sphere, 3)
    except ValidationError:
        pass
    else:
        assert False, 'targets below 4 must be rejected'


def test_closest_on_triangles():
    a, b, c = np.zeros(3), np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    cases = [((0.2, 0.2, 1.0), (0.2, 0.2, 0)),
             ((-1.0, -1.0, 0), (0, 0, 0)),
             ((2.0, -0.5, 0), (1, 0, 0)),
             ((0.5, -1.0, 3.0), (0.5, 0, 0)),
             ((-1.0, 0.5, 0), (0, 0.5, 0)),
             ((1.0, 1.0, 0), (0.5, 0.5, 0)),
             ((0, 3.0, 0), (0, 1, 0))]

    for p, expected in cases:
        out = closest_on_triangles(np.array([p]), a, b, c)[0]
        assert np.allclose(out, expected), (p, out)

    # 密な格子と比べて最近点より近い点はない
    rng = np.random.default_rng(0)
    tri = rng.normal(size=(3, 3))
    s, t = np.meshgrid(np.linspace(0, 1, 201), np.linspace(0, 1, 201))
    keep = s + t <= 1
    grid = tri[0] + s[keep, None] * (tri[1] - tri[0]) \
        + t[keep, None] * (tri[2] - tri[0])
    for p in rng.normal(size=(20, 3)):
        best = np.linalg.norm(closest_on_triangles(p[None], *tri)[0] - p)
        assert best <= np.linalg.norm(grid - p, axis=1).min() + 1e-12


def test_hausdorff():
    cube = box()
    h = hausdorff(cube, cube)
    assert 0 <= h < 0.01, h

    moved = cube.with_vertices(cube.vertices + [0.1, 0, 0])
    h = hausdorff(cube, moved, 20000)
    assert 0.1 - 0.01 <= h <= 0.11, h
    assert (_ := hausdorff(moved, cube, 20000)) == h, _
    assert (_ := hausdorff(cube, moved, 20000)) == h, _

    # 面への距離は標本どうしの距離を超えない
    rough = hausdorff(cube, moved, 20000, to_surface=False)
    assert h <= rough, (h, rough)

    doubled = hausdorff(cube.with_vertices(2 * cube.vertices),
                        moved.with_vertices(2 * moved.vertices), 20000)
    assert abs(doubled - 2 * h) < 0.025, (doubled, h)

    try:
        hausdorff(cube, TriangleMesh.empty())
    except EmptyMeshError:
        pass
    else:
        assert False, 'empty meshes must be rejected'


def candidate(faces: int, h: float) -> CandidateResult:
    return CandidateResult(triangle(), 512, faces, h, faces)


def test_select_best():
    tau = 0.01

    assert (_ := select_best([candidate(2000, 0.004), candidate(800, 0.008)],
                             tau).faces) == 800, _
    assert (_ := select_best([candidate(800, 0.05), candidate(2000, 0.02)],
                             tau).faces) == 2000, _
    only = candidate(4000, 0.3)
    assert (_ := select_best([only], tau)) is only, _

    # 同数の面なら近い方
    assert (_ := select_best([candidate(800, 0.009), candidate(800, 0.002)],
                             tau).hausdorff) == 0.002, _
    assert (_ := select_best([candidate(2000, 0.02), candidate(800, 0.02)],
                             tau).faces) == 800, _

    rng = np.random.default_rng(0)
    for _ in range(100):
        pool = [candidate(int(f), float(h)) for f, h in zip(
            rng.integers(4, 5000, 6), rng.uniform(0, 0.02, 6))]
        best = select_best(pool, tau)
        if best.hausdorff < tau:
            assert not any(c.faces < best.faces and c.hausdorff < tau
                           for c in pool)
        else:
            assert all(c.hausdorff >= tau for c in pool)

    try:
        select_best([], tau)
    except ValidationError:
        pass
    else:
        assert False, 'no candidates must be rejected'


def test_preprocess_asset():
    config = PreprocessConfig(quant_levels=(128, 512),
                              face_targets=(800, 2000))
    mesh = chair(2)
    best = preprocess_asset(mesh, config)

    assert best.faces <= 800, best.provenance()
    assert 0 <= best.hausdorff < config.hausdorff_tau, best.provenance()
    assert (_ := best.face_target) == 800, _
    assert (_ := len(best.mesh.faces)) == best.faces, _
    # 元の座標系に戻してある
    assert np.allclose(best.mesh.bounds(), mesh.bounds(), atol=0.01)
    assert (_ := set(best.provenance())) == {'quant_level', 'face_target',
                                             'hausdorff', 'faces',
                                             'reached_target'}, _
    assert best.reached and best.provenance()['reached_target']

    again = preprocess_asset(mesh, config)
    assert (_ := again.provenance()) == best.provenance(), _
    assert again.mesh.same_as(best.mesh)

    # 目標に届かなかった候補はそれと分かる
    stuck = preprocess_asset(torus(), PreprocessConfig(
        quant_levels=(512,), face_targets=(4,), hausdorff_samples=5000))
    assert stuck.faces >= 14 and not stuck.reached, stuck.provenance()
    assert (_ := stuck.provenance()['reached_target']) is False, _
    assert (_ := candidate(800, 0.001).reached) is True, _
    assert (_ := CandidateResult(triangle(), 512, 800, 0.001, 900)
            .reached) is False, _

    for kwargs in ({'quant_levels': (100,)}, {'face_targets': (2000, 800)},
                   {'face_targets': (2,)}, {'hausdorff_tau': 0},
                   {'planar_angle': math.pi}):
        try:
            PreprocessConfig(**kwargs)
        except ValidationError:
            pass
        else:
            assert False, kwargs


if __name__ == '__main__':
    test_merge_vertices()
    test_planar_decimate()
    test_quadric_decimate()
    test_closest_on_triangles()
    test_hausdorff()
    test_select_best()
    test_preprocess_asset()
