import argparse
import importlib
import json
import logging.config
import sys
import traceback
from collections.abc import Callable, Iterable
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from types import ModuleType
from typing import Any, Optional, TypeVar

import yaml

from .assembly import decode_object, load_manifest, placed_objects
from .codecs import canonical_bins, codec_keys, get_codec
from .config import RunConfig, load_config
from .errors import InvariantError, ParseError, TsumikiError, exit_code
from .formats import (read_camera, read_depth, read_features, read_mask,
                      read_mesh, read_tokens, suffixes, write, write_mesh,
                      write_tokens)
from .geometry import (PointCloud, augment, back_project, gather_features,
                       normalize_mesh, sample_points)
from .mesh import canonicalize
from .metrics import evaluate_scene, mesh_stats
from .pose import (GravityBox, box_from_affine, decode_pose, encode_pose,
                   styles)
from .preprocess import preprocess_asset
from .quantize import QuantizationGrid, resolutions
from .sequence import (ObjectRecord, UnifiedVocabulary, assemble, parse,
                       pose_style_of)
from .utils import URL, get_language, open_url, package_name, read_text

default_log_config = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'default': {
            'format': '%(asctime)s %(levelname)-8s %(name)-15s %(message)s',
            'datefmt': '%Y-%m-%d %H:%M:%S'
        }
    },
    'handlers': {
        'default': {
            'formatter': 'default',
            'class': 'logging.StreamHandler',
            # 標準出力は結果専用
            'stream': 'ext://sys.stderr'
        }
    },
    'loggers': {
        package_name: {
            'handlers': ['default'],
            'level': 'INFO',
            'propagate': False
        }
    }
}

logger = logging.getLogger(package_name)

T = TypeVar('T')
R = TypeVar('R')


def parse_import_module(s: str) -> ModuleType:
    try:
        return importlib.import_module(s)
    except ModuleNotFoundError as e:
        raise argparse.ArgumentTypeError(str(e))


def parse_scheme(s: str) -> str:
    if s not in codec_keys():
        raise argparse.ArgumentTypeError(
            f'invalid scheme (choose from {", ".join(codec_keys())})')

    return s


def parse_resolution(s: str) -> int:
    try:
        n = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError('invalid resolution')

    if n not in resolutions:
        raise argparse.ArgumentTypeError(
            f'resolution must be one of {", ".join(map(str, resolutions))}')

    return n


def parse_jobs(s: str) -> int:
    try:
        n = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError('invalid job count')

    if n < 1:
        raise argparse.ArgumentTypeError('job count must be >= 1')

    return n


def parse_url(s: str) -> URL:
    try:
        return URL.create(s)
    except Exception:
        raise argparse.ArgumentTypeError('invalid URL')


def parse_directory(s: str) -> Path:
    path = Path(s)

    if not path.is_dir():
        raise argparse.ArgumentTypeError(f'{s} is not a directory')

    return path


def parse_log_config(s: str) -> dict[str, Any]:
    url = parse_url(s)

    try:
        with open_url(url, encoding='utf8') as f:
            return yaml.safe_load(f)
    except Exception:
        raise argparse.ArgumentTypeError(f"""
failed to open, for the following reasons:
{traceback.format_exc()}
""".strip())


def get_local_helps() -> dict[str, str]:
    r: dict[str, str] = {}

    lang = get_language()

    if lang == 'ja':
        r['--config'] = """
実行設定ファイル (YAML または JSON)。コマンドラインの指定が優先される
"""
        r['--log-config'] = """
ロギング設定。logging.dictConfig() で読み込むため JSON と YAML のみ対応
"""
        r['--import-module'] = """
追加でインポートするモジュール。オプション繰り返しによる複数指定可。
もし、カスタムコーデックを使用する場合 --scheme より先に指定する必要がある
"""
        r['--jobs'] = '並列に処理するファイル数'
        r['--seed'] = '乱数シード'
        r['--scheme'] = 'メッシュのトークン化方式'
        r['--res'] = '量子化の解像度 (軸あたりのビン数)'
        r['--style'] = '姿勢トークンの形式。省略時はスキームから決まる'
        r['--box'] = """
物体の姿勢 (center, scale, yaw の JSON)。指定すると bos 姿勢 sep メッシュ eos
の統合ストリームを出力する
"""
        r['--no-normalize'] = """
メッシュを単位立方体へ正規化せず、そのままの座標で量子化する
"""
        r['-o'] = '出力ファイル。拡張子で形式が決まる'
        r['mesh'] = 'メッシュファイル (OBJ または PLY)'
        r['tokens'] = 'トークンファイル (.armt)'
        r['box'] = '姿勢の JSON ファイル'
        r['depth'] = '深度画像 (PFM または 16 bit PGM)'
        r['intrinsics'] = 'カメラ内部パラメータの JSON ファイル'
        r['--mask'] = 'インスタンスマスク (PGM または RLE)'
        r['--instance'] = 'マスク内で取り出すインスタンス ID'
        r['--features'] = '画素ごとの特徴マップ (.fmap)'
        r['--depth-scale'] = '16 bit PGM 深度の 1 単位あたりのミリメートル'
        r['--augment'] = """
設定の augmentation に従い、回転、拡大縮小、平行移動と奥行き方向の揺らぎを
点群に加える
"""
        r['in_dir'] = '入力メッシュのディレクトリ'
        r['out_dir'] = '出力先ディレクトリ。入力と同じ構成で書き出す'
        r['--pred'] = '予測シーンのマニフェスト'
        r['--gt'] = '正解シーンのマニフェスト'
        r['--json'] = '表の代わりに JSON を出力する'
        r['mesh_dir'] = 'メッシュのディレクトリ'
        r = {k: v.replace('\n', '') for k, v in r.items()}
    else:
        r['--config'] = ('run configuration (YAML or JSON); command-line '
                         'flags take precedence')
        r['--log-config'] = ('logging configuration (supported formats: '
                             'json, yaml)')
        r['--import-module'] = ('pre-import modules (if a custom codec is '
                                'used, it must be before --scheme)')
        r['--jobs'] = 'number of files processed in parallel'
        r['--seed'] = 'random seed'
        r['--scheme'] = 'mesh tokenization scheme'
        r['--res'] = 'quantization resolution (bins per axis)'
        r['--style'] = 'pose token style (default: fixed by the scheme)'
        r['--box'] = ('object pose (JSON with center, scale, yaw); when '
                      'given, a unified bos-pose-sep-mesh-eos stream is '
                      'written')
        r['--no-normalize'] = ('quantize the mesh as is instead of '
                               'normalizing it to the unit cube')
        r['-o'] = 'output file; the suffix selects the format'
        r['mesh'] = 'mesh file (OBJ or PLY)'
        r['tokens'] = 'token file (.armt)'
        r['box'] = 'pose JSON file'
        r['depth'] = 'depth image (PFM or 16-bit PGM)'
        r['intrinsics'] = 'camera intrinsics JSON file'
        r['--mask'] = 'instance mask (PGM or RLE)'
        r['--instance'] = 'instance id to take from the mask'
        r['--features'] = 'per-pixel feature map (.fmap)'
        r['--depth-scale'] = 'millimeters per unit of 16-bit PGM depth'
        r['--augment'] = ('apply a random yaw, scale, shift and depth jitter '
                          'drawn from the augmentation config')
        r['in_dir'] = 'directory of input meshes'
        r['out_dir'] = 'output directory, mirroring the input layout'
        r['--pred'] = 'manifest of the predicted scene'
        r['--gt'] = 'manifest of the ground-truth scene'
        r['--json'] = 'print JSON instead of a table'
        r['mesh_dir'] = 'directory of meshes'

    return r


def _config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    return config.replace(scheme=getattr(args, 'scheme', None),
                          resolution=getattr(args, 'res', None),
                          seed=getattr(args, 'seed', None),
                          jobs=getattr(args, 'jobs', None))


def _map(fn: Callable[[T], R], items: Iterable[T], jobs: int) -> list[R]:
    items = list(items)

    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]

    with ProcessPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(fn, items))


def mesh_files(root: Path) -> list[Path]:
    mesh_suffixes = suffixes('mesh')
    return sorted(p for p in root.rglob('*')
                  if p.is_file() and p.suffix.lower() in mesh_suffixes)


def _print(*lines: str) -> None:
    for line in lines:
        print(line)


def tokenize(args: argparse.Namespace) -> None:
    config = _config(args)
    grid = QuantizationGrid.create(config.resolution)
    codec = get_codec(config.scheme)
    vocab = codec.vocabulary(grid.resolution)

    mesh = read_mesh(args.mesh)
    if not args.no_normalize:
        mesh = normalize_mesh(mesh)[0]

    tokens = codec.encode(mesh, grid)
    faces = len(canonical_bins(mesh, grid)[1])
    ratio = len(tokens) / (9 * faces) if faces else 1.0

    if args.box is not None:
        box = GravityBox.from_dict(json.loads(read_text(args.box)))
        pose = encode_pose(box, grid, pose_style_of(vocab), vocab)
        tokens = assemble(ObjectRecord(pose, tokens), vocab)

    if args.output:
        write_tokens(args.output, tokens)

    _print(f'{len(tokens)} tokens',
           f'{faces} faces, vocabulary {tokens.vocab.size}, '
           f'ratio {ratio:.3f} vs coord')


def detokenize(args: argparse.Namespace) -> None:
    tokens = read_tokens(args.tokens)

    if isinstance(tokens.vocab, UnifiedVocabulary):
        transform, mesh = decode_object(tokens)
        logger.info(f'posed by {transform.matrix.tolist()}')
    else:
        mesh = get_codec(tokens.vocab.scheme).decode(tokens, tokens.vocab)

    write_mesh(args.output, mesh)
    _print(f'{len(mesh.faces)} faces, {len(mesh.vertices)} vertices')


def encode_pose_command(args: argparse.Namespace) -> None:
    config = _config(args)
    style = args.style or config.pose_style
    grid = QuantizationGrid.create(config.resolution)
    vocab = get_codec('block' if style == 'block' else 'coord') \
        .vocabulary(grid.resolution)
    box = GravityBox.from_dict(json.loads(read_text(args.box)))
    tokens = encode_pose(box, grid, style, vocab)

    if args.output:
        write_tokens(args.output, tokens)

    _print(json.dumps(list(tokens.tokens)))


def decode_pose_command(args: argparse.Namespace) -> None:
    tokens = read_tokens(args.tokens)
    vocab = tokens.vocab
    style = pose_style_of(vocab)

    if isinstance(vocab, UnifiedVocabulary):
        pose, start = parse(tokens, vocab).pose_tokens, 1
        vocab = vocab.base
    else:
        pose, start = tokens, 0

    transform, residual = decode_pose(pose, vocab.grid, style, vocab, start)
    box = box_from_affine(transform)
    _print(json.dumps({'transform': transform.matrix.tolist(),
                       'residual': residual, **box.to_dict()}))


def backproject(args: argparse.Namespace) -> None:
    config = _config(args)
    k = read_camera(args.intrinsics)
    depth = read_depth(args.depth, args.depth_scale)
    mask = read_mask(args.mask, args.instance) if args.mask else None
    cloud = back_project(depth, k, mask)

    if args.features:
        assert cloud.pixels is not None
        cloud = PointCloud(cloud.points, cloud.pixels, gather_features(
            read_features(args.features), cloud.pixels, (k.width, k.height)))

    # 物体は object_points、シーン全体は scene_points を上限に間引く
    assert config.sampling is not None
    limit = (config.sampling.object_points if args.instance is not None
             else config.sampling.scene_points)

    if len(cloud) > limit:
        logger.info('subsampling %d points to %d', len(cloud), limit)
        cloud = sample_points(cloud, limit, config.seed)

    if args.augment:
        params = config.augmentation.draw(config.seed)
        logger.info('augmenting with %s', params)
        cloud, _ = augment(cloud, [], True, params)

    write('mesh', args.output, cloud)
    _print(f'{len(cloud)} points')


def _preprocess_one(job: tuple[Path, Path, RunConfig]) -> dict[str, Any]:
    source, target, config = job
    result = preprocess_asset(read_mesh(source), config.preprocess)
    target.parent.mkdir(parents=True, exist_ok=True)
    write_mesh(target, result.mesh)
    provenance = result.provenance()
    target.with_suffix('.json').write_text(
        json.dumps(provenance, indent=2) + '\n', encoding='utf8')
    return {'file': str(source), **provenance}


def preprocess(args: argparse.Namespace) -> None:
    config = _config(args)
    jobs = [(p, args.out_dir / p.relative_to(args.in_dir), config)
            for p in mesh_files(args.in_dir)]

    logger.info(f'preprocessing {len(jobs)} assets')

    for r in _map(_preprocess_one, jobs, config.jobs):
        _print(json.dumps(r))


def evaluate(args: argparse.Namespace) -> None:
    config = _config(args)
    pred = placed_objects(load_manifest(args.pred))
    gt = placed_objects(load_manifest(args.gt))
    report = evaluate_scene(pred, gt, config.metrics)

    if args.json:
        _print(json.dumps(report.to_dict(), indent=2))
    else:
        _print(report.table())


def _roundtrip_one(job: tuple[Path, RunConfig]) -> Optional[str]:
    path, config = job
    grid = QuantizationGrid.create(config.resolution)
    codec = get_codec(config.scheme)
    mesh = normalize_mesh(read_mesh(path))[0]
    expected = canonicalize(mesh, grid)

    try:
        decoded = codec.decode(codec.encode(mesh, grid),
                               codec.vocabulary(grid.resolution))
    except ParseError as e:
        return f'{path}: {e}'

    if not decoded.same_as(expected):
        return f'{path}: decoded mesh differs from the canonical form'

    return None


def roundtrip(args: argparse.Namespace) -> None:
    config = _config(args)
    files = mesh_files(args.mesh_dir)
    failures = [x for x in _map(_roundtrip_one,
                                [(p, config) for p in files], config.jobs)
                if x is not None]

    _print(f'{len(files) - len(failures)} of {len(files)} meshes '
           f'roundtrip losslessly ({config.scheme}, N={config.resolution})')

    if failures:
        for x in failures:
            logger.error(x)
        raise InvariantError(f'{len(failures)} meshes failed to roundtrip')


def stats(args: argparse.Namespace) -> None:
    config = _config(args)
    files = mesh_files(args.mesh_dir)
    meshes = [read_mesh(p) for p in files]
    s = mesh_stats(meshes, QuantizationGrid.create(config.resolution))

    rows = [('mesh', '|F|', '|V|')]
    rows += [(str(p.relative_to(args.mesh_dir)), str(f), str(v))
             for p, (f, v) in zip(files, s.per_mesh)]
    rows.append(('total', str(s.faces), str(s.vertices)))
    if files:
        rows.append(('mean', f'{s.faces / len(files):.1f}',
                     f'{s.vertices / len(files):.1f}'))

    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    _print(*('  '.join(c.rjust(w) if i else c.ljust(w)
                       for i, (c, w) in enumerate(zip(r, widths)))
             for r in rows))


def _error(e: BaseException) -> dict[str, Any]:
    if isinstance(e, TsumikiError):
        return e.to_dict()

    return {'error': type(e).__name__, 'code': exit_code(e),
            'message': str(e)}


def main(argv: Optional[list[str]] = None) -> None:
    helps = get_local_helps()

    parser = argparse.ArgumentParser(Path(__file__).parent.name)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=parse_url, help=helps['--config'])
    common.add_argument('--log-config', type=parse_log_config,
                        default=default_log_config,
                        help=helps['--log-config'])
    common.add_argument('--import-module', type=parse_import_module,
                        action='append', dest='import_modules',
                        metavar='MODULE', help=helps['--import-module'])

    def add(name: str, action: Callable[[argparse.Namespace], None]
            ) -> argparse.ArgumentParser:
        p = subparsers.add_parser(name, parents=[common])
        p.set_defaults(action=action)
        return p

    subparsers = parser.add_subparsers(dest='subcommand', required=True)

    p = add('tokenize', tokenize)
    p.add_argument('mesh', type=parse_url, help=helps['mesh'])
    p.add_argument('--scheme', type=parse_scheme, help=helps['--scheme'])
    p.add_argument('--res', type=parse_resolution, help=helps['--res'])
    p.add_argument('--box', type=parse_url, help=helps['--box'])
    p.add_argument('--no-normalize', action='store_true',
                   help=helps['--no-normalize'])
    p.add_argument('-o', '--output', type=Path, help=helps['-o'])

    p = add('detokenize', detokenize)
    p.add_argument('tokens', type=parse_url, help=helps['tokens'])
    p.add_argument('-o', '--output', type=Path, required=True,
                   help=helps['-o'])

    p = add('encode-pose', encode_pose_command)
    p.add_argument('box', type=parse_url, help=helps['box'])
    p.add_argument('--style', choices=styles, help=helps['--style'])
    p.add_argument('--scheme', type=parse_scheme, help=helps['--scheme'])
    p.add_argument('--res', type=parse_resolution, help=helps['--res'])
    p.add_argument('-o', '--output', type=Path, help=helps['-o'])

    p = add('decode-pose', decode_pose_command)
    p.add_argument('tokens', type=parse_url, help=helps['tokens'])

    p = add('backproject', backproject)
    p.add_argument('depth', type=parse_url, help=helps['depth'])
    p.add_argument('intrinsics', type=parse_url, help=helps['intrinsics'])
    p.add_argument('--mask', type=parse_url, help=helps['--mask'])
    p.add_argument('--instance', type=int, help=helps['--instance'])
    p.add_argument('--features', type=parse_url, help=helps['--features'])
    p.add_argument('--depth-scale', type=float, default=1.0,
                   help=helps['--depth-scale'])
    p.add_argument('--augment', action='store_true', help=helps['--augment'])
    p.add_argument('--seed', type=int, help=helps['--seed'])
    p.add_argument('-o', '--output', type=Path, required=True,
                   help=helps['-o'])

    p = add('preprocess', preprocess)
    p.add_argument('in_dir', type=parse_directory, help=helps['in_dir'])
    p.add_argument('out_dir', type=Path, help=helps['out_dir'])
    p.add_argument('--seed', type=int, help=helps['--seed'])
    p.add_argument('--jobs', type=parse_jobs, help=helps['--jobs'])

    p = add('eval', evaluate)
    p.add_argument('--pred', type=parse_url, required=True,
                   help=helps['--pred'])
    p.add_argument('--gt', type=parse_url, required=True,
                   help=helps['--gt'])
    p.add_argument('--json', action='store_true', help=helps['--json'])

    p = add('roundtrip', roundtrip)
    p.add_argument('mesh_dir', type=parse_directory, help=helps['mesh_dir'])
    p.add_argument('--scheme', type=parse_scheme, help=helps['--scheme'])
    p.add_argument('--res', type=parse_resolution, help=helps['--res'])
    p.add_argument('--jobs', type=parse_jobs, help=helps['--jobs'])

    p = add('stats', stats)
    p.add_argument('mesh_dir', type=parse_directory, help=helps['mesh_dir'])
    p.add_argument('--res', type=parse_resolution, help=helps['--res'])

    args = parser.parse_args(argv)

    logging.config.dictConfig(args.log_config)

    logger.debug(args)

    try:
        args.action(args)
    except (TsumikiError, OSError) as e:
        logger.debug(traceback.format_exc())
        print(json.dumps(_error(e)), file=sys.stderr)
        sys.exit(exit_code(e))
    except Exception as e:
        logger.error(traceback.format_exc())
        print(json.dumps(_error(e)), file=sys.stderr)
        sys.exit(exit_code(e))
