"""Decoding objects from token streams and composing them into a scene."""
import logging
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple, Optional, Union

import numpy as np
import yaml

from .codecs import MeshVocabulary, TokenSequence, get_codec
from .errors import FormatError, ManifestError, ValidationError
from .formats import read_mesh, read_tokens
from .geometry import NormalizationFrame
from .mesh import TriangleMesh, concatenate
from .metrics import PlacedObject
from .pose import AffineTransform, decode_pose, transform_mesh
from .quantize import QuantizationGrid
from .sequence import UnifiedVocabulary, parse, pose_style_of
from .utils import URL, package_name, read_text

logger = logging.getLogger(package_name)


class ManifestObject(NamedTuple):
    id: int
    token_path: Optional[URL] = None
    mesh_path: Optional[URL] = None
    transform: Optional[AffineTransform] = None

    @property
    def source(self) -> URL:
        source = self.token_path or self.mesh_path
        assert source is not None
        return source


@dataclass
class SceneManifest:
    objects: list[ManifestObject]
    frame: NormalizationFrame = field(
        default_factory=NormalizationFrame.identity)

    def __post_init__(self):
        ids = [x.id for x in self.objects]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})

        if duplicates:
            raise ManifestError(f'duplicate object ids {duplicates}')

        for x in self.objects:
            if (x.token_path is None) == (x.mesh_path is None):
                raise ManifestError(f'object {x.id} needs exactly one of '
                                    'token_path and mesh_path')
            if x.token_path is not None and x.transform is not None:
                raise ManifestError(f'object {x.id}: token streams carry '
                                    'their own pose')


def _object(d: Any, base: URL) -> ManifestObject:
    if not isinstance(d, dict) or 'id' not in d:
        raise ManifestError('manifest objects need an "id"')

    unknown = set(d) - {'id', 'token_path', 'mesh_path', 'transform'}

    if unknown:
        raise ManifestError(f'object {d["id"]}: unknown keys '
                            f'{sorted(unknown)}')

    try:
        transform = AffineTransform.from_matrix(d['transform']) \
            if d.get('transform') is not None else None
    except (ValueError, TypeError) as e:
        raise ManifestError(f'object {d["id"]}: bad transform: {e}') from e

    # 相対パスはマニフェストの置き場所から解決する
    paths = {k: base.joinpath(str(d[k]))
             for k in ('token_path', 'mesh_path') if d.get(k) is not None}

    return ManifestObject(int(d['id']), paths.get('token_path'),
                          paths.get('mesh_path'), transform)


def parse_manifest(data: Any, base: Union[URL, Path, str] = 'manifest.json'
                   ) -> SceneManifest:
    """Builds a manifest from a JSON object ``{frame, objects}`` or a bare
    array of objects.

    Relative paths resolve against the directory holding ``base``.
    """
    base = URL.create(base)

    if isinstance(data, list):
        data = {'objects': data}

    if not isinstance(data, dict) or not isinstance(data.get('objects'),
                                                    list):
        raise ManifestError('manifest must be a list of objects or '
                            '{"objects": [...]}')

    frame = NormalizationFrame.identity()

    if data.get('frame') is not None:
        try:
            f = data['frame']
            frame = NormalizationFrame(
                tuple(float(x) for x in f['center']),
                float(f['half_extent']))
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f'bad manifest frame: {e}') from e

        if len(frame.center) != 3 or not frame.half_extent > 0:
            raise ManifestError('manifest frame needs a 3D center and '
                                'half_extent > 0')

    return SceneManifest([_object(x, base) for x in data['objects']], frame)


def load_manifest(url: Union[URL, Path, str]) -> SceneManifest:
    url = URL.create(url)
    logger.debug(f'Manifest: {url}')

    try:
        data = yaml.safe_load(read_text(url))
    except yaml.YAMLError as e:
        raise FormatError(f'{url}: {e}') from e

    return parse_manifest(data, url)


def _decode(tokens: Union[TokenSequence, Iterable[int]],
            vocab: Optional[MeshVocabulary],
            grid: Optional[QuantizationGrid]
            ) -> tuple[AffineTransform, TriangleMesh]:
    if vocab is None:
        if not isinstance(tokens, TokenSequence):
            raise ValidationError('a vocabulary is needed for raw tokens')
        vocab = tokens.vocab

    unified = UnifiedVocabulary.create(vocab)
    base = unified.base
    record = parse(tokens, unified)

    # 姿勢トークンは bos の直後から始まる
    transform, residual = decode_pose(record.pose_tokens, grid or base.grid,
                                      pose_style_of(unified), base, 1)
    logger.debug(f'pose residual {residual:.3e}')

    return transform, get_codec(base.scheme).decode(record.mesh_tokens, base)


def decode_object(tokens: Union[TokenSequence, Iterable[int]],
                  vocab: Optional[MeshVocabulary] = None,
                  grid: Optional[QuantizationGrid] = None
                  ) -> tuple[AffineTransform, TriangleMesh]:
    """Placement and posed mesh of one ``<bos> pose <sep> mesh <eos>``
    stream."""
    transform, mesh = _decode(tokens, vocab, grid)
    return transform, transform_mesh(transform, mesh)


def _place(x: ManifestObject) -> PlacedObject:
    if x.token_path is not None:
        transform, mesh = _decode(read_tokens(x.token_path), None, None)
        return PlacedObject(x.id, mesh, transform)

    assert x.mesh_path is not None
    return PlacedObject(x.id, read_mesh(x.mesh_path),
                        x.transform or AffineTransform.identity())


def placed_objects(manifest: SceneManifest) -> list[PlacedObject]:
    """Canonical meshes with their placements, sorted by id."""
    objects = []

    for x in sorted(manifest.objects, key=lambda x: x.id):
        logger.debug(f'object {x.id} <- {x.source}')
        objects.append(_place(x))

    return objects


def compose(objects: Iterable[PlacedObject],
            frame: Optional[NormalizationFrame] = None) -> TriangleMesh:
    objects = sorted(objects, key=lambda x: x.id)
    scene = concatenate([x.posed for x in objects], [x.id for x in objects])

    if frame is not None:
        scene = scene.with_vertices(frame.invert(scene.vertices))

    return scene


def compose_scene(manifest: SceneManifest,
                  denormalize: bool = False) -> TriangleMesh:
    """Union of all posed objects with a per-face object id.

    With ``denormalize`` the result is mapped out of the scene frame back
    to metric coordinates.
    """
    scene = compose(placed_objects(manifest),
                    manifest.frame if denormalize else None)
    logger.info(f'composed {len(manifest.objects)} objects, '
                f'{len(scene.faces)} faces')
    return scene


def manifest_to_dict(manifest: SceneManifest) -> dict[str, Any]:
    return {
        'frame': {'center': list(manifest.frame.center),
                  'half_extent': manifest.frame.half_extent},
        'objects': [
            {k: v for k, v in (
                ('id', x.id),
                ('token_path', x.token_path and str(x.token_path)),
                ('mesh_path', x.mesh_path and str(x.mesh_path)),
                ('transform', x.transform and
                 np.asarray(x.transform.matrix)[:3].tolist()))
             if v is not None}
            for x in manifest.objects]
    }
