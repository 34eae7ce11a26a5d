"""Run configuration, loaded from one YAML (or JSON) document.

Values are resolved as command-line flags > document > defaults.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .codecs import codec_keys
from .errors import FormatError, ValidationError
from .geometry import (AugmentationParams, default_depth_jitter, max_yaw,
                       scale_range, shift_range)
from .metrics import MetricConfig
from .pose import styles
from .preprocess import PreprocessConfig
from .quantize import resolutions
from .utils import URL, package_name, read_text

logger = logging.getLogger(package_name)

# スキームごとの既定値: (解像度, 物体あたりの点数)
scheme_defaults = {
    'coord': (512, 8192),
    'compact': (512, 8192),
    'block': (128, 4096)
}

default_scene_points = 16384


@dataclass(frozen=True)
class AugmentationConfig:
    max_yaw: float = max_yaw
    scale_range: tuple[float, float] = scale_range
    shift_range: tuple[float, float] = shift_range
    depth_jitter_max: float = default_depth_jitter

    def __post_init__(self):
        object.__setattr__(self, 'scale_range',
                           tuple(float(x) for x in self.scale_range))
        object.__setattr__(self, 'shift_range',
                           tuple(float(x) for x in self.shift_range))

        if not 0 <= self.max_yaw <= max_yaw:
            raise ValidationError('augmentation.max_yaw must be in '
                                  '[0, pi/4]')

        for name, lo_hi, bounds in (('scale_range', self.scale_range,
                                     scale_range),
                                    ('shift_range', self.shift_range,
                                     shift_range)):
            if len(lo_hi) != 2 or not (bounds[0] <= lo_hi[0] <= lo_hi[1]
                                       <= bounds[1]):
                raise ValidationError(f'augmentation.{name} must be an '
                                      f'ascending pair inside {bounds}')

        if self.depth_jitter_max < 0:
            raise ValidationError('augmentation.depth_jitter_max must be '
                                  '>= 0')

    def draw(self, seed: int) -> AugmentationParams:
        return AugmentationParams.sample(
            seed, self.max_yaw, self.scale_range,  # type: ignore
            self.shift_range, self.depth_jitter_max)


@dataclass(frozen=True)
class SamplingConfig:
    object_points: int
    scene_points: int = default_scene_points

    def __post_init__(self):
        if self.object_points < 1 or self.scene_points < 1:
            raise ValidationError('point counts must be >= 1')


@dataclass(frozen=True)
class RunConfig:
    scheme: str = 'compact'
    resolution: Optional[int] = None
    pose_style: Optional[str] = None
    seed: int = 0
    jobs: int = 1
    metrics: MetricConfig = field(default_factory=MetricConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    augmentation: AugmentationConfig = field(
        default_factory=AugmentationConfig)
    sampling: Optional[SamplingConfig] = None

    def __post_init__(self):
        if self.scheme not in codec_keys():
            raise ValidationError(f'unknown scheme "{self.scheme}" '
                                  f'(choose from {codec_keys()})')

        resolution, points = scheme_defaults.get(self.scheme, (512, 8192))

        if self.resolution is None:
            object.__setattr__(self, 'resolution', resolution)

        if self.pose_style is None:
            object.__setattr__(self, 'pose_style',
                               'block' if self.scheme == 'block' else 'axis')

        if self.sampling is None:
            object.__setattr__(self, 'sampling', SamplingConfig(points))

        if self.resolution not in resolutions:
            raise ValidationError(f'resolution must be one of {resolutions}')

        if self.scheme == 'block' and self.resolution % 8:
            raise ValidationError('block scheme needs a resolution '
                                  'divisible by 8')

        if self.pose_style not in styles:
            raise ValidationError(f'pose_style must be one of {styles}')

        if self.jobs < 1:
            raise ValidationError('jobs must be >= 1')

    def replace(self, **changes) -> 'RunConfig':
        """Overrides fields; values left at the old scheme's defaults
        follow a new scheme."""
        changes = {k: v for k, v in changes.items() if v is not None}

        if changes.get('scheme', self.scheme) != self.scheme:
            old = RunConfig(self.scheme)
            for k in ('resolution', 'pose_style', 'sampling'):
                if getattr(self, k) == getattr(old, k):
                    changes.setdefault(k, None)

        # 全体のシードは各段のシードにも及ぶ
        if 'seed' in changes:
            for k in ('metrics', 'preprocess'):
                changes.setdefault(k, dataclasses.replace(
                    getattr(self, k), seed=changes['seed']))

        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_sections = {
    'metrics': MetricConfig,
    'preprocess': PreprocessConfig,
    'augmentation': AugmentationConfig,
    'sampling': SamplingConfig
}


def _build(cls, d: Any, where: str):
    if not isinstance(d, dict):
        raise ValidationError(f'{where} must be a mapping')

    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)

    if unknown:
        raise ValidationError(f'unknown config key {where}.{unknown[0]}')

    try:
        return cls(**d)
    except TypeError as e:
        raise ValidationError(f'{where}: {e}') from e


def config_from_dict(d: Optional[dict[str, Any]]) -> RunConfig:
    d = dict(d or {})
    kwargs: dict[str, Any] = {}

    # 全体のシードは各段のシードにも及ぶ
    if 'seed' in d:
        for k in ('metrics', 'preprocess'):
            if isinstance(d.get(k) or {}, dict):
                d[k] = {'seed': d['seed'], **(d.get(k) or {})}

    for k, v in d.items():
        if k in _sections:
            if k == 'sampling' and isinstance(v or {}, dict):
                v = {'object_points': scheme_defaults.get(
                    d.get('scheme', 'compact'), (512, 8192))[1], **(v or {})}
            kwargs[k] = _build(_sections[k], v or {}, k)
        else:
            kwargs[k] = v

    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(kwargs) - names)

    if unknown:
        raise ValidationError(f'unknown config key {unknown[0]}')

    try:
        return RunConfig(**kwargs)
    except TypeError as e:
        raise ValidationError(str(e)) from e


def load_config(url: Union[URL, Path, str]) -> RunConfig:
    url = URL.create(url)
    logger.debug(f'Config: {url}')

    try:
        d = yaml.safe_load(read_text(url))
    except yaml.YAMLError as e:
        raise FormatError(f'{url}: {e}') from e

    if d is not None and not isinstance(d, dict):
        raise ValidationError('config must be a mapping')

    return config_from_dict(d)
