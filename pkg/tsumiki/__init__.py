__version__ = '0.1.0'

from .assembly import compose_scene, decode_object, load_manifest
from .cli import main
from .codecs import compression_report, decode, encode
from .geometry import back_project, normalize_mesh, project
from .metrics import evaluate_scene
from .preprocess import preprocess_asset
from .sequence import assemble, parse, validate_prefix

__all__ = ['assemble', 'back_project', 'compose_scene', 'compression_report',
           'decode', 'decode_object', 'encode', 'evaluate_scene',
           'load_manifest', 'normalize_mesh', 'parse', 'preprocess_asset',
           'project', 'validate_prefix']

if __name__ == '__main__':
    main()
