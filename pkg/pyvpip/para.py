import os
from os.path import dirname, abspath, join, isabs
from ruamel.yaml import YAML
from .nets.genlv import ModelConfig, model_variant
from .train import TrainConfig
from .utils.common import str2val

CONFIG_VERSION = 'vpip-config/1'
COMMANDS = ('synth', 'train', 'finetune', 'eval')
PROFILES_NAME = 'profiles.yml'
OUTPUT_ROOT_ENV = 'VPIP_OUTPUT_ROOT'

yaml = YAML()
yaml.default_flow_style = False


def template_path(name):
    return join(dirname(abspath(__file__)), 'template', name)


def _load(fname):
    with open(fname, encoding='utf-8') as f:
        doc = yaml.load(f.read())
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ValueError('{} should hold a mapping at the top level'.format(fname))
    return doc


def _merge(base, over, strict, prefix=''):
    for key, value in over.items():
        path = prefix + str(key)
        if key not in base:
            if strict:
                raise ValueError('Unknown config key {}'.format(path))
            continue
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, strict, path + '.')
        else:
            base[key] = value


def output_path(path):
    """Re-root a relative output path under ``$VPIP_OUTPUT_ROOT`` when it is set"""
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if path is None or isabs(path) or not root:
        return path
    return join(root, path)


class VPIPPara:
    """
    Read, validate and write the config document of a subcommand

    The document is overlaid on the subcommand template and on the chosen
    profile (``desk`` or ``paper``); keys the template does not declare are
    rejected.

    :param fname: Path to a YAML or JSON config, None for the template alone
    :type fname: str, optional
    :param command: Subcommand, one of ``synth``, ``train``, ``finetune``, ``eval``
    :type command: str
    :param overrides: ``key=value`` strings with dotted keys
    :type overrides: list, optional
    :param profile: Profile overriding the one of the document, optional
    :type profile: str
    """
    def __init__(self, fname=None, command='train', overrides=(), profile=None) -> None:
        if command not in COMMANDS:
            raise ValueError('Unknown command {}, should be one of {}'.format(command, ', '.join(COMMANDS)))
        self.fname = fname
        self.command = command
        self.input_params = _load(template_path('{}.yml'.format(command)))
        user = {}
        if fname is not None:
            if not os.path.isfile(fname):
                raise FileNotFoundError('Config file {} not found'.format(fname))
            user = _load(fname)
        version = user.get('version', CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError('Unsupported config version {}, expected {}'.format(version, CONFIG_VERSION))
        profile = profile or user.get('profile', self.input_params['profile'])
        profiles = _load(template_path(PROFILES_NAME))
        if profile not in profiles:
            raise ValueError('Unknown profile {}, should be one of {}'.format(profile, ', '.join(profiles)))
        _merge(self.input_params, profiles[profile], strict=False)
        _merge(self.input_params, user, strict=True)
        self.input_params['profile'] = profile
        for item in overrides:
            if '=' not in item:
                raise ValueError('Override should be key=value, got {}'.format(item))
            key, value = item.split('=', 1)
            self.update_param(key.strip(), value.strip())

    def __getitem__(self, key):
        return self.input_params[key]

    def update_param(self, key: str, value) -> None:
        """Update a parameter.

        :param key: The key of parameter file to be set. Use '.' to separate the keys.
        :type key: str
        """
        keys = key.split('.')
        param = self.input_params
        for i, k in enumerate(keys[:-1]):
            if not isinstance(param.get(k), dict):
                raise ValueError('Unknown config key {}'.format('.'.join(keys[:i + 1])))
            param = param[k]
        if keys[-1] not in param:
            raise ValueError('Unknown config key {}'.format(key))
        param[keys[-1]] = str2val(value)

    def get(self, key, default=None):
        param = self.input_params
        for k in key.split('.'):
            if not isinstance(param, dict) or k not in param:
                return default
            param = param[k]
        return param

    def model_config(self):
        """ModelConfig of the ``model`` section: a named variant with non-null fields overriding it"""
        section = dict(self.input_params['model'])
        variant = section.pop('variant')
        section.pop('init_seed', None)
        fields = {k: (list(v) if isinstance(v, list) else v) for k, v in section.items() if v is not None}
        unknown = set(fields) - set(ModelConfig.__dataclass_fields__)
        if unknown:
            raise ValueError('Unknown model config keys: {}'.format(', '.join(sorted(unknown))))
        return model_variant(variant, **fields)

    def train_config(self):
        return TrainConfig.from_dict(dict(self.input_params['train'])).validate()

    def to_dict(self):
        """Plain-dict copy, e.g. for report echoes"""
        def _plain(obj):
            if isinstance(obj, dict):
                return {str(k): _plain(v) for k, v in obj.items()}
            if isinstance(obj, list):
                return [_plain(v) for v in obj]
            return obj
        return _plain(self.input_params)

    def write(self, fname=None):
        """write

        :param fname: Path to output file, for None to overwrite input file, defaults to None
        :type fname: str, optional
        """
        if fname is None:
            fname = self.fname
        with open(fname, 'w') as f:
            yaml.dump(self.input_params, f)


def input_path(path):
    """Path of an input produced by an earlier run, looked up under ``$VPIP_OUTPUT_ROOT`` first"""
    rerooted = output_path(path)
    if rerooted is not None and os.path.exists(rerooted):
        return rerooted
    return path
