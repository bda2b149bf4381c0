import json
from dataclasses import dataclass, field
import numpy as np
import h5py
import torch
from .nets.genlv import ModelConfig, GenLV
from .setuplog import SetupLog
from .utils.common import atomic_path

CKPT_FORMAT = 'vpip-ckpt/1'


class CheckpointError(ValueError):
    """Unreadable, corrupt or mismatched checkpoint"""


@dataclass
class Checkpoint:
    config: ModelConfig
    weights: dict
    step: int = 0
    optimizer: dict = None
    meta: dict = field(default_factory=dict)


def _write_optimizer(group, state_dict):
    group.attrs['param_groups'] = json.dumps(state_dict['param_groups'])
    for idx, state in state_dict['state'].items():
        sub = group.create_group('state/{}'.format(idx))
        for key, value in state.items():
            sub.create_dataset(key, data=value.detach().cpu().numpy() if torch.is_tensor(value) else value)


def _read_optimizer(group):
    state = {}
    if 'state' in group:
        for idx, sub in group['state'].items():
            state[int(idx)] = {key: torch.from_numpy(np.array(sub[key][()])) for key in sub}
    return {'state': state, 'param_groups': json.loads(group.attrs['param_groups'])}


def save_checkpoint(fname, model, step=0, optimizer=None, meta=None):
    """
    Write model weights to an HDF5 checkpoint

    Parameter names map to group paths (``latent.0.pcab.attn.to_q.weight``
    is stored at ``weights/latent/0/pcab/attn/to_q/weight``).

    :param fname: Output path
    :type fname: str
    :param model: Network to save
    :type model: pyvpip.nets.GenLV
    :param step: Training step the weights belong to
    :type step: int
    :param optimizer: Optimizer whose state is stored for resuming, optional
    :type optimizer: torch.optim.Optimizer
    :param meta: Extra JSON-serializable attributes, optional
    :type meta: dict
    """
    with atomic_path(fname) as tmp:
        with h5py.File(tmp, 'w') as f:
            f.attrs['format'] = CKPT_FORMAT
            f.attrs['config'] = model.config.to_json()
            f.attrs['step'] = int(step)
            f.attrs['meta'] = json.dumps(meta or {}, sort_keys=True)
            weights = f.create_group('weights')
            for name, tensor in model.state_dict().items():
                weights.create_dataset(name.replace('.', '/'), data=tensor.detach().cpu().numpy())
            if optimizer is not None:
                _write_optimizer(f.create_group('optimizer'), optimizer.state_dict())


def read_checkpoint(fname):
    """
    Read a checkpoint without building the network

    :rtype: Checkpoint
    """
    try:
        f = h5py.File(fname, 'r')
    except FileNotFoundError:
        raise
    except OSError as e:
        raise CheckpointError('Cannot open checkpoint {}: {}'.format(fname, e))
    with f:
        fmt = f.attrs.get('format')
        if isinstance(fmt, bytes):
            fmt = fmt.decode()
        if fmt != CKPT_FORMAT:
            raise CheckpointError('{} is not a {} checkpoint (format {})'.format(fname, CKPT_FORMAT, fmt))
        try:
            config = ModelConfig.from_dict(json.loads(f.attrs['config'])).validate()
            weights = {}

            def _collect(name, obj):
                if isinstance(obj, h5py.Dataset):
                    weights[name.replace('/', '.')] = obj[()]
            f['weights'].visititems(_collect)
            optimizer = _read_optimizer(f['optimizer']) if 'optimizer' in f else None
            meta = json.loads(f.attrs.get('meta', '{}'))
            step = int(f.attrs['step'])
        except (KeyError, ValueError, OSError) as e:
            raise CheckpointError('Corrupt checkpoint {}: {}'.format(fname, e))
    return Checkpoint(config, weights, step, optimizer, meta)


def load_model(fname, config=None):
    """
    Build a network from a checkpoint

    :param fname: Checkpoint path
    :type fname: str
    :param config: Expected model configuration; a different one is rejected
    :type config: ModelConfig, optional
    :return: The network and the checkpoint record
    :rtype: tuple
    """
    log = SetupLog()
    ckpt = read_checkpoint(fname)
    if config is not None and config.to_dict() != ckpt.config.to_dict():
        raise CheckpointError('Checkpoint {} was saved with a different model config:\n  checkpoint: {}\n  expected:   {}'.format(
            fname, ckpt.config.to_json(), config.to_json()))
    model = GenLV(ckpt.config)
    expected = set(model.state_dict().keys())
    missing, unexpected = expected - set(ckpt.weights), set(ckpt.weights) - expected
    if missing or unexpected:
        raise CheckpointError('Checkpoint {} does not match the network: missing {}, unexpected {}'.format(
            fname, sorted(missing)[:5], sorted(unexpected)[:5]))
    state = {}
    for name, ref in model.state_dict().items():
        value = ckpt.weights[name]
        if tuple(value.shape) != tuple(ref.shape):
            raise CheckpointError('Parameter {} has shape {} in {}, expected {}'.format(
                name, value.shape, fname, tuple(ref.shape)))
        if not np.all(np.isfinite(value)):
            raise CheckpointError('Parameter {} in {} has non-finite values'.format(name, fname))
        state[name] = torch.from_numpy(np.array(value))
    model.load_state_dict(state)
    log.Modellog.info('Loaded checkpoint {} (step {})'.format(fname, ckpt.step))
    return model, ckpt
