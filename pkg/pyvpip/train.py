import os
import re
import glob
import math
from collections import Counter
from dataclasses import dataclass, asdict
import numpy as np
import torch
from torch.utils.data import Dataset, DataLoader
from tqdm import tqdm
from .checkpoint import save_checkpoint, load_model
from .corpus import select_prompt_entry
from .nets.genlv import no_weight_decay
from .setuplog import SetupLog
from .tasks import PromptPair
from .utils.common import make_rng, stable_seed

TASK_SAMPLING = ('uniform_task', 'uniform_sample')
LOSS_LOG = 'loss.log'
CHECKPOINT_DIR = 'checkpoints'
FINETUNE_PATIENCE = 10
FINETUNE_MIN_IMPROVEMENT = 0.01

# trainable name prefixes added by each fine-tuning strategy
PROMPT_ENCODER = ('prompt_encoder.',)
LATENT_BLOCKS = ('latent.',)
INPUT_ENCODER = ('stem.', 'encoders.', 'downs.')
FINETUNE_STRATEGIES = ('prompt_encoder_only', 'plus_latent_blocks', 'plus_input_encoder', 'full', 'full_backbone')


class NonFiniteLossError(FloatingPointError):
    """Loss became NaN or infinite"""


@dataclass
class TrainConfig:
    """
    Optimizer and loop settings

    :param steps: Number of optimizer steps; 0 derives it from ``epochs``
    :param checkpoint_interval: Steps between checkpoints
    :param workers: Feeder processes building batches, 0 builds them inline
    """
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 1e-4
    batch_size: int = 8
    epochs: int = 1
    steps: int = 0
    task_sampling: str = 'uniform_task'
    seed: int = 0
    checkpoint_interval: int = 100
    workers: int = 0
    device: str = 'cpu'

    def validate(self):
        if not self.learning_rate > 0:
            raise ValueError('learning_rate should be positive, got {}'.format(self.learning_rate))
        for name in ('beta1', 'beta2'):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError('{} should be in [0, 1), got {}'.format(name, getattr(self, name)))
        if self.batch_size < 1:
            raise ValueError('batch_size should be at least 1, got {}'.format(self.batch_size))
        if self.epochs < 0 or self.steps < 0:
            raise ValueError('epochs and steps should be non-negative')
        if self.checkpoint_interval < 1:
            raise ValueError('checkpoint_interval should be at least 1, got {}'.format(self.checkpoint_interval))
        if self.task_sampling not in TASK_SAMPLING:
            raise ValueError('task_sampling should be one of {}, got {}'.format(
                ', '.join(TASK_SAMPLING), self.task_sampling))
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError('Unknown train config keys: {}'.format(', '.join(sorted(unknown))))
        return cls(**doc)


def l1_loss(pred, target):
    """Mean absolute difference over all elements

    Works on numpy arrays (returns a float) and on tensors (returns a
    differentiable scalar).
    """
    if tuple(pred.shape) != tuple(target.shape):
        raise ValueError('pred and target shapes differ: {} vs {}'.format(tuple(pred.shape), tuple(target.shape)))
    if torch.is_tensor(pred):
        return (pred - target).abs().mean()
    return float(np.mean(np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64))))


def step_seed(seed, step):
    return stable_seed(seed, 'step', step)


def plan_batch(manifest, batch_size, seed, task_sampling='uniform_task'):
    """
    Choose query and prompt entries of one batch without loading images

    Tasks are drawn uniformly (``uniform_task``) or proportionally to their
    sample counts (``uniform_sample``); the prompt shares the query's task
    and severity bucket and comes from another base image.

    :return: List of ``(query_row, prompt_row)``
    """
    if task_sampling not in TASK_SAMPLING:
        raise ValueError('Unknown task_sampling {}'.format(task_sampling))
    entries = manifest.entries
    if entries.empty:
        raise ValueError('Cannot build a batch from an empty corpus')
    task_ids = sorted(entries['task_id'].unique())
    rng = make_rng(seed, 4)
    plan = []
    for b in range(batch_size):
        if task_sampling == 'uniform_task':
            pool = manifest.select(task_ids[int(rng.integers(len(task_ids)))])
        else:
            pool = entries
        row = pool.iloc[int(rng.integers(pool.shape[0]))]
        task = manifest.task_of(row)
        prompt_row = select_prompt_entry(manifest, task, row['base_id'], stable_seed(seed, 'prompt', b))
        plan.append((row, prompt_row))
    return plan


def make_batch(manifest, batch_size, seed, task_sampling='uniform_task'):
    """
    Sample a training batch of severity-matched ``(SamplePair, PromptPair)``

    :param manifest: Corpus
    :type manifest: pyvpip.corpus.CorpusManifest
    :param batch_size: Number of samples
    :type batch_size: int
    :param seed: Seed of the batch
    :type seed: int
    :rtype: list
    """
    batch = []
    for row, prompt_row in plan_batch(manifest, batch_size, seed, task_sampling):
        sample = manifest.load_entry(row)
        prompt_pair = manifest.load_entry(prompt_row)
        batch.append((sample, PromptPair(prompt_pair.input, prompt_pair.target, prompt_pair.task,
                                         prompt_pair.base_id)))
    return batch


def _chw(img):
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32)


def collate(batch):
    """Stack a list of ``(SamplePair, PromptPair)`` into float32 arrays"""
    return {
        'input': np.stack([_chw(s.input) for s, _ in batch]),
        'prompt_source': np.stack([_chw(p.source) for _, p in batch]),
        'prompt_target': np.stack([_chw(p.target) for _, p in batch]),
        'target': np.stack([_chw(s.target) for s, _ in batch]),
        'task_ids': [s.task.task_id for s, _ in batch],
    }


def batch_to_tensors(batch, device='cpu', dtype=torch.float32):
    if not isinstance(batch, dict):
        batch = collate(batch)
    out = {'task_ids': list(batch['task_ids'])}
    for key in ('input', 'prompt_source', 'prompt_target', 'target'):
        value = batch[key]
        value = torch.as_tensor(value) if not torch.is_tensor(value) else value
        out[key] = value.to(device=device, dtype=dtype)
    return out


def task_mix(task_ids):
    counts = Counter(task_ids)
    return ','.join('{}:{}'.format(k, counts[k]) for k in sorted(counts))


def make_optimizer(model, config, trainable=None):
    """
    AdamW over the trainable parameters, the others are frozen

    Weight decay applies to weights only, not to biases, norms or
    temperatures.

    :param trainable: Names of trainable parameters, all of them by default
    :type trainable: set, optional
    :rtype: torch.optim.AdamW
    """
    names = set(dict(model.named_parameters())) if trainable is None else set(trainable)
    decay, no_decay = [], []
    for name, param in model.named_parameters():
        param.requires_grad_(name in names)
        if name not in names:
            continue
        (no_decay if no_weight_decay(name, param) else decay).append(param)
    groups = [g for g in ({'params': decay, 'weight_decay': config.weight_decay},
                          {'params': no_decay, 'weight_decay': 0.}) if g['params']]
    if not groups:
        raise ValueError('No trainable parameters')
    return torch.optim.AdamW(groups, lr=config.learning_rate, betas=(config.beta1, config.beta2))


def train_step(model, batch, optimizer):
    """
    One AdamW update against the mean L1 loss of a batch

    :param batch: List of ``(SamplePair, PromptPair)`` or collated arrays
    :return: Loss before the update
    :rtype: float
    :raises NonFiniteLossError: The loss is NaN or infinite
    """
    param = next(model.parameters())
    tensors = batch_to_tensors(batch, param.device, param.dtype)
    model.train()
    optimizer.zero_grad(set_to_none=True)
    pred = model(tensors['input'], tensors['prompt_source'], tensors['prompt_target'])
    loss = l1_loss(pred, tensors['target'])
    if not torch.isfinite(loss):
        raise NonFiniteLossError('Non-finite loss {} on batch of tasks {}'.format(
            loss.item(), task_mix(tensors['task_ids'])))
    loss.backward()
    optimizer.step()
    return loss.item()


def select_trainable(model, strategy):
    """
    Names of the parameters a fine-tuning strategy trains

    ======================== ==================================================
    Strategy                 Trainable parameters
    ======================== ==================================================
    ``prompt_encoder_only``  prompt encoder
    ``plus_latent_blocks``   prompt encoder and bottleneck blocks
    ``plus_input_encoder``   above plus stem, encoder levels and downsamplers
    ``full``                 everything
    ``full_backbone``        everything except the prompt encoder
    ======================== ==================================================

    :rtype: set
    """
    names = [name for name, _ in model.named_parameters()]
    if strategy not in FINETUNE_STRATEGIES:
        raise ValueError('Unknown fine-tuning strategy {}, should be one of {}'.format(
            strategy, ', '.join(FINETUNE_STRATEGIES)))
    if strategy == 'full':
        return set(names)
    if strategy == 'full_backbone':
        return {n for n in names if not n.startswith(PROMPT_ENCODER)}
    prefixes = PROMPT_ENCODER
    if strategy in ('plus_latent_blocks', 'plus_input_encoder'):
        prefixes += LATENT_BLOCKS
    if strategy == 'plus_input_encoder':
        prefixes += INPUT_ENCODER
    return {n for n in names if n.startswith(prefixes)}


def leave_one_out_batch(pairs, seed):
    """Each pair prompted by another pair of the set"""
    rng = make_rng(seed, 5)
    batch = []
    for i, sample in enumerate(pairs):
        others = [j for j in range(len(pairs)) if j != i]
        j = others[int(rng.integers(len(others)))]
        batch.append((sample, PromptPair(pairs[j].input, pairs[j].target, pairs[j].task, pairs[j].base_id)))
    return batch


def finetune(model, few_shot_pairs, strategy, config, callback=None):
    """
    Adapt a network to a new task from a few pairs

    Each epoch is one update over the whole set, every pair prompted by
    another pair of the set. Training stops early when the loss has not
    improved by 1% over 10 consecutive epochs.

    :param few_shot_pairs: At least 2 pairs of the new task
    :type few_shot_pairs: list
    :param strategy: One of ``FINETUNE_STRATEGIES``
    :type strategy: str
    :param config: ``epochs``, ``seed`` and optimizer settings
    :type config: TrainConfig
    :param callback: Called as ``callback(epoch, loss)`` after every epoch
    :type callback: callable, optional
    :return: The same network, updated in place
    """
    log = SetupLog()
    if len(few_shot_pairs) < 2:
        raise ValueError('finetune needs at least 2 pairs, got {}'.format(len(few_shot_pairs)))
    trainable = select_trainable(model, strategy)
    optimizer = make_optimizer(model, config, trainable)
    best, best_epoch = math.inf, 0
    for epoch in range(int(config.epochs)):
        batch = leave_one_out_batch(few_shot_pairs, stable_seed(config.seed, 'finetune', epoch))
        loss = train_step(model, batch, optimizer)
        if callback is not None:
            callback(epoch, loss)
        if loss < best * (1. - FINETUNE_MIN_IMPROVEMENT):
            best, best_epoch = loss, epoch
        elif epoch - best_epoch >= FINETUNE_PATIENCE:
            log.Trainlog.info('Early stop at epoch {} (best loss {:.6f} at epoch {})'.format(epoch, best, best_epoch))
            break
    for param in model.parameters():
        param.requires_grad_(True)
    return model


class StepBatches(Dataset):
    """Batches indexed by step; the batch of step ``s`` depends only on ``(seed, s)``"""
    def __init__(self, manifest, config, start, stop):
        self.manifest = manifest
        self.config = config
        self.start = start
        self.stop = stop

    def __len__(self):
        return self.stop - self.start

    def __getitem__(self, i):
        step = self.start + i + 1
        return collate(make_batch(self.manifest, self.config.batch_size,
                                  step_seed(self.config.seed, step), self.config.task_sampling))


class Trainer():
    """
    Multi-task training loop with loss log, checkpoints and resume

    :param model: Network to train
    :type model: pyvpip.nets.GenLV
    :param manifest: Training corpus
    :type manifest: pyvpip.corpus.CorpusManifest
    :param config: Optimizer and loop settings
    :type config: TrainConfig
    :param out_dir: Directory for ``loss.log`` and ``checkpoints/``
    :type out_dir: str
    """
    def __init__(self, model, manifest, config, out_dir) -> None:
        self.model = model.to(config.device)
        self.manifest = manifest
        self.config = config.validate()
        self.out_dir = out_dir
        self.optimizer = make_optimizer(self.model, self.config)
        self.step = 0
        self.log = SetupLog()

    def __repr__(self):
        return 'PyVPIP Trainer Object: out_dir={}, step={}, total_steps={}'.format(
            self.out_dir, self.step, self.total_steps)

    @property
    def total_steps(self):
        if self.config.steps > 0:
            return self.config.steps
        return int(math.ceil(self.config.epochs * len(self.manifest) / self.config.batch_size))

    @property
    def loss_log(self):
        return os.path.join(self.out_dir, LOSS_LOG)

    def checkpoint_path(self, step):
        return os.path.join(self.out_dir, CHECKPOINT_DIR, 'step_{:07d}.h5'.format(step))

    def latest_checkpoint(self):
        fnames = glob.glob(os.path.join(self.out_dir, CHECKPOINT_DIR, 'step_*.h5'))
        if not fnames:
            return None
        return max(fnames, key=lambda f: int(re.search(r'step_(\d+)\.h5$', f).group(1)))

    def resume(self, fname=None):
        """
        Restore weights, optimizer state and step from a checkpoint

        The loss log is cut back to the restored step.

        :raises pyvpip.checkpoint.CheckpointError: Checkpoint saved with another ModelConfig
        """
        fname = fname or self.latest_checkpoint()
        if fname is None:
            return False
        model, ckpt = load_model(fname, self.model.config)
        self.model.load_state_dict(model.state_dict())
        if ckpt.optimizer is not None:
            self.optimizer.load_state_dict(ckpt.optimizer)
        self.step = ckpt.step
        lines = []
        if os.path.isfile(self.loss_log):
            with open(self.loss_log) as f:
                lines = f.readlines()[:self.step]
        with open(self.loss_log, 'w') as f:
            f.writelines(lines)
        self.log.Trainlog.info('Resumed from {} at step {}'.format(fname, self.step))
        return True

    def save(self, fname=None):
        fname = fname or self.checkpoint_path(self.step)
        save_checkpoint(fname, self.model, self.step, self.optimizer,
                        meta={'train': self.config.to_dict(), 'corpus_seed': self.manifest.corpus_seed})
        return fname

    def _batches(self, stop):
        dataset = StepBatches(self.manifest, self.config, self.step, stop)
        if self.config.workers > 0:
            return DataLoader(dataset, batch_size=None, shuffle=False, num_workers=self.config.workers,
                              prefetch_factor=2, persistent_workers=False)
        return (dataset[i] for i in range(len(dataset)))

    def run(self, steps=None):
        """
        Train up to ``steps`` (``total_steps`` by default)

        :return: Path of the last checkpoint
        :rtype: str
        """
        stop = self.total_steps if steps is None else int(steps)
        os.makedirs(os.path.join(self.out_dir, CHECKPOINT_DIR), exist_ok=True)
        last = None
        if self.step >= stop:
            self.log.Trainlog.info('Nothing to do: already at step {}'.format(self.step))
            return self.latest_checkpoint()
        self.log.Trainlog.info('Training steps {}..{} with batch size {}'.format(
            self.step + 1, stop, self.config.batch_size))
        with open(self.loss_log, 'a') as flog:
            bar = tqdm(self._batches(stop), total=stop - self.step, desc='Training')
            for batch in bar:
                loss = train_step(self.model, batch, self.optimizer)
                self.step += 1
                flog.write('step={} tasks={} loss={:.8e}\n'.format(self.step, task_mix(batch['task_ids']), loss))
                flog.flush()
                bar.set_postfix(loss='{:.4f}'.format(loss))
                if self.step % self.config.checkpoint_interval == 0 or self.step == stop:
                    last = self.save()
        self.log.Trainlog.info('Finished at step {}, last checkpoint {}'.format(self.step, last))
        return last
