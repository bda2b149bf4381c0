import os
import json
import math
from dataclasses import dataclass, field
import numpy as np
import pandas as pd
from tqdm import tqdm
from tqdm.contrib.concurrent import thread_map
from .corpus import InsufficientPromptPool, select_prompt_entry
from .metrics import psnr, ssim, mae
from .setuplog import SetupLog
from .tasks import PromptPair, get_task
from .utils.common import atomic_path, make_rng, stable_seed
from .utils.image_io import make_grid, write_image

REPORT_VERSION = 'vpip-report/1'
STABILITY_POOL_SIZE = 20
GRID_PANELS = 5
RECORD_COLUMNS = ['task_id', 'category', 'metrics', 'n', 'psnr_mean', 'ssim_mean', 'mae_mean', 'prompt_std']

# metrics reported as primary per category
CATEGORY_METRICS = {
    'restoration': 'psnr,ssim',
    'enhancement': 'psnr,ssim',
    'stylization': 'psnr,ssim,mae',
    'feature_extraction': 'mae',
}


def _encode_float(value):
    if isinstance(value, (float, np.floating)) and not math.isfinite(value):
        return 'nan' if math.isnan(value) else ('inf' if value > 0 else '-inf')
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def _decode_float(value):
    if isinstance(value, str) and value in ('inf', '-inf', 'nan'):
        return float(value)
    return value


def _encode(obj):
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    return _encode_float(obj)


def _decode(obj):
    if isinstance(obj, dict):
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return _decode_float(obj)


def population_std(values):
    """
    Population standard deviation of the finite values

    The ``inf`` PSNR sentinel of exact outputs is left out, so the result is
    always finite. It is exactly 0 for identical values.
    """
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    if values.size == 0 or np.all(values == values[0]):
        return 0.
    return float(np.std(values))


def _mean(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size and np.all(values == values[0]):
        return float(values[0])
    return float(np.mean(values))


@dataclass
class EvalReport:
    """
    Per-task metric aggregates

    ``records`` has one row per task:

    ================ =================================================
    Column           Description
    ================ =================================================
    ``task_id``      Task name
    ``category``     Task category
    ``metrics``      Primary metrics of the category
    ``n``            Number of corpus samples of the task
    ``psnr_mean``    Mean PSNR (dB) over samples and prompt passes
    ``ssim_mean``    Mean SSIM
    ``mae_mean``     Mean MAE on the 0-255 scale
    ``prompt_std``   Population std of the per-pass mean PSNR
    ================ =================================================
    """
    records: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=RECORD_COLUMNS))
    config: dict = field(default_factory=dict)
    checkpoint: str = ''
    stability: list = field(default_factory=list)
    mismatch: list = field(default_factory=list)

    def __repr__(self):
        return 'PyVPIP EvalReport Object: checkpoint={}, tasks={}'.format(self.checkpoint, self.records.shape[0])

    def to_dict(self):
        return _encode({
            'version': REPORT_VERSION,
            'checkpoint': self.checkpoint,
            'config': self.config,
            'records': [{col: row[col] for col in RECORD_COLUMNS} for _, row in self.records.iterrows()],
            'stability': self.stability,
            'mismatch': self.mismatch,
        })

    @classmethod
    def from_dict(cls, doc):
        if doc.get('version') != REPORT_VERSION:
            raise ValueError('Unsupported report version {}, expected {}'.format(doc.get('version'), REPORT_VERSION))
        doc = _decode(doc)
        records = pd.DataFrame(doc['records'], columns=RECORD_COLUMNS)
        return cls(records.astype({'n': np.int64}), doc.get('config', {}), doc.get('checkpoint', ''),
                   doc.get('stability', []), doc.get('mismatch', []))

    def write_json(self, fname):
        with atomic_path(fname) as tmp:
            with open(tmp, 'w') as f:
                json.dump(self.to_dict(), f, indent=1, sort_keys=True)
                f.write('\n')

    @classmethod
    def read_json(cls, fname):
        with open(fname) as f:
            return cls.from_dict(json.load(f))

    def write_csv(self, fname):
        with atomic_path(fname) as tmp:
            self.records.to_csv(tmp, index=False, float_format='%.10g')

    def write(self, prefix):
        """Write ``<prefix>.json`` and ``<prefix>.csv`` side by side"""
        self.write_json(prefix + '.json')
        self.write_csv(prefix + '.csv')
        return prefix + '.json', prefix + '.csv'


def score(output, target):
    return {'psnr': psnr(output, target), 'ssim': ssim(output, target), 'mae': mae(output, target)}


def _prompt_for(manifest, task, base_id, seed):
    """Fixed prompt of ``(task, bucket, pass)``, redrawn only when it shares the query's base image"""
    row = select_prompt_entry(manifest, task, None, seed)
    if row['base_id'] == base_id:
        row = select_prompt_entry(manifest, task, base_id, seed)
    pair = manifest.load_entry(row)
    return PromptPair(pair.input, pair.target, pair.task, pair.base_id)


def evaluate_corpus(predictor, manifest, prompts_per_task=1, seed=0, tasks=None, workers=1,
                    grid_dir=None, grid_rows=4):
    """
    Score a predictor on every entry of a corpus

    Each pass fixes one severity-matched prompt per task and bucket; metrics
    are averaged over samples and passes, and ``prompt_std`` is the spread
    of the per-pass mean PSNR.

    :param predictor: Callable ``(image, prompt, target=None) -> output``
    :type predictor: callable
    :param manifest: Evaluation corpus
    :type manifest: pyvpip.corpus.CorpusManifest
    :param prompts_per_task: Number of passes with different prompts
    :type prompts_per_task: int
    :param tasks: Restrict to these task ids, optional
    :type tasks: list
    :param grid_dir: Write one PNG grid per task here, optional
    :type grid_dir: str
    :rtype: EvalReport
    """
    log = SetupLog()
    if prompts_per_task < 1:
        raise ValueError('prompts_per_task should be at least 1, got {}'.format(prompts_per_task))
    task_ids = sorted(manifest.entries['task_id'].unique()) if tasks is None else list(tasks)
    rows = []
    for task_id in task_ids:
        entries = manifest.select(task_id)
        if entries.empty:
            raise InsufficientPromptPool('No corpus entries of task {}'.format(task_id))
        per_pass = []
        per_sample = []
        grid = []
        for p in range(prompts_per_task):
            def _run(row):
                sample = manifest.load_entry(row)
                prompt = _prompt_for(manifest, sample.task, sample.base_id,
                                     stable_seed(seed, 'eval', task_id, int(row['severity_bucket']), p))
                output = predictor(sample.input, prompt, sample.target)
                return score(output, sample.target), (sample, prompt, output)

            results = thread_map(_run, [row for _, row in entries.iterrows()], max_workers=max(1, int(workers)),
                                 desc='Evaluating {} pass {}'.format(task_id, p + 1), leave=False)
            scores = [s for s, _ in results]
            per_sample += scores
            per_pass.append(_mean([s['psnr'] for s in scores]))
            if p == 0 and grid_dir is not None:
                grid = [[s.input, pr.source, pr.target, out, s.target] for _, (s, pr, out) in results[:grid_rows]]
        category = get_task(task_id).category
        rows.append({
            'task_id': task_id,
            'category': category,
            'metrics': CATEGORY_METRICS[category],
            'n': int(entries.shape[0]),
            'psnr_mean': _mean([s['psnr'] for s in per_sample]),
            'ssim_mean': _mean([s['ssim'] for s in per_sample]),
            'mae_mean': _mean([s['mae'] for s in per_sample]),
            'prompt_std': population_std(per_pass),
        })
        if grid:
            write_image(os.path.join(grid_dir, '{}.png'.format(task_id)), make_grid(grid))
        log.Evallog.info('{}: PSNR {:.3f} dB, SSIM {:.4f}, MAE {:.3f} over {} samples'.format(
            task_id, rows[-1]['psnr_mean'], rows[-1]['ssim_mean'], rows[-1]['mae_mean'], rows[-1]['n']))
    return EvalReport(records=pd.DataFrame(rows, columns=RECORD_COLUMNS))


def build_prompt_pool(manifest, task, n=STABILITY_POOL_SIZE, seed=0, exclude_base_ids=()):
    """
    ``n`` distinct severity-matched prompt pairs of ``task``

    :raises pyvpip.corpus.InsufficientPromptPool: Fewer than ``n`` eligible entries
    """
    pool = manifest.select(task.task_id, task.severity_bucket)
    pool = pool[~pool['base_id'].isin(list(exclude_base_ids))]
    if pool.shape[0] < n:
        raise InsufficientPromptPool('insufficient prompt pool: {} needs {} prompts of bucket {}, found {}'.format(
            task.task_id, n, task.severity_bucket, pool.shape[0]))
    picks = np.sort(make_rng(seed, 6).choice(pool.shape[0], size=n, replace=False))
    prompts = []
    for i in picks:
        pair = manifest.load_entry(pool.iloc[int(i)])
        prompts.append(PromptPair(pair.input, pair.target, pair.task, pair.base_id))
    return prompts


def prompt_stability(predictor, task, eval_set, prompt_pool):
    """
    Spread of performance across 20 prompts

    For each prompt the mean PSNR over ``eval_set`` is computed with that
    prompt fixed; the mean and population std of these 20 values are
    returned.

    :param task: Task the prompts and samples belong to
    :type task: pyvpip.tasks.TaskSpec
    :param eval_set: Samples of the task
    :type eval_set: list
    :param prompt_pool: Exactly 20 prompt pairs of the same task and bucket
    :type prompt_pool: list
    :return: ``(mean, std)`` in dB
    :rtype: tuple
    """
    if len(prompt_pool) != STABILITY_POOL_SIZE:
        raise ValueError('prompt pool should hold exactly {} prompts, got {}'.format(
            STABILITY_POOL_SIZE, len(prompt_pool)))
    for prompt in prompt_pool:
        if prompt.task.task_id != task.task_id or prompt.task.severity_bucket != task.severity_bucket:
            raise ValueError('prompt of {} bucket {} does not match task {} bucket {}'.format(
                prompt.task.task_id, prompt.task.severity_bucket, task.task_id, task.severity_bucket))
    if not eval_set:
        raise ValueError('eval_set is empty')
    means = []
    for prompt in tqdm(prompt_pool, desc='Prompt stability {}'.format(task.task_id), leave=False):
        means.append(_mean([psnr(predictor(s.input, prompt, s.target), s.target) for s in eval_set]))
    return _mean(means), population_std(means)


def mismatch_test(predictor, inputs, wrong_task_prompt):
    """
    PSNR between output and input under a prompt of an unrelated task

    High values mean the predictor leaves the inputs alone.

    :param inputs: Clean or differently degraded images
    :type inputs: list
    :param wrong_task_prompt: Prompt pair of a task unrelated to the inputs
    :type wrong_task_prompt: pyvpip.tasks.PromptPair
    :rtype: list
    """
    return [psnr(predictor(img, wrong_task_prompt), img) for img in inputs]


def summarize_psnr(values):
    values = np.asarray(values, dtype=np.float64)
    return {'n': int(values.size), 'psnr_mean': _mean(values), 'psnr_min': float(values.min())}
