"""Task roster, severity buckets and sample pairing

Each task maps a clean base image to an ``(input, target)`` pair. The
side that carries the clean image depends on the task direction:

============== ======================================= =====================
direction      categories                              pair
============== ======================================= =====================
``degrade``    restoration, enhancement (correction)   (op(base), base)
``transform``  enhancement (ICE), stylization, feature (base, op(base))
============== ======================================= =====================
"""
from dataclasses import dataclass, field
import numpy as np
from . import ops
from .utils.common import check_image, default_ksize, make_rng

CATEGORIES = ('restoration', 'enhancement', 'stylization', 'feature_extraction')
DIRECTIONS = ('degrade', 'transform')


@dataclass(frozen=True)
class TaskSpec:
    """A task with concrete parameters drawn from one severity bucket
    """
    task_id: str
    category: str
    params: dict = field(default_factory=dict)
    severity_bucket: int = 0


@dataclass
class SamplePair:
    input: np.ndarray
    target: np.ndarray
    task: TaskSpec
    seed: int
    base_id: str = ''


@dataclass
class PromptPair:
    source: np.ndarray
    target: np.ndarray
    task: TaskSpec
    base_id: str = ''


class TaskDefinition():
    """Operator, I/O direction and severity buckets of one task

    :param task_id: Task name
    :type task_id: str
    :param category: One of ``CATEGORIES``
    :type category: str
    :param direction: ``degrade`` or ``transform``
    :type direction: str
    :param operator: ``operator(img, params, seed) -> img``
    :type operator: callable
    :param buckets: One dict per severity bucket, mapping a parameter to a
                    closed interval ``[lo, hi]`` or a fixed value
    :type buckets: list
    :param int_params: Parameters drawn as integers
    :type int_params: tuple, optional
    :param derive: Adds parameters computed from the drawn ones
    :type derive: callable, optional
    """
    def __init__(self, task_id, category, direction, operator, buckets,
                 int_params=(), derive=None) -> None:
        if category not in CATEGORIES:
            raise ValueError('Unknown category {} of task {}'.format(category, task_id))
        if direction not in DIRECTIONS:
            raise ValueError('Unknown direction {} of task {}'.format(direction, task_id))
        self.task_id = task_id
        self.category = category
        self.direction = direction
        self.operator = operator
        self.int_params = tuple(int_params)
        self.derive = derive
        self.buckets = [dict(b) for b in buckets]
        self._check_buckets(self.buckets)

    def __repr__(self):
        return 'TaskDefinition({}, {}, {} buckets)'.format(self.task_id, self.category, len(self.buckets))

    def __reduce__(self):
        # operators are looked up again by name in worker processes
        return (_rebuild_definition, (self.task_id, self.buckets))

    def _check_buckets(self, buckets):
        if not buckets:
            raise ValueError('Task {} needs at least one severity bucket'.format(self.task_id))
        keys = set(buckets[0].keys())
        for bucket in buckets:
            if set(bucket.keys()) != keys:
                raise ValueError('Buckets of task {} should declare the same parameters'.format(self.task_id))
            for key, value in bucket.items():
                if isinstance(value, (list, tuple)) and (len(value) != 2 or value[0] > value[1]):
                    raise ValueError('Bucket interval of {}.{} should be [lo, hi], got {}'.format(
                        self.task_id, key, value))

    @property
    def required_params(self):
        params = self.draw_params(0, 0)
        return tuple(sorted(params.keys()))

    def with_buckets(self, buckets):
        """Copy of this definition with other severity buckets
        """
        return TaskDefinition(self.task_id, self.category, self.direction, self.operator,
                              buckets, self.int_params, self.derive)

    def draw_params(self, bucket, seed):
        """Draw concrete parameters inside ``bucket``, deterministic in ``seed``
        """
        if not 0 <= bucket < len(self.buckets):
            raise ValueError('Task {} has no severity bucket {}'.format(self.task_id, bucket))
        rng = make_rng(seed, 1)
        params = {}
        for key in sorted(self.buckets[bucket]):
            value = self.buckets[bucket][key]
            if isinstance(value, (list, tuple)):
                lo, hi = value
                if key in self.int_params:
                    params[key] = int(rng.integers(int(lo), int(hi) + 1))
                else:
                    params[key] = float(rng.uniform(lo, hi))
            else:
                params[key] = int(value) if key in self.int_params else value
        if self.derive is not None:
            params.update(self.derive(params))
        return params

    def spec(self, bucket, seed):
        return TaskSpec(self.task_id, self.category, self.draw_params(bucket, seed), bucket)

    def to_dict(self):
        return {
            'task_id': self.task_id,
            'category': self.category,
            'buckets': [{k: list(v) if isinstance(v, (list, tuple)) else v for k, v in b.items()}
                        for b in self.buckets],
        }


def _rebuild_definition(task_id, buckets):
    return get_task(task_id).with_buckets(buckets)


def _blur_ksize(params):
    return {'ksize': default_ksize(params['sigma'])}


def _low_light_noise(img, p, seed):
    dark = ops.adjust_tone(img, 'gamma', p['gamma'])
    return ops.apply_gaussian_noise(dark, p['sigma'], seed)


TASKS = {}


def register(definition):
    TASKS[definition.task_id] = definition
    return definition


# restoration
register(TaskDefinition(
    'gaussian_noise', 'restoration', 'degrade',
    lambda img, p, seed: ops.apply_gaussian_noise(img, p['sigma'], seed),
    [{'sigma': [0.02, 0.05]}, {'sigma': [0.05, 0.10]}, {'sigma': [0.10, 0.20]}]))
register(TaskDefinition(
    'poisson_noise', 'restoration', 'degrade',
    lambda img, p, seed: ops.apply_poisson_noise(img, p['peak'], seed),
    [{'peak': [200., 500.]}, {'peak': [50., 200.]}, {'peak': [10., 50.]}]))
register(TaskDefinition(
    'salt_pepper', 'restoration', 'degrade',
    lambda img, p, seed: ops.apply_salt_pepper(img, p['p'], seed),
    [{'p': [0.01, 0.03]}, {'p': [0.03, 0.07]}, {'p': [0.07, 0.15]}]))
register(TaskDefinition(
    'gaussian_blur', 'restoration', 'degrade',
    lambda img, p, seed: ops.apply_gaussian_blur(img, p['sigma'], p['ksize']),
    [{'sigma': [0.5, 1.0]}, {'sigma': [1.0, 2.0]}, {'sigma': [2.0, 3.0]}],
    derive=_blur_ksize))
register(TaskDefinition(
    'jpeg', 'restoration', 'degrade',
    lambda img, p, seed: ops.apply_jpeg_like(img, p['quality']),
    [{'quality': [60, 90]}, {'quality': [30, 59]}, {'quality': [10, 29]}],
    int_params=('quality',)))
register(TaskDefinition(
    'ringing', 'restoration', 'degrade',
    lambda img, p, seed: ops.apply_ringing(img, p['cutoff']),
    [{'cutoff': [0.5, 0.7]}, {'cutoff': [0.3, 0.5]}, {'cutoff': [0.15, 0.3]}]))
register(TaskDefinition(
    'rl_artifact', 'restoration', 'degrade',
    lambda img, p, seed: ops.apply_rl_artifact(img, p['psf_sigma'], p['iters']),
    [{'psf_sigma': [1.0, 1.5], 'iters': [10, 20]},
     {'psf_sigma': [1.5, 2.0], 'iters': [20, 40]},
     {'psf_sigma': [2.0, 2.5], 'iters': [40, 80]}],
    int_params=('iters',)))
register(TaskDefinition(
    'pixelation', 'restoration', 'degrade',
    lambda img, p, seed: ops.apply_pixelation(img, p['factor']),
    [{'factor': [2, 3]}, {'factor': [4, 5]}, {'factor': [6, 8]}],
    int_params=('factor',)))
register(TaskDefinition(
    'inpainting', 'restoration', 'degrade',
    lambda img, p, seed: ops.apply_inpaint_mask(img, p['coverage'], seed)[0],
    [{'coverage': [0.05, 0.10]}, {'coverage': [0.10, 0.20]}, {'coverage': [0.20, 0.35]}]))
register(TaskDefinition(
    'rain', 'restoration', 'degrade',
    lambda img, p, seed: ops.apply_rain_streaks(img, p['density'], p['angle'], seed),
    [{'density': [0.5, 1.5], 'angle': [-20., 20.]},
     {'density': [1.5, 3.0], 'angle': [-20., 20.]},
     {'density': [3.0, 5.0], 'angle': [-20., 20.]}]))
register(TaskDefinition(
    'sr_x2', 'restoration', 'degrade',
    lambda img, p, seed: ops.apply_downsample(img, p['scale']),
    [{'scale': 2}], int_params=('scale',)))
register(TaskDefinition(
    'sr_x4', 'restoration', 'degrade',
    lambda img, p, seed: ops.apply_downsample(img, p['scale']),
    [{'scale': 4}], int_params=('scale',)))
register(TaskDefinition(
    'low_light_noise', 'restoration', 'degrade', _low_light_noise,
    [{'gamma': [1.5, 2.0], 'sigma': [0.02, 0.05]},
     {'gamma': [2.0, 2.5], 'sigma': [0.05, 0.10]},
     {'gamma': [2.5, 3.0], 'sigma': [0.10, 0.15]}]))

# enhancement
register(TaskDefinition(
    'low_light', 'enhancement', 'degrade',
    lambda img, p, seed: ops.adjust_tone(img, 'gamma', p['gamma']),
    [{'gamma': [1.5, 2.0]}, {'gamma': [2.0, 2.5]}, {'gamma': [2.5, 3.0]}]))
register(TaskDefinition(
    'brightness_correction', 'enhancement', 'degrade',
    lambda img, p, seed: ops.adjust_tone(img, 'brightness', p['factor']),
    [{'factor': [0.70, 0.85]}, {'factor': [0.50, 0.70]}, {'factor': [0.30, 0.50]}]))
register(TaskDefinition(
    'contrast_correction', 'enhancement', 'degrade',
    lambda img, p, seed: ops.adjust_tone(img, 'contrast', p['factor']),
    [{'factor': [0.70, 0.85]}, {'factor': [0.50, 0.70]}, {'factor': [0.30, 0.50]}]))
register(TaskDefinition(
    'saturation_correction', 'enhancement', 'degrade',
    lambda img, p, seed: ops.adjust_tone(img, 'saturation', p['factor']),
    [{'factor': [0.60, 0.80]}, {'factor': [0.30, 0.60]}, {'factor': [0.05, 0.30]}]))
register(TaskDefinition(
    'hist_equalize', 'enhancement', 'transform',
    lambda img, p, seed: ops.hist_equalize(img),
    [{}]))

# stylization
register(TaskDefinition(
    'pencil', 'stylization', 'transform',
    lambda img, p, seed: ops.stylize_pencil(img, p['blur_sigma']),
    [{'blur_sigma': [2.0, 3.0]}, {'blur_sigma': [3.0, 5.0]}, {'blur_sigma': [5.0, 8.0]}]))
register(TaskDefinition(
    'cartoon', 'stylization', 'transform',
    lambda img, p, seed: ops.stylize_cartoon(img, p['levels'], p['smooth_iters']),
    [{'levels': [7, 8], 'smooth_iters': [1, 1]},
     {'levels': [5, 6], 'smooth_iters': [2, 2]},
     {'levels': [3, 4], 'smooth_iters': [3, 3]}],
    int_params=('levels', 'smooth_iters')))

# feature extraction
register(TaskDefinition(
    'canny', 'feature_extraction', 'transform',
    lambda img, p, seed: ops.edge_canny(img, p['low'], p['high']),
    [{'low': 0.05, 'high': 0.1}]))
register(TaskDefinition(
    'laplacian', 'feature_extraction', 'transform',
    lambda img, p, seed: ops.edge_laplacian(img),
    [{}]))


def get_task(task_id):
    """Registered definition of ``task_id``
    """
    if task_id not in TASKS:
        raise ValueError('Task {} is not implemented, available tasks: {}'.format(
            task_id, ', '.join(sorted(TASKS))))
    return TASKS[task_id]


def check_task_spec(task):
    definition = get_task(task.task_id)
    if task.category != definition.category:
        raise ValueError('Task {} belongs to category {}, got {}'.format(
            task.task_id, definition.category, task.category))
    missing = set(definition.required_params) - set(task.params)
    if missing:
        raise ValueError('Task {} is missing parameters: {}'.format(task.task_id, ', '.join(sorted(missing))))
    extra = set(task.params) - set(definition.required_params)
    if extra:
        raise ValueError('Task {} does not take parameters: {}'.format(task.task_id, ', '.join(sorted(extra))))
    return definition


def make_sample(task, base, seed, base_id=''):
    """Build the ``(input, target)`` pair of ``task`` from a clean image

    :param task: Task with concrete parameters
    :type task: TaskSpec
    :param base: Clean base image
    :type base: numpy.ndarray
    :param seed: Seed of the seeded operators
    :type seed: int
    :param base_id: Identifier of the base image
    :type base_id: str, optional
    :rtype: SamplePair
    """
    definition = check_task_spec(task)
    base = check_image(base, 'base')
    out = definition.operator(base, task.params, seed)
    if definition.direction == 'degrade':
        return SamplePair(input=out, target=base, task=task, seed=seed, base_id=base_id)
    return SamplePair(input=base, target=out, task=task, seed=seed, base_id=base_id)


class TaskRoster():
    """Tasks, sample counts and severity buckets of a corpus

    :param entries: List of dicts with ``task_id``, ``count`` and optional ``buckets``
    :type entries: list
    """
    def __init__(self, entries) -> None:
        self.definitions = {}
        self.counts = {}
        for item in entries:
            task_id = item['task_id']
            if task_id in self.definitions:
                raise ValueError('Duplicate task {} in roster'.format(task_id))
            definition = get_task(task_id)
            if item.get('buckets'):
                definition = definition.with_buckets(item['buckets'])
            count = int(item.get('count', 0))
            if count < 0:
                raise ValueError('count of task {} should be non-negative'.format(task_id))
            self.definitions[task_id] = definition
            self.counts[task_id] = count

    def __repr__(self):
        return 'TaskRoster({})'.format(', '.join('{}x{}'.format(k, v) for k, v in self.counts.items()))

    def __contains__(self, task_id):
        return task_id in self.definitions

    @property
    def task_ids(self):
        return sorted(self.definitions)

    def __getitem__(self, task_id):
        if task_id not in self.definitions:
            raise ValueError('Task {} is not in the roster'.format(task_id))
        return self.definitions[task_id]

    def bucket_of(self, task_id, index):
        """Severity bucket of sample ``index``; buckets are filled round-robin
        """
        return index % len(self[task_id].buckets)

    def spec(self, task_id, bucket, seed):
        return self[task_id].spec(bucket, seed)

    def to_list(self):
        out = []
        for task_id in self.task_ids:
            item = self.definitions[task_id].to_dict()
            item['count'] = self.counts[task_id]
            out.append(item)
        return out

    @classmethod
    def from_list(cls, items):
        return cls([{'task_id': it['task_id'], 'count': it.get('count', 0), 'buckets': it.get('buckets')}
                    for it in items])
