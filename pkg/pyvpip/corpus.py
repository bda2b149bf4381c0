import os
import json
import shutil
import filecmp
import tempfile
import numpy as np
import pandas as pd
from PIL import UnidentifiedImageError
from scipy import ndimage
from tqdm.contrib.concurrent import thread_map
from .setuplog import SetupLog
from .tasks import TaskRoster, PromptPair, SamplePair, make_sample
from .utils.common import atomic_path, check_image, make_rng, stable_seed
from .utils.image_io import read_image, write_image, quantize8

MANIFEST_VERSION = 'vpip-corpus/1'
MANIFEST_NAME = 'manifest.json'
IMAGE_EXTENSIONS = ('.png', '.jpg', '.jpeg', '.bmp', '.tif', '.tiff', '.webp')
ENTRY_COLUMNS = ['index', 'input', 'target', 'task_id', 'severity_bucket', 'seed', 'base_id']


class InsufficientPromptPool(ValueError):
    """No corpus entry can serve as a severity-matched prompt"""


class CorpusManifest():
    """
    Index of a synthesized corpus

    :param entries: One row per sample pair
    :type entries: pandas.DataFrame
    :param corpus_seed: Seed the per-sample seeds derive from
    :type corpus_seed: int
    :param image_size: Side of the square images in pixels
    :type image_size: int
    :param roster: Tasks, counts and severity buckets
    :type roster: pyvpip.tasks.TaskRoster
    :param skipped: Number of unreadable clean images skipped during synthesis
    :type skipped: int, optional
    :param root: Directory the image paths are relative to
    :type root: str, optional
    """
    def __init__(self, entries, corpus_seed, image_size, roster, skipped=0, root='.') -> None:
        self.corpus_seed = int(corpus_seed)
        self.image_size = int(image_size)
        self.roster = roster
        self.skipped = int(skipped)
        self.root = root
        self.entries = entries
        # set by synthesize_corpus when the corpus on disk was already identical
        self.unchanged = False
        self.log = SetupLog()

    def __repr__(self):
        return "PyVPIP CorpusManifest Object: \n\
                root={}, \n\
                corpus_seed={}, \n\
                image_size={}, \n\
                number of tasks={}, \n\
                number of entries={}".format(
            self.root, self.corpus_seed, self.image_size, len(self.roster.task_ids), len(self))

    def __len__(self):
        return self.entries.shape[0]

    @property
    def entries(self):
        """
        Sample pairs of the corpus

        ===================== ================================================
        Column                Description
        ===================== ================================================
        ``index``             Index of the sample within its task
        ``input``             Path of the input image relative to ``root``
        ``target``            Path of the target image relative to ``root``
        ``task_id``           Task name
        ``severity_bucket``   Severity bucket of the drawn parameters
        ``seed``              Per-sample seed
        ``base_id``           Clean image the pair was made from
        ===================== ================================================

        :rtype: pandas.DataFrame
        """
        return self._entries

    @entries.setter
    def entries(self, value):
        if not isinstance(value, pd.DataFrame):
            raise TypeError('entries should be in DataFrame')
        if value.empty:
            value = pd.DataFrame(columns=ENTRY_COLUMNS)
        missing = set(ENTRY_COLUMNS) - set(value.columns)
        if missing:
            raise ValueError('entries are missing columns: {}'.format(', '.join(sorted(missing))))
        value = value[ENTRY_COLUMNS].astype({
            'index': np.int64,
            'input': str,
            'target': str,
            'task_id': str,
            'severity_bucket': np.int64,
            'seed': np.int64,
            'base_id': str,
        })
        self._entries = value.sort_values(['task_id', 'index'], kind='mergesort').reset_index(drop=True)

    def counts(self):
        """Number of entries per task"""
        return self.entries.groupby('task_id').size().to_dict()

    def to_dict(self):
        return {
            'version': MANIFEST_VERSION,
            'corpus_seed': self.corpus_seed,
            'image_size': self.image_size,
            'skipped': self.skipped,
            'roster': self.roster.to_list(),
            'entries': [
                {col: (int(row[col]) if col in ('index', 'severity_bucket', 'seed') else str(row[col]))
                 for col in ENTRY_COLUMNS}
                for _, row in self.entries.iterrows()
            ],
        }

    @classmethod
    def from_dict(cls, doc, root='.'):
        if doc.get('version') != MANIFEST_VERSION:
            raise ValueError('Unsupported manifest version {}, expected {}'.format(
                doc.get('version'), MANIFEST_VERSION))
        entries = pd.DataFrame(doc['entries'], columns=ENTRY_COLUMNS)
        return cls(entries, doc['corpus_seed'], doc['image_size'],
                   TaskRoster.from_list(doc['roster']), doc.get('skipped', 0), root)

    @classmethod
    def read(cls, fname, check_files=True):
        """Read a manifest and resolve image paths against its directory

        :param fname: Path to ``manifest.json`` or to the corpus directory
        :type fname: str
        :param check_files: Raise if a referenced image is missing, defaults to True
        :type check_files: bool, optional
        """
        if os.path.isdir(fname):
            fname = os.path.join(fname, MANIFEST_NAME)
        if not os.path.isfile(fname):
            raise FileNotFoundError('Manifest {} not found'.format(fname))
        with open(fname) as f:
            doc = json.load(f)
        manifest = cls.from_dict(doc, root=os.path.dirname(os.path.abspath(fname)))
        if check_files:
            manifest.check_files()
        return manifest

    def write(self, fname):
        with atomic_path(fname) as tmp:
            with open(tmp, 'w') as f:
                json.dump(self.to_dict(), f, indent=1, sort_keys=True)
                f.write('\n')

    def check_files(self):
        for col in ('input', 'target'):
            for path in self.entries[col]:
                if not os.path.isfile(os.path.join(self.root, path)):
                    raise FileNotFoundError('Corpus file {} referenced by the manifest is missing'.format(path))

    def select(self, task_id, severity_bucket=None):
        mask = self.entries['task_id'] == task_id
        if severity_bucket is not None:
            mask &= self.entries['severity_bucket'] == severity_bucket
        return self.entries[mask]

    def task_of(self, row):
        """Concrete TaskSpec of an entry, redrawn from the roster"""
        return self.roster.spec(row['task_id'], int(row['severity_bucket']), int(row['seed']))

    def load_entry(self, row):
        """
        Load the image pair of one entry

        :param row: A row of ``entries``
        :type row: pandas.Series
        :rtype: pyvpip.tasks.SamplePair
        """
        return SamplePair(
            input=read_image(os.path.join(self.root, row['input'])),
            target=read_image(os.path.join(self.root, row['target'])),
            task=self.task_of(row),
            seed=int(row['seed']),
            base_id=row['base_id'],
        )


def select_prompt_entry(manifest, task, exclude_base_id, seed):
    """Pick a severity-matched prompt entry without loading its images

    :raises InsufficientPromptPool: No entry matches
    :rtype: pandas.Series
    """
    pool = manifest.select(task.task_id, task.severity_bucket)
    pool = pool[pool['base_id'] != exclude_base_id]
    if pool.empty:
        raise InsufficientPromptPool(
            'insufficient prompt pool: no entry of task {} bucket {} with base_id other than {}'.format(
                task.task_id, task.severity_bucket, exclude_base_id))
    rng = make_rng(seed, 2)
    return pool.iloc[int(rng.integers(pool.shape[0]))]


def sample_prompt_pair(manifest, task, exclude_base_id, seed):
    """
    Draw a prompt pair of the same task and severity bucket as a query

    :param manifest: Corpus to draw from
    :type manifest: CorpusManifest
    :param task: Task of the query sample
    :type task: pyvpip.tasks.TaskSpec
    :param exclude_base_id: base_id of the query, never reused for its prompt
    :type exclude_base_id: str
    :param seed: Seed of the uniform draw
    :type seed: int
    :rtype: pyvpip.tasks.PromptPair
    """
    row = select_prompt_entry(manifest, task, exclude_base_id, seed)
    pair = manifest.load_entry(row)
    return PromptPair(source=pair.input, target=pair.target, task=pair.task, base_id=pair.base_id)


def list_images(clean_image_dir):
    if not os.path.isdir(clean_image_dir):
        raise FileNotFoundError('Clean image directory {} not found'.format(clean_image_dir))
    fnames = sorted(f for f in os.listdir(clean_image_dir)
                    if f.lower().endswith(IMAGE_EXTENSIONS) and not f.startswith('.'))
    if not fnames:
        raise ValueError('Clean image directory {} contains no images'.format(clean_image_dir))
    return [os.path.join(clean_image_dir, f) for f in fnames]


def load_bases(clean_image_dir, image_size):
    """Read, center-crop and resize the clean images

    :return: base_ids, images and the number of unreadable files
    """
    log = SetupLog()
    base_ids, bases, skipped = [], [], 0
    for fname in list_images(clean_image_dir):
        try:
            img = read_image(fname, image_size)
        except (UnidentifiedImageError, OSError) as e:
            log.Synthlog.warning('Skip unreadable image {}: {}'.format(fname, e))
            skipped += 1
            continue
        base_ids.append(os.path.splitext(os.path.basename(fname))[0])
        bases.append(img)
    if not bases:
        raise ValueError('No readable image in {}'.format(clean_image_dir))
    return base_ids, bases, skipped


def _same_tree(a, b):
    """True if directories ``a`` and ``b`` hold the same files with identical bytes"""
    def _walk(root):
        out = []
        for dirpath, _, files in os.walk(root):
            out += [os.path.relpath(os.path.join(dirpath, f), root) for f in files]
        return sorted(out)
    files = _walk(a)
    if files != _walk(b):
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    return not mismatch and not errors


def synthesize_corpus(config, clean_image_dir, out_dir, workers=1):
    """
    Synthesize an on-disk corpus from a directory of clean images

    Every sample seed derives from ``(corpus_seed, task_id, index)``, so
    extending a roster leaves existing samples untouched. The corpus is
    built in a temporary directory and swapped into ``out_dir`` only when
    complete.

    :param config: Dict with ``corpus_seed``, ``image_size`` and ``roster``
                   (list of ``{task_id, count, buckets}``)
    :type config: dict
    :param clean_image_dir: Directory of clean images
    :type clean_image_dir: str
    :param out_dir: Corpus directory
    :type out_dir: str
    :param workers: Number of synthesis threads, defaults to 1
    :type workers: int, optional
    :rtype: CorpusManifest
    """
    log = SetupLog()
    corpus_seed = int(config['corpus_seed'])
    image_size = int(config['image_size'])
    roster = config['roster'] if isinstance(config['roster'], TaskRoster) else TaskRoster(config['roster'])
    base_ids, bases, skipped = load_bases(clean_image_dir, image_size)
    log.Synthlog.info('Loaded {} clean images ({} skipped) from {}'.format(len(bases), skipped, clean_image_dir))

    jobs = []
    for task_id in roster.task_ids:
        offset = stable_seed(corpus_seed, task_id) % len(bases)
        for i in range(roster.counts[task_id]):
            jobs.append((task_id, i, (offset + i) % len(bases)))

    out_dir = os.path.abspath(out_dir)
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)
    build_dir = tempfile.mkdtemp(dir=parent, prefix='.tmp-corpus-')

    def _synth(job):
        task_id, i, b = job
        seed = stable_seed(corpus_seed, task_id, i)
        bucket = roster.bucket_of(task_id, i)
        task = roster.spec(task_id, bucket, seed)
        pair = make_sample(task, bases[b], seed, base_ids[b])
        rel_input = os.path.join('images', task_id, '{:05d}_input.png'.format(i))
        rel_target = os.path.join('images', task_id, '{:05d}_target.png'.format(i))
        write_image(os.path.join(build_dir, rel_input), pair.input)
        write_image(os.path.join(build_dir, rel_target), pair.target)
        return {'index': i, 'input': rel_input, 'target': rel_target, 'task_id': task_id,
                'severity_bucket': bucket, 'seed': seed, 'base_id': base_ids[b]}

    try:
        rows = thread_map(_synth, jobs, max_workers=max(1, int(workers)),
                          desc='Synthesizing corpus', disable=not jobs)
        manifest = CorpusManifest(pd.DataFrame(rows, columns=ENTRY_COLUMNS), corpus_seed,
                                  image_size, roster, skipped, root=out_dir)
        manifest.write(os.path.join(build_dir, MANIFEST_NAME))
        if os.path.isdir(out_dir) and _same_tree(build_dir, out_dir):
            manifest.unchanged = True
            log.Synthlog.info('corpus unchanged: {}'.format(out_dir))
            return manifest
        if os.path.exists(out_dir):
            stale = tempfile.mkdtemp(dir=parent, prefix='.old-corpus-')
            os.replace(out_dir, os.path.join(stale, 'corpus'))
            os.replace(build_dir, out_dir)
            shutil.rmtree(stale)
        else:
            os.replace(build_dir, out_dir)
    finally:
        if os.path.isdir(build_dir):
            shutil.rmtree(build_dir)
    log.Synthlog.info('Wrote {} entries to {}'.format(len(manifest), out_dir))
    return manifest


def procedural_base(size, seed):
    """
    A synthetic clean image: smooth gradient, discs, stripes and texture

    :rtype: numpy.ndarray
    """
    rng = make_rng(seed, 3)
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
    angle = rng.uniform(0, np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
    img = c0 * (1 - ramp[..., np.newaxis]) + c1 * ramp[..., np.newaxis]

    for _ in range(int(rng.integers(2, 6))):
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.05, 0.25)
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
        img[disc] = rng.uniform(0, 1, 3)

    period = rng.uniform(0.05, 0.2)
    stripe_angle = rng.uniform(0, np.pi)
    phase = np.cos(stripe_angle) * xx + np.sin(stripe_angle) * yy
    band = (yy > rng.uniform(0, 0.5)) & (yy < rng.uniform(0.5, 1.))
    stripes = 0.5 + 0.5 * np.sign(np.sin(2 * np.pi * phase / period))
    img[band] = 0.6 * img[band] + 0.4 * stripes[band][:, np.newaxis]

    texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), 1.5)
    texture /= max(np.abs(texture).max(), 1e-12)
    img = img + 0.08 * texture[..., np.newaxis]
    return check_image(np.clip(img, 0., 1.))


def make_procedural_bases(out_dir, n, size, seed):
    """
    Write ``n`` procedural clean images as PNG

    :param out_dir: Output directory
    :type out_dir: str
    :param n: Number of images
    :type n: int
    :param size: Side in pixels
    :type size: int
    :param seed: Seed of the generator
    :type seed: int
    :return: Written paths
    :rtype: list
    """
    if n < 1:
        raise ValueError('n should be at least 1, got {}'.format(n))
    os.makedirs(out_dir, exist_ok=True)
    fnames = []
    for i in range(int(n)):
        fname = os.path.join(out_dir, 'base_{:03d}.png'.format(i))
        write_image(fname, quantize8(procedural_base(size, stable_seed(seed, 'base', i))) / 255.)
        fnames.append(fname)
    return fnames
