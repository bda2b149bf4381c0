import unittest
import os
import shutil
import collections
import numpy as np
import pandas as pd
from numpy.testing import assert_array_equal
from pyvpip.corpus import (CorpusManifest, InsufficientPromptPool, MANIFEST_NAME, ENTRY_COLUMNS,
                           make_procedural_bases, sample_prompt_pair, select_prompt_entry, synthesize_corpus)
from pyvpip.tasks import TaskRoster, TaskSpec
from pyvpip.utils.common import check_image

ROSTER = [
    {'task_id': 'gaussian_noise', 'count': 10},
    {'task_id': 'canny', 'count': 10},
    {'task_id': 'low_light', 'count': 10},
]


def corpus_config(roster=ROSTER, seed=0, size=32):
    return {'corpus_seed': seed, 'image_size': size, 'roster': roster}


class TestSynthesizeCorpus(unittest.TestCase):
    def setUp(self):
        self.test_dir = 'test_corpus_output'
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)
        os.makedirs(self.test_dir)
        self.cwd = os.getcwd()
        os.chdir(self.test_dir)
        make_procedural_bases('clean', 6, 40, 0)

    def tearDown(self):
        os.chdir(self.cwd)
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)

    def test_counts(self):
        manifest = synthesize_corpus(corpus_config(), 'clean', 'corpus')
        self.assertEqual(len(manifest), 30)
        self.assertEqual(manifest.counts(), {'canny': 10, 'gaussian_noise': 10, 'low_light': 10})
        self.assertTrue(os.path.isfile(os.path.join('corpus', MANIFEST_NAME)))

    def test_reload(self):
        synthesize_corpus(corpus_config(), 'clean', 'corpus')
        manifest = CorpusManifest.read('corpus')
        for _, row in manifest.entries.iterrows():
            pair = manifest.load_entry(row)
            check_image(pair.input)
            check_image(pair.target)
            self.assertEqual(pair.input.shape, (32, 32, 3))
            self.assertEqual(pair.task.severity_bucket, row['severity_bucket'])
        self.assertEqual(manifest.to_dict(), CorpusManifest.from_dict(manifest.to_dict(), 'corpus').to_dict())

    def test_deterministic(self):
        synthesize_corpus(corpus_config(), 'clean', 'a')
        synthesize_corpus(corpus_config(), 'clean', 'b')
        with open(os.path.join('a', MANIFEST_NAME), 'rb') as fa, open(os.path.join('b', MANIFEST_NAME), 'rb') as fb:
            self.assertEqual(fa.read(), fb.read())
        manifest = CorpusManifest.read('a')
        for _, row in manifest.entries.iterrows():
            with open(os.path.join('a', row['input']), 'rb') as fa, open(os.path.join('b', row['input']), 'rb') as fb:
                self.assertEqual(fa.read(), fb.read())

    def test_unchanged(self):
        first = synthesize_corpus(corpus_config(), 'clean', 'corpus')
        self.assertFalse(first.unchanged)
        second = synthesize_corpus(corpus_config(), 'clean', 'corpus')
        self.assertTrue(second.unchanged)
        third = synthesize_corpus(corpus_config(seed=1), 'clean', 'corpus')
        self.assertFalse(third.unchanged)
        self.assertEqual(CorpusManifest.read('corpus').corpus_seed, 1)

    def test_roster_extension(self):
        small = synthesize_corpus(corpus_config(ROSTER[:1]), 'clean', 'small')
        large = synthesize_corpus(corpus_config(ROSTER), 'clean', 'large')
        seeds = large.select('gaussian_noise')['seed'].tolist()
        self.assertEqual(small.select('gaussian_noise')['seed'].tolist(), seeds)

    def test_missing_directory(self):
        with self.assertRaises(FileNotFoundError):
            synthesize_corpus(corpus_config(), 'no_such_dir', 'corpus')
        self.assertFalse(os.path.exists(os.path.join('corpus', MANIFEST_NAME)))
        self.assertEqual([f for f in os.listdir('.') if f.startswith('.tmp')], [])

    def test_unreadable_skipped(self):
        with open(os.path.join('clean', 'broken.png'), 'w') as f:
            f.write('not an image')
        manifest = synthesize_corpus(corpus_config(), 'clean', 'corpus')
        self.assertEqual(manifest.skipped, 1)
        self.assertNotIn('broken', set(manifest.entries['base_id']))

    def test_missing_file(self):
        synthesize_corpus(corpus_config(), 'clean', 'corpus')
        manifest = CorpusManifest.read('corpus')
        os.remove(os.path.join('corpus', manifest.entries['input'][0]))
        with self.assertRaises(FileNotFoundError):
            CorpusManifest.read('corpus')


class TestPromptSampling(unittest.TestCase):
    def setUp(self):
        rows = []
        for i in range(6):
            rows.append({'index': i, 'input': 'i{}.png'.format(i), 'target': 't{}.png'.format(i),
                         'task_id': 'gaussian_noise', 'severity_bucket': i % 2, 'seed': i,
                         'base_id': 'b{}'.format(i // 2)})
        self.manifest = CorpusManifest(pd.DataFrame(rows, columns=ENTRY_COLUMNS), 0, 32,
                                       TaskRoster([{'task_id': 'gaussian_noise', 'count': 6}]))

    def test_bucket_and_base(self):
        task = TaskSpec('gaussian_noise', 'restoration', {'sigma': 0.1}, 1)
        for seed in range(50):
            row = select_prompt_entry(self.manifest, task, 'b0', seed)
            self.assertEqual(row['severity_bucket'], 1)
            self.assertNotEqual(row['base_id'], 'b0')

    def test_single_entry(self):
        task = TaskSpec('gaussian_noise', 'restoration', {'sigma': 0.1}, 0)
        manifest = CorpusManifest(self.manifest.entries.head(1), 0, 32, self.manifest.roster)
        self.assertEqual(select_prompt_entry(manifest, task, 'other', 3)['input'], 'i0.png')

    def test_uniform(self):
        entries = self.manifest.entries.copy()
        entries['severity_bucket'] = 0
        entries['base_id'] = ['b{}'.format(i) for i in range(6)]
        manifest = CorpusManifest(entries.head(4), 0, 32, self.manifest.roster)
        task = TaskSpec('gaussian_noise', 'restoration', {'sigma': 0.1}, 0)
        counts = collections.Counter(select_prompt_entry(manifest, task, 'none', s)['input'] for s in range(10000))
        self.assertEqual(len(counts), 4)
        for n in counts.values():
            self.assertLess(abs(n / 10000. - 0.25), 0.05)

    def test_insufficient(self):
        task = TaskSpec('gaussian_noise', 'restoration', {'sigma': 0.1}, 2)
        with self.assertRaises(InsufficientPromptPool) as cm:
            select_prompt_entry(self.manifest, task, 'b0', 0)
        self.assertIn('insufficient prompt pool', str(cm.exception))
        self.assertIsInstance(cm.exception, ValueError)


class TestPromptPairOnDisk(unittest.TestCase):
    def setUp(self):
        self.test_dir = 'test_prompt_output'
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)
        os.makedirs(self.test_dir)
        make_procedural_bases(os.path.join(self.test_dir, 'clean'), 4, 32, 1)
        self.manifest = synthesize_corpus(corpus_config(ROSTER[:1]), os.path.join(self.test_dir, 'clean'),
                                          os.path.join(self.test_dir, 'corpus'))

    def tearDown(self):
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)

    def test_sample_prompt_pair(self):
        row = self.manifest.entries.iloc[0]
        query = self.manifest.load_entry(row)
        prompt = sample_prompt_pair(self.manifest, query.task, query.base_id, 5)
        self.assertEqual(prompt.task.task_id, query.task.task_id)
        self.assertEqual(prompt.task.severity_bucket, query.task.severity_bucket)
        self.assertNotEqual(prompt.base_id, query.base_id)
        # restoration prompts carry the clean image as target
        self.assertFalse(np.array_equal(prompt.source, prompt.target))
        assert_array_equal(prompt.source.shape, (32, 32, 3))


if __name__ == '__main__':
    unittest.main()
