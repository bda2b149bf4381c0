import unittest
from unittest.mock import patch
import os
import json
import shutil
from ruamel.yaml import YAML
from pyvpip.para import OUTPUT_ROOT_ENV, VPIPPara, input_path, output_path

yaml = YAML()


class TestVPIPPara(unittest.TestCase):
    def setUp(self):
        self.test_dir = 'test_para_output'
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)
        os.makedirs(self.test_dir)
        self.cwd = os.getcwd()
        os.chdir(self.test_dir)

        self.yaml_content = {
            'version': 'vpip-config/1',
            'corpus': 'my_corpus',
            'model': {'window_size': 2},
            'train': {'steps': 5, 'batch_size': 4},
        }
        self.fname = 'train.yml'
        with open(self.fname, 'w') as f:
            yaml.dump(self.yaml_content, f)

    def tearDown(self):
        os.chdir(self.cwd)
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)

    def test_template(self):
        para = VPIPPara(None, 'train')
        self.assertEqual(para['profile'], 'desk')
        self.assertEqual(para['model']['variant'], 'desk-base')
        self.assertEqual(para.get('train.beta2'), 0.99)
        self.assertIsNone(para.get('train.missing'))
        for command in ('synth', 'finetune', 'eval'):
            self.assertEqual(VPIPPara(None, command)['profile'], 'desk')
        with self.assertRaises(ValueError):
            VPIPPara(None, 'deploy')

    def test_init(self):
        para = VPIPPara(self.fname, 'train')
        self.assertEqual(para['corpus'], 'my_corpus')
        self.assertEqual(para['train']['steps'], 5)
        # untouched leaves keep the template value
        self.assertEqual(para['train']['learning_rate'], 1e-4)
        config = para.train_config()
        self.assertEqual(config.batch_size, 4)
        self.assertEqual(para.model_config().window_size, 2)
        self.assertEqual(para.model_config().channels, [16, 32, 64, 128])

    def test_json(self):
        with open('train.json', 'w') as f:
            json.dump(self.yaml_content, f)
        self.assertEqual(VPIPPara('train.json', 'train')['train']['steps'], 5)

    def test_profile(self):
        para = VPIPPara(None, 'train', profile='paper')
        self.assertEqual(para['train']['batch_size'], 64)
        self.assertEqual(para.model_config().image_size, 256)
        self.assertEqual(VPIPPara(None, 'synth', profile='paper')['synth']['image_size'], 256)
        # keys of the document win over the profile
        self.assertEqual(VPIPPara(self.fname, 'train', profile='paper')['train']['batch_size'], 4)
        with self.assertRaises(ValueError):
            VPIPPara(None, 'train', profile='cluster')

    def test_rejects(self):
        with open('bad.yml', 'w') as f:
            yaml.dump({'train': {'learning_rte': 0.1}}, f)
        with self.assertRaises(ValueError) as cm:
            VPIPPara('bad.yml', 'train')
        self.assertIn('train.learning_rte', str(cm.exception))
        with open('old.yml', 'w') as f:
            yaml.dump({'version': 'vpip-config/0'}, f)
        with self.assertRaises(ValueError):
            VPIPPara('old.yml', 'train')
        with open('list.yml', 'w') as f:
            yaml.dump([1, 2], f)
        with self.assertRaises(ValueError):
            VPIPPara('list.yml', 'train')
        with self.assertRaises(FileNotFoundError):
            VPIPPara('missing.yml', 'train')
        para = VPIPPara(self.fname, 'train', ['train.learning_rate=-1'])
        with self.assertRaises(ValueError):
            para.train_config()
        para = VPIPPara(self.fname, 'train', ['model.variant=desk-giant'])
        with self.assertRaises(ValueError):
            para.model_config()

    def test_overrides(self):
        para = VPIPPara(self.fname, 'train', ['train.steps=50', 'model.channels=8,16,24,32', 'resume=false'])
        self.assertEqual(para['train']['steps'], 50)
        self.assertEqual(para['model']['channels'], [8, 16, 24, 32])
        self.assertFalse(para['resume'])
        with self.assertRaises(ValueError):
            VPIPPara(self.fname, 'train', ['train.steps'])

    def test_update_param(self):
        para = VPIPPara(self.fname, 'train')
        para.update_param('train.task_sampling', 'uniform_sample')
        self.assertEqual(para['train']['task_sampling'], 'uniform_sample')
        para.update_param('model.zero_head', 'false')
        self.assertIs(para['model']['zero_head'], False)
        with self.assertRaises(ValueError):
            para.update_param('new_section.new_key', '123.45')
        with self.assertRaises(ValueError):
            para.update_param('train.momentum', '0.9')

    def test_write(self):
        para = VPIPPara(self.fname, 'train')
        para.update_param('train.epochs', '3')

        out_fname = 'out_params.yml'
        para.write(out_fname)

        self.assertTrue(os.path.exists(out_fname))
        with open(out_fname, 'r') as f:
            new_params = yaml.load(f)
        self.assertEqual(new_params['train']['epochs'], 3)
        self.assertEqual(VPIPPara(out_fname, 'train').to_dict(), para.to_dict())

    def test_write_overwrite(self):
        para = VPIPPara(self.fname, 'train')
        para.update_param('train.seed', '7')
        para.write()

        with open(self.fname, 'r') as f:
            new_params = yaml.load(f)
        self.assertEqual(new_params['train']['seed'], 7)

    def test_output_root(self):
        with patch.dict(os.environ, {OUTPUT_ROOT_ENV: 'out'}):
            self.assertEqual(output_path('run'), os.path.join('out', 'run'))
            self.assertEqual(output_path(os.path.abspath('run')), os.path.abspath('run'))
            self.assertEqual(input_path('corpus'), 'corpus')
            os.makedirs(os.path.join('out', 'corpus'))
            self.assertEqual(input_path('corpus'), os.path.join('out', 'corpus'))
        with patch.dict(os.environ, {}, clear=True):
            self.assertEqual(output_path('run'), 'run')


if __name__ == '__main__':
    unittest.main()
