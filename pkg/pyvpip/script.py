from os.path import dirname, abspath, join, exists, isdir, basename
import argparse
import os
import sys
import tempfile
import pandas as pd
from .checkpoint import load_model, save_checkpoint
from .corpus import (CorpusManifest, InsufficientPromptPool, MANIFEST_NAME, make_procedural_bases,
                     select_prompt_entry, synthesize_corpus)
from .evaluate import (EvalReport, STABILITY_POOL_SIZE, build_prompt_pool, evaluate_corpus,
                       mismatch_test, prompt_stability, summarize_psnr)
from .inference import GenLVPredictor, PREDICTORS, TILE_OVERLAP
from .metrics import psnr
from .nets.genlv import build_model
from .para import COMMANDS, VPIPPara, input_path, output_path
from .setuplog import SetupLog
from .tasks import PromptPair, TaskRoster, get_task
from .train import FINETUNE_STRATEGIES, Trainer, finetune
from .utils.common import DirLock, atomic_path
from .utils.image_io import read_image, write_image

FINAL_CHECKPOINT = 'model.h5'
REPORT_PREFIX = 'report'
ERRORS = (ValueError, TypeError, FileNotFoundError, RuntimeError, OSError, FloatingPointError)


def init_config(command, fname, profile=None):
    para = VPIPPara(None, command, profile=profile)
    if exists(fname):
        rm_str = input('The {} already exists. Do you want to overwrite it? [Y/n]'.format(fname))
        if rm_str.lower() != 'y':
            return False
    if dirname(abspath(fname)):
        os.makedirs(dirname(abspath(fname)), exist_ok=True)
    para.write(fname)
    return True


def _config_parser(description):
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument('config', nargs='?', default=None,
                        help='Config file (YAML or JSON), defaults to the built-in template')
    parser.add_argument('--set', action='append', default=[], metavar='key=value', dest='overrides',
                        help='Override a config leaf by its dotted path, may be repeated')
    return parser


def _check_corpus(path):
    path = input_path(path)
    fname = join(path, MANIFEST_NAME) if isdir(path) else path
    if not exists(fname):
        raise FileNotFoundError('Corpus manifest {} not found'.format(fname))
    return CorpusManifest.read(fname)


def _check_checkpoint(path):
    if path is None:
        raise ValueError('checkpoint is required')
    path = input_path(path)
    if not exists(path):
        raise FileNotFoundError('Checkpoint {} not found'.format(path))
    return path


def _check_size(manifest, model):
    if manifest.image_size != model.config.image_size:
        raise ValueError('Corpus image size {} does not match the model image size {}'.format(
            manifest.image_size, model.config.image_size))


class VPIP:
    def __init__(self) -> None:
        parser = argparse.ArgumentParser(
        usage='''vpip <command> [<args>]
The vpip commands include:
\033[1minit\033[0m       Write the default config of a subcommand
\033[1msetpar\033[0m     Set a parameter of a config file
\033[1msynth\033[0m      Synthesize a task corpus from clean images
\033[1mtrain\033[0m      Train a GenLV network on a corpus
\033[1mfinetune\033[0m   Adapt a trained network to a task from a few pairs
\033[1meval\033[0m       Score a network or a reference predictor on a corpus
\033[1minfer\033[0m      Apply the task shown by a prompt pair to an image
\033[1mreport\033[0m     Print and merge evaluation reports
''')
        parser.add_argument('command', help='vpip commands')
        args = parser.parse_args(sys.argv[1:2])
        if not hasattr(self, args.command) or args.command.startswith('_'):
            parser.print_help()
            sys.exit(1)
        self.log = SetupLog()
        getattr(self, args.command)()

    def __str__(self):
        return ''

    def _run(self, func, *args):
        try:
            return func(*args)
        except ERRORS as e:
            self.log.Outputlog.error('{}: {}'.format(type(e).__name__, e))
            sys.exit(1)

    def init(self):
        parser = argparse.ArgumentParser(description='Write the default config of a subcommand')
        parser.add_argument('subcommand', choices=COMMANDS, help='Subcommand the config is for')
        parser.add_argument('fname', help='Path to output config file')
        parser.add_argument('-p', help='Profile, defaults to desk', default=None, metavar='desk|paper')
        args = parser.parse_args(sys.argv[2:])
        self._run(init_config, args.subcommand, args.fname, args.p)

    def setpar(self):
        parser = argparse.ArgumentParser(description='Set a parameter of a config file')
        parser.add_argument('subcommand', choices=COMMANDS, help='Subcommand the config is for')
        parser.add_argument('fname', help='Path to the config file')
        parser.add_argument('key', help='Key of the parameter, use \'.\' to separate the sections')
        parser.add_argument('value', help='Value of the parameter, use \',\' to separate list items')
        args = parser.parse_args(sys.argv[2:])

        def _setpar():
            para = VPIPPara(args.fname, args.subcommand)
            para.update_param(args.key, args.value)
            para.write()
        self._run(_setpar)

    def synth(self):
        parser = _config_parser('Synthesize a task corpus from clean images')
        args = parser.parse_args(sys.argv[2:])
        self._run(self._synth, args)

    def _synth(self, args):
        para = VPIPPara(args.config, 'synth', args.overrides)
        cfg = para['synth']
        out_dir = output_path(para['output']['corpus_dir'])
        clean_dir = cfg['clean_image_dir']
        if clean_dir is None:
            if int(cfg['procedural']) < 1:
                raise ValueError('synth.clean_image_dir is null and synth.procedural is not positive')
        elif not isdir(clean_dir):
            raise FileNotFoundError('Clean image directory {} not found'.format(clean_dir))
        roster = TaskRoster(list(cfg['roster']))
        config = {'corpus_seed': int(cfg['corpus_seed']), 'image_size': int(cfg['image_size']), 'roster': roster}
        parent = dirname(abspath(out_dir))
        with DirLock(parent):
            if clean_dir is None:
                with tempfile.TemporaryDirectory(dir=parent, prefix='.tmp-bases-') as tmp:
                    make_procedural_bases(tmp, int(cfg['procedural']), config['image_size'],
                                          int(cfg['procedural_seed']))
                    manifest = synthesize_corpus(config, tmp, out_dir, int(cfg['workers']))
            else:
                manifest = synthesize_corpus(config, clean_dir, out_dir, int(cfg['workers']))
        if manifest.unchanged:
            print('corpus unchanged')
        print(join(out_dir, MANIFEST_NAME))

    def train(self):
        parser = _config_parser('Train a GenLV network on a corpus')
        args = parser.parse_args(sys.argv[2:])
        self._run(self._train, args)

    def _train(self, args):
        para = VPIPPara(args.config, 'train', args.overrides)
        manifest = _check_corpus(para['corpus'])
        model_config = para.model_config()
        train_config = para.train_config()
        if manifest.image_size != model_config.image_size:
            raise ValueError('Corpus image size {} does not match the model image size {}'.format(
                manifest.image_size, model_config.image_size))
        run_dir = output_path(para['output']['run_dir'])
        with DirLock(run_dir):
            model = build_model(model_config, int(para['model']['init_seed']))
            trainer = Trainer(model, manifest, train_config, run_dir)
            if para['resume']:
                trainer.resume()
            trainer.run()
            final = trainer.save(join(run_dir, FINAL_CHECKPOINT))
        print(final)

    def finetune(self):
        parser = _config_parser('Adapt a trained network to a task from a few pairs')
        args = parser.parse_args(sys.argv[2:])
        self._run(self._finetune, args)

    def _finetune(self, args):
        para = VPIPPara(args.config, 'finetune', args.overrides)
        strategy = para['strategy']
        if strategy not in FINETUNE_STRATEGIES:
            raise ValueError('Unknown fine-tuning strategy {}, should be one of {}'.format(
                strategy, ', '.join(FINETUNE_STRATEGIES)))
        task_id = para['task_id']
        get_task(task_id)
        shots = int(para['shots'])
        manifest = _check_corpus(para['corpus'])
        base = _check_checkpoint(para['checkpoint'])
        train_config = para.train_config()
        entries = manifest.select(task_id)
        if entries.shape[0] < max(shots, 2):
            raise InsufficientPromptPool('Corpus holds {} entries of {}, fine-tuning needs {}'.format(
                entries.shape[0], task_id, max(shots, 2)))
        model, ckpt = load_model(base)
        _check_size(manifest, model)
        model.to(train_config.device)
        pairs = [manifest.load_entry(row) for _, row in entries.head(shots).iterrows()]
        run_dir = output_path(para['output']['run_dir'])
        with DirLock(run_dir):
            losses = []
            finetune(model, pairs, strategy, train_config,
                     callback=lambda epoch, loss: losses.append('epoch={} loss={:.8e}\n'.format(epoch + 1, loss)))
            with atomic_path(join(run_dir, 'loss.log')) as tmp:
                with open(tmp, 'w') as f:
                    f.writelines(losses)
            final = join(run_dir, FINAL_CHECKPOINT)
            save_checkpoint(final, model, ckpt.step, meta={
                'base_checkpoint': abspath(base), 'task_id': task_id, 'shots': shots,
                'strategy': strategy, 'train': train_config.to_dict()})
        self.log.Trainlog.info('Fine-tuned {} on {} pairs of {} with strategy {}'.format(
            base, shots, task_id, strategy))
        print(final)

    def eval(self):
        parser = _config_parser('Score a network or a reference predictor on a corpus')
        args = parser.parse_args(sys.argv[2:])
        self._run(self._eval, args)

    def _predictor(self, para, manifest):
        name = para['predictor']
        if name in PREDICTORS:
            return PREDICTORS[name], ''
        if name != 'genlv':
            raise ValueError('Unknown predictor {}, should be one of genlv, {}'.format(name, ', '.join(PREDICTORS)))
        fname = _check_checkpoint(para['checkpoint'])
        model, _ = load_model(fname)
        _check_size(manifest, model)
        return GenLVPredictor(model, int(para['eval']['overlap'])), abspath(fname)

    def _stability(self, predictor, manifest, cfg):
        task_id, bucket = cfg['task_id'], int(cfg['severity_bucket'])
        entries = manifest.select(task_id, bucket)
        n_samples = int(cfg['eval_samples'])
        if entries.shape[0] < n_samples + STABILITY_POOL_SIZE:
            raise InsufficientPromptPool('insufficient prompt pool: stability of {} bucket {} needs {} entries, found {}'.format(
                task_id, bucket, n_samples + STABILITY_POOL_SIZE, entries.shape[0]))
        eval_rows = entries.head(n_samples)
        eval_set = [manifest.load_entry(row) for _, row in eval_rows.iterrows()]
        task = eval_set[0].task
        pool = build_prompt_pool(manifest, task, STABILITY_POOL_SIZE, int(cfg['seed']),
                                 exclude_base_ids=set(eval_rows['base_id']))
        mean, std = prompt_stability(predictor, task, eval_set, pool)
        self.log.Evallog.info('Prompt stability of {} bucket {}: {:.4f} +- {:.4f} dB over {} prompts'.format(
            task_id, bucket, mean, std, STABILITY_POOL_SIZE))
        return {'task_id': task_id, 'severity_bucket': bucket, 'n_prompts': STABILITY_POOL_SIZE,
                'n_samples': n_samples, 'psnr_mean': mean, 'psnr_std': std}

    def _mismatch(self, predictor, manifest, cfg):
        prompt_task = cfg['prompt_task']
        rows = manifest.select(prompt_task)
        if rows.empty:
            raise InsufficientPromptPool('No corpus entries of prompt task {}'.format(prompt_task))
        row = select_prompt_entry(manifest, manifest.task_of(rows.iloc[0]), None, int(cfg['seed']))
        pair = manifest.load_entry(row)
        prompt = PromptPair(pair.input, pair.target, pair.task, pair.base_id)
        count = int(cfg['count'])
        entries = manifest.entries[manifest.entries['task_id'] != prompt_task]
        if cfg['inputs'] == 'clean':
            degrade = [t for t in entries['task_id'].unique() if get_task(t).direction == 'degrade']
            entries = entries[entries['task_id'].isin(degrade)]
            column = 'target'
        else:
            entries = entries[entries['task_id'] == cfg['inputs']]
            column = 'input'
        if entries.empty:
            raise ValueError('No mismatch inputs of kind {} in the corpus'.format(cfg['inputs']))
        inputs = [read_image(join(manifest.root, path)) for path in entries[column].head(count)]
        summary = summarize_psnr(mismatch_test(predictor, inputs, prompt))
        summary.update({'prompt_task': prompt_task, 'inputs': cfg['inputs']})
        self.log.Evallog.info('Mismatch test with {} prompt on {} inputs: {:.3f} dB'.format(
            prompt_task, cfg['inputs'], summary['psnr_mean']))
        return summary

    def _eval(self, args):
        para = VPIPPara(args.config, 'eval', args.overrides)
        manifest = _check_corpus(para['corpus'])
        cfg = para['eval']
        tasks = cfg['tasks']
        if isinstance(tasks, str):
            tasks = [tasks]
        elif tasks is not None:
            tasks = list(tasks)
        for task_id in tasks or []:
            if task_id not in manifest.roster:
                raise ValueError('Task {} is not in the corpus roster'.format(task_id))
        for section in ('stability', 'mismatch'):
            if para[section]['enabled']:
                get_task(para[section]['task_id' if section == 'stability' else 'prompt_task'])
        predictor, checkpoint = self._predictor(para, manifest)
        report_dir = output_path(para['output']['report_dir'])
        with DirLock(report_dir):
            report = evaluate_corpus(predictor, manifest, int(cfg['prompts_per_task']), int(cfg['seed']),
                                     tasks, int(cfg['workers']),
                                     grid_dir=join(report_dir, 'grids') if cfg['grids'] else None,
                                     grid_rows=int(cfg['grid_rows']))
            report.config = para.to_dict()
            report.checkpoint = checkpoint
            if para['stability']['enabled']:
                report.stability = [self._stability(predictor, manifest, para['stability'])]
            if para['mismatch']['enabled']:
                report.mismatch = [self._mismatch(predictor, manifest, para['mismatch'])]
            paths = report.write(join(report_dir, REPORT_PREFIX))
        for path in paths:
            print(path)

    def infer(self):
        parser = argparse.ArgumentParser(description='Apply the task shown by a prompt pair to an image\n'
                                         'Ex: vpip infer noisy.png ps.png pt.png run/model.h5 -o out.png',
                                         formatter_class=argparse.RawTextHelpFormatter)
        parser.add_argument('input', help='Path to input image')
        parser.add_argument('prompt_source', help='Path to prompt source image')
        parser.add_argument('prompt_target', help='Path to prompt target image')
        parser.add_argument('checkpoint', help='Path to checkpoint')
        parser.add_argument('-o', help='Path to output PNG', required=True, metavar='fname')
        parser.add_argument('-g', help='Path to ground truth, PSNR of the output is printed', default=None,
                            metavar='fname')
        parser.add_argument('-t', help='Overlap of model-size tiles for inputs of other sizes, defaults to {}'.format(
                            TILE_OVERLAP), default=TILE_OVERLAP, type=int, metavar='overlap')
        args = parser.parse_args(sys.argv[2:])
        self._run(self._infer, args)

    def _infer(self, args):
        for fname in (args.input, args.prompt_source, args.prompt_target, args.checkpoint, args.g):
            if fname is not None and not exists(fname):
                raise FileNotFoundError('No such file {}'.format(fname))
        model, _ = load_model(args.checkpoint)
        size = model.config.image_size
        img = read_image(args.input)
        prompt = PromptPair(read_image(args.prompt_source, size), read_image(args.prompt_target, size), None)
        output = GenLVPredictor(model, args.t)(img, prompt)
        write_image(args.o, output)
        self.log.Outputlog.info('Wrote {}'.format(args.o))
        if args.g is not None:
            gt = read_image(args.g)
            if gt.shape != output.shape:
                raise ValueError('Ground truth {} is {}x{}, output is {}x{}'.format(
                    args.g, gt.shape[0], gt.shape[1], output.shape[0], output.shape[1]))
            print('PSNR: {:.4f} dB'.format(psnr(read_image(args.o), gt)))

    def report(self):
        parser = argparse.ArgumentParser(description='Print evaluation reports as a table and merge them')
        parser.add_argument('reports', nargs='+', help='Paths to JSON reports')
        parser.add_argument('-o', help='Path to output CSV of the merged table', default=None, metavar='fname')
        args = parser.parse_args(sys.argv[2:])
        self._run(self._report, args)

    def _report(self, args):
        tables = []
        for fname in args.reports:
            if not exists(fname):
                raise FileNotFoundError('No such report {}'.format(fname))
            records = EvalReport.read_json(fname).records.copy()
            if len(args.reports) > 1:
                records.insert(0, 'report', basename(dirname(abspath(fname))) or fname)
            tables.append(records)
        table = pd.concat(tables, ignore_index=True)
        print(table.to_string(index=False, float_format=lambda v: '{:.4f}'.format(v)))
        if args.o is not None:
            with atomic_path(args.o) as tmp:
                table.to_csv(tmp, index=False, float_format='%.10g')


def main():
    VPIP()


if __name__ == '__main__':
    main()
