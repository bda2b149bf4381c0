from ._version import __version__

from pyvpip.para import VPIPPara
from pyvpip.tasks import TaskSpec, SamplePair, PromptPair, TaskRoster, make_sample, get_task
from pyvpip.corpus import CorpusManifest, synthesize_corpus, sample_prompt_pair
from pyvpip.nets import GenLV, ModelConfig, build_model
from pyvpip.checkpoint import save_checkpoint, load_model
from pyvpip.inference import forward_full, tiled_forward
from pyvpip.train import TrainConfig, Trainer, train_step, finetune
from pyvpip.evaluate import EvalReport, evaluate_corpus, prompt_stability, mismatch_test
