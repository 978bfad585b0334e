"""Recurrent soft-attention prediction of gaze grid cells in video frames."""

from . import kernels
from .data import LabeledSequence, SynthConfig, fill_missing, quantize, split, synth_generate, vote
from .evaluation import EvalReport, evaluate, groundtruth_map, kl_divergence
from .formats import FormatError, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .model import FeatureCube, ModelConfig, ModelParams, forward_sequence, init_params
from .training import TrainConfig, TrainCurve, backward, finite_diff_grad, loss, train

__version__ = "0.1.0"
