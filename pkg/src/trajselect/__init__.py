"""Best-of-N selection with a lightweight verifier over sampler hidden states."""

from .config import RunConfig, load_config
from .corpus import Corpus, balance_downsample, load_jsonl, save_jsonl
from .sampler_sim import SynthConfig, generate_corpus
from .selection import METHODS, CandidateSet, accuracy, best_of_n, majority_vote
from .training import TrainConfig, buffer_loss, binary_bce_loss, grad_check, train
from .verifier import VerifierConfig, init_params, step_scores, trajectory_scores

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "load_config", "Corpus", "balance_downsample", "load_jsonl", "save_jsonl",
    "SynthConfig", "generate_corpus", "METHODS", "CandidateSet", "accuracy", "best_of_n",
    "majority_vote", "TrainConfig", "buffer_loss", "binary_bce_loss", "grad_check", "train",
    "VerifierConfig", "init_params", "step_scores", "trajectory_scores",
]
