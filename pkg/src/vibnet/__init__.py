"""Information-bottleneck gated networks: training, pruning, and analysis."""

from .analysis import (MiEstimate, PenaltyParams, SurrogateProblem, ksg_mutual_information,
                       mi_track, rho, sigma_star, surrogate_minimize, xi_star)
from .data import Dataset, load_mnist, parse_idx, synthetic_blobs
from .errors import (DegenerateArchitectureError, DimensionError, DivergenceError, DomainError,
                     InputError, ParseError, StateError, VibnetError)
from .gate import EVAL_MEAN, TRAIN_SAMPLE, VibGate, kl_penalty, psi_diagnostic
from .metrics import compute_flops, compute_r_n, compute_r_w
from .network import Network, lenet_300_100, lenet_5, toy_mlp
from .prune import PruneReport, prune
from .tensor import RandomSource
from .train import TrainConfig, TrainLog, fine_tune, train

__version__ = "0.1.0"
