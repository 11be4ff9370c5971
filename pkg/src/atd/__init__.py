"""Augmented tensor decomposition with stochastic alternating optimization."""

from .kernels import GramStack, SingularSystemError, khatri_rao, mttkrp, ridge_solve
from .objective import SsLossParams, apply_g_gamma, concentration_bound, loss_terms, ss_loss
from .solver import (ConfigError, DivergenceError, KruskalBases, SaoConfig, SweepReport,
                     cold_start, cp_als_full, decompose, extract_features, sao_run)
from .tensor import DenseTensor, TensorBatch, read_tensor, split_batches, write_tensor

__version__ = "0.1.0"
