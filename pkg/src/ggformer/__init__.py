"""Glance-and-gaze vision transformer kernels, backbone and cost accounting."""
from .attention import AttentionConfig, AttentionWeights, Variant, g_msa, msa, sra, w_msa
from .backbone import GG_S, GG_T, ModelConfig, ModelWeights, build, forward
from .complexity import (
    FlopsReport,
    count_executed,
    count_model,
    omega_g_msa,
    omega_gg_msa,
    omega_msa,
)
from .ggblock import BlockConfig, GazeConfig, gaze, gg_block, gg_msa
from .partition import PartitionSpec, Permutation, dilated_split_permutation, merge, split

__version__ = "0.1.0"
