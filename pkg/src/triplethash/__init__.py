"""Cross-modal retrieval with triplet-supervised binary hash codes.

Two small MLP encoders (text and image) are trained jointly against
inter- and intra-modal triplet likelihood losses plus a graph-regularized
quantization term; retrieval runs in Hamming space over packed codes.
"""

from .codes import SimilarityGraph, build_graph, load_codes, save_codes, sign_matrix, update_codes
from .dataio import BimodalDataset, SplitSpec, generate_synthetic, load_dataset, save_dataset
from .encoder import EncoderConfig, EncoderParams, forward, init_params, load_params, save_params
from .loss import HyperParams, LossBreakdown, TripletLabel, total_loss
from .metrics import EvalReport, QuerySet, average_precision, evaluate, mean_average_precision
from .retrieval import RetrievalIndex, build_index, encode_out_of_sample, hamming_distance, rank
from .trainer import TrainConfig, TrainState, load_config, sample_triplets, train, train_epoch

__version__ = "0.1.0"

__all__ = [
    "BimodalDataset",
    "EncoderConfig",
    "EncoderParams",
    "EvalReport",
    "HyperParams",
    "LossBreakdown",
    "QuerySet",
    "RetrievalIndex",
    "SimilarityGraph",
    "SplitSpec",
    "TrainConfig",
    "TrainState",
    "TripletLabel",
    "average_precision",
    "build_graph",
    "build_index",
    "encode_out_of_sample",
    "evaluate",
    "forward",
    "generate_synthetic",
    "hamming_distance",
    "init_params",
    "load_codes",
    "load_config",
    "load_dataset",
    "load_params",
    "mean_average_precision",
    "rank",
    "sample_triplets",
    "save_codes",
    "save_dataset",
    "save_params",
    "sign_matrix",
    "total_loss",
    "train",
    "train_epoch",
    "update_codes",
    "__version__",
]
