"""Model-parallel sparse DNN training on simulated processors, with a
fixed-vertex hypergraph partitioner that keeps communication low."""
from .commplan import CommPlan, build_comm_plan, metrics, verify_volume_identity
from .engine import SimCluster, run_sgd, run_spbp, run_spff, sequential_sgd
from .hypergraph import PhaseHypergraph, build_phase_hypergraph, cut_size
from .mnist import load_dataset, preprocess
from .model import SparseModel, generate_synthetic, load_model, save_model
from .partition import ModelPartition, partition_fm, partition_model, partition_random
from .sparse import SparseMatrix, spmv

__all__ = [
    "CommPlan", "build_comm_plan", "metrics", "verify_volume_identity",
    "SimCluster", "run_sgd", "run_spbp", "run_spff", "sequential_sgd",
    "PhaseHypergraph", "build_phase_hypergraph", "cut_size",
    "load_dataset", "preprocess",
    "SparseModel", "generate_synthetic", "load_model", "save_model",
    "ModelPartition", "partition_fm", "partition_model", "partition_random",
    "SparseMatrix", "spmv",
]
