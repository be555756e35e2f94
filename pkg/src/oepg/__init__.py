"""Self-supervised graph representation learning with ego-semantic descriptors."""
from .clusters import ClusterHierarchy, ClusterQueues
from .graph import DatasetSplit, EgoSubgraph, Graph, generate_sbm, k_hop_subgraph, load_dataset
from .trainer import Checkpoint, TrainConfig, load_checkpoint, pretrain, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "ClusterHierarchy",
    "ClusterQueues",
    "DatasetSplit",
    "EgoSubgraph",
    "Graph",
    "TrainConfig",
    "generate_sbm",
    "k_hop_subgraph",
    "load_checkpoint",
    "load_dataset",
    "pretrain",
    "save_checkpoint",
]
