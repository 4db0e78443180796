"""Heterogeneous causal-metapath network for gene-microbe-disease ranking."""

from .graph import (DISEASE, GENE, MICROBE, EntityType, HetGraph, LabeledTriplet,
                    SplitPlan, avg_node_degree, derive_positive_triplets,
                    load_edges, make_split, sample_negatives)
from .gradcheck import grad_check
from .metapath import (CausalSubgraph, Metapath, MetapathInstance,
                       ablation_metapaths, causal_metapaths, enumerate_instances,
                       extract_subgraph, instances_involving)
from .model import (ModelCache, ModelConfig, ModelParams, ForwardOutput,
                    forward, init_params)
from .optim import Adam
from .synthetic import generate_synthetic
from .tensor import Tape, Tensor
from .training import TrainConfig, TrainReport, loss_fn, run_cv, run_test, train
from .evaluation import rank_metrics, silhouette, stratify_by_degree

__version__ = "0.1.0"
