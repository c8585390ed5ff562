"""Hybrid-membership latent distance model for network embedding and communities."""

__version__ = "0.1.0"

from .graph import (
    Graph,
    LabeledGraph,
    TrainTestSplit,
    generate_bipartite_blocks,
    generate_planted_partition,
    is_connected,
    load_edge_list,
    read_edge_list,
    sample_negative_pairs,
    serialize_edge_list,
    split_for_link_prediction,
)
from .metrics import (
    ChampionReport,
    ari,
    auc_pr,
    auc_roc,
    champion_report,
    hard_assignments,
    nmi,
    reorder_adjacency,
    score_pairs,
)
from .model import (
    ModelConfig,
    ModelState,
    embeddings,
    eigenmodel_log_rate,
    gradient,
    init_state,
    load_checkpoint,
    log_likelihood,
    log_likelihood_sampled,
    log_rate,
    save_checkpoint,
)
from .train import SweepRecord, TrainConfig, TrainedModel, auto_select_identifiable, fit, sweep_delta
