"""Random-projection heterogeneous graph learning at desk scale."""

from .hetgraph import (
    CsrAdjacency,
    EdgeType,
    FeatureTable,
    GraphError,
    HeteroGraph,
    VertexType,
    build_graph,
    degree_normalized_product,
    random_embeddings,
)
from .relations import (
    Relation,
    enumerate_relations,
    even_odd_relations,
    local_relations,
    oracle_aggregate,
    provenance_ledger,
)
from .propagation import CollectedNeighborInfo, collect_even, collect_odd, rwnc_collect
from .squashing import RpConfig, RpWeights, l2_normalize_rows, make_rp_weights, squash
from .precompute import GroupTensor, PrecomputeConfig, load_groups, run_precompute, save_groups
from .encoder import EncoderConfig, init_params, loss_and_grads
from .trainer import Metrics, TrainConfig, bench_epoch_time, evaluate, train

__version__ = "0.1.0"
