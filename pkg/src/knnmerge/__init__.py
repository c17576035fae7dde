"""Approximate k-NN graph construction by merging subgraphs."""

from .core import (
    KnnGraph,
    Metric,
    Neighbor,
    NeighborList,
    SubsetMap,
    concat_graphs,
    distance,
    merge_graph_rows,
    merge_sorted_lists,
    ordered_insert,
    reverse_graph,
)
from .datasets import VectorSet, partition, read_graph, read_vecs, synth_dataset, write_graph, write_vecs
from .nndescent import NNDescentParams, nn_descent_build

__version__ = "0.1.0"
