"""Differentially private summaries of large sparse count tables.

Shortcut generators produce filtered, threshold-sampled and
priority-sampled summaries of the geometric-noised table directly from
the nonzero cells, without materializing the m noisy cells.
"""

from .dyadic import (consistency_prune, decompose_range, dyadic_summary, dyadic_transform,
                     filter_prune_priority)
from .noise import NoiseSpec, RngHandle, clamp_nonnegative, sample_geometric
from .query import Query, answer, relative_error
from .sketch import PrivateSketch, build_private_sketch, sketch_point_estimate
from .summarizers import (choose_tau, choose_theta, conditional_cdf, filter_priority_shortcut,
                          filter_shortcut, filter_threshold_shortcut, geometric_full,
                          inclusion_probability, laborious_path, priority_shortcut,
                          summarize, threshold_shortcut)
from .summary import Summary, read_summary, write_summary
from .table import DomainSpec, ExperimentProfile, SparseTable, load_sparse_table, synth_table

__version__ = "0.1.0"

__all__ = [
    "DomainSpec", "ExperimentProfile", "NoiseSpec", "PrivateSketch", "Query", "RngHandle",
    "SparseTable", "Summary", "answer", "build_private_sketch", "choose_tau", "choose_theta",
    "clamp_nonnegative", "conditional_cdf", "consistency_prune", "decompose_range",
    "dyadic_summary", "dyadic_transform", "filter_priority_shortcut", "filter_shortcut",
    "filter_prune_priority", "filter_threshold_shortcut", "geometric_full",
    "inclusion_probability", "laborious_path", "load_sparse_table", "priority_shortcut",
    "read_summary", "relative_error", "sample_geometric", "sketch_point_estimate", "summarize",
    "synth_table", "threshold_shortcut", "write_summary",
]
