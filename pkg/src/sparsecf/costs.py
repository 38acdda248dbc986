"""Multiply-accumulate and memory cost model.

All figures are derived counts, not measurements, so they are exact and
reproducible. Sparse costs are written literally as dense_cost * (1 - s)
so the sparse/dense ratio is (1 - s) down to the last bit. The backward
pass is counted as twice the forward pass; that convention is declared
here rather than inferred from hardware.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass
class CostReport:
    """Training/inference MACs plus the parameter storage estimate."""

    macs_train: float
    macs_infer: float
    memory_bytes: int

    def as_dict(self) -> dict:
        return {
            "macs_train": self.macs_train,
            "macs_infer": self.macs_infer,
            "memory_bytes": self.memory_bytes,
        }


def macs_inference(
    backbone: str,
    num_users: int,
    num_items: int,
    dim: int,
    num_layers: int = 0,
    nnz_adj: int = 0,
    sparsity: float = 0.0,
) -> float:
    """MACs for one full evaluation: propagation plus all-pairs scoring.

    lightgcn: (nnz_adj * L + N * M) * d * (1 - s); mf: N * M * d * (1 - s).
    """
    if min(num_users, num_items, dim) < 0 or num_layers < 0 or nnz_adj < 0:
        raise ValueError("all counts must be >= 0")
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must be in [0, 1), got {sparsity}")
    dense = num_users * num_items * dim
    if backbone == "lightgcn":
        dense = (nnz_adj * num_layers + num_users * num_items) * dim
    return dense * (1.0 - sparsity)


def macs_forward_batch(
    backbone: str,
    dim: int,
    batch_size: int,
    num_layers: int = 0,
    nnz_adj: int = 0,
) -> float:
    """Dense forward MACs for one BPR training batch.

    Two d-length dot products per triple, plus full-table propagation for
    graph backbones (nnz_adj * L * d).
    """
    forward = 2.0 * dim * batch_size
    if backbone == "lightgcn":
        forward += nnz_adj * num_layers * dim
    return forward


def macs_training(
    forward_per_iter: float,
    iterations: int,
    sparsity: float = 0.0,
    exploration_iterations: int = 0,
) -> float:
    """Cumulative training MACs over executed iterations.

    Each learning iteration costs 3 * forward * (1 - s) (forward plus a
    backward counted at 2x forward, all scaled by the active fraction).
    Each exploration iteration replaces the learning step and costs one
    dense forward + backward, since growth scoring ignores the mask.
    """
    if iterations < 0 or exploration_iterations < 0:
        raise ValueError("iteration counts must be >= 0")
    per_sparse = 3.0 * forward_per_iter * (1.0 - sparsity)
    per_dense = 3.0 * forward_per_iter
    return per_sparse * iterations + per_dense * exploration_iterations


def memory_bytes(active_count: int, total_entries: int, bytes_per_weight: int = 8) -> int:
    """Storage for the sparse table: active weights plus the mask bitset."""
    if active_count < 0 or total_entries < active_count:
        raise ValueError("need 0 <= active_count <= total_entries")
    return active_count * bytes_per_weight + math.ceil(total_entries / 8)
