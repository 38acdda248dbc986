"""Scoring backbones (matrix factorization, LightGCN) and the BPR objective.

Both backbones read one shared embedding table. MF scores a pair by the
dot product of its raw rows. LightGCN first smooths the table over the
symmetrically normalized interaction graph and averages all layer
outputs, then scores by dot product. Gradients are computed analytically
and densely over the whole table, which mask growth needs; the LightGCN
backward pass is transposed propagation of the output gradient (the
adjacency is symmetric), so no autodiff is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .data import InteractionDataset, TrainBatch
from .embeddings import EmbeddingTable, SparseMask, apply_mask

BACKBONES = ("mf", "lightgcn")


def build_adjacency(ds: InteractionDataset) -> sp.csr_matrix:
    """Symmetrically normalized bipartite adjacency over users + items.

    Returns D^{-1/2} A D^{-1/2} where A has a 1 between each interacting
    user/item pair. Nodes with no edges get a 1 on the diagonal instead,
    so propagation leaves their embedding untouched rather than zeroing
    it.
    """
    n = ds.num_users + ds.num_items
    rows = ds.train_edges[:, 0]
    cols = ds.train_edges[:, 1] + ds.num_users
    ones = np.ones(len(rows))
    adj = sp.coo_matrix(
        (
            np.concatenate([ones, ones]),
            (np.concatenate([rows, cols]), np.concatenate([cols, rows])),
        ),
        shape=(n, n),
    ).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    isolated = deg == 0
    inv_sqrt = np.zeros(n)
    inv_sqrt[~isolated] = 1.0 / np.sqrt(deg[~isolated])
    d_half = sp.diags(inv_sqrt)
    norm = (d_half @ adj @ d_half).tocsr()
    if isolated.any():
        norm = (norm + sp.diags(isolated.astype(np.float64))).tocsr()
    return norm


@dataclass(eq=False)
class BackboneConfig:
    """Which scorer to use and its hyperparameters.

    layers only matters for lightgcn; zero layers degenerates to mf.
    l2_reg penalizes the base-table rows touched by each training triple.
    The normalized adjacency is carried here for lightgcn so scoring is
    self-contained.
    """

    kind: str = "mf"
    layers: int = 0
    l2_reg: float = 1e-4
    adjacency: sp.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in BACKBONES:
            raise ValueError(f"kind must be one of {BACKBONES}, got {self.kind!r}")
        if self.layers < 0:
            raise ValueError(f"layers must be >= 0, got {self.layers}")
        if self.l2_reg < 0:
            raise ValueError(f"l2_reg must be >= 0, got {self.l2_reg}")

    def propagates(self) -> bool:
        return self.kind == "lightgcn" and self.layers > 0

    @classmethod
    def for_dataset(cls, kind: str, layers: int, ds: InteractionDataset,
                    l2_reg: float = 1e-4) -> "BackboneConfig":
        adj = build_adjacency(ds) if kind == "lightgcn" and layers > 0 else None
        return cls(kind=kind, layers=layers, l2_reg=l2_reg, adjacency=adj)


def _weights_of(table) -> np.ndarray:
    return table.weights if isinstance(table, EmbeddingTable) else np.asarray(table)


def lightgcn_propagate(cfg: BackboneConfig, table) -> np.ndarray:
    """Mean of the layer-0..L embeddings under E_l = adj @ E_{l-1}."""
    weights = _weights_of(table)
    if cfg.layers == 0:
        return weights.copy()
    if cfg.adjacency is None:
        raise ValueError("lightgcn propagation needs cfg.adjacency")
    out = weights.copy()
    current = weights
    for _ in range(cfg.layers):
        current = cfg.adjacency @ current
        out += current
    out /= cfg.layers + 1
    return out


def combined_embeddings(cfg: BackboneConfig, table) -> np.ndarray:
    """Embeddings the scorer actually uses, given the (masked) table."""
    weights = _weights_of(table)
    if not cfg.propagates():
        return weights
    return lightgcn_propagate(cfg, weights)


def score(cfg: BackboneConfig, table: EmbeddingTable, u, i):
    """Dot-product score for user u and item i (scalars or index arrays)."""
    combined = combined_embeddings(cfg, table)
    e_u = combined[np.asarray(u)]
    e_i = combined[np.asarray(i) + table.num_users]
    out = np.einsum("...d,...d->...", e_u, e_i)
    return float(out) if np.ndim(out) == 0 else out


def score_matrix(combined: np.ndarray, num_users: int, users: np.ndarray) -> np.ndarray:
    """(len(users), num_items) score block for full ranking."""
    return combined[np.asarray(users)] @ combined[num_users:].T


def _scatter_add_rows(acc: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    """acc[idx] += vals with repeated indices, via sort + reduceat."""
    order = np.argsort(idx, kind="stable")
    idx_sorted = idx[order]
    vals_sorted = vals[order]
    starts = np.flatnonzero(np.concatenate([[True], idx_sorted[1:] != idx_sorted[:-1]]))
    sums = np.add.reduceat(vals_sorted, starts, axis=0)
    acc[idx_sorted[starts]] += sums


def bpr_loss_and_grad(
    cfg: BackboneConfig,
    table: EmbeddingTable,
    mask: SparseMask | None,
    batch: TrainBatch,
) -> tuple:
    """BPR loss and its dense gradient with respect to the (masked) table.

    Loss is mean softplus(-x) over the batch with x = e_u . (e_i - e_j)
    in combined space, plus l2_reg * mean(|e_u|^2 + |e_i|^2 + |e_j|^2)
    on the base rows of each triple. Scoring uses the masked table when a
    mask is given, but the gradient treats every table entry as free,
    including masked-out ones, so growth can rank them.
    """
    if len(batch) == 0:
        raise ValueError("batch is empty")
    weights = apply_mask(table, mask) if mask is not None else table.weights
    num_users = table.num_users
    users = batch.users
    pos = batch.pos_items + num_users
    neg = batch.neg_items + num_users
    b = len(batch)
    combined = combined_embeddings(cfg, weights)
    e_u = combined[users]
    e_i = combined[pos]
    e_j = combined[neg]
    x = np.einsum("bd,bd->b", e_u, e_i - e_j)
    # softplus(-x) = -ln sigma(x), stable for large |x|; non-finite inputs
    # are reported through the explicit check below, not as warnings
    with np.errstate(invalid="ignore", over="ignore"):
        rank_terms = np.logaddexp(0.0, -x)

    base_u = weights[users]
    base_i = weights[pos]
    base_j = weights[neg]
    reg_terms = cfg.l2_reg * (
        np.einsum("bd,bd->b", base_u, base_u)
        + np.einsum("bd,bd->b", base_i, base_i)
        + np.einsum("bd,bd->b", base_j, base_j)
    )
    per_triple = rank_terms + reg_terms
    finite = np.isfinite(per_triple)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise FloatingPointError(
            f"non-finite loss for triple {tuple(batch.triples[bad].tolist())}"
        )
    loss = float(per_triple.mean())

    coeff = (-expit(-x) / b)[:, None]
    grad_combined = np.zeros_like(weights)
    _scatter_add_rows(
        grad_combined,
        np.concatenate([users, pos, neg]),
        np.concatenate([coeff * (e_i - e_j), coeff * e_u, -coeff * e_u]),
    )
    if cfg.propagates():
        # the adjacency is symmetric, so the adjoint of propagation is
        # propagation applied to the output gradient
        grad = lightgcn_propagate(cfg, grad_combined)
    else:
        grad = grad_combined
    if cfg.l2_reg > 0:
        reg_coeff = 2.0 * cfg.l2_reg / b
        _scatter_add_rows(
            grad,
            np.concatenate([users, pos, neg]),
            reg_coeff * np.concatenate([base_u, base_i, base_j]),
        )
    return loss, grad
