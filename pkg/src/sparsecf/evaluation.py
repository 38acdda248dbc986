"""Full-ranking evaluation and popularity/sparsity profiling.

Every test user is ranked against the full item catalog. Items already
seen in training are skipped without disturbing the ranks of the
remaining items, and score ties break toward the lower item index so
results are reproducible across runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .data import InteractionDataset
from .embeddings import EmbeddingTable, SparseMask, apply_mask
from .models import BackboneConfig, build_adjacency, combined_embeddings, score_matrix

SIDES = ("users", "items")


@dataclass
class MetricsReport:
    """Mean ranking quality over the users that have test interactions."""

    k: int
    recall: float
    ndcg: float
    hr: float
    users_evaluated: int

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "recall": self.recall,
            "ndcg": self.ndcg,
            "hr": self.hr,
            "users_evaluated": self.users_evaluated,
        }


@dataclass
class SparsityProfile:
    """Row sparsity of one table side, bucketed by train-set popularity.

    Rows are sorted ascending by interaction count and split into
    near-equal groups (sizes differ by at most one); larger group ids
    hold more popular rows.
    """

    side: str
    num_groups: int
    mean_sparsity: list = field(default_factory=list)
    mean_popularity: list = field(default_factory=list)
    group_sizes: list = field(default_factory=list)


def _user_item_lists(edges: np.ndarray, num_users: int) -> tuple:
    """Items per user as (sorted-by-user items, indptr), CSR style."""
    order = np.argsort(edges[:, 0], kind="stable")
    items = edges[order, 1]
    counts = np.bincount(edges[:, 0], minlength=num_users)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return items, indptr


def _idcg_table(k: int) -> np.ndarray:
    """idcg[m] = best possible DCG with m relevant items, m in [0, k]."""
    gains = 1.0 / np.log2(np.arange(1, k + 1) + 1.0)
    return np.concatenate([[0.0], np.cumsum(gains)])


def evaluate_combined(
    combined: np.ndarray,
    ds: InteractionDataset,
    k: int,
    user_batch: int = 512,
) -> MetricsReport:
    """Rank with precomputed scorer-ready embeddings (masked, propagated)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if ds.num_test == 0:
        raise ValueError("dataset has no test interactions")
    test_users = np.unique(ds.test_edges[:, 0])
    train_items, train_ptr = _user_item_lists(ds.train_edges, ds.num_users)
    test_items, test_ptr = _user_item_lists(ds.test_edges, ds.num_users)
    idcg = _idcg_table(k)

    recall_sum = 0.0
    ndcg_sum = 0.0
    hr_sum = 0.0
    for start in range(0, len(test_users), user_batch):
        chunk = test_users[start : start + user_batch]
        scores = score_matrix(combined, ds.num_users, chunk)
        excluded = np.zeros_like(scores, dtype=bool)
        relevant = np.zeros_like(scores, dtype=bool)
        for row, u in enumerate(chunk):
            excluded[row, train_items[train_ptr[u] : train_ptr[u + 1]]] = True
            relevant[row, test_items[test_ptr[u] : test_ptr[u + 1]]] = True
        order = np.argsort(-scores, axis=1, kind="stable")
        ex_sorted = np.take_along_axis(excluded, order, axis=1)
        rel_sorted = np.take_along_axis(relevant, order, axis=1)
        # rank among the items that remain after exclusion, 1-based
        eff_rank = np.cumsum(~ex_sorted, axis=1)
        hit = rel_sorted & ~ex_sorted & (eff_rank <= k)
        dcg = np.where(hit, 1.0 / np.log2(np.maximum(eff_rank, 1) + 1.0), 0.0).sum(axis=1)
        n_test = relevant.sum(axis=1)
        hits = hit.sum(axis=1)
        recall_sum += float((hits / n_test).sum())
        ndcg_sum += float((dcg / idcg[np.minimum(n_test, k)]).sum())
        hr_sum += float((hits > 0).sum())
    n = len(test_users)
    return MetricsReport(
        k=k,
        recall=recall_sum / n,
        ndcg=ndcg_sum / n,
        hr=hr_sum / n,
        users_evaluated=n,
    )


def evaluate(
    cfg: BackboneConfig,
    table: EmbeddingTable,
    mask: SparseMask,
    ds: InteractionDataset,
    k: int,
    user_batch: int = 512,
) -> MetricsReport:
    """Recall@k, NDCG@k and HR@k under full ranking with train exclusion.

    Scores come from the masked table (propagated first for graph
    backbones). Users without test interactions are skipped.
    """
    if cfg.propagates() and cfg.adjacency is None:
        cfg = BackboneConfig(cfg.kind, cfg.layers, cfg.l2_reg, build_adjacency(ds))
    combined = combined_embeddings(cfg, apply_mask(table, mask))
    return evaluate_combined(combined, ds, k, user_batch=user_batch)


def sparsity_profile(
    mask: SparseMask,
    ds: InteractionDataset,
    side: str = "items",
    num_groups: int = 10,
) -> SparsityProfile:
    """Mean row sparsity per popularity bucket on one side of the graph.

    Rows sort ascending by train interaction count and split into
    num_groups buckets whose sizes differ by at most one. Row sparsity is
    the masked-out fraction of that row's entries.
    """
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")
    if side == "users":
        bits = mask.bits[: ds.num_users]
    else:
        bits = mask.bits[ds.num_users :]
    if not 1 <= num_groups <= len(bits):
        raise ValueError(f"num_groups must be in [1, {len(bits)}], got {num_groups}")
    popularity = ds.train_degrees(side).astype(np.float64)
    row_sparsity = 1.0 - bits.sum(axis=1) / bits.shape[1]
    order = np.argsort(popularity, kind="stable")
    profile = SparsityProfile(side=side, num_groups=num_groups)
    for rows in np.array_split(order, num_groups):
        profile.mean_sparsity.append(float(row_sparsity[rows].mean()))
        profile.mean_popularity.append(float(popularity[rows].mean()))
        profile.group_sizes.append(len(rows))
    return profile


def popularity_sparsity_correlation(profile: SparsityProfile):
    """Spearman correlation between group popularity rank and mean sparsity.

    Returns None when undefined (fewer than 2 groups or a constant
    profile, e.g. a fully dense mask).
    """
    if profile.num_groups < 2:
        return None
    sparsities = np.asarray(profile.mean_sparsity)
    ranks = np.arange(profile.num_groups)
    if np.ptp(sparsities) == 0.0 or np.ptp(profile.mean_popularity) == 0.0:
        return None
    rho = spearmanr(ranks, sparsities).statistic
    return float(rho) if np.isfinite(rho) else None
