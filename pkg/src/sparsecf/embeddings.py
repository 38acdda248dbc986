"""Embedding table, sparsity mask, and masked optimizer steps.

The table stores user and item embeddings in one (num_users + num_items,
dim) float64 array, users first. A mask of the same shape marks which
entries are trainable; masked-out entries are held at exactly zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "sparse-embedding-v1"


@dataclass
class EmbeddingTable:
    """Dense backing store for user/item embeddings (users then items)."""

    num_users: int
    num_items: int
    dim: int
    weights: np.ndarray  # (num_users + num_items, dim) float64

    @property
    def num_rows(self) -> int:
        return self.num_users + self.num_items

    @property
    def total_entries(self) -> int:
        return self.weights.size

    def user_rows(self) -> np.ndarray:
        return self.weights[: self.num_users]

    def item_rows(self) -> np.ndarray:
        return self.weights[self.num_users :]

    def item_row_index(self, items: np.ndarray) -> np.ndarray:
        return np.asarray(items) + self.num_users


def init_table(
    num_users: int,
    num_items: int,
    dim: int,
    rng: np.random.Generator,
    scale: float = 0.01,
) -> EmbeddingTable:
    """Create a table with i.i.d. normal entries of the given std."""
    if num_users < 1 or num_items < 1 or dim < 1:
        raise ValueError("num_users, num_items and dim must all be >= 1")
    weights = rng.normal(0.0, scale, size=(num_users + num_items, dim))
    return EmbeddingTable(num_users, num_items, dim, weights)


@dataclass
class SparseMask:
    """Binary mask over the embedding table; True marks active entries."""

    bits: np.ndarray  # bool, same shape as the table weights
    target_sparsity: float | None = None

    @property
    def active_count(self) -> int:
        return int(self.bits.sum())

    @property
    def total(self) -> int:
        return self.bits.size

    @property
    def sparsity(self) -> float:
        return 1.0 - self.active_count / self.total

    def copy(self) -> "SparseMask":
        return SparseMask(self.bits.copy(), self.target_sparsity)


def target_active_count(total: int, sparsity: float) -> int:
    """Active-entry budget at a given sparsity: round(total * (1 - s)).

    Uses banker's rounding, matching Python's round.
    """
    return round(total * (1.0 - sparsity))


def init_mask(shape: tuple, sparsity: float, rng: np.random.Generator) -> SparseMask:
    """Random mask with exactly round(total * (1 - s)) active positions."""
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must be in [0, 1), got {sparsity}")
    total = int(np.prod(shape))
    k = target_active_count(total, sparsity)
    if k < 1:
        raise ValueError(f"sparsity {sparsity} leaves no active entries for {total} total")
    bits = np.zeros(total, dtype=bool)
    bits[rng.choice(total, size=k, replace=False)] = True
    return SparseMask(bits.reshape(shape), target_sparsity=sparsity)


def apply_mask(table: EmbeddingTable, mask: SparseMask) -> np.ndarray:
    """Masked view of the weights: inactive entries read as zero."""
    return table.weights * mask.bits


def zero_inactive(table: EmbeddingTable, mask: SparseMask) -> None:
    """Force inactive entries of the backing store to exactly zero."""
    table.weights[~mask.bits] = 0.0


@dataclass
class OptimizerState:
    """SGD or Adam state over the full table.

    Adam moment buffers live densely alongside the table; masked steps
    keep moments of inactive entries at zero so regrown entries restart
    from a cold optimizer state.
    """

    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"kind must be 'sgd' or 'adam', got {self.kind!r}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")

    def _ensure_buffers(self, shape):
        if self.kind == "adam" and self.m is None:
            self.m = np.zeros(shape)
            self.v = np.zeros(shape)

    def reset_positions(self, bits: np.ndarray) -> None:
        """Clear Adam moments at the given positions (e.g. regrown entries)."""
        if self.kind == "adam" and self.m is not None:
            self.m[bits] = 0.0
            self.v[bits] = 0.0


def masked_step(
    table: EmbeddingTable,
    grad: np.ndarray,
    mask: SparseMask,
    opt: OptimizerState,
) -> None:
    """Apply one optimizer update to the active entries only.

    The gradient is dense over the table; contributions at inactive
    positions are discarded and those entries remain exactly zero.
    """
    if grad.shape != table.weights.shape:
        raise ValueError(f"grad shape {grad.shape} != table shape {table.weights.shape}")
    if not np.isfinite(grad).all():
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(grad))[0])
        raise FloatingPointError(f"non-finite gradient at position {bad}")
    bits = mask.bits
    if opt.kind == "sgd":
        table.weights -= opt.lr * (grad * bits)
        table.weights[~bits] = 0.0
        opt.step += 1
        return
    opt._ensure_buffers(table.weights.shape)
    opt.step += 1
    g = grad * bits
    opt.m = (opt.beta1 * opt.m + (1.0 - opt.beta1) * g) * bits
    opt.v = (opt.beta2 * opt.v + (1.0 - opt.beta2) * g * g) * bits
    m_hat = opt.m / (1.0 - opt.beta1**opt.step)
    v_hat = opt.v / (1.0 - opt.beta2**opt.step)
    table.weights -= opt.lr * bits * m_hat / (np.sqrt(v_hat) + opt.eps)
    table.weights[~bits] = 0.0


def save_checkpoint(path, table: EmbeddingTable, mask: SparseMask) -> None:
    """Write active entries as (row, col, value) triples in row-major order.

    Values are serialized with repr so floats round-trip exactly and the
    byte stream is deterministic for identical inputs.
    """
    rows, cols = np.nonzero(mask.bits)
    values = table.weights[rows, cols]
    sparsity = mask.target_sparsity
    if sparsity is None:
        sparsity = 1.0 - len(rows) / table.total_entries
    lines = [
        "{",
        f'  "format": "{CHECKPOINT_FORMAT}",',
        f'  "num_users": {table.num_users},',
        f'  "num_items": {table.num_items},',
        f'  "dim": {table.dim},',
        f'  "sparsity": {float(sparsity)!r},',
        '  "active": [',
    ]
    body = ",\n".join(
        f"    [{r}, {c}, {v!r}]" for r, c, v in zip(rows.tolist(), cols.tolist(), values.tolist())
    )
    lines.append(body)
    lines.append("  ]")
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[EmbeddingTable, SparseMask]:
    """Read a checkpoint back into a table and mask."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unrecognized checkpoint format {payload.get('format')!r}")
    num_users = payload["num_users"]
    num_items = payload["num_items"]
    dim = payload["dim"]
    weights = np.zeros((num_users + num_items, dim))
    bits = np.zeros_like(weights, dtype=bool)
    for r, c, v in payload["active"]:
        weights[r, c] = v
        bits[r, c] = True
    mask = SparseMask(bits, target_sparsity=payload.get("sparsity"))
    return EmbeddingTable(num_users, num_items, dim, weights), mask
