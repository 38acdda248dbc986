"""Fixed-budget mask exploration: magnitude pruning and gradient growth.

Every ``delta_t`` iterations a fraction rho_t of the active entries is
pruned by absolute weight and the same number of inactive entries is
regrown at the positions of largest absolute gradient, keeping the
active-entry budget constant for the whole run. Between explorations the
mask is frozen. Static baselines (random prune at init, one-shot
magnitude prune of a dense table) share the same budget rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embeddings import (
    EmbeddingTable,
    OptimizerState,
    SparseMask,
    init_mask,
    target_active_count,
)

DECAYS = ("cosine", "linear", "none")


@dataclass(frozen=True)
class ExplorationSchedule:
    """When mask updates happen and how aggressive they are.

    rho0 is the initial update ratio, delta_t the interval between mask
    updates, t_end the final training iteration. delta_t > t_end (or
    rho0 = 0) disables exploration entirely, which reduces training to
    the static random-mask baseline.
    """

    rho0: float
    delta_t: int
    t_end: int
    decay: str = "cosine"

    def __post_init__(self):
        if not 0.0 <= self.rho0 < 1.0:
            raise ValueError(f"rho0 must be in [0, 1), got {self.rho0}")
        if self.delta_t < 1:
            raise ValueError(f"delta_t must be >= 1, got {self.delta_t}")
        if self.t_end < 1:
            raise ValueError(f"t_end must be >= 1, got {self.t_end}")
        if self.decay not in DECAYS:
            raise ValueError(f"decay must be one of {DECAYS}, got {self.decay!r}")

    def exploration_iterations(self) -> list:
        """All t in (0, t_end) where a mask update fires."""
        return list(range(self.delta_t, self.t_end, self.delta_t))


def update_ratio(sched: ExplorationSchedule, t: int) -> float:
    """Fraction of active entries to replace at iteration t.

    Cosine decay anneals rho0 down to zero at t_end:
    rho_t = rho0/2 * (1 + cos(pi * t / t_end)).
    """
    if not 0 <= t <= sched.t_end:
        raise ValueError(f"t must be in [0, {sched.t_end}], got {t}")
    if sched.decay == "cosine":
        return sched.rho0 / 2.0 * (1.0 + math.cos(math.pi * t / sched.t_end))
    if sched.decay == "linear":
        return sched.rho0 * (1.0 - t / sched.t_end)
    return sched.rho0


def is_exploration_iteration(sched: ExplorationSchedule, t: int) -> bool:
    return t % sched.delta_t == 0 and 0 < t < sched.t_end


@dataclass
class ExplorationEvent:
    """Record of one mask update: which flat positions moved and why."""

    t: int
    rho_t: float
    pruned_positions: np.ndarray  # flat indices, ascending
    grown_positions: np.ndarray  # flat indices, ascending
    sparsity_after: float

    @property
    def count(self) -> int:
        return len(self.pruned_positions)

    def log_entry(self, verbose: bool = False) -> dict:
        """JSON-ready record; counts by default, position lists if verbose."""
        return {
            "t": self.t,
            "rho_t": self.rho_t,
            "pruned": self.pruned_positions.tolist() if verbose else self.count,
            "grown": self.grown_positions.tolist() if verbose else len(self.grown_positions),
            "sparsity_after": self.sparsity_after,
        }


def select_prune(table: EmbeddingTable, mask: SparseMask, rho_t: float) -> np.ndarray:
    """Flat positions of the floor(rho_t * active) smallest-|weight| active
    entries.

    Ties resolve toward the smaller row-major index. Result is ascending.
    """
    if not 0.0 <= rho_t <= 1.0:
        raise ValueError(f"rho_t must be in [0, 1], got {rho_t}")
    active = np.flatnonzero(mask.bits.ravel())
    k = math.floor(rho_t * len(active))
    if k == 0:
        return np.empty(0, dtype=np.int64)
    mags = np.abs(table.weights.ravel()[active])
    order = np.argsort(mags, kind="stable")
    return np.sort(active[order[:k]])


def select_grow(
    grad: np.ndarray, mask: SparseMask, k: int, exclude: np.ndarray | None = None
) -> np.ndarray:
    """Flat positions of the k inactive entries with largest |gradient|.

    Positions listed in exclude (the ones pruned in the same event) are
    not eligible. Ties resolve toward the smaller row-major index. Result
    is ascending.
    """
    inactive = np.flatnonzero(~mask.bits.ravel())
    if exclude is not None and len(exclude):
        inactive = np.setdiff1d(inactive, exclude, assume_unique=False)
    if k > len(inactive):
        raise ValueError(f"cannot grow {k} entries, only {len(inactive)} eligible")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    mags = np.abs(grad.ravel()[inactive])
    order = np.argsort(-mags, kind="stable")
    return np.sort(inactive[order[:k]])


def exploration_step(
    table: EmbeddingTable,
    mask: SparseMask,
    opt: OptimizerState | None,
    sched: ExplorationSchedule,
    t: int,
    grad_fn,
) -> ExplorationEvent:
    """Replace floor(rho_t * active) mask positions in place.

    Prunes first (weights zeroed, bits cleared), then asks grad_fn for
    one dense gradient on a fresh batch and grows at the largest-|grad|
    inactive positions outside the just-pruned set. Grown entries start
    at zero with fresh optimizer moments. The active count is identical
    before and after.
    """
    rho_t = update_ratio(sched, t)
    active_before = mask.active_count
    pruned = select_prune(table, mask, rho_t)
    flat_bits = mask.bits.ravel()
    flat_w = table.weights.ravel()
    flat_bits[pruned] = False
    flat_w[pruned] = 0.0
    grad = grad_fn()
    if not np.isfinite(grad).all():
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(grad))[0])
        raise FloatingPointError(f"non-finite growth gradient at position {bad}")
    grown = select_grow(grad, mask, len(pruned), exclude=pruned)
    flat_bits[grown] = True
    flat_w[grown] = 0.0
    if opt is not None and len(grown):
        grown_bits = np.zeros(mask.total, dtype=bool)
        grown_bits[grown] = True
        opt.reset_positions(grown_bits.reshape(mask.bits.shape))
    assert mask.active_count == active_before, "mask update changed the budget"
    return ExplorationEvent(
        t=t,
        rho_t=rho_t,
        pruned_positions=pruned,
        grown_positions=grown,
        sparsity_after=mask.sparsity,
    )


def random_prune_once(table: EmbeddingTable, sparsity: float, rng: np.random.Generator) -> SparseMask:
    """Static baseline: prune uniformly at random once, then never again."""
    return init_mask(table.weights.shape, sparsity, rng)


def one_shot_magnitude_prune(table: EmbeddingTable, sparsity: float) -> SparseMask:
    """Keep the round(total * (1 - s)) largest-|weight| entries of a table.

    Ties keep the smaller row-major index.
    """
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must be in [0, 1), got {sparsity}")
    total = table.total_entries
    keep = target_active_count(total, sparsity)
    if keep < 1:
        raise ValueError(f"sparsity {sparsity} keeps no entries")
    order = np.argsort(-np.abs(table.weights.ravel()), kind="stable")
    bits = np.zeros(total, dtype=bool)
    bits[order[:keep]] = True
    return SparseMask(bits.reshape(table.weights.shape), target_sparsity=sparsity)
