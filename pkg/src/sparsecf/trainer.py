"""Training orchestration: sparse learning steps, mask exploration, logging.

One run executes exactly t_end mini-batch iterations. Under the dynamic
method, iterations that land on the exploration interval update the mask
instead of the weights; all other iterations sample a batch, take the
ranking gradient and apply a masked optimizer step. Everything a run
writes (metrics.csv, exploration.jsonl, checkpoint.final, config.json,
split_manifest.json) is byte-deterministic given the config and seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .costs import CostReport, macs_forward_batch, macs_inference, macs_training, memory_bytes
from .data import InteractionDataset, sample_batch
from .embeddings import (
    EmbeddingTable,
    OptimizerState,
    SparseMask,
    apply_mask,
    init_mask,
    init_table,
    load_checkpoint,
    masked_step,
    save_checkpoint,
    zero_inactive,
)
from .evaluation import evaluate_combined
from .models import BackboneConfig, bpr_loss_and_grad, build_adjacency, combined_embeddings
from .sparsifier import (
    ExplorationSchedule,
    exploration_step,
    is_exploration_iteration,
    one_shot_magnitude_prune,
)

METHODS = ("dsl", "dense", "rp", "omp")

METRICS_COLUMNS = (
    "run_id",
    "iteration",
    "k",
    "recall",
    "ndcg",
    "hr",
    "sparsity",
    "macs_train_cum",
    "macs_infer",
)


class TrainingAborted(RuntimeError):
    """Raised when a non-finite loss or gradient stops a run early.

    The run directory (when one was requested) retains the last good
    checkpoint and all rows logged before the abort.
    """

    def __init__(self, iteration: int, message: str, artifacts=None):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
        self.artifacts = artifacts


@dataclass
class RunConfig:
    """Everything that determines a run, bar the dataset itself."""

    method: str = "dsl"
    backbone: str = "mf"
    num_layers: int = 3
    dim: int = 64
    sparsity: float = 0.5
    rho0: float = 0.3
    delta_t: int = 2000
    t_end: int = 10000
    decay: str = "cosine"
    optimizer: str = "adam"
    lr: float = 1e-3
    l2_reg: float = 1e-4
    batch_size: int = 1024
    eval_every: int | None = None  # defaults to delta_t
    eval_k: int = 20
    seed: int = 0
    init_scale: float = 0.01
    fine_tune_iters: int | None = None  # omp only; defaults to t_end
    dense_checkpoint: str | None = None  # omp: reuse an existing dense table
    log_positions: bool = False
    bytes_per_weight: int = 8
    data_dir: str | None = None
    run_id: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0.0 <= self.sparsity < 1.0:
            raise ValueError(f"sparsity must be in [0, 1), got {self.sparsity}")
        if self.t_end < 1:
            raise ValueError(f"t_end must be >= 1, got {self.t_end}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every is not None and self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")

    @property
    def effective_sparsity(self) -> float:
        """Dense runs ignore the sparsity field."""
        return 0.0 if self.method == "dense" else self.sparsity

    def schedule(self) -> ExplorationSchedule:
        return ExplorationSchedule(self.rho0, self.delta_t, self.t_end, self.decay)

    def resolved(self) -> dict:
        """Config dict with every default filled in; what config.json holds."""
        out = asdict(self)
        out["run_id"] = self.resolve_run_id()
        out["eval_every"] = self.eval_every if self.eval_every is not None else self.delta_t
        if self.method == "omp":
            out["fine_tune_iters"] = (
                self.fine_tune_iters if self.fine_tune_iters is not None else self.t_end
            )
        return out

    def resolve_run_id(self) -> str:
        if self.run_id is not None:
            return self.run_id
        payload = {k: v for k, v in asdict(self).items() if k != "run_id"}
        digest = hashlib.sha1(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:8]
        return f"{self.method}-s{self.effective_sparsity:g}-seed{self.seed}-{digest}"


@dataclass
class RunArtifacts:
    """Everything a finished (or aborted) run produced, in memory."""

    run_id: str
    config: dict
    table: EmbeddingTable
    mask: SparseMask
    metrics: list = field(default_factory=list)  # metrics.csv rows as dicts
    events: list = field(default_factory=list)
    losses: list = field(default_factory=list)  # (t, loss) at learning iterations
    cost: CostReport | None = None
    run_dir: Path | None = None
    aborted: bool = False

    @property
    def final_metrics(self) -> dict:
        return self.metrics[-1] if self.metrics else {}


def _format_metric(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path, rows) -> None:
    lines = [",".join(METRICS_COLUMNS)]
    for row in rows:
        lines.append(",".join(_format_metric(row[c]) for c in METRICS_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_run_dir(out_dir, art: RunArtifacts, ds: InteractionDataset, cfg: RunConfig) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(art.config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_metrics_csv(out / "metrics.csv", art.metrics)
    with (out / "exploration.jsonl").open("w", encoding="utf-8") as fh:
        for ev in art.events:
            fh.write(json.dumps(ev.log_entry(cfg.log_positions), sort_keys=True) + "\n")
    save_checkpoint(out / "checkpoint.final", art.table, art.mask)
    manifest = {
        "num_users": ds.num_users,
        "num_items": ds.num_items,
        "train_edges": ds.num_train,
        "test_edges": ds.num_test,
        "data_dir": cfg.data_dir,
    }
    (out / "split_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    art.run_dir = out


class _RunState:
    """Mutable pieces shared by the training phases of one run."""

    def __init__(self, cfg: RunConfig, ds: InteractionDataset):
        self.cfg = cfg
        self.ds = ds
        adj = None
        if cfg.backbone == "lightgcn" and cfg.num_layers > 0:
            adj = build_adjacency(ds)
        self.bb = BackboneConfig(cfg.backbone, cfg.num_layers, cfg.l2_reg, adj)
        self.nnz_adj = int(adj.nnz) if adj is not None else 0
        self.fwd = macs_forward_batch(
            cfg.backbone, cfg.dim, cfg.batch_size, cfg.num_layers, self.nnz_adj
        )
        ss = np.random.SeedSequence(cfg.seed)
        table_ss, mask_ss, batch_ss = ss.spawn(3)
        self.table_rng = np.random.default_rng(table_ss)
        self.mask_rng = np.random.default_rng(mask_ss)
        self.batch_rng = np.random.default_rng(batch_ss)
        self.macs_cum = 0.0

    def grad_on_fresh_batch(self, table: EmbeddingTable, mask: SparseMask):
        batch = sample_batch(self.ds, self.cfg.batch_size, self.batch_rng)
        return bpr_loss_and_grad(self.bb, table, mask, batch)

    def snapshot_metrics(self, t: int, table: EmbeddingTable, mask: SparseMask, run_id: str):
        combined = combined_embeddings(self.bb, apply_mask(table, mask))
        report = evaluate_combined(combined, self.ds, self.cfg.eval_k)
        s = mask.sparsity
        return {
            "run_id": run_id,
            "iteration": t,
            "k": report.k,
            "recall": report.recall,
            "ndcg": report.ndcg,
            "hr": report.hr,
            "sparsity": s,
            "macs_train_cum": self.macs_cum,
            "macs_infer": macs_inference(
                self.cfg.backbone,
                self.ds.num_users,
                self.ds.num_items,
                self.cfg.dim,
                self.cfg.num_layers,
                self.nnz_adj,
                s,
            ),
        }


def _run_phase(
    state: _RunState,
    art: RunArtifacts,
    table: EmbeddingTable,
    mask: SparseMask,
    opt: OptimizerState,
    t_start: int,
    iterations: int,
    explore: bool,
    eval_every: int,
    snapshot_hook=None,
) -> None:
    """Run iterations t_start+1 .. t_start+iterations, appending to art."""
    cfg = state.cfg
    sched = cfg.schedule() if explore else None
    t_final = t_start + iterations
    for t in range(t_start + 1, t_final + 1):
        try:
            if explore and is_exploration_iteration(sched, t - t_start):

                def grad_fn():
                    return state.grad_on_fresh_batch(table, mask)[1]

                event = exploration_step(table, mask, opt, sched, t - t_start, grad_fn)
                art.events.append(event)
                state.macs_cum += macs_training(state.fwd, 0, 0.0, exploration_iterations=1)
            else:
                loss, grad = state.grad_on_fresh_batch(table, mask)
                masked_step(table, grad, mask, opt)
                art.losses.append((t, loss))
                state.macs_cum += macs_training(state.fwd, 1, mask.sparsity)
        except FloatingPointError as exc:
            art.aborted = True
            raise TrainingAborted(t, str(exc), art) from exc
        if t % eval_every == 0 or t == t_final:
            art.metrics.append(state.snapshot_metrics(t, table, mask, art.run_id))
            if snapshot_hook is not None:
                snapshot_hook(t, table, mask)


def train(
    cfg: RunConfig,
    ds: InteractionDataset,
    out_dir=None,
    snapshot_hook=None,
) -> RunArtifacts:
    """Run one training job end to end and return its artifacts.

    Writes the run directory when out_dir is given. The omp method is
    handled by run_omp_pipeline; all other methods run a single phase of
    exactly t_end iterations. Deterministic given cfg and seed.
    """
    if cfg.method == "omp":
        return run_omp_pipeline(cfg, ds, out_dir=out_dir, snapshot_hook=snapshot_hook)
    state = _RunState(cfg, ds)
    table = init_table(ds.num_users, ds.num_items, cfg.dim, state.table_rng, cfg.init_scale)
    if cfg.method == "dense":
        mask = SparseMask(np.ones_like(table.weights, dtype=bool), target_sparsity=0.0)
    else:
        mask = init_mask(table.weights.shape, cfg.sparsity, state.mask_rng)
        zero_inactive(table, mask)
    opt = OptimizerState(cfg.optimizer, cfg.lr)
    resolved = cfg.resolved()
    art = RunArtifacts(run_id=resolved["run_id"], config=resolved, table=table, mask=mask)
    eval_every = resolved["eval_every"]
    try:
        _run_phase(
            state,
            art,
            table,
            mask,
            opt,
            t_start=0,
            iterations=cfg.t_end,
            explore=cfg.method == "dsl",
            eval_every=eval_every,
            snapshot_hook=snapshot_hook,
        )
    except TrainingAborted:
        if out_dir is not None:
            _write_run_dir(out_dir, art, ds, cfg)
        raise
    art.cost = CostReport(
        macs_train=state.macs_cum,
        macs_infer=art.metrics[-1]["macs_infer"],
        memory_bytes=memory_bytes(mask.active_count, mask.total, cfg.bytes_per_weight),
    )
    if out_dir is not None:
        _write_run_dir(out_dir, art, ds, cfg)
    return art


def run_omp_pipeline(
    cfg: RunConfig,
    ds: InteractionDataset,
    out_dir=None,
    snapshot_hook=None,
) -> RunArtifacts:
    """Dense training, one-shot magnitude prune, then sparse fine-tuning.

    The dense phase runs t_end iterations here unless cfg.dense_checkpoint
    points at a saved dense table, in which case that table is loaded and
    the dense phase is charged analytically at t_end dense iterations.
    Costs and metric rows accumulate across both phases; fine-tune rows
    continue the iteration count past t_end.
    """
    if cfg.method != "omp":
        raise ValueError(f"run_omp_pipeline requires method='omp', got {cfg.method!r}")
    state = _RunState(cfg, ds)
    resolved = cfg.resolved()
    fine_tune_iters = resolved["fine_tune_iters"]
    eval_every = resolved["eval_every"]

    if cfg.dense_checkpoint is not None:
        table, loaded_mask = load_checkpoint(cfg.dense_checkpoint)
        if (table.num_users, table.num_items, table.dim) != (ds.num_users, ds.num_items, cfg.dim):
            raise ValueError("dense checkpoint shape does not match dataset/config")
        art = RunArtifacts(
            run_id=resolved["run_id"],
            config=resolved,
            table=table,
            mask=loaded_mask,
        )
        # charge the reused dense run at its nominal cost
        state.macs_cum += macs_training(state.fwd, cfg.t_end, 0.0)
    else:
        table = init_table(ds.num_users, ds.num_items, cfg.dim, state.table_rng, cfg.init_scale)
        dense_mask = SparseMask(np.ones_like(table.weights, dtype=bool), target_sparsity=0.0)
        opt = OptimizerState(cfg.optimizer, cfg.lr)
        art = RunArtifacts(run_id=resolved["run_id"], config=resolved, table=table, mask=dense_mask)
        try:
            _run_phase(
                state,
                art,
                table,
                dense_mask,
                opt,
                t_start=0,
                iterations=cfg.t_end,
                explore=False,
                eval_every=eval_every,
                snapshot_hook=snapshot_hook,
            )
        except TrainingAborted:
            if out_dir is not None:
                _write_run_dir(out_dir, art, ds, cfg)
            raise

    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            Path(out_dir) / "checkpoint.dense",
            art.table,
            SparseMask(np.ones_like(art.table.weights, dtype=bool), target_sparsity=0.0),
        )

    mask = one_shot_magnitude_prune(art.table, cfg.sparsity)
    zero_inactive(art.table, mask)
    art.mask = mask
    opt = OptimizerState(cfg.optimizer, cfg.lr)
    try:
        _run_phase(
            state,
            art,
            art.table,
            mask,
            opt,
            t_start=cfg.t_end,
            iterations=fine_tune_iters,
            explore=False,
            eval_every=eval_every,
            snapshot_hook=snapshot_hook,
        )
    except TrainingAborted:
        if out_dir is not None:
            _write_run_dir(out_dir, art, ds, cfg)
        raise
    art.cost = CostReport(
        macs_train=state.macs_cum,
        macs_infer=art.metrics[-1]["macs_infer"],
        memory_bytes=memory_bytes(mask.active_count, mask.total, cfg.bytes_per_weight),
    )
    if out_dir is not None:
        _write_run_dir(out_dir, art, ds, cfg)
    return art
