"""Command-line front end: prepare data, run training, sweep, profile, report.

Exit codes: 0 on success, 1 when a run aborts at runtime (non-finite
loss), 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .costs import memory_bytes
from .data import DataFormatError, load_dataset, load_interactions, save_dataset, split_holdout
from .embeddings import load_checkpoint, target_active_count
from .evaluation import popularity_sparsity_correlation, sparsity_profile
from .synth import generate_interactions
from .trainer import METHODS, RunConfig, TrainingAborted, train

_CONFIG_FLAGS = {
    "method": str,
    "backbone": str,
    "num_layers": int,
    "dim": int,
    "sparsity": float,
    "rho0": float,
    "delta_t": int,
    "t_end": int,
    "decay": str,
    "optimizer": str,
    "lr": float,
    "l2_reg": float,
    "batch_size": int,
    "eval_every": int,
    "eval_k": int,
    "seed": int,
    "init_scale": float,
    "fine_tune_iters": int,
    "dense_checkpoint": str,
    "bytes_per_weight": int,
    "run_id": str,
}

_dataset_cache: dict = {}


def _load_dataset_cached(data_dir):
    key = str(Path(data_dir).resolve())
    if key not in _dataset_cache:
        _dataset_cache[key] = load_dataset(data_dir)
    return _dataset_cache[key]


@dataclass
class SweepSpec:
    """A cross-product of sparsity levels, methods, and seeds over one base
    config, enumerated in declaration order (levels outermost)."""

    base: RunConfig
    sparsities: list
    methods: list
    seeds: list
    data: str | None = None
    out: str | None = None

    def __post_init__(self):
        if not self.sparsities or not self.methods or not self.seeds:
            raise ValueError("sparsities, methods, and seeds must all be non-empty")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r} in sweep spec")

    @classmethod
    def from_file(cls, path) -> "SweepSpec":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        base = RunConfig(**payload.get("base", {}))
        return cls(
            base=base,
            sparsities=payload["sparsities"],
            methods=payload["methods"],
            seeds=payload["seeds"],
            data=payload.get("data"),
            out=payload.get("out"),
        )

    def cells(self) -> list:
        """(sparsity, method, seed) tuples in declaration order."""
        return [
            (s, m, seed) for s in self.sparsities for m in self.methods for seed in self.seeds
        ]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for name, typ in _CONFIG_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        p.add_argument(flag, type=typ, default=None, help=f"override config {name}")
    p.add_argument("--log-positions", action="store_true", default=None,
                   help="log full position lists in exploration.jsonl")


def _resolve_config(args) -> RunConfig:
    """flags > config file > dataclass defaults."""
    values = {}
    if getattr(args, "config", None):
        file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        known = {f.name for f in fields(RunConfig)}
        unknown = set(file_cfg) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_cfg)
    for name in list(_CONFIG_FLAGS) + ["log_positions"]:
        flag_val = getattr(args, name, None)
        if flag_val is not None:
            values[name] = flag_val
    if getattr(args, "data", None):
        values["data_dir"] = str(args.data)
    cfg = RunConfig(**values)
    if cfg.method == "dense" and values.get("sparsity") not in (None, 0, 0.0):
        print(f"warning: sparsity={cfg.sparsity} ignored for dense run", file=sys.stderr)
    return cfg


def cmd_prepare(args) -> int:
    if args.synthetic:
        ds = generate_interactions(
            num_users=args.users,
            num_items=args.items,
            avg_degree=args.avg_degree,
            popularity_exponent=args.pop_exponent,
            min_degree=args.min_degree,
            seed=args.seed,
        )
        source = "synthetic"
    else:
        if args.input is None:
            print("error: either --input or --synthetic is required", file=sys.stderr)
            return 2
        ds = load_interactions(args.input, format=args.format)
        source = str(args.input)
    split = split_holdout(ds, args.ratio, args.seed)
    save_dataset(
        split,
        args.out,
        manifest_extra={
            "seed": args.seed,
            "ratio": args.ratio,
            "source": source,
            "format": args.format,
        },
    )
    print(
        f"prepared {args.out}: users={split.num_users} items={split.num_items} "
        f"train={split.num_train} test={split.num_test}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    ds = _load_dataset_cached(args.data)
    run_id = cfg.resolve_run_id()
    out_dir = Path(args.out) if args.out else Path("runs") / run_id
    art = train(cfg, ds, out_dir=out_dir)
    final = art.final_metrics
    print(
        f"run {art.run_id}: iteration={final['iteration']} "
        f"recall@{final['k']}={final['recall']:.6f} ndcg@{final['k']}={final['ndcg']:.6f} "
        f"hr@{final['k']}={final['hr']:.6f} sparsity={final['sparsity']:.4f} "
        f"macs_train={final['macs_train_cum']:.6g} macs_infer={final['macs_infer']:.6g} "
        f"dir={out_dir}"
    )
    return 0


def _read_final_metrics(path) -> dict:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    header = lines[0].split(",")
    last = lines[-1].split(",")
    row = dict(zip(header, last))
    for key in ("recall", "ndcg", "hr", "sparsity", "macs_train_cum", "macs_infer"):
        row[key] = float(row[key])
    row["iteration"] = int(row["iteration"])
    return row


def _sweep_cell(data_dir: str, cfg_dict: dict, run_dir: str, resume: bool) -> dict:
    """Run (or resume) one sweep cell; never raises, reports status instead."""
    run_path = Path(run_dir)
    try:
        cfg = RunConfig(**cfg_dict)
        done = resume and (run_path / "metrics.csv").exists() and (
            run_path / "checkpoint.final"
        ).exists()
        if done:
            row = _read_final_metrics(run_path / "metrics.csv")
            run_id = row["run_id"]
        else:
            ds = _load_dataset_cached(data_dir)
            art = train(cfg, ds, out_dir=run_path)
            row = art.final_metrics
            run_id = art.run_id
        manifest = json.loads((run_path / "split_manifest.json").read_text(encoding="utf-8"))
        total = (manifest["num_users"] + manifest["num_items"]) * cfg.dim
        active = target_active_count(total, cfg.effective_sparsity)
        return {
            "status": "ok",
            "resumed": bool(done),
            "run_id": run_id,
            "recall": row["recall"],
            "ndcg": row["ndcg"],
            "hr": row["hr"],
            "macs_train": row["macs_train_cum"],
            "macs_infer": row["macs_infer"],
            "memory": memory_bytes(active, total, cfg.bytes_per_weight),
        }
    except Exception as exc:  # noqa: BLE001  (cell isolation is the contract)
        return {
            "status": f"failed: {type(exc).__name__}: {exc}",
            "resumed": False,
            "run_id": None,
            "recall": float("nan"),
            "ndcg": float("nan"),
            "hr": float("nan"),
            "macs_train": float("nan"),
            "macs_infer": float("nan"),
            "memory": 0,
        }


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def cmd_sweep(args) -> int:
    spec = SweepSpec.from_file(args.spec)
    data_dir = args.data or spec.data
    out_dir = Path(args.out or spec.out or "sweep")
    if data_dir is None:
        print("error: sweep needs a data dir (--data or spec 'data')", file=sys.stderr)
        return 2
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = spec.cells()
    jobs = []
    for s, method, seed in cells:
        cfg = replace(spec.base, method=method, sparsity=s, seed=seed, data_dir=str(data_dir))
        run_dir = out_dir / "runs" / f"{method}-s{s:g}-seed{seed}"
        jobs.append((str(data_dir), asdict(cfg), str(run_dir), args.resume))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_cell, *zip(*jobs)))
    else:
        results = [_sweep_cell(*job) for job in jobs]

    runs_lines = ["sparsity,method,seed,run_id,status,recall,ndcg,hr,macs_train,macs_infer,memory"]
    for (s, method, seed), res in zip(cells, results):
        runs_lines.append(
            ",".join(
                [
                    _fmt(float(s)),
                    method,
                    str(seed),
                    str(res["run_id"]),
                    res["status"].replace(",", ";"),
                    _fmt(res["recall"]),
                    _fmt(res["ndcg"]),
                    _fmt(res["hr"]),
                    _fmt(res["macs_train"]),
                    _fmt(res["macs_infer"]),
                    str(res["memory"]),
                ]
            )
        )
        tag = " (resumed)" if res["resumed"] else ""
        print(f"cell method={method} s={s:g} seed={seed}: {res['status']}{tag}")
    (out_dir / "runs.csv").write_text("\n".join(runs_lines) + "\n", encoding="utf-8")

    sweep_lines = [
        "method,sparsity,seed_count,recall_mean,recall_std,ndcg_mean,ndcg_std,"
        "macs_train,macs_infer,memory,status"
    ]
    seen = []
    for s, method, _ in cells:
        if (s, method) not in seen:
            seen.append((s, method))
    for s, method in seen:
        cell_res = [
            r
            for (cs, cm, _), r in zip(cells, results)
            if (cs, cm) == (s, method) and r["status"] == "ok"
        ]
        failed = sum(
            1
            for (cs, cm, _), r in zip(cells, results)
            if (cs, cm) == (s, method) and r["status"] != "ok"
        )
        status = "ok" if failed == 0 else f"{failed} failed"
        if cell_res:
            recalls = np.array([r["recall"] for r in cell_res])
            ndcgs = np.array([r["ndcg"] for r in cell_res])
            sweep_lines.append(
                ",".join(
                    [
                        method,
                        _fmt(float(s)),
                        str(len(cell_res)),
                        _fmt(float(recalls.mean())),
                        _fmt(float(recalls.std())),
                        _fmt(float(ndcgs.mean())),
                        _fmt(float(ndcgs.std())),
                        _fmt(float(np.mean([r["macs_train"] for r in cell_res]))),
                        _fmt(float(np.mean([r["macs_infer"] for r in cell_res]))),
                        str(int(np.mean([r["memory"] for r in cell_res]))),
                        status,
                    ]
                )
            )
        else:
            sweep_lines.append(
                f"{method},{_fmt(float(s))},0,nan,nan,nan,nan,nan,nan,0,{status}"
            )
    (out_dir / "sweep.csv").write_text("\n".join(sweep_lines) + "\n", encoding="utf-8")
    print(f"wrote {out_dir / 'sweep.csv'} and {out_dir / 'runs.csv'}")
    return 0 if all(r["status"] == "ok" for r in results) else 1


def cmd_profile(args) -> int:
    run_dir = Path(args.run_dir)
    ckpt = run_dir / "checkpoint.final"
    if not ckpt.exists():
        print(f"error: no checkpoint at {ckpt}", file=sys.stderr)
        return 2
    table, mask = load_checkpoint(ckpt)
    data_dir = args.data
    if data_dir is None:
        cfg_path = run_dir / "config.json"
        if cfg_path.exists():
            data_dir = json.loads(cfg_path.read_text(encoding="utf-8")).get("data_dir")
    if data_dir is None:
        print("error: dataset location unknown; pass --data", file=sys.stderr)
        return 2
    ds = _load_dataset_cached(data_dir)
    if (ds.num_users, ds.num_items) != (table.num_users, table.num_items):
        print("error: dataset does not match checkpoint dimensions", file=sys.stderr)
        return 2

    lines = ["group_id,side,mean_popularity,mean_sparsity"]
    spearman = {}
    for side in ("users", "items"):
        prof = sparsity_profile(mask, ds, side=side, num_groups=args.groups)
        for gid in range(prof.num_groups):
            lines.append(
                f"{gid},{side},{_fmt(prof.mean_popularity[gid])},{_fmt(prof.mean_sparsity[gid])}"
            )
        spearman[side] = popularity_sparsity_correlation(prof)
    out_path = Path(args.out) if args.out else run_dir / "profile.csv"
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    summary_path = out_path.with_name(out_path.stem + "_summary.json")
    summary_path.write_text(
        json.dumps({"num_groups": args.groups, "spearman": spearman}, indent=2, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )
    for side in ("users", "items"):
        rho = spearman[side]
        shown = "null" if rho is None else f"{rho:.4f}"
        print(f"{side}: popularity-sparsity spearman = {shown}")
    print(f"wrote {out_path} and {summary_path}")
    return 0


def cmd_report(args) -> int:
    """Render sweep.csv (or a single run's metrics.csv) as a readable table."""
    target = Path(args.path)
    sweep_csv = target / "sweep.csv" if target.is_dir() else target
    if not sweep_csv.exists():
        print(f"error: {sweep_csv} not found", file=sys.stderr)
        return 2
    lines = sweep_csv.read_text(encoding="utf-8").strip().splitlines()
    header = lines[0].split(",")
    rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
    if "recall_mean" in header:
        print(f"{'method':<8} {'sparsity':>8} {'recall':>20} {'ndcg':>20} {'macs_infer':>12}")
        for r in rows:
            recall = f"{float(r['recall_mean']):.4f} ± {float(r['recall_std']):.4f}"
            ndcg = f"{float(r['ndcg_mean']):.4f} ± {float(r['ndcg_std']):.4f}"
            print(
                f"{r['method']:<8} {float(r['sparsity']):>8.2f} {recall:>20} {ndcg:>20} "
                f"{float(r['macs_infer']):>12.4g}"
            )
    else:
        for line in lines:
            print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsecf",
        description="Fixed-budget dynamic sparse training for embedding-based recommenders.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="load or synthesize interactions and write a split")
    p.add_argument("--input", type=Path, default=None, help="interaction file to load")
    p.add_argument("--format", choices=("pair-lines", "per-user-adjacency"),
                   default="pair-lines")
    p.add_argument("--synthetic", action="store_true", help="generate synthetic interactions")
    p.add_argument("--users", type=int, default=943)
    p.add_argument("--items", type=int, default=1682)
    p.add_argument("--avg-degree", type=float, default=100.0)
    p.add_argument("--pop-exponent", type=float, default=1.0)
    p.add_argument("--min-degree", type=int, default=20)
    p.add_argument("--ratio", type=float, default=0.2, help="per-user test holdout fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="run one training job")
    p.add_argument("--data", type=Path, required=True, help="prepared dataset directory")
    p.add_argument("--out", type=Path, default=None, help="run directory (default runs/<run_id>)")
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run a methods x sparsities x seeds cross-product")
    p.add_argument("spec", type=Path, help="sweep spec JSON")
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resume", action="store_true", help="skip cells with finished runs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("profile", help="popularity vs sparsity profile of a run's checkpoint")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--groups", type=int, default=10)
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("report", help="print a sweep summary table")
    p.add_argument("path", type=Path, help="sweep directory or sweep.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingAborted as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, FileNotFoundError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
