#!/usr/bin/env python3
"""Train dense/rp/dsl/omp across sparsity levels and tabulate recall vs cost.

Prepares a synthetic dataset (unless --data points at an existing one),
fans out the method x sparsity x seed cross-product through the sweep
runner, and prints the aggregated table. Expect roughly half an hour for
the full grid on a laptop; --quick trims it to a smoke-test size.
"""

import argparse
import json
import sys
from pathlib import Path

from sparsecf.cli import main as cli_main


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("results/method_comparison"))
    p.add_argument("--data", type=Path, default=None,
                   help="prepared dataset dir (default: synthesize under --out)")
    p.add_argument("--methods", nargs="+",
                   default=["dense", "rp", "omp", "dsl"])
    p.add_argument("--sparsities", nargs="+", type=float, default=[0.3, 0.5, 0.8])
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2, 3, 4])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--quick", action="store_true",
                   help="small dataset and short runs, for a fast end-to-end check")
    return p.parse_args()


def main():
    args = parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    data_dir = args.data
    if data_dir is None:
        data_dir = args.out / "data"
        if not (data_dir / "train.txt").exists():
            prepare = [
                "prepare", "--synthetic", "--ratio", "0.2", "--seed", "17",
                "--out", str(data_dir),
            ]
            if args.quick:
                prepare += ["--users", "150", "--items", "300",
                            "--avg-degree", "30", "--min-degree", "8"]
            else:
                prepare += ["--users", "943", "--items", "1682",
                            "--avg-degree", "100", "--min-degree", "20"]
            rc = cli_main(prepare)
            if rc != 0:
                return rc

    base = {
        "backbone": "mf",
        "dim": 16 if args.quick else 64,
        "rho0": 0.3,
        "delta_t": 50 if args.quick else 250,
        "t_end": 500 if args.quick else 3000,
        "decay": "cosine",
        "lr": 0.005,
        "l2_reg": 5e-3,
        "batch_size": 256 if args.quick else 1024,
        "eval_k": 20,
    }
    spec_path = args.out / "spec.json"
    spec_path.write_text(json.dumps({
        "base": base,
        "sparsities": args.sparsities,
        "methods": args.methods,
        "seeds": args.seeds,
        "data": str(data_dir),
        "out": str(args.out),
    }, indent=2) + "\n")

    rc = cli_main(["sweep", str(spec_path), "--workers", str(args.workers)])
    if rc != 0:
        return rc
    print()
    return cli_main(["report", str(args.out)])


if __name__ == "__main__":
    sys.exit(main())
