#!/usr/bin/env python3
"""End-to-end experiment: generate data, pretrain, distill, evaluate, bench.

Equivalent to chaining the CLI commands on one config, with all artifacts
landing under a single output directory:

    python scripts/run_pipeline.py --config configs/desk.toml --out runs/desk
"""

import argparse
import subprocess
import sys
from pathlib import Path


def run(args):
    print("+", " ".join(str(a) for a in args))
    subprocess.run([sys.executable, "-m", "mcakd", *map(str, args)], check=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--ablate", action="append", default=[],
                    choices=["embed", "attn", "hs", "caks", "alpl"])
    args = ap.parse_args()

    out = Path(args.out)
    seed = ["--seed", args.seed] if args.seed is not None else []
    ablate = [x for name in args.ablate for x in ("--ablate", name)]

    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib

    with open(args.config, "rb") as f:
        data_name = tomllib.load(f).get("data", {}).get("name", "dataset")
    data = out / "data" / data_name

    run(["gen-data", "--config", args.config, "--out", out / "data", *seed])
    run(["pretrain", "--config", args.config, "--data", data, "--out", out, *seed])
    run(["distill", "--config", args.config, "--data", data,
         "--teacher", out / "teacher.ckpt", "--out", out, *seed, *ablate])
    run(["eval", "--config", args.config, "--ckpt", out / "student.ckpt",
         "--data", data, "--out", out / "eval"])
    run(["bench", "--config", args.config, "--ckpt", out / "student.ckpt",
         "--baseline", out / "teacher.ckpt", "--out", out / "bench"])
    run(["inspect", "--config", args.config, "--teacher", out / "teacher.ckpt",
         "--student", out / "student.ckpt", "--caks", out / "caks.ckpt",
         "--data", data, "--out", out / "inspect"])
    print(f"\nartifacts under {out}")


if __name__ == "__main__":
    main()
