#!/usr/bin/env python3
"""Paired-run experiment: distilled student vs identically-seeded plain student.

For each seed: generate a dataset, pretrain a teacher, then train two students
that differ only in the loss (phase-scheduled distillation vs pure masked MSE).
Prints a per-seed table of final validation NMSE on the time-prediction task,
plus the persistence-baseline floor.

    python scripts/distill_benefit.py --seeds 0 1 2 --epochs 30
"""

import argparse
import time

import numpy as np

from mcakd import (
    AlPlSchedule,
    CsiTensor,
    FixedCycle,
    MaskStrategy,
    ModelConfig,
    PatchSpec,
    TaskSpec,
    TrainConfig,
    distill_student,
    nmse_db,
    persistence_baseline,
    pretrain_teacher,
)
from mcakd.csi import ChannelGenConfig, make_dataset
from mcakd.train import ALL_AUTONOMOUS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--train", type=int, default=2048)
    ap.add_argument("--val", type=int, default=256)
    ap.add_argument("--teacher-dim", type=int, default=64)
    ap.add_argument("--student-dim", type=int, default=32)
    args = ap.parse_args()

    patch = PatchSpec(2, 2, 2)
    teacher_cfg = ModelConfig(dim=args.teacher_dim, patch=patch)
    student_cfg = ModelConfig(dim=args.student_dim, patch=patch)
    task = TaskSpec(MaskStrategy.TIME, 8)

    wins = 0
    t0 = time.perf_counter()
    for seed in args.seeds:
        gen = ChannelGenConfig(
            time_rbs=16, freq_rbs=8, ant_vertical=2, ant_horizontal=2,
            num_paths=6, max_doppler=80.0, seed=seed,
        )
        ds = make_dataset(gen, {"train": args.train, "val": args.val},
                          normalize_mode="global")
        cfg = TrainConfig(epochs=args.epochs, batch_size=64, seed=seed)

        teacher, teacher_rows = pretrain_teacher(ds, cfg, teacher_cfg)
        _, kd_rows, _ = distill_student(
            ds, teacher, cfg, AlPlSchedule(FixedCycle(2, 1), args.epochs), student_cfg
        )
        _, plain_rows, _ = distill_student(
            ds, None, cfg, AlPlSchedule(ALL_AUTONOMOUS, args.epochs), student_cfg
        )
        persistence = np.mean([
            nmse_db(persistence_baseline(CsiTensor(h), task), CsiTensor(h))
            for h in ds.split("val")
        ])
        kd = kd_rows[-1]["val_nmse_time_db"]
        plain = plain_rows[-1]["val_nmse_time_db"]
        wins += kd <= plain
        print(
            f"seed {seed}: teacher {teacher_rows[-1]['val_nmse_time_db']:7.2f} dB | "
            f"persistence {persistence:6.2f} dB | distilled {kd:7.2f} dB | "
            f"plain {plain:7.2f} dB"
        )
    print(f"\ndistilled <= plain in {wins}/{len(args.seeds)} seeds "
          f"({(time.perf_counter() - t0) / 60:.1f} min)")


if __name__ == "__main__":
    main()
