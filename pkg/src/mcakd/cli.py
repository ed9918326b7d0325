"""Command-line surface tying the modules into reproducible experiments.

Every command reads one config document, stamps its fingerprint into all
artifacts, and writes a run manifest. Exit codes are fixed per error class:
2 config, 3 file I/O, 4 numeric failure, 5 contract violation. The
MCAKD_THREADS environment variable caps worker threads.
"""

from __future__ import annotations

import functools
import json
import os
import sys
import time
from pathlib import Path

import click
import numpy as np
import torch

from . import __version__
from .config import ExperimentConfig, load_config
from .csi import CsiTensor, Dataset, load_dataset, make_dataset, save_dataset
from .distill import ABLATABLE, attention_cosines, build_caks, load_caks, save_caks, select_with_scores
from .errors import ConfigError, ContractError, FormatError, McakdError
from .evaluate import bench as run_bench
from .evaluate import bench_pair, evaluate
from .model import CsiMaskedAutoencoder, load_checkpoint, save_checkpoint
from .tokens import MaskStrategy, TaskSpec, grid_coords, make_mask, patchify
from .train import (
    METRICS_COLUMNS,
    distill_student,
    pretrain_teacher,
    stream_seed,
    write_metrics_csv,
)


def _cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except McakdError as e:
            click.echo(f"error: {e.category}: {e}", err=True)
            sys.exit(e.exit_code)
        except OSError as e:
            click.echo(f"error: io: {e}", err=True)
            sys.exit(FormatError.exit_code)

    return wrapper


def _manifest(out: Path, command: str, cfg: ExperimentConfig, seed: int, t0: float, artifacts):
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "config_fingerprint": cfg.fingerprint,
        "seed": seed,
        "version": __version__,
        "wall_ms": (time.perf_counter() - t0) * 1e3,
        "artifacts": [str(a) for a in artifacts],
    }
    (out / f"manifest_{command}.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _effective_seed(cfg: ExperimentConfig, seed: int | None) -> int:
    return cfg.seed if seed is None else seed


def _load_data(path: str) -> Dataset:
    return load_dataset(path)


def _check_arch(model: CsiMaskedAutoencoder, cfg: ExperimentConfig) -> None:
    """Fail closed: a checkpoint must match the config's section for its role."""
    expect = cfg.teacher if model.role == "teacher" else cfg.student
    if model.config != expect:
        raise ContractError(
            f"checkpoint architecture {model.config} does not match the config's "
            f"[{model.role}] section {expect}"
        )


def _tasks(cfg: ExperimentConfig, dims) -> list[TaskSpec]:
    spec = cfg.teacher.patch
    t_bound = cfg.eval.time_boundary or max(spec.t, (dims[0] // 2) // spec.t * spec.t)
    f_bound = cfg.eval.freq_boundary or max(spec.k, (dims[1] // 2) // spec.k * spec.k)
    return [
        TaskSpec(MaskStrategy.TIME, t_bound),
        TaskSpec(MaskStrategy.FREQUENCY, f_bound),
    ]


@click.group()
def main():
    """Knowledge-distillation experiments for CSI prediction transformers."""
    threads = os.environ.get("MCAKD_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            click.echo(f"error: config: MCAKD_THREADS must be an integer, got '{threads}'", err=True)
            sys.exit(ConfigError.exit_code)


@main.command("gen-data")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@_cli_errors
def gen_data(config_path, out, seed):
    """Generate a synthetic dataset per the [data] section."""
    t0 = time.perf_counter()
    cfg = load_config(config_path)
    seed = _effective_seed(cfg, seed)
    counts = cfg.data.counts()
    if sum(counts.values()) <= 0:
        raise ConfigError("requested dataset with 0 samples")
    ds = make_dataset(cfg.data.gen_config(seed), counts, normalize_mode=cfg.data.normalize)
    out_dir = Path(out)
    base = out_dir / cfg.data.name
    save_dataset(ds, base)
    _manifest(out_dir, "gen-data", cfg, seed, t0, [base.with_suffix(".csi"), base.with_suffix(".json")])
    click.echo(f"wrote {len(ds)} samples to {base}.csi")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--emit", multiple=True, type=click.Choice(["csv", "json", "plots"]))
@_cli_errors
def pretrain(config_path, data_path, out, seed, emit):
    """Pretrain the teacher on the three masked-reconstruction tasks."""
    t0 = time.perf_counter()
    cfg = load_config(config_path)
    seed = _effective_seed(cfg, seed)
    ds = _load_data(data_path)
    model, rows = pretrain_teacher(ds, cfg.train_config(seed), cfg.teacher)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "teacher.ckpt"
    save_checkpoint(model, ckpt, fingerprint=cfg.fingerprint)
    metrics = out_dir / "teacher_metrics.csv"
    cols = METRICS_COLUMNS + [f"val_mse_{s.value}" for s in MaskStrategy]
    write_metrics_csv(rows, metrics, cols)
    artifacts = [ckpt, metrics] + _emit_series(rows, out_dir, emit)
    _manifest(out_dir, "pretrain", cfg, seed, t0, artifacts)
    click.echo(f"teacher checkpoint: {ckpt}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--teacher", "teacher_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--ablate", multiple=True, type=click.Choice(ABLATABLE))
@click.option("--emit", multiple=True, type=click.Choice(["csv", "json", "plots"]))
@_cli_errors
def distill(config_path, data_path, teacher_path, out, seed, ablate, emit):
    """Distill the student from a frozen teacher checkpoint."""
    t0 = time.perf_counter()
    cfg = load_config(config_path)
    seed = _effective_seed(cfg, seed)
    ds = _load_data(data_path)
    teacher, _ = load_checkpoint(teacher_path)
    if teacher.role != "teacher":
        raise ContractError(f"{teacher_path} holds a '{teacher.role}' checkpoint, need a teacher")
    _check_arch(teacher, cfg)
    train_cfg = cfg.train_config(seed)
    schedule = cfg.schedule.schedule(train_cfg.epochs)
    student, rows, caks = distill_student(
        ds, teacher, train_cfg, schedule, cfg.student, ablate=frozenset(ablate)
    )
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "student.ckpt"
    save_checkpoint(student, ckpt, fingerprint=cfg.fingerprint)
    metrics = out_dir / "metrics.csv"
    write_metrics_csv(rows, metrics)
    artifacts = [ckpt, metrics]
    if caks is not None:
        caks_path = out_dir / "caks.ckpt"
        save_caks(caks, caks_path, fingerprint=cfg.fingerprint)
        artifacts.append(caks_path)
    artifacts += _emit_series(rows, out_dir, emit)
    _manifest(out_dir, "distill", cfg, seed, t0, artifacts)
    click.echo(f"student checkpoint: {ckpt}")


@main.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path())
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--emit", multiple=True, type=click.Choice(["csv", "json", "plots"]))
@_cli_errors
def eval_cmd(config_path, ckpt_path, data_path, out, emit):
    """Evaluate a checkpoint on the prediction tasks; JSON + CSV report twins."""
    t0 = time.perf_counter()
    cfg = load_config(config_path)
    ds = _load_data(data_path)
    model, _ = load_checkpoint(ckpt_path)
    _check_arch(model, cfg)
    report = evaluate(model, ds, _tasks(cfg, ds.dims), fingerprint=cfg.fingerprint)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_json = out_dir / "report.json"
    report.save_json(report_json)
    artifacts = [report_json]
    if not emit or "csv" in emit:
        report_csv = out_dir / "report.csv"
        report.save_csv(report_csv)
        artifacts.append(report_csv)
    _manifest(out_dir, "eval", cfg, cfg.seed, t0, artifacts)
    for label, entry in sorted(report.tasks.items()):
        click.echo(f"{label}: nmse {entry['nmse_db']} dB (masked {entry['nmse_masked_db']} dB)")


@main.command("bench")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path())
@click.option("--baseline", "baseline_path", type=click.Path(), default=None,
              help="Second checkpoint; reports the latency ratio against it.")
@click.option("--out", required=True, type=click.Path())
@_cli_errors
def bench_cmd(config_path, ckpt_path, baseline_path, out):
    """Forward-only latency statistics (mean/p50/p95 ms)."""
    t0 = time.perf_counter()
    cfg = load_config(config_path)
    model, _ = load_checkpoint(ckpt_path)
    dims = (cfg.data.time_rbs, cfg.data.freq_rbs, cfg.data.ant_vertical * cfg.data.ant_horizontal)
    kwargs = dict(
        batch_size=cfg.eval.bench_batch,
        repetitions=cfg.eval.bench_repetitions,
        warmup=cfg.eval.bench_warmup,
    )
    if baseline_path:
        baseline, _ = load_checkpoint(baseline_path)
        stats = bench_pair(model, baseline, dims, **kwargs)
    else:
        stats = run_bench(model, dims, **kwargs)
    stats["config_fingerprint"] = cfg.fingerprint
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bench_json = out_dir / "bench.json"
    bench_json.write_text(json.dumps(stats, indent=2, sort_keys=True))
    _manifest(out_dir, "bench", cfg, cfg.seed, t0, [bench_json])
    click.echo(json.dumps(stats))


@main.command("inspect")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--teacher", "teacher_path", required=True, type=click.Path())
@click.option("--student", "student_path", required=True, type=click.Path())
@click.option("--caks", "caks_path", type=click.Path(), default=None,
              help="CA-KS checkpoint from a distill run; fresh seeded init if absent.")
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--batch", type=int, default=8, help="Number of samples to inspect.")
@click.option("--out", required=True, type=click.Path())
@_cli_errors
def inspect_cmd(config_path, teacher_path, student_path, caks_path, data_path, batch, out):
    """Dump CA-KS importance scores and per-layer/head attention cosines."""
    t0 = time.perf_counter()
    if batch < 1:
        raise ConfigError(f"--batch must be >= 1, got {batch}")
    cfg = load_config(config_path)
    ds = _load_data(data_path)
    teacher, _ = load_checkpoint(teacher_path)
    student, _ = load_checkpoint(student_path)
    _check_arch(teacher, cfg)
    _check_arch(student, cfg)
    if caks_path:
        caks, _ = load_caks(caks_path)
    else:
        caks = build_caks(teacher.config, student.config, stream_seed(cfg.seed, "init-caks"))

    dims = ds.dims
    spec = student.config.patch
    coords = grid_coords(spec, dims)
    mask = make_mask(MaskStrategy.RANDOM, 0.5, coords, spec, dims, seed=cfg.seed)
    idx = np.arange(min(batch, len(ds)))
    tokens = torch.from_numpy(np.stack([patchify(CsiTensor(s), spec).tokens for s in ds.samples[idx]]))
    with torch.no_grad():
        _, taps_t = teacher.forward_tokens(tokens, mask, dims)
        _, taps_s = student.forward_tokens(tokens, mask, dims)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []
    pairs = {
        "embedding": (taps_t.embeddings, taps_s.embeddings, caks.embedding),
        "encoder": (taps_t.hidden_enc, taps_s.hidden_enc, caks.encoder),
        "decoder": (taps_t.hidden_dec, taps_s.hidden_dec, caks.decoder),
    }
    for tag, (e_t, e_s, ck) in pairs.items():
        with torch.no_grad():
            indices, scores = select_with_scores(e_t, e_s, ck)
        chosen = set(indices[0].tolist())
        lines = ["dim,score,selected"]
        for d, score in enumerate(scores[0].tolist()):
            lines.append(f"{d},{score:.9g},{int(d in chosen)}")
        path = out_dir / f"importance_{tag}.csv"
        path.write_text("\n".join(lines) + "\n")
        artifacts.append(path)

    lines = ["side,layer,head,cosine"]
    for side, a_t, a_s in (
        ("encoder", taps_t.attn_enc, taps_s.attn_enc),
        ("decoder", taps_t.attn_dec, taps_s.attn_dec),
    ):
        if a_t.shape != a_s.shape:
            continue  # attention diagnostics need matching shapes
        cos = attention_cosines(a_t[0], a_s[0])
        for layer in range(cos.shape[0]):
            for head in range(cos.shape[1]):
                lines.append(f"{side},{layer},{head},{cos[layer, head]:.9g}")
    attn_path = out_dir / "attention_cosines.csv"
    attn_path.write_text("\n".join(lines) + "\n")
    artifacts.append(attn_path)
    _manifest(out_dir, "inspect", cfg, cfg.seed, t0, artifacts)
    click.echo(f"inspection dumps in {out_dir}")


def _emit_series(rows: list[dict], out_dir: Path, emit) -> list[Path]:
    """--emit plots writes one epoch,value CSV per logged metric."""
    if "plots" not in emit:
        return []
    plots = out_dir / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    written = []
    for key in rows[0]:
        if key in ("epoch", "phase"):
            continue
        path = plots / f"{key}.csv"
        lines = ["epoch,value"] + [f"{r['epoch']},{r[key]:.9g}" for r in rows]
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written


if __name__ == "__main__":
    main()
