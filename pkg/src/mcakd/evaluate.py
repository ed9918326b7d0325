"""NMSE evaluation, latency benchmarking, and report generation.

NMSE is 10*log10(||H_hat - H||_F^2 / ||H||_F^2) over the full tensor; since
visible entries pass through the model exactly, the numerator only picks up
error on the predicted region. An omega-restricted variant normalizes by the
masked-region energy instead; both are reported. Per-sample dB values are
aggregated as their mean (a convention, stamped into every report).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .csi import CsiTensor, Dataset
from .errors import ConfigError, ContractError, DegenerateInputError
from .model import CsiMaskedAutoencoder, count_params
from .tokens import MaskSet, MaskStrategy, TaskSpec, grid_coords, make_mask, patchify

NEG_INF_DB = float("-inf")


def nmse_db(h_hat, h) -> float:
    """10*log10(||H_hat - H||_F^2 / ||H||_F^2); -inf when the error is zero."""
    a = (h_hat.data if isinstance(h_hat, CsiTensor) else np.asarray(h_hat)).astype(np.complex128)
    b = (h.data if isinstance(h, CsiTensor) else np.asarray(h)).astype(np.complex128)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    ref = float(np.sum(np.abs(b) ** 2))
    if ref <= 0.0:
        raise DegenerateInputError("reference tensor has zero norm")
    err = float(np.sum(np.abs(a - b) ** 2))
    if err == 0.0:
        return NEG_INF_DB
    return 10.0 * math.log10(err / ref)


def _to_db(err: np.ndarray, ref: np.ndarray) -> np.ndarray:
    if np.any(ref <= 0.0):
        raise DegenerateInputError("reference energy is zero for some sample")
    out = np.full(err.shape, NEG_INF_DB)
    nz = err > 0.0
    out[nz] = 10.0 * np.log10(err[nz] / ref[nz])
    return out


def token_nmse(
    model: CsiMaskedAutoencoder,
    tokens: torch.Tensor,
    mask: MaskSet,
    dims: tuple[int, int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample (full-tensor dB, masked-region dB) for a token batch [n, G, F].

    Uses the reconstruction (visible passthrough included), so the full-tensor
    value matches running the single-sample prediction path. Token features
    are exactly the complex tensor entries, so Frobenius norms agree between
    token space and tensor space.
    """
    with torch.no_grad():
        out, _ = model.reconstruct_tokens(
            tokens.to(model.embed_proj.weight.dtype), mask, dims, need_taps=False
        )
    out = out.to(torch.float64).numpy()
    target = tokens.to(torch.float64).numpy()
    masked = mask.masked_idx
    err = ((out - target) ** 2).sum(axis=(1, 2))
    err_masked = ((out[:, masked, :] - target[:, masked, :]) ** 2).sum(axis=(1, 2))
    ref_full = (target**2).sum(axis=(1, 2))
    ref_masked = (target[:, masked, :] ** 2).sum(axis=(1, 2))
    return _to_db(err, ref_full), _to_db(err_masked, ref_masked)


@dataclass
class EvalReport:
    """Per-task NMSE summary plus model/config identification."""

    tasks: dict[str, dict[str, float]]
    param_count: int
    latency: dict | None = None
    config_fingerprint: str = ""
    aggregation: str = "mean of per-sample dB"
    extra: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        d = {
            "tasks": self.tasks,
            "param_count": self.param_count,
            "latency": self.latency,
            "config_fingerprint": self.config_fingerprint,
            "aggregation": self.aggregation,
        }
        d.update(self.extra)
        return _sanitize(d)

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True))

    def save_csv(self, path) -> None:
        lines = ["task,nmse_db,nmse_masked_db,num_samples"]
        for label in sorted(self.tasks):
            r = self.tasks[label]
            lines.append(
                f"{label},{_fmt(r['nmse_db'])},{_fmt(r['nmse_masked_db'])},{int(r['num_samples'])}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return f"{x:.6f}"


def _sanitize(obj):
    """Replace non-finite floats with explicit string sentinels for strict JSON."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return "-inf" if obj < 0 else ("inf" if obj > 0 else "nan")
    return obj


def evaluate(
    model: CsiMaskedAutoencoder,
    samples,
    tasks: list[TaskSpec],
    fingerprint: str = "",
) -> EvalReport:
    """Run every task over the samples ([n, T, K, N] array, or a Dataset whose
    'test' split is used, falling back to 'val', then to all samples)."""
    if isinstance(samples, Dataset):
        for split in ("test", "val"):
            if samples.splits.get(split):
                samples = samples.split(split)
                break
        else:
            samples = samples.samples
    samples = np.asarray(samples)
    if samples.ndim != 4 or len(samples) == 0:
        raise ContractError("expected a nonempty [n, T, K, N] sample array")
    dims = samples.shape[1:]
    spec = model.config.patch
    tokens = torch.from_numpy(
        np.stack([patchify(CsiTensor(s), spec).tokens for s in samples])
    )
    results = {}
    for task in tasks:
        mask = task.mask(spec, dims)
        full_db, masked_db = token_nmse(model, tokens, mask, dims)
        results[task.label] = {
            "nmse_db": float(np.mean(full_db)),
            "nmse_masked_db": float(np.mean(masked_db)),
            "num_samples": len(samples),
        }
    return EvalReport(
        tasks=results, param_count=count_params(model.config), config_fingerprint=fingerprint
    )


def bench(
    model: CsiMaskedAutoencoder,
    dims: tuple[int, int, int],
    batch_size: int = 8,
    repetitions: int = 50,
    warmup: int = 5,
    mask_ratio: float = 0.5,
    seed: int = 0,
) -> dict:
    """Forward-only wall-clock stats (ms) at the given batch size."""
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    spec = model.config.patch
    coords = grid_coords(spec, dims)
    mask = make_mask(MaskStrategy.RANDOM, mask_ratio, coords, spec, dims, seed=seed)
    gen = torch.Generator().manual_seed(seed)
    tokens = torch.randn(
        batch_size, len(coords), spec.feat_dim, generator=gen, dtype=torch.float32
    ).to(model.embed_proj.weight.dtype)
    with torch.no_grad():
        for _ in range(warmup):
            model.forward_tokens(tokens, mask, dims, need_taps=False)
        times = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            model.forward_tokens(tokens, mask, dims, need_taps=False)
            times.append((time.perf_counter() - t0) * 1e3)
    arr = np.asarray(times)
    return {
        "batch_size": batch_size,
        "repetitions": repetitions,
        "mean_ms": float(arr.mean()),
        "p50_ms": float(np.percentile(arr, 50)),
        "p95_ms": float(np.percentile(arr, 95)),
    }


def bench_pair(
    student: CsiMaskedAutoencoder, teacher: CsiMaskedAutoencoder, dims, **kwargs
) -> dict:
    """Benchmark both models and report the student/teacher mean-latency ratio."""
    s = bench(student, dims, **kwargs)
    t = bench(teacher, dims, **kwargs)
    return {"student": s, "teacher": t, "latency_ratio": s["mean_ms"] / t["mean_ms"]}


def persistence_baseline(h: CsiTensor, task: TaskSpec) -> CsiTensor:
    """Repeat the last visible resource block across the predicted region."""
    out = h.data.copy()
    if MaskStrategy(task.kind) is MaskStrategy.TIME:
        if not 0 < task.boundary < h.dims[0]:
            raise ConfigError(f"boundary {task.boundary} outside (0, {h.dims[0]})")
        out[task.boundary :, :, :] = h.data[task.boundary - 1, :, :]
    else:
        if not 0 < task.boundary < h.dims[1]:
            raise ConfigError(f"boundary {task.boundary} outside (0, {h.dims[1]})")
        out[:, task.boundary :, :] = h.data[:, task.boundary - 1 : task.boundary, :]
    return CsiTensor(out)
