"""Teacher pretraining and student distillation with phase alternation.

Training epochs alternate between two phases. Autonomous epochs optimize the
masked-reconstruction MSE alone and never touch the teacher, so they cost no
teacher forward passes. Passive epochs add the distillation components
weighted by `distill_weight`:

    loss = l_mse                                  (autonomous)
    loss = l_mse + distill_weight * l_mcakd       (passive)

Two schedulers ship: a fixed cycle of n autonomous epochs followed by m
passive ones, and a plateau trigger that stays autonomous until the best
validation MSE stops improving, then inserts a passive stretch.

All randomness is drawn from named streams derived from the run seed, so a
run is reproducible bit-for-bit and a distillation run with an all-autonomous
schedule matches a teacher-free run exactly.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch

from .csi import CsiTensor, Dataset
from .distill import CaKsModules, DistillLosses, build_caks, masked_token_mse, mcakd_loss
from .errors import ConfigError, ContractError, NumericError
from .evaluate import token_nmse
from .model import CsiMaskedAutoencoder, ModelConfig, build_model
from .tokens import MaskSet, MaskStrategy, TaskSpec, grid_coords, make_mask, patchify

METRICS_COLUMNS = [
    "epoch",
    "phase",
    "l_mse",
    "l_attn",
    "l_embed",
    "l_hs",
    "l_mcakd",
    "val_nmse_time_db",
    "val_nmse_freq_db",
    "wall_ms",
]

STRATEGIES = (MaskStrategy.RANDOM, MaskStrategy.TIME, MaskStrategy.FREQUENCY)


class Phase(str, Enum):
    AUTONOMOUS = "autonomous"  # self-supervised only
    PASSIVE = "passive"        # distillation-augmented


@dataclass(frozen=True)
class FixedCycle:
    """n autonomous epochs, then m passive, repeating; starts autonomous."""

    autonomous: int = 2
    passive: int = 1

    def __post_init__(self):
        if self.autonomous < 0 or self.passive < 0 or self.autonomous + self.passive == 0:
            raise ConfigError(f"invalid cycle ({self.autonomous}, {self.passive})")


@dataclass(frozen=True)
class PlateauTriggered:
    """Autonomous until best val MSE stalls for `window` epochs, then
    `passive_len` passive epochs, then the tracker resets."""

    window: int = 3
    min_delta: float = 1e-3
    passive_len: int = 1

    def __post_init__(self):
        if self.window < 1 or self.passive_len < 1 or self.min_delta < 0:
            raise ConfigError("window/passive_len must be >= 1 and min_delta >= 0")


@dataclass(frozen=True)
class AlPlSchedule:
    mode: FixedCycle | PlateauTriggered
    total_epochs: int

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be positive")


ALL_AUTONOMOUS = FixedCycle(1, 0)
ALL_PASSIVE = FixedCycle(0, 1)


def phase_of(epoch: int, sched: AlPlSchedule, history=()) -> Phase:
    """Phase of `epoch`; `history[i]` is the validation MSE after epoch i and
    must cover every epoch before `epoch` for the plateau mode."""
    if epoch >= sched.total_epochs or epoch < 0:
        raise ContractError(f"epoch {epoch} outside schedule of {sched.total_epochs}")
    mode = sched.mode
    if isinstance(mode, FixedCycle):
        return (
            Phase.AUTONOMOUS
            if epoch % (mode.autonomous + mode.passive) < mode.autonomous
            else Phase.PASSIVE
        )
    if len(history) < epoch:
        raise ContractError(f"plateau schedule needs history for all {epoch} earlier epochs")
    best = math.inf
    stall = 0
    passive_left = 0
    for e in range(epoch + 1):
        phase = Phase.PASSIVE if passive_left > 0 else Phase.AUTONOMOUS
        if e == epoch:
            return phase
        if phase is Phase.PASSIVE:
            passive_left -= 1
            if passive_left == 0:
                best, stall = math.inf, 0
        else:
            if history[e] < best - mode.min_delta:
                best, stall = history[e], 0
            else:
                stall += 1
            if stall >= mode.window:
                passive_left = mode.passive_len
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    distill_weight: float = 0.1
    seed: int = 0
    mask_mix: tuple[float, float, float] = (1.0, 1.0, 1.0)  # random, time, frequency
    mask_ratio: float = 0.5
    val_fraction: float = 0.1
    lr_schedule: str = "constant"  # constant | cosine
    eval_time_boundary: int | None = None  # defaults to T // 2
    eval_freq_boundary: int | None = None  # defaults to K // 2

    def __post_init__(self):
        if self.distill_weight < 0:
            raise ConfigError("distill_weight must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if not 0 < self.mask_ratio < 1:
            raise ConfigError("mask_ratio must be in (0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule '{self.lr_schedule}'")
        if len(self.mask_mix) != 3 or min(self.mask_mix) < 0 or sum(self.mask_mix) == 0:
            raise ConfigError("mask_mix needs three non-negative weights, not all zero")


def stream_seed(seed: int, name: str) -> int:
    """Independent, platform-stable seed for a named RNG stream of a run."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def batch_loss(
    tokens: torch.Tensor,
    mask: MaskSet,
    dims: tuple[int, int, int],
    student: CsiMaskedAutoencoder,
    teacher: CsiMaskedAutoencoder | None,
    caks: CaKsModules | None,
    phase: Phase,
    cfg: TrainConfig,
    ablate: frozenset[str] = frozenset(),
) -> tuple[torch.Tensor, DistillLosses]:
    """One batch's training loss under the phase rule.

    Autonomous: reconstruction MSE only, no teacher forward is executed.
    Passive: MSE plus distill_weight times the distillation total; requires
    the teacher (and CA-KS modules).
    """
    if phase is Phase.AUTONOMOUS:
        pred, _ = student.forward_tokens(tokens, mask, dims, need_taps=False)
        t_mse = masked_token_mse(pred, tokens, mask)
        return t_mse, DistillLosses.from_components(0.0, 0.0, 0.0, float(t_mse.item()))
    if teacher is None or caks is None:
        raise ContractError("passive phase requires a teacher and CA-KS modules")
    pred, taps_s = student.forward_tokens(tokens, mask, dims)
    t_mse = masked_token_mse(pred, tokens, mask)
    with torch.no_grad():
        _, taps_t = teacher.forward_tokens(tokens.to(teacher.embed_proj.weight.dtype), mask, dims)
    total_distill, record = mcakd_loss(taps_t, taps_s, caks, ablate)
    loss = t_mse + cfg.distill_weight * total_distill
    return loss, record.with_mse(float(t_mse.item()))


def _resolve_splits(ds: Dataset, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """(train indices, val indices); carves a val fraction when absent."""
    if ds.splits.get("train"):
        train = np.asarray(ds.splits["train"], dtype=np.int64)
    else:
        in_other = {i for name, idx in ds.splits.items() if name != "train" for i in idx}
        train = np.asarray([i for i in range(len(ds)) if i not in in_other], dtype=np.int64)
    if ds.splits.get("val"):
        return train, np.asarray(ds.splits["val"], dtype=np.int64)
    if len(train) < 2:
        raise ConfigError("dataset too small to carve a validation split")
    rng = np.random.default_rng(stream_seed(cfg.seed, "val-split"))
    perm = rng.permutation(train)
    n_val = max(1, int(len(train) * cfg.val_fraction))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _strategy_mask(
    strategy: MaskStrategy,
    cfg: TrainConfig,
    coords: np.ndarray,
    spec,
    dims: tuple[int, int, int],
    seed: int,
) -> MaskSet:
    if strategy is MaskStrategy.RANDOM:
        return make_mask(strategy, cfg.mask_ratio, coords, spec, dims, seed=seed)
    return make_mask(strategy, float(cfg.mask_ratio), coords, spec, dims)


def _train(
    ds: Dataset,
    model_cfg: ModelConfig,
    role: str,
    cfg: TrainConfig,
    schedule: AlPlSchedule,
    teacher: CsiMaskedAutoencoder | None,
    ablate: frozenset[str] = frozenset(),
) -> tuple[CsiMaskedAutoencoder, list[dict], CaKsModules | None]:
    dims = ds.dims
    spec = model_cfg.patch
    coords = grid_coords(spec, dims)
    if teacher is not None:
        _check_compat(teacher.config, model_cfg, ablate)
        teacher.eval()
        for p in teacher.parameters():
            p.requires_grad_(False)

    train_idx, val_idx = _resolve_splits(ds, cfg)
    all_tokens = torch.from_numpy(
        np.stack([patchify(CsiTensor(s), spec).tokens for s in ds.samples])
    )
    model = build_model(model_cfg, role, stream_seed(cfg.seed, f"init-{role}"))
    caks = (
        build_caks(teacher.config, model_cfg, stream_seed(cfg.seed, "init-caks"))
        if teacher is not None
        else None
    )
    params = list(model.parameters()) + (list(caks.parameters()) if caks else [])
    opt = torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))

    rng_order = np.random.default_rng(stream_seed(cfg.seed, "batch-order"))
    rng_strategy = np.random.default_rng(stream_seed(cfg.seed, "mask-strategy"))
    rng_maskseed = np.random.default_rng(stream_seed(cfg.seed, "mask-seed"))
    mix = np.asarray(cfg.mask_mix, dtype=np.float64)
    mix = mix / mix.sum()
    val_masks = {
        s: _strategy_mask(s, cfg, coords, spec, dims, stream_seed(cfg.seed, "val-mask"))
        for s in STRATEGIES
    }
    t_bound = cfg.eval_time_boundary or max(spec.t, (dims[0] // 2) // spec.t * spec.t)
    f_bound = cfg.eval_freq_boundary or max(spec.k, (dims[1] // 2) // spec.k * spec.k)
    task_masks = {
        "time": TaskSpec(MaskStrategy.TIME, t_bound).mask(spec, dims),
        "freq": TaskSpec(MaskStrategy.FREQUENCY, f_bound).mask(spec, dims),
    }

    history: list[float] = []
    rows: list[dict] = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        phase = phase_of(epoch, schedule, history)
        if phase is Phase.PASSIVE and teacher is None:
            raise ContractError(f"schedule requires a teacher at epoch {epoch}")
        if cfg.lr_schedule == "cosine":
            lr = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
            for group in opt.param_groups:
                group["lr"] = lr

        order = rng_order.permutation(train_idx)
        sums = {"l_mse": 0.0, "l_attn": 0.0, "l_embed": 0.0, "l_hs": 0.0, "l_mcakd": 0.0}
        num_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            strategy = STRATEGIES[rng_strategy.choice(3, p=mix)]
            mask_seed = int(rng_maskseed.integers(0, 2**62))
            mask = _strategy_mask(strategy, cfg, coords, spec, dims, mask_seed)
            tokens = all_tokens[torch.from_numpy(batch_idx)]
            loss, record = batch_loss(
                tokens, mask, dims, model, teacher, caks, phase, cfg, ablate
            )
            if not torch.isfinite(loss):
                raise NumericError(f"loss diverged at epoch {epoch}, batch {num_batches}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            for key in sums:
                sums[key] += getattr(record, key)
            num_batches += 1

        val_mse = _val_mse(model, all_tokens, val_idx, val_masks, dims)
        val_tokens = all_tokens[torch.from_numpy(val_idx)]
        nmse_time = float(np.mean(token_nmse(model, val_tokens, task_masks["time"], dims)[0]))
        nmse_freq = float(np.mean(token_nmse(model, val_tokens, task_masks["freq"], dims)[0]))
        history.append(float(np.mean(list(val_mse.values()))))
        means = {k: sums[k] / max(num_batches, 1) for k in sums}
        # keep the three-way-sum identity exact at the epoch level too
        means["l_mcakd"] = means["l_attn"] + means["l_embed"] + means["l_hs"]
        row = {
            "epoch": epoch,
            "phase": phase.value,
            **means,
            "val_nmse_time_db": nmse_time,
            "val_nmse_freq_db": nmse_freq,
            "wall_ms": (time.perf_counter() - t0) * 1e3,
        }
        for s in STRATEGIES:
            row[f"val_mse_{s.value}"] = val_mse[s]
        rows.append(row)
    return model, rows, caks


def _val_mse(model, all_tokens, val_idx, val_masks, dims) -> dict:
    tokens = all_tokens[torch.from_numpy(val_idx)]
    out = {}
    with torch.no_grad():
        for strategy, mask in val_masks.items():
            pred, _ = model.forward_tokens(tokens, mask, dims, need_taps=False)
            out[strategy] = float(masked_token_mse(pred, tokens, mask).item())
    return out


def _check_compat(
    teacher_cfg: ModelConfig, student_cfg: ModelConfig, ablate: frozenset[str] = frozenset()
) -> None:
    """Fail before any training step on teacher/student incompatibilities.

    Matching depths and head counts are required by the attention loss only,
    so they are waived when that loss is ablated; patch and width constraints
    always hold.
    """
    problems = []
    if "attn" not in ablate:
        if teacher_cfg.num_heads != student_cfg.num_heads:
            problems.append(f"heads {teacher_cfg.num_heads} vs {student_cfg.num_heads}")
        if teacher_cfg.encoder_depth != student_cfg.encoder_depth:
            problems.append(
                f"encoder depth {teacher_cfg.encoder_depth} vs {student_cfg.encoder_depth}"
            )
        if teacher_cfg.decoder_depth != student_cfg.decoder_depth:
            problems.append(
                f"decoder depth {teacher_cfg.decoder_depth} vs {student_cfg.decoder_depth}"
            )
    if teacher_cfg.patch != student_cfg.patch:
        problems.append(f"patch {teacher_cfg.patch} vs {student_cfg.patch}")
    if student_cfg.dim > teacher_cfg.dim:
        problems.append(f"student dim {student_cfg.dim} exceeds teacher dim {teacher_cfg.dim}")
    if problems:
        raise ContractError("teacher/student incompatible: " + "; ".join(problems))


def pretrain_teacher(
    ds: Dataset, cfg: TrainConfig, model_cfg: ModelConfig
) -> tuple[CsiMaskedAutoencoder, list[dict]]:
    """Self-supervised pretraining over the three masking strategies."""
    if len(ds) == 0:
        raise ConfigError("dataset is empty")
    schedule = AlPlSchedule(ALL_AUTONOMOUS, cfg.epochs)
    model, rows, _ = _train(ds, model_cfg, "teacher", cfg, schedule, teacher=None)
    return model, rows


def distill_student(
    ds: Dataset,
    teacher: CsiMaskedAutoencoder | None,
    cfg: TrainConfig,
    schedule: AlPlSchedule,
    student_cfg: ModelConfig,
    ablate: frozenset[str] | set[str] = frozenset(),
) -> tuple[CsiMaskedAutoencoder, list[dict], CaKsModules | None]:
    """Train a student under the phase schedule; the teacher stays frozen.

    With teacher=None only all-autonomous schedules are legal, which yields
    the no-distillation baseline, bit-identical to a distillation run whose
    schedule never enters a passive epoch.
    """
    if len(ds) == 0:
        raise ConfigError("dataset is empty")
    if schedule.total_epochs != cfg.epochs:
        schedule = AlPlSchedule(schedule.mode, cfg.epochs)
    ablate = frozenset(ablate)
    if "alpl" in ablate:
        schedule = AlPlSchedule(ALL_PASSIVE, cfg.epochs)
    return _train(ds, student_cfg, "student", cfg, schedule, teacher, ablate)


def write_metrics_csv(rows: list[dict], path, columns: list[str] | None = None) -> None:
    """One row per epoch; columns default to the standard metrics schema."""
    cols = columns or METRICS_COLUMNS
    lines = [",".join(cols)]
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c, "")
            cells.append(f"{v:.9g}" if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    from pathlib import Path

    Path(path).write_text("\n".join(lines) + "\n")
