"""Experiment configuration: strict TOML/JSON parsing and fingerprinting.

A config document has a global `seed` plus sections {data, teacher, student,
distill, schedule, eval}. Unknown keys anywhere are rejected. The fingerprint
is the sha256 of the canonical JSON form of the parsed document and is
stamped into every artifact a command writes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .csi import ChannelGenConfig
from .errors import ConfigError
from .model import ModelConfig
from .tokens import PatchSpec
from .train import AlPlSchedule, FixedCycle, PlateauTriggered, TrainConfig

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass(frozen=True)
class DataSection:
    time_rbs: int = 16
    freq_rbs: int = 8
    ant_vertical: int = 2
    ant_horizontal: int = 2
    num_paths: int = 6
    delta_t: float = 1e-3
    delta_f: float = 180e3
    max_doppler: float = 80.0
    max_delay: float = 1e-6
    azimuth_range: tuple[float, float] = (-math.pi, math.pi)
    elevation_range: tuple[float, float] = (0.0, math.pi)
    train: int = 2048
    val: int = 256
    test: int = 0
    normalize: str = "global"
    name: str = "dataset"

    def gen_config(self, seed: int) -> ChannelGenConfig:
        return ChannelGenConfig(
            time_rbs=self.time_rbs,
            freq_rbs=self.freq_rbs,
            ant_vertical=self.ant_vertical,
            ant_horizontal=self.ant_horizontal,
            num_paths=self.num_paths,
            delta_t=self.delta_t,
            delta_f=self.delta_f,
            max_doppler=self.max_doppler,
            max_delay=self.max_delay,
            azimuth_range=tuple(self.azimuth_range),
            elevation_range=tuple(self.elevation_range),
            seed=seed,
        )

    def counts(self) -> dict[str, int]:
        return {"train": self.train, "val": self.val, "test": self.test}


@dataclass(frozen=True)
class ScheduleSection:
    mode: str = "fixed"  # fixed | plateau
    autonomous: int = 2
    passive: int = 1
    window: int = 3
    min_delta: float = 1e-3
    passive_len: int = 1

    def schedule(self, total_epochs: int) -> AlPlSchedule:
        if self.mode == "fixed":
            return AlPlSchedule(FixedCycle(self.autonomous, self.passive), total_epochs)
        if self.mode == "plateau":
            return AlPlSchedule(
                PlateauTriggered(self.window, self.min_delta, self.passive_len), total_epochs
            )
        raise ConfigError(f"unknown schedule mode '{self.mode}'")


@dataclass(frozen=True)
class EvalSection:
    time_boundary: int | None = None  # defaults to T // 2
    freq_boundary: int | None = None  # defaults to K // 2
    bench_batch: int = 8
    bench_repetitions: int = 50
    bench_warmup: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    data: DataSection
    teacher: ModelConfig
    student: ModelConfig
    distill: dict  # TrainConfig kwargs, seed injected at use
    schedule: ScheduleSection
    eval: EvalSection
    fingerprint: str
    name: str = "experiment"

    def train_config(self, seed: int | None = None) -> TrainConfig:
        kwargs = dict(self.distill)
        return TrainConfig(seed=self.seed if seed is None else seed, **kwargs)


def _strict_kwargs(section: str, raw: dict, cls) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    return dict(raw)


def _model_config(section: str, raw: dict) -> ModelConfig:
    kwargs = _strict_kwargs(section, raw, ModelConfig)
    patch = kwargs.get("patch")
    if isinstance(patch, dict):
        extra = set(patch) - {"t", "k", "n"}
        if extra:
            raise ConfigError(f"unknown key(s) in [{section}].patch: {sorted(extra)}")
        kwargs["patch"] = PatchSpec(**patch)
    elif isinstance(patch, (list, tuple)):
        kwargs["patch"] = PatchSpec(*patch)
    return ModelConfig(**kwargs)


def _tuplify(x):
    return tuple(x) if isinstance(x, list) else x


def parse_config(doc: dict, source: str = "<config>") -> ExperimentConfig:
    known_top = {"seed", "name", "data", "teacher", "student", "distill", "schedule", "eval"}
    unknown = set(doc) - known_top
    if unknown:
        raise ConfigError(f"unknown top-level key(s) in {source}: {sorted(unknown)}")

    data_raw = _strict_kwargs("data", doc.get("data", {}), DataSection)
    for key in ("azimuth_range", "elevation_range"):
        if key in data_raw:
            data_raw[key] = _tuplify(data_raw[key])
    data = DataSection(**data_raw)

    distill_raw = _strict_kwargs("distill", doc.get("distill", {}), TrainConfig)
    if "seed" in distill_raw:
        raise ConfigError("seed belongs at the top level, not in [distill]")
    if "mask_mix" in distill_raw:
        distill_raw["mask_mix"] = _tuplify(distill_raw["mask_mix"])
    TrainConfig(seed=0, **distill_raw)  # validate eagerly

    cfg = ExperimentConfig(
        seed=int(doc.get("seed", 0)),
        data=data,
        teacher=_model_config("teacher", doc.get("teacher", {"dim": 64})),
        student=_model_config("student", doc.get("student", {"dim": 32})),
        distill=distill_raw,
        schedule=ScheduleSection(**_strict_kwargs("schedule", doc.get("schedule", {}), ScheduleSection)),
        eval=EvalSection(**_strict_kwargs("eval", doc.get("eval", {}), EvalSection)),
        fingerprint=fingerprint_of(doc),
        name=str(doc.get("name", "experiment")),
    )
    if cfg.teacher.patch != cfg.student.patch:
        raise ConfigError("[teacher] and [student] must share the same patch spec")
    return cfg


def fingerprint_of(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    if p.suffix == ".toml":
        try:
            doc = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{p}: TOML parse error: {e}") from e
    elif p.suffix == ".json":
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: JSON parse error: {e}") from e
    else:
        raise ConfigError(f"{p}: config must be .toml or .json")
    return parse_config(doc, source=str(p))
