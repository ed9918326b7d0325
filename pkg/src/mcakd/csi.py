"""Synthetic spatial-temporal-frequency CSI datasets.

A CSI sample is a complex grid H[t, k, n] over T time resource blocks,
K frequency resource blocks, and N = ant_vertical * ant_horizontal antennas
of a uniform planar array. Samples are synthesized as a sum of propagation
paths, each contributing a Doppler phase ramp along t, a delay phase ramp
along k, and a UPA steering phase across n:

    H[t, k, n] = sum_p  alpha_p * exp(j*2*pi*(f_p * t * delta_t - tau_p * k * delta_f))
                           * exp(j*pi*(v * sin(theta_p) * sin(phi_p) + h * cos(theta_p)))

with n = v * ant_horizontal + h (half-wavelength spacing) and path gains
alpha_p drawn complex Gaussian with total expected power 1, so generated
samples have unit average power per entry in expectation.

Datasets persist as a `<name>.csi` binary (float32 little-endian interleaved
re/im, t-major then k then n, samples concatenated) plus a `<name>.json`
sidecar carrying dims, splits, and generation provenance.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateInputError, FormatError

FILE_VERSION = 1

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class CsiTensor:
    """One complex channel grid of shape (T, K, N); entries must be finite."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ConfigError(f"CSI tensor must be 3-dimensional, got shape {self.data.shape}")
        if not np.iscomplexobj(self.data):
            raise ConfigError("CSI tensor must be complex-valued")
        if not np.all(np.isfinite(self.data.real)) or not np.all(np.isfinite(self.data.imag)):
            raise DegenerateInputError("CSI tensor contains NaN or Inf entries")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # (T, K, N)

    def power(self) -> float:
        """Mean squared modulus per entry."""
        return float(np.mean(np.abs(self.data.astype(np.complex128)) ** 2))


@dataclass(frozen=True)
class ChannelGenConfig:
    """Parameters of the sum-of-paths generator.

    delta_t/delta_f are the RB spacings in seconds/Hz; max_doppler and
    max_delay bound the per-path draws. Sampling must stay below aliasing:
    max_doppler*delta_t < 0.5 and max_delay*delta_f < 1.0.
    """

    time_rbs: int
    freq_rbs: int
    ant_vertical: int
    ant_horizontal: int
    num_paths: int = 8
    delta_t: float = 1e-3
    delta_f: float = 180e3
    max_doppler: float = 100.0
    max_delay: float = 1e-6
    azimuth_range: tuple[float, float] = (-math.pi, math.pi)
    elevation_range: tuple[float, float] = (0.0, math.pi)
    seed: int = 0

    def __post_init__(self):
        for name in ("time_rbs", "freq_rbs", "ant_vertical", "ant_horizontal", "num_paths"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.max_doppler < 0 or self.max_delay < 0:
            raise ConfigError("max_doppler and max_delay must be non-negative")
        if self.max_doppler * self.delta_t >= 0.5:
            raise ConfigError(
                f"temporal sampling above aliasing: max_doppler*delta_t = "
                f"{self.max_doppler * self.delta_t:.3g} >= 0.5"
            )
        if self.max_delay * self.delta_f >= 1.0:
            raise ConfigError(
                f"frequency sampling above aliasing: max_delay*delta_f = "
                f"{self.max_delay * self.delta_f:.3g} >= 1.0"
            )

    @property
    def num_ant(self) -> int:
        return self.ant_vertical * self.ant_horizontal

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.time_rbs, self.freq_rbs, self.num_ant)


@dataclass(frozen=True)
class PathSet:
    """Realized per-path parameters of one sample; inputs to `synthesize`."""

    gains: np.ndarray      # complex [P]
    dopplers: np.ndarray   # Hz [P]
    delays: np.ndarray     # s [P]
    azimuths: np.ndarray   # rad [P]
    elevations: np.ndarray # rad [P]


def draw_paths(cfg: ChannelGenConfig, sample_seed: int) -> PathSet:
    """Draw path parameters, deterministic in (cfg.seed, sample_seed).

    Gains are complex Gaussian scaled so the total expected power is 1.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), int(sample_seed)]))
    p = cfg.num_paths
    gains = (rng.standard_normal(p) + 1j * rng.standard_normal(p)) / math.sqrt(2.0 * p)
    dopplers = rng.uniform(-cfg.max_doppler, cfg.max_doppler, size=p)
    delays = rng.uniform(0.0, cfg.max_delay, size=p)
    azimuths = rng.uniform(*cfg.azimuth_range, size=p)
    elevations = rng.uniform(*cfg.elevation_range, size=p)
    return PathSet(gains, dopplers, delays, azimuths, elevations)


def steering_vector(cfg: ChannelGenConfig, elevation: float, azimuth: float) -> np.ndarray:
    """UPA response a[(v,h)] = exp(j*pi*(v*sin(el)*sin(az) + h*cos(el))), n = v*ant_horizontal + h."""
    v = np.arange(cfg.ant_vertical)[:, None]
    h = np.arange(cfg.ant_horizontal)[None, :]
    phase = math.pi * (v * math.sin(elevation) * math.sin(azimuth) + h * math.cos(elevation))
    return np.exp(1j * phase).reshape(-1)


def synthesize(cfg: ChannelGenConfig, paths: PathSet) -> CsiTensor:
    """Evaluate the sum-of-paths formula for given path parameters."""
    t = np.arange(cfg.time_rbs)
    k = np.arange(cfg.freq_rbs)
    acc = np.zeros((cfg.time_rbs, cfg.freq_rbs, cfg.num_ant), dtype=np.complex128)
    for p in range(len(paths.gains)):
        time_phase = np.exp(1j * _TWO_PI * paths.dopplers[p] * t * cfg.delta_t)
        freq_phase = np.exp(-1j * _TWO_PI * paths.delays[p] * k * cfg.delta_f)
        ant = steering_vector(cfg, paths.elevations[p], paths.azimuths[p])
        acc += paths.gains[p] * (
            time_phase[:, None, None] * freq_phase[None, :, None] * ant[None, None, :]
        )
    return CsiTensor(acc.astype(np.complex64))


def generate_channel(cfg: ChannelGenConfig, sample_seed: int) -> CsiTensor:
    """One synthetic CSI sample, deterministic in (cfg, sample_seed)."""
    return synthesize(cfg, draw_paths(cfg, sample_seed))


def normalize(h: CsiTensor) -> tuple[CsiTensor, float]:
    """Rescale so the squared Frobenius norm equals T*K*N (unit average power).

    Returns (scaled tensor, scale); multiplying back by scale recovers the
    input to float precision. Raises on an all-zero tensor.
    """
    power = h.power()
    if power <= 0.0:
        raise DegenerateInputError("cannot normalize an all-zero tensor")
    scale = math.sqrt(power)
    return CsiTensor((h.data / np.float32(scale)).astype(h.data.dtype)), scale


def denormalize(h: CsiTensor, scale: float) -> CsiTensor:
    return CsiTensor((h.data * np.float32(scale)).astype(h.data.dtype))


@dataclass
class Dataset:
    """Uniform-dim sample collection with disjoint named splits and provenance."""

    samples: np.ndarray  # complex64 [count, T, K, N]
    splits: dict[str, list[int]] = field(default_factory=dict)
    gen_config: ChannelGenConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.samples.ndim != 4:
            raise ConfigError(f"samples must be [count, T, K, N], got shape {self.samples.shape}")
        seen: set[int] = set()
        for name, idx in self.splits.items():
            for i in idx:
                if i < 0 or i >= len(self.samples):
                    raise ConfigError(f"split '{name}' references sample {i} out of range")
                if i in seen:
                    raise ConfigError(f"sample {i} appears in more than one split")
                seen.add(i)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.samples.shape[1:]

    def sample(self, i: int) -> CsiTensor:
        return CsiTensor(self.samples[i])

    def split(self, name: str) -> np.ndarray:
        """Samples of one split as a [n, T, K, N] view."""
        if name not in self.splits:
            raise ConfigError(f"dataset has no split '{name}' (have {sorted(self.splits)})")
        return self.samples[np.asarray(self.splits[name], dtype=np.int64)]


def make_dataset(
    cfg: ChannelGenConfig, counts: dict[str, int], normalize_mode: str = "none"
) -> Dataset:
    """Generate `sum(counts)` samples and tag contiguous splits in given order.

    Per-sample seeds are cfg.seed-derived and independent, so generation is
    order-free. normalize_mode is one of none|global|per_sample; global
    divides every sample by the single dataset-wide RMS amplitude.
    """
    total = sum(counts.values())
    if total < 1:
        raise ConfigError("dataset must contain at least one sample")
    samples = np.stack([generate_channel(cfg, i).data for i in range(total)])
    samples = apply_normalization(samples, normalize_mode)
    splits: dict[str, list[int]] = {}
    start = 0
    for name, n in counts.items():
        if n < 0:
            raise ConfigError(f"split '{name}' has negative count {n}")
        splits[name] = list(range(start, start + n))
        start += n
    return Dataset(samples=samples, splits=splits, gen_config=cfg, seed=cfg.seed)


def apply_normalization(samples: np.ndarray, mode: str) -> np.ndarray:
    if mode == "none":
        return samples
    if mode == "global":
        power = float(np.mean(np.abs(samples.astype(np.complex128)) ** 2))
        if power <= 0:
            raise DegenerateInputError("cannot normalize an all-zero dataset")
        return (samples / np.float32(math.sqrt(power))).astype(samples.dtype)
    if mode == "per_sample":
        return np.stack([normalize(CsiTensor(s))[0].data for s in samples])
    raise ConfigError(f"unknown normalization mode '{mode}'")


def _config_to_json(cfg: ChannelGenConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["azimuth_range"] = list(d["azimuth_range"])
    d["elevation_range"] = list(d["elevation_range"])
    return d


def _config_from_json(d: dict) -> ChannelGenConfig:
    d = dict(d)
    d["azimuth_range"] = tuple(d["azimuth_range"])
    d["elevation_range"] = tuple(d["elevation_range"])
    return ChannelGenConfig(**d)


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write `<path>.csi` + `<path>.json`; `path` may omit the extension."""
    base = Path(path)
    if base.suffix == ".csi":
        base = base.with_suffix("")
    t, k, n = ds.dims
    header = {
        "version": FILE_VERSION,
        "T": int(t),
        "K": int(k),
        "N": int(n),
        "count": len(ds),
        "splits": {name: list(map(int, idx)) for name, idx in ds.splits.items()},
        "gen_config": _config_to_json(ds.gen_config) if ds.gen_config else None,
        "seed": int(ds.seed),
    }
    base.parent.mkdir(parents=True, exist_ok=True)
    # interleaved (re, im) float32 little-endian, t-major then k then n
    flat = ds.samples.astype(np.complex64)
    payload = np.empty(flat.size * 2, dtype="<f4")
    payload[0::2] = flat.real.ravel()
    payload[1::2] = flat.imag.ravel()
    base.with_suffix(".csi").write_bytes(payload.tobytes())
    base.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True))


def load_dataset(path: str | Path) -> Dataset:
    base = Path(path)
    if base.suffix == ".csi":
        base = base.with_suffix("")
    sidecar = base.with_suffix(".json")
    payload_path = base.with_suffix(".csi")
    if not sidecar.exists() or not payload_path.exists():
        raise FormatError(f"dataset files not found at {base}.csi/.json")
    try:
        header = json.loads(sidecar.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"sidecar {sidecar} is not valid JSON: {e}") from e
    if header.get("version") != FILE_VERSION:
        raise FormatError(
            f"dataset version mismatch: file has {header.get('version')}, "
            f"reader expects {FILE_VERSION}"
        )
    t, k, n, count = (int(header[x]) for x in ("T", "K", "N", "count"))
    raw = payload_path.read_bytes()
    expected = count * t * k * n * 2 * 4
    if len(raw) != expected:
        raise FormatError(
            f"truncated or oversized payload: expected {expected} bytes, "
            f"got {len(raw)} (mismatch at offset {min(len(raw), expected)})"
        )
    flat = np.frombuffer(raw, dtype="<f4")
    data = np.empty(count * t * k * n, dtype=np.complex64)
    data.real = flat[0::2]
    data.imag = flat[1::2]
    gen_cfg = _config_from_json(header["gen_config"]) if header.get("gen_config") else None
    return Dataset(
        samples=data.reshape(count, t, k, n),
        splits={name: list(idx) for name, idx in header.get("splits", {}).items()},
        gen_config=gen_cfg,
        seed=int(header.get("seed", 0)),
    )
