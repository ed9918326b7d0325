"""Tokenization of CSI grids and the three masking strategies.

A patch spec (p_t, p_k, p_n) carves H in C^{T x K x N} into
G = (T/p_t)(K/p_k)(N/p_n) non-overlapping blocks, each flattened into a real
feature vector of width F = 2*p_t*p_k*p_n (all real parts of the block in
C order, then all imaginary parts). Token order is t-major, then k, then n.

Masking partitions [0, G) into visible and masked index sets:
  - random: a seeded draw of round(ratio*G) tokens;
  - time: every token whose time coordinate reaches the boundary;
  - frequency: likewise along the frequency axis.
Time/frequency masks are seed-independent, which makes inference-time
prediction tasks and training-time masks share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .csi import CsiTensor
from .errors import ConfigError, ContractError, DegenerateMaskError


class MaskStrategy(str, Enum):
    RANDOM = "random"
    TIME = "time"
    FREQUENCY = "frequency"


@dataclass(frozen=True)
class PatchSpec:
    """Patch extents along (time, freq, antenna); each must divide its axis."""

    t: int = 1
    k: int = 1
    n: int = 1

    def __post_init__(self):
        if min(self.t, self.k, self.n) < 1:
            raise ConfigError(f"patch extents must be positive, got {self}")

    @property
    def feat_dim(self) -> int:
        return 2 * self.t * self.k * self.n

    def grid(self, dims: tuple[int, int, int]) -> tuple[int, int, int]:
        t, k, n = dims
        if t % self.t or k % self.k or n % self.n:
            raise ConfigError(f"patch {self} does not divide dims {dims}")
        return (t // self.t, k // self.k, n // self.n)

    def num_tokens(self, dims: tuple[int, int, int]) -> int:
        gt, gk, gn = self.grid(dims)
        return gt * gk * gn


@dataclass(frozen=True)
class TokenBatch:
    """Token features [G, F] plus each token's (t, k, n) grid coordinates [G, 3]."""

    tokens: np.ndarray
    coords: np.ndarray

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.coords.shape != (self.tokens.shape[0], 3):
            raise ContractError(
                f"inconsistent token batch: tokens {self.tokens.shape}, coords {self.coords.shape}"
            )

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]


def grid_coords(spec: PatchSpec, dims: tuple[int, int, int]) -> np.ndarray:
    """Token grid coordinates in canonical t-major order, [G, 3] int64."""
    gt, gk, gn = spec.grid(dims)
    tt, kk, nn = np.meshgrid(np.arange(gt), np.arange(gk), np.arange(gn), indexing="ij")
    return np.stack([tt.ravel(), kk.ravel(), nn.ravel()], axis=1).astype(np.int64)


def patchify(h: CsiTensor, spec: PatchSpec) -> TokenBatch:
    """Carve H into tokens; exact inverse of `unpatchify`."""
    t, k, n = h.dims
    gt, gk, gn = spec.grid(h.dims)
    # [gt, p_t, gk, p_k, gn, p_n] -> [G, p_t*p_k*p_n]
    blocks = (
        h.data.reshape(gt, spec.t, gk, spec.k, gn, spec.n)
        .transpose(0, 2, 4, 1, 3, 5)
        .reshape(gt * gk * gn, spec.t * spec.k * spec.n)
    )
    tokens = np.concatenate(
        [blocks.real.astype(np.float32), blocks.imag.astype(np.float32)], axis=1
    )
    return TokenBatch(tokens=tokens, coords=grid_coords(spec, h.dims))


def unpatchify(tb: TokenBatch, spec: PatchSpec, dims: tuple[int, int, int]) -> CsiTensor:
    """Reassemble a CSI grid from tokens; tolerates any token row order."""
    gt, gk, gn = spec.grid(dims)
    if tb.num_tokens != gt * gk * gn:
        raise ContractError(f"expected {gt * gk * gn} tokens for dims {dims}, got {tb.num_tokens}")
    if tb.tokens.shape[1] != spec.feat_dim:
        raise ContractError(
            f"token width {tb.tokens.shape[1]} does not match patch feat dim {spec.feat_dim}"
        )
    half = spec.t * spec.k * spec.n
    blocks = tb.tokens[:, :half].astype(np.float32) + 1j * tb.tokens[:, half:].astype(np.float32)
    out = np.empty(dims, dtype=np.complex64)
    for g in range(tb.num_tokens):
        ct, ck, cn = tb.coords[g]
        block = blocks[g].reshape(spec.t, spec.k, spec.n)
        out[
            ct * spec.t : (ct + 1) * spec.t,
            ck * spec.k : (ck + 1) * spec.k,
            cn * spec.n : (cn + 1) * spec.n,
        ] = block
    return CsiTensor(out)


@dataclass(frozen=True)
class MaskSet:
    """Disjoint visible/masked partition of token indices [0, G)."""

    strategy: MaskStrategy
    visible_idx: np.ndarray
    masked_idx: np.ndarray
    ratio: float | None = None
    boundary: int | None = None

    def __post_init__(self):
        vis, msk = set(self.visible_idx.tolist()), set(self.masked_idx.tolist())
        g = len(self.visible_idx) + len(self.masked_idx)
        if vis & msk or vis | msk != set(range(g)):
            raise ContractError("visible/masked indices must disjointly cover [0, G)")
        if len(msk) == 0 or len(vis) == 0:
            raise DegenerateMaskError("mask leaves zero visible or zero masked tokens")

    @property
    def num_tokens(self) -> int:
        return len(self.visible_idx) + len(self.masked_idx)

    @property
    def num_visible(self) -> int:
        return len(self.visible_idx)


def make_mask(
    strategy: MaskStrategy | str,
    ratio_or_boundary: float | int,
    coords: np.ndarray,
    spec: PatchSpec,
    dims: tuple[int, int, int],
    seed: int = 0,
) -> MaskSet:
    """Build a MaskSet over tokens with grid coordinates `coords`.

    For the random strategy the argument is a ratio in (0, 1) and the draw is
    deterministic in `seed`. For time/frequency it is the boundary in tensor
    units (an int X with 0 < X < dim, a multiple of the patch extent, masking
    every token at or past it) or for convenience a float ratio converted to
    the boundary masking that trailing fraction of the axis.
    """
    strategy = MaskStrategy(strategy)
    g = len(coords)
    if strategy is MaskStrategy.RANDOM:
        ratio = float(ratio_or_boundary)
        if not 0.0 < ratio < 1.0:
            raise ConfigError(f"random mask ratio must be in (0, 1), got {ratio}")
        num_masked = int(np.floor(ratio * g + 0.5))
        if num_masked == 0 or num_masked == g:
            raise DegenerateMaskError(f"ratio {ratio} masks {num_masked} of {g} tokens")
        perm = np.random.default_rng(seed).permutation(g)
        masked = np.sort(perm[:num_masked])
        visible = np.sort(perm[num_masked:])
        return MaskSet(strategy, visible, masked, ratio=ratio)

    axis, extent = (0, spec.t) if strategy is MaskStrategy.TIME else (1, spec.k)
    dim = dims[axis]
    if isinstance(ratio_or_boundary, float) and 0.0 < ratio_or_boundary < 1.0:
        boundary_tokens = (dim // extent) - int(np.floor(ratio_or_boundary * (dim // extent) + 0.5))
        boundary = boundary_tokens * extent
    else:
        boundary = int(ratio_or_boundary)
        if boundary % extent:
            raise ConfigError(
                f"boundary {boundary} must be a multiple of the patch extent {extent}"
            )
    if boundary <= 0 or boundary >= dim:
        raise DegenerateMaskError(f"boundary {boundary} leaves no visible or no masked tokens")
    masked_sel = coords[:, axis] >= boundary // extent
    idx = np.arange(g)
    return MaskSet(strategy, idx[~masked_sel], idx[masked_sel], boundary=boundary)


@dataclass(frozen=True)
class TaskSpec:
    """A prediction task: reconstruct everything at or past `boundary` along one axis.

    kind "time" forecasts the trailing T - X_T resource blocks from the first
    X_T; kind "frequency" infers the trailing K - X_F blocks likewise.
    """

    kind: MaskStrategy
    boundary: int

    def __post_init__(self):
        if MaskStrategy(self.kind) is MaskStrategy.RANDOM:
            raise ConfigError("prediction tasks are time or frequency, not random")

    def mask(self, spec: PatchSpec, dims: tuple[int, int, int]) -> MaskSet:
        """The MaskSet this task evaluates under; identical to training-time masks."""
        axis = 0 if MaskStrategy(self.kind) is MaskStrategy.TIME else 1
        if not 0 < self.boundary < dims[axis]:
            raise ConfigError(f"task boundary {self.boundary} outside (0, {dims[axis]})")
        return make_mask(self.kind, int(self.boundary), grid_coords(spec, dims), spec, dims)

    @property
    def label(self) -> str:
        return f"{MaskStrategy(self.kind).value}@{self.boundary}"


def mask_entry_selector(
    mask: MaskSet, coords: np.ndarray, spec: PatchSpec, dims: tuple[int, int, int]
) -> np.ndarray:
    """Boolean [T, K, N] grid marking the tensor entries covered by masked tokens."""
    sel = np.zeros(dims, dtype=bool)
    for g in mask.masked_idx:
        ct, ck, cn = coords[g]
        sel[
            ct * spec.t : (ct + 1) * spec.t,
            ck * spec.k : (ck + 1) * spec.k,
            cn * spec.n : (cn + 1) * spec.n,
        ] = True
    return sel
