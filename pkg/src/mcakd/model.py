"""Masked-reconstruction transformer over CSI tokens.

Teacher and student share this architecture and differ only in config
(the student halves the hidden width). The encoder runs on visible tokens
only; the decoder runs on all grid positions, with masked slots filled by a
learned mask token, and a linear head maps decoder outputs back to token
features. Reconstruction replaces masked entries only; visible entries of
the returned grid are copied from the input bit-for-bit.

Every forward pass also returns `Taps`: the post-embedding token matrix, all
post-softmax attention maps, and the output of the final attention sub-layer
(after its residual add, before the MLP) of encoder and decoder. These are
the distillation surfaces.

Positional information is a fixed 3D sine/cosine table over the (t, k, n)
token grid coordinates, split across the hidden width per axis; it is not a
learnable parameter, which keeps teacher/student parameter counts clean.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .csi import CsiTensor
from .errors import ConfigError, ContractError, FormatError, NumericError
from .tokens import MaskSet, PatchSpec, TaskSpec, TokenBatch, grid_coords, patchify, unpatchify

CHECKPOINT_MAGIC = b"CSKD"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    dim: int
    encoder_depth: int = 6
    decoder_depth: int = 4
    num_heads: int = 8
    mlp_ratio: float = 4.0
    patch: PatchSpec = PatchSpec(1, 1, 1)
    max_tokens: int = 8192

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2:
            raise ConfigError(f"dim must be a positive even integer, got {self.dim}")
        if self.num_heads < 1 or self.dim % self.num_heads:
            raise ConfigError(f"dim {self.dim} must be divisible by num_heads {self.num_heads}")
        if self.encoder_depth < 0 or self.decoder_depth < 0:
            raise ConfigError("depths must be non-negative")
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive")

    @property
    def feat_dim(self) -> int:
        return self.patch.feat_dim

    @property
    def mlp_hidden(self) -> int:
        return int(self.dim * self.mlp_ratio)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @staticmethod
    def from_json(d: dict) -> "ModelConfig":
        d = dict(d)
        d["patch"] = PatchSpec(**d["patch"])
        return ModelConfig(**d)


@dataclass
class Taps:
    """Per-forward captures used as distillation targets.

    Shapes below are for a single sample; batched forwards prepend a batch
    axis to every field. V = visible tokens, G = all tokens.
    """

    embeddings: torch.Tensor  # [G, D] post-embedding (projection + positions), pre-encoder
    attn_enc: torch.Tensor    # [L_enc, H, V, V] post-softmax
    attn_dec: torch.Tensor    # [L_dec, H, G, G] post-softmax
    hidden_enc: torch.Tensor  # [V, D] final encoder attention sub-layer output
    hidden_dec: torch.Tensor  # [G, D] final decoder attention sub-layer output


def positional_encoding_3d(coords: np.ndarray, dim: int) -> torch.Tensor:
    """Fixed sine/cosine encoding of (t, k, n) grid coordinates, [G, dim] float64.

    The width is split into three even-sized chunks, one per axis, each
    encoded with the usual geometric frequency ladder.
    """
    if dim % 2:
        raise ConfigError(f"positional dim must be even, got {dim}")
    base = dim // 3
    d_k = d_n = base - (base % 2)
    d_t = dim - d_k - d_n
    parts = []
    for axis, d_axis in ((0, d_t), (1, d_k), (2, d_n)):
        if d_axis == 0:
            continue
        omega = 1.0 / (10000.0 ** (np.arange(d_axis // 2, dtype=np.float64) / (d_axis / 2)))
        angles = coords[:, axis : axis + 1].astype(np.float64) * omega[None, :]
        parts.append(np.concatenate([np.sin(angles), np.cos(angles)], axis=1))
    return torch.from_numpy(np.concatenate(parts, axis=1))


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b, s, d = x.shape
        qkv = self.qkv(x).reshape(b, s, 3, self.num_heads, d // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)  # each [B, H, S, d_head]
        weights = torch.softmax((q * self.scale) @ k.transpose(-2, -1), dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, s, d)
        return self.proj(out), weights


class Block(nn.Module):
    """Pre-norm transformer block; also returns attention weights and the
    post-attention-residual hidden state (the tap point for the final layer)."""

    def __init__(self, dim: int, num_heads: int, mlp_hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_hidden), nn.GELU(), nn.Linear(mlp_hidden, dim)
        )

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        attn_out, weights = self.attn(self.norm1(x))
        x = x + attn_out
        post_attn = x
        x = x + self.mlp(self.norm2(x))
        return x, weights, post_attn


class CsiMaskedAutoencoder(nn.Module):
    """Encoder-decoder reconstruction model; `role` tags teacher vs student."""

    def __init__(self, config: ModelConfig, role: str = "teacher"):
        super().__init__()
        self.config = config
        self.role = role
        self.embed_proj = nn.Linear(config.feat_dim, config.dim)
        self.mask_token = nn.Parameter(torch.zeros(config.dim))
        self.encoder = nn.ModuleList(
            Block(config.dim, config.num_heads, config.mlp_hidden)
            for _ in range(config.encoder_depth)
        )
        self.encoder_norm = nn.LayerNorm(config.dim)
        self.decoder = nn.ModuleList(
            Block(config.dim, config.num_heads, config.mlp_hidden)
            for _ in range(config.decoder_depth)
        )
        self.decoder_norm = nn.LayerNorm(config.dim)
        self.head = nn.Linear(config.dim, config.feat_dim)
        self.forward_calls = 0  # instrumentation for phase-cost checks
        self._pos_cache: dict[tuple[int, int, int], torch.Tensor] = {}

    def init_weights(self):
        """Truncated-normal projections (std 0.02), zero biases; draws from the
        global torch RNG, so wrap in a seeded fork for determinism."""
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.trunc_normal_(module.weight, std=0.02)
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    def _positions(self, dims: tuple[int, int, int]) -> torch.Tensor:
        dims = tuple(int(d) for d in dims)
        if dims not in self._pos_cache:
            coords = grid_coords(self.config.patch, dims)
            if len(coords) > self.config.max_tokens:
                raise ConfigError(
                    f"{len(coords)} tokens exceeds max_tokens {self.config.max_tokens}"
                )
            self._pos_cache[dims] = positional_encoding_3d(coords, self.config.dim)
        return self._pos_cache[dims]

    def _dtype(self) -> torch.dtype:
        return self.embed_proj.weight.dtype

    def embed(self, tb: TokenBatch) -> torch.Tensor:
        """Token features -> [G, D]: linear projection plus positional encoding."""
        if tb.tokens.shape[1] != self.config.feat_dim:
            raise ContractError(
                f"token width {tb.tokens.shape[1]} does not match model feat dim "
                f"{self.config.feat_dim}"
            )
        tokens = torch.from_numpy(tb.tokens).to(self._dtype())
        pos = positional_encoding_3d(tb.coords, self.config.dim).to(self._dtype())
        return self.embed_proj(tokens) + pos

    def forward_tokens(
        self, tokens: torch.Tensor, mask: MaskSet, dims: tuple[int, int, int], need_taps: bool = True
    ) -> tuple[torch.Tensor, Taps | None]:
        """Batched core forward: tokens [B, G, F] -> (predicted tokens [B, G, F], Taps).

        Predicted tokens are the raw head outputs at every position; callers
        splice in the input at visible positions (see `reconstruct_tokens`).
        need_taps=False skips assembling the attention-map captures (the
        predictions are bit-identical either way); it returns taps=None.
        """
        self.forward_calls += 1
        b, g, f = tokens.shape
        pos = self._positions(dims).to(tokens.dtype)
        emb = self.embed_proj(tokens) + pos  # [B, G, D] embeddings tap
        vis = torch.from_numpy(mask.visible_idx)

        x = emb[:, vis, :]
        attn_enc, hidden_enc = [], None
        for i, block in enumerate(self.encoder):
            x, weights, post_attn = block(x)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activations in encoder layer {i}")
            if need_taps:
                attn_enc.append(weights)
            hidden_enc = post_attn
        x = self.encoder_norm(x)

        dec = self.mask_token.to(tokens.dtype).expand(b, g, self.config.dim).clone()
        dec[:, vis, :] = x
        dec = dec + pos
        attn_dec, hidden_dec = [], None
        for i, block in enumerate(self.decoder):
            dec, weights, post_attn = block(dec)
            if not torch.isfinite(dec).all():
                raise NumericError(f"non-finite activations in decoder layer {i}")
            if need_taps:
                attn_dec.append(weights)
            hidden_dec = post_attn
        pred = self.head(self.decoder_norm(dec))
        if not need_taps:
            return pred, None

        d = self.config.dim
        taps = Taps(
            embeddings=emb,
            attn_enc=torch.stack(attn_enc, dim=1)
            if attn_enc
            else tokens.new_zeros(b, 0, self.config.num_heads, len(vis), len(vis)),
            attn_dec=torch.stack(attn_dec, dim=1)
            if attn_dec
            else tokens.new_zeros(b, 0, self.config.num_heads, g, g),
            hidden_enc=hidden_enc if hidden_enc is not None else tokens.new_zeros(b, len(vis), d),
            hidden_dec=hidden_dec if hidden_dec is not None else tokens.new_zeros(b, g, d),
        )
        return pred, taps

    def reconstruct_tokens(
        self, tokens: torch.Tensor, mask: MaskSet, dims: tuple[int, int, int],
        need_taps: bool = True,
    ) -> tuple[torch.Tensor, Taps | None]:
        """As `forward_tokens`, but with input tokens passed through at visible slots."""
        pred, taps = self.forward_tokens(tokens, mask, dims, need_taps=need_taps)
        out = tokens.clone()
        msk = torch.from_numpy(mask.masked_idx)
        out[:, msk, :] = pred[:, msk, :].to(tokens.dtype)
        return out, taps

    def forward(self, h: CsiTensor, mask: MaskSet) -> tuple[CsiTensor, Taps]:
        """Single-sample reconstruction: H -> (H_hat, taps without batch axis)."""
        tb = patchify(h, self.config.patch)
        if tb.num_tokens != mask.num_tokens:
            raise ContractError(
                f"mask covers {mask.num_tokens} tokens but H patchifies to {tb.num_tokens}"
            )
        tokens = torch.from_numpy(tb.tokens).to(self._dtype()).unsqueeze(0)
        with torch.no_grad():
            out, taps = self.reconstruct_tokens(tokens, mask, h.dims)
        out_np = out.squeeze(0).to(torch.float32).numpy()
        vis = mask.visible_idx
        out_np[vis] = tb.tokens[vis]  # bit-exact passthrough
        h_hat = unpatchify(TokenBatch(tokens=out_np, coords=tb.coords), self.config.patch, h.dims)
        squeezed = Taps(**{
            f.name: getattr(taps, f.name).squeeze(0) for f in dataclasses.fields(Taps)
        })
        return h_hat, squeezed


def build_model(
    config: ModelConfig, role: str, seed: int, dtype: torch.dtype = torch.float32
) -> CsiMaskedAutoencoder:
    """Construct and initialize deterministically from `seed` (global RNG untouched)."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = CsiMaskedAutoencoder(config, role=role)
        model.init_weights()
    return model.to(dtype)


def predict(h: CsiTensor, task: TaskSpec, model: CsiMaskedAutoencoder) -> CsiTensor:
    """Run the prediction task: only entries past the task boundary are model output."""
    mask = task.mask(model.config.patch, h.dims)
    h_hat, _ = model.forward(h, mask)
    return h_hat


def count_params(config: ModelConfig) -> int:
    """Exact learnable-scalar count.

    With D = dim, F = 2*p_t*p_k*p_n, M = int(mlp_ratio * D), and
    L = encoder_depth + decoder_depth:

        per_block = (3*D*D + 3*D) + (D*D + D)   qkv + output projection
                  + 4*D                          two layer norms
                  + (D*M + M) + (M*D + D)        MLP
        total = L * per_block
              + F*D + D          token projection
              + D                mask token
              + 4*D              final encoder/decoder norms
              + D*F + F          reconstruction head

    The positional table is fixed (not learnable) and contributes nothing.
    """
    d, f, m = config.dim, config.feat_dim, config.mlp_hidden
    per_block = (3 * d * d + 3 * d) + (d * d + d) + 4 * d + (d * m + m) + (m * d + d)
    total = (config.encoder_depth + config.decoder_depth) * per_block
    total += f * d + d      # embed projection
    total += d              # mask token
    total += 4 * d          # final norms
    total += d * f + f      # head
    return total


def pack_tensors(kind: str, meta: dict, state: dict[str, torch.Tensor]) -> bytes:
    """Versioned container: magic, header length, JSON header, raw tensor payload."""
    manifest = []
    payloads = []
    offset = 0
    for name, param in state.items():
        arr = param.detach().cpu().numpy()
        raw = arr.tobytes()
        manifest.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.name,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": CHECKPOINT_VERSION, "kind": kind, "meta": meta, "tensors": manifest},
        sort_keys=True,
    ).encode()
    return (
        CHECKPOINT_MAGIC
        + struct.pack("<HI", CHECKPOINT_VERSION, len(header))
        + header
        + b"".join(payloads)
    )


def unpack_tensors(raw: bytes, expect_kind: str, origin: str = "checkpoint"):
    """Inverse of `pack_tensors`; returns (meta, state dict of torch tensors)."""
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{origin}: not a checkpoint file (bad magic at offset 0)")
    version, header_len = struct.unpack("<HI", raw[4:10])
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"{origin}: checkpoint version {version}, reader expects {CHECKPOINT_VERSION}"
        )
    try:
        header = json.loads(raw[10 : 10 + header_len].decode())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"{origin}: corrupt header at offset 10: {e}") from e
    if header.get("kind") != expect_kind:
        raise FormatError(f"{origin}: expected a '{expect_kind}' checkpoint, got '{header.get('kind')}'")
    payload = raw[10 + header_len :]
    state = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(payload):
            raise FormatError(
                f"{origin}: truncated payload for tensor '{entry['name']}' at offset "
                f"{10 + header_len + start}"
            )
        arr = np.frombuffer(payload[start : start + n], dtype=np.dtype(entry["dtype"]))
        state[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).copy())
    return header["meta"], state


def checkpoint_bytes(model: CsiMaskedAutoencoder, fingerprint: str = "") -> bytes:
    meta = {
        "model_config": model.config.to_json(),
        "role": model.role,
        "config_fingerprint": fingerprint,
    }
    return pack_tensors("model", meta, model.state_dict())


def save_checkpoint(model: CsiMaskedAutoencoder, path, fingerprint: str = "") -> None:
    from pathlib import Path

    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(checkpoint_bytes(model, fingerprint))


def load_checkpoint(path) -> tuple[CsiMaskedAutoencoder, dict]:
    """Reconstruct a model bit-exactly; returns (model, checkpoint meta dict)."""
    from pathlib import Path

    meta, state = unpack_tensors(Path(path).read_bytes(), "model", origin=str(path))
    config = ModelConfig.from_json(meta["model_config"])
    model = CsiMaskedAutoencoder(config, role=meta.get("role", "teacher"))
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise FormatError(f"{path}: checkpoint missing tensors {sorted(missing)}")
    model.load_state_dict(state)
    return model, meta


def checkpoint_hash(path) -> str:
    from pathlib import Path

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
