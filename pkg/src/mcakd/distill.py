"""Distillation losses and cross-attention knowledge selection (CA-KS).

All feature-matching terms are cosine losses: they align directions between
teacher and student intermediates while ignoring magnitudes, so the student
keeps freedom over its own scales. The three components are

  - attention loss: per layer and head, cosine between the flattened
    teacher/student attention maps, separately for encoder and decoder;
  - embedding loss: cosine per token row between the student embedding and
    the teacher embedding filtered down to the student width by CA-KS;
  - hidden-state loss: the same applied to the final attention sub-layer
    outputs of encoder and decoder.

The combined distillation loss is their plain (equally weighted) sum.

CA-KS bridges the teacher/student width mismatch. Student rows query the
teacher rows through learnable projections; the head-averaged cross-attention
map scores every teacher feature dimension by how strongly attended rows
activate it, and the student-width top scorers are gathered. Three instances
exist per distillation run (embedding, encoder hidden, decoder hidden), each
shared across all masking strategies. The top-k selection is discrete, so no
gradient flows through the ranking itself, only through the gathered values
and the cosine terms.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import nn

from .csi import CsiTensor
from .errors import ContractError, DegenerateInputError, DegenerateMaskError
from .model import ModelConfig, Taps
from .tokens import MaskSet, PatchSpec, grid_coords, mask_entry_selector

ABLATABLE = ("embed", "attn", "hs", "caks", "alpl")


@dataclass(frozen=True)
class DistillLosses:
    """Scalar record of one loss evaluation; l_mcakd is exactly the three-way sum."""

    l_attn: float
    l_embed: float
    l_hs: float
    l_mcakd: float
    l_mse: float = 0.0

    def __post_init__(self):
        if self.l_mcakd != self.l_attn + self.l_embed + self.l_hs:
            raise ContractError("l_mcakd must equal l_attn + l_embed + l_hs exactly")

    @staticmethod
    def from_components(l_attn: float, l_embed: float, l_hs: float, l_mse: float = 0.0):
        return DistillLosses(l_attn, l_embed, l_hs, l_attn + l_embed + l_hs, l_mse)

    def with_mse(self, l_mse: float) -> "DistillLosses":
        return replace(self, l_mse=l_mse)


class CaKs(nn.Module):
    """One knowledge-selection instance mapping teacher width down to student width."""

    def __init__(
        self,
        teacher_dim: int,
        student_dim: int,
        attn_dim: int | None = None,
        num_heads: int = 1,
        instance: str = "embedding",
    ):
        super().__init__()
        if student_dim > teacher_dim:
            raise ContractError(
                f"student width {student_dim} exceeds teacher width {teacher_dim}"
            )
        attn_dim = student_dim if attn_dim is None else attn_dim
        if attn_dim % num_heads:
            raise ContractError(f"attn_dim {attn_dim} must be divisible by heads {num_heads}")
        self.teacher_dim = teacher_dim
        self.student_dim = student_dim
        self.attn_dim = attn_dim
        self.num_heads = num_heads
        self.instance = instance
        self.query = nn.Linear(student_dim, attn_dim, bias=False)
        self.key = nn.Linear(teacher_dim, attn_dim, bias=False)
        self.value = nn.Linear(teacher_dim, attn_dim, bias=False)

    def init_weights(self):
        for lin in (self.query, self.key, self.value):
            nn.init.trunc_normal_(lin.weight, std=0.02)


@dataclass
class CaKsModules:
    """The three per-run instances: embedding, encoder hidden, decoder hidden."""

    embedding: CaKs
    encoder: CaKs
    decoder: CaKs

    def parameters(self):
        for m in (self.embedding, self.encoder, self.decoder):
            yield from m.parameters()

    def to(self, dtype: torch.dtype) -> "CaKsModules":
        for m in (self.embedding, self.encoder, self.decoder):
            m.to(dtype)
        return self


def build_caks(
    teacher_cfg: ModelConfig,
    student_cfg: ModelConfig,
    seed: int,
    dtype: torch.dtype = torch.float32,
) -> CaKsModules:
    """Deterministically initialized CA-KS trio for a distillation run."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        mods = CaKsModules(
            *(
                CaKs(
                    teacher_cfg.dim,
                    student_cfg.dim,
                    num_heads=student_cfg.num_heads,
                    instance=tag,
                )
                for tag in ("embedding", "encoder", "decoder")
            )
        )
        for m in (mods.embedding, mods.encoder, mods.decoder):
            m.init_weights()
    return mods.to(dtype)


def _select(
    e_t: torch.Tensor, e_s: torch.Tensor, ck: CaKs, identity_selection: bool = False
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Batched CA-KS: [B,S,Dt] x [B,S,Ds] -> (indices [B,Ds], filtered [B,S,Ds],
    attention [B,S,S], scores [B,Dt])."""
    if e_t.shape[:-1] != e_s.shape[:-1]:
        raise ContractError(
            f"teacher/student sequence shapes differ: {tuple(e_t.shape)} vs {tuple(e_s.shape)}"
        )
    if e_t.shape[-1] != ck.teacher_dim or e_s.shape[-1] != ck.student_dim:
        raise ContractError(
            f"feature widths ({e_t.shape[-1]}, {e_s.shape[-1]}) do not match CA-KS "
            f"({ck.teacher_dim}, {ck.student_dim})"
        )
    b, s, _ = e_t.shape
    head_dim = ck.attn_dim // ck.num_heads
    q = ck.query(e_s).reshape(b, s, ck.num_heads, head_dim).transpose(1, 2)
    k = ck.key(e_t).reshape(b, s, ck.num_heads, head_dim).transpose(1, 2)
    weights = torch.softmax((q @ k.transpose(-2, -1)) * head_dim**-0.5, dim=-1)
    attn = weights.mean(dim=1)  # head-averaged, row-stochastic [B, S, S]
    if identity_selection:
        indices = torch.arange(ck.student_dim, device=e_t.device).expand(b, -1)
    else:
        row_mass = attn.sum(dim=1)  # total attention landing on each teacher row
        scores = torch.einsum("bs,bsd->bd", row_mass, e_t)
        indices = torch.argsort(scores, dim=-1, descending=True, stable=True)[:, : ck.student_dim]
    gathered = e_t.gather(2, indices.unsqueeze(1).expand(b, s, ck.student_dim))
    if identity_selection:
        scores = torch.zeros(b, ck.teacher_dim, dtype=e_t.dtype, device=e_t.device)
    return indices, gathered, attn, scores


def ca_ks_select(
    e_t: torch.Tensor, e_s: torch.Tensor, ck: CaKs
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Single-sequence CA-KS: [S,Dt] x [S,Ds] -> (indices [Ds], filtered [S,Ds],
    head-averaged attention [S,S]).

    Scores rank teacher dimensions by attention-weighted activation mass;
    ties break toward the lower dimension index (stable descending sort).
    """
    if e_t.ndim != 2 or e_s.ndim != 2:
        raise ContractError("ca_ks_select expects 2-D inputs; training uses the batched path")
    indices, gathered, attn, _ = _select(e_t.unsqueeze(0), e_s.unsqueeze(0), ck)
    return indices.squeeze(0), gathered.squeeze(0), attn.squeeze(0)


def select_with_scores(
    e_t: torch.Tensor, e_s: torch.Tensor, ck: CaKs
) -> tuple[torch.Tensor, torch.Tensor]:
    """(indices [B,Ds], raw importance scores [B,Dt]) for diagnostics dumps."""
    indices, _, _, scores = _select(e_t, e_s, ck)
    return indices, scores


def _row_cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine along the last axis; raises on any zero-norm row."""
    if a.shape != b.shape:
        raise ContractError(f"cosine operands differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    na = torch.linalg.vector_norm(a, dim=-1)
    nb = torch.linalg.vector_norm(b, dim=-1)
    if a.numel() and (na.min().item() == 0.0 or nb.min().item() == 0.0):
        raise DegenerateInputError("zero-norm vector in cosine loss")
    return (a * b).sum(dim=-1) / (na * nb)


def _attn_side(a_t: torch.Tensor, a_s: torch.Tensor) -> torch.Tensor:
    """1 - mean cosine over (layer, head) of last-two-axes-flattened maps."""
    if a_t.shape != a_s.shape:
        raise ContractError(
            f"attention shapes differ: {tuple(a_t.shape)} vs {tuple(a_s.shape)}"
        )
    if a_t.shape[-4] == 0:  # zero-depth side contributes nothing
        return torch.zeros((), dtype=a_t.dtype)
    cos = _row_cosine(a_t.flatten(-2), a_s.flatten(-2))
    return 1.0 - cos.mean()


def attention_loss(
    attn_t_enc: torch.Tensor,
    attn_s_enc: torch.Tensor,
    attn_t_dec: torch.Tensor,
    attn_s_dec: torch.Tensor,
) -> torch.Tensor:
    """Encoder plus decoder attention alignment; tensors are [(B,) L, H, S, S].

    Scale-invariant in either operand; requires identical shapes per side,
    which holds whenever teacher and student share depths, head counts, and
    the mask (width may differ).
    """
    return _attn_side(attn_t_enc, attn_s_enc) + _attn_side(attn_t_dec, attn_s_dec)


def embedding_loss(
    e_t: torch.Tensor, e_s: torch.Tensor, ck: CaKs, identity_selection: bool = False
) -> torch.Tensor:
    """1 - mean over token rows of cosine(filtered teacher row, student row)."""
    squeeze = e_t.ndim == 2
    if squeeze:
        e_t, e_s = e_t.unsqueeze(0), e_s.unsqueeze(0)
    _, filtered, _, _ = _select(e_t, e_s, ck, identity_selection)
    return 1.0 - _row_cosine(filtered, e_s).mean()


def hidden_loss(
    m_t_enc: torch.Tensor,
    m_s_enc: torch.Tensor,
    m_t_dec: torch.Tensor,
    m_s_dec: torch.Tensor,
    ck_enc: CaKs,
    ck_dec: CaKs,
    identity_selection: bool = False,
) -> torch.Tensor:
    """Sum of encoder and decoder hidden-state alignment terms."""
    return embedding_loss(m_t_enc, m_s_enc, ck_enc, identity_selection) + embedding_loss(
        m_t_dec, m_s_dec, ck_dec, identity_selection
    )


def mcakd_loss(
    taps_t: Taps,
    taps_s: Taps,
    modules: CaKsModules,
    ablate: frozenset[str] | set[str] = frozenset(),
) -> tuple[torch.Tensor, DistillLosses]:
    """All distillation components from one teacher/student tap pair.

    Returns the differentiable total and a float record. Ablations zero the
    named component ("embed"/"attn"/"hs") or swap CA-KS for taking the first
    student-width dimensions ("caks").
    """
    unknown = set(ablate) - set(ABLATABLE)
    if unknown:
        raise ContractError(f"unknown ablation(s) {sorted(unknown)}; valid: {ABLATABLE}")
    identity = "caks" in ablate
    zero = taps_s.embeddings.new_zeros(())
    t_attn = (
        attention_loss(taps_t.attn_enc, taps_s.attn_enc, taps_t.attn_dec, taps_s.attn_dec)
        if "attn" not in ablate
        else zero
    )
    t_embed = (
        embedding_loss(taps_t.embeddings, taps_s.embeddings, modules.embedding, identity)
        if "embed" not in ablate
        else zero
    )
    t_hs = (
        hidden_loss(
            taps_t.hidden_enc,
            taps_s.hidden_enc,
            taps_t.hidden_dec,
            taps_s.hidden_dec,
            modules.encoder,
            modules.decoder,
            identity,
        )
        if "hs" not in ablate
        else zero
    )
    total = t_attn + t_embed + t_hs
    record = DistillLosses.from_components(
        float(t_attn.item()), float(t_embed.item()), float(t_hs.item())
    )
    return total, record


def masked_token_mse(pred: torch.Tensor, target: torch.Tensor, mask: MaskSet) -> torch.Tensor:
    """Reconstruction MSE per masked complex entry, computed in token space.

    tokens are [(B,) G, F] with F = 2 * entries-per-token, so the mean of
    squared feature differences over masked tokens equals the mean squared
    complex modulus over masked tensor entries.
    """
    if pred.shape != target.shape:
        raise ContractError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    if len(mask.masked_idx) == 0:
        raise DegenerateMaskError("empty masked set")
    idx = torch.from_numpy(mask.masked_idx)
    diff = pred.index_select(-2, idx) - target.index_select(-2, idx)
    # 2 real features per complex entry: sum of squares / (pairs) = |z|^2 mean * ... keep exact
    return (diff**2).sum() / (diff.numel() / 2)


def mse_loss(h_hat: CsiTensor, h: CsiTensor, mask: MaskSet, spec: PatchSpec) -> float:
    """Mean squared complex modulus over the masked tensor entries."""
    if h_hat.dims != h.dims:
        raise ContractError(f"dims mismatch {h_hat.dims} vs {h.dims}")
    sel = mask_entry_selector(mask, grid_coords(spec, h.dims), spec, h.dims)
    if not sel.any():
        raise DegenerateMaskError("mask covers no tensor entries")
    diff = h_hat.data.astype(np.complex128)[sel] - h.data.astype(np.complex128)[sel]
    return float(np.mean(np.abs(diff) ** 2))


def save_caks(modules: CaKsModules, path, fingerprint: str = "") -> None:
    """Persist the trio so `inspect` can reproduce training-time selection.

    CA-KS weights are scaffolding: they are not part of the student and are
    stored separately from its checkpoint.
    """
    from pathlib import Path

    from .model import pack_tensors

    ck = modules.embedding
    meta = {
        "teacher_dim": ck.teacher_dim,
        "student_dim": ck.student_dim,
        "attn_dim": ck.attn_dim,
        "num_heads": ck.num_heads,
        "config_fingerprint": fingerprint,
    }
    state = {}
    for tag, mod in (("embedding", modules.embedding), ("encoder", modules.encoder), ("decoder", modules.decoder)):
        for name, t in mod.state_dict().items():
            state[f"{tag}.{name}"] = t
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(pack_tensors("caks", meta, state))


def load_caks(path) -> tuple[CaKsModules, dict]:
    from pathlib import Path

    from .model import unpack_tensors

    meta, state = unpack_tensors(Path(path).read_bytes(), "caks", origin=str(path))
    mods = CaKsModules(
        *(
            CaKs(
                meta["teacher_dim"],
                meta["student_dim"],
                attn_dim=meta["attn_dim"],
                num_heads=meta["num_heads"],
                instance=tag,
            )
            for tag in ("embedding", "encoder", "decoder")
        )
    )
    for tag, mod in (("embedding", mods.embedding), ("encoder", mods.encoder), ("decoder", mods.decoder)):
        mod.load_state_dict({k[len(tag) + 1 :]: v for k, v in state.items() if k.startswith(tag + ".")})
    return mods, meta


def attention_cosines(attn_t: torch.Tensor, attn_s: torch.Tensor) -> np.ndarray:
    """Per-layer per-head cosine similarities of flattened maps, [L, H] (diagnostics)."""
    if attn_t.shape != attn_s.shape or attn_t.ndim != 4:
        raise ContractError("expected matching [L, H, S, S] attention tensors")
    if attn_t.shape[0] == 0:
        return np.zeros((0, attn_t.shape[1]))
    return _row_cosine(attn_t.flatten(-2), attn_s.flatten(-2)).detach().cpu().numpy()
