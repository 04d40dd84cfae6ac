"""Time-dependent dual-pathway score network.

Each of the K stacked layers runs two branches over the embedded window:

* a global branch: standard multi-head self-attention whose head-averaged
  attention matrix is exported as the row-stochastic global characteristic
  ``psi`` (N x N per layer);
* a local branch: the window's cosine-similarity matrix is treated as N
  tokens with N-dimensional features, passed through multi-head attention,
  and projected to a row-softmaxed local characteristic ``xi`` (N x N).

Branch outputs merge through a linear + feed-forward residual block; a final
linear head (zero-initialized) maps the d_model stream to the per-channel
score estimate of the perturbed-data log-density gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

COSINE_EPS = 1e-12


@dataclass(frozen=True)
class ScoreNetConfig:
    K: int = 3
    d_model: int = 512
    n_heads: int = 8
    N: int = 100
    d_in: int = 1
    dropout: float = 0.0
    d_ff: int | None = None

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("need at least one layer")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)


@dataclass
class PathwayCharacteristics:
    """Per-layer row-stochastic matrices: psi (global) and xi (local).

    Each entry has shape (B, N, N); every row is a probability vector.
    """

    psi: list[torch.Tensor] = field(default_factory=list)
    xi: list[torch.Tensor] = field(default_factory=list)


@dataclass
class ScoreOutput:
    score: torch.Tensor
    chars: PathwayCharacteristics


def cosine_similarity_matrix(x: torch.Tensor) -> torch.Tensor:
    """Pairwise cosine similarity of rows; accepts (N, D) or (B, N, D)."""
    norms = torch.linalg.vector_norm(x, dim=-1, keepdim=True).clamp_min(COSINE_EPS)
    unit = x / norms
    return unit @ unit.transpose(-1, -2)


class TimeEmbedding(nn.Module):
    """Sinusoidal features of the noise level followed by a two-layer map."""

    def __init__(self, d_model: int):
        super().__init__()
        self.d_model = d_model
        half = d_model // 2
        exponent = torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
        self.register_buffer("freqs", torch.exp(-math.log(10000.0) * exponent))
        self.net = nn.Sequential(nn.Linear(d_model, d_model), nn.SiLU(), nn.Linear(d_model, d_model))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        t = t.reshape(-1, 1).to(self.freqs.dtype)
        args = 1000.0 * t * self.freqs[None, :]
        emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
        if emb.shape[-1] < self.d_model:
            emb = F.pad(emb, (0, self.d_model - emb.shape[-1]))
        weight = self.net[0].weight
        return self.net(emb.to(weight.dtype))


class MultiHeadSelfAttention(nn.Module):
    """Standard multi-head self-attention that also returns the head-averaged
    (pre-dropout) attention matrix."""

    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        B, N, _ = x.shape
        def split(t):
            return t.view(B, N, self.n_heads, self.d_head).transpose(1, 2)
        q, k, v = split(self.q_proj(x)), split(self.k_proj(x)), split(self.v_proj(x))
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(self.d_head)
        attn = torch.softmax(scores, dim=-1)
        mixed = self.dropout(attn) @ v
        out = self.out_proj(mixed.transpose(1, 2).reshape(B, N, -1))
        return out, attn.mean(dim=1)


class LocalBranch(nn.Module):
    """Cosine-similarity pathway producing the local characteristic xi."""

    def __init__(self, cfg: ScoreNetConfig):
        super().__init__()
        self.in_proj = nn.Linear(cfg.N, cfg.d_model)
        self.attn = MultiHeadSelfAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.norm = nn.LayerNorm(cfg.d_model)
        self.to_rows = nn.Linear(cfg.d_model, cfg.N)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        sim = cosine_similarity_matrix(x)
        y, _ = self.attn(self.in_proj(sim))
        xi = torch.softmax(self.to_rows(self.norm(y)), dim=-1)
        return y, xi


class DualPathwayLayer(nn.Module):
    def __init__(self, cfg: ScoreNetConfig):
        super().__init__()
        self.time_mod = nn.Linear(cfg.d_model, 2 * cfg.d_model)
        self.global_branch = MultiHeadSelfAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.local_branch = LocalBranch(cfg)
        self.merge = nn.Linear(2 * cfg.d_model, cfg.d_model)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ffn = nn.Sequential(nn.Linear(cfg.d_model, cfg.d_ff), nn.GELU(), nn.Linear(cfg.d_ff, cfg.d_model))
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, temb: torch.Tensor):
        scale, shift = self.time_mod(temb).unsqueeze(1).chunk(2, dim=-1)
        h = x * (1.0 + scale) + shift
        g_out, psi = self.global_branch(h)
        l_out, xi = self.local_branch(h)
        z = self.norm1(x + self.dropout(self.merge(torch.cat([g_out, l_out], dim=-1))))
        z = self.norm2(z + self.dropout(self.ffn(z)))
        return z, psi, xi


class DualPathwayScoreNet(nn.Module):
    def __init__(self, cfg: ScoreNetConfig):
        super().__init__()
        self.cfg = cfg
        self.in_proj = nn.Linear(cfg.d_in, cfg.d_model)
        self.pos_emb = nn.Parameter(torch.zeros(1, cfg.N, cfg.d_model))
        self.time_emb = TimeEmbedding(cfg.d_model)
        self.layers = nn.ModuleList(DualPathwayLayer(cfg) for _ in range(cfg.K))
        self.head = nn.Linear(cfg.d_model, cfg.d_in)
        self.apply(self._init_weights)
        nn.init.trunc_normal_(self.pos_emb, std=0.02)
        # zero-init the head so the initial score field is identically zero
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    @staticmethod
    def _init_weights(module: nn.Module) -> None:
        if isinstance(module, nn.Linear):
            nn.init.trunc_normal_(module.weight, std=0.02)
            if module.bias is not None:
                nn.init.zeros_(module.bias)

    def embed_time(self, t) -> torch.Tensor:
        """Embedding of the noise level: scalar -> (d_model,), (B,) -> (B, d_model)."""
        scalar = not torch.is_tensor(t) or t.ndim == 0
        emb = self.time_emb(self._as_time(t))
        return emb.squeeze(0) if scalar else emb

    def _as_time(self, t) -> torch.Tensor:
        if not torch.is_tensor(t):
            t = torch.as_tensor(t, dtype=torch.float64)
        return t.reshape(-1)

    def forward(self, x_t: torch.Tensor, t) -> ScoreOutput:
        squeeze = x_t.ndim == 2
        if squeeze:
            x_t = x_t.unsqueeze(0)
        B, N, d = x_t.shape
        if (N, d) != (self.cfg.N, self.cfg.d_in):
            raise ValueError(f"input shape {(N, d)} does not match configured {(self.cfg.N, self.cfg.d_in)}")
        t = self._as_time(t)
        if t.numel() == 1:
            t = t.expand(B)
        elif t.numel() != B:
            raise ValueError(f"got {t.numel()} time values for a batch of {B}")

        temb = self.time_emb(t)
        h = self.in_proj(x_t) + self.pos_emb + temb.unsqueeze(1)
        chars = PathwayCharacteristics()
        for idx, layer in enumerate(self.layers):
            h, psi, xi = layer(h, temb)
            if not torch.isfinite(h).all():
                raise FloatingPointError(f"non-finite activations after layer {idx}")
            chars.psi.append(psi)
            chars.xi.append(xi)
        score = self.head(h)
        if squeeze:
            score = score.squeeze(0)
            chars.psi = [p.squeeze(0) for p in chars.psi]
            chars.xi = [p.squeeze(0) for p in chars.xi]
        return ScoreOutput(score=score, chars=chars)
