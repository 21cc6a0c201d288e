"""Fused frame-trajectory interaction encoding into STI tokens.

Entity features arrive as (B, T, M+1, d) with the hand in slot 0 and
object slots after it. A frame encoder summarizes each frame's entities
into f_t, a trajectory encoder mixes per-entity temporal summaries into
M+1 long-range tokens, those are reduced to a single video-level summary
r_tie, and the fusion MLP maps every [f_t ; r_tie] back to width d. Each
stage has a BLSTM and a Transformer realization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor

VARIANTS = ("BLSTM_F", "BLSTM_T", "BLSTM_FT",
            "Transformer_F", "Transformer_T", "Transformer_FT")


@dataclass
class StiTokenSeq:
    """T interaction tokens of width d, tagged with how they were made."""

    tokens: Tensor  # (B, T, d)
    variant: str
    feature_arm: str


@dataclass
class TrajectorySummaries:
    r_hand: Tensor     # (B, d)
    r_objects: Tensor  # (B, M, d)
    r_tie: Tensor      # (B, d)


class FieBlstm(nn.Module):
    """Frame summary = last BLSTM output over the entity sequence."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.blstm = nn.BLSTM(dim, dim, rng)
        self.proj = nn.Linear(2 * dim, dim, rng)

    def forward(self, entities: Tensor) -> Tensor:
        b, t, e, d = entities.shape
        seq = entities.reshape(b * t, e, d)
        out = self.blstm(seq, return_sequence=False)
        return self.proj(out).reshape(b, t, d)

    __call__ = forward


class FieTransformer(nn.Module):
    """Frame summary = refined learnable slot after self-attention.

    The positional encoding has one row per entity (hand first); the
    summary token itself carries no positional row.
    """

    def __init__(self, dim: int, num_entities: int, heads: int, layers: int,
                 rng: np.random.Generator):
        super().__init__()
        self.summary_token = nn.Parameter(rng.normal(0.0, 0.02, size=(1, 1, dim)))
        self.pos = nn.Parameter(rng.normal(0.0, 0.02, size=(num_entities, dim)))
        self.encoder = nn.TransformerEncoder(dim, heads, layers, rng)

    def forward(self, entities: Tensor) -> Tensor:
        b, t, e, d = entities.shape
        if e != self.pos.shape[0]:
            raise ValueError(
                f"built for {self.pos.shape[0]} entities per frame, got {e}")
        x = (entities.reshape(b * t, e, d) + self.pos) if e else \
            entities.reshape(b * t, e, d)
        tok = self.summary_token.broadcast_to((b * t, 1, d))
        seq = ag.concatenate([tok, x], axis=1)
        return self.encoder(seq)[:, 0, :].reshape(b, t, d)

    __call__ = forward


class TieBlstm(nn.Module):
    """Per-entity temporal BLSTM, then a second BLSTM across entities."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.temporal = nn.BLSTM(dim, dim, rng)
        self.temporal_proj = nn.Linear(2 * dim, dim, rng)
        self.mixer = nn.BLSTM(dim, dim, rng)
        self.mixer_proj = nn.Linear(2 * dim, dim, rng)

    def forward(self, entities: Tensor) -> Tensor:
        b, t, e, d = entities.shape
        seqs = entities.transpose((0, 2, 1, 3)).reshape(b * e, t, d)
        finals = self.temporal_proj(self.temporal(seqs, return_sequence=False))
        mixed = self.mixer(finals.reshape(b, e, d))
        return self.mixer_proj(mixed)

    __call__ = forward


class TieTransformer(nn.Module):
    """Per-entity temporal transformer with learned summary tokens, then a
    lightweight transformer mixing the M+1 summaries.

    Frame tokens get a learned temporal position so trajectory direction
    is visible; the per-entity summary tokens are exempt, mirroring the
    frame encoder's convention.
    """

    def __init__(self, dim: int, num_entities: int, seq_len: int, heads: int,
                 layers: int, rng: np.random.Generator):
        super().__init__()
        self.entity_tokens = nn.Parameter(
            rng.normal(0.0, 0.02, size=(num_entities, dim)))
        self.time_pos = nn.Parameter(rng.normal(0.0, 0.02, size=(seq_len, dim)))
        self.temporal = nn.TransformerEncoder(dim, heads, layers, rng)
        self.mix_pos = nn.Parameter(rng.normal(0.0, 0.02, size=(num_entities, dim)))
        self.mixer = nn.TransformerEncoder(dim, heads, 1, rng)

    def forward(self, entities: Tensor) -> Tensor:
        b, t, e, d = entities.shape
        if t != self.time_pos.shape[0]:
            raise ValueError(f"built for T={self.time_pos.shape[0]}, got {t}")
        if e != self.entity_tokens.shape[0]:
            raise ValueError(
                f"built for {self.entity_tokens.shape[0]} entities, got {e}")
        seqs = (entities.transpose((0, 2, 1, 3)) + self.time_pos)
        seqs = seqs.reshape(b * e, t, d)
        toks = self.entity_tokens.reshape(1, e, 1, d)
        toks = toks.broadcast_to((b, e, 1, d)).reshape(b * e, 1, d)
        refined = self.temporal(ag.concatenate([toks, seqs], axis=1))
        summaries = refined[:, 0, :].reshape(b, e, d)
        return self.mixer(summaries + self.mix_pos)

    __call__ = forward


class TieSummarizerBlstm(nn.Module):
    """M+1 long-range tokens -> final BLSTM hidden state."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.blstm = nn.BLSTM(dim, dim, rng)
        self.proj = nn.Linear(2 * dim, dim, rng)

    def forward(self, r_tokens: Tensor) -> Tensor:
        return self.proj(self.blstm(r_tokens, return_sequence=False))

    __call__ = forward


class TieSummarizerTransformer(nn.Module):
    """Append a learnable token, self-attend, read the refined token."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        self.summary_token = nn.Parameter(rng.normal(0.0, 0.02, size=(1, 1, dim)))
        self.encoder = nn.TransformerEncoder(dim, heads, 1, rng)

    def forward(self, r_tokens: Tensor) -> Tensor:
        b, e, d = r_tokens.shape
        tok = self.summary_token.broadcast_to((b, 1, d))
        seq = ag.concatenate([r_tokens, tok], axis=1)
        return self.encoder(seq)[:, e, :]

    __call__ = forward


class InteractionEncoder(nn.Module):
    """Variant-dispatching encoder from entity features to STI tokens."""

    def __init__(self, dim: int, num_objects: int, seq_len: int, variant: str,
                 heads: int, layers: int, rng: np.random.Generator,
                 feature_arm: str = "C"):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.dim = dim
        self.seq_len = seq_len
        self.variant = variant
        self.feature_arm = feature_arm
        family, stages = variant.split("_")
        entities = num_objects + 1

        self.fie = None
        self.tie = None
        self.summarizer = None
        self.fuse_mlp = None
        if "F" in stages:
            if family == "BLSTM":
                self.fie = FieBlstm(dim, rng)
            else:
                self.fie = FieTransformer(dim, entities, heads, layers, rng)
        if "T" in stages:
            if family == "BLSTM":
                self.tie = TieBlstm(dim, rng)
                self.summarizer = TieSummarizerBlstm(dim, rng)
            else:
                self.tie = TieTransformer(dim, entities, seq_len, heads, layers, rng)
                self.summarizer = TieSummarizerTransformer(dim, heads, rng)
        if stages == "FT":
            self.fuse_mlp = nn.MLP([2 * dim, dim, dim], rng)

    # -- stage views -----------------------------------------------------

    def frame_summaries(self, entities: Tensor) -> Tensor:
        if self.fie is None:
            raise ValueError(f"variant {self.variant} has no frame encoder")
        return self.fie(entities)

    def long_range_tokens(self, entities: Tensor) -> Tensor:
        if self.tie is None:
            raise ValueError(f"variant {self.variant} has no trajectory encoder")
        return self.tie(entities)

    def summarize_tie(self, r_tokens: Tensor) -> Tensor:
        return self.summarizer(r_tokens)

    def trajectory_summaries(self, entities: Tensor) -> TrajectorySummaries:
        r = self.long_range_tokens(entities)
        return TrajectorySummaries(r_hand=r[:, 0, :], r_objects=r[:, 1:, :],
                                   r_tie=self.summarize_tie(r))

    def fuse(self, frames: Tensor, r_tie: Tensor) -> Tensor:
        b, t, d = frames.shape
        tie = r_tie.reshape(b, 1, d).broadcast_to((b, t, d))
        return self.fuse_mlp(ag.concatenate([frames, tie], axis=-1))

    # -- full encode -------------------------------------------------------

    def forward(self, entities: Tensor) -> StiTokenSeq:
        b, t, e, d = entities.shape
        stages = self.variant.split("_")[1]
        if stages == "F":
            tokens = self.frame_summaries(entities)
        elif stages == "T":
            r_tie = self.summarize_tie(self.long_range_tokens(entities))
            tokens = r_tie.reshape(b, 1, d).broadcast_to((b, t, d))
        else:
            f = self.frame_summaries(entities)
            r_tie = self.summarize_tie(self.long_range_tokens(entities))
            tokens = self.fuse(f, r_tie)
        return StiTokenSeq(tokens=tokens, variant=self.variant,
                           feature_arm=self.feature_arm)

    __call__ = forward
