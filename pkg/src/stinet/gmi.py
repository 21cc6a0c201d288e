"""Global motion infusion: cuboid video tokens queried by STI tokens.

Each layer does two things:

(a) STI cross-refinement. Aligned STI tokens act as queries over the
    video-token grid: spatial pooling per target frame picks out a
    trajectory, temporal pooling mixes the trajectory back into one token
    per query frame. Residual + MLP sublayers, pre-norm.

(b) Joint trajectory self-attention over [cls; video tokens; STI tokens].
    Video and STI tokens query a per-frame grid of S+1 positions (the S
    spatial video tokens plus that frame's STI token) with the same
    two-stage pooling; the class token uses plain attention over every
    token, which is also the attention row exported as a spatial map.

Dot products are scaled by 1/sqrt(d_head); unscaled products saturate the
softmax even at small widths.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor


@dataclass
class VideoTokenGrid:
    """Cuboid-patch tokens (B, T', S, d) with S = H'*W', plus the class
    token (B, 1, d) and the source geometry."""

    tokens: Tensor
    cls: Tensor
    patch_dims: tuple[int, int, int]
    source_dims: tuple[int, int, int]
    grid_hw: tuple[int, int]

    @property
    def temporal_len(self) -> int:
        return self.tokens.shape[1]

    @property
    def spatial_len(self) -> int:
        return self.tokens.shape[2]


@dataclass
class GmiOutput:
    refined_sti: Tensor          # (B, T', d)
    z_cls_final: Tensor          # (B, d)
    logits: Tensor               # (B, K)
    cls_attention: list[np.ndarray] = field(default_factory=list)
    # one (B, heads, N) row per layer when collected; token order is
    # [cls, video tokens (frame-major, then row-major space), sti tokens]


class CuboidEmbed(nn.Module):
    """Flatten pt x ph x pw x 3 cuboids, project to d, add positions."""

    def __init__(self, frame_hw: tuple[int, int], seq_len: int,
                 patch_dims: tuple[int, int, int], dim: int,
                 rng: np.random.Generator):
        super().__init__()
        h, w = frame_hw
        pt, ph, pw = patch_dims
        for name, total, step in (("time", seq_len, pt), ("height", h, ph),
                                  ("width", w, pw)):
            if total % step != 0:
                raise ValueError(
                    f"video {name} {total} not divisible by patch {name} {step}")
        self.patch_dims = patch_dims
        self.frame_hw = (h, w)
        self.seq_len = seq_len
        self.grid = (seq_len // pt, h // ph, w // pw)
        self.proj = nn.Linear(pt * ph * pw * 3, dim, rng)
        tp, gh, gw = self.grid
        self.pos = nn.Parameter(rng.normal(0.0, 0.02, size=(tp, gh * gw, dim)))
        self.cls_token = nn.Parameter(rng.normal(0.0, 0.02, size=(1, 1, dim)))

    def forward(self, video: np.ndarray) -> VideoTokenGrid:
        b, t, h, w, c = video.shape
        if (t, h, w, c) != (self.seq_len, *self.frame_hw, 3):
            raise ValueError(
                f"expected video (B, {self.seq_len}, {self.frame_hw[0]}, "
                f"{self.frame_hw[1]}, 3), got {video.shape}")
        pt, ph, pw = self.patch_dims
        tp, gh, gw = self.grid
        patches = video.reshape(b, tp, pt, gh, ph, gw, pw, 3)
        patches = patches.transpose(0, 1, 3, 5, 2, 4, 6, 7)
        patches = np.ascontiguousarray(patches).reshape(b, tp, gh * gw, -1)
        tokens = self.proj(Tensor(patches)) + self.pos
        cls = self.cls_token.broadcast_to((b, 1, tokens.shape[-1]))
        return VideoTokenGrid(tokens=tokens, cls=cls,
                              patch_dims=self.patch_dims,
                              source_dims=(t, h, w), grid_hw=(gh, gw))

    __call__ = forward


def align_sti_temporal(tokens: Tensor, temporal_len: int) -> Tensor:
    """Mean-pool T STI tokens down to T' query tokens (T divisible by T')."""
    b, t, d = tokens.shape
    if t % temporal_len != 0:
        raise ValueError(f"{t} STI tokens not divisible into {temporal_len} groups")
    group = t // temporal_len
    if group == 1:
        return tokens
    return tokens.reshape(b, temporal_len, group, d).mean(axis=2)


def spatial_trajectory_pool(q: Tensor, k: Tensor, v: Tensor, scale: float,
                            check_envelope: bool = False,
                            ) -> tuple[Tensor, Tensor]:
    """Pool values over space independently per target frame.

    q: (B, h, Q, dh); k, v: (B, h, T', S, dh). Returns trajectory tokens
    (B, h, Q, T', dh) and the attention weights (B, h, Q, T', S), which
    sum to 1 over S.
    """
    b, heads, qn, dh = q.shape
    tp, s = k.shape[2], k.shape[3]
    k2 = k.reshape(b, heads, tp * s, dh)
    scores = (q @ k2.swapaxes(-1, -2)) * scale
    weights = ag.softmax(scores.reshape(b, heads, qn, tp, s), axis=-1)
    traj = (weights.transpose((0, 1, 3, 2, 4)) @ v).transpose((0, 1, 3, 2, 4))
    if check_envelope:
        lo = v.data.min(axis=3)[:, :, None, :, :]
        hi = v.data.max(axis=3)[:, :, None, :, :]
        slack = 1e-12
        if not ((traj.data >= lo - slack) & (traj.data <= hi + slack)).all():
            raise AssertionError("pooled token left the convex envelope of values")
    return traj, weights


def temporal_trajectory_pool(q_hat: Tensor, k_hat: Tensor, v_hat: Tensor,
                             scale: float) -> tuple[Tensor, Tensor]:
    """1D attention across the trajectory dimension.

    q_hat: (B, h, Q, dh); k_hat, v_hat: (B, h, Q, T', dh). Returns
    (B, h, Q, dh) and weights (B, h, Q, T') summing to 1 over T'.
    """
    b, heads, qn, dh = q_hat.shape
    tp = k_hat.shape[3]
    scores = (k_hat @ q_hat.reshape(b, heads, qn, dh, 1)).reshape(b, heads, qn, tp)
    weights = ag.softmax(scores * scale, axis=-1)
    out = (weights.reshape(b, heads, qn, 1, tp) @ v_hat).reshape(b, heads, qn, dh)
    return out, weights


class TrajectoryAttention(nn.Module):
    """Multi-head two-stage trajectory attention.

    Queries are arbitrary frame-tagged tokens; keys/values come from a
    (B, T', P, d) grid. The temporal-stage query is the trajectory token
    at the query's own frame, reprojected.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.wq = nn.Linear(dim, dim, rng)
        self.wk = nn.Linear(dim, dim, rng)
        self.wv = nn.Linear(dim, dim, rng)
        self.wq2 = nn.Linear(dim, dim, rng)
        self.wk2 = nn.Linear(dim, dim, rng)
        self.wv2 = nn.Linear(dim, dim, rng)
        self.wo = nn.Linear(dim, dim, rng)

    def _split3(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return x.reshape(b, n, self.heads, d // self.heads).transpose((0, 2, 1, 3))

    def _split4(self, x: Tensor) -> Tensor:
        b, tp, p, d = x.shape
        return x.reshape(b, tp, p, self.heads, d // self.heads).transpose((0, 3, 1, 2, 4))

    def forward(self, queries: Tensor, grid: Tensor,
                query_frames: np.ndarray,
                check_envelope: bool = False) -> Tensor:
        b, qn, d = queries.shape
        tp, p = grid.shape[1], grid.shape[2]
        dh = d // self.heads
        scale = 1.0 / np.sqrt(dh)
        q = self._split3(self.wq(queries))
        k = self._split4(self.wk(grid))
        v = self._split4(self.wv(grid))
        traj, _ = spatial_trajectory_pool(q, k, v, scale, check_envelope)
        merged = traj.transpose((0, 2, 3, 1, 4)).reshape(b, qn, tp, d)
        diag = merged[:, np.arange(qn), np.asarray(query_frames, dtype=np.int64), :]
        q2 = self._split3(self.wq2(diag))
        k2 = self.wk2(merged).reshape(b, qn, tp, self.heads, dh).transpose((0, 3, 1, 2, 4))
        v2 = self.wv2(merged).reshape(b, qn, tp, self.heads, dh).transpose((0, 3, 1, 2, 4))
        out, _ = temporal_trajectory_pool(q2, k2, v2, scale)
        out = out.transpose((0, 2, 1, 3)).reshape(b, qn, d)
        return self.wo(out)

    __call__ = forward


class ClsAttention(nn.Module):
    """Plain single-query multi-head attention for the class token."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        self.heads = heads
        self.wq = nn.Linear(dim, dim, rng)
        self.wk = nn.Linear(dim, dim, rng)
        self.wv = nn.Linear(dim, dim, rng)
        self.wo = nn.Linear(dim, dim, rng)

    def forward(self, cls: Tensor, tokens: Tensor) -> tuple[Tensor, Tensor]:
        b, n, d = tokens.shape
        heads = self.heads
        dh = d // heads
        q = self.wq(cls).reshape(b, 1, heads, dh).transpose((0, 2, 1, 3))
        k = self.wk(tokens).reshape(b, n, heads, dh).transpose((0, 2, 1, 3))
        v = self.wv(tokens).reshape(b, n, heads, dh).transpose((0, 2, 1, 3))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
        weights = ag.softmax(scores, axis=-1)  # (B, h, 1, N)
        out = (weights @ v).transpose((0, 2, 1, 3)).reshape(b, 1, d)
        return self.wo(out), weights

    __call__ = forward


class GmiLayer(nn.Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 mlp_ratio: int = 4):
        super().__init__()
        # (a) STI cross-refinement over video tokens
        self.ln_sti_q = nn.LayerNorm(dim)
        self.ln_video_kv = nn.LayerNorm(dim)
        self.cross = TrajectoryAttention(dim, heads, rng)
        self.ln_sti_mlp = nn.LayerNorm(dim)
        self.sti_mlp = nn.MLP([dim, mlp_ratio * dim, dim], rng)
        # (b) joint trajectory self-attention over [cls; video; sti]
        self.ln_joint = nn.LayerNorm(dim)
        self.self_traj = TrajectoryAttention(dim, heads, rng)
        self.cls_attn = ClsAttention(dim, heads, rng)
        self.ln_joint_mlp = nn.LayerNorm(dim)
        self.joint_mlp = nn.MLP([dim, mlp_ratio * dim, dim], rng)

    def forward(self, cls: Tensor, video: Tensor, sti: Tensor,
                check_envelope: bool = False,
                ) -> tuple[Tensor, Tensor, Tensor, np.ndarray]:
        b, tp, s, d = video.shape

        # (a) refine STI tokens with pooled global motion
        sti_frames = np.arange(tp)
        refined = self.cross(self.ln_sti_q(sti), self.ln_video_kv(video),
                             sti_frames, check_envelope)
        sti = sti + refined
        sti = sti + self.sti_mlp(self.ln_sti_mlp(sti))

        # (b) everything self-attends; per-frame positions are the S video
        # tokens plus that frame's STI token
        video_flat = video.reshape(b, tp * s, d)
        seq = ag.concatenate([cls, video_flat, sti], axis=1)
        normed = self.ln_joint(seq)
        n_cls = normed[:, 0:1, :]
        n_video = normed[:, 1:1 + tp * s, :]
        n_sti = normed[:, 1 + tp * s:, :]
        grid = ag.concatenate(
            [n_video.reshape(b, tp, s, d), n_sti.reshape(b, tp, 1, d)], axis=2)
        queries = ag.concatenate([n_video, n_sti], axis=1)
        query_frames = np.concatenate([np.repeat(np.arange(tp), s), np.arange(tp)])
        refined_all = self.self_traj(queries, grid, query_frames, check_envelope)
        cls_out, cls_weights = self.cls_attn(n_cls, normed)

        cls = cls + cls_out
        video = video + refined_all[:, :tp * s, :].reshape(b, tp, s, d)
        sti = sti + refined_all[:, tp * s:, :]

        seq = ag.concatenate([cls, video.reshape(b, tp * s, d), sti], axis=1)
        seq = seq + self.joint_mlp(self.ln_joint_mlp(seq))
        cls = seq[:, 0:1, :]
        video = seq[:, 1:1 + tp * s, :].reshape(b, tp, s, d)
        sti = seq[:, 1 + tp * s:, :]
        return cls, video, sti, cls_weights.data.reshape(b, self.cls_attn.heads, -1)

    __call__ = forward


class GlobalMotionInfusion(nn.Module):
    """Full stack: tokenizer, L infusion layers, class-token readout."""

    def __init__(self, frame_hw: tuple[int, int], seq_len: int,
                 patch_dims: tuple[int, int, int], dim: int, heads: int,
                 layers: int, num_classes: int, rng: np.random.Generator):
        super().__init__()
        self.embed = CuboidEmbed(frame_hw, seq_len, patch_dims, dim, rng)
        self.blocks = [GmiLayer(dim, heads, rng) for _ in range(layers)]
        self.final_ln = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, num_classes, rng)

    def classify(self, z_cls: Tensor) -> Tensor:
        return self.head(self.final_ln(z_cls))

    def forward(self, video: np.ndarray, sti_tokens: Tensor,
                collect_attention: bool = False,
                check_envelope: bool = False) -> GmiOutput:
        grid = self.embed(video)
        b = video.shape[0]
        tp = grid.temporal_len
        cls = grid.cls
        vid = grid.tokens
        sti = align_sti_temporal(sti_tokens, tp)
        attn_rows: list[np.ndarray] = []
        for block in self.blocks:
            cls, vid, sti, rows = block(cls, vid, sti, check_envelope)
            if collect_attention:
                attn_rows.append(rows)
        z_cls = cls.reshape(b, cls.shape[2])
        logits = self.classify(z_cls)
        return GmiOutput(refined_sti=sti, z_cls_final=z_cls, logits=logits,
                         cls_attention=attn_rows)

    __call__ = forward
