"""Trainable model compositions for the two training stages.

Stage 1 trains the encoder standalone with a mean-pooled linear head.
Stage 2 wraps the identical stage-1 parts (same parameter names, so a
stage-2 checkpoint is a strict superset of a stage-1 one) and adds the
global motion infusion stack, classified from its class token.
"""
from __future__ import annotations

import numpy as np

from . import nn
from .autograd import Tensor
from .config import ModelDims
from .encoder import InteractionEncoder, StiTokenSeq
from .features import FeatureBuilder
from .gmi import GlobalMotionInfusion, GmiOutput


def _stage1_parts(dims: ModelDims, variant: str, feature_arm: str,
                  num_classes: int, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    features = FeatureBuilder(dims.d_coord, dims.d_app, dims.d, feature_arm, rng)
    encoder = InteractionEncoder(dims.d, dims.num_objects, dims.seq_len, variant,
                                 dims.enc_heads, dims.enc_layers, rng, feature_arm)
    head = nn.Linear(dims.d, num_classes, rng)
    return features, encoder, head


class EncoderClassifier(nn.Module):
    """Feature builder + interaction encoder + mean-pool linear head."""

    def __init__(self, dims: ModelDims, variant: str, feature_arm: str,
                 num_classes: int, seed: int = 0):
        super().__init__()
        self.dims = dims
        self.num_classes = num_classes
        self.features, self.encoder, self.head = _stage1_parts(
            dims, variant, feature_arm, num_classes, seed)

    def sti(self, coords: np.ndarray, apps: np.ndarray | None) -> StiTokenSeq:
        return self.encoder(self.features(coords, apps))

    def forward(self, coords: np.ndarray, apps: np.ndarray | None) -> Tensor:
        tokens = self.sti(coords, apps).tokens
        return self.head(tokens.mean(axis=1))

    __call__ = forward


class GmiClassifier(nn.Module):
    """Stage-2 model: stage-1 parts plus the global motion infusion stack.

    The standalone stage-1 head is kept (unused by the GMI loss) so the
    checkpoint contains every stage-1 parameter name.
    """

    def __init__(self, dims: ModelDims, variant: str, feature_arm: str,
                 num_classes: int, seed: int = 0):
        super().__init__()
        self.dims = dims
        self.num_classes = num_classes
        self.features, self.encoder, self.head = _stage1_parts(
            dims, variant, feature_arm, num_classes, seed)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
        self.gmi = GlobalMotionInfusion(dims.frame_hw, dims.seq_len, dims.patch,
                                        dims.d, dims.gmi_heads, dims.gmi_layers,
                                        num_classes, rng)

    def stage1_param_names(self) -> set[str]:
        prefixes = ("features.", "encoder.", "head.")
        return {n for n, _ in self.named_parameters()
                if n.startswith(prefixes)}

    def load_stage1(self, state: dict[str, np.ndarray]) -> None:
        """Initialize the encoder path from a stage-1 checkpoint."""
        own = dict(self.named_parameters())
        for name, value in state.items():
            if name not in own:
                raise KeyError(f"stage-1 checkpoint has unknown parameter {name!r}")
            if own[name].data.shape != value.shape:
                raise ValueError(f"shape mismatch for {name!r}")
            own[name].data = value.astype(np.float64).copy()

    def trainable_stage2(self, finetune_encoder: bool = True,
                         ) -> list[tuple[str, nn.Parameter]]:
        """Stage-2 optimizer group: GMI always; encoder path optionally.

        The stage-1 standalone head is never updated in stage 2, so an
        encoder-only evaluation of the checkpoint stays meaningful.
        """
        picked = []
        for name, p in self.named_parameters():
            if name.startswith("head."):
                continue
            if not finetune_encoder and not name.startswith("gmi."):
                continue
            picked.append((name, p))
        return picked

    def forward(self, coords: np.ndarray, apps: np.ndarray | None,
                video: np.ndarray, collect_attention: bool = False,
                check_envelope: bool = False) -> GmiOutput:
        sti = self.encoder(self.features(coords, apps))
        return self.gmi(video, sti.tokens, collect_attention, check_envelope)

    __call__ = forward

    def encoder_only_logits(self, coords: np.ndarray,
                            apps: np.ndarray | None) -> Tensor:
        tokens = self.encoder(self.features(coords, apps)).tokens
        return self.head(tokens.mean(axis=1))
