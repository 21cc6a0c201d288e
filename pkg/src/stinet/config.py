"""Run configuration: presets, JSON round-trip, validation, fingerprint."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .encoder import VARIANTS
from .features import ARMS


@dataclass(frozen=True)
class ModelDims:
    """Widths and depths fixed by a preset."""

    d: int
    d_coord: int
    d_app: int
    enc_layers: int
    enc_heads: int
    gmi_layers: int
    gmi_heads: int
    patch: tuple[int, int, int]
    seq_len: int       # frames per clip (T)
    num_objects: int   # object slots (M)
    frame_hw: tuple[int, int]

    def validate(self) -> None:
        if self.d % self.enc_heads != 0:
            raise ValueError(
                f"d={self.d} not divisible by encoder heads {self.enc_heads}")
        if self.d % self.gmi_heads != 0:
            raise ValueError(
                f"d={self.d} not divisible by GMI heads {self.gmi_heads}")
        pt, ph, pw = self.patch
        if self.seq_len % pt != 0:
            raise ValueError(f"T={self.seq_len} not divisible by patch time {pt}")
        if self.frame_hw[0] % ph != 0 or self.frame_hw[1] % pw != 0:
            raise ValueError(
                f"frame {self.frame_hw} not divisible by patch {ph}x{pw}")

    @property
    def temporal_len(self) -> int:
        return self.seq_len // self.patch[0]


PAPER_DIMS = ModelDims(d=768, d_coord=256, d_app=512, enc_layers=6, enc_heads=12,
                       gmi_layers=12, gmi_heads=12, patch=(2, 16, 16),
                       seq_len=16, num_objects=3, frame_hw=(224, 224))

DESK_DIMS = ModelDims(d=64, d_coord=16, d_app=48, enc_layers=2, enc_heads=4,
                      gmi_layers=2, gmi_heads=4, patch=(2, 8, 8),
                      seq_len=16, num_objects=3, frame_hw=(32, 32))

PRESETS = {"paper": PAPER_DIMS, "desk": DESK_DIMS}


@dataclass
class RunConfig:
    preset: str = "desk"
    variant: str = "BLSTM_FT"
    feature_arm: str = "C"
    use_global_motion: bool = False
    seed: int = 0
    encoder_lr: float = 1e-3
    gmi_lr: float = 5e-5
    encoder_batch_size: int = 128
    gmi_batch_size: int = 20
    encoder_epochs: int = 20
    gmi_epochs: int = 18
    weight_decay: float = 0.01
    finetune_encoder: bool = True
    deterministic: bool = False
    dataset_dir: str = ""
    out_dir: str = ""

    def validate(self) -> "RunConfig":
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from "
                             f"{sorted(PRESETS)}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from "
                             f"{VARIANTS}")
        if self.feature_arm not in ARMS:
            raise ValueError(f"unknown feature arm {self.feature_arm!r}; "
                             f"choose from {ARMS}")
        for name in ("encoder_lr", "gmi_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("encoder_batch_size", "gmi_batch_size", "encoder_epochs",
                     "gmi_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        self.dims.validate()
        return self

    @property
    def dims(self) -> ModelDims:
        return PRESETS[self.preset]

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**raw).validate()

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]
