"""Two-stage training, evaluation, and metrics reporting.

Stage 1 trains the interaction encoder standalone (mean-pooled linear
head, cross-entropy). Stage 2 initializes the same parts from the stage-1
checkpoint and trains the global-motion model at its own learning rate,
optionally fine-tuning the encoder jointly. Checkpoints are written every
epoch; a NaN loss aborts and leaves the last good checkpoint as final.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .autograd import cross_entropy_loss, no_grad
from .config import RunConfig
from .features import ARM_COORD, assemble_entity_arrays
from .models import EncoderClassifier, GmiClassifier
from .optim import AdamW
from .synth import read_episode


@dataclass
class MetricsReport:
    top1: dict[str, float] = field(default_factory=dict)   # percent, per split
    top5: dict[str, float] = field(default_factory=dict)
    loss_curves: dict[str, list[float]] = field(default_factory=dict)
    config_fingerprint: str = ""
    wall_clock_sec: float = 0.0
    notes: dict = field(default_factory=dict)

    def record(self, split: str, top1: float, top5: float) -> None:
        if not 0.0 <= top1 <= 100.0 or not 0.0 <= top5 <= 100.0:
            raise ValueError("accuracies must be percentages")
        if top5 < top1:
            raise ValueError("top-5 accuracy cannot be below top-1")
        self.top1[split] = top1
        self.top5[split] = top5

    def to_dict(self) -> dict:
        return {"top1": self.top1, "top5": self.top5,
                "loss_curves": self.loss_curves,
                "config_fingerprint": self.config_fingerprint,
                "wall_clock_sec": self.wall_clock_sec, "notes": self.notes}

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricsReport":
        return cls(top1=raw["top1"], top5=raw["top5"],
                   loss_curves=raw["loss_curves"],
                   config_fingerprint=raw["config_fingerprint"],
                   wall_clock_sec=raw["wall_clock_sec"],
                   notes=raw.get("notes", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1,
                                         sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


class EpisodeDataset:
    """One split directory, loaded into memory as batched arrays."""

    def __init__(self, coords, apps, pixels, labels, stems, num_classes):
        self.coords = coords    # (N, T, M+1, 4) float64
        self.apps = apps        # (N, T, M+1, 51) float64 or None
        self.pixels = pixels    # (N, T, H, W, 3) uint8 or None
        self.labels = labels    # (N,) int64
        self.stems = stems
        self.num_classes = num_classes

    def __len__(self) -> int:
        return len(self.labels)

    def video_batch(self, idx: np.ndarray) -> np.ndarray:
        return self.pixels[idx].astype(np.float64) / 255.0

    @classmethod
    def load(cls, split_dir: str | Path, num_objects: int,
             need_appearance: bool, need_pixels: bool) -> "EpisodeDataset":
        split_dir = Path(split_dir)
        manifest = json.loads((split_dir / "manifest.json").read_text())
        coords_all, apps_all, pixels_all, labels, stems = [], [], [], [], []
        for entry in manifest:
            ep = read_episode(split_dir, entry["stem"])
            frames = (ep.frames.astype(np.float64) / 255.0
                      if need_appearance else None)
            coords, apps, _ = assemble_entity_arrays(
                ep.hand_track, ep.object_tracks, num_objects, frames=frames)
            coords_all.append(coords)
            apps_all.append(apps)
            if need_pixels:
                pixels_all.append(ep.frames)
            labels.append(ep.verb_label)
            stems.append(entry["stem"])
        labels = np.asarray(labels, dtype=np.int64)
        return cls(
            coords=np.stack(coords_all),
            apps=np.stack(apps_all) if need_appearance else None,
            pixels=np.stack(pixels_all) if need_pixels else None,
            labels=labels,
            stems=stems,
            num_classes=int(labels.max()) + 1)


def _batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def topk_accuracy(logits: np.ndarray, labels: np.ndarray,
                  k: int = 5) -> tuple[float, float]:
    """(top-1, top-k) percentages; ties broken by lower class index."""
    ranked = np.argsort(-logits, axis=1, kind="stable")
    top1 = float((ranked[:, 0] == labels).mean() * 100.0)
    topk = float((ranked[:, :k] == labels[:, None]).any(axis=1).mean() * 100.0)
    return top1, topk


def evaluate_logits(forward, dataset: EpisodeDataset, batch_size: int,
                    ) -> tuple[np.ndarray, float]:
    """Run `forward(idx) -> logits Tensor` over the dataset in order."""
    chunks = []
    losses = []
    with no_grad():
        for idx in _batches(len(dataset), batch_size, rng=None):
            logits = forward(idx)
            losses.append(cross_entropy_loss(logits, dataset.labels[idx]).item()
                          * len(idx))
            chunks.append(logits.data)
    return np.concatenate(chunks), float(np.sum(losses) / len(dataset))


def _limit_blas_threads():
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(1)
    except ImportError:
        pass


class TrainAborted(RuntimeError):
    """Raised when a NaN loss interrupts training."""


def _run_epochs(step_fn, eval_fn, state_fn, epochs: int, batch_size: int,
                n: int, seed: int, ckpt_dir: Path, tag: str,
                log) -> list[float]:
    """Generic epoch loop with per-epoch checkpoints and NaN abort."""
    curve = []
    last_good = state_fn()
    for epoch in range(epochs):
        rng = np.random.default_rng(np.random.SeedSequence((seed, tag == "gmi",
                                                            epoch)))
        total = 0.0
        seen = 0
        for idx in _batches(n, batch_size, rng):
            try:
                loss_val = step_fn(idx)
            except FloatingPointError:
                loss_val = float("nan")
            if not np.isfinite(loss_val):
                checkpoint.save_state(ckpt_dir / f"{tag}_final.stik", last_good)
                raise TrainAborted(
                    f"non-finite loss in {tag} epoch {epoch}; last good "
                    f"checkpoint written to {ckpt_dir / f'{tag}_final.stik'}")
            total += loss_val * len(idx)
            seen += len(idx)
        curve.append(total / seen)
        last_good = state_fn()
        checkpoint.save_state(ckpt_dir / f"{tag}_epoch_{epoch:03d}.stik", last_good)
        if log:
            val_note = eval_fn() if eval_fn else ""
            log(f"[{tag}] epoch {epoch + 1}/{epochs} loss {curve[-1]:.4f}{val_note}")
    checkpoint.save_state(ckpt_dir / f"{tag}_final.stik", last_good)
    return curve


def train_stage1(config: RunConfig, train_set: EpisodeDataset,
                 val_set: EpisodeDataset | None, out_dir: Path,
                 log=None) -> tuple[EncoderClassifier, list[float]]:
    dims = config.dims
    model = EncoderClassifier(dims, config.variant, config.feature_arm,
                              train_set.num_classes, seed=config.seed)
    opt = AdamW(list(model.named_parameters()), lr=config.encoder_lr,
                weight_decay=config.weight_decay)

    def step(idx):
        apps = train_set.apps[idx] if train_set.apps is not None else None
        logits = model(train_set.coords[idx], apps)
        loss = cross_entropy_loss(logits, train_set.labels[idx])
        if not np.isfinite(loss.item()):
            return loss.item()  # let the epoch loop abort before updating
        opt.zero_grad()
        loss.backward()
        opt.step()
        return loss.item()

    def quick_eval():
        if val_set is None:
            return ""
        logits, _ = evaluate_logits(
            lambda i: model(val_set.coords[i],
                            val_set.apps[i] if val_set.apps is not None else None),
            val_set, max(config.encoder_batch_size, 256))
        top1, _ = topk_accuracy(logits, val_set.labels)
        return f" val-top1 {top1:.1f}%"

    curve = _run_epochs(step, quick_eval if log else None, model.state_dict,
                        config.encoder_epochs, config.encoder_batch_size,
                        len(train_set), config.seed, out_dir, "stage1", log)
    return model, curve


def train_stage2(config: RunConfig, stage1_state: dict,
                 train_set: EpisodeDataset, val_set: EpisodeDataset | None,
                 out_dir: Path, log=None) -> tuple[GmiClassifier, list[float]]:
    dims = config.dims
    model = GmiClassifier(dims, config.variant, config.feature_arm,
                          train_set.num_classes, seed=config.seed)
    model.load_stage1(stage1_state)
    opt = AdamW(model.trainable_stage2(config.finetune_encoder),
                lr=config.gmi_lr, weight_decay=config.weight_decay)

    def step(idx):
        apps = train_set.apps[idx] if train_set.apps is not None else None
        out = model(train_set.coords[idx], apps, train_set.video_batch(idx))
        loss = cross_entropy_loss(out.logits, train_set.labels[idx])
        if not np.isfinite(loss.item()):
            return loss.item()
        opt.zero_grad()
        loss.backward()
        opt.step()
        return loss.item()

    def quick_eval():
        if val_set is None:
            return ""
        logits, _ = evaluate_logits(
            lambda i: model(val_set.coords[i],
                            val_set.apps[i] if val_set.apps is not None else None,
                            val_set.video_batch(i)).logits,
            val_set, config.gmi_batch_size)
        top1, _ = topk_accuracy(logits, val_set.labels)
        return f" val-top1 {top1:.1f}%"

    curve = _run_epochs(step, quick_eval if log else None, model.state_dict,
                        config.gmi_epochs, config.gmi_batch_size, len(train_set),
                        config.seed, out_dir, "stage2", log)
    return model, curve


def load_datasets(config: RunConfig) -> tuple[EpisodeDataset, EpisodeDataset]:
    need_app = config.feature_arm != ARM_COORD
    need_pix = config.use_global_motion
    root = Path(config.dataset_dir)
    if not root.exists():
        raise FileNotFoundError(f"dataset directory {root} does not exist; "
                                "run `stinet generate` first")
    train_set = EpisodeDataset.load(root / "train", config.dims.num_objects,
                                    need_app, need_pix)
    val_set = EpisodeDataset.load(root / "val", config.dims.num_objects,
                                  need_app, need_pix)
    return train_set, val_set


def train(config: RunConfig, log=print) -> MetricsReport:
    """Full training workflow per the run configuration.

    Writes per-epoch checkpoints, `stage1_final.stik` (and
    `stage2_final.stik` with global motion), and `metrics.json` into
    `config.out_dir`; returns the metrics report.
    """
    config.validate()
    if config.deterministic:
        _limit_blas_threads()
    t_start = time.time()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set, val_set = load_datasets(config)

    report = MetricsReport(config_fingerprint=config.fingerprint())
    model1, curve1 = train_stage1(config, train_set, val_set, out_dir, log)
    report.loss_curves["encoder"] = curve1

    def enc_forward(dataset):
        def fwd(i):
            apps = dataset.apps[i] if dataset.apps is not None else None
            return model1(dataset.coords[i], apps)
        return fwd

    final_model_tag = "stage1"
    if config.use_global_motion:
        stage1_state = checkpoint.load_state(out_dir / "stage1_final.stik")
        model2, curve2 = train_stage2(config, stage1_state, train_set, val_set,
                                      out_dir, log)
        report.loss_curves["gmi"] = curve2
        final_model_tag = "stage2"

        def gmi_forward(dataset):
            def fwd(i):
                apps = dataset.apps[i] if dataset.apps is not None else None
                return model2(dataset.coords[i], apps,
                              dataset.video_batch(i)).logits
            return fwd

        eval_pairs = [("train", train_set), ("val", val_set)]
        for split, ds in eval_pairs:
            logits, _ = evaluate_logits(gmi_forward(ds), ds,
                                        config.gmi_batch_size)
            report.record(split, *topk_accuracy(logits, ds.labels))
    else:
        for split, ds in [("train", train_set), ("val", val_set)]:
            logits, _ = evaluate_logits(enc_forward(ds), ds,
                                        max(config.encoder_batch_size, 256))
            report.record(split, *topk_accuracy(logits, ds.labels))

    report.wall_clock_sec = time.time() - t_start
    report.notes = {"final_checkpoint": f"{final_model_tag}_final.stik",
                    "deterministic": config.deterministic,
                    "config": config.to_dict()}
    report.save(out_dir / "metrics.json")
    return report


def evaluate(config: RunConfig, ckpt_path: str | Path, split: str,
             encoder_only: bool = False) -> MetricsReport:
    """Score a checkpoint on one split (top-1 / top-5)."""
    if split not in ("train", "val"):
        raise ValueError(f"unknown split {split!r}")
    config.validate()
    root = Path(config.dataset_dir)
    need_app = config.feature_arm != ARM_COORD
    use_gmi = config.use_global_motion and not encoder_only
    dataset = EpisodeDataset.load(root / split, config.dims.num_objects,
                                  need_app, use_gmi)
    state = checkpoint.load_state(ckpt_path)

    if use_gmi:
        model = GmiClassifier(config.dims, config.variant, config.feature_arm,
                              dataset.num_classes, seed=config.seed)
    else:
        model = EncoderClassifier(config.dims, config.variant,
                                  config.feature_arm, dataset.num_classes,
                                  seed=config.seed)
    head_key = "head.weight"
    if head_key in state and state[head_key].shape[1] != dataset.num_classes:
        raise ValueError(
            f"checkpoint has {state[head_key].shape[1]} classes but the "
            f"dataset has {dataset.num_classes}")
    model.load_state_dict(state, strict=False)
    own = dict(model.named_parameters())
    missing = [k for k in own if k not in state]
    if missing:
        raise KeyError(f"checkpoint is missing parameters: {missing[:4]}")

    if use_gmi:
        def fwd(i):
            apps = dataset.apps[i] if dataset.apps is not None else None
            return model(dataset.coords[i], apps, dataset.video_batch(i)).logits
        batch = config.gmi_batch_size
    else:
        def fwd(i):
            apps = dataset.apps[i] if dataset.apps is not None else None
            return model(dataset.coords[i], apps)
        batch = max(config.encoder_batch_size, 256)

    logits, loss = evaluate_logits(fwd, dataset, batch)
    report = MetricsReport(config_fingerprint=config.fingerprint())
    report.record(split, *topk_accuracy(logits, dataset.labels))
    report.notes = {"split": split, "mean_loss": loss,
                    "checkpoint": str(ckpt_path), "encoder_only": encoder_only}
    return report
