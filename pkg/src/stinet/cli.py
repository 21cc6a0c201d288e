"""Command-line entry points: generate / train / eval / ablate / attmap / ingest."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import checkpoint
from .ablate import load_matrix, run_ablation
from .config import PRESETS, RunConfig
from .train import evaluate, train


def _cmd_generate(args) -> int:
    from .synth import GenerationConfig, generate_split_datasets

    dims = PRESETS[args.preset]
    cfg = GenerationConfig(seq_len=dims.seq_len, frame_hw=dims.frame_hw,
                           num_objects=dims.num_objects)
    meta = generate_split_datasets(
        args.out, master_seed=args.seed, num_identities=args.identities,
        train_fraction=args.train_fraction,
        episodes_per_cell=args.episodes_per_cell, config=cfg)
    n_train = len(meta["train_identities"]) * len(meta["verbs"]) * args.episodes_per_cell
    n_val = len(meta["val_identities"]) * len(meta["verbs"]) * args.episodes_per_cell
    print(f"wrote {n_train} train / {n_val} val episodes to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = RunConfig.from_json(args.config)
    if args.out:
        config.out_dir = args.out
    if args.deterministic:
        config.deterministic = True
    if not config.out_dir:
        print("error: no output directory (use --out or set out_dir)",
              file=sys.stderr)
        return 2
    report = train(config)
    print(f"train top1/top5: {report.top1['train']:.1f} / {report.top5['train']:.1f}")
    print(f"val   top1/top5: {report.top1['val']:.1f} / {report.top5['val']:.1f}")
    print(f"metrics: {Path(config.out_dir) / 'metrics.json'}")
    return 0


def _resolve_config(args) -> RunConfig:
    """Explicit --config wins; otherwise recover the run configuration
    from the metrics.json written next to the checkpoint."""
    if args.config:
        return RunConfig.from_json(args.config)
    sidecar = Path(args.ckpt).parent / "metrics.json"
    if not sidecar.exists():
        raise FileNotFoundError(
            f"no --config given and {sidecar} not found next to the checkpoint")
    import json

    notes = json.loads(sidecar.read_text()).get("notes", {})
    if "config" not in notes:
        raise ValueError(f"{sidecar} does not record a run configuration")
    return RunConfig.from_dict(notes["config"])


def _cmd_eval(args) -> int:
    config = _resolve_config(args)
    report = evaluate(config, args.ckpt, args.split,
                      encoder_only=args.encoder_only)
    print(f"{args.split} top1 {report.top1[args.split]:.2f}% "
          f"top5 {report.top5[args.split]:.2f}%")
    if args.out:
        report.save(args.out)
    return 0


def _cmd_ablate(args) -> int:
    base, cells = load_matrix(args.matrix)
    rows = run_ablation(base, cells, args.out)
    print((Path(args.out) / "ablation.txt").read_text())
    failures = [r for r in rows if r.get("error")]
    return 1 if failures else 0


def _cmd_attmap(args) -> int:
    from .attmaps import export_attention_maps
    from .models import GmiClassifier
    from .synth import read_episode

    config = _resolve_config(args)
    if not config.use_global_motion:
        print("error: attention maps need a global-motion checkpoint "
              "(use_global_motion=false in config)", file=sys.stderr)
        return 2
    state = checkpoint.load_state(args.ckpt)
    if not any(k.startswith("gmi.") for k in state):
        print(f"error: {args.ckpt} is an encoder-only checkpoint, "
              "attention maps need a global-motion model", file=sys.stderr)
        return 2
    episode_path = Path(args.episode)
    stem = episode_path.name.removesuffix(".stiv")
    episode = read_episode(episode_path.parent, stem)
    num_classes = len(state["gmi.head.bias"])
    model = GmiClassifier(config.dims, config.variant, config.feature_arm,
                          num_classes, seed=config.seed)
    model.load_state_dict(state)
    written = export_attention_maps(model, episode, args.out)
    print(f"wrote {len(written)} images to {args.out}")
    return 0


def _cmd_ingest(args) -> int:
    from .annotations import ingest_file

    dims = PRESETS[args.preset]
    written = ingest_file(args.annotations, args.out, dims.num_objects,
                          dims.seq_len, hand_seed=args.seed)
    print(f"canonicalized {len(written)} videos into {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stinet",
        description="hand-object interaction encoding with global motion "
                    "infusion on a synthetic compositional benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--identities", type=int, default=12)
    p.add_argument("--train-fraction", type=float, default=2.0 / 3.0)
    p.add_argument("--episodes-per-cell", type=int, default=60)
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("train", help="run the training workflow")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="")
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("train", "val"), required=True)
    p.add_argument("--config", default="",
                   help="run config JSON; defaults to the metrics.json "
                        "recorded next to the checkpoint")
    p.add_argument("--encoder-only", action="store_true")
    p.add_argument("--out", default="")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("attmap", help="export class-token attention maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episode", required=True,
                   help="path to an episode .stiv file")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default="",
                   help="run config JSON; defaults to the metrics.json "
                        "recorded next to the checkpoint")
    p.set_defaults(fn=_cmd_attmap)

    p = sub.add_parser("ingest", help="canonicalize annotation JSON")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_ingest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
