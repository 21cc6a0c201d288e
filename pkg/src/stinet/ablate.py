"""Ablation matrix runner: variants x feature arms x global-motion on/off."""
from __future__ import annotations

import csv
import json
import traceback
from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig
from .train import train

CSV_COLUMNS = ("variant", "arm", "gmi", "top1", "top5", "seed")


@dataclass
class AblationCell:
    variant: str
    feature_arm: str
    use_global_motion: bool

    @property
    def tag(self) -> str:
        gm = "gmi" if self.use_global_motion else "enc"
        arm = self.feature_arm.replace("+", "")
        return f"{self.variant}_{arm}_{gm}"


def load_matrix(path: str | Path) -> tuple[RunConfig, list[AblationCell]]:
    """Matrix file: {"base": {...RunConfig fields...}, and either
    "cells": [{variant, feature_arm, use_global_motion}] or the product
    spec "variants"/"arms"/"gmi" lists}."""
    raw = json.loads(Path(path).read_text())
    base = RunConfig.from_dict(raw.get("base", {}))
    if "cells" in raw:
        cells = [AblationCell(c["variant"], c["feature_arm"],
                              bool(c["use_global_motion"]))
                 for c in raw["cells"]]
    else:
        cells = [AblationCell(v, a, bool(g))
                 for v in raw["variants"]
                 for a in raw["arms"]
                 for g in raw["gmi"]]
    return base, cells


def run_ablation(base: RunConfig, cells: list[AblationCell],
                 out_dir: str | Path, log=print) -> list[dict]:
    """Train/evaluate every cell; failures are recorded and the run goes on."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for cell in cells:
        config = RunConfig.from_dict({**base.to_dict(),
                                      "variant": cell.variant,
                                      "feature_arm": cell.feature_arm,
                                      "use_global_motion": cell.use_global_motion,
                                      "out_dir": str(out_dir / cell.tag)})
        row = {"variant": cell.variant, "arm": cell.feature_arm,
               "gmi": cell.use_global_motion, "top1": None, "top5": None,
               "seed": config.seed}
        try:
            report = train(config, log=log)
            row["top1"] = report.top1["val"]
            row["top5"] = report.top5["val"]
        except Exception as exc:  # noqa: BLE001 - cell failures must not stop the matrix
            row["error"] = f"{type(exc).__name__}: {exc}"
            (out_dir / f"{cell.tag}.error.txt").write_text(traceback.format_exc())
            if log:
                log(f"[ablate] cell {cell.tag} failed: {row['error']}")
        rows.append(row)
    write_csv(rows, out_dir / "ablation.csv")
    (out_dir / "ablation.txt").write_text(format_table(rows))
    return rows


def write_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for raw in csv.DictReader(fh):
            rows.append({
                "variant": raw["variant"],
                "arm": raw["arm"],
                "gmi": raw["gmi"] == "True",
                "top1": float(raw["top1"]) if raw["top1"] else None,
                "top5": float(raw["top5"]) if raw["top5"] else None,
                "seed": int(raw["seed"]),
            })
        return rows


def format_table(rows: list[dict]) -> str:
    headers = ["variant", "arm", "gmi", "top1", "top5", "seed"]
    lines = []
    rendered = [[_cell_str(r.get(h)) for h in headers] for r in rows]
    widths = [max(len(h), *(len(row[i]) for row in rendered)) if rendered
              else len(h) for i, h in enumerate(headers)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for row in rendered:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def _cell_str(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.1f}"
    return str(value)
