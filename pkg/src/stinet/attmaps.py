"""Export class-token attention over spatial video tokens as images.

For each head of the final infusion layer and each temporal slot, the
cls attention row is sliced to that frame's spatial tokens, reshaped to
the H' x W' patch grid, bilinearly upsampled to frame resolution, and
written as a grayscale PGM plus a red-channel overlay PPM on the first
source frame of the temporal slot.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import zoom

from .autograd import no_grad
from .features import assemble_entity_arrays
from .models import GmiClassifier
from .synth import Episode


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    h, w = gray.shape
    header = f"P5\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + gray.astype(np.uint8).tobytes())


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    header = f"P6\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + rgb.astype(np.uint8).tobytes())


def export_attention_maps(model: GmiClassifier, episode: Episode,
                          out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dims = model.dims
    need_app = model.features.uses_appearance
    frames_f = episode.frames.astype(np.float64) / 255.0
    coords, apps, _ = assemble_entity_arrays(
        episode.hand_track, episode.object_tracks, dims.num_objects,
        frames=frames_f if need_app else None)
    video = frames_f[None]
    with no_grad():
        out = model(coords[None], apps[None] if need_app else None, video,
                    collect_attention=True)
    rows = out.cls_attention[-1][0]  # final layer, (heads, N)
    sums = rows.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-9):
        raise AssertionError(f"cls attention rows sum to {sums}, expected 1")

    grid_h, grid_w = model.gmi.embed.grid[1:]
    s = grid_h * grid_w
    tp = model.gmi.embed.grid[0]
    pt = dims.patch[0]
    frame_h, frame_w = dims.frame_hw
    written = []
    for head in range(rows.shape[0]):
        for t in range(tp):
            spatial = rows[head, 1 + t * s: 1 + (t + 1) * s].reshape(grid_h, grid_w)
            upsampled = zoom(spatial, (frame_h / grid_h, frame_w / grid_w), order=1)
            peak = upsampled.max()
            gray = np.round(upsampled / peak * 255.0) if peak > 0 else upsampled
            pgm = out_dir / f"attn_head{head}_t{t}.pgm"
            write_pgm(pgm, gray)
            base = episode.frames[t * pt].astype(np.float64)
            overlay = base * 0.55
            overlay[..., 0] += (upsampled / peak if peak > 0 else upsampled) * 255.0 * 0.45
            ppm = out_dir / f"overlay_head{head}_t{t}.ppm"
            write_ppm(ppm, np.clip(np.round(overlay), 0, 255))
            written.extend([pgm, ppm])
    return written


def attention_mass_ratio(model: GmiClassifier, episode: Episode) -> float:
    """Mean attention on the active object's grid cells relative to the
    background mean, averaged over heads and frames. Used as the
    quantitative check that the class token looks at the interaction."""
    dims = model.dims
    need_app = model.features.uses_appearance
    frames_f = episode.frames.astype(np.float64) / 255.0
    coords, apps, _ = assemble_entity_arrays(
        episode.hand_track, episode.object_tracks, dims.num_objects,
        frames=frames_f if need_app else None)
    with no_grad():
        out = model(coords[None], apps[None] if need_app else None,
                    frames_f[None], collect_attention=True)
    rows = out.cls_attention[-1][0]
    tp, grid_h, grid_w = model.gmi.embed.grid
    s = grid_h * grid_w
    pt = dims.patch[0]
    active = episode.object_tracks[episode.active_slot]

    on_mass, off_mass = [], []
    for t in range(tp):
        box = active.boxes[t * pt]
        r0 = int(np.floor((box.cy - box.h / 2) * grid_h))
        r1 = int(np.ceil((box.cy + box.h / 2) * grid_h))
        c0 = int(np.floor((box.cx - box.w / 2) * grid_w))
        c1 = int(np.ceil((box.cx + box.w / 2) * grid_w))
        mask = np.zeros((grid_h, grid_w), dtype=bool)
        mask[max(0, r0):min(grid_h, r1), max(0, c0):min(grid_w, c1)] = True
        if not mask.any() or mask.all():
            continue
        for head in range(rows.shape[0]):
            spatial = rows[head, 1 + t * s: 1 + (t + 1) * s].reshape(grid_h, grid_w)
            on_mass.append(spatial[mask].mean())
            off_mass.append(spatial[~mask].mean())
    if not on_mass:
        return 1.0
    return float(np.mean(on_mass) / max(np.mean(off_mass), 1e-12))
