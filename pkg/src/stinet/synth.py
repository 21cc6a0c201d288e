"""Synthetic compositional benchmark: rendered rectangle videos.

Six verbs over twelve visually distinct object identities, split so the
validation identities never appear in training. Trajectories carry real
per-frame jitter (rendered and stored), while detector misses are
simulated as contiguous `present=False` windows: the stored geometry is
intact, but the feature pipeline only sees the imputed (frozen) boxes.
The pixels always show the true motion, which is exactly the signal the
global-motion path can recover. One verb (roll-down-slant) also renders
a context cue, the slanted surface line.

A hand-written rule classifier over the raw stored trajectories serves
as the label-recoverability oracle.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import HAND, OBJECT, BoundingBox, EntityTrack

VERBS = ("move-left-to-right", "move-right-to-left", "lift-then-drop",
         "roll-down-slant", "push-spin", "move-closer")

HAND_COLOR = (0.95, 0.76, 0.55)
BACKGROUND = 0.5
SLANT_COLOR = (0.22, 0.20, 0.18)

TEXTURES = ("solid", "stripes", "checker")
TEXTURE_CELL = 2  # pixels per stripe/checker cell


@dataclass(frozen=True)
class ObjectIdentity:
    id: int
    color: tuple[float, float, float]
    texture: str
    size_range: tuple[tuple[float, float], tuple[float, float]] = ((0.14, 0.22),
                                                                   (0.14, 0.22))


# palette: within each texture the colors are far apart per-channel, and
# across textures the texture itself is the distinguishing feature
_PALETTE = [
    ((0.90, 0.10, 0.10), "solid"),
    ((0.10, 0.85, 0.10), "stripes"),
    ((0.10, 0.15, 0.90), "checker"),
    ((0.95, 0.90, 0.10), "solid"),
    ((0.90, 0.10, 0.90), "stripes"),
    ((0.05, 0.90, 0.90), "checker"),
    ((0.55, 0.25, 0.05), "solid"),
    ((0.20, 0.45, 0.95), "stripes"),
    ((0.60, 0.05, 0.45), "checker"),
    ((0.15, 0.15, 0.15), "solid"),
    ((0.95, 0.55, 0.05), "stripes"),
    ((0.70, 0.95, 0.75), "checker"),
]


def default_identities(count: int = 12) -> list[ObjectIdentity]:
    if count > len(_PALETTE):
        raise ValueError(f"at most {len(_PALETTE)} identities are defined")
    idents = [ObjectIdentity(i, color, texture)
              for i, (color, texture) in enumerate(_PALETTE[:count])]
    _validate_identities(idents)
    return idents


def _validate_identities(idents: list[ObjectIdentity]) -> None:
    for a in idents:
        if max(abs(a.color[c] - HAND_COLOR[c]) for c in range(3)) < 0.2:
            raise ValueError(f"identity {a.id} too close to the hand color")
        for b in idents:
            if a.id >= b.id:
                continue
            linf = max(abs(a.color[c] - b.color[c]) for c in range(3))
            if linf < 0.2 and a.texture == b.texture:
                raise ValueError(f"identities {a.id} and {b.id} too similar")


@dataclass(frozen=True)
class VerbSpec:
    """Named parametric trajectory; params are sampled inside the ranges."""

    name: str
    index: int
    params_range: dict[str, tuple[float, float]]

    def sample_params(self, rng: np.random.Generator) -> dict[str, float]:
        return {k: float(rng.uniform(lo, hi))
                for k, (lo, hi) in self.params_range.items()}

    def trajectory_fn(self, params: dict[str, float], t_norm: np.ndarray,
                      w0: float, h0: float) -> np.ndarray:
        """Noiseless (T, 4) active-object path for params in range."""
        return _object_path(self, params, t_norm, w0, h0)


VERB_SPECS = {
    "move-left-to-right": VerbSpec("move-left-to-right", 0, {
        "x_start": (0.14, 0.26), "span": (0.45, 0.60),
        "y0": (0.30, 0.72), "drift": (-0.02, 0.02)}),
    "move-right-to-left": VerbSpec("move-right-to-left", 1, {
        "x_start": (0.74, 0.86), "span": (0.45, 0.60),
        "y0": (0.30, 0.72), "drift": (-0.02, 0.02)}),
    "lift-then-drop": VerbSpec("lift-then-drop", 2, {
        "x0": (0.30, 0.70), "y0": (0.58, 0.78), "amp": (0.16, 0.30),
        "peak": (0.35, 0.60), "drift": (-0.03, 0.03)}),
    "roll-down-slant": VerbSpec("roll-down-slant", 3, {
        "run": (0.40, 0.56), "angle_deg": (16.0, 32.0),
        "y0": (0.16, 0.36), "direction": (0.0, 1.0)}),
    "push-spin": VerbSpec("push-spin", 4, {
        "x0": (0.30, 0.70), "y0": (0.32, 0.70), "rel_amp": (0.24, 0.36),
        "cycles": (1.2, 2.2), "phase": (0.0, 6.283185307179586),
        "drift": (-0.03, 0.03)}),
    "move-closer": VerbSpec("move-closer", 5, {
        "x0": (0.34, 0.66), "y0": (0.34, 0.66),
        "start_dist": (0.42, 0.55), "approach_angle": (0.0, 6.283185307179586),
        "final_dist": (0.06, 0.10)}),
}


@dataclass
class Episode:
    frames: np.ndarray  # (T, H, W, 3) uint8
    hand_track: EntityTrack
    object_tracks: list[EntityTrack]
    verb_label: int
    identity_ids: list[int]  # parallel to object_tracks
    seed: int
    active_slot: int
    context: dict = field(default_factory=dict)


@dataclass
class GenerationConfig:
    seq_len: int = 16
    frame_hw: tuple[int, int] = (32, 32)
    num_objects: int = 3
    jitter: float = 0.012
    size_jitter: float = 0.006
    object_gap_prob: float = 0.92
    object_gap_len: tuple[int, int] = (7, 12)
    hand_gap_prob: float = 0.65
    hand_gap_len: tuple[int, int] = (5, 9)
    max_distractors: int = 2


@dataclass
class CompositionalSplit:
    train_identities: list[int]
    val_identities: list[int]
    verbs: list[str]
    episodes_per_cell: int
    master_seed: int


def make_compositional_split(num_identities: int, train_fraction: float,
                             verbs: list[str], seed: int,
                             episodes_per_cell: int = 60) -> CompositionalSplit:
    """Seeded disjoint identity partition with every verb on both sides."""
    if num_identities < 2:
        raise ValueError("need at least 2 identities to split")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train fraction {train_fraction} not in (0, 1)")
    n_train = round(num_identities * train_fraction)
    if n_train == 0 or n_train == num_identities:
        raise ValueError(
            f"fraction {train_fraction} leaves one side of the split empty")
    for v in verbs:
        if v not in VERB_SPECS:
            raise ValueError(f"unknown verb {v!r}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD15C)))
    order = rng.permutation(num_identities)
    return CompositionalSplit(
        train_identities=sorted(int(i) for i in order[:n_train]),
        val_identities=sorted(int(i) for i in order[n_train:]),
        verbs=list(verbs),
        episodes_per_cell=episodes_per_cell,
        master_seed=seed)


# ----------------------------------------------------------------- trajectories


def _object_path(spec: VerbSpec, params: dict[str, float],
                 t_norm: np.ndarray, w0: float, h0: float) -> np.ndarray:
    """Noiseless parametric (T, 4) path of the active object."""
    s = t_norm
    name = spec.name
    if name == "move-left-to-right":
        cx = params["x_start"] + params["span"] * s
        cy = params["y0"] + params["drift"] * s
        w = np.full_like(s, w0)
        h = np.full_like(s, h0)
    elif name == "move-right-to-left":
        cx = params["x_start"] - params["span"] * s
        cy = params["y0"] + params["drift"] * s
        w = np.full_like(s, w0)
        h = np.full_like(s, h0)
    elif name == "lift-then-drop":
        peak = params["peak"]
        warped = np.where(s < peak, s / (2 * peak),
                          0.5 + (s - peak) / (2 * (1 - peak)))
        cx = params["x0"] + params["drift"] * s
        cy = params["y0"] - params["amp"] * np.sin(np.pi * warped)
        w = np.full_like(s, w0)
        h = np.full_like(s, h0)
    elif name == "roll-down-slant":
        direction = 1.0 if params["direction"] >= 0.5 else -1.0
        run = params["run"]
        drop = run * np.tan(np.radians(params["angle_deg"]))
        x0 = 0.2 if direction > 0 else 0.8
        cx = x0 + direction * run * s
        cy = params["y0"] + drop * s
        w = np.full_like(s, w0)
        h = np.full_like(s, h0)
    elif name == "push-spin":
        osc = np.sin(2 * np.pi * params["cycles"] * s + params["phase"])
        cx = params["x0"] + params["drift"] * s
        cy = params["y0"] + 0.3 * params["drift"] * s
        w = w0 * (1.0 + params["rel_amp"] * osc)
        h = h0 * (1.0 - params["rel_amp"] * osc)
    elif name == "move-closer":
        cx = np.full_like(s, params["x0"])
        cy = np.full_like(s, params["y0"])
        w = np.full_like(s, w0)
        h = np.full_like(s, h0)
    else:
        raise ValueError(f"unknown verb {name!r}")
    return np.stack([cx, cy, w, h], axis=1)


def _hand_path(spec: VerbSpec, params: dict[str, float], obj: np.ndarray,
               hand_w: float, hand_h: float,
               rng: np.random.Generator) -> np.ndarray:
    """Verb-correlated hand path: approach, then follow at a contact offset."""
    t_len = obj.shape[0]
    s = np.linspace(0.0, 1.0, t_len)
    name = spec.name
    if name == "move-closer":
        ang = params["approach_angle"]
        start = None
        for _ in range(32):  # keep the start point inside the frame
            direction = np.array([np.cos(ang), np.sin(ang)])
            cand = obj[0, :2] + direction * params["start_dist"]
            if (cand > 0.08).all() and (cand < 0.92).all():
                start = cand
                break
            ang = rng.uniform(0.0, 2 * np.pi)
        if start is None:
            start = np.clip(obj[0, :2] + direction * params["start_dist"],
                            0.08, 0.92)
        end = obj[0, :2] + direction * params["final_dist"]
        frac = (1.0 - s) ** 1.3
        centers = end + (start - end) * frac[:, None]
    else:
        # contact side: behind the motion for translations, below for
        # lifts, beside for spins
        if name == "move-left-to-right":
            offset = np.array([-(obj[0, 2] / 2 + hand_w / 2) - 0.01, 0.0])
        elif name == "move-right-to-left":
            offset = np.array([obj[0, 2] / 2 + hand_w / 2 + 0.01, 0.0])
        elif name == "lift-then-drop":
            offset = np.array([0.0, obj[0, 3] / 2 + hand_h / 2 + 0.01])
        else:
            side = 1.0 if rng.random() < 0.5 else -1.0
            offset = np.array([side * (obj[0, 2] / 2 + hand_w / 2 + 0.012), 0.0])
        approach_frames = int(rng.integers(3, 6))
        start = obj[0, :2] + offset * rng.uniform(3.0, 5.0)
        centers = np.empty((t_len, 2))
        for t in range(t_len):
            target = obj[min(t, t_len - 1), :2] + offset
            if t < approach_frames:
                frac = (t + 1) / (approach_frames + 1)
                centers[t] = start + (target - start) * frac
            else:
                lagged = obj[max(t - 1, 0), :2] + offset
                centers[t] = lagged
    path = np.empty((t_len, 4))
    path[:, 0:2] = centers
    path[:, 2] = hand_w
    path[:, 3] = hand_h
    return path


def _clamp_boxes(path: np.ndarray) -> np.ndarray:
    out = path.copy()
    out[:, 2] = np.clip(out[:, 2], 0.02, 0.45)
    out[:, 3] = np.clip(out[:, 3], 0.02, 0.45)
    out[:, 0] = np.clip(out[:, 0], out[:, 2] / 2 + 0.005, 1 - out[:, 2] / 2 - 0.005)
    out[:, 1] = np.clip(out[:, 1], out[:, 3] / 2 + 0.005, 1 - out[:, 3] / 2 - 0.005)
    if (out[:, 2] <= 0).any() or (out[:, 3] <= 0).any():
        raise ValueError("clamping degenerated a box")
    return out


def _gap_flags(t_len: int, prob: float, length_range: tuple[int, int],
               rng: np.random.Generator) -> list[bool]:
    present = [True] * t_len
    if rng.random() < prob:
        length = int(rng.integers(length_range[0], length_range[1] + 1))
        length = min(length, t_len - 1)  # keep at least one present frame
        start = int(rng.integers(0, t_len - length + 1))
        for t in range(start, start + length):
            present[t] = False
    if not any(present):
        present[0] = True
    return present


def _to_track(kind: str, index: int, path: np.ndarray,
              present: list[bool]) -> EntityTrack:
    boxes = [BoundingBox(*row) for row in path]
    return EntityTrack(kind, index, boxes, list(present))


def generate_episode(verb: str | VerbSpec, identities: list[ObjectIdentity],
                     seed: int, config: GenerationConfig | None = None,
                     ) -> Episode:
    """Fully seeded episode: identities[0] is the active object, the rest
    is the distractor candidate pool."""
    spec = VERB_SPECS[verb] if isinstance(verb, str) else verb
    config = config or GenerationConfig()
    if len({i.id for i in identities}) != len(identities):
        raise ValueError("identities must be distinct")
    rng = np.random.default_rng(np.random.SeedSequence((seed, spec.index)))
    t_len = config.seq_len
    t_norm = np.linspace(0.0, 1.0, t_len)
    active = identities[0]

    params = spec.sample_params(rng)
    w0 = rng.uniform(*active.size_range[0])
    h0 = rng.uniform(*active.size_range[1])
    obj_path = spec.trajectory_fn(params, t_norm, w0, h0)
    obj_path[:, 0:2] += rng.normal(0.0, config.jitter, size=(t_len, 2))
    obj_path[:, 2:4] += rng.normal(0.0, config.size_jitter, size=(t_len, 2))
    obj_path = _clamp_boxes(obj_path)

    hand_w = rng.uniform(0.10, 0.14)
    hand_h = rng.uniform(0.10, 0.14)
    hand_path = _hand_path(spec, params, obj_path, hand_w, hand_h, rng)
    hand_path[:, 0:2] += rng.normal(0.0, config.jitter, size=(t_len, 2))
    hand_path = _clamp_boxes(hand_path)

    n_distract = int(rng.integers(0, config.max_distractors + 1))
    pool = list(identities[1:])
    distractor_ids = [pool[i] for i in
                      rng.permutation(len(pool))[:n_distract]] if pool else []
    distractor_paths = []
    for ident in distractor_ids:
        dw = rng.uniform(*ident.size_range[0])
        dh = rng.uniform(*ident.size_range[1])
        for _ in range(40):
            dx = rng.uniform(dw / 2 + 0.02, 1 - dw / 2 - 0.02)
            dy = rng.uniform(dh / 2 + 0.02, 1 - dh / 2 - 0.02)
            if abs(dx - obj_path[0, 0]) + abs(dy - obj_path[0, 1]) > 0.3:
                break
        distractor_paths.append(
            np.broadcast_to(np.array([dx, dy, dw, dh]), (t_len, 4)).copy())

    # simulated detector misses; stored geometry stays intact
    obj_tracks_raw = [(active, obj_path)] + list(zip(distractor_ids,
                                                     distractor_paths))
    order = rng.permutation(len(obj_tracks_raw))
    object_tracks = []
    identity_ids = []
    active_slot = -1
    for slot, src in enumerate(order):
        ident, path = obj_tracks_raw[src]
        present = _gap_flags(t_len, config.object_gap_prob,
                             config.object_gap_len, rng)
        object_tracks.append(_to_track(OBJECT, slot, path, present))
        identity_ids.append(ident.id)
        if src == 0:
            active_slot = slot
    hand_present = _gap_flags(t_len, config.hand_gap_prob,
                              config.hand_gap_len, rng)
    hand_track = _to_track(HAND, 0, hand_path, hand_present)

    context = {}
    if spec.name == "roll-down-slant":
        lowest = obj_path[:, 1] + obj_path[:, 3] / 2
        context["slant"] = [float(obj_path[0, 0]), float(lowest[0] + 0.02),
                            float(obj_path[-1, 0]), float(lowest[-1] + 0.02)]

    ident_by_slot = {slot: obj_tracks_raw[src][0]
                     for slot, src in enumerate(order)}
    frames = render_episode(hand_track, object_tracks, ident_by_slot,
                            active_slot, context, config.frame_hw)
    return Episode(frames=frames, hand_track=hand_track,
                   object_tracks=object_tracks, verb_label=spec.index,
                   identity_ids=identity_ids, seed=seed,
                   active_slot=active_slot, context=context)


# ----------------------------------------------------------------- rendering


def _pixel_bounds(box: BoundingBox, h: int, w: int) -> tuple[int, int, int, int]:
    x0, y0, x1, y1 = box.corners()
    return (max(0, int(np.floor(y0 * h))), min(h, int(np.ceil(y1 * h))),
            max(0, int(np.floor(x0 * w))), min(w, int(np.ceil(x1 * w))))


def _draw_box(img: np.ndarray, box: BoundingBox, color: tuple[float, ...],
              texture: str = "solid") -> None:
    h, w = img.shape[:2]
    r0, r1, c0, c1 = _pixel_bounds(box, h, w)
    if r1 <= r0 or c1 <= c0:
        return
    base = np.array(color)
    if texture == "solid":
        img[r0:r1, c0:c1] = base
        return
    dark = base * 0.55
    rows = (np.arange(r0, r1) - r0) // TEXTURE_CELL
    cols = (np.arange(c0, c1) - c0) // TEXTURE_CELL
    if texture == "stripes":
        pattern = (cols % 2)[None, :] * np.ones((r1 - r0, 1), dtype=int)
    elif texture == "checker":
        pattern = (rows[:, None] + cols[None, :]) % 2
    else:
        raise ValueError(f"unknown texture {texture!r}")
    img[r0:r1, c0:c1] = np.where(pattern[..., None] == 0, base, dark)


def _draw_line(img: np.ndarray, x0: float, y0: float, x1: float, y1: float,
               color: tuple[float, ...], thickness: int = 2) -> None:
    h, w = img.shape[:2]
    n = 2 * max(h, w)
    xs = np.linspace(x0, x1, n) * w
    ys = np.linspace(y0, y1, n) * h
    for t in range(thickness):
        rr = np.clip(ys.astype(int) + t, 0, h - 1)
        cc = np.clip(xs.astype(int), 0, w - 1)
        img[rr, cc] = color


def render_frame(entities: list[tuple[BoundingBox, ObjectIdentity | None]],
                 frame_hw: tuple[int, int],
                 context: dict | None = None) -> np.ndarray:
    """Rasterize one frame: mid-gray background, context line, objects in
    the given order, hand (identity None) last."""
    h, w = frame_hw
    img = np.full((h, w, 3), BACKGROUND)
    if context and "slant" in context:
        _draw_line(img, *context["slant"], SLANT_COLOR)
    hands = [e for e in entities if e[1] is None]
    objects = [e for e in entities if e[1] is not None]
    for box, ident in objects:
        _draw_box(img, box, ident.color, ident.texture)
    for box, _ in hands:
        _draw_box(img, box, HAND_COLOR)
    return img


def render_episode(hand_track: EntityTrack, object_tracks: list[EntityTrack],
                   ident_by_slot: dict[int, ObjectIdentity], active_slot: int,
                   context: dict, frame_hw: tuple[int, int]) -> np.ndarray:
    t_len = len(hand_track)
    frames = np.empty((t_len, *frame_hw, 3), dtype=np.uint8)
    draw_order = [s for s in range(len(object_tracks)) if s != active_slot]
    if active_slot >= 0:
        draw_order.append(active_slot)  # active object on top of distractors
    for t in range(t_len):
        entities = [(object_tracks[s].boxes[t], ident_by_slot[s])
                    for s in draw_order]
        entities.append((hand_track.boxes[t], None))
        img = render_frame(entities, frame_hw, context)
        frames[t] = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return frames


# ----------------------------------------------------------------- episode files

STIV_MAGIC = b"STIV"


def write_episode(directory: str | Path, stem: str, ep: Episode) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    t, h, w, _ = ep.frames.shape
    header = STIV_MAGIC + np.array([t, h, w], dtype="<u4").tobytes()
    (directory / f"{stem}.stiv").write_bytes(header + ep.frames.tobytes())
    meta = {
        "seed": ep.seed,
        "verb": VERBS[ep.verb_label],
        "verb_label": ep.verb_label,
        "identity_ids": ep.identity_ids,
        "active_slot": ep.active_slot,
        "context": ep.context,
        "hand": _track_json(ep.hand_track),
        "objects": [_track_json(tr) for tr in ep.object_tracks],
    }
    (directory / f"{stem}.json").write_text(json.dumps(meta))


def _track_json(tr: EntityTrack) -> dict:
    return {"boxes": [[b.cx, b.cy, b.w, b.h] for b in tr.boxes],
            "present": [bool(p) for p in tr.present]}


def _track_from_json(kind: str, index: int, raw: dict) -> EntityTrack:
    boxes = [BoundingBox(*row) for row in raw["boxes"]]
    return EntityTrack(kind, index, boxes, [bool(p) for p in raw["present"]])


def read_episode(directory: str | Path, stem: str) -> Episode:
    directory = Path(directory)
    raw = (directory / f"{stem}.stiv").read_bytes()
    if raw[:4] != STIV_MAGIC:
        raise ValueError(f"{stem}.stiv: bad magic {raw[:4]!r}")
    t, h, w = np.frombuffer(raw, dtype="<u4", count=3, offset=4)
    frames = np.frombuffer(raw, dtype=np.uint8, offset=16)
    if frames.size != t * h * w * 3:
        raise ValueError(f"{stem}.stiv: truncated pixel payload")
    frames = frames.reshape(t, h, w, 3).copy()
    meta = json.loads((directory / f"{stem}.json").read_text())
    return Episode(
        frames=frames,
        hand_track=_track_from_json(HAND, 0, meta["hand"]),
        object_tracks=[_track_from_json(OBJECT, i, o)
                       for i, o in enumerate(meta["objects"])],
        verb_label=meta["verb_label"],
        identity_ids=list(meta["identity_ids"]),
        seed=meta["seed"],
        active_slot=meta["active_slot"],
        context=meta.get("context", {}))


def generate_split_datasets(out_dir: str | Path, master_seed: int,
                            num_identities: int = 12,
                            train_fraction: float = 2.0 / 3.0,
                            episodes_per_cell: int = 60,
                            config: GenerationConfig | None = None,
                            verbs: list[str] | None = None) -> dict:
    """Write train/ and val/ episode directories plus manifests."""
    verbs = list(verbs or VERBS)
    config = config or GenerationConfig()
    out_dir = Path(out_dir)
    split = make_compositional_split(num_identities, train_fraction, verbs,
                                     master_seed, episodes_per_cell)
    identities = default_identities(num_identities)
    by_id = {i.id: i for i in identities}
    meta = {
        "master_seed": master_seed,
        "verbs": verbs,
        "train_identities": split.train_identities,
        "val_identities": split.val_identities,
        "episodes_per_cell": episodes_per_cell,
        "seq_len": config.seq_len,
        "frame_hw": list(config.frame_hw),
        "num_objects": config.num_objects,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=1))
    for split_name, ids in (("train", split.train_identities),
                            ("val", split.val_identities)):
        split_dir = out_dir / split_name
        split_dir.mkdir(parents=True, exist_ok=True)
        manifest = []
        counter = 0
        for verb in verbs:
            spec = VERB_SPECS[verb]
            for ident_id in ids:
                pool = [by_id[ident_id]] + [by_id[i] for i in ids
                                            if i != ident_id]
                for k in range(episodes_per_cell):
                    ep_seed = int(np.random.SeedSequence(
                        (master_seed, spec.index, ident_id, k)
                    ).generate_state(1)[0])
                    ep = generate_episode(spec, pool, ep_seed, config)
                    stem = f"ep_{counter:05d}"
                    write_episode(split_dir, stem, ep)
                    manifest.append({"stem": stem, "verb_label": spec.index,
                                     "verb": verb, "active_identity": ident_id,
                                     "identity_ids": ep.identity_ids,
                                     "seed": ep_seed})
                    counter += 1
        (split_dir / "manifest.json").write_text(json.dumps(manifest))
    return meta


# ----------------------------------------------------------------- rule oracle


def _slope(y: np.ndarray) -> float:
    t = np.arange(len(y), dtype=np.float64)
    t -= t.mean()
    return float((t * (y - y.mean())).sum() / (t * t).sum())


def _smooth(y: np.ndarray, k: int = 3) -> np.ndarray:
    pad = k // 2
    padded = np.concatenate([np.full(pad, y[0]), y, np.full(pad, y[-1])])
    kernel = np.ones(k) / k
    return np.convolve(padded, kernel, mode="valid")


def rule_classify(hand_boxes: np.ndarray, object_boxes: list[np.ndarray]) -> int:
    """Hand-written verb rules over raw (T, 4) box trajectories.

    The active object is the one with the most coordinate variation;
    distractors in this benchmark rest perfectly still.
    """
    energies = []
    for path in object_boxes:
        c = path[:, :2]
        energies.append(float(np.var(c, axis=0).sum() + np.var(path[:, 2:], axis=0).sum()))
    obj = object_boxes[int(np.argmax(energies))] if object_boxes else hand_boxes

    t_len = obj.shape[0]
    dx = _slope(obj[:, 0]) * (t_len - 1)
    dy = _slope(obj[:, 1]) * (t_len - 1)

    w_det = obj[:, 2] - np.poly1d(np.polyfit(np.arange(t_len), obj[:, 2], 1))(np.arange(t_len))
    h_det = obj[:, 3] - np.poly1d(np.polyfit(np.arange(t_len), obj[:, 3], 1))(np.arange(t_len))
    spin_energy = float(w_det.std() + h_det.std())
    anti = float(np.corrcoef(w_det, h_det)[0, 1]) if w_det.std() > 1e-9 else 0.0

    center = _smooth(obj[:, 0]), _smooth(obj[:, 1])
    excursion = float(np.hypot(center[0] - center[0][0],
                               center[1] - center[1][0]).max())

    dist = np.hypot(hand_boxes[:, 0] - obj[:, 0], hand_boxes[:, 1] - obj[:, 1])
    dist = _smooth(dist)
    closure = float(dist[0] - dist[-1])

    cy_s = _smooth(obj[:, 1])
    dip_idx = int(np.argmin(cy_s))
    dip_depth = float(cy_s[0] - cy_s[dip_idx])
    rebound = float(cy_s[-1] - cy_s[dip_idx])

    if spin_energy > 0.018 and anti < -0.5:
        return VERB_SPECS["push-spin"].index
    if excursion < 0.08 and closure > 0.15 and dist[-1] < 0.16:
        return VERB_SPECS["move-closer"].index
    if dy > 0.09 and abs(dx) > 0.18:
        return VERB_SPECS["roll-down-slant"].index
    if dip_depth > 0.08 and rebound > 0.08:
        return VERB_SPECS["lift-then-drop"].index
    if dx > 0.18:
        return VERB_SPECS["move-left-to-right"].index
    if dx < -0.18:
        return VERB_SPECS["move-right-to-left"].index
    # fall back to the nearest gross-motion bucket
    if abs(dx) >= abs(dy):
        return (VERB_SPECS["move-left-to-right"].index if dx >= 0
                else VERB_SPECS["move-right-to-left"].index)
    return (VERB_SPECS["roll-down-slant"].index if dy > 0
            else VERB_SPECS["lift-then-drop"].index)


def rule_classifier_accuracy(split_dir: str | Path) -> float:
    """Oracle accuracy over a generated split directory."""
    split_dir = Path(split_dir)
    manifest = json.loads((split_dir / "manifest.json").read_text())
    hits = 0
    for entry in manifest:
        meta = json.loads((split_dir / f"{entry['stem']}.json").read_text())
        hand = np.array(meta["hand"]["boxes"])
        objs = [np.array(o["boxes"]) for o in meta["objects"]]
        if rule_classify(hand, objs) == entry["verb_label"]:
            hits += 1
    return hits / len(manifest)
