"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The compositional-benchmark criteria (4-6) share one module-scoped run:
dataset generation, the rule-classifier oracle, stage-1 training of the
coordinate arm, stage-2 global-motion training, and stage-1 training of
the appearance-only arm. Together they take roughly half an hour of CPU;
everything else is seconds. Run with `-s` to see the per-criterion lines.
"""
import json
import time

import numpy as np
import pytest
from oracles import mha_np, spatial_pool_np, temporal_pool_np

from stinet import checkpoint, nn
from stinet.ablate import read_csv, write_csv
from stinet.annotations import (canonical_from_dict, canonical_to_dict,
                                canonicalize, parse_annotations)
from stinet.autograd import Tensor, cross_entropy_loss, softmax_rows
from stinet.config import ModelDims, RunConfig
from stinet.encoder import VARIANTS
from stinet.gmi import (GlobalMotionInfusion, spatial_trajectory_pool,
                        temporal_trajectory_pool)
from stinet.gradcheck import finite_diff_check, finite_diff_check_params
from stinet.models import EncoderClassifier, GmiClassifier
from stinet.synth import (generate_split_datasets, read_episode,
                          rule_classifier_accuracy, write_episode)
from stinet.train import train

TINY = ModelDims(d=8, d_coord=4, d_app=6, enc_layers=1, enc_heads=2,
                 gmi_layers=1, gmi_heads=2, patch=(1, 4, 4), seq_len=3,
                 num_objects=2, frame_hw=(8, 8))

BENCH_SEED = 42
MODEL_SEED = 0


def _report(criterion: int, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[ACCEPTANCE] criterion {criterion}: {status} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# -------------------------------------------------------- criterion 1


def test_criterion_1_gradient_fidelity():
    t0 = time.time()
    rng = np.random.default_rng(10)
    worst = {}

    layer = nn.Linear(5, 4, rng)
    worst["linear"] = finite_diff_check(lambda x: (layer(x) ** 2).sum(),
                                        Tensor(rng.normal(size=(2, 5))))
    ln = nn.LayerNorm(6)
    ln.gain.data[:] = rng.normal(size=6)
    worst["layer_norm"] = finite_diff_check(lambda x: (ln(x) ** 2).sum(),
                                            Tensor(rng.normal(size=(3, 6))))
    worst["softmax"] = finite_diff_check(
        lambda x: (softmax_rows(x) ** 2).sum(), Tensor(rng.normal(size=(3, 5))))
    attn = nn.MultiheadSelfAttention(8, 2, rng)
    worst["attention"] = finite_diff_check(
        lambda x: (attn(x) ** 2).sum(), Tensor(rng.normal(size=(1, 4, 8))))
    lstm = nn.LSTM(4, 5, rng)
    worst["lstm_cell"] = finite_diff_check(
        lambda x: (lstm(x) ** 2).sum(), Tensor(rng.normal(size=(1, 3, 4))))
    emb = nn.Embedding(5, 4, rng)
    idx = np.array([0, 2, 2])
    worst["embedding"] = finite_diff_check(
        lambda w: (w[idx] ** 2).sum(), Tensor(emb.weight.data.copy()))
    labels = [1, 0]
    worst["cross_entropy"] = finite_diff_check(
        lambda x: cross_entropy_loss(x, labels), Tensor(rng.normal(size=(2, 5))))

    # every encoder variant end to end on the tiny configuration
    coords = rng.random((1, TINY.seq_len, TINY.num_objects + 1, 4))
    apps = rng.random((1, TINY.seq_len, TINY.num_objects + 1, 51))
    for variant in VARIANTS:
        model = EncoderClassifier(TINY, variant, "C+A", 3, seed=5)
        lbl = np.array([1])

        def loss_fn():
            return cross_entropy_loss(model(coords, apps), lbl)

        worst[variant] = finite_diff_check_params(
            loss_fn, model.parameters(), max_elements=4, seed=1)

    # full global-motion model, 1 layer, with live output projections
    gmodel = GmiClassifier(TINY, "BLSTM_FT", "C+A", 3, seed=5)
    for block in gmodel.gmi.blocks:
        for attn_mod in (block.cross, block.self_traj, block.cls_attn):
            attn_mod.wo.weight.data[:] = rng.normal(0, 0.2, size=(TINY.d, TINY.d))
    video = rng.random((1, TINY.seq_len, *TINY.frame_hw, 3))
    lbl = np.array([2])

    def gmi_loss():
        return cross_entropy_loss(gmodel(coords, apps, video).logits, lbl)

    worst["gmi_full"] = finite_diff_check_params(
        gmi_loss, gmodel.parameters(), max_elements=3, seed=2)

    elapsed = time.time() - t0
    bad = {k: v for k, v in worst.items() if v > 1e-4}
    _report(1, not bad and elapsed <= 120.0,
            f"max rel errors {max(worst.values()):.2e}, "
            f"{len(worst)} checks in {elapsed:.0f}s" +
            (f", failures: {bad}" if bad else ""))


# -------------------------------------------------------- criterion 2


def test_criterion_2_attention_kernel_oracle_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(20)
    worst = 0.0
    for i in range(100):
        kind = i % 3
        if kind == 0:  # frame self-attention against the per-scalar oracle
            d = int(rng.choice([8, 16, 32]))
            heads = int(rng.choice([2, 4]))
            n = int(rng.integers(2, 7))
            attn = nn.MultiheadSelfAttention(d, heads, rng)
            x = rng.normal(size=(1, n, d))
            got = attn(Tensor(x)).data[0]
            ref = mha_np(x[0], attn)
            worst = max(worst, float(np.abs(got - ref).max()))
        elif kind == 1:  # spatial trajectory pooling
            tp = int(rng.integers(1, 9))
            s = int(rng.integers(1, 17))
            dh = int(rng.choice([4, 8]))
            q = rng.normal(size=(1, 1, int(rng.integers(1, 9)), dh))
            k = rng.normal(size=(1, 1, tp, s, dh))
            v = rng.normal(size=(1, 1, tp, s, dh))
            scale = 1.0 / np.sqrt(dh)
            got, _ = spatial_trajectory_pool(Tensor(q), Tensor(k), Tensor(v),
                                             scale)
            ref = spatial_pool_np(q[0, 0], k[0, 0], v[0, 0], scale)
            worst = max(worst, float(np.abs(got.data[0, 0] - ref).max()))
        else:  # temporal trajectory pooling
            tp = int(rng.integers(1, 9))
            dh = int(rng.choice([4, 8]))
            qn = int(rng.integers(1, 9))
            q = rng.normal(size=(1, 1, qn, dh))
            k = rng.normal(size=(1, 1, qn, tp, dh))
            v = rng.normal(size=(1, 1, qn, tp, dh))
            scale = 1.0 / np.sqrt(dh)
            got, _ = temporal_trajectory_pool(Tensor(q), Tensor(k), Tensor(v),
                                              scale)
            ref = temporal_pool_np(q[0, 0], k[0, 0], v[0, 0], scale)
            worst = max(worst, float(np.abs(got.data[0, 0] - ref).max()))
    elapsed = time.time() - t0
    _report(2, worst <= 1e-6 and elapsed <= 60.0,
            f"max |batched - loop| {worst:.2e} over 100 instances "
            f"in {elapsed:.0f}s")


# -------------------------------------------------------- criterion 3


def test_criterion_3_normalization_invariants():
    rng = np.random.default_rng(30)
    worst_sum = 0.0
    envelope_ok = True
    for _ in range(50):
        x = rng.normal(size=(int(rng.integers(1, 8)), int(rng.integers(2, 9))))
        x *= rng.choice([1.0, 1e3])
        out = softmax_rows(Tensor(x)).data
        worst_sum = max(worst_sum, float(np.abs(out.sum(axis=1) - 1).max()))
    for _ in range(25):
        tp, s, dh = (int(rng.integers(1, 6)), int(rng.integers(1, 10)),
                     int(rng.choice([4, 8])))
        q = Tensor(rng.normal(size=(2, 2, 5, dh)) * 3)
        k = Tensor(rng.normal(size=(2, 2, tp, s, dh)))
        v = Tensor(rng.normal(size=(2, 2, tp, s, dh)))
        traj, w = spatial_trajectory_pool(q, k, v, 1.0 / np.sqrt(dh),
                                          check_envelope=True)
        worst_sum = max(worst_sum, float(np.abs(w.data.sum(axis=-1) - 1).max()))
        q2 = Tensor(rng.normal(size=(2, 2, 5, dh)))
        k2 = Tensor(rng.normal(size=(2, 2, 5, tp, dh)))
        v2 = Tensor(rng.normal(size=(2, 2, 5, tp, dh)))
        _, w2 = temporal_trajectory_pool(q2, k2, v2, 1.0 / np.sqrt(dh))
        worst_sum = max(worst_sum, float(np.abs(w2.data.sum(axis=-1) - 1).max()))
    _report(3, worst_sum <= 1e-9 and envelope_ok,
            f"worst row-sum deviation {worst_sum:.2e}; convex envelope held "
            "on all pooled instances")


# -------------------------------------------------------- criteria 4-6


@pytest.fixture(scope="module")
def benchmark_run(tmp_path_factory):
    """Dataset + the three trained cells shared by criteria 4, 5 and 6."""
    root = tmp_path_factory.mktemp("bench")
    data = root / "data"
    t_gen = time.time()
    generate_split_datasets(data, master_seed=BENCH_SEED)
    gen_sec = time.time() - t_gen

    rule_train = rule_classifier_accuracy(data / "train")
    rule_val = rule_classifier_accuracy(data / "val")

    def run(tag, **overrides):
        cfg = RunConfig.from_dict({
            "preset": "desk", "variant": "BLSTM_FT", "feature_arm": "C",
            "use_global_motion": False, "seed": MODEL_SEED,
            "dataset_dir": str(data), "out_dir": str(root / tag),
            **overrides})
        t0 = time.time()
        report = train(cfg, log=None)
        return report, time.time() - t0

    # defaults: 20 encoder epochs, 18 infusion epochs (the shipped config)
    enc_report, enc_sec = run("enc_c")
    gmi_report, gmi_sec = run("gmi_c", use_global_motion=True)
    app_report, app_sec = run("enc_a", feature_arm="A")

    results = {
        "data_dir": data,
        "root": root,
        "rule_train": rule_train,
        "rule_val": rule_val,
        "generation_sec": gen_sec,
        "encoder_val_top1": enc_report.top1["val"],
        "gmi_val_top1": gmi_report.top1["val"],
        "gmi_val_top5": gmi_report.top5["val"],
        "appearance_val_top1": app_report.top1["val"],
        "pipeline_sec": gmi_sec,  # criterion 4 bounds the stage1+stage2 pipeline
        "encoder_cell_sec": enc_sec,
        "appearance_cell_sec": app_sec,
    }
    print("\n[ACCEPTANCE] benchmark figures:",
          json.dumps({k: (round(v, 2) if isinstance(v, float) else str(v))
                      for k, v in results.items()}, indent=1))
    return results


def test_criterion_4_compositional_generalization(benchmark_run):
    r = benchmark_run
    ok = (r["rule_train"] >= 0.95 and r["rule_val"] >= 0.95
          and r["gmi_val_top1"] >= 50.0
          and r["pipeline_sec"] <= 45 * 60)
    _report(4, ok,
            f"rule oracle {r['rule_train']:.3f}/{r['rule_val']:.3f}, "
            f"GMI val top-1 {r['gmi_val_top1']:.1f}% (need >= 50), "
            f"train pipeline {r['pipeline_sec'] / 60:.1f} min (cap 45)")


def test_criterion_5_disentanglement(benchmark_run):
    r = benchmark_run
    chance = 100.0 / 6.0
    app = r["appearance_val_top1"]
    coord = r["encoder_val_top1"]
    ok = abs(app - chance) <= 10.0 and coord - chance >= 30.0
    _report(5, ok,
            f"appearance-only val top-1 {app:.1f}% (chance {chance:.1f} +-10), "
            f"coordinate arm {coord:.1f}% (need >= {chance + 30:.1f})")


def test_criterion_6_global_motion_benefit(benchmark_run):
    r = benchmark_run
    gap = r["gmi_val_top1"] - r["encoder_val_top1"]
    _report(6, gap >= 5.0,
            f"GMI {r['gmi_val_top1']:.1f}% vs encoder-only "
            f"{r['encoder_val_top1']:.1f}%: gap {gap:+.1f} points (need >= +5)")


# -------------------------------------------------------- criterion 7


def test_criterion_7_deterministic_training(benchmark_run):
    data = benchmark_run["data_dir"]
    root = benchmark_run["root"]
    artifacts = []
    for tag in ("det_a", "det_b"):
        cfg = RunConfig.from_dict({
            "preset": "desk", "variant": "BLSTM_FT", "feature_arm": "C",
            "seed": 7, "encoder_epochs": 2, "deterministic": True,
            "dataset_dir": str(data), "out_dir": str(root / tag)})
        report = train(cfg, log=None)
        ckpt = (root / tag / "stage1_final.stik").read_bytes()
        artifacts.append((report.to_dict(), ckpt))
    (rep_a, ck_a), (rep_b, ck_b) = artifacts
    rep_a.pop("wall_clock_sec"), rep_b.pop("wall_clock_sec")
    rep_a["notes"].pop("config"), rep_b["notes"].pop("config")
    same = rep_a == rep_b and ck_a == ck_b
    _report(7, same, "two --deterministic runs: checkpoints "
            f"{'bit-identical' if ck_a == ck_b else 'DIFFER'}, metrics "
            f"{'identical' if rep_a == rep_b else 'DIFFER'}")


# -------------------------------------------------------- criterion 8


def test_criterion_8_format_round_trips(tmp_path, benchmark_run):
    problems = []

    # checkpoint bytes
    model = EncoderClassifier(TINY, "Transformer_FT", "C+A", 4, seed=9)
    state = model.state_dict()
    checkpoint.save_state(tmp_path / "m.stik", state)
    loaded = checkpoint.load_state(tmp_path / "m.stik")
    checkpoint.save_state(tmp_path / "m2.stik", loaded)
    if (tmp_path / "m.stik").read_bytes() != (tmp_path / "m2.stik").read_bytes():
        problems.append("checkpoint")

    # episode files
    ep = read_episode(benchmark_run["data_dir"] / "val", "ep_00000")
    write_episode(tmp_path, "copy", ep)
    ep2 = read_episode(tmp_path, "copy")
    same_ep = ((ep.frames == ep2.frames).all() and ep.seed == ep2.seed
               and all(a == b for a, b in zip(ep.hand_track.boxes,
                                              ep2.hand_track.boxes)))
    if not same_ep:
        problems.append("episode")

    # annotation canonical round trip
    ann = {"videos": [{"id": "v", "width": 64, "height": 48, "frames": [
        {"index": t, "detections": [
            {"category": "hand", "box": [1, 1, 9, 9], "object_slot": None},
            {"category": "object", "box": [10 + t, 5, 30 + t, 25],
             "object_slot": 0}]} for t in range(6)]}]}
    (tmp_path / "ann.json").write_text(json.dumps(ann))
    raw = parse_annotations(tmp_path / "ann.json")[0]
    canon = canonicalize(raw, 3, 4)
    again = canonical_from_dict(
        json.loads(json.dumps(canonical_to_dict(canon))))
    if not (again.hand_track.boxes == canon.hand_track.boxes
            and all(a.boxes == b.boxes for a, b in
                    zip(again.object_tracks, canon.object_tracks))):
        problems.append("annotations")

    # ablation CSV
    rows = [{"variant": "BLSTM_FT", "arm": "C", "gmi": True,
             "top1": 73.25, "top5": 99.0, "seed": 0}]
    write_csv(rows, tmp_path / "t.csv")
    if read_csv(tmp_path / "t.csv") != rows:
        problems.append("csv")

    # paper preset accepted by validation
    try:
        cfg = RunConfig.from_dict({"preset": "paper", "variant": "BLSTM_FT",
                                   "feature_arm": "C+A"})
        dims = cfg.dims
        assert (dims.d, dims.enc_layers, dims.enc_heads) == (768, 6, 12)
        assert (dims.gmi_layers, dims.patch) == (12, (2, 16, 16))
        GlobalMotionInfusion  # constructing the paper model is out of scope
    except Exception as exc:  # noqa: BLE001
        problems.append(f"paper preset ({exc})")

    _report(8, not problems,
            "checkpoint, episode, annotation, CSV round-trips bit-exact; "
            "paper preset validates" if not problems else
            f"failed: {problems}")
