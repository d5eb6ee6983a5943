import json
from pathlib import Path

import numpy as np
import pytest
import torch

from viewdvc.checkpoint import load_checkpoint
from viewdvc.cli import main
from viewdvc.core import load_corpus
from viewdvc.manifest import RunManifest, blob_hash
from viewdvc.preproc import Detection, save_detections, save_mask_file
from viewdvc.trainer import frame_features

TINY_TOML = """
[data]
t = 16
[model]
d_model = 8
num_queries = 4
nhead = 2
k_max = 12
[train]
epochs = 2
lr_model = 1e-3
lr_classifier = 1e-2
[synth]
n_source = 6
n_target = 4
d = 8
t = 16
min_steps = 2
max_steps = 3
"""


def run(*argv):
    return main([str(a) for a in argv])


def replay(out_dir, capsys):
    capsys.readouterr()
    code = run("replay", Path(out_dir) / "manifest.json")
    return code, capsys.readouterr().out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.toml").write_text(TINY_TOML)
    cfg = root / "tiny.toml"
    assert run("gen-synth", "--config", cfg, "--seed", 0, "--out", root / "corpus") == 0
    assert run("pretrain", "--config", cfg, "--corpus", root / "corpus", "--out", root / "pt") == 0
    assert run("finetune", "--config", cfg, "--corpus", root / "corpus", "--init", root / "pt" / "checkpoint",
               "--epochs", 1, "--out", root / "ft") == 0
    return root


def test_gen_synth_writes_corpus_and_manifest(pipeline):
    corpus = pipeline / "corpus"
    m = RunManifest.load(corpus)
    assert m.command == "gen-synth" and m.seeds == [0]
    assert (corpus / "annotations.json").exists()
    assert m.outputs["annotations.json"] == blob_hash(corpus / "annotations.json")
    probe = json.loads((corpus / "gap_probe.json").read_text())
    assert probe["chance"] == pytest.approx(1 / 3)
    source, target = load_corpus(corpus, 16, "VC+HO")
    assert len(source) == 6 and len(target) == 4 and target.items[0].features.d == 32


def test_config_file_and_flag_precedence(pipeline):
    pt = json.loads((pipeline / "pt" / "checkpoint" / "config.json").read_text())
    assert pt["epochs"] == 2 and pt["d_model"] == 8 and pt["stage"] == "VI-PT"   # from the file
    assert pt["lambda_adv"] == 0.1                                              # built-in default
    ft = json.loads((pipeline / "ft" / "checkpoint" / "config.json").read_text())
    assert ft["epochs"] == 1 and ft["stage"] == "VI-FT"                         # flag beats file
    assert len(json.loads((pipeline / "ft" / "history.json").read_text())["losses"]) == 1


def test_checkpoint_stage_tags(pipeline):
    assert load_checkpoint(pipeline / "pt" / "checkpoint")[4] == "pt"
    assert load_checkpoint(pipeline / "ft" / "checkpoint")[4] == "ft"


def test_finetune_refuses_a_finetuned_init(pipeline, tmp_path):
    code = run("finetune", "--config", pipeline / "tiny.toml", "--corpus", pipeline / "corpus",
               "--init", pipeline / "ft" / "checkpoint", "--out", tmp_path)
    assert code == 3


@pytest.mark.parametrize("out", ["pt", "ft"])
def test_training_replays_bit_identically(pipeline, capsys, out):
    code, text = replay(pipeline / out, capsys)
    assert code == 0 and "bit-identical" in text


def test_evaluate_and_replay(pipeline, capsys):
    out = pipeline / "eval"
    assert run("evaluate", "--checkpoint", pipeline / "ft" / "checkpoint", "--corpus", pipeline / "corpus",
               "--out", out) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics["dvc_eval"]) == {"B4", "METEOR", "CIDEr"}
    assert (out / "predictions.json").exists() and (out / "metrics.tsv").exists()
    code, text = replay(out, capsys)
    assert code == 0 and "bit-identical" in text
    # the saved predictions evaluate to the same numbers through the file path
    out2 = pipeline / "eval_files"
    assert run("evaluate", "--pred", out / "predictions.json", "--ref", pipeline / "corpus" / "annotations.json",
               "--split", "eval", "--out", out2) == 0
    again = json.loads((out2 / "metrics.json").read_text())
    assert again["sum_METEOR"] == pytest.approx(metrics["sum_METEOR"], abs=1e-9)


def test_eval_gt_proposals_assignments_recomputed(pipeline, capsys):
    out = pipeline / "gtp"
    assert run("eval-gt-proposals", "--checkpoint", pipeline / "ft" / "checkpoint", "--corpus",
               pipeline / "corpus", "--out", out) == 0
    got = json.loads((out / "assignments.json").read_text())
    model, cfg, _, _, _ = load_checkpoint(pipeline / "ft" / "checkpoint")
    _, target = load_corpus(pipeline / "corpus", cfg.t, cfg.mode)
    model.eval()
    for it in target.split("eval"):
        dur = it.annotation.duration
        with torch.no_grad():
            cl = model.captioner(frame_features(model, it)).segments.double().numpy()
        starts = np.clip((cl[:, 0] - cl[:, 1] / 2) * dur, 0, dur)
        ends = np.clip((cl[:, 0] + cl[:, 1] / 2) * dur, 0, dur)
        for rec, g in zip(got[it.video_id], it.annotation.segments):
            ious = [max(0.0, min(e, g.end) - max(s, g.start)) / (max(e, g.end) - min(s, g.start))
                    for s, e in zip(starts, ends)]
            best = ious.index(max(ious))
            assert rec["query"] == best
            assert rec["tiou"] == pytest.approx(ious[best], abs=1e-6)
    code, text = replay(out, capsys)
    assert code == 0 and "bit-identical" in text


def test_embeddings_and_plots(pipeline, capsys):
    emb = pipeline / "emb"
    assert run("dump-embeddings", "--checkpoint", pipeline / "ft" / "checkpoint", "--corpus",
               pipeline / "corpus", "--out", emb) == 0
    lines = (emb / "embeddings.tsv").read_text().splitlines()
    assert len(lines) == 1 + 16 * 10
    plot = pipeline / "plot"
    assert run("plot-timeline", "--embeddings", emb / "embeddings.tsv", "--out", plot) == 0
    assert (plot / "projection.png").read_bytes()[:4] == b"\x89PNG"
    code, text = replay(plot, capsys)
    assert code == 0 and "bit-identical" in text
    tl = pipeline / "timeline"
    assert run("plot-timeline", "--pred", pipeline / "eval" / "predictions.json", "--ref",
               pipeline / "corpus" / "annotations.json", "--video", "tgt_0002", "--out", tl) == 0
    assert (tl / "timeline_tgt_0002.png").exists()


def test_sweep_selects_by_sum_meteor(tmp_path, pipeline, capsys):
    assert run("sweep-adv", "--config", pipeline / "tiny.toml", "--values", "0.01,0.1,1", "--epochs", 1,
               "--corpus", pipeline / "corpus", "--out", tmp_path) == 0
    rows = (tmp_path / "sweep.tsv").read_text().splitlines()
    header, body = rows[0].split("\t"), [r.split("\t") for r in rows[1:]]
    assert [float(r[0]) for r in body] == [0.01, 0.1, 1.0]
    scores = [float(r[header.index("sum_METEOR")]) for r in body]
    marked = [i for i, r in enumerate(body) if r[-1] == "*"]
    assert marked == [scores.index(max(scores))]
    code, text = replay(tmp_path, capsys)
    assert code == 0 and "bit-identical" in text


# --- preprocessing subcommands ---------------------------------------------------

def test_preprocessing_subcommands(tmp_path, capsys):
    dets = [Detection(f, "face", (10, 10, 30, 30)) for f in (0, 1, 3, 4)]
    dets += [Detection(f, "hand", (40, 40, 50, 50)) for f in range(5)]
    save_detections(tmp_path / "dets.jsonl", dets)
    assert run("label-views", "--detections", tmp_path / "dets.jsonl", "--window", 3, "--out", tmp_path / "lv") == 0
    assert json.loads((tmp_path / "lv" / "views.json").read_text()) == [0] * 5

    assert run("track-crop", "--detections", tmp_path / "dets.jsonl", "--frame-size", 100, 100,
               "--margin", 0, "--out", tmp_path / "tc") == 0
    crops = json.loads((tmp_path / "tc" / "crops.json").read_text())["crops"]
    assert crops == [[40, 40, 50, 50]] * 5

    m = np.zeros((6, 6), bool)
    m[:2, :2] = True
    p = np.zeros((6, 6), bool)
    p[:3, :3] = True
    save_mask_file(tmp_path / "masks.json", [{"hands": m, "proposal_0": p}] * 5, (6, 6))
    assert run("refine-masks", "--masks", tmp_path / "masks.json", "--out", tmp_path / "rm") == 0

    np.save(tmp_path / "clip.npy", np.random.default_rng(0).random((5, 6, 6)))
    big = np.zeros((6, 6), bool)
    big[1:5, 1:5] = True
    save_mask_file(tmp_path / "m6.json", [{"hands": big, "obj1": big}] * 5, (6, 6))
    assert run("extract-features", "--frames", tmp_path / "clip.npy", "--mode", "VC+HO", "--dim", 4,
               "--masks", tmp_path / "m6.json", "--out", tmp_path / "fx") == 0
    meta = json.loads((tmp_path / "fx" / "clip.json").read_text())
    assert (meta["T"], meta["d"]) == (5, 16)

    (tmp_path / "markers.json").write_text(json.dumps([False, True, False, False, True, True, False]))
    assert run("segment-markers", "--markers", tmp_path / "markers.json", "--fps", 1, "--debounce", 2,
               "--out", tmp_path / "sm") == 0
    assert json.loads((tmp_path / "sm" / "segments.json").read_text())["segments"] == [[6.0, 7.0]]

    for sub in ("lv", "tc", "rm", "fx", "sm"):
        code, text = replay(tmp_path / sub, capsys)
        assert code == 0 and "bit-identical" in text, sub


# --- errors and exit codes ----------------------------------------------------------

def test_missing_reference_is_a_validation_error(tmp_path, capsys):
    (tmp_path / "p.json").write_text("{}")
    code = run("evaluate", "--pred", tmp_path / "p.json", "--ref", tmp_path / "missing.json", "--out", tmp_path)
    assert code == 3
    assert "missing.json" in capsys.readouterr().err


def test_unknown_flag_is_a_usage_error(tmp_path):
    assert run("gen-synth", "--bogus", "--out", tmp_path) == 2
    assert run("no-such-command") == 2


def test_bad_config_section_is_a_validation_error(tmp_path):
    (tmp_path / "bad.toml").write_text("[nonsense]\nx = 1\n")
    assert run("gen-synth", "--config", tmp_path / "bad.toml", "--out", tmp_path) == 3


def test_degenerate_markers_exit_code(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps([True] * 4))
    assert run("segment-markers", "--markers", tmp_path / "m.json", "--fps", 1, "--debounce", 1,
               "--out", tmp_path) == 3


def test_replay_detects_changed_input(tmp_path, capsys):
    (tmp_path / "m.json").write_text(json.dumps([False, True, True, False, False]))
    assert run("segment-markers", "--markers", tmp_path / "m.json", "--fps", 1, "--debounce", 1,
               "--out", tmp_path / "o") == 0
    (tmp_path / "m.json").write_text(json.dumps([True, True, False, False, False]))
    code, _ = replay(tmp_path / "o", capsys)
    assert code == 3
