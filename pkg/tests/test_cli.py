"""Command-line interface tests: strict config parsing, the five
subcommands end to end on a small synthetic corpus, every exit-code class,
and the external-mask comparison path."""
import json
import os

import numpy as np
import pytest
from PIL import Image

from crackseg import imageio
from tests.conftest import run_cli, write_json, write_mask_png


def base_config(corpus, out, **train_over):
    train = {"max_epochs": 2, "batch_size": 2, "learning_rate": 1e-3,
             "constant_eta": True, "patience": 20, "seed": 0}
    train.update(train_over)
    return {
        "model": {"input_size": 32, "base_filters": 2, "depth": 2,
                  "dropout_rate": 0.0},
        "train": train,
        "data": {"images": corpus["images"], "masks": corpus["masks"]},
        "out": str(out),
    }


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus32):
    """One trained run shared by the infer/eval/compare tests."""
    root = tmp_path_factory.mktemp("trained")
    cfg = write_json(root / "run.json", base_config(corpus32, root / "run"))
    code, out, err = run_cli("train", "--config", cfg)
    assert code == 0, err
    return {"out": root / "run", "model": root / "run" / "model.cseg",
            "state": root / "run" / "state.cseg"}


# ---------------------------------------------------------------------------
# train


def test_train_writes_artifacts_and_reports(trained):
    for name in ("model.cseg", "state.cseg", "trainlog.csv", "summary.json"):
        assert (trained["out"] / name).exists(), name


def test_train_stdout_mentions_outcome(tmp_path, corpus32):
    cfg = write_json(tmp_path / "run.json",
                     base_config(corpus32, tmp_path / "out", max_epochs=1))
    code, out, _ = run_cli("train", "--config", cfg)
    assert code == 0
    assert "trained 1 epochs" in out and "best epoch" in out


def test_train_misspelled_key_exits_2_with_path(tmp_path, corpus32):
    raw = base_config(corpus32, tmp_path / "out")
    raw["train"]["leanring_rate"] = 1e-3
    del raw["train"]["learning_rate"]
    cfg = write_json(tmp_path / "run.json", raw)
    code, _, err = run_cli("train", "--config", cfg)
    assert code == 2
    assert "unknown config key: train.leanring_rate" in err


def test_train_unknown_top_level_key_exits_2(tmp_path, corpus32):
    raw = base_config(corpus32, tmp_path / "out")
    raw["outputs"] = "somewhere"
    cfg = write_json(tmp_path / "run.json", raw)
    code, _, err = run_cli("train", "--config", cfg)
    assert code == 2 and "unknown config key: outputs" in err


def test_train_unknown_model_key_exits_2(tmp_path, corpus32):
    raw = base_config(corpus32, tmp_path / "out")
    raw["model"]["n_filters"] = 64
    cfg = write_json(tmp_path / "run.json", raw)
    code, _, err = run_cli("train", "--config", cfg)
    assert code == 2 and "unknown config key: model.n_filters" in err


def test_train_invalid_json_exits_2(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text("{not json")
    code, _, err = run_cli("train", "--config", cfg)
    assert code == 2 and "not valid JSON" in err


def test_train_missing_data_section_exits_2(tmp_path, corpus32):
    raw = base_config(corpus32, tmp_path / "out")
    del raw["data"]
    cfg = write_json(tmp_path / "run.json", raw)
    code, _, err = run_cli("train", "--config", cfg)
    assert code == 2 and "data" in err


def test_train_no_out_anywhere_exits_2(tmp_path, corpus32):
    raw = base_config(corpus32, tmp_path / "out")
    del raw["out"]
    cfg = write_json(tmp_path / "run.json", raw)
    code, _, err = run_cli("train", "--config", cfg)
    assert code == 2 and "output directory" in err


def test_train_missing_mask_dir_exits_3(tmp_path, corpus32):
    raw = base_config(corpus32, tmp_path / "out")
    raw["data"]["masks"] = str(tmp_path / "no_such_dir")
    cfg = write_json(tmp_path / "run.json", raw)
    code, _, err = run_cli("train", "--config", cfg)
    assert code == 3 and "no_such_dir" in err


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_train_divergence_exits_4(tmp_path, corpus32):
    cfg = write_json(tmp_path / "run.json",
                     base_config(corpus32, tmp_path / "out",
                                 max_epochs=1, learning_rate=1e20))
    code, _, err = run_cli("train", "--config", cfg)
    assert code == 4
    assert "error:" in err


def test_train_resume_flag_continues(tmp_path, corpus32, trained):
    cfg = write_json(tmp_path / "run.json",
                     base_config(corpus32, tmp_path / "resumed", max_epochs=3))
    code, out, err = run_cli("train", "--config", cfg,
                             "--resume", trained["state"])
    assert code == 0, err
    summary = json.loads((tmp_path / "resumed" / "summary.json").read_text())
    assert summary["epochs_run"] == 1  # epochs 1-2 came from the checkpoint


def test_train_resume_with_corrupt_checkpoint_exits_5(tmp_path, corpus32, trained):
    bad = tmp_path / "state.cseg"
    raw = bytearray((trained["state"]).read_bytes())
    raw[:4] = b"XXXX"
    bad.write_bytes(raw)
    cfg = write_json(tmp_path / "run.json",
                     base_config(corpus32, tmp_path / "out", max_epochs=3))
    code, _, err = run_cli("train", "--config", cfg, "--resume", bad)
    assert code == 5 and "magic" in err


# ---------------------------------------------------------------------------
# infer


def test_infer_writes_one_mask_per_image(tmp_path, corpus32, trained):
    out = tmp_path / "pred"
    code, stdout, err = run_cli("infer", "--model", trained["model"],
                                "--input", corpus32["images"], "--out", out)
    assert code == 0, err
    names = sorted(os.listdir(out))
    assert names == [f"img{i:02d}.png" for i in range(corpus32["n"])]
    for name in names:
        m = imageio.read_mask(out / name)
        assert m.shape == (32, 32)
        assert set(np.unique(m)) <= {0, 1, 2}
    assert f"wrote masks for {corpus32['n']} images" in stdout


def test_infer_rerun_is_bitwise_identical(tmp_path, corpus32, trained):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        code, _, err = run_cli("infer", "--model", trained["model"],
                               "--input", corpus32["images"], "--out", out)
        assert code == 0, err
    for name in os.listdir(a):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_infer_prob_maps_are_normalized(tmp_path, corpus32, trained):
    out = tmp_path / "pred"
    code, _, err = run_cli("infer", "--model", trained["model"],
                           "--input", corpus32["images"], "--out", out,
                           "--prob-maps")
    assert code == 0, err
    probs = np.stack([imageio.read_pfm(out / f"img00.prob{c}.pfm")
                      for c in range(3)], axis=-1)
    assert probs.min() >= 0.0 and probs.max() <= 1.0
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-5)


def test_infer_crackmap_outputs_bounded(tmp_path, corpus32, trained):
    out = tmp_path / "pred"
    code, _, err = run_cli("infer", "--model", trained["model"],
                           "--input", corpus32["images"], "--out", out,
                           "--crackmap-n", 2)
    assert code == 0, err
    cm = imageio.read_pfm(out / "img00.crackmap.pfm")
    assert cm.shape == (32, 32)
    assert cm.min() >= 0.0 and cm.max() <= 1.0
    assert (out / "img00.crackmap.png").exists()


def test_infer_missing_model_exits_5(tmp_path, corpus32):
    code, _, err = run_cli("infer", "--model", tmp_path / "none.cseg",
                           "--input", corpus32["images"], "--out", tmp_path / "o")
    assert code == 5 and "checkpoint not found" in err


def test_infer_empty_input_dir_exits_3(tmp_path, trained):
    empty = tmp_path / "empty"
    empty.mkdir()
    code, _, err = run_cli("infer", "--model", trained["model"],
                           "--input", empty, "--out", tmp_path / "o")
    assert code == 3 and "no images found" in err


# ---------------------------------------------------------------------------
# eval


@pytest.fixture(scope="module")
def predictions(tmp_path_factory, corpus32, trained):
    out = tmp_path_factory.mktemp("preds")
    code, _, err = run_cli("infer", "--model", trained["model"],
                           "--input", corpus32["images"], "--out", out)
    assert code == 0, err
    return out


def test_eval_end_to_end_report_and_roc(tmp_path, corpus32, predictions):
    report_path = tmp_path / "report.json"
    roc_path = tmp_path / "roc.csv"
    code, stdout, err = run_cli("eval", "--pred", predictions,
                                "--truth", corpus32["masks"],
                                "--report", report_path, "--roc", roc_path)
    assert code == 0, err
    report = json.loads(report_path.read_text())
    assert len(report["per_image"]) == corpus32["n"]
    for entry in report["per_image"]:
        assert set(entry) == {"id", "auc", "accuracy", "dice", "confusion"}
        assert 0.0 <= entry["accuracy"] <= 1.0
    assert "aggregate" in report
    lines = roc_path.read_text().splitlines()
    assert lines[0] == "threshold,fpr,tpr"
    assert len(lines) > 2
    assert "aggregate accuracy" in stdout


def test_eval_with_external_score_maps(tmp_path, corpus32, predictions):
    scores = tmp_path / "scores"
    scores.mkdir()
    for name in os.listdir(predictions):
        stem = os.path.splitext(name)[0]
        pred = imageio.read_mask(predictions / name)
        imageio.write_pfm(scores / f"{stem}.pfm", (pred == 1).astype(np.float64))
    code, _, err = run_cli("eval", "--pred", predictions,
                           "--truth", corpus32["masks"],
                           "--report", tmp_path / "r.json", "--scores", scores)
    assert code == 0, err


def test_eval_missing_score_map_exits_3(tmp_path, corpus32, predictions):
    scores = tmp_path / "scores"
    scores.mkdir()  # deliberately empty
    code, _, err = run_cli("eval", "--pred", predictions,
                           "--truth", corpus32["masks"],
                           "--report", tmp_path / "r.json", "--scores", scores)
    assert code == 3 and "no score map" in err


def test_eval_empty_truth_dir_exits_3(tmp_path, predictions):
    empty = tmp_path / "empty"
    empty.mkdir()
    code, _, err = run_cli("eval", "--pred", predictions, "--truth", empty,
                           "--report", tmp_path / "r.json")
    assert code == 3 and "no images found in truth directory" in err


def test_eval_missing_prediction_exits_3(tmp_path, corpus32):
    empty = tmp_path / "no_preds"
    empty.mkdir()
    code, _, err = run_cli("eval", "--pred", empty, "--truth", corpus32["masks"],
                           "--report", tmp_path / "r.json")
    assert code == 3 and "no prediction for" in err


def test_eval_invalid_mask_value_exits_3_citing_pixel(tmp_path, predictions):
    truth = tmp_path / "truth"
    truth.mkdir()
    bad = np.zeros((32, 32), dtype=np.uint8)
    bad[5, 9] = 7
    for name in os.listdir(predictions):
        write_mask_png(truth / name, bad)
    code, _, err = run_cli("eval", "--pred", predictions, "--truth", truth,
                           "--report", tmp_path / "r.json")
    assert code == 3  # out-of-range class values are an ingest failure
    assert "value 7" in err and "row 5, col 9" in err


# ---------------------------------------------------------------------------
# weights


def test_weights_invmax_hand_example(tmp_path):
    masks = tmp_path / "masks"
    masks.mkdir()
    write_mask_png(masks / "m.png", np.array([[0, 1, 1, 2, 2, 2, 2]], np.uint8))
    out_path = tmp_path / "w.json"
    code, stdout, err = run_cli("weights", "--masks", masks,
                                "--scheme", "invmax", "--out", out_path)
    assert code == 0, err
    payload = json.loads(out_path.read_text())
    assert payload["classes"] == ["background", "crack", "delamination"]
    np.testing.assert_allclose(payload["alpha"], [4.0, 2.0, 1.0], rtol=1e-12)
    assert json.loads(stdout) == payload  # stdout carries the same JSON


def test_weights_median_hand_example(tmp_path):
    masks = tmp_path / "masks"
    masks.mkdir()
    write_mask_png(masks / "m.png", np.array([[0, 1, 1, 2, 2, 2, 2]], np.uint8))
    code, stdout, _ = run_cli("weights", "--masks", masks, "--scheme", "median")
    assert code == 0
    # frequencies 1/7, 2/7, 4/7; median 2/7 -> alpha (2, 1, 0.5)
    np.testing.assert_allclose(json.loads(stdout)["alpha"], [2.0, 1.0, 0.5],
                               rtol=1e-12)


def test_weights_single_class_corpus_names_both_absent_classes(tmp_path):
    masks = tmp_path / "masks"
    masks.mkdir()
    write_mask_png(masks / "m.png", np.zeros((8, 8), np.uint8))
    code, _, err = run_cli("weights", "--masks", masks, "--scheme", "median")
    assert code == 2
    assert "crack" in err and "delamination" in err


def test_weights_missing_dir_exits_3(tmp_path):
    code, _, err = run_cli("weights", "--masks", tmp_path / "nope")
    assert code == 3 and "mask directory not found" in err


def test_weights_empty_dir_exits_3(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    code, _, err = run_cli("weights", "--masks", empty)
    assert code == 3 and "no mask PNGs" in err


# ---------------------------------------------------------------------------
# compare


def binary_png(path, binary):
    """External-tool convention: single-class masks are 0/255 PNGs."""
    write_mask_png(path, np.where(binary, 255, 0).astype(np.uint8))


@pytest.fixture()
def compare_setup(tmp_path, corpus32):
    """Truth + a deliberately wrong engine prediction + an exact external set.

    The external manifest reconstructs the truth from two binary masks per
    image (a crack-candidate and a delamination layer); the engine masks
    swap crack and delamination everywhere, so the external source should
    win every metric.
    """
    truth_dir = corpus32["masks"]
    engine = tmp_path / "engine"
    ext = tmp_path / "external"
    engine.mkdir()
    ext.mkdir()
    entries = []
    for name in sorted(os.listdir(truth_dir)):
        stem = os.path.splitext(name)[0]
        truth = imageio.read_mask(os.path.join(truth_dir, name))
        swapped = truth.copy()
        swapped[truth == 1] = 2
        swapped[truth == 2] = 1
        write_mask_png(engine / name, swapped)
        binary_png(ext / f"{stem}.crack.png", truth == 1)
        binary_png(ext / f"{stem}.delam.png", truth == 2)
        entries.append({
            "id": stem,
            "masks": [
                {"path": f"{stem}.crack.png", "score": 0.9,
                 "class_hint": "crack-candidate"},
                {"path": f"{stem}.delam.png", "score": 0.8,
                 "class_hint": "delamination"},
            ],
        })
    manifest = write_json(ext / "manifest.json",
                          {"source": "external-masks-v1", "images": entries,
                           "errors": []})
    return {"truth": truth_dir, "engine": engine, "manifest": manifest,
            "ext": ext}


def test_compare_external_exact_beats_swapped_engine(tmp_path, compare_setup):
    report_path = tmp_path / "cmp.json"
    code, stdout, err = run_cli("compare", "--engine-pred", compare_setup["engine"],
                                "--external", compare_setup["manifest"],
                                "--truth", compare_setup["truth"],
                                "--report", report_path, "--select", "union")
    assert code == 0, err
    report = json.loads(report_path.read_text())
    assert report["source"] == "external-masks-v1"
    assert report["select"] == "union"
    assert report["external"]["aggregate"]["accuracy"] == 1.0
    assert report["external"]["aggregate"]["dice"]["crack"] == 1.0
    deltas = report["deltas"]["aggregate"]
    assert deltas["accuracy"] > 0
    assert deltas["dice_crack"] > 0
    assert len(report["deltas"]["per_image"]) == len(report["engine"]["per_image"])
    assert "external" in stdout


def test_compare_identical_sets_have_zero_deltas(tmp_path, corpus32):
    truth_dir = corpus32["masks"]
    engine = tmp_path / "engine"
    ext = tmp_path / "ext"
    engine.mkdir()
    ext.mkdir()
    entries = []
    for name in sorted(os.listdir(truth_dir)):
        stem = os.path.splitext(name)[0]
        truth = imageio.read_mask(os.path.join(truth_dir, name))
        crack_only = (truth == 1).astype(np.uint8)  # both sides: crack-vs-rest
        write_mask_png(engine / name, crack_only)
        binary_png(ext / f"{stem}.png", truth == 1)
        entries.append({"id": stem,
                        "masks": [{"path": f"{stem}.png", "score": 0.5,
                                   "class_hint": "crack-candidate"}]})
    manifest = write_json(ext / "manifest.json",
                          {"source": "mirror", "images": entries})
    report_path = tmp_path / "cmp.json"
    code, _, err = run_cli("compare", "--engine-pred", engine,
                           "--external", manifest, "--truth", truth_dir,
                           "--report", report_path)
    assert code == 0, err
    deltas = json.loads(report_path.read_text())["deltas"]
    assert deltas["aggregate"]["accuracy"] == 0.0
    assert deltas["aggregate"]["dice_crack"] == 0.0
    for entry in deltas["per_image"]:
        assert entry["accuracy"] == 0.0


def test_compare_select_best_takes_highest_score(tmp_path, corpus32):
    truth_dir = corpus32["masks"]
    name = sorted(os.listdir(truth_dir))[0]
    stem = os.path.splitext(name)[0]
    truth = imageio.read_mask(os.path.join(truth_dir, name))

    truth_one = tmp_path / "truth"
    engine = tmp_path / "engine"
    ext = tmp_path / "ext"
    for d in (truth_one, engine, ext):
        d.mkdir()
    write_mask_png(truth_one / name, truth)
    write_mask_png(engine / name, (truth == 1).astype(np.uint8))
    binary_png(ext / "good.png", truth == 1)
    binary_png(ext / "bad.png", truth == 0)  # anti-mask, lower score
    manifest = write_json(ext / "manifest.json", {
        "source": "scored", "images": [{
            "id": stem,
            "masks": [
                {"path": "bad.png", "score": 0.1, "class_hint": "crack-candidate"},
                {"path": "good.png", "score": 0.9, "class_hint": "crack-candidate"},
            ],
        }]})
    report_path = tmp_path / "cmp.json"
    code, _, err = run_cli("compare", "--engine-pred", engine,
                           "--external", manifest, "--truth", truth_one,
                           "--report", report_path, "--select", "best")
    assert code == 0, err
    report = json.loads(report_path.read_text())
    # best-select must have picked good.png, which matches the engine exactly
    assert report["deltas"]["aggregate"]["accuracy"] == 0.0


def test_compare_manifest_missing_mask_path_exits_3(tmp_path, compare_setup):
    manifest = json.loads(open(compare_setup["manifest"]).read())
    del manifest["images"][0]["masks"][0]["path"]
    bad = write_json(compare_setup["ext"] / "bad.json", manifest)
    code, _, err = run_cli("compare", "--engine-pred", compare_setup["engine"],
                           "--external", bad, "--truth", compare_setup["truth"],
                           "--report", tmp_path / "r.json")
    assert code == 3
    assert "images[0].masks[0].path" in err


def test_compare_manifest_unknown_field_exits_3(tmp_path, compare_setup):
    manifest = json.loads(open(compare_setup["manifest"]).read())
    manifest["images"][0]["label"] = "x"
    bad = write_json(compare_setup["ext"] / "bad.json", manifest)
    code, _, err = run_cli("compare", "--engine-pred", compare_setup["engine"],
                           "--external", bad, "--truth", compare_setup["truth"],
                           "--report", tmp_path / "r.json")
    assert code == 3 and "images[0].label" in err


def test_compare_manifest_bad_class_hint_exits_3(tmp_path, compare_setup):
    manifest = json.loads(open(compare_setup["manifest"]).read())
    manifest["images"][0]["masks"][0]["class_hint"] = "blob"
    bad = write_json(compare_setup["ext"] / "bad.json", manifest)
    code, _, err = run_cli("compare", "--engine-pred", compare_setup["engine"],
                           "--external", bad, "--truth", compare_setup["truth"],
                           "--report", tmp_path / "r.json")
    assert code == 3 and "class_hint" in err


def test_compare_manifest_missing_image_entry_exits_3(tmp_path, compare_setup):
    manifest = json.loads(open(compare_setup["manifest"]).read())
    manifest["images"] = manifest["images"][1:]
    bad = write_json(compare_setup["ext"] / "bad.json", manifest)
    code, _, err = run_cli("compare", "--engine-pred", compare_setup["engine"],
                           "--external", bad, "--truth", compare_setup["truth"],
                           "--report", tmp_path / "r.json")
    assert code == 3 and "no entry for image id" in err
