import itertools
import json

import numpy as np
import pytest

from epbcdet.detector import build_model, count_params_flops
from epbcdet.errors import ConfigError, InputError
from epbcdet.evalkit import DetectionBox, iou
from epbcdet.harness.ablate import TABLE_ORDER, AblationError, ablate
from epbcdet.harness.config import RunConfig, load_config
from epbcdet.harness.data import (dataset_checksum, load_dataset, parse_label_file, synth_dataset,
                                  to_samples)
from epbcdet.harness.gradsuite import TOLERANCES, run_suite
from epbcdet.harness.images import PAD_VALUE, Affine, image_size, letterbox, read_ppm, write_ppm
from epbcdet.harness.report import render_run
from epbcdet.harness.runner import evaluate_run, run_training


def _tiny_run(tmp_path, name="r", epochs=1, **model):
    d = {"model": {"width": 8, "depths": [1, 1, 1, 1], "resolution": 32, "num_classes": 3,
                   "carafe": {"compressed": 4}, **model},
         "train": {"epochs": epochs, "batch_size": 4, "seed": 3},
         "synth": {"seed": 1, "n_train": 6, "n_val": 3, "resolution": 32, "classes": 3},
         "out_dir": str(tmp_path), "name": name}
    return RunConfig.from_dict(d)


# ----- images and letterbox ------------------------------------------------------------------------


def test_ppm_round_trip_and_errors(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    write_ppm(tmp_path / "a.ppm", img)
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), img)
    assert image_size(tmp_path / "a.ppm") == (7, 5)
    (tmp_path / "b.ppm").write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(InputError):
        read_ppm(tmp_path / "b.ppm")


def test_letterbox_square_is_identity():
    img = np.random.default_rng(1).integers(0, 256, (16, 16, 3), dtype=np.uint8)
    out, aff = letterbox(img, 16)
    assert aff == Affine(1.0, 0, 0)
    np.testing.assert_array_equal(out, img.transpose(2, 0, 1) / 255.0)


def test_letterbox_wide_image_pads_rows():
    img = np.zeros((640, 1280, 3), dtype=np.uint8)
    out, aff = letterbox(img, 640)
    assert aff == Affine(0.5, 0, 160)
    assert np.all(out[:, :160] == PAD_VALUE) and np.all(out[:, 480:] == PAD_VALUE)
    assert np.all(out[:, 160:480] == 0.0)


def test_letterbox_inverse_is_exact():
    rng = np.random.default_rng(2)
    for w, h, s in [(1280, 640, 640), (37, 91, 64), (100, 100, 96)]:
        _, aff = letterbox(np.zeros((h, w, 3), dtype=np.uint8), s)
        for _ in range(20):
            x1, y1 = rng.uniform(0, w / 2), rng.uniform(0, h / 2)
            b = DetectionBox.truth(0, x1, y1, x1 + rng.uniform(1, w / 2), y1 + rng.uniform(1, h / 2))
            back = aff.inverse(aff.forward(b))
            assert np.max(np.abs(np.subtract(back.corners, b.corners))) <= 1e-9


def test_letterbox_errors():
    with pytest.raises(InputError):
        letterbox(np.zeros((0, 4, 3)), 8)
    with pytest.raises(InputError):
        letterbox(np.zeros((4, 4, 3)), 1)


# ----- labels and datasets -------------------------------------------------------------------------


def test_label_conversion_and_diagnostics(tmp_path):
    f = tmp_path / "x.txt"
    f.write_text("0 0.5 0.5 0.25 0.25\n")
    (b,) = parse_label_file(f, 100, 100)
    assert b.class_id == 0 and b.corners == (37.5, 37.5, 62.5, 62.5)
    f.write_text("")
    assert parse_label_file(f, 100, 100) == []
    f.write_text("0 0.5 0.5 0.1 0.1\n1 1.2 0.5 0.1 0.1\n")
    with pytest.raises(InputError, match=r"x\.txt:2"):
        parse_label_file(f, 100, 100)
    f.write_text("0 0.5 0.5 0.1\n")
    with pytest.raises(InputError, match=r"x\.txt:1"):
        parse_label_file(f, 100, 100)


def test_load_dataset_keeps_unlabelled_images(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "labels").mkdir()
    write_ppm(tmp_path / "images" / "a.ppm", np.zeros((100, 100, 3), dtype=np.uint8))
    write_ppm(tmp_path / "images" / "b.ppm", np.zeros((50, 80, 3), dtype=np.uint8))
    (tmp_path / "labels" / "a.txt").write_text("2 0.5 0.5 0.25 0.25\n")
    m = load_dataset(tmp_path)
    assert [it.image_id for it in m.items] == ["a", "b"]
    assert m.items[1].boxes == [] and m.items[1].label_path is None
    assert (m.items[1].width, m.items[1].height) == (80, 50)
    with pytest.raises(InputError):
        load_dataset(tmp_path / "nope")


def test_synth_is_deterministic_and_valid(tmp_path):
    a = synth_dataset(tmp_path / "a", seed=7, n=12, resolution=64, classes=5)
    synth_dataset(tmp_path / "b", seed=7, n=12, resolution=64, classes=5)
    assert dataset_checksum(tmp_path / "a") == dataset_checksum(tmp_path / "b")
    reloaded = load_dataset(tmp_path / "a")
    assert reloaded.class_names == a.class_names
    for orig, it in zip(a.items, reloaded.items):
        assert 1 <= len(it.boxes) <= 4
        np.testing.assert_allclose([b.corners for b in it.boxes], [b.corners for b in orig.boxes], atol=1e-9)
        for p, q in itertools.combinations(it.boxes, 2):
            assert iou(p, q) <= 0.3
    assert len(synth_dataset(tmp_path / "e", seed=0, n=0)) == 0


def test_synth_errors_and_samples(tmp_path):
    with pytest.raises(ConfigError):
        synth_dataset(tmp_path, seed=0, n=1, classes=6)
    with pytest.raises(ConfigError):
        # blobs this large cannot be placed four at a time without overlap
        for s in range(50):
            synth_dataset(tmp_path / "big", seed=s, n=4, resolution=32, min_size=30, max_size=32)
    samples, affs = to_samples(synth_dataset(tmp_path / "s", seed=1, n=2, resolution=48), 32)
    assert samples[0].image.shape == (3, 32, 32)
    assert affs[0].scale == pytest.approx(32 / 48)
    assert all(b.x2 <= 32 and b.y2 <= 32 for s in samples for b in s.boxes)


# ----- configuration -------------------------------------------------------------------------------


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"train": {"epochs": 3}, "name": "x"}))
    cfg = load_config(p, ["train.lr=0.05", "model.use_wfpn=true", "name=y"])
    assert cfg.train.epochs == 3 and cfg.train.lr == 0.05 and cfg.model.use_wfpn and cfg.name == "y"
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    for bad in (["train.epoch=3"], ["train"], ["seed.x=1"]):
        with pytest.raises(ConfigError):
            load_config(p, bad)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"modle": {}})
    with pytest.raises(InputError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_shipped_configs_parse():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    desk = load_config(root / "desk.json")
    assert desk.train.epochs == 50 and desk.model.use_carafe and desk.train.lr == 0.01
    abl = load_config(root / "ablation.json")
    assert not any([abl.model.use_c2f_ema, abl.model.use_fasterpw, abl.model.use_wfpn, abl.model.use_carafe])


# ----- runs, reports, sweep ------------------------------------------------------------------------


def test_run_bundle_and_checkpoint_round_trip(tmp_path):
    out = run_training(_tiny_run(tmp_path))
    for f in ("config.json", "checkpoint.bin", "history.csv", "metrics.csv", "pr_curve.csv",
              "pr_curve.svg", "confusion.svg", "cost.json"):
        assert (out.run_dir / f).exists(), f
    again = RunConfig.from_dict(json.loads((out.run_dir / "config.json").read_text()))
    assert again == out.config
    report, names = evaluate_run(out.run_dir)
    assert names == ["disc", "square", "triangle"]
    assert report.map50 == out.report.map50 and report.map5095 == out.report.map5095
    (out.run_dir / "pr_curve.svg").unlink()
    assert out.run_dir / "pr_curve.svg" in render_run(out.run_dir)
    assert (out.run_dir / "pr_curve.svg").read_text().startswith("<svg")


def test_zero_epoch_run_and_bad_inputs(tmp_path):
    out = run_training(_tiny_run(tmp_path, epochs=0))
    assert (out.run_dir / "checkpoint.bin").exists()
    with pytest.raises(InputError):
        evaluate_run(tmp_path / "absent")
    bad = RunConfig.from_dict({**_tiny_run(tmp_path).to_dict(), "data": str(tmp_path / "nowhere")})
    with pytest.raises(InputError):
        run_training(bad, tmp_path / "bad")
    few = RunConfig.from_dict({**_tiny_run(tmp_path).to_dict(), "synth": {"classes": 5, "n_train": 4,
                                                                          "n_val": 2, "resolution": 32}})
    with pytest.raises(ConfigError):
        run_training(few, tmp_path / "few")


@pytest.mark.slow
def test_ablation_sweep_small(tmp_path):
    base = _tiny_run(tmp_path, name="abl")
    table = ablate(base, epochs=1, out_dir=tmp_path / "sweep", extra_rows=False)
    assert len(table.rows) == 16
    assert [r.switches for r in table.rows] == list(TABLE_ORDER)
    for r in table.rows:
        cost = count_params_flops(build_model(base.model.with_switches(*r.switches)))
        assert (r.params, r.flops) == (cost.params, cost.flops)
    md = (tmp_path / "sweep" / "ablation.md").read_text().splitlines()
    assert md[0].startswith("| C2f_EMA | FasterPW | WFPN | CARAFE | mAP@0.5 (%)")
    assert len([ln for ln in md[2:] if ln.startswith("|")]) == 16
    # the baseline row equals a standalone baseline run on the same data
    solo = run_training(RunConfig.from_dict({**base.to_dict(), "data": str(tmp_path / "sweep" / "data")}),
                        tmp_path / "solo")
    assert table.rows[0].map50 == solo.report.map50
    assert (tmp_path / "solo" / "history.csv").read_bytes() == \
           (tmp_path / "sweep" / "runs" / "00_baseline" / "history.csv").read_bytes()


def test_ablation_names_the_failing_combination(tmp_path):
    base = RunConfig.from_dict({**_tiny_run(tmp_path).to_dict(), "data": str(tmp_path / "void")})
    with pytest.raises(AblationError, match="baseline"):
        ablate(base, epochs=1, out_dir=tmp_path / "sweep", extra_rows=False)


def test_gradient_suite_primitives_pass():
    entries = run_suite(tiers=("primitive",))
    assert entries and all(e.tier == "primitive" for e in entries)
    assert max(e.max_rel_error for e in entries) < TOLERANCES["primitive"]
