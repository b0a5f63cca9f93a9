import csv
import json

import numpy as np
import pytest

from wavehead import harness
from wavehead.data import FeatureDataset, desk_config, generate_synthetic, write_features
from wavehead.errors import ValidationError
from wavehead.harness import ExperimentConfig
from wavehead.heads import HeadDims, HeadVariant
from wavehead.metrics import RELIABILITY_HEADER
from wavehead.training import TrainSchedule, train

QUICK = TrainSchedule(total_epochs=3, warmup_epochs=1, ramp_epochs=1, learning_rate=0.01)


def quick(**kw):
    base = dict(variants=["NoBorn", "Softmax"], seeds=[1, 2], n_train=400, n_test=200, d=8, h=16,
                schedule=QUICK)
    base.update(kw)
    return ExperimentConfig(**base)


def test_default_config():
    cfg = ExperimentConfig()
    assert cfg.variants == ["FullWave", "NoBorn", "NoUnitary", "ComplexLinear", "Softmax", "Softmax2x"]
    assert cfg.seeds == [42, 123, 456]
    assert cfg.n_bins == 15


def test_config_validation(tmp_path):
    with pytest.raises(ValidationError):
        ExperimentConfig(variants=[])
    with pytest.raises(ValidationError):
        ExperimentConfig(seeds=[])
    with pytest.raises(ValidationError):
        ExperimentConfig(variants=["Evidential"])
    with pytest.raises(ValidationError):
        ExperimentConfig(train_path="a.fcal")
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict({"variantz": ["NoBorn"]})
    with pytest.raises(ValidationError):
        ExperimentConfig(variants=["TempScaling"], calibration_fraction=0.0)
    doc = quick().to_dict()
    assert ExperimentConfig.from_dict(doc).to_dict() == doc
    path = tmp_path / "c.json"
    path.write_text("{")
    with pytest.raises(ValidationError):
        harness.load_config(path)


def test_single_cell_report():
    rep = harness.run_ablation(quick(variants=["Softmax"], seeds=[7]))
    assert len(rep.records) == 1
    agg = rep.aggregates["Softmax"]
    assert agg["accuracy"]["std"] == 0.0 and agg["n_ok"] == 1


def test_ablation_aggregates_recompute():
    rep = harness.run_ablation(quick(variants=["NoBorn", "Softmax", "TempScaling", "MCDropout"]))
    assert len(rep.records) == 8
    for v, agg in rep.aggregates.items():
        recs = [r for r in rep.records if r.variant == v]
        for m in ("accuracy", "ece", "nll", "brier", "kl_to_soft"):
            vals = [r.metrics[m] for r in recs]
            assert abs(agg[m]["mean"] - sum(vals) / len(vals)) < 1e-12
            mean = sum(vals) / len(vals)
            assert abs(agg[m]["std"] - (sum((x - mean) ** 2 for x in vals) / len(vals)) ** 0.5) < 1e-12
    assert {r.train_checksum for r in rep.records} == {rep.metadata["train_checksum"]}
    assert all(r.temperature is not None for r in rep.records if r.variant == "TempScaling")
    assert rep.metadata["bayes_accuracy_population"] == pytest.approx(0.91)


def test_cell_matches_direct_training():
    cfg = quick(variants=["NoBorn"], seeds=[3], calibration_fraction=0.0)
    rep = harness.run_ablation(cfg)
    train_ds, test_ds = harness.load_data(cfg)
    res = train(HeadVariant.NO_BORN, train_ds, QUICK, 3, dims=HeadDims(n=64, d=8, C=10, h=16))
    p = harness.predict(res.params, test_ds.features, 3)
    assert rep.records[0].metrics["accuracy"] == np.mean(p.probs.argmax(1) == test_ds.labels)
    assert rep.records[0].loss_history == res.loss_history


def test_failure_isolated(monkeypatch):
    real = harness.train

    def flaky(variant, *a, **kw):
        if variant is HeadVariant.SOFTMAX:
            from wavehead.errors import NumericalError
            raise NumericalError("diverged")
        return real(variant, *a, **kw)

    monkeypatch.setattr(harness, "train", flaky)
    rep = harness.run_ablation(quick())
    failed = [r for r in rep.records if r.status == "failed"]
    assert len(failed) == 2 and all("diverged" in r.error for r in failed)
    assert rep.aggregates["Softmax"]["n_failed"] == 2
    assert rep.aggregates["NoBorn"]["n_ok"] == 2


def test_parallel_equals_serial():
    a = harness.run_ablation(quick(workers=1))
    b = harness.run_ablation(quick(workers=2))
    assert json.dumps(a.without_timing(), sort_keys=True) == json.dumps(b.without_timing(), sort_keys=True)


def test_file_backed_data(tmp_path):
    tr = generate_synthetic(desk_config(), 0, 300, label="train")
    te = generate_synthetic(desk_config(), 0, 100, label="test")
    write_features(tr, tmp_path / "tr.fcal")
    write_features(te, tmp_path / "te.fcal")
    cfg = quick(train_path=str(tmp_path / "tr.fcal"), test_path=str(tmp_path / "te.fcal"), seeds=[1])
    rep = harness.run_ablation(cfg)
    assert rep.metadata["n_train"] == 300 and all(r.status == "ok" for r in rep.records)


def test_emit_and_reload(tmp_path):
    rep = harness.run_ablation(quick(ood=[{"name": "shift", "mode": "mean_shift"}]))
    files = harness.emit_report(rep, tmp_path)
    back = harness.load_report(tmp_path / "report.json")
    assert back.to_dict() == json.loads(json.dumps(rep.to_dict()))
    with open(tmp_path / "table.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == harness.TABLE_HEADER and len(rows) == 3
    with open(tmp_path / "per_seed.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == harness.PER_SEED_HEADER and len(rows) == 5
    rel = [f for f in files if "reliability" in str(f)]
    assert len(rel) == 4
    for f in rel:
        with open(f) as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == RELIABILITY_HEADER and len(rows) == 16
    with open(tmp_path / "ood.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == harness.OOD_HEADER and len(rows) == 1 + 4 * 2


def test_emit_unwritable(tmp_path):
    rep = harness.run_ablation(quick(variants=["Softmax"], seeds=[1]))
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        harness.emit_report(rep, blocker / "sub")


def test_report_schema_checked(tmp_path):
    path = tmp_path / "r.json"
    path.write_text(json.dumps({"schema": "other"}))
    from wavehead.errors import FormatError
    with pytest.raises(FormatError):
        harness.load_report(path)


def trained_head(seed=0):
    cfg = quick(variants=["NoBorn"], seeds=[seed])
    train_ds, test_ds = harness.load_data(cfg)
    res = train(HeadVariant.NO_BORN, train_ds, QUICK, seed, dims=HeadDims(n=64, d=8, C=10))
    return res.params, test_ds


def test_run_ood():
    params, test_ds = trained_head()
    out = harness.run_ood(params, test_ds, {"self": test_ds})
    for row in out["results"]:
        assert row["auroc"] == 0.5
    assert set(out["score_orientation"]) == {"msp", "energy"}
    with pytest.raises(ValidationError):
        harness.run_ood(params, test_ds, {})
    with pytest.raises(ValidationError):
        harness.score_batch(harness.predict(params, test_ds.features, 0), "entropy")


def test_energy_unavailable_for_born_heads():
    cfg = quick(variants=["FullWave"], seeds=[1])
    train_ds, test_ds = harness.load_data(cfg)
    res = train(HeadVariant.FULL_WAVE, train_ds, QUICK, 1, dims=HeadDims(n=64, d=8, C=10))
    out = harness.run_ood(res.params, test_ds, {"self": test_ds})
    energy = [r for r in out["results"] if r["score"] == "energy"]
    assert energy[0]["auroc"] is None


def test_sweep_small_grid(tmp_path):
    cfg = quick(sweep_d=[4, 8], sweep_warmup=[0, 1], seeds=[1, 2])
    rep = harness.run_sweep(cfg)
    assert len(rep.sweep) == 4
    for cell in rep.sweep:
        assert cell["ece_mean"] == sum(cell["ece_per_seed"]) / 2
    harness.emit_report(rep, tmp_path)
    with open(tmp_path / "sweep_table.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["warmup_epochs", "d=4", "d=8"] and len(rows) == 3


def test_sweep_single_cell_and_validation():
    rep = harness.run_sweep(quick(sweep_d=[8], sweep_warmup=[1], seeds=[1]))
    assert len(rep.sweep) == 1
    with pytest.raises(ValidationError):
        harness.run_sweep(quick(sweep_d=[0], sweep_warmup=[1]))
    with pytest.raises(ValidationError):
        harness.run_sweep(quick(sweep_d=[8], sweep_warmup=[3]))


def test_ood_dimension_mismatch(tmp_path):
    bad = FeatureDataset(np.zeros((5, 3)), np.zeros(5, dtype=int), 10)
    write_features(bad, tmp_path / "bad.fcal")
    with pytest.raises(ValidationError):
        harness.run_ablation(quick(ood=[{"name": "bad", "path": str(tmp_path / "bad.fcal")}]))
