"""Experiment orchestration: ablations, OOD scoring, sensitivity sweeps, reports.

Every (variant, seed) cell trains on the same feature arrays; checksums of
those arrays are stored in the report and asserted equal across cells.
Failed cells are recorded, not raised.
"""

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from . import __version__
from . import rng as rng_mod
from .baselines import apply_temperature, energy_score, fit_temperature
from .data import (
    SyntheticConfig,
    bayes_accuracy,
    desk_config,
    generate_synthetic,
    read_features,
    read_features_csv,
    split,
)
from .errors import FormatError, ValidationError, WaveheadError
from .heads import ABLATION_VARIANTS, HeadDims, HeadVariant, forward
from .metrics import (
    DEFAULT_BINS,
    ReliabilityBins,
    auroc,
    calibration_report,
    fpr_at_95_tpr,
    msp_score,
    write_reliability_csv,
)
from .training import TrainSchedule, train

REPORT_SCHEMA = "wavehead-report/1"
TEMP_SCALING = "TempScaling"
METRICS = ("accuracy", "ece", "nll", "brier", "kl_to_soft")
SCORE_ORIENTATION = {
    "msp": "maximum softmax probability; higher = more in-distribution",
    "energy": "negated energy, logsumexp(logits); higher = more in-distribution",
}
SWEEP_DIMS = (16, 32, 64, 128)
SWEEP_WARMUPS = (0, 4, 8, 15)


# ---------------------------------------------------------------------------
# configuration


def _variant_tag(tag):
    if str(tag).lower() == TEMP_SCALING.lower():
        return TEMP_SCALING
    return HeadVariant.parse(tag).value


@dataclass
class ExperimentConfig:
    variants: list = field(default_factory=lambda: [v.value for v in ABLATION_VARIANTS])
    seeds: list = field(default_factory=lambda: [42, 123, 456])
    d: int = 64
    h: int = 128
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    synthetic: SyntheticConfig | None = None
    n_train: int = 20000
    n_test: int = 4000
    data_seed: int = 0
    train_path: str | None = None
    test_path: str | None = None
    calibration_fraction: float = 0.1
    n_bins: int = DEFAULT_BINS
    ood: list = field(default_factory=list)
    workers: int = 1
    sweep_d: list = field(default_factory=lambda: list(SWEEP_DIMS))
    sweep_warmup: list = field(default_factory=lambda: list(SWEEP_WARMUPS))

    def __post_init__(self):
        self.variants = [_variant_tag(v) for v in self.variants]
        if not self.variants:
            raise ValidationError("config needs at least one variant")
        if not self.seeds:
            raise ValidationError("config needs at least one seed")
        self.seeds = [int(s) for s in self.seeds]
        if self.train_path is None and self.synthetic is None:
            self.synthetic = desk_config()
        if (self.train_path is None) != (self.test_path is None):
            raise ValidationError("train_path and test_path must be given together")
        if not 0.0 <= self.calibration_fraction < 1.0:
            raise ValidationError("calibration_fraction must be in [0, 1)")
        if TEMP_SCALING in self.variants and self.calibration_fraction == 0.0:
            raise ValidationError("TempScaling needs a positive calibration_fraction")
        if self.n_bins < 1:
            raise ValidationError("n_bins must be positive")
        for src in self.ood:
            if "name" not in src or ("path" not in src and "mode" not in src):
                raise ValidationError(f"OOD source needs 'name' and 'path' or 'mode': {src}")

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "schedule" in doc:
            doc["schedule"] = TrainSchedule.from_dict(doc["schedule"])
        if doc.get("synthetic") is not None:
            doc["synthetic"] = SyntheticConfig.from_dict(doc["synthetic"])
        return cls(**doc)

    def to_dict(self):
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["schedule"] = self.schedule.to_dict()
        out["synthetic"] = None if self.synthetic is None else self.synthetic.to_dict()
        out.pop("workers")  # scheduling detail; never changes results
        return out


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: config is not valid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(doc)


def load_features(path):
    if str(path).lower().endswith(".csv"):
        return read_features_csv(path)
    return read_features(path)


def load_data(config):
    """``(train, test)`` shared by every cell of an experiment."""
    if config.train_path is not None:
        train_ds, test_ds = load_features(config.train_path), load_features(config.test_path)
        if train_ds.dim != test_ds.dim or train_ds.n_classes != test_ds.n_classes:
            raise ValidationError("train and test feature files disagree on dim or classes")
        return train_ds, test_ds
    syn = config.synthetic
    return (
        generate_synthetic(syn, config.data_seed, config.n_train, label="train"),
        generate_synthetic(syn, config.data_seed, config.n_test, label="test"),
    )


def load_ood_sources(config, test_ds):
    sources = {}
    for src in config.ood:
        if "path" in src:
            ds = load_features(src["path"])
        else:
            if config.synthetic is None:
                raise ValidationError(f"synthetic OOD source {src['name']!r} needs a synthetic config")
            syn = replace(config.synthetic, ood_mode=src["mode"], ood_shift=src.get("shift", config.synthetic.ood_shift))
            ds = generate_synthetic(syn, config.data_seed, src.get("n", len(test_ds)), label=f"ood:{src['name']}")
        if ds.dim != test_ds.dim:
            raise ValidationError(f"OOD source {src['name']!r} has dim {ds.dim}, expected {test_ds.dim}")
        sources[src["name"]] = ds
    return sources


# ---------------------------------------------------------------------------
# single runs


@dataclass
class RunRecord:
    variant: str
    seed: int
    status: str
    error: str | None = None
    metrics: dict | None = None
    n_params: int | None = None
    final_train_loss: float | None = None
    loss_history: list | None = None
    bins: ReliabilityBins | None = None
    temperature: float | None = None
    train_checksum: str = ""
    test_checksum: str = ""
    ood: list | None = None

    def to_dict(self):
        d = dict(self.__dict__)
        d["bins"] = None if self.bins is None else self.bins.to_dict()
        return d

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if doc.get("bins") is not None:
            doc["bins"] = ReliabilityBins.from_dict(doc["bins"])
        return cls(**doc)


def score_batch(pred, score):
    if score == "msp":
        return msp_score(pred)
    if score == "energy":
        if pred.logits is None:
            return None
        return -energy_score(pred.logits)
    raise ValidationError(f"unknown OOD score {score!r}; use msp or energy")


def predict(params, F, seed):
    """Evaluation forward; MC-Dropout draws from a stream tied to the run seed."""
    return forward(params, F, "eval", rng_mod.stream(seed, "mc-eval"))


def ood_rows(pred_id, preds_ood, scores=("msp", "energy")):
    rows = []
    for name, pred in preds_ood.items():
        for score in scores:
            a, b = score_batch(pred_id, score), score_batch(pred, score)
            if a is None:
                rows.append({"source": name, "score": score, "auroc": None, "fpr95": None})
                continue
            rows.append({"source": name, "score": score, "auroc": auroc(a, b), "fpr95": fpr_at_95_tpr(a, b)})
    return rows


def run_cell(variant, seed, train_ds, test_ds, config, ood_sources=None):
    """Train and evaluate one (variant, seed).  Returns ``(record, timing)``."""
    start = time.perf_counter()
    rec = RunRecord(variant, seed, "ok", train_checksum=train_ds.checksum(), test_checksum=test_ds.checksum())
    timing = {"variant": variant, "seed": seed, "seconds_per_epoch": None, "wall_seconds": None}
    try:
        fit_ds, cal_ds = train_ds, None
        if config.calibration_fraction > 0:
            fit_ds, cal_ds = split(train_ds, [1.0 - config.calibration_fraction, config.calibration_fraction], seed)
        head = HeadVariant.SOFTMAX if variant == TEMP_SCALING else HeadVariant.parse(variant)
        dims = HeadDims(n=train_ds.dim, d=config.d, C=train_ds.n_classes, h=config.h)
        result = train(head, fit_ds, config.schedule, seed, dims=dims)
        params = result.params
        pred = predict(params, test_ds.features, seed)
        if variant == TEMP_SCALING:
            cal_id = f"calibration:{cal_ds.checksum()}"
            tm = fit_temperature(predict(params, cal_ds.features, seed).logits, cal_ds.labels, fitted_on=cal_id)
            pred = apply_temperature(tm, pred.logits, dataset_id=f"test:{test_ds.checksum()}")
            rec.temperature = tm.T
        report = calibration_report(pred, test_ds.labels, test_ds.soft_labels, config.n_bins)
        rec.metrics = report.metrics()
        rec.bins = report.bins
        rec.n_params = params.n_params()
        rec.loss_history = [float(x) for x in result.loss_history]
        rec.final_train_loss = rec.loss_history[-1]
        if ood_sources:
            preds = {}
            for name, ds in ood_sources.items():
                p = predict(params, ds.features, seed)
                if variant == TEMP_SCALING:
                    p = apply_temperature(tm, p.logits)
                preds[name] = p
            rec.ood = ood_rows(pred, preds)
        timing["seconds_per_epoch"] = float(np.mean(result.epoch_seconds))
    except (WaveheadError, FloatingPointError, np.linalg.LinAlgError) as exc:
        rec.status = "failed"
        rec.error = f"{type(exc).__name__}: {exc}"
    timing["wall_seconds"] = time.perf_counter() - start
    return rec, timing


def _cell_job(args):
    variant, seed, train_ds, test_ds, config, ood_sources = args
    return run_cell(variant, seed, train_ds, test_ds, config, ood_sources)


def _run_cells(jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_cell_job, jobs))
    return [_cell_job(j) for j in jobs]


# ---------------------------------------------------------------------------
# reports


def _std(values):
    return float(np.std(values)) if len(values) else None


def aggregate(records):
    """Mean and population std per metric per variant over successful seeds."""
    out = {}
    for variant in dict.fromkeys(r.variant for r in records):
        ok = [r for r in records if r.variant == variant and r.status == "ok"]
        agg = {"n_ok": len(ok), "n_failed": sum(1 for r in records if r.variant == variant) - len(ok)}
        for m in METRICS:
            vals = [r.metrics[m] for r in ok if m in r.metrics]
            if vals:
                agg[m] = {"mean": float(np.mean(vals)), "std": _std(vals)}
        losses = [r.final_train_loss for r in ok]
        if losses:
            agg["final_train_loss"] = {"mean": float(np.mean(losses)), "std": _std(losses)}
        agg["n_params"] = ok[0].n_params if ok else None
        out[variant] = agg
    return out


@dataclass
class EvaluationReport:
    kind: str
    config: dict
    records: list
    aggregates: dict
    metadata: dict = field(default_factory=dict)
    sweep: list | None = None
    timing: list = field(default_factory=list)
    schema: str = REPORT_SCHEMA
    tool_version: str = __version__

    def to_dict(self):
        return {
            "schema": self.schema,
            "tool_version": self.tool_version,
            "kind": self.kind,
            "config": self.config,
            "metadata": self.metadata,
            "records": [r.to_dict() for r in self.records],
            "aggregates": self.aggregates,
            "sweep": self.sweep,
            "timing": self.timing,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != REPORT_SCHEMA:
            raise FormatError(f"unsupported report schema {doc.get('schema')!r}")
        missing = {"kind", "config", "records", "aggregates", "metadata", "sweep", "timing"} - set(doc)
        if missing:
            raise FormatError(f"report is missing fields {sorted(missing)}")
        return cls(
            kind=doc["kind"],
            config=doc["config"],
            records=[RunRecord.from_dict(r) for r in doc["records"]],
            aggregates=doc["aggregates"],
            metadata=doc["metadata"],
            sweep=doc["sweep"],
            timing=doc["timing"],
            schema=doc["schema"],
            tool_version=doc["tool_version"],
        )

    def without_timing(self):
        d = self.to_dict()
        d.pop("timing")
        return d


def _metadata(config, train_ds, test_ds, records):
    meta = {
        "adam": {"beta1": config.schedule.beta1, "beta2": config.schedule.beta2, "eps": config.schedule.eps},
        "score_orientation": SCORE_ORIENTATION,
        "std": "population (ddof=0) over successful seeds",
        "train_checksum": train_ds.checksum(),
        "test_checksum": test_ds.checksum(),
        "n_train": len(train_ds),
        "n_test": len(test_ds),
    }
    sums = {(r.train_checksum, r.test_checksum) for r in records}
    if sums != {(meta["train_checksum"], meta["test_checksum"])}:
        raise ValidationError("shared-feature discipline violated: cells saw different feature arrays")
    if len(test_ds) and test_ds.soft_labels is not None:
        meta["bayes_accuracy_test"] = float(np.mean(test_ds.soft_labels.argmax(axis=1) == test_ds.labels))
    if config.synthetic is not None and config.train_path is None:
        meta["bayes_accuracy_population"] = bayes_accuracy(config.synthetic)
    temps = {f"{r.variant}/{r.seed}": r.temperature for r in records if r.temperature is not None}
    if temps:
        meta["temperatures"] = temps
    return meta


def run_ablation(config):
    train_ds, test_ds = load_data(config)
    ood_sources = load_ood_sources(config, test_ds) if config.ood else None
    jobs = [(v, s, train_ds, test_ds, config, ood_sources) for v in config.variants for s in config.seeds]
    results = _run_cells(jobs, config.workers)
    records = [r for r, _ in results]
    timing = [t for _, t in results]
    meta = _metadata(config, train_ds, test_ds, records)
    return EvaluationReport("ablation", config.to_dict(), records, aggregate(records), meta, timing=timing)


def run_ood(params, id_ds, ood_sources, scores=("msp", "energy"), seed=None):
    """AUROC / FPR95 of one trained head against each named OOD dataset."""
    if not ood_sources:
        raise ValidationError("at least one OOD source is required")
    seed = params.seed if seed is None else seed
    pred_id = predict(params, id_ds.features, seed)
    preds = {name: predict(params, ds.features, seed) for name, ds in ood_sources.items()}
    return {
        "variant": params.variant.value,
        "seed": seed,
        "n_id": len(id_ds),
        "results": ood_rows(pred_id, preds, scores),
        "score_orientation": {s: SCORE_ORIENTATION[s] for s in scores},
    }


def run_sweep(config):
    """NoBorn ECE over a (Hilbert dim x warmup epochs) grid, averaged over seeds."""
    for d in config.sweep_d:
        if int(d) < 1:
            raise ValidationError(f"invalid Hilbert dimension {d}")
    for tw in config.sweep_warmup:
        if not 0 <= int(tw) < config.schedule.total_epochs:
            raise ValidationError(f"warmup {tw} must lie in [0, total_epochs={config.schedule.total_epochs})")
    train_ds, test_ds = load_data(config)
    jobs, keys = [], []
    for tw in config.sweep_warmup:
        for d in config.sweep_d:
            cell_cfg = replace(config, d=int(d), schedule=replace(config.schedule, warmup_epochs=int(tw)),
                               calibration_fraction=0.0, ood=[], variants=[HeadVariant.NO_BORN.value])
            for s in config.seeds:
                jobs.append((HeadVariant.NO_BORN.value, s, train_ds, test_ds, cell_cfg, None))
                keys.append((int(tw), int(d), s))
    results = _run_cells(jobs, config.workers)
    records, timing, cells = [], [], []
    by_cell = {}
    for (tw, d, s), (rec, t) in zip(keys, results):
        records.append(rec)
        timing.append(dict(t, d=d, warmup_epochs=tw))
        by_cell.setdefault((tw, d), []).append(rec)
    for (tw, d), recs in by_cell.items():
        eces = [r.metrics["ece"] if r.status == "ok" else None for r in recs]
        good = [e for e in eces if e is not None]
        cells.append({
            "warmup_epochs": tw,
            "d": d,
            "seeds": [r.seed for r in recs],
            "ece_per_seed": eces,
            "ece_mean": float(np.mean(good)) if good else None,
        })
    meta = _metadata(config, train_ds, test_ds, records)
    for rec, key in zip(records, keys):
        rec.variant = f"NoBorn[d={key[1]},Tw={key[0]}]"
    return EvaluationReport("sweep", config.to_dict(), records, {}, meta, sweep=cells, timing=timing)


# ---------------------------------------------------------------------------
# emission

TABLE_HEADER = (
    "variant", "n_ok", "n_failed", "n_params",
    "accuracy_mean", "accuracy_std", "ece_mean", "ece_std", "nll_mean", "nll_std",
    "brier_mean", "brier_std", "kl_to_soft_mean", "kl_to_soft_std",
)
PER_SEED_HEADER = (
    "variant", "seed", "status", "accuracy", "ece", "nll", "brier", "kl_to_soft",
    "n_params", "final_train_loss", "temperature",
)
TIMING_HEADER = ("variant", "seed", "seconds_per_epoch", "wall_seconds")
OOD_HEADER = ("variant", "seed", "source", "score", "auroc", "fpr95")
SWEEP_CELL_HEADER = ("warmup_epochs", "d", "ece_mean", "ece_per_seed")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def sweep_table(cells):
    """Grid layout: one row per warmup value, one column per Hilbert dimension."""
    ds = sorted({c["d"] for c in cells})
    tws = sorted({c["warmup_epochs"] for c in cells})
    lookup = {(c["warmup_epochs"], c["d"]): c["ece_mean"] for c in cells}
    header = ["warmup_epochs"] + [f"d={d}" for d in ds]
    return header, [[tw] + [lookup.get((tw, d)) for d in ds] for tw in tws]


def emit_report(report, outdir, formats=("json", "csv")):
    """Write ``report.json``, ``timing.json`` and CSV tables.

    CSVs: aggregates, per-seed cells, one reliability-bin file per record,
    OOD scores and sweep grids when present, and timing.
    """
    try:
        os.makedirs(outdir, exist_ok=True)
        written = []
        if "json" in formats:
            # wall-clock fields live apart so report.json is reproducible byte for byte
            for name, doc in (("report.json", report.without_timing()), ("timing.json", report.timing)):
                path = os.path.join(outdir, name)
                with open(path, "w") as fh:
                    json.dump(doc, fh, indent=1, sort_keys=True)
                    fh.write("\n")
                written.append(path)
        if "csv" in formats:
            if report.aggregates:
                rows = []
                for v, agg in report.aggregates.items():
                    row = [v, agg["n_ok"], agg["n_failed"], agg["n_params"]]
                    for m in ("accuracy", "ece", "nll", "brier", "kl_to_soft"):
                        row += [agg[m]["mean"], agg[m]["std"]] if m in agg else [None, None]
                    rows.append(row)
                written.append(os.path.join(outdir, "table.csv"))
                _write_csv(written[-1], TABLE_HEADER, rows)
            rows = []
            for r in report.records:
                m = r.metrics or {}
                rows.append([r.variant, r.seed, r.status] + [m.get(k) for k in METRICS]
                            + [r.n_params, r.final_train_loss, r.temperature])
            written.append(os.path.join(outdir, "per_seed.csv"))
            _write_csv(written[-1], PER_SEED_HEADER, rows)
            rel_dir = os.path.join(outdir, "reliability")
            os.makedirs(rel_dir, exist_ok=True)
            for r in report.records:
                if r.bins is not None:
                    path = os.path.join(rel_dir, f"{r.variant}_seed{r.seed}.csv")
                    write_reliability_csv(r.bins, path)
                    written.append(path)
            ood = [(r.variant, r.seed, o) for r in report.records for o in (r.ood or [])]
            if ood:
                written.append(os.path.join(outdir, "ood.csv"))
                _write_csv(written[-1], OOD_HEADER,
                           [[v, s, o["source"], o["score"], o["auroc"], o["fpr95"]] for v, s, o in ood])
            if report.sweep:
                header, rows = sweep_table(report.sweep)
                written.append(os.path.join(outdir, "sweep_table.csv"))
                _write_csv(written[-1], header, rows)
                written.append(os.path.join(outdir, "sweep_cells.csv"))
                _write_csv(written[-1], SWEEP_CELL_HEADER,
                           [[c["warmup_epochs"], c["d"], c["ece_mean"],
                             ";".join(_fmt(e) for e in c["ece_per_seed"])] for c in report.sweep])
            written.append(os.path.join(outdir, "timing.csv"))
            _write_csv(written[-1], TIMING_HEADER,
                       [[t["variant"], t["seed"], t["seconds_per_epoch"], t["wall_seconds"]] for t in report.timing])
        return written
    except OSError as exc:
        raise OSError(f"cannot write report to {outdir}: {exc}") from exc


def load_report(path):
    """Parse ``report.json``; a sibling ``timing.json`` is merged back in if present."""
    with open(path) as fh:
        doc = json.load(fh)
    timing_path = os.path.join(os.path.dirname(os.path.abspath(path)), "timing.json")
    doc["timing"] = []
    if os.path.exists(timing_path):
        with open(timing_path) as fh:
            doc["timing"] = json.load(fh)
    return EvaluationReport.from_dict(doc)
