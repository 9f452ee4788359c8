"""Experiment orchestration: dataset construction per run, the three training
conditions, artifact layout, and multi-run aggregation.

Per run r, every seed is derived from (base_seed, r, role) through one
documented scheme (see seeding.py).  All conditions within a run share the
same injected datasets; the ordinary model and both IW targets share an
initialization seed, while IW producers get their own, so a producer never
shares initialization with its target.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import seeding
from .data import (DatasetSplit, Records, channel_stats, load_cifar_test,
                   load_cifar_train, make_pair_splits, normalize_for_model,
                   subsample_split)
from .estimators import NetClassifier
from .metrics import EvalResult, accuracy, aggregate_runs, overall_benefit, write_aggregate_csv
from .models import save_checkpoint
from .seeding import derive_seed
from .shortcuts import ShortcutSpec, build_test_sets, inject, write_manifest
from .weighting import IwTable, importance_weights, write_iw_table

CONDITIONS = ("ordinary", "lcn_iw", "hcn_iw")
RESULT_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid experiment configuration; `field` names the offender."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class StageConfig:
    """Hyperparameters for one training stage."""

    arch: str = "vgg-mini"
    epochs: int = 150
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 256


@dataclass
class DeskScale:
    """Reduced protocol for desk-scale runs."""

    enabled: bool = False
    train_per_class: int = 2000
    val_per_class: int = 250
    hcn_epochs: int = 20
    lcn_epochs: int = 15


@dataclass
class ExperimentConfig:
    data_dir: str
    output_dir: str
    class_pair: tuple[int, int] = (1, 6)
    shortcut_kind: str = "local"
    prevalence: float = 0.3
    mask_variance: float = 25e-4
    lcn: StageConfig = field(default_factory=lambda: StageConfig(
        arch="lcn", epochs=40, learning_rate=0.01, momentum=0.0, weight_decay=0.0))
    hcn: StageConfig = field(default_factory=StageConfig)
    conditions: tuple[str, ...] = CONDITIONS
    num_runs: int = 1
    base_seed: int = 0
    checkpoint_metric: str = "val_accuracy"
    desk_scale: DeskScale = field(default_factory=DeskScale)

    def stage(self, name: str) -> StageConfig:
        cfg = self.lcn if name == "lcn" else self.hcn
        if self.desk_scale.enabled:
            epochs = self.desk_scale.lcn_epochs if name == "lcn" else self.desk_scale.hcn_epochs
            return StageConfig(cfg.arch, epochs, cfg.learning_rate, cfg.momentum,
                               cfg.weight_decay, cfg.batch_size)
        return cfg

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["class_pair"] = list(self.class_pair)
        doc["conditions"] = list(self.conditions)
        return doc


_STAGE_FIELDS = {"arch", "epochs", "learning_rate", "momentum", "weight_decay", "batch_size"}
_DESK_FIELDS = {"enabled", "train_per_class", "val_per_class", "hcn_epochs", "lcn_epochs"}
_TOP_FIELDS = {"data_dir", "output_dir", "class_pair", "shortcut", "lcn", "hcn",
               "conditions", "num_runs", "base_seed", "checkpoint_metric", "desk_scale"}


def config_from_dict(doc: dict, data_dir_fallback: str | None = None) -> ExperimentConfig:
    """Parse and validate a config document; raises ConfigError naming the field."""
    for key in doc:
        if key not in _TOP_FIELDS:
            raise ConfigError(key, "unknown configuration field")

    def expect(cond, field_name, message):
        if not cond:
            raise ConfigError(field_name, message)

    data_dir = doc.get("data_dir") or data_dir_fallback
    expect(bool(data_dir), "data_dir", "required (or set SHORTCUTIW_DATA_DIR)")
    expect(bool(doc.get("output_dir")), "output_dir", "required")

    pair = doc.get("class_pair", [1, 6])
    expect(isinstance(pair, (list, tuple)) and len(pair) == 2, "class_pair", "need exactly two class ids")
    a, b = pair
    expect(all(isinstance(c, int) and 0 <= c <= 9 for c in (a, b)), "class_pair", "class ids must be integers 0-9")
    expect(a != b, "class_pair", "class ids must differ")

    sc = doc.get("shortcut", {})
    kind = sc.get("kind", "local")
    expect(kind in ("local", "global"), "shortcut.kind", f"must be 'local' or 'global', got {kind!r}")
    prevalence = sc.get("prevalence", 0.3)
    expect(isinstance(prevalence, (int, float)) and 0.0 <= prevalence <= 1.0,
           "shortcut.prevalence", f"must lie in [0,1], got {prevalence!r}")
    variance = sc.get("mask_variance", 25e-4)
    expect(isinstance(variance, (int, float)) and variance > 0,
           "shortcut.mask_variance", f"must be positive, got {variance!r}")

    def parse_stage(name, defaults: StageConfig) -> StageConfig:
        sub = doc.get(name, {})
        for key in sub:
            expect(key in _STAGE_FIELDS, f"{name}.{key}", "unknown field")
        stage = StageConfig(
            arch=sub.get("arch", defaults.arch),
            epochs=sub.get("epochs", defaults.epochs),
            learning_rate=sub.get("learning_rate", defaults.learning_rate),
            momentum=sub.get("momentum", defaults.momentum),
            weight_decay=sub.get("weight_decay", defaults.weight_decay),
            batch_size=sub.get("batch_size", defaults.batch_size),
        )
        expect(isinstance(stage.epochs, int) and stage.epochs >= 1, f"{name}.epochs", "must be an integer >= 1")
        expect(isinstance(stage.batch_size, int) and stage.batch_size >= 1, f"{name}.batch_size", "must be an integer >= 1")
        expect(stage.learning_rate > 0, f"{name}.learning_rate", "must be positive")
        expect(stage.momentum >= 0, f"{name}.momentum", "must be non-negative")
        expect(stage.weight_decay >= 0, f"{name}.weight_decay", "must be non-negative")
        return stage

    lcn = parse_stage("lcn", StageConfig(arch="lcn", epochs=40, learning_rate=0.01,
                                         momentum=0.0, weight_decay=0.0))
    expect(lcn.arch == "lcn", "lcn.arch", "the low-capacity stage is always 'lcn'")
    hcn = parse_stage("hcn", StageConfig())
    expect(hcn.arch != "lcn", "hcn.arch", "the high-capacity stage cannot be 'lcn'")

    conditions = tuple(doc.get("conditions", list(CONDITIONS)))
    expect(len(conditions) > 0, "conditions", "need at least one condition")
    for c in conditions:
        expect(c in CONDITIONS, "conditions", f"unknown condition {c!r}, expected {CONDITIONS}")
    expect(len(set(conditions)) == len(conditions), "conditions", "duplicate condition")
    if any(c != "ordinary" for c in conditions):
        expect("ordinary" in conditions, "conditions",
               "IW conditions need 'ordinary' in the same run to compute benefit against")

    num_runs = doc.get("num_runs", 1)
    expect(isinstance(num_runs, int) and num_runs >= 1, "num_runs", "must be an integer >= 1")
    base_seed = doc.get("base_seed", 0)
    expect(isinstance(base_seed, int) and base_seed >= 0, "base_seed", "must be a non-negative integer")
    metric = doc.get("checkpoint_metric", "val_accuracy")
    expect(metric in ("val_accuracy", "val_loss"), "checkpoint_metric",
           f"must be 'val_accuracy' or 'val_loss', got {metric!r}")

    ds_doc = doc.get("desk_scale", {})
    if isinstance(ds_doc, bool):
        ds_doc = {"enabled": ds_doc}
    for key in ds_doc:
        expect(key in _DESK_FIELDS, f"desk_scale.{key}", "unknown field")
    desk = DeskScale(**{**asdict(DeskScale()), **ds_doc})
    expect(isinstance(desk.train_per_class, int) and 1 <= desk.train_per_class <= 4500,
           "desk_scale.train_per_class", "must be an integer in [1, 4500]")
    expect(isinstance(desk.val_per_class, int) and 1 <= desk.val_per_class <= 500,
           "desk_scale.val_per_class", "must be an integer in [1, 500]")
    expect(isinstance(desk.hcn_epochs, int) and desk.hcn_epochs >= 1, "desk_scale.hcn_epochs", "must be >= 1")
    expect(isinstance(desk.lcn_epochs, int) and desk.lcn_epochs >= 1, "desk_scale.lcn_epochs", "must be >= 1")

    return ExperimentConfig(
        data_dir=str(data_dir), output_dir=str(doc["output_dir"]), class_pair=(a, b),
        shortcut_kind=kind, prevalence=float(prevalence), mask_variance=float(variance),
        lcn=lcn, hcn=hcn, conditions=conditions, num_runs=num_runs, base_seed=base_seed,
        checkpoint_metric=metric, desk_scale=desk,
    )


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


@dataclass
class RunData:
    """One run's injected datasets, normalized and ready for training."""

    train_split: DatasetSplit
    val_split: DatasetSplit
    test_sets: dict[str, DatasetSplit]  # congruent / incongruent / neutral
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: dict[str, np.ndarray]
    y_test: np.ndarray


def build_run_data(train_source: Records, test_source: Records,
                   cfg: ExperimentConfig, run: int) -> RunData:
    """Pure function of (sources, class pair, base_seed, run)."""
    a, b = cfg.class_pair
    train, val, test = make_pair_splits(train_source, test_source, a, b,
                                        derive_seed(cfg.base_seed, run, seeding.ROLE_SPLIT))
    if cfg.desk_scale.enabled:
        sub_seed = derive_seed(cfg.base_seed, run, seeding.ROLE_SUBSAMPLE)
        train = subsample_split(train, cfg.desk_scale.train_per_class, sub_seed)
        val = subsample_split(val, cfg.desk_scale.val_per_class, sub_seed)

    spec = ShortcutSpec(
        kind=cfg.shortcut_kind, prevalence=cfg.prevalence,
        injection_seed=derive_seed(cfg.base_seed, run, seeding.ROLE_INJECT),
        mask_variance=cfg.mask_variance,
        mask_seed=derive_seed(cfg.base_seed, run, seeding.ROLE_MASK),
    )
    train = inject(train, spec)
    val = inject(val, spec)
    congruent, incongruent, neutral = build_test_sets(test, spec)
    test_sets = {"congruent": congruent, "incongruent": incongruent, "neutral": neutral}

    stats = channel_stats(train.records.pixels)
    return RunData(
        train_split=train, val_split=val, test_sets=test_sets,
        X_train=normalize_for_model(train.records.pixels, stats),
        y_train=train.records.labels.copy(),
        X_val=normalize_for_model(val.records.pixels, stats),
        y_val=val.records.labels.copy(),
        X_test={k: normalize_for_model(s.records.pixels, stats) for k, s in test_sets.items()},
        y_test=test.labels.copy(),
    )


def _classifier(stage: StageConfig, cfg: ExperimentConfig, init_seed: int, batch_seed: int) -> NetClassifier:
    return NetClassifier(arch=stage.arch, epochs=stage.epochs, learning_rate=stage.learning_rate,
                         momentum=stage.momentum, weight_decay=stage.weight_decay,
                         batch_size=stage.batch_size, checkpoint_metric=cfg.checkpoint_metric,
                         init_seed=init_seed, batch_seed=batch_seed)


def compute_iw_table(clf: NetClassifier, data: RunData, producer: str,
                     producer_checkpoint_id: str = "") -> IwTable:
    """Inference-mode weights for every training item.

    Items are processed in ascending source_index order, so the result does
    not depend on how the training set happens to be ordered.
    """
    src = data.train_split.records.source_index
    order = np.argsort(src, kind="stable")
    probs = clf.predict_proba(data.X_train[order])
    weights = importance_weights(probs, data.y_train[order])
    return IwTable(index=src[order].copy(), labels=data.y_train[order].copy(),
                   shortcut_flags=data.train_split.shortcut_flags[order].copy(),
                   weights=weights, producer=producer,
                   producer_checkpoint_id=producer_checkpoint_id)


def _weights_in_split_order(table: IwTable, data: RunData) -> np.ndarray:
    pos = np.searchsorted(table.index, data.train_split.records.source_index)
    return table.weights[pos]


@dataclass
class ConditionOutcome:
    condition: str
    eval_result: EvalResult
    iw_table: IwTable | None
    models: dict[str, NetClassifier]  # "producer" and/or "target"


def _evaluate(clf: NetClassifier, data: RunData, condition: str, run: int) -> EvalResult:
    accs = {k: accuracy(clf, data.X_test[k], data.y_test) for k in ("congruent", "incongruent", "neutral")}
    n = len(data.y_test)
    return EvalResult(condition=condition, run=run,
                      acc_congruent=accs["congruent"], acc_incongruent=accs["incongruent"],
                      acc_neutral=accs["neutral"], n_congruent=n, n_incongruent=n, n_neutral=n)


def run_condition(condition: str, data: RunData, cfg: ExperimentConfig, run: int) -> ConditionOutcome:
    """Train the condition's model(s) on one run's datasets and evaluate."""
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    base = cfg.base_seed
    target = _classifier(cfg.stage("hcn"), cfg,
                         derive_seed(base, run, seeding.ROLE_TARGET_INIT),
                         derive_seed(base, run, seeding.ROLE_TARGET_BATCH))
    validation = (data.X_val, data.y_val)
    models: dict[str, NetClassifier] = {}
    iw_table = None

    if condition == "ordinary":
        target.fit(data.X_train, data.y_train, validation=validation)
    else:
        if condition == "lcn_iw":
            producer = _classifier(cfg.stage("lcn"), cfg,
                                   derive_seed(base, run, seeding.ROLE_LCN_INIT),
                                   derive_seed(base, run, seeding.ROLE_LCN_BATCH))
            producer_name = "LCN"
        else:
            producer = _classifier(cfg.stage("hcn"), cfg,
                                   derive_seed(base, run, seeding.ROLE_PRODUCER_INIT),
                                   derive_seed(base, run, seeding.ROLE_PRODUCER_BATCH))
            producer_name = "HCN"
        producer.fit(data.X_train, data.y_train, validation=validation)
        models["producer"] = producer
        iw_table = compute_iw_table(producer, data, producer_name,
                                    producer_checkpoint_id=f"{condition}/checkpoint_producer.zip")
        target.fit(data.X_train, data.y_train,
                   sample_weight=_weights_in_split_order(iw_table, data),
                   validation=validation)
    models["target"] = target
    return ConditionOutcome(condition, _evaluate(target, data, condition, run), iw_table, models)


def _write_history_csv(path, history: list[dict]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_metric", "lr"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_loss"]),
                             repr(row["val_metric"]), repr(row["lr"])])


def _save_model(dir_path: Path, label: str, clf: NetClassifier):
    _write_history_csv(dir_path / f"history_{label}.csv", clf.history_)
    save_checkpoint(dir_path / f"checkpoint_{label}.zip", clf.spec_, clf.params_,
                    meta={"epoch": clf.best_epoch_,
                          "metric": None if np.isnan(clf.best_metric_) else clf.best_metric_,
                          "checkpoint_metric": clf.checkpoint_metric})


def run_experiment(cfg: ExperimentConfig, train_source: Records | None = None,
                   test_source: Records | None = None) -> dict:
    """Execute all runs and conditions; writes every artifact under output_dir."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(canonical_json(cfg.to_dict()))
    if train_source is None:
        train_source = load_cifar_train(cfg.data_dir)
    if test_source is None:
        test_source = load_cifar_test(cfg.data_dir)

    records = []
    for run in range(cfg.num_runs):
        run_dir = out / f"run_{run:02d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        data = build_run_data(train_source, test_source, cfg, run)
        write_manifest(run_dir / "manifest.csv",
                       [data.train_split, data.val_split] + list(data.test_sets.values()))

        outcomes: dict[str, ConditionOutcome] = {}
        for condition in cfg.conditions:
            outcome = run_condition(condition, data, cfg, run)
            outcomes[condition] = outcome
            cond_dir = run_dir / condition
            cond_dir.mkdir(exist_ok=True)
            for label, clf in outcome.models.items():
                _save_model(cond_dir, label, clf)
            if outcome.iw_table is not None:
                write_iw_table(cond_dir / "iws.csv", outcome.iw_table)

        ordinary = outcomes.get("ordinary")
        run_records = []
        for condition in cfg.conditions:
            ev = outcomes[condition].eval_result
            if condition == "ordinary":
                gain = loss = ob = 0.0
            else:
                res = overall_benefit(ev, ordinary.eval_result)
                gain, loss, ob = res.gain, res.loss, res.overall_benefit
            run_records.append({
                "schema_version": RESULT_SCHEMA_VERSION,
                "pair": list(cfg.class_pair), "shortcut_kind": cfg.shortcut_kind,
                "condition": condition, "run": run,
                "acc_congruent": ev.acc_congruent, "acc_incongruent": ev.acc_incongruent,
                "acc_neutral": ev.acc_neutral, "G": gain, "L": loss, "OB": ob,
            })
        (run_dir / "result.json").write_text(canonical_json(run_records))
        records.extend(run_records)

    aggregates = aggregate_runs(records)
    (out / "results.json").write_text(canonical_json(records))
    write_aggregate_csv(out / "aggregate.csv", aggregates)
    return {"records": records, "aggregates": aggregates}
