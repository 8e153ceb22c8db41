"""Config-driven orchestration of the transfer scenarios.

A run wires together synthetic (or user-supplied) datasets, feature
extraction, autoencoder pretraining, adversarial alignment, prototype
construction and scoring, writing every artifact under one output
directory. Unseen-class labels are sequestered at the domain split and
surface only in the scorer; an audit log records which labels each stage
could see.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path as FsPath

import numpy as np

from . import datasets as ds
from . import features as ft
from . import nn, recognizer, synth
from .alignment import (
    AlignmentReport,
    AlignmentSchedule,
    align,
    build_autoencoder,
    build_discriminator,
    encode_batch,
    pretrain_autoencoder,
)

MODALITY_INPUT_LEN = dict(ft.FEATURE_LENGTHS)

SCENARIOS = ("video-wifi", "video-accel", "accel-wifi")

# seed for the pinned synthetic benchmarks quoted in tests and README
PINNED_BENCHMARK_SEED = 7


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class HarnessError(ValueError):
    pass


@dataclass
class SynthBlock:
    source_users: int = 4
    target_users: int = 4
    labeled_reps: int = 2
    exemplars_per_class: int = 6
    test_instances_per_class: int = 20
    wifi_pairs: int = 90
    video_noise: float = synth.DEFAULT_VIDEO_NOISE
    wifi_noise: float = synth.DEFAULT_WIFI_NOISE
    accel_noise: float = synth.DEFAULT_ACCEL_NOISE
    user_noise: float = 0.02


@dataclass
class ExperimentConfig:
    source_modality: str
    target_modality: str
    labeled_classes: list[str]
    unseen_classes: list[str]
    seed: int = 0
    out_dir: str | None = None
    schedule: AlignmentSchedule = field(default_factory=AlignmentSchedule)
    synth: SynthBlock | None = None
    source_dataset: str | None = None
    target_dataset: str | None = None
    skip_alignment: bool = False

    def validate(self) -> None:
        for m in (self.source_modality, self.target_modality):
            if m not in MODALITY_INPUT_LEN:
                raise HarnessError(f"unknown modality {m!r}")
        if self.source_modality == self.target_modality:
            raise HarnessError("source and target modalities must differ")
        if not self.labeled_classes or not self.unseen_classes:
            raise HarnessError("labeled and unseen class lists must be nonempty")
        if set(self.labeled_classes) & set(self.unseen_classes):
            raise HarnessError("labeled and unseen class lists must be disjoint")
        if self.synth is None and not (self.source_dataset and self.target_dataset):
            raise HarnessError("need either a synth block or dataset paths")

    def to_dict(self) -> dict:
        doc = {
            "source_modality": self.source_modality,
            "target_modality": self.target_modality,
            "labeled_classes": list(self.labeled_classes),
            "unseen_classes": list(self.unseen_classes),
            "seed": self.seed,
            "out_dir": self.out_dir,
            "schedule": asdict(self.schedule),
            "synth": asdict(self.synth) if self.synth else None,
            "source_dataset": self.source_dataset,
            "target_dataset": self.target_dataset,
            "skip_alignment": self.skip_alignment,
        }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        return cls(
            source_modality=doc["source_modality"],
            target_modality=doc["target_modality"],
            labeled_classes=list(doc["labeled_classes"]),
            unseen_classes=list(doc["unseen_classes"]),
            seed=int(doc.get("seed", 0)),
            out_dir=doc.get("out_dir"),
            schedule=AlignmentSchedule(**doc.get("schedule", {})),
            synth=SynthBlock(**doc["synth"]) if doc.get("synth") else None,
            source_dataset=doc.get("source_dataset"),
            target_dataset=doc.get("target_dataset"),
            skip_alignment=bool(doc.get("skip_alignment", False)),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def scenario_config(name: str, seed: int = PINNED_BENCHMARK_SEED) -> ExperimentConfig:
    """Preset class splits mirroring the three transfer scenarios."""
    library = [s.class_id for s in synth.default_class_library(25)]
    if name == "video-wifi":
        labeled, unseen = library[:15], library[15:25]
        source, target = "video", "wifi"
    elif name == "video-accel":
        labeled, unseen = library[:16], library[16:23]
        source, target = "video", "accel"
    elif name == "accel-wifi":
        labeled, unseen = library[:13], library[13:18]
        source, target = "accel", "wifi"
    else:
        raise HarnessError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
    return ExperimentConfig(
        source_modality=source,
        target_modality=target,
        labeled_classes=labeled,
        unseen_classes=unseen,
        seed=seed,
        schedule=AlignmentSchedule(seed=seed),
        synth=SynthBlock(),
    )


class AuditLog:
    """Append-only record of the labels each stage could see.

    `sequestered_access` marks the only legitimate reveal of the held-out
    target truths: the scorer. Everything upstream must log False.
    """

    def __init__(self):
        self.events: list[dict] = []

    def record(self, stage: str, labels, note: str = "", sequestered_access: bool = False) -> None:
        clean = sorted({l for l in labels if l is not None})
        self.events.append(
            {
                "stage": stage,
                "labels": clean,
                "sequestered_access": sequestered_access,
                "note": note,
            }
        )

    def labels_before(self, stage: str) -> set[str]:
        seen: set[str] = set()
        for event in self.events:
            if event["stage"] == stage:
                break
            seen.update(event["labels"])
        return seen

    def to_list(self) -> list[dict]:
        return list(self.events)


@dataclass
class DomainSplit:
    labeled: ds.GestureDataset  # D_L: target-technology data with labels
    unlabeled: ds.GestureDataset  # D_u: labels stripped
    truth: dict[str, str]  # instance_id -> sequestered class (scorer only)


def split_domains(dataset: ds.GestureDataset, config: ExperimentConfig, audit: AuditLog) -> DomainSplit:
    """Partition the target dataset; unseen-class labels are sequestered."""
    labeled_set = set(config.labeled_classes)
    unseen_set = set(config.unseen_classes)
    covered = dataset.class_ids()
    missing = (labeled_set | unseen_set) - covered
    if missing:
        raise HarnessError(f"target dataset lacks classes {sorted(missing)}")
    d_l = ds.GestureDataset(dataset.modality)
    d_u = ds.GestureDataset(dataset.modality)
    truth: dict[str, str] = {}
    for inst in dataset.instances:
        if inst.class_id in labeled_set:
            d_l.instances.append(inst)
        elif inst.class_id in unseen_set:
            truth[inst.instance_id] = inst.class_id
            d_u.instances.append(replace(inst, class_id=None))
        else:
            raise HarnessError(f"instance {inst.instance_id} has unknown class {inst.class_id}")
    audit.record("split", d_l.class_ids(), note="unseen labels sequestered")
    return DomainSplit(d_l, d_u, truth)


@dataclass
class AccuracyReport:
    rows: list[dict]  # {class, n_instances, n_correct, accuracy_pct}
    overall_pct: float
    n_total: int
    n_correct: int
    confusion: dict[str, dict[str, int]]

    def to_dict(self) -> dict:
        return {
            "overall_pct": self.overall_pct,
            "n_total": self.n_total,
            "n_correct": self.n_correct,
            "rows": self.rows,
            "confusion": self.confusion,
        }


def _pct(correct: int, total: int) -> float:
    """Percentage at 0.1 granularity, round half up."""
    if total == 0:
        return 0.0
    val = Decimal(correct) * 100 / Decimal(total)
    return float(val.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def accuracy_table(predictions, truths, class_set) -> AccuracyReport:
    """Exact counting of per-class and overall accuracy.

    `predictions` is a list of (instance_id, predicted_class); `truths`
    maps instance_id -> true class; every class involved must be in
    `class_set`.
    """
    if len(predictions) != len(truths):
        raise HarnessError(
            f"{len(predictions)} predictions for {len(truths)} ground-truth labels"
        )
    class_set = set(class_set)
    counts = {c: [0, 0] for c in sorted(class_set)}  # class -> [n, correct]
    confusion: dict[str, dict[str, int]] = {}
    for instance_id, pred_class in predictions:
        if instance_id not in truths:
            raise HarnessError(f"prediction for unknown instance {instance_id}")
        true_class = truths[instance_id]
        if true_class not in class_set:
            raise HarnessError(f"truth class {true_class!r} outside the unseen set")
        if pred_class not in class_set:
            raise HarnessError(f"predicted class {pred_class!r} outside the unseen set")
        counts[true_class][0] += 1
        counts[true_class][1] += int(pred_class == true_class)
        confusion.setdefault(true_class, {})
        confusion[true_class][pred_class] = confusion[true_class].get(pred_class, 0) + 1
    rows = [
        {
            "class": c,
            "n_instances": n,
            "n_correct": k,
            "accuracy_pct": _pct(k, n),
        }
        for c, (n, k) in counts.items()
        if n > 0
    ]
    n_total = sum(n for n, _ in counts.values())
    n_correct = sum(k for _, k in counts.values())
    return AccuracyReport(rows, _pct(n_correct, n_total), n_total, n_correct, confusion)


def emit_plots(report: AccuracyReport, path) -> None:
    """Plot-ready CSV (class, accuracy), sorted by class id."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "accuracy_pct"])
        for row in sorted(report.rows, key=lambda r: r["class"]):
            writer.writerow([row["class"], repr(row["accuracy_pct"])])


def _render_instance(modality, path, rng_seed, block: SynthBlock):
    if modality == "video":
        return synth.render_video_modality(path, noise=block.video_noise, seed=rng_seed)
    if modality == "wifi":
        return synth.render_wifi_modality(
            path, pairs=block.wifi_pairs, noise=block.wifi_noise, seed=rng_seed
        )
    times, accel = synth.render_accel_modality(path, noise=block.accel_noise, seed=rng_seed)
    return ds.AccelTrace(times, accel)


def generate_synth_datasets(config: ExperimentConfig) -> tuple[ds.GestureDataset, ds.GestureDataset]:
    """Paired datasets from the shared trajectory library.

    Source: labeled classes x source_users x reps, plus exemplars of the
    unseen classes. Target: labeled classes x target_users x reps, plus
    test instances of the unseen classes.
    """
    block = config.synth
    specs = {s.class_id: s for s in synth.default_class_library(30)}
    wanted = list(config.labeled_classes) + list(config.unseen_classes)
    unknown = [c for c in wanted if c not in specs]
    if unknown:
        raise HarnessError(f"classes {unknown} not in the synthetic library")

    def build(modality, role):
        out = ds.GestureDataset(modality)
        users = block.source_users if role == "src" else block.target_users

        def add(class_id, user_id, rep):
            iid = f"{role}-{class_id}-u{user_id}-r{rep}"
            seed = synth.instance_seed(config.seed, iid)
            user = synth.default_user(user_id, noise=block.user_noise)
            path = synth.gen_trajectory(specs[class_id], user, seed)
            data = _render_instance(modality, path, seed + 1, block)
            out.instances.append(
                ds.GestureInstance(iid, class_id, user_id, modality, data)
            )

        for class_id in config.labeled_classes:
            for user_id in range(1, users + 1):
                for rep in range(block.labeled_reps):
                    add(class_id, user_id, rep)
        if role == "src":
            for class_id in config.unseen_classes:
                for idx in range(block.exemplars_per_class):
                    add(class_id, (idx % users) + 1, 100 + idx // users)
        else:
            for class_id in config.unseen_classes:
                for idx in range(block.test_instances_per_class):
                    add(class_id, (idx % users) + 1, 200 + idx // users)
        return out

    return build(config.source_modality, "src"), build(config.target_modality, "tgt")


def _feature_table(dataset: ds.GestureDataset) -> dict[str, np.ndarray]:
    table = {}
    for inst in dataset.instances:
        raw = inst.data
        if dataset.modality == "accel":
            raw = raw.accel
        table[inst.instance_id] = ft.extract_feature_vector(dataset.modality, raw)
    return table


def _pretrain_subset(dataset: ds.GestureDataset, feats, classes) -> list[np.ndarray]:
    """Two replications from two different users per labeled class."""
    chosen = []
    for class_id in classes:
        insts = [i for i in dataset.instances if i.class_id == class_id]
        insts.sort(key=lambda i: (i.user_id, i.instance_id))
        users_seen = []
        for inst in insts:
            if inst.user_id not in users_seen:
                users_seen.append(inst.user_id)
                chosen.append(feats[inst.instance_id])
            if len(users_seen) == 2:
                break
    return chosen


def _labeled_tuples(dataset: ds.GestureDataset, feats):
    out = []
    rep_counter: dict[tuple, int] = {}
    for inst in sorted(dataset.instances, key=lambda i: i.instance_id):
        key = (inst.class_id, inst.user_id)
        rep = rep_counter.get(key, 0)
        rep_counter[key] = rep + 1
        out.append((feats[inst.instance_id], inst.class_id, inst.user_id, rep))
    return out


@dataclass
class ExperimentResult:
    report: AccuracyReport
    alignment: AlignmentReport | None
    pretrain_source: list[float]
    pretrain_target: list[float]
    predictions: list
    audit: AuditLog
    config: ExperimentConfig

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "accuracy": self.report.to_dict(),
            "alignment": self.alignment.to_dict() if self.alignment else None,
            "pretrain_loss": {
                "source": self.pretrain_source,
                "target": self.pretrain_target,
            },
        }


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Execute extract -> pretrain -> align -> prototype -> classify -> score."""
    config.validate()
    audit = AuditLog()
    out = None
    if write:
        if not config.out_dir:
            raise HarnessError("config.out_dir required when write=True")
        out = FsPath(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)

    def stage(name, fn):
        try:
            return fn()
        except Exception as exc:
            if isinstance(exc, StageError):
                raise
            raise StageError(name, exc) from exc

    def load_data():
        if config.synth is not None:
            return generate_synth_datasets(config)
        src = ds.load_dataset(config.source_dataset, config.source_modality)
        tgt = ds.load_dataset(config.target_dataset, config.target_modality)
        return src, tgt

    source_ds, target_ds = stage("data", load_data)
    audit.record("data", source_ds.class_ids() | set(), note="source labels (fully labeled)")

    split = stage("split", lambda: split_domains(target_ds, config, audit))

    source_feats = stage("features", lambda: _feature_table(source_ds))
    target_label_feats = stage("features", lambda: _feature_table(split.labeled))
    target_unseen_feats = stage("features", lambda: _feature_table(split.unlabeled))

    src_len = MODALITY_INPUT_LEN[config.source_modality]
    tgt_len = MODALITY_INPUT_LEN[config.target_modality]
    src_ae = build_autoencoder(src_len, seed=config.seed)
    tgt_ae = build_autoencoder(tgt_len, seed=config.seed + 1000)
    disc = build_discriminator(seed=config.seed + 2000)

    src_pre = _pretrain_subset(source_ds, source_feats, config.labeled_classes)
    tgt_pre = _pretrain_subset(split.labeled, target_label_feats, config.labeled_classes)
    audit.record("pretrain", config.labeled_classes)
    trace_src = stage("pretrain", lambda: pretrain_autoencoder(src_ae, src_pre, config.schedule))
    trace_tgt = stage("pretrain", lambda: pretrain_autoencoder(tgt_ae, tgt_pre, config.schedule))

    report = None
    if not config.skip_alignment:
        src_labeled = [
            (vec, c, u, r)
            for vec, c, u, r in _labeled_tuples(source_ds, source_feats)
            if c in set(config.labeled_classes)
        ]
        tgt_labeled = _labeled_tuples(split.labeled, target_label_feats)
        audit.record("align", [c for _, c, _, _ in src_labeled])
        report = stage(
            "align",
            lambda: align(src_ae, tgt_ae, disc, src_labeled, tgt_labeled, config.schedule),
        )

    if write:
        for name, spec, weights in (
            ("source_encoder", src_ae.encoder_spec, src_ae.encoder_weights),
            ("source_decoder", src_ae.decoder_spec, src_ae.decoder_weights),
            ("target_encoder", tgt_ae.encoder_spec, tgt_ae.encoder_weights),
            ("target_decoder", tgt_ae.decoder_spec, tgt_ae.decoder_weights),
            ("discriminator", disc.spec, disc.weights),
        ):
            nn.save_weights(spec, weights, out / f"{name}.json", seed_lineage=[config.seed])

    def build_protos():
        exemplars = [
            (inst.class_id, source_feats[inst.instance_id])
            for inst in source_ds.instances
            if inst.class_id in set(config.unseen_classes)
        ]
        audit.record("prototypes", [c for c, _ in exemplars], note="source exemplars")
        return recognizer.build_prototypes(src_ae, exemplars)

    protos = stage("prototypes", build_protos)

    def classify_all():
        audit.record("classify", [], note="unlabeled target instances")
        preds = []
        for inst in sorted(split.unlabeled.instances, key=lambda i: i.instance_id):
            latent = recognizer.encode(tgt_ae, target_unseen_feats[inst.instance_id])
            preds.append((inst.instance_id, recognizer.classify(latent, protos)))
        return preds

    predictions = stage("classify", classify_all)

    def score():
        audit.record(
            "score",
            split.truth.values(),
            note="sequestered labels revealed",
            sequestered_access=True,
        )
        return accuracy_table(
            [(iid, p.class_id) for iid, p in predictions],
            split.truth,
            config.unseen_classes,
        )

    acc = stage("score", score)

    result = ExperimentResult(
        acc, report, trace_src, trace_tgt, predictions, audit, config
    )
    if write:
        config.save(out / "config.json")
        with open(out / "report.json", "w") as fh:
            json.dump(result.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        recognizer.write_predictions_csv(
            out / "predictions.csv",
            [(iid, split.truth[iid], p) for iid, p in predictions],
        )
        emit_plots(acc, out / "per_class.csv")
        with open(out / "audit.json", "w") as fh:
            json.dump(audit.to_list(), fh, indent=1)
            fh.write("\n")
    return result
