"""Run configuration, provenance and the stages of the end-to-end experiment.

Every stage reads its inputs from files written by earlier stages, so running
the stages one by one produces the same artifacts as :func:`cmd_pipeline`.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .epmetrics import EpReport, build_report
from .exceptions import InvalidConfig
from .models.cnn import CnnModel, cnn_forward
from .models.pr import PRModel, fit_pr
from .models.train import TrainConfig, train_cnn_detailed
from .segmentation import (
    OTHER,
    SegmentationConfig,
    load_instances,
    match_annotations,
    precision_recall,
    save_instances,
    segment_detailed,
)
from .signals import ChannelStats, compute_stats, load_recording, save_recording, split_dataset, standardize
from .synthgen import (
    TRANSIENT_KINDS,
    Annotation,
    GeneratorConfig,
    PatternKind,
    generate_recording,
    load_annotations,
    save_annotations,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
REPORT_SPLITS = ("train", "test")
MODEL_NAMES = ("PR", "CNN")
#: row order of the comparison table
COMPARISON_ROWS = ("MSE", "E_abs", "E_rel", "dt80", "dt10", "dt_conv", "dt_peak")
COUNTED_KINDS = (PatternKind.RisingRamp, PatternKind.DescendingRamp, PatternKind.Overshoot,
                 PatternKind.Undershoot, PatternKind.StaticState)


@dataclass
class RunConfig:
    data_dir: str = "data"
    out_dir: str = "out"
    #: the only seed that matters: generation, split, clustering and training seeds derive from it
    seed: int = 0
    ratios: tuple = (0.64, 0.18, 0.18)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    _NESTED = {"generator": GeneratorConfig, "segmentation": SegmentationConfig, "train": TrainConfig}

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        data = dict(data)
        data.pop("derived_seeds", None)
        kwargs = {}
        names = {f.name for f in dataclasses.fields(cls)}
        for key, value in data.items():
            if key not in names:
                raise InvalidConfig(f"unknown config key {key!r}")
            if key in cls._NESTED:
                sub = cls._NESTED[key]
                allowed = {f.name for f in dataclasses.fields(sub)}
                unknown = set(value) - allowed
                if unknown:
                    raise InvalidConfig(f"unknown {key} keys: {sorted(unknown)}")
                kwargs[key] = sub(**value)
            else:
                kwargs[key] = tuple(value) if key == "ratios" else value
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "data_dir": str(self.data_dir), "out_dir": str(self.out_dir), "seed": int(self.seed),
            "ratios": list(self.ratios), "generator": self.generator.to_dict(),
            "segmentation": self.segmentation.to_dict(), "train": self.train.to_dict(),
        }

    def validate(self) -> None:
        self.generator.validate()
        try:
            self.segmentation.validate()
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc
        self.train.validate()

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir)

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    @property
    def recording_path(self) -> Path:
        return self.data_path / "recording.csv"

    @property
    def annotations_path(self) -> Path:
        return self.data_path / "annotations.json"


def derive_seeds(seed: int) -> dict:
    """Sub-seeds for every random stage, from ``numpy.random.SeedSequence(seed)``."""
    state = np.random.SeedSequence(int(seed)).generate_state(4, dtype=np.uint32)
    return dict(zip(("generator", "split", "segmentation", "train"), (int(s) for s in state)))


def load_config(path=None, overrides: Sequence[str] = (), **fields) -> RunConfig:
    """Config file (JSON) first, then ``section.key=value`` overrides, then explicit fields.

    Override values are parsed as JSON when possible and taken as strings
    otherwise. The sub-seeds are then replaced by values derived from the
    global seed.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    for item in overrides:
        if "=" not in item:
            raise InvalidConfig(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    for key, value in fields.items():
        if value is not None:
            data[key] = value
    cfg = RunConfig.from_dict(data)
    seeds = derive_seeds(cfg.seed)
    cfg.generator.seed = seeds["generator"]
    cfg.segmentation.seed = seeds["segmentation"]
    cfg.train.seed = seeds["train"]
    cfg.validate()
    return cfg


def config_hash(cfg: RunConfig) -> str:
    """First 16 hex digits of the SHA-256 of the canonical effective config (paths excluded)."""
    d = cfg.to_dict()
    d.pop("data_dir")
    d.pop("out_dir")
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def provenance(cfg: RunConfig) -> dict:
    return {"config_hash": config_hash(cfg), "seed": int(cfg.seed), "vcsflow": __version__}


def provenance_line(cfg: RunConfig) -> str:
    return " ".join(f"{k}={v}" for k, v in provenance(cfg).items())


def write_effective_config(cfg: RunConfig) -> Path:
    cfg.out_path.mkdir(parents=True, exist_ok=True)
    path = cfg.out_path / "effective_config.json"
    payload = cfg.to_dict()
    payload["derived_seeds"] = derive_seeds(cfg.seed)
    payload["provenance"] = provenance(cfg)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------- stages


def cmd_generate(cfg: RunConfig) -> dict:
    rec, annotations = generate_recording(cfg.generator, id="synth")
    cfg.data_path.mkdir(parents=True, exist_ok=True)
    save_recording(rec, cfg.recording_path, comment=provenance_line(cfg))
    save_annotations(annotations, cfg.annotations_path, provenance(cfg))
    counts = {kind.value: sum(a.kind == kind for a in annotations) for kind in PatternKind}
    log.info("generated %d samples, %d patterns", rec.n_samples, len(annotations))
    return {"n_samples": rec.n_samples, "pattern_counts": counts}


def load_split(cfg: RunConfig):
    """Recording split into train/validation/test parts, plus train statistics."""
    rec = load_recording(_require_file(cfg.recording_path, "recording"), id="synth")
    split = split_dataset([rec], cfg.ratios, seed=derive_seeds(cfg.seed)["split"])
    stats = compute_stats(split.train)
    return split, stats


def _split_annotations(annotations: Sequence[Annotation], offset: int, n: int) -> list:
    """Annotations lying entirely inside ``[offset, offset + n)``, re-indexed to the part."""
    return [Annotation(a.kind, a.start_idx - offset, a.end_idx - offset, a.params) for a in annotations
            if a.start_idx >= offset and a.end_idx <= offset + n]


def _label_name(label) -> str:
    return label.value if isinstance(label, PatternKind) else str(label)


def _cluster_payload(result, cfg: RunConfig) -> dict:
    clusters = []
    if result.clustering is not None:
        for c, center in enumerate(result.clustering.centers):
            idx = result.clustering.members(c)
            clusters.append({
                "cluster_id": c,
                "label": _label_name(result.cluster_labels.get(c, OTHER)),
                "center": [float(v) for v in center],
                "members": [{"start_idx": int(result.window_starts[i]),
                             "values": [float(v) for v in result.windows[i]]} for i in idx],
            })
    return {"provenance": provenance(cfg), "decimate": cfg.segmentation.decimate, "clusters": clusters}


def cmd_segment(cfg: RunConfig) -> dict:
    """Segment every split part; writes instances, plot-ready clusters and pattern counts."""
    split, _ = load_split(cfg)
    cfg.out_path.mkdir(parents=True, exist_ok=True)
    annotations = load_annotations(cfg.annotations_path) if cfg.annotations_path.is_file() else None
    counts, quality = {}, {}
    for name in SPLITS:
        parts = split.parts()[name]
        if not parts:
            counts[name] = {k.value: 0 for k in COUNTED_KINDS}
            save_instances([], cfg.out_path / f"instances_{name}.csv", provenance_line(cfg))
            continue
        part = parts[0]
        result = segment_detailed(part, cfg.segmentation, static_states=True)
        save_instances(result.instances, cfg.out_path / f"instances_{name}.csv", provenance_line(cfg))
        (cfg.out_path / f"clusters_{name}.json").write_text(json.dumps(_cluster_payload(result, cfg)) + "\n",
                                                            encoding="utf-8")
        counts[name] = {k.value: sum(i.kind == k for i in result.instances) for k in COUNTED_KINDS}
        if annotations is not None:
            local = _split_annotations(annotations, split.offsets[name], part.n_samples)
            matched = match_annotations(result.instances, local, TRANSIENT_KINDS)
            statics = match_annotations(result.instances, local, (PatternKind.StaticState,))
            p, r = precision_recall(matched)
            quality[name] = {"precision": p, "recall": r,
                             "per_kind": {k.value: list(v) for k, v in {**matched, **statics}.items()}}
    with open(cfg.out_path / "pattern_counts.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {provenance_line(cfg)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind"] + list(SPLITS))
        for kind in COUNTED_KINDS:
            writer.writerow([kind.value] + [counts[s][kind.value] for s in SPLITS])
    if quality:
        payload = {"provenance": provenance(cfg), "min_iou": 0.5, "splits": quality}
        (cfg.out_path / "segmentation_quality.json").write_text(json.dumps(payload, indent=2) + "\n",
                                                                encoding="utf-8")
    return {"counts": counts, "quality": quality}


def _standardized_parts(split, stats):
    return {name: [standardize(r, stats) for r in parts] for name, parts in split.parts().items()}


def cmd_fit_pr(cfg: RunConfig) -> PRModel:
    split, stats = load_split(cfg)
    cfg.out_path.mkdir(parents=True, exist_ok=True)
    stats.save(cfg.out_path / "stats.json", provenance(cfg))
    train = _standardized_parts(split, stats)["train"]
    model = fit_pr(np.vstack([r.inputs() for r in train]), np.concatenate([r.flow for r in train]))
    model.save(cfg.out_path / "pr_model.json", provenance(cfg))
    log.info("PR fit, condition number %.3g", model.condition_number)
    return model


def cmd_train_cnn(cfg: RunConfig) -> CnnModel:
    split, stats = load_split(cfg)
    cfg.out_path.mkdir(parents=True, exist_ok=True)
    stats.save(cfg.out_path / "stats.json", provenance(cfg))
    parts = _standardized_parts(split, stats)
    result = train_cnn_detailed(parts["train"], parts["validation"], cfg.train)
    result.model.save(cfg.out_path / "cnn_model.json", provenance(cfg))
    result.save_curve(cfg.out_path / "training_curve.csv", provenance_line(cfg))
    log.info("CNN best epoch %d, validation MSE %.6g", result.best_epoch, result.best_val_mse)
    return result.model


def load_model(path):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    fmt = data.get("format")
    if fmt == "vcsflow.pr":
        return "PR", PRModel.from_dict(data)
    if fmt == "vcsflow.cnn":
        return "CNN", CnnModel.from_dict(data)
    raise InvalidConfig(f"{path}: unknown model format {fmt!r}")


def predict_flow(model, recording, stats: ChannelStats) -> np.ndarray:
    """Flow prediction in physical units for a raw (unstandardized) recording."""
    z = standardize(recording, stats)
    if isinstance(model, PRModel):
        pred = model.predict(z.inputs())
    else:
        pred = cnn_forward(model, z.inputs().T)
    std = stats.std["mdot"]
    return pred * std + stats.mean["mdot"] if std >= 1e-12 else np.full(recording.n_samples, stats.mean["mdot"])


def cmd_evaluate(cfg: RunConfig, model_paths: Sequence | None = None) -> dict:
    """EP reports for each model on the train and test parts, from files on disk."""
    split, _ = load_split(cfg)
    stats = ChannelStats.load(_require_file(cfg.out_path / "stats.json", "channel stats"))
    if not model_paths:
        model_paths = [p for p in (cfg.out_path / "pr_model.json", cfg.out_path / "cnn_model.json") if p.is_file()]
        if not model_paths:
            raise FileNotFoundError(f"no model files in {cfg.out_path}")
    reports = {}
    for path in model_paths:
        name, model = load_model(_require_file(Path(path), "model"))
        for split_name in REPORT_SPLITS:
            parts = split.parts()[split_name]
            if not parts:
                continue
            part = parts[0]
            instances = load_instances(_require_file(cfg.out_path / f"instances_{split_name}.csv", "instances"))
            pred = predict_flow(model, part, stats)
            report = build_report(pred, part.flow, instances, part.sample_rate_hz, mse_scale=stats.std["mdot"])
            report.save(cfg.out_path / f"report_{name}_{split_name}.json", provenance(cfg))
            report.save_instances(cfg.out_path / f"metrics_{name}_{split_name}.csv", provenance_line(cfg))
            np.savetxt(cfg.out_path / f"prediction_{name}_{split_name}.csv",
                       np.column_stack([part.flow, pred]), delimiter=",", header="truth,prediction",
                       comments=f"# {provenance_line(cfg)}\n", fmt="%.17g")
            reports[(name, split_name)] = report
    return reports


def comparison_table(reports: Mapping) -> list:
    """Rows ``[metric, PR_train, PR_test, CNN_train, CNN_test]``; missing values are None."""
    rows = []
    for metric in COMPARISON_ROWS:
        row = [metric]
        for model in MODEL_NAMES:
            for split_name in REPORT_SPLITS:
                rep = reports.get((model, split_name))
                if rep is None:
                    row.append(None)
                elif isinstance(rep, EpReport):
                    row.append(rep.mse if metric == "MSE" else rep.quantiles.get(metric))
                else:
                    row.append(rep["mse"] if metric == "MSE" else rep["quantile90"].get(metric))
        rows.append(row)
    return rows


def cmd_report(cfg: RunConfig) -> list:
    """Assemble the saved reports into ``comparison.csv`` (7 metric rows x 4 value columns)."""
    reports = {}
    for model in MODEL_NAMES:
        for split_name in REPORT_SPLITS:
            path = cfg.out_path / f"report_{model}_{split_name}.json"
            if path.is_file():
                reports[(model, split_name)] = json.loads(path.read_text(encoding="utf-8"))
    if not reports:
        raise FileNotFoundError(f"no reports in {cfg.out_path}; run evaluate first")
    rows = comparison_table(reports)
    with open(cfg.out_path / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {provenance_line(cfg)} values are 90% quantiles except MSE (standardized units)\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric"] + [f"{m}_{s}" for m in MODEL_NAMES for s in REPORT_SPLITS])
        for row in rows:
            writer.writerow([row[0]] + ["" if v is None else repr(float(v)) for v in row[1:]])
    return rows


def cmd_pipeline(cfg: RunConfig, regenerate: bool = False) -> dict:
    """generate (if needed) -> segment -> fit-pr -> train-cnn -> evaluate -> report."""
    cfg.out_path.mkdir(parents=True, exist_ok=True)
    status_path = cfg.out_path / "pipeline_status.json"
    timings, stage = {}, None

    def run(name, fn, *args):
        nonlocal stage
        stage = name
        t0 = time.perf_counter()
        out = fn(*args)
        timings[name] = time.perf_counter() - t0
        return out

    try:
        if regenerate or not cfg.recording_path.is_file():
            run("generate", cmd_generate, cfg)
        seg = run("segment", cmd_segment, cfg)
        run("fit-pr", cmd_fit_pr, cfg)
        run("train-cnn", cmd_train_cnn, cfg)
        run("evaluate", cmd_evaluate, cfg)
        rows = run("report", cmd_report, cfg)
    except Exception as exc:
        status_path.write_text(json.dumps({"status": "failed", "stage": stage, "error": str(exc),
                                           "completed": list(timings), "provenance": provenance(cfg)},
                                          indent=2) + "\n", encoding="utf-8")
        raise
    # timings are informational and kept out of the reproducible artifacts
    status_path.write_text(json.dumps({"status": "ok", "timings_s": timings, "provenance": provenance(cfg)},
                                      indent=2) + "\n", encoding="utf-8")
    return {"comparison": rows, "segmentation": seg, "timings_s": timings}
