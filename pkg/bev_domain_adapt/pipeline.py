"""Pipeline stages shared by the CLI subcommands and the end-to-end run.

Every stage reads its inputs from and writes its artifacts into one output
directory, so running the subcommands one after another produces exactly the
files the end-to-end run produces:

    frames/<domain>_<split>.jsonl      synth
    ptda/<domain>_<split>.jsonl        ptda
    <run>/checkpoint.{bin,json}        train (plus train_log.jsonl, loss_curve.html)
    <run>/prototype_graph.json         build-graph
    <run>/detections/source_<n>.jsonl  infer
    <run>/detections/fused.jsonl       fuse (fused_uniform.jsonl without graph weights)
    <run>/metrics_<detections>.json    eval

The target domain always has domain id 0 and sources are numbered from 1,
so source ``n`` (0-based head index) has domain id ``n + 1``.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, TypeVar

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from bev_domain_adapt.config.base import DETECTION_CLASSES
from bev_domain_adapt.config.loader import load_class_map, load_domain_spec
from bev_domain_adapt.detector import decode
from bev_domain_adapt.evaluation import METRICS_SCHEMA, ClassMetrics, MetricReport, evaluate, format_table, metrics_table
from bev_domain_adapt.exceptions import DataError
from bev_domain_adapt.fusion import pgw_fuse
from bev_domain_adapt.models import (
    DETECTIONS_SCHEMA,
    FRAME_SCHEMA,
    FUSED_SOURCE,
    ClassMap,
    DetectorConfig,
    DomainAdaptationConfig,
    DomainSpec,
    ExperimentConfig,
    Frame,
    FrameDetections,
    PrototypeGraph,
    PTDAFlags,
    PTDA_STRATEGIES,
)
from bev_domain_adapt.plotting import bev_figure, loss_curve_figure, write_figure
from bev_domain_adapt.prototypes import PrototypeAccumulator, accumulate_prototypes, build_graph, load_graph, save_graph
from bev_domain_adapt.ptda import apply_ptda, canonical_targets
from bev_domain_adapt.synth import generate_domain
from bev_domain_adapt.training import Trainer, load_detector, prepare_frames
from bev_domain_adapt.utils.io import atomic_write_jsonl, atomic_write_text, iter_jsonl

logger = logging.getLogger(__name__)

FRAMES_DIR = "frames"
PTDA_DIR = "ptda"
DETECTIONS_DIR = "detections"
CHECKPOINT_STEM = "checkpoint"
GRAPH_FILE = "prototype_graph.json"
FUSED_FILE = "fused.jsonl"
FUSED_UNIFORM_FILE = "fused_uniform.jsonl"
RESOLVED_CONFIG_FILE = "config.resolved.json"

TARGET_DOMAIN_ID = 0

SOURCE_ONLY_RUN = "source_only"
HSC_DC_RUN = "hsc_dc"
PLAIN_DC_RUN = "plain_dc"
ORACLE_RUN = "oracle"

ModelT = TypeVar("ModelT", bound=BaseModel)


@dataclass
class Domains:
    """Loaded domain specs and class map of an experiment."""

    target: DomainSpec
    sources: list[DomainSpec]
    class_map: ClassMap

    @property
    def ordered(self) -> list[DomainSpec]:
        """Target first, then sources: list position is the domain id."""
        return [self.target] + self.sources

    @property
    def names(self) -> list[str]:
        return [spec.name for spec in self.ordered]


def load_domains(config: ExperimentConfig) -> Domains:
    """Loads the configured domain specs and class map.

    Raises:
        DataError: On missing files or duplicate domain names.
    """
    domains = Domains(
        target=load_domain_spec(config.data.target),
        sources=[load_domain_spec(path) for path in config.data.sources],
        class_map=load_class_map(config.data.class_map),
    )
    if len(set(domains.names)) != len(domains.names):
        raise DataError(f"Domain names must be unique, got {domains.names}")
    return domains


def apply_overrides(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    ptda: Optional[PTDAFlags] = None,
    lam: Optional[float] = None,
    epochs: Optional[int] = None,
    dim: Optional[int] = None,
    precision: Optional[str] = None,
    output_dir: Optional[Path] = None,
) -> ExperimentConfig:
    """Returns a re-validated copy of ``config`` with command-line overrides applied."""
    data = config.model_dump(by_alias=True)
    if seed is not None:
        data["seeds"] = [seed]
    if ptda is not None:
        data["ptda"] = ptda.model_dump()
    if lam is not None:
        data["adaptation"]["lambda"] = lam
    if epochs is not None:
        data["training"]["epochs"] = epochs
    if dim is not None:
        data["detector"]["embedding_dim"] = dim
    if precision is not None:
        data["precision"] = precision
    if output_dir is not None:
        data["output_dir"] = output_dir
    return ExperimentConfig.model_validate(data)


def detector_config(config: ExperimentConfig) -> DetectorConfig:
    """Detector settings with the LiDAR channel count implied by intensity removal."""
    return config.detector.model_copy(update={"lidar_channels": 2 if config.ptda.intensity else 3})


def write_resolved_config(out: Path, config: ExperimentConfig) -> None:
    atomic_write_text(Path(out) / RESOLVED_CONFIG_FILE, config.model_dump_json(by_alias=True, indent=2))


# --- artifact IO -------------------------------------------------------------

def frames_path(out: Path, stage_dir: str, domain_name: str, split: str) -> Path:
    return Path(out) / stage_dir / f"{domain_name}_{split}.jsonl"


def _splits(domain_id: int) -> tuple[str, ...]:
    return ("train", "eval") if domain_id == TARGET_DOMAIN_ID else ("train",)


def _read_records(path: Path, model: type[ModelT], schema: str) -> list[ModelT]:
    records = []
    for lineno, record in enumerate(iter_jsonl(path), start=1):
        if not isinstance(record, dict) or record.get("schema") != schema:
            found = record.get("schema") if isinstance(record, dict) else type(record).__name__
            raise DataError(f"{path}: record {lineno} has schema {found!r}, expected {schema}")
        try:
            records.append(model.model_validate(record))
        except ValidationError as e:
            raise DataError(f"{path}: invalid record {lineno}: {e}") from e
    return records


def write_frames(path: Path, frames: Sequence[Frame]) -> None:
    atomic_write_jsonl(path, (frame.to_json() for frame in frames))
    logger.info(f"Wrote {len(frames)} frames to {path}")


def read_frames(path: Path) -> list[Frame]:
    return _read_records(path, Frame, FRAME_SCHEMA)


def write_detections(path: Path, detections: Sequence[FrameDetections]) -> None:
    atomic_write_jsonl(path, (d.to_json() for d in detections))
    logger.info(f"Wrote detections of {len(detections)} frames to {path}")


def read_detections(path: Path) -> list[FrameDetections]:
    return _read_records(path, FrameDetections, DETECTIONS_SCHEMA)


def source_detections_path(run_dir: Path, source: int) -> Path:
    return Path(run_dir) / DETECTIONS_DIR / f"source_{source}.jsonl"


def metrics_path(detections_path: Path) -> Path:
    """Report location for a detection file: next to its run directory, named after the file."""
    detections_path = Path(detections_path)
    return detections_path.parent.parent / f"metrics_{detections_path.stem}.json"


# --- stages ------------------------------------------------------------------

def synth_stage(config: ExperimentConfig, domains: Domains, seed: int, out: Path) -> dict[str, list[Frame]]:
    """Generates training frames for every domain plus held-out target frames.

    Held-out frames continue the target's frame ids after the training frames.
    """
    generated = {}
    for domain_id, spec in enumerate(domains.ordered):
        generated[f"{spec.name}_train"] = generate_domain(spec, domain_id, config.data.train_frames, seed)
        if domain_id == TARGET_DOMAIN_ID:
            generated[f"{spec.name}_eval"] = generate_domain(
                spec, domain_id, config.data.eval_frames, seed, first_frame=config.data.train_frames
            )
    for stem, frames in generated.items():
        write_frames(Path(out) / FRAMES_DIR / f"{stem}.jsonl", frames)
    return generated


def ptda_stage(config: ExperimentConfig, domains: Domains, out: Path, frames_dir: Optional[Path] = None) -> dict[str, list[Frame]]:
    """Applies the configured PTDA strategies to every frame file.

    Args:
        config: Experiment; its ``ptda`` flags select the strategies.
        domains: Loaded domains.
        out: Output directory; results go to ``out/ptda``.
        frames_dir: Directory of generated frames; defaults to ``out/frames``.
    """
    frames_dir = Path(frames_dir) if frames_dir is not None else Path(out) / FRAMES_DIR
    transformed = {}
    for domain_id, spec in enumerate(domains.ordered):
        role = "target" if domain_id == TARGET_DOMAIN_ID else "source"
        for split in _splits(domain_id):
            frames = read_frames(frames_dir / f"{spec.name}_{split}.jsonl")
            result = [apply_ptda(frame, config.ptda, domains.class_map, role) for frame in frames]
            write_frames(frames_path(out, PTDA_DIR, spec.name, split), result)
            transformed[f"{spec.name}_{split}"] = result
    logger.info(f"Applied PTDA strategies '{config.ptda.label()}'")
    return transformed


def train_stage(
    config: ExperimentConfig,
    domains: Domains,
    out: Path,
    seed: int,
    run: str = HSC_DC_RUN,
    adaptation: Optional[DomainAdaptationConfig] = None,
    oracle: bool = False,
    quiet: bool = False,
) -> Path:
    """Trains one model on the PTDA frames and checkpoints it under ``out/run``.

    Args:
        config: Experiment configuration.
        domains: Loaded domains.
        out: Output directory holding ``ptda/``.
        seed: Master seed.
        run: Run directory name.
        adaptation: Overrides ``config.adaptation`` (lambda 0 gives source-only training).
        oracle: Train a single head on the labeled target training frames instead.
        quiet: Disable progress bars.

    Returns:
        Path: Checkpoint stem.
    """
    run_dir = Path(out) / run
    detector = detector_config(config)
    adaptation = adaptation or config.adaptation
    target_frames = read_frames(frames_path(out, PTDA_DIR, domains.target.name, "train"))
    target = prepare_frames(target_frames, detector, domains.target.camera)
    if oracle:
        detector = detector.model_copy(update={"num_sources": 1})
        adaptation = adaptation.model_copy(update={"lambda_": 0.0})
        for prepared, frame in zip(target, target_frames):
            prepared.targets = canonical_targets(frame, domains.class_map)
        sources = [target]
    else:
        sources = [
            prepare_frames(read_frames(frames_path(out, PTDA_DIR, spec.name, "train")), detector, spec.camera)
            for spec in domains.sources
        ]

    trainer = Trainer(detector, adaptation, config.training, seed, precision=config.precision, quiet=quiet)
    summary = trainer.fit(sources, target)
    stem = run_dir / CHECKPOINT_STEM
    trainer.save(stem, metadata={
        "run": run,
        "domain_names": [domains.target.name] if oracle else domains.names,
        "class_names": list(DETECTION_CLASSES),
        "ptda": config.ptda.label(),
        "final_losses": {k: float(v) for k, v in summary.iloc[-1].items()},
    })
    trainer.write_log(run_dir / "train_log.jsonl")
    write_figure(loss_curve_figure(trainer.records, title=f"{run} training losses"), run_dir / "loss_curve.html")
    return stem


def build_graph_stage(config: ExperimentConfig, domains: Domains, out: Path, run: str = HSC_DC_RUN) -> PrototypeGraph:
    """Accumulates class prototypes over every domain's training frames and writes the graph.

    Source frames use their own head's heatmap; target frames use the mean
    heatmap over all heads.
    """
    run_dir = Path(out) / run
    model, _ = load_detector(run_dir / CHECKPOINT_STEM, config.precision)
    if model.num_sources != len(domains.sources):
        raise DataError(f"Checkpoint in {run_dir} has {model.num_sources} heads for {len(domains.sources)} source domains")
    prototype_sets = []
    for domain_id, spec in enumerate(domains.ordered):
        accumulator = PrototypeAccumulator()
        frames = prepare_frames(read_frames(frames_path(out, PTDA_DIR, spec.name, "train")), model.config, spec.camera)
        for prepared in frames:
            _, _, fmm, pyramid = model.encode(prepared.camera, prepared.lidar)
            if domain_id == TARGET_DOMAIN_ID:
                heatmap = np.mean([model.head_forward(fmm, n)[0].data for n in range(model.num_sources)], axis=0)
            else:
                heatmap = model.head_forward(fmm, domain_id - 1)[0].data
            accumulator.add(accumulate_prototypes(pyramid, heatmap))
        prototype_sets.append(accumulator.prototypes(spec.name))
    graph = build_graph(prototype_sets, list(DETECTION_CLASSES), domains.names)
    save_graph(run_dir / GRAPH_FILE, graph)
    return graph


def infer_stage(config: ExperimentConfig, domains: Domains, out: Path, run: str = HSC_DC_RUN) -> list[list[FrameDetections]]:
    """Runs every head on the held-out target frames; writes one detection file per head."""
    run_dir = Path(out) / run
    model, _ = load_detector(run_dir / CHECKPOINT_STEM, config.precision)
    frames = read_frames(frames_path(out, PTDA_DIR, domains.target.name, "eval"))
    prepared = prepare_frames(frames, model.config, domains.target.camera)
    per_head: list[list[FrameDetections]] = [[] for _ in range(model.num_sources)]
    for frame, item in zip(frames, prepared):
        _, _, fmm, _ = model.encode(item.camera, item.lidar)
        for n in range(model.num_sources):
            heatmap, regression = model.head_forward(fmm, n)
            detections = decode(
                heatmap,
                regression,
                model.config.grid,
                model.config.score_threshold,
                model.config.max_detections,
                source=n,
            )
            per_head[n].append(FrameDetections(
                domain_id=frame.domain_id,
                frame_id=frame.frame_id,
                source=n,
                class_names=list(DETECTION_CLASSES),
                detections=detections,
            ))
    for n, detections in enumerate(per_head):
        write_detections(source_detections_path(run_dir, n), detections)
    return per_head


def _source_files(run_dir: Path) -> list[Path]:
    files = sorted((Path(run_dir) / DETECTIONS_DIR).glob("source_*.jsonl"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise DataError(f"No per-source detection files in {Path(run_dir) / DETECTIONS_DIR}")
    return files


def fuse_stage(
    config: ExperimentConfig,
    domains: Domains,
    out: Path,
    run: str = HSC_DC_RUN,
    uniform: bool = False,
) -> list[FrameDetections]:
    """Fuses the per-source detections of every frame.

    Args:
        uniform: Weight by raw scores instead of the prototype graph.
    """
    run_dir = Path(out) / run
    per_head = [read_detections(path) for path in _source_files(run_dir)]
    if uniform:
        names = [domains.target.name] + [f"source_{n}" for n in range(len(per_head))]
        graph = PrototypeGraph.uniform(list(DETECTION_CLASSES), names)
    else:
        graph = load_graph(run_dir / GRAPH_FILE)
    if graph.num_sources != len(per_head):
        raise DataError(f"Prototype graph has {graph.num_sources} sources but {len(per_head)} detection files exist")
    frame_ids = [d.frame_id for d in per_head[0]]
    for n, detections in enumerate(per_head[1:], start=1):
        if [d.frame_id for d in detections] != frame_ids:
            raise DataError(f"Detection file of source {n} covers different frames than source 0")

    fused = []
    for i, frame_id in enumerate(frame_ids):
        fused.append(FrameDetections(
            domain_id=per_head[0][i].domain_id,
            frame_id=frame_id,
            source=FUSED_SOURCE,
            class_names=list(DETECTION_CLASSES),
            detections=pgw_fuse(
                [head[i].detections for head in per_head],
                graph,
                iou_threshold=config.fusion_iou_threshold,
                method=config.fusion_method,
            ),
        ))
    write_detections(run_dir / DETECTIONS_DIR / (FUSED_UNIFORM_FILE if uniform else FUSED_FILE), fused)
    return fused


def eval_stage(
    config: ExperimentConfig,
    domains: Domains,
    out: Path,
    detections_path: Path,
    name: str = "",
    report_path: Optional[Path] = None,
) -> MetricReport:
    """Evaluates a detection file against the held-out target ground truth.

    Raises:
        DataError: If the file holds detections for frames outside the evaluation split.
    """
    frames = read_frames(frames_path(out, PTDA_DIR, domains.target.name, "eval"))
    ground_truth = {frame.frame_id: canonical_targets(frame, domains.class_map) for frame in frames}
    detections = {d.frame_id: d.detections for d in read_detections(detections_path)}
    unknown = sorted(set(detections) - set(ground_truth))
    if unknown:
        raise DataError(f"{detections_path} has detections for frames {unknown[:5]} outside the evaluation split")
    report = evaluate(
        [(detections.get(frame_id, []), ground_truth[frame_id]) for frame_id in sorted(ground_truth)],
        list(DETECTION_CLASSES),
        config.iou_thresholds,
        name=name,
    )
    if report_path is not None:
        atomic_write_text(report_path, report.to_json())
    return report


def plot_stage(
    config: ExperimentConfig,
    domains: Domains,
    out: Path,
    frame_index: int = 0,
    run: str = HSC_DC_RUN,
    baseline: str = SOURCE_ONLY_RUN,
) -> Path:
    """Writes a BEV figure of one held-out target frame: ground truth, adapted and baseline detections."""
    frames = read_frames(frames_path(out, PTDA_DIR, domains.target.name, "eval"))
    if not 0 <= frame_index < len(frames):
        raise DataError(f"Frame index {frame_index} outside the {len(frames)} evaluation frames")
    frame = frames[frame_index]
    adapted = read_detections(Path(out) / run / DETECTIONS_DIR / FUSED_FILE)
    baseline_path = Path(out) / baseline / DETECTIONS_DIR / FUSED_UNIFORM_FILE
    reference = read_detections(baseline_path) if baseline_path.is_file() else []

    def pick(records: Sequence[FrameDetections]):
        return next((r.detections for r in records if r.frame_id == frame.frame_id), [])

    figure = bev_figure(
        frame.points,
        [box for box, _ in canonical_targets(frame, domains.class_map)],
        pick(adapted),
        pick(reference),
        bev_range=config.detector.grid.bev_range,
        title=f"{domains.target.name} frame {frame.frame_id}",
    )
    path = Path(out) / f"bev_frame_{frame.frame_id}.html"
    write_figure(figure, path)
    return path


# --- experiments ---------------------------------------------------------------

def _source_only(config: ExperimentConfig) -> DomainAdaptationConfig:
    return config.adaptation.model_copy(update={"lambda_": 0.0})


def _evaluate_run(config, domains, out: Path, run: str, file_name: str, name: str) -> MetricReport:
    detections = Path(out) / run / DETECTIONS_DIR / file_name
    return eval_stage(config, domains, out, detections, name=name, report_path=metrics_path(detections))


def run_seed(config: ExperimentConfig, domains: Domains, seed: int, out: Path, quiet: bool = False) -> list[MetricReport]:
    """Runs the whole chain for one seed and returns the comparison rows.

    Rows: source-only, the plain domain classifier (when ablated), HSC-DC,
    every HSC-DC head alone, HSC-DC with prototype-graph-weighted fusion and
    the supervised oracle (when ablated). Rows that need one detection set
    from several heads fuse them with score weights only.
    """
    out = Path(out)
    write_resolved_config(out, config.model_copy(update={"seeds": [seed]}))
    synth_stage(config, domains, seed, out)
    ptda_stage(config, domains, out)
    reports = []

    train_stage(config, domains, out, seed, run=SOURCE_ONLY_RUN, adaptation=_source_only(config), quiet=quiet)
    infer_stage(config, domains, out, run=SOURCE_ONLY_RUN)
    fuse_stage(config, domains, out, run=SOURCE_ONLY_RUN, uniform=True)
    reports.append(_evaluate_run(config, domains, out, SOURCE_ONLY_RUN, FUSED_UNIFORM_FILE, "Source Only"))

    if "plain_dc" in config.ablations:
        plain = config.adaptation.model_copy(update={"conditioning": "plain"})
        train_stage(config, domains, out, seed, run=PLAIN_DC_RUN, adaptation=plain, quiet=quiet)
        infer_stage(config, domains, out, run=PLAIN_DC_RUN)
        fuse_stage(config, domains, out, run=PLAIN_DC_RUN, uniform=True)
        reports.append(_evaluate_run(config, domains, out, PLAIN_DC_RUN, FUSED_UNIFORM_FILE, "Domain Classifier"))

    train_stage(config, domains, out, seed, run=HSC_DC_RUN, quiet=quiet)
    build_graph_stage(config, domains, out, run=HSC_DC_RUN)
    infer_stage(config, domains, out, run=HSC_DC_RUN)
    fuse_stage(config, domains, out, run=HSC_DC_RUN, uniform=True)
    reports.append(_evaluate_run(config, domains, out, HSC_DC_RUN, FUSED_UNIFORM_FILE, "HSC-DC"))
    for n, spec in enumerate(domains.sources):
        reports.append(_evaluate_run(config, domains, out, HSC_DC_RUN, f"source_{n}.jsonl", f"Source {n + 1} Prediction ({spec.name})"))
    fuse_stage(config, domains, out, run=HSC_DC_RUN)
    reports.append(_evaluate_run(config, domains, out, HSC_DC_RUN, FUSED_FILE, "HSC-DC + PGW-MF"))

    if "oracle" in config.ablations:
        train_stage(config, domains, out, seed, run=ORACLE_RUN, oracle=True, quiet=quiet)
        infer_stage(config, domains, out, run=ORACLE_RUN)
        reports.append(_evaluate_run(config, domains, out, ORACLE_RUN, "source_0.jsonl", "Oracle (Fully Supervised Target)"))

    plot_stage(config, domains, out)
    return reports


def average_reports(per_seed: Sequence[Sequence[MetricReport]]) -> list[MetricReport]:
    """Averages same-position rows over seeds; undefined values are skipped."""
    if not per_seed:
        return []
    averaged = []
    for rows in zip(*per_seed):

        def mean(values):
            values = [v for v in values if v is not None]
            return float(np.mean(values)) if values else None

        classes = {}
        for class_name, first in rows[0].classes.items():
            metrics = [r.classes[class_name] for r in rows]
            classes[class_name] = ClassMetrics(
                ap=mean([m.ap for m in metrics]),
                aph=mean([m.aph for m in metrics]),
                num_gt=sum(m.num_gt for m in metrics),
                num_detections=sum(m.num_detections for m in metrics),
                iou_threshold=first.iou_threshold,
            )
        averaged.append(MetricReport(
            name=rows[0].name,
            classes=classes,
            mean_ap=mean([r.mean_ap for r in rows]),
            mean_aph=mean([r.mean_aph for r in rows]),
        ))
    return averaged


def _write_comparison(out: Path, reports: Sequence[MetricReport], stem: str) -> pd.DataFrame:
    table = metrics_table(reports)
    payload = {"schema": METRICS_SCHEMA, "rows": [json.loads(r.to_json()) for r in reports]}
    atomic_write_text(Path(out) / f"{stem}.json", json.dumps(payload, indent=2))
    atomic_write_text(Path(out) / f"{stem}.txt", format_table(table) + "\n")
    return table


def e2e(config: ExperimentConfig, out: Path, quiet: bool = False) -> pd.DataFrame:
    """Runs every seed under ``out/seed_<s>`` and writes the seed-averaged comparison table."""
    domains = load_domains(config)
    write_resolved_config(out, config)
    per_seed = [run_seed(config, domains, seed, Path(out) / f"seed_{seed}", quiet=quiet) for seed in config.seeds]
    table = _write_comparison(out, average_reports(per_seed), "comparison")
    logger.info(f"End-to-end run over seeds {config.seeds} finished; comparison in {Path(out) / 'comparison.txt'}")
    return table


def ptda_ablation(config: ExperimentConfig, out: Path, quiet: bool = False) -> pd.DataFrame:
    """Source-only runs with the PTDA strategies enabled cumulatively.

    Rows: none, +shift, +intensity, +velocity, +remap. Every row trains on the
    same generated frames of its seed.
    """
    domains = load_domains(config)
    write_resolved_config(out, config)
    per_seed = []
    for seed in config.seeds:
        seed_out = Path(out) / f"seed_{seed}"
        synth_stage(config, domains, seed, seed_out)
        rows = []
        for count in range(len(PTDA_STRATEGIES) + 1):
            flags = PTDAFlags(**{name: True for name in PTDA_STRATEGIES[:count]})
            row_config = config.model_copy(update={"ptda": flags})
            row_out = seed_out / f"ptda_{count}_{flags.label().replace(',', '+')}"
            ptda_stage(row_config, domains, row_out, frames_dir=seed_out / FRAMES_DIR)
            train_stage(row_config, domains, row_out, seed, run=SOURCE_ONLY_RUN, adaptation=_source_only(config), quiet=quiet)
            infer_stage(row_config, domains, row_out, run=SOURCE_ONLY_RUN)
            fuse_stage(row_config, domains, row_out, run=SOURCE_ONLY_RUN, uniform=True)
            rows.append(_evaluate_run(row_config, domains, row_out, SOURCE_ONLY_RUN, FUSED_UNIFORM_FILE, flags.label()))
        per_seed.append(rows)
    return _write_comparison(out, average_reports(per_seed), "ptda_ablation")


def dataset_statistics(frames_by_domain: dict[str, Sequence[Frame]]) -> pd.DataFrame:
    """Annotations per frame and mean box size per domain and raw class."""
    rows = []
    for domain, frames in frames_by_domain.items():
        for frame in frames:
            for labeled in frame.boxes:
                length, width, height = labeled.box.size
                rows.append({"domain": domain, "class": labeled.label, "length": length, "width": width, "height": height})
    columns = ["domain", "class", "annotations_per_frame", "mean_length", "mean_width", "mean_height"]
    if not rows:
        return pd.DataFrame(columns=columns)
    df = pd.DataFrame(rows)
    stats = df.groupby(["domain", "class"]).agg(
        count=("length", "size"),
        mean_length=("length", "mean"),
        mean_width=("width", "mean"),
        mean_height=("height", "mean"),
    ).reset_index()
    frame_counts = {domain: len(frames) for domain, frames in frames_by_domain.items()}
    stats["annotations_per_frame"] = stats["count"] / stats["domain"].map(frame_counts)
    return stats[columns]


def stats_stage(config: ExperimentConfig, domains: Domains, out: Path, seed: int) -> pd.DataFrame:
    """Statistics of the generated training frames; frames are generated in memory when ``out/frames`` is absent."""
    frames_by_domain = {}
    for domain_id, spec in enumerate(domains.ordered):
        path = frames_path(out, FRAMES_DIR, spec.name, "train")
        if path.is_file():
            frames_by_domain[spec.name] = read_frames(path)
        else:
            frames_by_domain[spec.name] = generate_domain(spec, domain_id, config.data.train_frames, seed)
    table = dataset_statistics(frames_by_domain)
    atomic_write_text(Path(out) / "dataset_statistics.csv", table.to_csv(index=False))
    return table
