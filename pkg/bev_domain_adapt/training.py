"""Multi-source adversarial training of the detector with the domain classifiers.

Every source step runs one labeled frame of source ``n`` through head ``n``
(detection loss, domain label 1); every target step runs an unlabeled target
frame through the same head (domain losses only, domain label 0). The domain
embedding is trainable in the first half of the epochs and frozen afterwards.
"""
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from bev_domain_adapt.detector import DetectorModel, detection_loss, embedding_update_gate
from bev_domain_adapt.domain_classifiers import (
    SOURCE_DOMAIN,
    TARGET_DOMAIN,
    HierarchicalDomainClassifiers,
    domain_losses,
    total_loss,
)
from bev_domain_adapt.exceptions import DataError, NumericalError
from bev_domain_adapt.models import Box3D, CameraSpec, DetectorConfig, DomainAdaptationConfig, Frame, TrainingConfig
from bev_domain_adapt.ptda import detection_targets
from bev_domain_adapt.synth import rasterize
from bev_domain_adapt.tensor import SGD, Tensor, default_dtype, load_checkpoint, resolve_dtype, save_checkpoint
from bev_domain_adapt.utils.io import atomic_write_jsonl
from bev_domain_adapt.utils.seeding import STREAM_MODEL_INIT, STREAM_SCHEDULE, make_rng

logger = logging.getLogger(__name__)

EMBEDDING_PREFIX = "detector.embedding."
LOSS_TERMS = ("l_det", "l_mm", "l_3d", "l_2d", "total")


@dataclass
class PreparedFrame:
    """A frame rasterized for the detector, with its training targets."""

    frame_id: int
    camera: np.ndarray
    lidar: np.ndarray
    targets: list[tuple[Box3D, int]] = field(default_factory=list)


def prepare_frames(frames: Sequence[Frame], config: DetectorConfig, camera: Optional[CameraSpec] = None) -> list[PreparedFrame]:
    """Rasterizes frames with the channel layout the detector expects."""
    with_intensity = config.lidar_channels == 3
    prepared = []
    for frame in frames:
        camera_grid, lidar_grid = rasterize(frame, config.grid, camera=camera, intensity_channel=with_intensity)
        prepared.append(PreparedFrame(frame_id=frame.frame_id, camera=camera_grid, lidar=lidar_grid, targets=detection_targets(frame)))
    return prepared


def source_schedule(config: TrainingConfig, num_sources: int, steps: int, rng: np.random.Generator) -> list[int]:
    """Source index of every source step in one epoch."""
    if config.source_schedule == "round_robin":
        return [i % num_sources for i in range(steps)]
    weights = np.asarray(config.source_weights or [1.0] * num_sources, dtype=np.float64)
    return [int(n) for n in rng.choice(num_sources, size=steps, p=weights / weights.sum())]


class _Cursor:
    """Cycles through a frame list, reshuffling at the start of every pass."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self.order = rng.permutation(size)
        self.position = 0

    def next(self) -> int:
        if self.position == self.size:
            self.order = self.rng.permutation(self.size)
            self.position = 0
        index = int(self.order[self.position])
        self.position += 1
        return index


class Trainer:
    """Owns the detector, the domain classifiers and the optimizer.

    Args:
        detector_config (DetectorConfig): Detector architecture.
        adaptation (DomainAdaptationConfig): Lambda and classifier settings; lambda 0 trains source-only.
        training (TrainingConfig): Schedule and optimizer settings.
        seed (int): Master seed for initialization and frame order.
        precision (str): ``"f32"`` or ``"f64"``.
        quiet (bool): Disable the progress bar.
    """

    def __init__(
        self,
        detector_config: DetectorConfig,
        adaptation: DomainAdaptationConfig,
        training: TrainingConfig,
        seed: int,
        precision: str = "f64",
        quiet: bool = False,
    ):
        self.dtype = resolve_dtype(precision)
        self.adaptation = adaptation
        self.training = training
        self.seed = seed
        self.quiet = quiet
        self.model = DetectorModel(detector_config, seed, dtype=self.dtype)
        self.classifiers = HierarchicalDomainClassifiers(
            detector_config.fusion_channels,
            detector_config.encoder_channels,
            adaptation,
            make_rng(seed, STREAM_MODEL_INIT, 1),
            dtype=self.dtype,
        )
        named = list(self.model.named_parameters("detector.")) + list(self.classifiers.named_parameters("classifiers."))
        self.optimizer = SGD(
            named,
            lr=training.lr,
            momentum=training.momentum,
            weight_decay=training.weight_decay,
            decay_epochs=training.lr_decay_epochs,
            gamma=training.lr_gamma,
            max_grad_norm=training.max_grad_norm,
        )
        self.rng = make_rng(seed, STREAM_SCHEDULE)
        self.records: list[dict[str, Any]] = []

    def set_epoch(self, epoch: int) -> None:
        lr = self.optimizer.set_epoch(epoch)
        if self.training.freeze_embedding:
            frozen = not embedding_update_gate(epoch, self.training.epochs)
            if frozen != self.model.embedding.frozen:
                logger.info(f"Epoch {epoch}: domain embedding {'frozen' if frozen else 'trainable'}")
            self.model.embedding.frozen = frozen
            self.optimizer.set_frozen(EMBEDDING_PREFIX, frozen)
        logger.debug(f"Epoch {epoch}: learning rate {lr:g}")

    def step(self, frame: PreparedFrame, head: int, domain: int) -> dict[str, float]:
        """One forward/backward/update on a single frame.

        Raises:
            NumericalError: If the loss or the gradient norm is not finite.
        """
        self.optimizer.zero_grad()
        out = self.model(frame.camera, frame.lidar, head)
        if domain == SOURCE_DOMAIN:
            l_det = detection_loss(out.heatmap, out.regression, frame.targets, self.model.config)
        else:
            l_det = Tensor(np.zeros((), dtype=self.dtype))

        terms = {"l_det": l_det.item(), "l_mm": 0.0, "l_3d": 0.0, "l_2d": 0.0}
        loss = l_det
        if self.adaptation.enabled:
            predictions = self.classifiers(out.f2d, out.f3d, out.fmm, out.heatmap)
            l_mm, l_3d, l_2d = domain_losses(predictions, domain)
            terms.update(l_mm=l_mm.item(), l_3d=l_3d.item(), l_2d=l_2d.item())
            loss = total_loss(l_det, l_mm, l_3d, l_2d, self.adaptation.lambda_)
        terms["total"] = loss.item()
        if not all(math.isfinite(v) for v in terms.values()):
            raise NumericalError(f"Non-finite loss on frame {frame.frame_id} (head {head}, domain {domain}): {terms}")
        if loss.requires_grad:
            loss.backward()
            terms["grad_norm"] = self.optimizer.step()
        return terms

    def fit(self, sources: Sequence[Sequence[PreparedFrame]], target: Sequence[PreparedFrame]) -> pd.DataFrame:
        """Trains for the configured epochs.

        Args:
            sources: Prepared frames of each source domain, indexed like the heads.
            target: Prepared unlabeled target frames; unused when lambda is 0.

        Returns:
            pd.DataFrame: Per-epoch mean of every loss term.
        """
        if len(sources) != self.model.num_sources:
            raise DataError(f"{len(sources)} source frame sets for a detector with {self.model.num_sources} heads")
        if any(len(frames) == 0 for frames in sources):
            raise DataError("Every source domain needs at least one training frame")
        adversarial = self.adaptation.enabled and self.training.target_ratio > 0
        if adversarial and not target:
            raise DataError("Adversarial training needs target frames")

        steps = self.training.steps_per_epoch or len(sources) * max(len(frames) for frames in sources)
        source_cursors = [_Cursor(len(frames), self.rng) for frames in sources]
        target_cursor = _Cursor(len(target), self.rng) if adversarial else None
        logger.info(
            f"Training {self.training.epochs} epochs x {steps} source steps, {self.model.num_sources} sources, "
            f"lambda {self.adaptation.lambda_}, {self.adaptation.conditioning} conditioning"
        )
        show = not self.quiet and sys.stderr.isatty()
        with default_dtype(self.dtype):
            for epoch in tqdm(range(self.training.epochs), desc="epochs", disable=not show):
                self.set_epoch(epoch)
                for step, head in enumerate(source_schedule(self.training, len(sources), steps, self.rng)):
                    frame = sources[head][source_cursors[head].next()]
                    self._record(epoch, step, "source", head, self.step(frame, head, SOURCE_DOMAIN))
                    for _ in range(self.training.target_ratio if adversarial else 0):
                        frame = target[target_cursor.next()]
                        self._record(epoch, step, "target", head, self.step(frame, head, TARGET_DOMAIN))
                summary = summarize_log(self.records).loc[epoch]
                logger.info(f"Epoch {epoch}: " + ", ".join(f"{t} {summary[t]:.4f}" for t in LOSS_TERMS))
        return summarize_log(self.records)

    def _record(self, epoch: int, step: int, kind: str, head: int, terms: dict[str, float]) -> None:
        record = {"epoch": epoch, "step": step, "kind": kind, "source": head, "lr": self.optimizer.lr, **terms}
        self.records.append(record)
        logger.debug(f"epoch {epoch} step {step} {kind} head {head}: total {terms['total']:.5f}")

    def write_log(self, path: Path) -> None:
        atomic_write_jsonl(path, (json.dumps(r, sort_keys=True) for r in self.records))

    def save(self, stem: Path, metadata: Optional[dict[str, Any]] = None) -> None:
        """Checkpoints detector and classifier parameters together."""
        state = {**dict(_prefixed(self.model.state_dict(), "detector.")), **dict(_prefixed(self.classifiers.state_dict(), "classifiers."))}
        meta = {
            "detector": self.model.config.model_dump(mode="json"),
            "adaptation": self.adaptation.model_dump(mode="json", by_alias=True),
            "training": self.training.model_dump(mode="json"),
            "seed": self.seed,
            "precision": "f32" if self.dtype == np.float32 else "f64",
            **(metadata or {}),
        }
        save_checkpoint(stem, state, meta)


def _prefixed(state: dict[str, np.ndarray], prefix: str):
    return ((f"{prefix}{name}", value) for name, value in state.items())


def summarize_log(records: Sequence[dict[str, Any]]) -> pd.DataFrame:
    """Per-epoch means of the loss terms."""
    if not records:
        return pd.DataFrame(columns=list(LOSS_TERMS))
    return pd.DataFrame.from_records(records).groupby("epoch")[list(LOSS_TERMS)].mean()


def load_detector(stem: Path, precision: Optional[str] = None) -> tuple[DetectorModel, dict[str, Any]]:
    """Rebuilds a trained detector from a checkpoint written by ``Trainer.save``.

    Raises:
        DataError: If the checkpoint lacks the detector configuration or parameters.
    """
    state, metadata = load_checkpoint(stem)
    if "detector" not in metadata:
        raise DataError(f"Checkpoint {stem} carries no detector configuration")
    config = DetectorConfig.model_validate(metadata["detector"])
    dtype = resolve_dtype(precision or metadata.get("precision", "f64"))
    model = DetectorModel(config, seed=int(metadata.get("seed", 0)), dtype=dtype)
    prefix = "detector."
    try:
        model.load_state_dict({name[len(prefix):]: value for name, value in state.items() if name.startswith(prefix)})
    except ValueError as e:
        raise DataError(f"Checkpoint {stem} does not match its detector configuration: {e}") from e
    return model, metadata
