"""Toy BEV fusion detector: modality encoders, fusion backbone, per-source heads.

Each source domain owns one fusion head and one row of the domain embedding.
A head sees the fused feature map concatenated with its embedding row expanded
over the grid. Heatmaps are per-class sigmoid probabilities; the regression
map carries (dx, dy, z, log l, log w, log h, sin yaw, cos yaw) per cell, with
dx/dy in meters from the cell center.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import maximum_filter

from bev_domain_adapt.exceptions import ShapeError
from bev_domain_adapt.models import Box3D, Detection, DetectorConfig, GridConfig
from bev_domain_adapt.tensor import Conv2d, ConvStack, Module, Parameter, Tensor, get_default_dtype
from bev_domain_adapt.tensor import functional as F
from bev_domain_adapt.utils.seeding import STREAM_MODEL_INIT, make_rng

logger = logging.getLogger(__name__)

REGRESSION_CHANNELS = 8
# Log-size predictions are clipped before exponentiation when decoding.
LOG_SIZE_LIMIT = 5.0


@dataclass
class FeaturePyramid:
    """Fused features at strides 1, 2 and 4."""

    low: Tensor
    mid: Tensor
    high: Tensor

    def levels(self) -> tuple[Tensor, Tensor, Tensor]:
        return self.low, self.mid, self.high


@dataclass
class DetectorOutput:
    f2d: Tensor
    f3d: Tensor
    fmm: Tensor
    heatmap: Tensor
    regression: Tensor
    pyramid: FeaturePyramid


def expand_embedding(row: Tensor, height: int, width: int) -> Tensor:
    """Broadcasts a ``1 x dim`` embedding row to a ``dim x H x W`` map."""
    return F.expand_row(row, height, width)


def embedding_update_gate(epoch: int, total_epochs: int) -> bool:
    """True while the domain embedding may be updated: the first ceil(total/2) epochs."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch must lie in [0, {total_epochs}), got {epoch}")
    return epoch < math.ceil(total_epochs / 2)


class DomainEmbedding(Module):
    """``N x dim`` learnable table, one row per source domain."""

    def __init__(self, num_sources: int, dim: int, rng: np.random.Generator, dtype=None):
        self.table = Parameter(rng.normal(0.0, 0.1, size=(num_sources, dim)), dtype=dtype)
        self.frozen = False

    @property
    def num_sources(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def row(self, source_index: int) -> Tensor:
        return F.take(self.table, slice(source_index, source_index + 1))


class FusionBackbone(Module):
    """Fuses the concatenated modality features and exposes a three-level pyramid."""

    def __init__(self, in_channels: int, channels: int, rng: np.random.Generator, dtype=None):
        self.low = Conv2d(in_channels, channels, 3, rng, dtype=dtype)
        self.mid = Conv2d(channels, channels, 3, rng, stride=2, padding=1, dtype=dtype)
        self.high = Conv2d(channels, channels, 3, rng, stride=2, padding=1, dtype=dtype)
        self.merge = Conv2d(2 * channels, channels, 1, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> tuple[Tensor, FeaturePyramid]:
        low = F.relu(self.low(x))
        mid = F.relu(self.mid(low))
        high = F.relu(self.high(mid))
        _, height, width = low.shape
        fmm = F.relu(self.merge(F.concat([low, F.bilinear_resize(high, height, width)], axis=0)))
        return fmm, FeaturePyramid(low=low, mid=mid, high=high)


class FusionHead(Module):
    def __init__(self, in_channels: int, channels: int, num_classes: int, prior: float, rng: np.random.Generator, dtype=None):
        self.shared = Conv2d(in_channels, channels, 3, rng, dtype=dtype)
        self.heatmap = Conv2d(channels, num_classes, 1, rng, dtype=dtype)
        self.regression = Conv2d(channels, REGRESSION_CHANNELS, 1, rng, dtype=dtype)
        self.heatmap.bias.data[...] = math.log(prior / (1.0 - prior))

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        hidden = F.relu(self.shared(x))
        return F.sigmoid(self.heatmap(hidden)), self.regression(hidden)


class DetectorModel(Module):
    """Two-modality BEV detector with N source-specific fusion heads.

    Args:
        config (DetectorConfig): Grid, channel and class settings.
        seed (int): Master seed for weight initialization.
        dtype: Parameter dtype; defaults to the global default.
    """

    def __init__(self, config: DetectorConfig, seed: int, dtype=None):
        self.config = config
        dtype = dtype or get_default_dtype()
        rng = make_rng(seed, STREAM_MODEL_INIT)
        enc = config.encoder_channels
        self.camera_encoder = ConvStack([config.camera_channels, enc], rng, dtype=dtype)
        self.lidar_encoder = ConvStack([config.lidar_channels, enc], rng, dtype=dtype)
        self.fusion_backbone = FusionBackbone(2 * enc, config.fusion_channels, rng, dtype=dtype)
        self.heads = [
            FusionHead(
                config.fusion_channels + config.embedding_dim,
                config.head_channels,
                config.num_classes,
                config.heatmap_prior,
                rng,
                dtype=dtype,
            )
            for _ in range(config.num_sources)
        ]
        self.embedding = DomainEmbedding(config.num_sources, config.embedding_dim, rng, dtype=dtype)
        self.dtype = np.dtype(dtype)

    @property
    def num_sources(self) -> int:
        return len(self.heads)

    def _as_input(self, raster, channels: int, name: str) -> Tensor:
        size = self.config.grid.size
        data = raster.data if isinstance(raster, Tensor) else np.asarray(raster)
        if data.shape != (channels, size, size):
            raise ShapeError(f"{name} raster must be {(channels, size, size)}, got {data.shape}")
        return Tensor(data, dtype=self.dtype)

    def encode(self, camera, lidar) -> tuple[Tensor, Tensor, Tensor, FeaturePyramid]:
        """Runs the shared part of the network: both encoders and the fusion backbone."""
        f2d = self.camera_encoder(self._as_input(camera, self.config.camera_channels, "camera"))
        f3d = self.lidar_encoder(self._as_input(lidar, self.config.lidar_channels, "lidar"))
        fmm, pyramid = self.fusion_backbone(F.concat([f2d, f3d], axis=0))
        return f2d, f3d, fmm, pyramid

    def head_forward(self, fmm: Tensor, source_index: int) -> tuple[Tensor, Tensor]:
        """Heatmap and regression of head ``source_index`` on a fused map."""
        if not 0 <= source_index < self.num_sources:
            raise ValueError(f"source_index must lie in [0, {self.num_sources}), got {source_index}")
        _, height, width = fmm.shape
        embedding = expand_embedding(self.embedding.row(source_index), height, width)
        return self.heads[source_index](F.concat([fmm, embedding], axis=0))

    def forward(self, camera, lidar, source_index: int) -> DetectorOutput:
        if not 0 <= source_index < self.num_sources:
            raise ValueError(f"source_index must lie in [0, {self.num_sources}), got {source_index}")
        f2d, f3d, fmm, pyramid = self.encode(camera, lidar)
        heatmap, regression = self.head_forward(fmm, source_index)
        return DetectorOutput(f2d=f2d, f3d=f3d, fmm=fmm, heatmap=heatmap, regression=regression, pyramid=pyramid)

    __call__ = forward


# --- targets and loss --------------------------------------------------------

@dataclass
class DetectionTargets:
    heatmap: np.ndarray
    regression: np.ndarray
    mask: np.ndarray


def cell_of(x: float, y: float, grid: GridConfig) -> Optional[tuple[int, int]]:
    """(row, col) of the cell containing (x, y); rows follow y, columns follow x. None outside the grid."""
    col = math.floor((x + grid.bev_range) / grid.cell_size)
    row = math.floor((y + grid.bev_range) / grid.cell_size)
    if 0 <= row < grid.size and 0 <= col < grid.size:
        return row, col
    return None


def cell_center(row: int, col: int, grid: GridConfig) -> tuple[float, float]:
    return (-grid.bev_range + (col + 0.5) * grid.cell_size, -grid.bev_range + (row + 0.5) * grid.cell_size)


def splat_radius(box: Box3D, grid: GridConfig, min_radius: int) -> int:
    return max(min_radius, int(0.5 * max(box.size[0], box.size[1]) / grid.cell_size))


def draw_gaussian(heatmap: np.ndarray, row: int, col: int, radius: int) -> None:
    """Max-merges a Gaussian peak of height one into a 2D map, sigma = diameter / 6."""
    sigma = (2 * radius + 1) / 6.0
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-(offsets[:, None] ** 2 + offsets[None, :] ** 2) / (2.0 * sigma * sigma))
    height, width = heatmap.shape
    top, bottom = max(0, row - radius), min(height, row + radius + 1)
    left, right = max(0, col - radius), min(width, col + radius + 1)
    patch = kernel[top - row + radius:bottom - row + radius, left - col + radius:right - col + radius]
    np.maximum(heatmap[top:bottom, left:right], patch, out=heatmap[top:bottom, left:right])


def encode_box(box: Box3D, row: int, col: int, grid: GridConfig) -> np.ndarray:
    cx, cy = cell_center(row, col, grid)
    x, y, z = box.center
    length, width, height = box.size
    return np.array(
        [x - cx, y - cy, z, math.log(length), math.log(width), math.log(height), math.sin(box.yaw), math.cos(box.yaw)]
    )


def build_targets(boxes: Sequence[tuple[Box3D, int]], config: DetectorConfig) -> DetectionTargets:
    """Rasterizes labeled boxes into heatmap, regression and center-mask targets.

    Args:
        boxes: (box, detection class index) pairs; boxes centered outside the grid are skipped.
        config: Detector configuration (grid, class count, splat radius).
    """
    grid = config.grid
    heatmap = np.zeros((config.num_classes, grid.size, grid.size))
    regression = np.zeros((REGRESSION_CHANNELS, grid.size, grid.size))
    mask = np.zeros((grid.size, grid.size), dtype=bool)
    for box, label in boxes:
        if not 0 <= label < config.num_classes:
            raise ValueError(f"target label {label} outside {config.num_classes} classes")
        cell = cell_of(box.center[0], box.center[1], grid)
        if cell is None:
            continue
        row, col = cell
        draw_gaussian(heatmap[label], row, col, splat_radius(box, grid, config.min_gaussian_radius))
        heatmap[label, row, col] = 1.0
        regression[:, row, col] = encode_box(box, row, col, grid)
        mask[row, col] = True
    return DetectionTargets(heatmap=heatmap, regression=regression, mask=mask)


def detection_loss(
    heatmap: Tensor,
    regression: Tensor,
    boxes: Sequence[tuple[Box3D, int]],
    config: DetectorConfig,
) -> Tensor:
    """Focal loss on the heatmap plus weighted L1 on the regression at object centers."""
    targets = build_targets(boxes, config)
    focal = F.focal_loss(heatmap, targets.heatmap.astype(heatmap.dtype))
    l1 = F.masked_l1(regression, targets.regression.astype(regression.dtype), targets.mask)
    return F.add(focal, F.scale(l1, config.regression_weight))


# --- decoding ----------------------------------------------------------------

def decode(
    heatmap,
    regression,
    grid: GridConfig,
    score_threshold: float,
    max_detections: int,
    source: int = 0,
) -> list[Detection]:
    """Turns 3x3 local maxima above ``score_threshold`` into detections, best first."""
    heat = np.asarray(heatmap.data if isinstance(heatmap, Tensor) else heatmap, dtype=np.float64)
    reg = np.asarray(regression.data if isinstance(regression, Tensor) else regression, dtype=np.float64)
    peaks = (heat == maximum_filter(heat, size=(1, 3, 3), mode="constant", cval=-np.inf)) & (heat > score_threshold)
    labels, rows, cols = np.nonzero(peaks)
    scores = heat[labels, rows, cols]
    order = np.lexsort((cols, rows, labels, -scores))[:max_detections]

    detections = []
    for idx in order:
        label, row, col = int(labels[idx]), int(rows[idx]), int(cols[idx])
        dx, dy, z, log_l, log_w, log_h, sin_yaw, cos_yaw = reg[:, row, col]
        cx, cy = cell_center(row, col, grid)
        size = np.exp(np.clip([log_l, log_w, log_h], -LOG_SIZE_LIMIT, LOG_SIZE_LIMIT))
        box = Box3D(center=(cx + dx, cy + dy, z), size=tuple(float(s) for s in size), yaw=math.atan2(sin_yaw, cos_yaw))
        detections.append(Detection(box=box, score=float(np.clip(scores[idx], 0.0, 1.0)), label=label, source=source))
    return detections
