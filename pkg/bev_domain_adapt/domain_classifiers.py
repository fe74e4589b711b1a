"""Hierarchical spatially-conditioned domain classifiers.

First level: the fused features, gated by the class-agnostic heatmap, feed the
multi-modality classifier. Second level: camera and LiDAR features, gated by
the multi-modality domain probability map, feed their own classifiers. Every
classifier input passes through gradient reversal, so minimizing the domain
losses trains the classifiers while pushing the features toward domain
invariance.
"""
import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from bev_domain_adapt.models import DomainAdaptationConfig
from bev_domain_adapt.tensor import Conv2d, ConvStack, Module, Tensor, get_default_dtype
from bev_domain_adapt.tensor import functional as F
from bev_domain_adapt.tensor.core import as_tensor

logger = logging.getLogger(__name__)

# Domain labels: every source domain is 1, the target is 0.
SOURCE_DOMAIN = 1
TARGET_DOMAIN = 0


class DomainClassifier(Module):
    """Three 3x3 conv + relu blocks, a 1x1 conv and a sigmoid: ``C x H x W`` to an ``H x W`` probability map."""

    def __init__(self, in_channels: int, width: int, rng: np.random.Generator, dtype=None):
        self.features = ConvStack([in_channels, width, width, width], rng, dtype=dtype)
        self.output = Conv2d(width, 1, 1, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        logits = self.output(self.features(x))
        _, height, width = logits.shape
        return F.sigmoid(F.reshape(logits, (height, width)))

    def zero_output(self) -> None:
        """Zeroes the final layer so the classifier outputs 0.5 everywhere."""
        self.output.weight.data[...] = 0.0
        self.output.bias.data[...] = 0.0


@dataclass
class DomainPredictions:
    p_mm: Tensor
    p_2d: Tensor
    p_3d: Tensor


def class_agnostic_heatmap(heatmap: Tensor) -> Tensor:
    """Per-pixel maximum over the class axis of a ``K x H x W`` heatmap."""
    return F.channel_max(heatmap)


def condition(features: Tensor, spatial_map: Tensor) -> Tensor:
    """Multiplies every channel of ``features`` by ``spatial_map``."""
    return F.condition(features, spatial_map)


class HierarchicalDomainClassifiers(Module):
    """The multi-modality, camera and LiDAR domain classifiers.

    Args:
        fusion_channels (int): Channels of the fused feature map.
        encoder_channels (int): Channels of each modality feature map.
        config (DomainAdaptationConfig): Conditioning mode, gradient flag and classifier width.
        rng (np.random.Generator): Source of initial weights.
        dtype: Parameter dtype; defaults to the global default.
    """

    def __init__(
        self,
        fusion_channels: int,
        encoder_channels: int,
        config: DomainAdaptationConfig,
        rng: np.random.Generator,
        dtype=None,
    ):
        dtype = dtype or get_default_dtype()
        self.multi_modality = DomainClassifier(fusion_channels, config.classifier_width, rng, dtype=dtype)
        self.camera = DomainClassifier(encoder_channels, config.classifier_width, rng, dtype=dtype)
        self.lidar = DomainClassifier(encoder_channels, config.classifier_width, rng, dtype=dtype)
        self.conditioning = config.conditioning
        self.second_level_gradient = config.second_level_gradient

    def forward(self, f2d: Tensor, f3d: Tensor, fmm: Tensor, heatmap: Tensor, reverse: bool = True) -> DomainPredictions:
        """Domain probability maps for one frame.

        Args:
            f2d: Camera features, ``C x H x W``.
            f3d: LiDAR features, ``C x H x W``.
            fmm: Fused features, ``C x H x W``.
            heatmap: Predicted ``K x H x W`` heatmap; unused in plain mode.
            reverse: Apply gradient reversal to the classifier inputs; False swaps in identity.
        """
        gate = F.grl if reverse else F.identity
        if self.conditioning == "plain":
            return DomainPredictions(
                p_mm=self.multi_modality(gate(fmm)),
                p_2d=self.camera(gate(f2d)),
                p_3d=self.lidar(gate(f3d)),
            )

        p_mm = self.multi_modality(gate(condition(fmm, class_agnostic_heatmap(heatmap))))
        prior = p_mm if self.second_level_gradient else F.stop_gradient(p_mm)
        return DomainPredictions(
            p_mm=p_mm,
            p_2d=self.camera(gate(condition(f2d, prior))),
            p_3d=self.lidar(gate(condition(f3d, prior))),
        )

    __call__ = forward


def domain_loss(p: Tensor, domain: int) -> Tensor:
    """Pixel-averaged binary cross entropy of a domain probability map."""
    return F.bce(p, domain)


def domain_losses(predictions: DomainPredictions, domain: int) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (l_mm, l_3d, l_2d)."""
    return (
        domain_loss(predictions.p_mm, domain),
        domain_loss(predictions.p_3d, domain),
        domain_loss(predictions.p_2d, domain),
    )


def total_loss(
    l_det: Union[Tensor, float],
    l_mm: Union[Tensor, float],
    l_3d: Union[Tensor, float],
    l_2d: Union[Tensor, float],
    lam: float,
) -> Tensor:
    """``l_det + lam * (l_mm + l_3d + l_2d)``."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    l_det, l_mm, l_3d, l_2d = (as_tensor(np.asarray(v)) if not isinstance(v, Tensor) else v for v in (l_det, l_mm, l_3d, l_2d))
    adversarial = F.add(F.add(l_mm, l_3d), l_2d)
    return F.add(l_det, F.scale(adversarial, lam))
