"""Plotly figures: BEV comparison of one frame and training loss curves."""
import logging
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd
import plotly.graph_objects as go

from bev_domain_adapt.models import Box3D, Detection
from bev_domain_adapt.utils.geometry import bev_corners
from bev_domain_adapt.utils.io import atomic_write_text

logger = logging.getLogger(__name__)

GROUND_TRUTH_COLOR = "#d62728"
ADAPTED_COLOR = "#1f77b4"
BASELINE_COLOR = "#2ca02c"


def _outline(boxes: Sequence[Box3D]) -> tuple[list, list]:
    # closed polygons separated by None so one trace draws them all
    xs, ys = [], []
    for box in boxes:
        corners = bev_corners(box)
        xs.extend(list(corners[:, 0]) + [corners[0, 0], None])
        ys.extend(list(corners[:, 1]) + [corners[0, 1], None])
    return xs, ys


def bev_figure(
    points,
    ground_truth: Sequence[Box3D],
    adapted: Sequence[Detection],
    baseline: Sequence[Detection] = (),
    bev_range: float = 32.0,
    title: str = "",
) -> go.Figure:
    """Top-down view of one frame with ground truth, adapted and baseline boxes.

    Args:
        points: ``P x 3+`` point array; drawn as light gray dots.
        ground_truth: Ground-truth boxes (red).
        adapted: Detections of the adapted model (blue).
        baseline: Detections of the baseline model (green).
        bev_range: Half extent of the plotted area in meters.
        title: Figure title.
    """
    fig = go.Figure()
    if len(points):
        fig.add_trace(go.Scattergl(
            x=points[:, 0],
            y=points[:, 1],
            mode='markers',
            marker=dict(size=2, color='#bbbbbb'),
            name='Points',
            hoverinfo='skip',
        ))
    for boxes, color, name in (
        (list(ground_truth), GROUND_TRUTH_COLOR, 'Ground Truth'),
        ([d.box for d in adapted], ADAPTED_COLOR, 'Adapted'),
        ([d.box for d in baseline], BASELINE_COLOR, 'Baseline'),
    ):
        if not boxes:
            continue
        xs, ys = _outline(boxes)
        fig.add_trace(go.Scatter(x=xs, y=ys, mode='lines', line=dict(width=1.5, color=color), name=name))

    fig.update_layout(
        title=title,
        xaxis_title="x (m)",
        yaxis_title="y (m)",
        xaxis_range=[-bev_range, bev_range],
        yaxis_range=[-bev_range, bev_range],
        plot_bgcolor='rgba(0,0,0,0)',
        legend=dict(orientation="h", yanchor="bottom", y=1.02, xanchor="right", x=1),
    )
    fig.update_yaxes(scaleanchor="x", scaleratio=1)
    return fig


def loss_curve_figure(records: Sequence[dict], title: str = "Training losses") -> go.Figure:
    """Per-step loss terms, smoothed with a rolling mean over 20 steps."""
    fig = go.Figure()
    if records:
        df = pd.DataFrame.from_records(records)
        df['iteration'] = range(len(df))
        for term in ('total', 'l_det', 'l_mm', 'l_3d', 'l_2d'):
            if term in df and df[term].abs().sum() > 0:
                fig.add_trace(go.Scatter(
                    x=df['iteration'],
                    y=df[term].rolling(20, min_periods=1).mean(),
                    mode='lines',
                    name=term,
                ))
    fig.update_layout(title=title, xaxis_title="Iteration", yaxis_title="Loss", hovermode="x unified")
    return fig


def write_figure(fig: go.Figure, path: Path, include_plotlyjs: Optional[str] = "cdn") -> None:
    atomic_write_text(path, fig.to_html(include_plotlyjs=include_plotlyjs, full_html=True))
    logger.info(f"Wrote figure to {path}")
