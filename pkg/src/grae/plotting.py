"""Scatter plots of 2-D embeddings.

:func:`emit_scatter` writes a dependency-free SVG (one ``<circle>`` per
point) whose bytes depend only on its inputs. :func:`save_report_figure`
renders a matplotlib PNG summary of a trained pair of models.
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .mds import Embedding
from .numerics import as_matrix

# Samples of the viridis colormap at 9 evenly spaced positions.
VIRIDIS_STOPS = (
    (0x44, 0x01, 0x54),
    (0x47, 0x2D, 0x7B),
    (0x3B, 0x52, 0x8B),
    (0x2C, 0x72, 0x8E),
    (0x21, 0x91, 0x8C),
    (0x28, 0xAE, 0x80),
    (0x5E, 0xC9, 0x62),
    (0xAD, 0xDC, 0x30),
    (0xFD, 0xE7, 0x25),
)
TRAIN_GRAY = "#bdbdbd"


class PlotError(ValueError):
    pass


def ramp_color(u: float) -> str:
    """Hex colour at position ``u`` in [0, 1] along the viridis ramp."""
    u = min(max(float(u), 0.0), 1.0)
    pos = u * (len(VIRIDIS_STOPS) - 1)
    i = min(int(pos), len(VIRIDIS_STOPS) - 2)
    frac = pos - i
    lo, hi = np.array(VIRIDIS_STOPS[i], float), np.array(VIRIDIS_STOPS[i + 1], float)
    r, g, b = np.rint(lo + frac * (hi - lo)).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def emit_scatter(
    embedding,
    color_values: Sequence[float],
    out_path,
    test_mask: Optional[Sequence[bool]] = None,
    size: int = 480,
    radius: float = 2.5,
    margin: int = 12,
) -> Path:
    """Write a square, axis-free SVG scatter of a 2-D embedding.

    Points are coloured by ``color_values`` on a viridis ramp. With a
    ``test_mask``, training points (mask False) are drawn first in gray and
    test points on top in colour.
    """
    coords = embedding.coords if isinstance(embedding, Embedding) else as_matrix(embedding, "embedding")
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise PlotError(f"scatter needs a 2-D embedding, got shape {coords.shape}")
    c = np.asarray(color_values, dtype=np.float64).ravel()
    if c.size != coords.shape[0]:
        raise PlotError("one colour value per point is required")
    mask = None if test_mask is None else np.asarray(test_mask, dtype=bool).ravel()
    if mask is not None and mask.size != coords.shape[0]:
        raise PlotError("test_mask length must match the embedding")

    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    inner = size - 2 * margin
    # keep the aspect ratio; centre the shorter axis
    offset = (inner - (hi - lo) / span * inner) / 2.0
    px = margin + offset[0] + (coords[:, 0] - lo[0]) / span * inner
    py = size - (margin + offset[1] + (coords[:, 1] - lo[1]) / span * inner)

    colored = np.ones(c.size, dtype=bool) if mask is None else mask
    cmin = float(c[colored].min()) if colored.any() else 0.0
    cmax = float(c[colored].max()) if colored.any() else 1.0
    crange = cmax - cmin

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    order = np.arange(c.size) if mask is None else np.concatenate([np.flatnonzero(~mask), np.flatnonzero(mask)])
    for i in order:
        if colored[i]:
            fill = ramp_color((c[i] - cmin) / crange if crange > 0 else 0.0)
        else:
            fill = TRAIN_GRAY
        lines.append(f'<circle cx="{px[i]:.3f}" cy="{py[i]:.3f}" r="{radius:g}" fill="{fill}"/>')
    lines.append("</svg>")
    out = Path(out_path)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def save_report_figure(out_path, panels, history=None, title: str = "") -> Path:
    """PNG with one latent scatter per model plus optional loss curves.

    ``panels`` is a list of ``(label, train_latent, test_latent, test_colors)``.
    ``history`` maps a model label to its list of loss reports.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ncols = len(panels) + (1 if history else 0)
    fig, axes = plt.subplots(1, ncols, figsize=(3.6 * ncols, 3.6), squeeze=False)
    axes = axes[0]
    for ax, (label, z_train, z_test, colors) in zip(axes, panels):
        ax.scatter(z_train[:, 0], z_train[:, 1], s=3, c=TRAIN_GRAY, linewidths=0)
        ax.scatter(z_test[:, 0], z_test[:, 1], s=6, c=colors, cmap="viridis", linewidths=0)
        ax.set_title(label, fontsize=10)
        ax.set_xticks([])
        ax.set_yticks([])
        ax.set_aspect("equal", adjustable="datalim")
    if history:
        ax = axes[-1]
        for label, reports in history.items():
            ax.plot([r.reconstruction for r in reports], label=f"{label} recon")
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_title("reconstruction loss", fontsize=10)
        ax.legend(fontsize=8, frameon=False)
        ax.spines["right"].set_visible(False)
        ax.spines["top"].set_visible(False)
    if title:
        fig.suptitle(title, fontsize=11)
    fig.tight_layout()
    out = Path(out_path)
    fig.savefig(out, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return out
