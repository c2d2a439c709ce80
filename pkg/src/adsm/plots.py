"""SVG output: per-video score curves and the mixture score-norm heat map."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np


def anomaly_intervals(labels) -> list[tuple[int, int]]:
    """Maximal runs of label 1 as ``(start, end)`` with ``end`` exclusive."""
    y = np.asarray(labels).astype(int)
    edges = np.diff(np.concatenate([[0], y, [0]]))
    return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


def score_curve_svg(video_id: str, indicator, labels, width: int = 640, height: int = 200) -> str:
    s = np.clip(np.asarray(indicator, dtype=np.float64), 0.0, 1.0)
    n = len(s)
    pad = 30
    iw, ih = width - 2 * pad, height - 2 * pad

    def px(f):
        return pad + iw * (f / max(n, 1))

    def py(v):
        return pad + ih * (1.0 - v)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<title>{escape(video_id)}</title>",
        f'<rect x="{pad}" y="{pad}" width="{iw}" height="{ih}" fill="white" stroke="#888"/>',
    ]
    if labels is not None:
        for a, b in anomaly_intervals(labels[:n]):
            parts.append(f'<rect class="anomaly" data-start="{a}" data-end="{b}" x="{px(a):.2f}" y="{pad}" '
                         f'width="{px(b) - px(a):.2f}" height="{ih}" fill="#f4a6a6" fill-opacity="0.6"/>')
    if n:
        pts = " ".join(f"{px(k + 0.5):.2f},{py(v):.2f}" for k, v in enumerate(s))
        parts.append(f'<polyline class="indicator" fill="none" stroke="#1f4e9c" stroke-width="1.5" points="{pts}"/>')
    parts.append(f'<text x="{pad}" y="{pad - 8}" font-size="12" font-family="sans-serif">'
                 f'{escape(video_id)}: anomaly indicator</text>')
    parts.append(f'<text x="{pad - 4}" y="{pad + 4}" font-size="10" text-anchor="end">1</text>')
    parts.append(f'<text x="{pad - 4}" y="{pad + ih + 4}" font-size="10" text-anchor="end">0</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_plots(scores: dict[str, np.ndarray], labels: dict[str, np.ndarray] | None, out) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for vid in sorted(scores):
        lab = None if labels is None else labels.get(vid)
        path = out / f"{vid}.svg"
        path.write_text(score_curve_svg(vid, scores[vid], lab))
        written.append(path)
    return written


def mixture_heatmap_svg(xs, ys, norm, density, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "adsm"  # stable element ids across runs
    fig, ax = plt.subplots(figsize=(6, 5))
    mesh = ax.pcolormesh(xs, ys, np.log10(norm + 1e-12), shading="auto", cmap="magma")
    fig.colorbar(mesh, ax=ax, label="log10 |grad log p|")
    ax.contour(xs, ys, density, levels=8, colors="white", linewidths=0.7)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title("score norm with density contours")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
