"""2-D projection of sentence representations and deterministic plots.

PCA (top two principal components) stands in for stochastic neighbour
methods: it is deterministic, dependency-free, and preserves the only
thing the plots are read for, the relative cluster structure of
representations across languages. Component signs are fixed by making
the largest-magnitude loading positive, so identical input yields
byte-identical output files.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class ProjectionOutput:
    rows: list  # (label, language, x, y)

    def __len__(self):
        return len(self.rows)


def project_2d(vectors, labels, languages):
    """Mean-center, project on the top-2 principal components."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("need at least three vectors of equal length")
    if len(labels) != x.shape[0] or len(languages) != x.shape[0]:
        raise ValueError("labels and languages must match vector count")
    if len({tuple(v) for v in x}) < 2:
        raise ValueError("projection needs at least two distinct vectors")
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    if comps.shape[0] < 2:  # single feature column: pad a zero axis
        comps = np.vstack([comps, np.zeros_like(comps)])
    for i in range(2):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    proj = centered @ comps.T
    rows = [(str(l), str(g), float(px), float(py))
            for l, g, (px, py) in zip(labels, languages, proj)]
    return ProjectionOutput(rows)


def mean_crosslingual_cosine_distance(vectors_by_lang):
    """Mean 1-cos(u,v) over aligned sentence pairs across language pairs.

    A numeric companion to the scatter plots: lower means matched
    sentences sit closer across languages.
    """
    langs = sorted(vectors_by_lang)
    total, count = 0.0, 0
    for i, a in enumerate(langs):
        for b in langs[i + 1:]:
            u = np.asarray(vectors_by_lang[a], dtype=np.float64)
            v = np.asarray(vectors_by_lang[b], dtype=np.float64)
            nu = np.linalg.norm(u, axis=1)
            nv = np.linalg.norm(v, axis=1)
            cos = (u * v).sum(axis=1) / np.maximum(nu * nv, 1e-12)
            total += float((1.0 - cos).sum())
            count += len(cos)
    return total / max(count, 1)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#17becf", "#7f7f7f")

_W, _H, _PAD = 640, 480, 48


def _scale(rows):
    xs = [r[2] for r in rows]
    ys = [r[3] for r in rows]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    dx = (x1 - x0) or 1.0
    dy = (y1 - y0) or 1.0

    def to_px(x, y):
        px = _PAD + (x - x0) / dx * (_W - 2 * _PAD)
        py = _H - _PAD - (y - y0) / dy * (_H - 2 * _PAD)
        return px, py

    return to_px


def render_scatter(proj, out_path):
    """Write `<out_path>.csv` and `<out_path>.svg` (or honor a given
    .svg/.csv suffix). Byte-deterministic for identical projections."""
    if not proj.rows:
        raise ValueError("empty projection")
    base = out_path
    for suffix in (".svg", ".csv"):
        if base.endswith(suffix):
            base = base[:-len(suffix)]
    csv_path, svg_path = base + ".csv", base + ".svg"

    with open(csv_path, "w", encoding="utf-8") as f:
        f.write("label,language,x,y\n")
        for label, lang, x, y in proj.rows:
            f.write(f"{label},{lang},{x:.6f},{y:.6f}\n")

    langs = []
    for row in proj.rows:
        if row[1] not in langs:
            langs.append(row[1])
    color = {l: _PALETTE[i % len(_PALETTE)] for i, l in enumerate(langs)}
    to_px = _scale(proj.rows)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
        f'height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_PAD}" y="{_PAD}" width="{_W - 2 * _PAD}" '
        f'height="{_H - 2 * _PAD}" fill="none" stroke="#cccccc"/>',
    ]
    for label, lang, x, y in proj.rows:
        px, py = to_px(x, y)
        parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" '
                     f'fill="{color[lang]}" fill-opacity="0.75">'
                     f'<title>{label}</title></circle>')
    for i, lang in enumerate(langs):
        ly = _PAD + 14 + 16 * i
        parts.append(f'<circle cx="{_W - _PAD - 70}" cy="{ly - 4}" r="4" '
                     f'fill="{color[lang]}"/>')
        parts.append(f'<text x="{_W - _PAD - 60}" y="{ly}" '
                     f'font-family="sans-serif" font-size="12">{lang}</text>')
    parts.append("</svg>")
    with open(svg_path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
    return csv_path, svg_path
