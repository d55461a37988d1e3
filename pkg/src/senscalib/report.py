"""Standalone SVG figures: Pareto fronts and variance-share pie charts.

Figures are emitted as plain SVG strings with no plotting dependency so the
CLI can write them next to the JSON reports.  Text labels carry the numbers
(variable subsets, frequencies, percentage shares) so the figures remain
greppable and testable.
"""

import math

from .exceptions import EmptyInput

_PALETTE = [
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1",
    "#76b7b2", "#edc948", "#ff9da7", "#9c755f", "#bab0ac",
]


def _esc(text: str) -> str:
    return (
        str(text)
        .replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
    )


def _header(width: int, height: int, provenance: str) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f"<!-- {_esc(provenance)} -->",
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]


def pareto_svg(selection: dict, provenance: str = "senscalib") -> str:
    """Pareto front: mean optimal variance against subset size.

    Each size gets one marker labelled with its modal subset and selection
    frequency; a triangle marks the BIC-chosen model.
    """
    outputs = selection.get("outputs") or []
    if not outputs:
        raise EmptyInput("selection report has no outputs")
    out = outputs[0]
    pareto = out.get("pareto") or []
    if not pareto:
        raise EmptyInput("selection report has an empty Pareto front")

    width, height = 760, 460
    mleft, mright, mtop, mbot = 80, 220, 50, 70
    pw, ph = width - mleft - mright, height - mtop - mbot
    levels = [p["level"] for p in pareto]
    values = [p["mean_v"] for p in pareto]
    lo_l, hi_l = min(levels), max(levels)
    pos_vals = [v for v in values if v > 0]
    lo_v, hi_v = min(pos_vals), max(pos_vals)
    if hi_v <= lo_v:
        hi_v = lo_v * 10 if lo_v > 0 else 1.0

    def sx(level):
        if hi_l == lo_l:
            return mleft + pw / 2
        return mleft + pw * (level - lo_l) / (hi_l - lo_l)

    def sy(v):
        lv = math.log10(max(v, lo_v * 1e-3))
        return mtop + ph * (math.log10(hi_v) - lv) / (math.log10(hi_v) - math.log10(lo_v) or 1.0)

    parts = _header(width, height, provenance)
    parts.append(
        f'<text x="{width / 2:.0f}" y="28" text-anchor="middle" font-size="16">'
        f"Pareto front: prediction variance vs number of variables "
        f"({_esc(out.get('target_name', 'output'))})</text>"
    )
    # axes
    parts.append(
        f'<line x1="{mleft}" y1="{mtop + ph}" x2="{mleft + pw}" y2="{mtop + ph}" stroke="black"/>'
    )
    parts.append(f'<line x1="{mleft}" y1="{mtop}" x2="{mleft}" y2="{mtop + ph}" stroke="black"/>')
    parts.append(
        f'<text x="{mleft + pw / 2:.0f}" y="{height - 25}" text-anchor="middle" font-size="13">'
        "number of selected variables</text>"
    )
    parts.append(
        f'<text x="22" y="{mtop + ph / 2:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 22 {mtop + ph / 2:.0f})">mean optimal variance (log scale)</text>'
    )
    for level in range(int(lo_l), int(hi_l) + 1):
        parts.append(
            f'<text x="{sx(level):.1f}" y="{mtop + ph + 18:.1f}" text-anchor="middle" '
            f'font-size="12">{level}</text>'
        )

    # polyline through the front
    pts = " ".join(f"{sx(p['level']):.1f},{sy(p['mean_v']):.1f}" for p in pareto)
    parts.append(f'<polyline points="{pts}" fill="none" stroke="#888" stroke-width="1"/>')

    for p in pareto:
        x, y = sx(p["level"]), sy(p["mean_v"])
        parts.append(
            f'<circle class="pareto-point" cx="{x:.1f}" cy="{y:.1f}" r="5" fill="{_PALETTE[0]}"/>'
        )
        label = "+".join(p.get("modal_variables") or []) or "(none)"
        parts.append(
            f'<text x="{x + 8:.1f}" y="{y - 8:.1f}" font-size="11">{_esc(label)}</text>'
        )
        parts.append(
            f'<text x="{x + 8:.1f}" y="{y + 14:.1f}" font-size="10" fill="#555">'
            f"{p.get('modal_freq_pct', 100.0):.0f}%</text>"
        )

    chosen = out.get("chosen") or {}
    if chosen:
        x, y = sx(chosen["level"]), sy(chosen["v"])
        parts.append(
            f'<path class="chosen-marker" d="M {x:.1f} {y - 9:.1f} L {x - 8:.1f} {y + 7:.1f} '
            f'L {x + 8:.1f} {y + 7:.1f} Z" fill="#2ca02c"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{y + 24:.1f}" font-size="11" fill="#2ca02c" '
            f'text-anchor="middle">chosen: {_esc("+".join(chosen.get("alpha_names") or []) or "(none)")}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def pie_svg(pme: dict, provenance: str = "senscalib") -> str:
    """Variance-share pie chart from a PME report dictionary."""
    variables = pme.get("variables") or []
    shares = pme.get("share_pct") or []
    if not variables or not shares or len(variables) != len(shares):
        raise EmptyInput("PME report has no shares to plot")
    labels = list(variables) + ["model error"]
    values = [float(s) for s in shares] + [float(pme.get("model_error_share_pct", 0.0))]
    total = sum(values)
    if total <= 0:
        raise EmptyInput("PME shares sum to zero")
    # normalize so the printed labels add up to 100
    values = [100.0 * v / total for v in values]

    width, height = 640, 420
    cx, cy, r = 210, 220, 150
    parts = _header(width, height, provenance)
    parts.append(
        f'<text x="{width / 2:.0f}" y="28" text-anchor="middle" font-size="16">'
        "Output variance decomposition</text>"
    )
    angle = -math.pi / 2
    for i, (label, value) in enumerate(zip(labels, values)):
        frac = value / 100.0
        sweep = 2 * math.pi * frac
        x0, y0 = cx + r * math.cos(angle), cy + r * math.sin(angle)
        angle_end = angle + sweep
        x1, y1 = cx + r * math.cos(angle_end), cy + r * math.sin(angle_end)
        large = 1 if sweep > math.pi else 0
        color = _PALETTE[i % len(_PALETTE)] if label != "model error" else "#999999"
        if frac >= 0.999999:
            parts.append(f'<circle cx="{cx}" cy="{cy}" r="{r}" fill="{color}"/>')
        elif frac > 1e-9:
            parts.append(
                f'<path class="pie-slice" d="M {cx} {cy} L {x0:.2f} {y0:.2f} '
                f'A {r} {r} 0 {large} 1 {x1:.2f} {y1:.2f} Z" fill="{color}" stroke="white"/>'
            )
        angle = angle_end
    # legend with exact percentages
    ly = 80
    for i, (label, value) in enumerate(zip(labels, values)):
        color = _PALETTE[i % len(_PALETTE)] if label != "model error" else "#999999"
        parts.append(f'<rect x="420" y="{ly - 11}" width="14" height="14" fill="{color}"/>')
        parts.append(
            f'<text class="pie-label" x="442" y="{ly}" font-size="13">'
            f"{_esc(label)}: {value:.2f}%</text>"
        )
        ly += 24
    parts.append("</svg>")
    return "\n".join(parts)
