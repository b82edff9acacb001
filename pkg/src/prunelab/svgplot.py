"""Dependency-free static SVG line charts.

Output is a pure function of the input tables: same rows in, same bytes out.
Data series render as one <polyline> each; axes and ticks use <line>, so a
chart with one series contains exactly one polyline.
"""

from __future__ import annotations

from collections import defaultdict

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")

WIDTH, HEIGHT = 720, 480
ML, MR, MT, MB = 70, 24, 42, 56


class PlotInputError(ValueError):
    pass


def _esc(text):
    return (
        str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    )


def _bounds(values):
    lo, hi = min(values), max(values)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def render_line_chart(series, title="", x_label="", y_label=""):
    """series: iterable of (name, xs, ys); returns the SVG document string."""
    series = [(name, list(xs), list(ys)) for name, xs, ys in series]
    if not series or any(len(xs) == 0 or len(xs) != len(ys) for _, xs, ys in series):
        raise PlotInputError("every series needs matching, nonempty x and y values")
    x_lo, x_hi = _bounds([x for _, xs, _ in series for x in xs])
    y_lo, y_hi = _bounds([y for _, _, ys in series for y in ys])
    pw, ph = WIDTH - ML - MR, HEIGHT - MT - MB

    def sx(x):
        return ML + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return MT + (y_hi - y) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:.3f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{_esc(title)}</text>',
    ]
    # axes
    out.append(
        f'<line x1="{ML}" y1="{MT + ph}" x2="{ML + pw}" y2="{MT + ph}" stroke="#333333"/>'
    )
    out.append(f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{MT + ph}" stroke="#333333"/>')
    for i in range(5):
        fx = x_lo + (x_hi - x_lo) * i / 4
        fy = y_lo + (y_hi - y_lo) * i / 4
        px, py = sx(fx), sy(fy)
        out.append(
            f'<line x1="{px:.3f}" y1="{MT + ph}" x2="{px:.3f}" y2="{MT + ph + 5}" stroke="#333333"/>'
        )
        out.append(
            f'<text x="{px:.3f}" y="{MT + ph + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{fx:.4g}</text>'
        )
        out.append(
            f'<line x1="{ML - 5}" y1="{py:.3f}" x2="{ML}" y2="{py:.3f}" stroke="#333333"/>'
        )
        out.append(
            f'<text x="{ML - 8}" y="{py + 4:.3f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{fy:.4g}</text>'
        )
    out.append(
        f'<text x="{ML + pw / 2:.3f}" y="{HEIGHT - 14}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{_esc(x_label)}</text>'
    )
    out.append(
        f'<text x="16" y="{MT + ph / 2:.3f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13" transform="rotate(-90 16 {MT + ph / 2:.3f})">{_esc(y_label)}</text>'
    )
    for k, (name, xs, ys) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{sx(x):.3f},{sy(y):.3f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(
            f'<text x="{ML + pw - 6:.3f}" y="{MT + 16 + 16 * k}" text-anchor="end" '
            f'font-family="sans-serif" font-size="12" fill="{color}">{_esc(name)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _column(rows, name):
    try:
        return [float(r[name]) for r in rows]
    except (KeyError, TypeError):
        raise PlotInputError(f"table is missing column {name!r}") from None
    except ValueError:
        raise PlotInputError(f"column {name!r} holds non-numeric values") from None


def _mean_by(rows, x_col, y_col):
    groups = defaultdict(list)
    for r in rows:
        groups[float(r[x_col])].append(float(r[y_col]))
    xs = sorted(groups)
    return xs, [sum(groups[x]) / len(groups[x]) for x in xs]


def chart_for_kind(rows, kind, y_columns=None):
    """Build the chart for one of the known table kinds."""
    if not rows:
        raise PlotInputError("table has no data rows")
    if kind == "prunability-curve":
        _column(rows, "kept_fraction"), _column(rows, "train_ce")
        xs, ys = _mean_by(rows, "kept_fraction", "train_ce")
        return render_line_chart(
            [("train_ce", xs, ys)],
            title="pruning curve",
            x_label="kept fraction",
            y_label="train cross-entropy",
        )
    if kind == "double-descent":
        cols = y_columns or ["test_ce", "prunability"]
        _column(rows, "width")
        series = []
        for col in cols:
            _column(rows, col)
            xs, ys = _mean_by(rows, "width", col)
            series.append((col, xs, ys))
        return render_line_chart(
            series, title="width scaling", x_label="width", y_label="value"
        )
    if kind == "prune-vs-perturb":
        cols = [
            "delta_train_ce_prune", "delta_test_ce_prune",
            "delta_train_ce_perturb", "delta_test_ce_perturb",
        ]
        _column(rows, "fraction")
        series = []
        for col in cols:
            _column(rows, col)
            xs, ys = _mean_by(rows, "fraction", col)
            series.append((col, xs, ys))
        return render_line_chart(
            series,
            title="pruning vs equal-size random perturbation",
            x_label="fraction of weights removed",
            y_label="cross-entropy delta",
        )
    raise PlotInputError(f"unknown plot kind {kind!r}")
