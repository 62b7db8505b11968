"""Rapport d'un balayage : CSV de régression et figures SVG autonomes.

Les figures sont construites à la main (rectangles, lignes, polylignes et
texte) et ne contiennent aucune date, pour qu'un même CSV donne toujours le
même fichier.
"""

__copyright__ = "Copyright (C) 2024 Grostim"
__license__ = "GNU GPLv2"

import csv
import logging
import math
from typing import Dict, List, Sequence, Tuple

from ..crawler.crawler import WALK
from ..dyna.dyna import (
    SWEEP_COLUMNS,
    Aggregate,
    CellResult,
    Regression,
    aggregate_cells,
    regression_csv,
)
from ..myutils import atomic_write_text
from ..ppo.ppo import Trace

logger = logging.getLogger(__name__)

PANEL_WIDTH = 360
PANEL_HEIGHT = 300
MARGIN = 50
POINT_SIZE = 6
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


class ReportError(ValueError):
    "Un rapport impossible à produire."


class SvgCanvas:
    """Construction incrémentale d'un document SVG."""

    def __init__(self, width: float, height: float):
        self.width = width
        self.height = height
        self.parts: List[str] = []

    def rect(self, x, y, width, height, fill="none", stroke="none"):
        self.parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{width:.2f}" '
            f'height="{height:.2f}" fill="{fill}" stroke="{stroke}"/>'
        )

    def line(self, x1, y1, x2, y2, stroke="#000000", width=1.0, dash=None):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
            f'stroke="{stroke}" stroke-width="{width:.1f}"{extra}/>'
        )

    def polyline(self, points, stroke="#000000", width=1.0):
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{width:.1f}"/>'
        )

    def text(self, x, y, content, size=12, anchor="start"):
        content = (
            str(content)
            .replace("&", "&amp;")
            .replace("<", "&lt;")
            .replace(">", "&gt;")
        )
        self.parts.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-family="sans-serif" '
            f'font-size="{size}" text-anchor="{anchor}">{content}</text>'
        )

    def render(self) -> str:
        header = (
            '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
            f'width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">'
        )
        return "\n".join([header, *self.parts, "</svg>"]) + "\n"


class _Axis:
    """Projection linéaire d'un intervalle de données sur des pixels."""

    def __init__(self, low: float, high: float, start: float, end: float):
        if not high > low:
            pad = max(abs(low), 1.0) * 0.1
            low, high = low - pad, high + pad
        self.low, self.high = low, high
        self.start, self.end = start, end

    def __call__(self, value: float) -> float:
        ratio = (value - self.low) / (self.high - self.low)
        return self.start + ratio * (self.end - self.start)


def _padded(values: Sequence[float]) -> Tuple[float, float]:
    low, high = min(values), max(values)
    pad = 0.05 * (high - low)
    return low - pad, high + pad


def _frame(canvas, left, top, x_axis, y_axis, title, x_label, y_label):
    right, bottom = left + PANEL_WIDTH, top + PANEL_HEIGHT
    canvas.rect(left, top, PANEL_WIDTH, PANEL_HEIGHT, stroke="#000000")
    canvas.text(left + PANEL_WIDTH / 2, top - 10, title, 13, "middle")
    canvas.text(left + PANEL_WIDTH / 2, bottom + 35, x_label, 11, "middle")
    canvas.text(left - 40, top + PANEL_HEIGHT / 2, y_label, 11, "middle")
    for value in (x_axis.low, x_axis.high):
        canvas.text(x_axis(value), bottom + 15, f"{value:.3g}", 10, "middle")
    for value in (y_axis.low, y_axis.high):
        canvas.text(left - 4, y_axis(value) + 4, f"{value:.3g}", 10, "end")
    if y_axis.low < 0.0 < y_axis.high:
        canvas.line(left, y_axis(0.0), right, y_axis(0.0), "#999999", 1.0,
                    "4,3")


def scatter_svg(
    aggregates: Sequence[Aggregate], regressions: Dict[int, Regression]
) -> str:
    """
    Un panneau par budget : médiane de l'amélioration en fonction du DoF,
    droite des moindres carrés et annotation du r².

    Args:
        aggregates (Sequence[Aggregate]): Les agrégats d'une tâche.
        regressions (Dict[int, Regression]): Régression par budget.

    Returns:
        str: Le document SVG.
    """
    budgets = sorted(regressions)
    canvas = SvgCanvas(
        len(budgets) * (PANEL_WIDTH + 2 * MARGIN), PANEL_HEIGHT + 2 * MARGIN
    )
    for index, budget in enumerate(budgets):
        reg = regressions[budget]
        points = [
            (a.dof, a.median_pct) for a in aggregates if a.budget == budget
        ]
        xs = [x for x, _ in points]
        ends = [reg.slope * x + reg.intercept for x in (min(xs), max(xs))]
        left = MARGIN + index * (PANEL_WIDTH + 2 * MARGIN)
        x_axis = _Axis(*_padded(xs), left, left + PANEL_WIDTH)
        y_axis = _Axis(
            *_padded([y for _, y in points] + ends),
            MARGIN + PANEL_HEIGHT,
            MARGIN,
        )
        _frame(
            canvas,
            left,
            MARGIN,
            x_axis,
            y_axis,
            f"|D|={budget}",
            "DoF",
            "médiane %",
        )
        canvas.line(
            x_axis(min(xs)),
            y_axis(ends[0]),
            x_axis(max(xs)),
            y_axis(ends[1]),
            COLORS[1],
            1.5,
        )
        for x, y in points:
            canvas.rect(
                x_axis(x) - POINT_SIZE / 2,
                y_axis(y) - POINT_SIZE / 2,
                POINT_SIZE,
                POINT_SIZE,
                fill=COLORS[0],
            )
        canvas.text(
            left + 8,
            MARGIN + 18,
            f"R2={reg.r_squared:.3f}  pente={reg.slope:.3g}",
            11,
        )
    return canvas.render()


def trace_svg(
    traces: Dict[str, Trace], title: str = "Hauteur du corps"
) -> str:
    """Courbes de hauteur z du corps par pas, une couleur par politique."""
    if not traces:
        raise ReportError("Aucune trace à tracer")
    canvas = SvgCanvas(
        PANEL_WIDTH + 2 * MARGIN + 120, PANEL_HEIGHT + 2 * MARGIN
    )
    longest = max(len(trace.z) for trace in traces.values())
    heights = [float(z) for trace in traces.values() for z in trace.z]
    x_axis = _Axis(0.0, float(max(longest - 1, 1)), MARGIN,
                   MARGIN + PANEL_WIDTH)
    y_axis = _Axis(*_padded(heights), MARGIN + PANEL_HEIGHT, MARGIN)
    _frame(canvas, MARGIN, MARGIN, x_axis, y_axis, title, "pas", "z (m)")
    for index, (name, trace) in enumerate(traces.items()):
        color = COLORS[index % len(COLORS)]
        canvas.polyline(
            [(x_axis(step), y_axis(z)) for step, z in enumerate(trace.z)],
            color,
            1.5,
        )
        legend_y = MARGIN + 15 + 18 * index
        canvas.line(MARGIN + PANEL_WIDTH + 15, legend_y - 4,
                    MARGIN + PANEL_WIDTH + 35, legend_y - 4, color, 2.0)
        canvas.text(MARGIN + PANEL_WIDTH + 40, legend_y, name, 11)
    return canvas.render()


def _parse_float(text: str) -> float:
    return float(text) if text else math.nan


def read_sweep_csv(path: str) -> List[CellResult]:
    """
    Relit le CSV d'un balayage.

    Une ligne dont l'amélioration n'est pas finie est une cellule en échec.

    Raises:
        ReportError: En-tête inattendu ou ligne mal formée.
    """
    cells = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(header) != SWEEP_COLUMNS:
            raise ReportError(f"En-tête de balayage inattendu dans {path}")
        for number, row in enumerate(reader, start=2):
            try:
                if len(row) != len(SWEEP_COLUMNS):
                    raise ValueError(f"{len(row)} colonnes")
                values = dict(zip(SWEEP_COLUMNS, row))
                pct = _parse_float(values["pct_improvement"])
                cells.append(
                    CellResult(
                        preset=values["preset"],
                        dof=int(values["dof"]),
                        budget=int(values["budget"]),
                        seed=int(values["seed"]),
                        task=values["task"],
                        score_random=_parse_float(values["score_random"]),
                        score_mfrl=_parse_float(values["score_mfrl"]),
                        score_selfmodel=_parse_float(
                            values["score_selfmodel"]
                        ),
                        pct_improvement=pct,
                        raw_ratio=_parse_float(values["raw_ratio"]),
                        model_val_loss=_parse_float(values["model_val_loss"]),
                        wall_time_s=_parse_float(values["wall_time_s"]),
                        error=None if math.isfinite(pct) else "échec",
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ReportError(
                    f"{path}, ligne {number} mal formée : {exc}"
                ) from exc
    return cells


def emit_report(
    sweep_path: str, csv_out: str, svg_out: str, task: str = WALK
) -> Dict[int, Regression]:
    """
    Produit le CSV de régression et la figure d'un balayage.

    Rien n'est écrit si le rapport est impossible.

    Args:
        sweep_path (str): Le CSV du balayage.
        csv_out (str): Le CSV de régression à écrire.
        svg_out (str): La figure SVG à écrire.
        task (str, optional): La tâche rapportée.

    Returns:
        Dict[int, Regression]: La régression de chaque budget.

    Raises:
        ReportError: Moins de deux groupes de DoF pour la tâche.
    """
    cells = [c for c in read_sweep_csv(sweep_path) if c.task == task]
    aggregates, by_key = aggregate_cells(cells)
    if len({a.dof for a in aggregates}) < 2:
        raise ReportError(
            f"Au moins deux groupes de DoF sont nécessaires pour la tâche "
            f"{task} ({len(cells)} cellules lues)"
        )
    regressions = {budget: reg for (_, budget), reg in by_key.items()}
    if not regressions:
        raise ReportError("Aucun budget ne couvre deux groupes de DoF")
    svg = scatter_svg(aggregates, regressions)
    atomic_write_text(csv_out, regression_csv(regressions))
    atomic_write_text(svg_out, svg)
    for budget, reg in sorted(regressions.items()):
        logger.info(
            "Régression |D|=%d : pente %.4g, r² %.3f sur %d points",
            budget,
            reg.slope,
            reg.r_squared,
            reg.n_points,
        )
    return regressions
