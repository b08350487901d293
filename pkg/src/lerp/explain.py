"""Per-word attention reports and a self-contained HTML heatmap."""

from __future__ import annotations

import html
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import EhrRecord
from .model import Network


def normalize_percent(alpha) -> np.ndarray:
    """Min-max rescale to [0, 100]; a constant vector maps to all 100."""
    alpha = np.asarray(alpha, dtype=np.float64)
    lo, hi = alpha.min(), alpha.max()
    if hi == lo:
        return np.full(alpha.shape, 100.0)
    # divide first so the maximum maps to exactly 100
    return 100.0 * ((alpha - lo) / (hi - lo))


@dataclass
class AttentionReport:
    record_id: str
    variant: str
    tokens: list[str]
    event_scores: list[float]  # percent, event-guided branch
    label_scores: list[float]  # percent, label-dependent branch
    raw_event_attention: list[float]
    raw_label_attention: list[float]
    label_names: list[str]
    probabilities: list[float]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def explain(network: Network, records: Sequence[EhrRecord]) -> list[AttentionReport]:
    scores, alpha_E, alpha_Y = network.predict(records)
    reports = []
    for rec, probs, a_e, a_y in zip(records, scores, alpha_E, alpha_Y):
        tokens = list(rec.note[: network.max_note_len])
        reports.append(
            AttentionReport(
                record_id=rec.id,
                variant=network.config.variant.value,
                tokens=tokens,
                event_scores=normalize_percent(a_e).tolist(),
                label_scores=normalize_percent(a_y).tolist(),
                raw_event_attention=a_e.tolist(),
                raw_label_attention=a_y.tolist(),
                label_names=list(network.label_names),
                probabilities=probs.tolist(),
            )
        )
    return reports


def _cell(token: str, percent: float) -> str:
    # white at 0 %, saturated red at 100 %
    fade = int(round(255 * (1.0 - percent / 100.0)))
    return (
        f'<span class="tok" style="background-color:#ff{fade:02x}{fade:02x}" '
        f'title="{percent:.1f}%">{html.escape(token)}</span>'
    )


_STYLE = """
body { font-family: sans-serif; margin: 1.5em; }
table { border-collapse: collapse; }
td, th { border: 1px solid #999; padding: 6px; vertical-align: top; text-align: left; }
.tok { padding: 1px 2px; margin: 1px; display: inline-block; }
.scale span { display: inline-block; width: 2.2em; text-align: center; font-size: 80%; }
"""


def render_html(report: AttentionReport) -> str:
    """Standalone page: one heatmap row per attention branch, no external resources."""
    branches = [
        ("event-guided", report.event_scores),
        ("label-dependent", report.label_scores),
    ]
    rows = []
    for name, scores in branches:
        cells = " ".join(_cell(t, s) for t, s in zip(report.tokens, scores))
        rows.append(f"<tr><th>{name}</th><td>{cells}</td></tr>")
    legend = "".join(_cell(f"{p}%", p).replace(' class="tok"', "") for p in range(0, 101, 20))
    preds = ", ".join(
        f"{html.escape(n)}: {p:.3f}" for n, p in zip(report.label_names, report.probabilities)
    )
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>Attention for {html.escape(report.record_id)}</title>"
        f"<style>{_STYLE}</style></head><body>\n"
        f"<h2>Record {html.escape(report.record_id)} ({html.escape(report.variant)})</h2>\n"
        f"<p class=\"scale\">Normalized attention: {legend}</p>\n"
        f"<table>\n{chr(10).join(rows)}\n</table>\n"
        f"<p>Predicted probabilities: {preds}</p>\n"
        "</body></html>\n"
    )


def write_reports(reports: Sequence[AttentionReport], out_dir) -> list[Path]:
    out = Path(out_dir) / "attention"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for rep in reports:
        stem = "".join(c if c.isalnum() or c in "-_." else "_" for c in rep.record_id)
        js, page = out / f"{stem}.json", out / f"{stem}.html"
        js.write_text(rep.to_json() + "\n", encoding="utf-8")
        page.write_text(render_html(rep), encoding="utf-8")
        written += [js, page]
    return written
