"""Model comparison tables: rows are models, columns are {Overall, Male, Female} x regressor."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

from .metrics import EvaluationReport

REGRESSOR_LABELS = {"ridge": "RR", "svr": "SVR", "cnn": "CNN"}
GROUPS = (("Overall", "mae_overall"), ("Male", "mae_male"), ("Female", "mae_female"))
NA = "N/A"


@dataclass(frozen=True)
class ComparisonTable:
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]  # first cell is the model label
    text: str
    csv: str


def _fmt(v: float | None) -> str:
    return NA if v is None else f"{v:.2f}"


def emit_tables(reports: Sequence[EvaluationReport]) -> ComparisonTable:
    if not reports:
        raise ValueError("no reports to tabulate")
    regs = sorted({r.regressor for r in reports}, key=lambda k: (list(REGRESSOR_LABELS).index(k)
                                                                 if k in REGRESSOR_LABELS else 99, k))
    models: list[str] = []
    for r in reports:
        if r.model not in models:
            models.append(r.model)
    by_key = {(r.model, r.regressor): r for r in reports}

    groups = [g for g in GROUPS
              if g[0] == "Overall" or any(getattr(r, g[1]) is not None for r in reports)]
    columns = ["Model"] + [f"{g} {REGRESSOR_LABELS.get(k, k.upper())}" for g, _ in groups for k in regs]
    rows = []
    for m in models:
        cells = [m]
        for _, attr in groups:
            for k in regs:
                rep = by_key.get((m, k))
                cells.append(_fmt(getattr(rep, attr) if rep is not None else None))
        rows.append(tuple(cells))

    # value cells are padded to the widest value, not the header, so rows stay compact
    label_w = max(len(columns[0]), *(len(r[0]) for r in rows))
    widths = [max(len(r[i]) for r in rows) for i in range(1, len(columns))]

    def line(cells):
        return " | ".join([cells[0].ljust(label_w)] + [c.rjust(w) for c, w in zip(cells[1:], widths)])

    header = " | ".join([columns[0].ljust(label_w), *columns[1:]])
    text_lines = [header, "-" * len(header)] + [line(r) for r in rows]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return ComparisonTable(tuple(columns), tuple(rows), "\n".join(text_lines) + "\n", buf.getvalue())
