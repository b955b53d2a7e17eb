"""Panel CSV format: header ``time,<response>,<cov1>,...``, log-price levels."""
from __future__ import annotations

import csv
import math

import numpy as np

from .preprocess import PricePanel

SPACING_RTOL = 1e-6


class PanelFormatError(ValueError):
    pass


def ingest_csv(path) -> PricePanel:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PanelFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[0].lower() != "time":
        raise PanelFormatError(
            f"{path}: header must be time,<response>,<covariate>... (got {','.join(header)})")
    width = len(header)
    data = []
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise PanelFormatError(f"{path}: line {r} has {len(row)} fields, expected {width}")
        vals = []
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise PanelFormatError(
                    f"{path}: line {r}, column {header[c]!r}: not a number ({cell!r})") from None
            if not math.isfinite(v):
                raise PanelFormatError(
                    f"{path}: line {r}, column {header[c]!r}: missing or non-finite value")
            vals.append(v)
        data.append(vals)
    if len(data) < 3:
        raise PanelFormatError(f"{path}: need at least 3 observations, got {len(data)}")
    arr = np.array(data)
    t = arr[:, 0]
    steps = np.diff(t)
    bad = np.flatnonzero(steps <= 0)
    if bad.size:
        raise PanelFormatError(f"{path}: time is not increasing at line {bad[0] + 3}")
    # the first step sets the grid; report the first row that leaves it
    off = np.flatnonzero(np.abs(steps - steps[0]) > SPACING_RTOL * steps[0])
    if off.size:
        raise PanelFormatError(
            f"{path}: non-uniform spacing at line {off[0] + 3} "
            f"(step {steps[off[0]]:.6g}, expected {steps[0]:.6g})")
    delta = (t[-1] - t[0]) / steps.size
    # snap to the exact grid the tolerance admits
    times = t[0] + np.arange(t.size) * delta
    return PricePanel(times, arr[:, 1], arr[:, 2:], tuple(header[2:]), header[1])


def export_csv(panel: PricePanel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", panel.response_label, *panel.labels])
        for i in range(panel.times.size):
            w.writerow([repr(float(panel.times[i])), repr(float(panel.response[i])),
                        *(repr(float(x)) for x in panel.covariates[i])])
