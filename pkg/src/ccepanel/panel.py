"""Balanced panel container and long-format CSV ingestion.

The CSV schema is ``id,time,y,x1,...,xk`` (UTF-8, '.' decimal separator).
Units are ordered by first appearance in the file; periods are sorted
ascending by time label (numerically when every label parses as a number,
lexicographically otherwise).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError, PanelFormatError


@dataclass(frozen=True)
class Panel:
    """Balanced N x T panel of scalar outcomes and k-dimensional covariates.

    Attributes
    ----------
    outcomes : ndarray, shape (N, T)
    covariates : ndarray, shape (N, T, k)
    """

    outcomes: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.outcomes, dtype=float)
        x = np.asarray(self.covariates, dtype=float)
        if y.ndim != 2:
            raise InvalidInputError("outcomes must be an N x T matrix")
        if x.ndim != 3:
            raise InvalidInputError("covariates must be an N x T x k array")
        if x.shape[:2] != y.shape:
            raise InvalidInputError(
                f"covariate shape {x.shape} inconsistent with outcomes {y.shape}"
            )
        n, t = y.shape
        if n < 2 or t < 2:
            raise InvalidInputError(f"panel needs N >= 2 and T >= 2, got N={n}, T={t}")
        if x.shape[2] < 1:
            raise InvalidInputError("panel needs at least one covariate")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise InvalidInputError("panel contains non-finite cells (must be balanced)")
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "covariates", x)

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcomes.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[2]

    def subpanel(self, units=slice(None), periods=slice(None)) -> "Panel":
        """New Panel restricted to the given unit/period slices."""
        return Panel(
            self.outcomes[units, periods],
            self.covariates[units, periods, :],
        )


def read_panel_csv(path) -> Panel:
    """Parse a long-format CSV file into a balanced :class:`Panel`.

    Raises :class:`PanelFormatError` on a missing header, non-numeric
    fields (with the row number), duplicate (id, time) cells, or an
    unbalanced panel (listing up to 10 missing cells).
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise PanelFormatError(f"cannot read panel file: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 4 or header[0] != "id" or header[1] != "time" or header[2] != "y":
            raise PanelFormatError(
                f"{path}: header must be 'id,time,y,x1,...,xk', got {header!r}"
            )
        k = len(header) - 3
        expected_x = [f"x{j}" for j in range(1, k + 1)]
        if header[3:] != expected_x:
            raise PanelFormatError(
                f"{path}: covariate columns must be {expected_x}, got {header[3:]}"
            )

        unit_order: list[str] = []
        unit_index: dict[str, int] = {}
        times: set[str] = set()
        cells: dict[tuple[str, str], tuple[float, list[float]]] = {}
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise PanelFormatError(
                    f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}"
                )
            uid, tlabel = row[0].strip(), row[1].strip()
            try:
                vals = [float(c) for c in row[2:]]
            except ValueError:
                raise PanelFormatError(
                    f"{path}: non-numeric field in row {row_no}: {row!r}"
                ) from None
            key = (uid, tlabel)
            if key in cells:
                raise PanelFormatError(
                    f"{path}: duplicate cell (id={uid}, time={tlabel}) at row {row_no}"
                )
            if uid not in unit_index:
                unit_index[uid] = len(unit_order)
                unit_order.append(uid)
            times.add(tlabel)
            cells[key] = (vals[0], vals[1:])

    if not cells:
        raise PanelFormatError(f"{path}: no data rows")

    time_order = _sort_time_labels(times)
    missing = [
        (uid, tl) for uid in unit_order for tl in time_order if (uid, tl) not in cells
    ]
    if missing:
        shown = ", ".join(f"({u},{t})" for u, t in missing[:10])
        more = "" if len(missing) <= 10 else f" and {len(missing) - 10} more"
        raise PanelFormatError(f"{path}: unbalanced panel, missing cells {shown}{more}")

    n, t = len(unit_order), len(time_order)
    y = np.empty((n, t))
    x = np.empty((n, t, k))
    for i, uid in enumerate(unit_order):
        for s, tl in enumerate(time_order):
            yv, xv = cells[(uid, tl)]
            y[i, s] = yv
            x[i, s, :] = xv
    return Panel(y, x)


def _sort_time_labels(labels):
    try:
        return sorted(labels, key=float)
    except ValueError:
        return sorted(labels)


def write_panel_csv(panel: Panel, path) -> None:
    """Write a Panel in the long-format CSV schema (ids and times are 1-based)."""
    k = panel.n_covariates
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "time", "y"] + [f"x{j}" for j in range(1, k + 1)])
        for i in range(panel.n_units):
            for t in range(panel.n_periods):
                # repr of a python float is the shortest exact round trip
                row = [i + 1, t + 1, repr(float(panel.outcomes[i, t]))]
                row += [repr(float(v)) for v in panel.covariates[i, t]]
                writer.writerow(row)
