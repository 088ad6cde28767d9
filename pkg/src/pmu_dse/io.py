"""CSV time series with fixed schemas.

Values are written with 17 significant digits so a write/read cycle is
lossless for float64. Readers check the header, cell contents, time
ordering and sampling uniformity.
"""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import numpy as np

from .network import PmuSeries, TerminalSeries
from .phasor import positive_sequence_array

log = logging.getLogger(__name__)

SCHEMAS = {
    "pmu": ("t", "v_mag", "v_ang", "i_mag", "i_ang", "tap"),
    "pmu3": ("t", "va_mag", "va_ang", "vb_mag", "vb_ang", "vc_mag", "vc_ang",
             "ia_mag", "ia_ang", "ib_mag", "ib_ang", "ic_mag", "ic_ang", "tap"),
    "terminal": ("t", "vt", "theta_t", "it", "phi_t"),
    "truth": ("t", "x1", "x2", "x3", "tm", "te", "ef"),
    "estimates": ("t", "x1_hat", "x3_hat", "te_hat", "x2_hat", "a1_hat", "a2_hat"),
    "diagnostics": ("t", "delta", "delta2_ma", "k_gamma1", "k_gamma2", "excitation_integral"),
    "playback": ("t", "x2_sim", "it_sim", "pt_sim", "qt_sim", "err_x2", "err_it", "err_pt", "err_qt"),
}

SAMPLING_TOLERANCE = 1e-3


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_table(path, kind: str, columns: dict) -> None:
    header = SCHEMAS[kind]
    missing = [c for c in header if c not in columns]
    if missing:
        raise SchemaError(f"{kind}: missing columns {missing}")
    cols = [np.asarray(columns[c], dtype=float) for c in header]
    n = len(cols[0])
    if any(len(c) != n for c in cols):
        raise ValueError(f"{kind}: columns have unequal lengths")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def read_table(path, kind: str, check_sampling: bool = True) -> dict:
    header = SCHEMAS[kind]
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path.name}: empty file")
    got = [h.strip() for h in rows[0]]
    if tuple(got) != header:
        for pos, (want, have) in enumerate(zip(header, got)):
            if want != have:
                raise SchemaError(f"{path.name}: column {pos + 1} is '{have}', expected '{want}'")
        raise SchemaError(f"{path.name}: expected {len(header)} columns {list(header)}, got {len(got)}")
    data = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise DataError(f"{path.name}: row {r + 2} has {len(row)} cells, expected {len(header)}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path.name}: row {r + 2}, column '{header[c]}': bad cell '{cell}'") from None
            if math.isnan(v):
                raise DataError(f"{path.name}: row {r + 2}, column '{header[c]}': NaN")
            data[r, c] = v
    if len(data) == 0:
        raise DataError(f"{path.name}: no data rows")
    t = data[:, 0]
    steps = np.diff(t)
    if np.any(steps <= 0):
        k = int(np.flatnonzero(steps <= 0)[0])
        raise DataError(f"{path.name}: timestamps not increasing at row {k + 3}")
    if check_sampling and len(steps):
        dt = np.median(steps)
        off = np.abs(steps - dt) > SAMPLING_TOLERANCE * dt
        if np.any(off):
            k = int(np.flatnonzero(off)[0])
            raise DataError(f"{path.name}: non-uniform sampling at row {k + 3} "
                            f"(step {steps[k]:.6g} vs {dt:.6g})")
    return {name: data[:, j].copy() for j, name in enumerate(header)}


def _polar(mag, ang):
    return np.asarray(mag) * np.exp(1j * np.asarray(ang))


def read_pmu_csv(path) -> PmuSeries:
    """Single-phase positive-sequence file, or a three-phase file reduced per row."""
    with open(path, newline="") as fh:
        first = fh.readline().strip().split(",")
    if len(first) == len(SCHEMAS["pmu3"]) and first[1] == "va_mag":
        d = read_table(path, "pmu3")
        v = positive_sequence_array(_polar(d["va_mag"], d["va_ang"]), _polar(d["vb_mag"], d["vb_ang"]),
                                    _polar(d["vc_mag"], d["vc_ang"]))
        i = positive_sequence_array(_polar(d["ia_mag"], d["ia_ang"]), _polar(d["ib_mag"], d["ib_ang"]),
                                    _polar(d["ic_mag"], d["ic_ang"]))
        log.info("%s: three-phase input reduced to positive sequence (%d rows)", path, len(v))
        return PmuSeries(d["t"], v, i, d["tap"])
    d = read_table(path, "pmu")
    return PmuSeries(d["t"], _polar(d["v_mag"], d["v_ang"]), _polar(d["i_mag"], d["i_ang"]), d["tap"])


def write_pmu_csv(path, pmu: PmuSeries) -> None:
    write_table(path, "pmu", dict(t=pmu.t, v_mag=np.abs(pmu.v), v_ang=np.angle(pmu.v),
                                  i_mag=np.abs(pmu.i), i_ang=np.angle(pmu.i), tap=pmu.tap))


def read_terminal_csv(path) -> TerminalSeries:
    d = read_table(path, "terminal")
    return TerminalSeries.from_polar(d["t"], d["vt"], d["theta_t"], d["it"], d["phi_t"])


def write_terminal_csv(path, y: TerminalSeries) -> None:
    write_table(path, "terminal", dict(t=y.t, vt=y.vt, theta_t=y.theta_t, it=y.it, phi_t=y.phi_t))


def read_truth_csv(path) -> dict:
    return read_table(path, "truth")


def write_truth_csv(path, t, x, tm, te, ef) -> None:
    x = np.asarray(x)
    write_table(path, "truth", dict(t=t, x1=x[:, 0], x2=x[:, 1], x3=x[:, 2], tm=tm, te=te, ef=ef))


def read_estimates_csv(path) -> dict:
    return read_table(path, "estimates")


def write_estimates_csv(path, **cols) -> None:
    write_table(path, "estimates", cols)


def read_diagnostics_csv(path) -> dict:
    return read_table(path, "diagnostics")


def write_diagnostics_csv(path, **cols) -> None:
    write_table(path, "diagnostics", cols)


def read_playback_csv(path) -> dict:
    return read_table(path, "playback")


def write_playback_csv(path, **cols) -> None:
    write_table(path, "playback", cols)
