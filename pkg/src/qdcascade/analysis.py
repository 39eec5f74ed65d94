"""Derived analyses: FSS extraction from polarization-resolved peak series,
time-gated fidelity, fidelity-vs-FSS threshold scans, and per-sample FSS
statistics for the shipped metadata dataset.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import polarization as pol
from .errors import InvalidInputError

# ---------------------------------------------------------------------------
# FSS from analyzer-angle peak series


@dataclass
class PolarizationSeries:
    """Exciton / biexciton peak-energy offsets versus analyzer angle.

    Energies are micro-eV offsets from an arbitrary reference; the common
    offset of each series is a fit nuisance parameter.
    """

    angles_deg: np.ndarray
    e_x_uev: np.ndarray
    e_xx_uev: np.ndarray
    sigma_uev: np.ndarray

    def __post_init__(self):
        self.angles_deg = np.asarray(self.angles_deg, dtype=float)
        self.e_x_uev = np.asarray(self.e_x_uev, dtype=float)
        self.e_xx_uev = np.asarray(self.e_xx_uev, dtype=float)
        self.sigma_uev = np.broadcast_to(
            np.asarray(self.sigma_uev, dtype=float), self.angles_deg.shape).copy()
        n = len(self.angles_deg)
        if not (len(self.e_x_uev) == len(self.e_xx_uev) == n):
            raise InvalidInputError("angle and energy series must have equal lengths")
        if n < 6:
            raise InvalidInputError("need at least 6 analyzer angles")
        if np.any(self.sigma_uev <= 0):
            raise InvalidInputError("per-point uncertainties must be > 0")

    @classmethod
    def from_csv(cls, text: str) -> "PolarizationSeries":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        expected = ["angle_deg", "e_x_uev", "e_xx_uev", "sigma_uev"]
        if header is None or [h.strip() for h in header[:4]] != expected:
            raise InvalidInputError(f"series CSV must start with header {','.join(expected)}")
        rows = [[float(v) for v in row[:4]] for row in reader if row]
        if not rows:
            raise InvalidInputError("series CSV has no data rows")
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


@dataclass
class FssFit:
    fss_uev: float
    fss_sigma_uev: float
    axis_angle_deg: float
    residual_rms_uev: float
    ok: bool = True


def fit_fss(series: PolarizationSeries, antiphase: bool = True) -> FssFit:
    """Joint sinusoidal fit of the X and XX peak oscillations.

    Model: e_x = a + (S/2) cos(2 theta - 2 theta0) and
    e_xx = b -/+ (S/2) cos(2 theta - 2 theta0) (anti-phase by default).
    In cos/sin components the model is linear, so the fit is a weighted
    linear least squares with the covariance taken from the normal matrix;
    S >= 0 falls out of the amplitude norm, the sign folding into theta0.
    """
    theta = np.deg2rad(series.angles_deg)
    c2, s2 = np.cos(2 * theta), np.sin(2 * theta)
    n = len(theta)
    sign = -1.0 if antiphase else 1.0

    # stacked design: params (a, b, C, D) with e_x = a + C c2 + D s2,
    # e_xx = b + sign*(C c2 + D s2)
    zeros = np.zeros(n)
    ones = np.ones(n)
    design = np.vstack([
        np.column_stack([ones, zeros, c2, s2]),
        np.column_stack([zeros, ones, sign * c2, sign * s2]),
    ])
    y = np.concatenate([series.e_x_uev, series.e_xx_uev])
    w = 1.0 / np.concatenate([series.sigma_uev, series.sigma_uev])
    aw = design * w[:, None]
    yw = y * w
    params, *_ = np.linalg.lstsq(aw, yw, rcond=None)
    cov = np.linalg.inv(aw.T @ aw)
    a, b, cc, dd = params

    amp = np.hypot(cc, dd)
    fss = 2.0 * amp
    theta0 = 0.5 * np.arctan2(dd, cc)
    if amp > 0:
        jac = np.array([0.0, 0.0, 2.0 * cc / amp, 2.0 * dd / amp])
        fss_sigma = float(np.sqrt(jac @ cov @ jac))
    else:
        fss_sigma = float(2.0 * np.sqrt(max(cov[2, 2], cov[3, 3])))

    residuals = y - design @ params
    rms = float(np.sqrt(np.mean(residuals ** 2)))
    ok = rms <= 5.0 * float(np.median(series.sigma_uev))
    return FssFit(float(fss), fss_sigma, float(np.rad2deg(theta0)), rms, ok=ok)


def synthetic_series(fss_uev: float, axis_angle_deg: float = 0.0, n_angles: int = 12,
                     noise_uev: float = 0.0, rng=None,
                     antiphase: bool = True) -> PolarizationSeries:
    """Generate a peak series with known splitting, for fixtures and tests."""
    angles = np.linspace(0.0, 180.0, n_angles, endpoint=False)
    osc = 0.5 * fss_uev * np.cos(2 * np.deg2rad(angles) - 2 * np.deg2rad(axis_angle_deg))
    sign = -1.0 if antiphase else 1.0
    e_x = osc.copy()
    e_xx = sign * osc
    sigma = max(noise_uev, 1e-3)
    if noise_uev > 0:
        if rng is None:
            raise InvalidInputError("noisy synthetic series needs an rng")
        e_x = e_x + rng.normal(0.0, noise_uev, n_angles)
        e_xx = e_xx + rng.normal(0.0, noise_uev, n_angles)
    return PolarizationSeries(angles, e_x, e_xx, np.full(n_angles, sigma))


# ---------------------------------------------------------------------------
# Time gating and threshold scans


def gate_fidelity(fss_uev: float, lifetime_ns: float, gate_ns: float | None,
                  background_beta: float = 0.0):
    """(fidelity, retained_fraction) of gating the emission delay at gate_ns.

    Fidelity is to the (|HH> + |VV>)/sqrt(2) target; retention is
    1 - exp(-gate/lifetime). ``gate_ns=None`` means no gate.
    """
    if gate_ns is not None and gate_ns <= 0:
        raise InvalidInputError("gate width must be > 0")
    rho = pol.time_averaged_rho(fss_uev, lifetime_ns, gate_ns)
    rho = pol.mix_with_background(rho, background_beta)
    f = pol.fidelity(rho, pol.BELL_PHI_PLUS)
    if gate_ns is None or np.isinf(gate_ns):
        retained = 1.0
    else:
        retained = 1.0 - np.exp(-gate_ns / lifetime_ns)
    return f, retained


@dataclass
class GateScan:
    gates_ns: np.ndarray
    fidelity: np.ndarray
    retained: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["gate_ns", "fidelity", "retained_fraction"])
        for g, f, r in zip(self.gates_ns, self.fidelity, self.retained):
            w.writerow([f"{g:.9g}", f"{f:.9g}", f"{r:.9g}"])
        return buf.getvalue()


def gate_scan(fss_uev: float, lifetime_ns: float, gates_ns,
              background_beta: float = 0.0) -> GateScan:
    gates = np.asarray(gates_ns, dtype=float)
    if gates.size == 0 or np.any(gates <= 0):
        raise InvalidInputError("gate grid must be nonempty and positive")
    pairs = [gate_fidelity(fss_uev, lifetime_ns, g, background_beta) for g in gates]
    return GateScan(gates, np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))


@dataclass
class ThresholdScan:
    fss_uev: np.ndarray
    fidelity: np.ndarray
    crossing_uev: float | None   # FSS where F = 0.5, None if the ideal floor holds
    note: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["fss_uev", "fidelity"])
        for s, f in zip(self.fss_uev, self.fidelity):
            w.writerow([f"{s:.9g}", f"{f:.9g}"])
        return buf.getvalue()


def threshold_scan(fss_grid_uev, lifetime_ns: float,
                   background_beta: float = 0.0) -> ThresholdScan:
    """Ungated fidelity over an FSS grid, reporting where it crosses 0.5.

    Without background the ideal model never drops below 0.5 and the scan
    reports that floor instead of a crossing.
    """
    grid = np.asarray(fss_grid_uev, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise InvalidInputError("FSS grid must be nonempty and strictly ascending")
    fvals = np.array([gate_fidelity(s, lifetime_ns, None, background_beta)[0]
                      for s in grid])
    if background_beta == 0:
        return ThresholdScan(grid, fvals, None, note="no crossing (floor 0.5)")

    def excess(s):
        return gate_fidelity(s, lifetime_ns, None, background_beta)[0] - 0.5

    crossing = None
    for i in range(grid.size - 1):
        if excess(grid[i]) > 0 >= excess(grid[i + 1]):
            crossing = float(brentq(excess, grid[i], grid[i + 1], xtol=1e-6))
            break
    note = "" if crossing is not None else "no crossing inside the scanned grid"
    return ThresholdScan(grid, fvals, crossing, note=note)


# ---------------------------------------------------------------------------
# Sample statistics


@dataclass(frozen=True)
class SampleRecord:
    """One measured dot with the growth metadata of its sample."""

    sample_id: str
    thickness_nm: float
    temp_c: float
    udmhy: bool
    e_x_mev: float
    fss_uev: float


SAMPLE_CSV_HEADER = ["sample_id", "thickness_nm", "temp_c", "udmhy", "e_x_mev", "fss_uev"]


def read_sample_records(text: str):
    """Parse the SampleRecord CSV schema; '#' lines are comments."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(io.StringIO("\n".join(lines)))
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:6]] != SAMPLE_CSV_HEADER:
        raise InvalidInputError(
            f"sample CSV must start with header {','.join(SAMPLE_CSV_HEADER)}")
    records = []
    for row in reader:
        if not row:
            continue
        flag = row[3].strip().lower()
        if flag not in ("yes", "no"):
            raise InvalidInputError(f"udmhy must be yes|no, got {row[3]!r}")
        records.append(SampleRecord(row[0].strip(), float(row[1]), float(row[2]),
                                    flag == "yes", float(row[4]), float(row[5])))
    return records


@dataclass
class GroupStats:
    sample_id: str
    n: int
    mean_uev: float
    std_uev: float | None   # sample standard deviation; None for flagged groups
    flagged: bool


def group_stats(records, min_count: int = 2):
    """Per-sample mean and sample standard deviation of the FSS.

    Groups below ``min_count`` members are flagged and get no standard
    deviation, mirroring the reporting choice of excluding tiny groups.
    """
    if not records:
        raise InvalidInputError("no records given")
    groups = {}
    for rec in records:
        groups.setdefault(rec.sample_id, []).append(rec.fss_uev)
    out = []
    for sample_id in sorted(groups):
        vals = np.array(groups[sample_id])
        flagged = len(vals) < min_count
        std = None if flagged else float(vals.std(ddof=1))
        out.append(GroupStats(sample_id, len(vals), float(vals.mean()), std, flagged))
    return out


def group_stats_csv(stats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["sample_id", "n", "mean_fss_uev", "std_fss_uev", "flagged"])
    for g in stats:
        w.writerow([g.sample_id, g.n, f"{g.mean_uev:.9g}",
                    "" if g.std_uev is None else f"{g.std_uev:.9g}",
                    "yes" if g.flagged else "no"])
    return buf.getvalue()
