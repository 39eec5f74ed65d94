"""Master-equation model of quantum-dot charge occupation under single- and
dual-wavelength non-resonant excitation.

The state space is {empty, e, h, X, X+, X-, XX}; capture rates are linear
in the two pump powers and the stationary occupation sets the relative
spectral-line intensities.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .errors import EstimationError, InvalidInputError

STATES = ("empty", "e", "h", "X", "X+", "X-", "XX")
INDEX = {s: i for i, s in enumerate(STATES)}
LINES = ("X", "X+", "X-", "XX")


@dataclass(frozen=True)
class PumpConfig:
    """Dual-wavelength pumping: a fixed above-bandgap pump (1590 meV) feeding
    mostly electrons, and a mid-gap pump (1180 meV) feeding holes.

    The conversion coefficients turn pump power (arbitrary units) into
    carrier capture rates in 1/ns; the photon energies are metadata only.
    """

    primary_power: float = 1.0
    secondary_power: float = 0.0
    k_e: float = 1.0
    k_h_primary: float = 0.1
    k_h_secondary: float = 1.0

    def __post_init__(self):
        if self.primary_power < 0 or self.secondary_power < 0:
            raise InvalidInputError("pump powers must be >= 0")
        if min(self.k_e, self.k_h_primary, self.k_h_secondary) < 0:
            raise InvalidInputError("conversion coefficients must be >= 0")

    @property
    def electron_rate(self) -> float:
        return self.k_e * self.primary_power

    @property
    def hole_rate(self) -> float:
        return self.k_h_primary * self.primary_power + self.k_h_secondary * self.secondary_power


@dataclass(frozen=True)
class RadiativeRates:
    """Radiative decay rates of the four observed lines, 1/ns."""

    gamma_x: float = 1.0
    gamma_xplus: float = 1.0
    gamma_xminus: float = 1.0
    gamma_xx: float = 2.0

    def __post_init__(self):
        if min(self.gamma_x, self.gamma_xplus, self.gamma_xminus, self.gamma_xx) < 0:
            raise InvalidInputError("radiative rates must be >= 0")

    def for_line(self, line: str) -> float:
        return {"X": self.gamma_x, "X+": self.gamma_xplus,
                "X-": self.gamma_xminus, "XX": self.gamma_xx}[line]


def build_rate_matrix(pump: PumpConfig, radiative: RadiativeRates,
                      sequential_pair_capture: bool = False) -> np.ndarray:
    """Generator matrix Q over STATES: Q[i, j] is the i -> j rate, rows sum
    to zero.

    Capture edges are linear in the pump-derived rates; the XX feeding
    channel is correlated pair capture min(c_e, c_h) by default, or trion +
    opposite-carrier capture when ``sequential_pair_capture`` is set.
    """
    c_e = pump.electron_rate
    c_h = pump.hole_rate
    q = np.zeros((7, 7))

    def add(src, dst, rate):
        if rate < 0:
            raise InvalidInputError(f"negative rate on edge {src}->{dst}")
        q[INDEX[src], INDEX[dst]] += rate

    add("empty", "e", c_e)
    add("empty", "h", c_h)
    add("e", "X", c_h)
    add("h", "X", c_e)
    add("X", "X-", c_e)
    add("X", "X+", c_h)
    if sequential_pair_capture:
        add("X-", "XX", c_h)
        add("X+", "XX", c_e)
    else:
        add("X", "XX", min(c_e, c_h))
    add("X", "empty", radiative.gamma_x)
    add("X-", "e", radiative.gamma_xminus)
    add("X+", "h", radiative.gamma_xplus)
    add("XX", "X", radiative.gamma_xx)

    q[np.diag_indices(7)] = -q.sum(axis=1)
    return q


def _absorbing_states(q: np.ndarray):
    out = -np.diagonal(q)
    return [STATES[i] for i in range(7) if out[i] <= 1e-15]


def steady_state(q: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Stationary occupation pi with pi Q = 0 and sum(pi) = 1.

    A chain with several closed classes has no unique stationary law and is
    rejected, except for the fully unpumped network whose only reachable
    rest state is the empty dot.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (7, 7):
        raise InvalidInputError("rate matrix must be 7x7 over the charge states")
    if np.max(np.abs(q.sum(axis=1))) > 1e-12 * max(1.0, float(np.abs(q).max())):
        raise InvalidInputError("rate-matrix rows must sum to zero")

    absorbing = _absorbing_states(q)
    if len(absorbing) > 1:
        if set(absorbing) == {"empty", "e", "h"} and np.allclose(q[INDEX["empty"]], 0):
            # no pumping at all: every cascade ends in a carrier-free dot
            pi = np.zeros(7)
            pi[INDEX["empty"]] = 1.0
            return pi
        raise EstimationError(
            "reducible chain: no unique steady state; absorbing states: "
            + ", ".join(absorbing))

    # null space of Q^T via SVD; also guards against hidden reducibility
    _, s, vh = np.linalg.svd(q.T)
    null_dim = int(np.sum(s < max(s.max(), 1.0) * 1e-12))
    if null_dim > 1:
        raise EstimationError(
            "reducible chain: stationary distribution is not unique; "
            "absorbing states: " + (", ".join(absorbing) or "none (multiple closed classes)"))
    pi = vh[-1]
    pi = pi / pi.sum()
    if pi.min() < -1e-9:
        raise EstimationError("stationary solve produced negative occupation")
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    residual = np.max(np.abs(pi @ q))
    if residual > tol:
        raise EstimationError(f"stationary residual {residual:g} exceeds {tol:g}")
    return pi


def line_intensities(pi: np.ndarray, radiative: RadiativeRates) -> dict:
    """Emitted photon rate per spectral line, photons/ns: I = Gamma * pi."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (7,) or pi.min() < 0 or abs(pi.sum() - 1.0) > 1e-8:
        raise InvalidInputError("occupation must be a length-7 probability vector")
    return {line: radiative.for_line(line) * pi[INDEX[line]] for line in LINES}


@dataclass
class SweepTable:
    """Line intensities along one pump-power axis."""

    axis: str
    powers: np.ndarray
    intensities: dict       # line -> array over the grid
    monotonic: dict         # line -> "increasing" | "decreasing" | "mixed"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["power", "I_X", "I_Xplus", "I_Xminus", "I_XX"])
        for i, p in enumerate(self.powers):
            w.writerow([f"{p:.9g}"] + [f"{self.intensities[line][i]:.9g}"
                                       for line in LINES])
        return buf.getvalue()


def _trend(values: np.ndarray) -> str:
    diffs = np.diff(values)
    tol = 1e-12 + 1e-9 * np.abs(values).max()
    if np.all(diffs >= -tol):
        return "increasing"
    if np.all(diffs <= tol):
        return "decreasing"
    return "mixed"


def pump_sweep(base: PumpConfig, axis: str, grid,
               radiative: RadiativeRates | None = None,
               sequential_pair_capture: bool = False) -> SweepTable:
    """Steady-state line intensities along a pump-power grid."""
    if axis not in ("primary", "secondary"):
        raise InvalidInputError("axis must be 'primary' or 'secondary'")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise InvalidInputError("power grid must be nonempty and strictly ascending")
    radiative = radiative or RadiativeRates()
    out = {line: np.empty(grid.size) for line in LINES}
    for i, p in enumerate(grid):
        pump = replace(base, **{f"{axis}_power": float(p)})
        pi = steady_state(build_rate_matrix(pump, radiative, sequential_pair_capture))
        for line, val in line_intensities(pi, radiative).items():
            out[line][i] = val
    return SweepTable(axis, grid, out, {line: _trend(v) for line, v in out.items()})


def neutral_crossover(base: PumpConfig, radiative: RadiativeRates | None = None,
                      p2_min: float = 1e-4, p2_max: float = 1e4,
                      rel_tol: float = 0.01) -> float:
    """Secondary-pump power where the X+ and X- line intensities are equal.

    Brackets the crossing on a log grid and refines it to the requested
    relative tolerance.
    """
    radiative = radiative or RadiativeRates()

    def imbalance(p2):
        pump = replace(base, secondary_power=float(p2))
        inten = line_intensities(steady_state(build_rate_matrix(pump, radiative)), radiative)
        return inten["X+"] - inten["X-"]

    grid = np.logspace(np.log10(p2_min), np.log10(p2_max), 81)
    values = [imbalance(p) for p in grid]
    for i in range(len(grid) - 1):
        if values[i] == 0:
            return float(grid[i])
        if values[i] < 0 <= values[i + 1]:
            lo, hi = grid[i], grid[i + 1]
            return float(brentq(imbalance, lo, hi, rtol=rel_tol))
    raise EstimationError("no neutral crossover inside the scanned power decade")
