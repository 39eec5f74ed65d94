"""Exact two-photon polarization math for the biexciton-exciton cascade.

Single- and two-photon kets, density matrices, the time-evolved cascade
state with a finite fine-structure splitting (FSS), time-averaged density
matrices (optionally gated on the emission delay), and the fidelity /
degree-of-correlation formulas used throughout the analysis chain.

Conventions fixed project-wide:
  * circular basis R = (1, i)/sqrt(2), L = (1, -i)/sqrt(2)
  * two-photon basis order (HH, HV, VH, VV) everywhere, including files
  * FSS is stored as a magnitude; its sign is absorbed into the phase origin
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, InvalidInputError

# Planck constant in micro-eV * ns (CODATA); the FSS phase is 2*pi*S*tau/h.
PLANCK_H_UEV_NS = 4.135667696

BASIS_ORDER = ("HH", "HV", "VH", "VV")

_SQ2 = 1.0 / np.sqrt(2.0)

_BASIS_KETS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([_SQ2, _SQ2], dtype=complex),
    "A": np.array([_SQ2, -_SQ2], dtype=complex),
    "R": np.array([_SQ2, 1j * _SQ2], dtype=complex),
    "L": np.array([_SQ2, -1j * _SQ2], dtype=complex),
}

#: orthogonal partner of each analyzer basis label
ORTHOGONAL = {"H": "V", "V": "H", "D": "A", "A": "D", "R": "L", "L": "R"}

#: which measurement basis a label belongs to
BASIS_OF = {"H": "linear", "V": "linear", "D": "diagonal", "A": "diagonal",
            "R": "circular", "L": "circular"}


@dataclass(frozen=True)
class FssSplitting:
    """Fine-structure splitting magnitude with its uncertainty, in micro-eV."""

    value_uev: float
    uncertainty_uev: float = 0.0

    def __post_init__(self):
        if self.value_uev < 0:
            raise InvalidInputError("FSS is stored as a magnitude; value must be >= 0")
        if self.uncertainty_uev < 0:
            raise InvalidInputError("FSS uncertainty must be >= 0")


@dataclass(frozen=True)
class DegreesOfCorrelation:
    """Normalized co/cross coincidence contrasts in the three bases."""

    c_linear: float
    c_diagonal: float
    c_circular: float

    def __post_init__(self):
        for name in ("c_linear", "c_diagonal", "c_circular"):
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                raise InvalidInputError(f"{name}={v} outside [-1, 1]")


def basis_ket(label: str) -> np.ndarray:
    """Single-photon analyzer ket for one of the labels H, V, D, A, R, L."""
    try:
        return _BASIS_KETS[label].copy()
    except KeyError:
        raise InvalidInputError(f"unknown basis label {label!r}; expected one of HVDARL") from None


def _fss_value(fss) -> float:
    if isinstance(fss, FssSplitting):
        return fss.value_uev
    return float(fss)


def cascade_ket(fss, tau_ns: float) -> np.ndarray:
    """Two-photon state (|HH> + e^{i phi}|VV>)/sqrt(2) with phi = 2 pi S tau / h.

    ``fss`` may be a plain magnitude in micro-eV or an :class:`FssSplitting`.
    """
    if tau_ns < 0:
        raise InvalidInputError("emission delay tau must be >= 0")
    s = _fss_value(fss)
    phi = 2.0 * np.pi * s * tau_ns / PLANCK_H_UEV_NS
    return np.array([_SQ2, 0.0, 0.0, _SQ2 * np.exp(1j * phi)], dtype=complex)


#: the target maximally entangled state (|HH> + |VV>)/sqrt(2)
BELL_PHI_PLUS = cascade_ket(0.0, 0.0)


def cascade_phase_expectation(fss_uev: float, lifetime_ns: float,
                              gate_ns: float | None = None) -> complex:
    """E[e^{i phi(tau)}] over tau ~ Exp(lifetime), optionally truncated at the gate.

    Closed form: 1/(1 - i x) with x = 2 pi S T / h for the ungated case; the
    gated case uses the expectation over the truncated exponential density.
    """
    if lifetime_ns <= 0:
        raise InvalidInputError("exciton lifetime must be > 0")
    a = 2.0 * np.pi * fss_uev / PLANCK_H_UEV_NS  # phase rate, rad/ns
    if gate_ns is None or np.isinf(gate_ns):
        return 1.0 / (1.0 - 1j * a * lifetime_ns)
    if gate_ns <= 0:
        raise InvalidInputError("gate width must be > 0")
    z = 1.0 / lifetime_ns - 1j * a
    num = (1.0 - np.exp(-z * gate_ns)) / z
    den = lifetime_ns * (1.0 - np.exp(-gate_ns / lifetime_ns))
    return num / den


def time_averaged_rho(fss_uev: float, lifetime_ns: float,
                      gate_ns: float | None = None) -> np.ndarray:
    """Density matrix of the cascade state averaged over the emission delay.

    Diagonal (1/2, 0, 0, 1/2); the HH-VV coherence is E[e^{i phi}]/2 with the
    expectation taken over the exponential delay density, truncated at
    ``gate_ns`` when a gate is given.
    """
    coh = 0.5 * cascade_phase_expectation(fss_uev, lifetime_ns, gate_ns)
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = rho[3, 3] = 0.5
    # basis order (HH, HV, VH, VV): <HH|rho|VV> = conj(E[e^{i phi}])/2
    rho[0, 3] = np.conj(coh)
    rho[3, 0] = coh
    return rho


def mix_with_background(rho: np.ndarray, beta: float) -> np.ndarray:
    """(1-beta) * rho + beta * I/4; models uncorrelated background counts."""
    if not 0.0 <= beta <= 1.0:
        raise InvalidInputError("background fraction beta must be in [0, 1]")
    return (1.0 - beta) * np.asarray(rho, dtype=complex) + beta * np.eye(4) / 4.0


def fidelity(rho: np.ndarray, target: np.ndarray) -> float:
    """Overlap <psi|rho|psi> of the state with a pure target ket."""
    t = np.asarray(target, dtype=complex)
    val = np.vdot(t, np.asarray(rho, dtype=complex) @ t)
    if abs(val.imag) > 1e-10:
        raise InvalidInputError("fidelity came out non-real; rho is not Hermitian")
    return float(val.real)


def fidelity_from_correlations(c: DegreesOfCorrelation) -> float:
    """F = (1 + C_linear + C_diagonal - C_circular)/4."""
    return (1.0 + c.c_linear + c.c_diagonal - c.c_circular) / 4.0


def degree_of_correlation(g2_co: float, g2_cross: float) -> float:
    """Contrast (co - cross)/(co + cross) of co/cross-polarized rates."""
    if g2_co < 0 or g2_cross < 0:
        raise InvalidInputError("correlation rates must be >= 0")
    total = g2_co + g2_cross
    if total == 0:
        raise EstimationError("degree of correlation undefined: both rates are zero")
    return (g2_co - g2_cross) / total


def joint_probability(rho: np.ndarray, a, b) -> float:
    """Born-rule coincidence probability Tr[rho (|a><a| x |b><b|)].

    ``a`` and ``b`` are single-photon kets or basis labels.
    """
    if isinstance(a, str):
        a = basis_ket(a)
    if isinstance(b, str):
        b = basis_ket(b)
    ket = np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))
    p = np.vdot(ket, np.asarray(rho, dtype=complex) @ ket).real
    # clip tiny numerical undershoot
    return float(min(max(p, 0.0), 1.0))


def degrees_from_rho(rho: np.ndarray) -> DegreesOfCorrelation:
    """Degrees of correlation the three-basis measurement would yield on rho."""
    values = {}
    for name, co in (("linear", ("H", "H")), ("diagonal", ("D", "D")),
                     ("circular", ("R", "R"))):
        a, b = co
        p_co = joint_probability(rho, a, b) + joint_probability(rho, ORTHOGONAL[a], ORTHOGONAL[b])
        p_cross = joint_probability(rho, a, ORTHOGONAL[b]) + joint_probability(rho, ORTHOGONAL[a], b)
        values[name] = degree_of_correlation(p_co, p_cross)
    return DegreesOfCorrelation(values["linear"], values["diagonal"], values["circular"])


def validate_density_matrix(rho: np.ndarray, psd_tol: float = 1e-9) -> np.ndarray:
    """Check Hermiticity, unit trace and positive semidefiniteness.

    Returns the validated matrix; raises InvalidInputError otherwise.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise InvalidInputError(f"density matrix must be 4x4, got {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise InvalidInputError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > 1e-10:
        raise InvalidInputError("density matrix trace differs from 1")
    eigs = np.linalg.eigvalsh(rho)
    if eigs.min() < -psd_tol:
        raise InvalidInputError(f"density matrix has negative eigenvalue {eigs.min():g}")
    return rho


def rho_to_json(rho: np.ndarray) -> str:
    """Serialize a 4x4 density matrix to the shared JSON document."""
    rho = np.asarray(rho, dtype=complex)
    doc = {
        "basis": ",".join(BASIS_ORDER),
        "re": rho.real.tolist(),
        "im": rho.imag.tolist(),
    }
    return json.dumps(doc, indent=2)


def rho_from_json(text: str) -> np.ndarray:
    """Parse the shared density-matrix JSON document."""
    try:
        doc = json.loads(text)
        if doc["basis"] != ",".join(BASIS_ORDER):
            raise InvalidInputError(f"unexpected basis order {doc['basis']!r}")
        re = np.asarray(doc["re"], dtype=float)
        im = np.asarray(doc["im"], dtype=float)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"malformed density-matrix JSON: {exc}") from exc
    if re.shape != (4, 4) or im.shape != (4, 4):
        raise InvalidInputError("density-matrix JSON arrays must be 4x4")
    return re + 1j * im
