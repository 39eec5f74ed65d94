"""Two-photon polarization state reconstruction from coincidence counts.

Linear (Stokes-style) inversion as a baseline, positivity-enforcing
maximum-likelihood estimation on a Cholesky-style factorization, bootstrap
uncertainties, and coherence-phase extraction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox
from scipy.optimize import minimize

from . import polarization as pol
from .correlate import CountsTable
from .errors import EstimationError, InvalidInputError


@dataclass
class ReconstructionResult:
    rho: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool
    method: str
    negative_eigenvalue: float | None = None  # most negative eigenvalue (linear only)
    nll_trace: np.ndarray | None = None

    def report(self, target=None) -> dict:
        doc = {
            "method": self.method,
            "converged": self.converged,
            "iterations": self.iterations,
            "log_likelihood": self.log_likelihood,
        }
        if target is not None:
            doc["fidelity"] = pol.fidelity(self.rho, target)
        try:
            doc["phase_rad"] = extract_phase(self.rho)
        except EstimationError:
            doc["phase_rad"] = None
        return doc


def _projectors(keys):
    """Stack of |a><a| x |b><b| projectors for the table's outcome labels."""
    ops = np.empty((len(keys), 4, 4), dtype=complex)
    for k, (la, lb) in enumerate(keys):
        ket = np.kron(pol.basis_ket(la), pol.basis_ket(lb))
        ops[k] = np.outer(ket, ket.conj())
    return ops


def _table_arrays(counts: CountsTable):
    if counts.total() <= 0:
        raise InvalidInputError("counts table is empty")
    keys = sorted(counts.entries)
    n = np.array([counts.entries[k] for k in keys], dtype=float)
    if n.min() < 0:
        raise InvalidInputError("counts must be >= 0")
    return keys, n, _projectors(keys)


def _design_matrix(ops):
    # n_k = Tr(Pi_k X) is linear in the 16 real degrees of freedom of a
    # Hermitian X: 4 diagonal entries + Re/Im of the 6 upper off-diagonals
    rows = []
    for op in ops:
        row = [op[i, i].real for i in range(4)]
        for i in range(4):
            for j in range(i + 1, 4):
                row.append(2.0 * op[j, i].real)   # coefficient of Re X_ij
                row.append(-2.0 * op[j, i].imag)  # coefficient of Im X_ij
        rows.append(row)
    return np.array(rows)


def _params_to_hermitian(x):
    h = np.zeros((4, 4), dtype=complex)
    for i in range(4):
        h[i, i] = x[i]
    k = 4
    for i in range(4):
        for j in range(i + 1, 4):
            h[i, j] = x[k] + 1j * x[k + 1]
            h[j, i] = x[k] - 1j * x[k + 1]
            k += 2
    return h


def linear_reconstruct(counts: CountsTable) -> ReconstructionResult:
    """Least-squares Stokes inversion; Hermitian and trace-1 but possibly
    non-positive. A negative eigenvalue, if any, is reported on the result."""
    keys, n, ops = _table_arrays(counts)
    a = _design_matrix(ops)
    if np.linalg.matrix_rank(a, tol=1e-10) < 16:
        raise InvalidInputError(
            "setting set does not span the two-photon operator space")
    x, *_ = np.linalg.lstsq(a, n, rcond=None)
    rho = _params_to_hermitian(x)
    tr = np.trace(rho).real
    if tr <= 0:
        raise EstimationError("linear inversion produced a non-positive trace")
    rho /= tr
    eigs = np.linalg.eigvalsh(rho)
    neg = float(eigs.min()) if eigs.min() < -1e-10 else None
    lam = np.maximum(a @ x, 1e-300)
    ll = float(np.sum(n * np.log(lam) - lam))
    return ReconstructionResult(rho, ll, iterations=0, converged=True,
                                method="linear", negative_eigenvalue=neg)


# --- maximum likelihood on X = T T', T lower-triangular with real diagonal ---

_TRIL = [(i, j) for i in range(1, 4) for j in range(i)]


def _t_to_matrix(t):
    m = np.zeros((4, 4), dtype=complex)
    m[np.diag_indices(4)] = t[:4]
    for k, (i, j) in enumerate(_TRIL):
        m[i, j] = t[4 + 2 * k] + 1j * t[5 + 2 * k]
    return m


def _matrix_to_t(m):
    t = np.empty(16)
    t[:4] = np.diagonal(m).real
    for k, (i, j) in enumerate(_TRIL):
        t[4 + 2 * k] = m[i, j].real
        t[5 + 2 * k] = m[i, j].imag
    return t


def _initial_t(counts: CountsTable, n, ops):
    try:
        rho0 = linear_reconstruct(counts).rho
    except (InvalidInputError, EstimationError):
        rho0 = np.eye(4) / 4.0
    w, v = np.linalg.eigh(rho0)
    w = np.maximum(w, 1e-4)
    rho0 = (v * w) @ v.conj().T
    rho0 /= np.trace(rho0).real
    # scale so the model rates start at the observed total
    p_sum = np.einsum("kij,ji->", ops, rho0).real
    x0 = rho0 * (n.sum() / max(p_sum, 1e-12))
    return _matrix_to_t(np.linalg.cholesky(x0 + 1e-9 * np.trace(x0).real * np.eye(4)))


def mle_reconstruct(counts: CountsTable, max_iter: int = 2000) -> ReconstructionResult:
    """Poisson maximum-likelihood density matrix, rho = T T' / Tr(T T').

    The unnormalized X = T T' is optimized directly: the Poisson likelihood
    pins its overall scale, and normalizing at the end yields a matrix that
    is positive semidefinite and trace-1 by construction. Converged when the
    per-count scaled gradient norm drops below 1e-8 or the optimizer's
    parameter step stalls below 1e-10.
    """
    keys, n, ops = _table_arrays(counts)
    if np.linalg.matrix_rank(_design_matrix(ops), tol=1e-10) < 16:
        raise InvalidInputError(
            "setting set does not span the two-photon operator space")
    scale = 1.0 / n.sum()

    def nll_grad(t):
        tm = _t_to_matrix(t)
        x = tm @ tm.conj().T
        lam = np.maximum(np.einsum("kij,ji->k", ops, x).real, 1e-300)
        f = float(np.sum(lam - n * np.log(lam))) * scale
        w = (1.0 - n / lam) * scale
        g_mat = np.einsum("k,kij->ij", w, ops) @ tm  # d nll / d conj(T)
        grad = np.empty(16)
        grad[:4] = 2.0 * np.diagonal(g_mat).real
        for k, (i, j) in enumerate(_TRIL):
            grad[4 + 2 * k] = 2.0 * g_mat[i, j].real
            grad[5 + 2 * k] = 2.0 * g_mat[i, j].imag
        return f, grad

    t0 = _initial_t(counts, n, ops)
    steps = []
    trace = [nll_grad(t0)[0]]
    last = [t0]

    def cb(tk):
        trace.append(nll_grad(tk)[0])
        steps.append(np.linalg.norm(tk - last[0]))
        last[0] = tk.copy()

    res = minimize(nll_grad, t0, jac=True, method="L-BFGS-B", callback=cb,
                   options={"maxiter": max_iter, "gtol": 1e-12, "ftol": 1e-16,
                            "maxcor": 30})
    f_final, g_final = nll_grad(res.x)
    converged = bool(np.linalg.norm(g_final, ord=np.inf) < 1e-8
                     or (steps and steps[-1] < 1e-10))
    tm = _t_to_matrix(res.x)
    x = tm @ tm.conj().T
    tr = np.trace(x).real
    if tr <= 0:
        raise EstimationError("maximum-likelihood optimization collapsed to zero")
    rho = x / tr
    rho = 0.5 * (rho + rho.conj().T)
    lam = np.maximum(np.einsum("kij,ji->k", ops, x).real, 1e-300)
    ll = float(np.sum(n * np.log(lam) - lam))
    return ReconstructionResult(rho, ll, iterations=int(res.nit), converged=converged,
                                method="mle", nll_trace=np.array(trace))


FULL_KEYS = tuple((a, b) for a in ("H", "V", "D", "A", "R", "L")
                  for b in ("H", "V", "D", "A", "R", "L"))

#: 16-projector minimal set compatible with the standard two-qubit recipe
MINIMAL_KEYS = tuple((a, b) for a in ("H", "V", "D", "R") for b in ("H", "V", "D", "R"))


def expected_counts(rho: np.ndarray, keys=FULL_KEYS, total: float = 1e6) -> CountsTable:
    """Noise-free expected counts of a state over an outcome-label set."""
    ops = _projectors(keys)
    p = np.einsum("kij,ji->k", ops, np.asarray(rho, dtype=complex)).real
    p = np.maximum(p, 0.0)
    n = p * (total / p.sum())
    return CountsTable(dict(zip(keys, n)), metadata={"exact": True})


def simulate_counts(rho: np.ndarray, total: float, rng, keys=FULL_KEYS) -> CountsTable:
    """Poisson-sample a counts table around the Born-rule expectation."""
    exact = expected_counts(rho, keys=keys, total=total)
    entries = {k: int(rng.poisson(v)) for k, v in exact.entries.items()}
    return CountsTable(entries, metadata={"exact": False})


def extract_phase(rho: np.ndarray, threshold: float = 0.05) -> float:
    """Phase phi of the equivalent (|HH> + e^{i phi}|VV>)/sqrt(2) state.

    Reads arg <VV|rho|HH>; fails if the coherence magnitude is below the
    threshold.
    """
    rho = np.asarray(rho, dtype=complex)
    coh = rho[3, 0]
    if abs(coh) <= threshold:
        raise EstimationError(
            f"HH-VV coherence magnitude {abs(coh):.3g} below threshold {threshold}")
    return float(np.angle(coh))


@dataclass
class BootstrapResult:
    fidelity_mean: float
    fidelity_sigma: float
    n_resamples: int


def bootstrap_uncertainty(counts: CountsTable, n_resamples: int,
                          target: np.ndarray, seed: int = 0) -> BootstrapResult:
    """Poisson-resample the table and report the spread of the MLE fidelity.

    Resamples are keyed individually, so they can run in any order or in
    parallel without changing the result.
    """
    if n_resamples < 100:
        raise InvalidInputError("bootstrap needs n_resamples >= 100")
    keys = sorted(counts.entries)
    base = np.array([counts.entries[k] for k in keys], dtype=float)
    fids = np.empty(n_resamples)
    for r in range(n_resamples):
        rng = Generator(Philox(key=np.array([seed, r], dtype=np.uint64)))
        resampled = CountsTable(dict(zip(keys, (int(v) for v in rng.poisson(base)))),
                                window_ps=counts.window_ps)
        fids[r] = pol.fidelity(mle_reconstruct(resampled).rho, target)
    return BootstrapResult(float(fids.mean()), float(fids.std(ddof=1)), n_resamples)


def report_json(result: ReconstructionResult, target=None,
                bootstrap: BootstrapResult | None = None, window_ps: int = 0) -> str:
    doc = result.report(target)
    doc["window_ps"] = window_ps
    if bootstrap is not None:
        doc["fidelity_sigma"] = bootstrap.fidelity_sigma
        doc["bootstrap_resamples"] = bootstrap.n_resamples
    return json.dumps(doc, indent=2)
