"""Wave-packet spreading under exp(-itJ) on truncations, and transport exponents."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _kernels as K
from .asymptotics import exponent_fit
from .errors import DomainError, UnreliableWindowError
from .spectral import eigenvectors

__all__ = [
    "TransportRecord",
    "evolve_moments",
    "chebyshev_coefficients",
    "chebyshev_step",
    "transport_exponent_fit",
    "write_transport_csv",
    "TAIL_THRESHOLD",
]

TAIL_THRESHOLD = 1e-6
_BATCH = 32


@dataclass
class TransportRecord:
    """Moments along a time grid starting at t = 0.

    ``moments[i, j]`` is (1/t_i) int_0^{t_i} <|X|^m_j>(s) ds (the instantaneous
    value at t = 0); ``instant`` holds <|X|^m>(t_i) itself.
    """

    times: np.ndarray
    m_list: np.ndarray
    moments: np.ndarray
    instant: np.ndarray
    tail_mass: np.ndarray
    norm: np.ndarray
    energy: np.ndarray
    N: int
    guard: float
    flagged_from: float | None = None

    @property
    def flagged(self):
        if self.flagged_from is None:
            return np.zeros(self.times.size, dtype=bool)
        return self.times >= self.flagged_from


def _observe(T, psi_cols, sites_pow, guard_start):
    p = np.abs(psi_cols) ** 2  # (N, B)
    inst = sites_pow @ p  # (n_m, B)
    tail = p[guard_start:].sum(axis=0)
    norm = np.sqrt(p.sum(axis=0))
    Jpsi = T.diag[:, None] * psi_cols
    Jpsi[:-1] += T.offdiag[:, None] * psi_cols[1:]
    Jpsi[1:] += T.offdiag[:, None] * psi_cols[:-1]
    energy = np.real(np.sum(np.conj(psi_cols) * Jpsi, axis=0))
    return inst, tail, norm, energy


def chebyshev_coefficients(dt, shift, scale, tol=1e-16):
    """Expansion of exp(-i dt x) on [shift - scale, shift + scale] in T_k((x - shift)/scale)."""
    r = scale * dt
    kmax = int(r + 12.0 * max(r, 1.0) ** (1.0 / 3.0) + 30)
    k = np.arange(kmax + 1)
    jk = special.jv(k, r)
    coef = (2.0 - (k == 0)) * (-1j) ** k * jk * np.exp(-1j * shift * dt)
    big = np.flatnonzero(np.abs(jk) > tol)
    last = int(big[-1]) + 1 if big.size else 1
    return np.ascontiguousarray(coef[: max(last, 2)])


def chebyshev_step(T, psi, dt, bounds=None):
    """psi(t + dt) from psi(t) by a Chebyshev expansion of exp(-i dt T)."""
    if bounds is None:
        r = T.norm_bound()
        bounds = (-r, r)
    lo, hi = bounds
    shift = 0.5 * (hi + lo)
    scale = 0.5 * (hi - lo) * 1.01 + 1e-12
    coef = chebyshev_coefficients(dt, shift, scale)
    return K.chebyshev_propagate(T.diag, T.offdiag, np.ascontiguousarray(psi, dtype=np.complex128),
                                 coef, shift, scale)


def evolve_moments(T, psi0, time_grid, m_list, guard=0.1, method="spectral"):
    """Instantaneous and time-averaged <|X|^m> of exp(-itT) psi0 along ``time_grid``.

    ``method="spectral"`` expands psi0 in the full eigenbasis once;
    ``method="chebyshev"`` steps between grid points with a Chebyshev
    expansion and needs only O(N) memory.  The grid is prefixed with t = 0 if
    needed.  Sites are numbered 1..N; the guard band is the last
    ``guard * N`` sites and the record is flagged from the first time its
    probability exceeds TAIL_THRESHOLD.
    """
    psi0 = np.asarray(psi0, dtype=np.complex128)
    if psi0.shape != (T.N,):
        raise DomainError("psi0 must have length N")
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-10:
        raise DomainError(f"psi0 must be normalized, |psi0| = {np.linalg.norm(psi0)!r}")
    t = np.asarray(time_grid, dtype=np.float64)
    if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) <= 0) or t[0] < 0:
        raise DomainError("time grid must be non-negative and strictly increasing")
    if t[0] > 0:
        t = np.concatenate([[0.0], t])
    m_arr = np.atleast_1d(np.asarray(m_list, dtype=np.int64))
    if np.any(m_arr < 1):
        raise DomainError("moment orders must be positive")
    N = T.N
    sites = np.arange(1, N + 1, dtype=np.float64)
    sites_pow = np.stack([sites**m for m in m_arr])
    guard_start = int(math.floor((1.0 - guard) * N))

    nt = t.size
    inst = np.empty((m_arr.size, nt))
    tail = np.empty(nt)
    norm = np.empty(nt)
    energy = np.empty(nt)

    if method == "spectral":
        w, V = eigenvectors(T)
        c = V.T @ psi0
        for lo in range(0, nt, _BATCH):
            tb = t[lo: lo + _BATCH]
            phase = np.exp(-1j * np.outer(w, tb)) * c[:, None]
            cols = V @ np.ascontiguousarray(phase.real) + 1j * (V @ np.ascontiguousarray(phase.imag))
            sl = slice(lo, lo + tb.size)
            inst[:, sl], tail[sl], norm[sl], energy[sl] = _observe(T, cols, sites_pow, guard_start)
    elif method == "chebyshev":
        r = T.norm_bound()
        psi = psi0.copy()
        for i in range(nt):
            if i > 0:
                psi = chebyshev_step(T, psi, t[i] - t[i - 1], (-r, r))
            o = _observe(T, psi[:, None], sites_pow, guard_start)
            inst[:, i], tail[i], norm[i], energy[i] = o[0][:, 0], o[1][0], o[2][0], o[3][0]
    else:
        raise DomainError(f"unknown method {method!r}")

    cum = np.zeros_like(inst)
    cum[:, 1:] = np.cumsum(0.5 * (inst[:, 1:] + inst[:, :-1]) * np.diff(t), axis=1)
    avg = inst.copy()
    avg[:, 1:] = cum[:, 1:] / t[1:]
    bad = np.flatnonzero(tail > TAIL_THRESHOLD)
    flagged_from = float(t[bad[0]]) if bad.size else None
    return TransportRecord(t, m_arr, avg.T.copy(), inst.T.copy(), tail, norm, energy, N, guard, flagged_from)


def transport_exponent_fit(record, m, window, per_decade=40):
    """Log-log slope of the time-averaged m-th moment over ``window`` = (T_lo, T_hi).

    Grid times nearest to a log-spaced set are used, so each decade carries
    equal weight in the fit.
    """
    lo, hi = window
    if record.flagged_from is not None and hi >= record.flagged_from:
        raise UnreliableWindowError(
            f"window reaches t={hi}, but leakage into the guard band starts at t={record.flagged_from}")
    j = np.flatnonzero(record.m_list == m)
    if j.size == 0:
        raise DomainError(f"moment m={m} was not recorded")
    t = record.times
    target = np.geomspace(lo, hi, int(per_decade * math.log10(hi / lo)) + 1)
    idx = np.unique(np.clip(np.searchsorted(t, target), 0, t.size - 1))
    idx = idx[(t[idx] >= lo) & (t[idx] <= hi)]
    return exponent_fit((t[idx], np.log(record.moments[idx, j[0]])), "log_n", window)


def write_transport_csv(record, path):
    flagged = record.flagged
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "m", "time_avg_moment", "tail_mass", "flagged"])
        for i, ti in enumerate(record.times):
            for j, m in enumerate(record.m_list):
                w.writerow([repr(float(ti)), int(m), repr(float(record.moments[i, j])),
                            repr(float(record.tail_mass[i])), int(flagged[i])])
