"""Resolvent entries of truncations and the off-diagonal decay bound."""

from __future__ import annotations

import csv
import math

import numpy as np
from scipy import linalg

from . import _kernels as K
from .errors import DomainError, NumericalFlag
from .spectral import sturm_count, truncate

__all__ = [
    "greens_solve",
    "greens_entry",
    "greens_column_log",
    "ct_bound",
    "log_ct_bound",
    "ct_verify",
    "decay_fit",
    "write_greens_csv",
    "SPECTRUM_TOL",
]

SPECTRUM_TOL = 1e-8


def _check_off_spectrum(T, z):
    # dist(z, spectrum) >= |Im z| for symmetric T; only near-real z needs a count
    if abs(z.imag) > SPECTRUM_TOL:
        return
    h = math.sqrt(SPECTRUM_TOL**2 - z.imag**2)
    if sturm_count(T, z.real + h) != sturm_count(T, z.real - h):
        raise DomainError(f"z = {z} lies within {SPECTRUM_TOL} of an eigenvalue")


def greens_solve(T, z):
    """x = (T - z)^{-1} delta_1 by banded LU with partial pivoting, plus the residual."""
    z = complex(z)
    _check_off_spectrum(T, z)
    N = T.N
    ab = np.zeros((3, N), dtype=np.complex128)
    ab[0, 1:] = T.offdiag
    ab[1] = T.diag - z
    ab[2, :-1] = T.offdiag
    rhs = np.zeros(N, dtype=np.complex128)
    rhs[0] = 1.0
    x = linalg.solve_banded((1, 1), ab, rhs)
    r = T.diag * x - z * x
    r[:-1] += T.offdiag * x[1:]
    r[1:] += T.offdiag * x[:-1]
    r[0] -= 1.0
    resid = float(np.abs(r).max())
    if resid > 1e-10 * (T.norm_bound() + abs(z)) * max(1.0, float(np.abs(x).max())):
        raise NumericalFlag(f"resolvent residual {resid:.3e} too large at z = {z}")
    return x, resid


def greens_entry(T, z, j):
    """<delta_1, (T - z)^{-1} delta_j>, sites numbered from 1."""
    j = int(j)
    if not 1 <= j <= T.N:
        raise DomainError(f"site {j} outside 1..{T.N}")
    x, _ = greens_solve(T, z)
    return complex(x[j - 1])


def greens_column_log(T, z):
    """(log|G(1, j)|, arg G(1, j)) for j = 1..N, never forming tiny entries."""
    z = complex(z)
    _check_off_spectrum(T, z)
    return K.resolvent_column_log(T.diag, T.offdiag, z)


def log_ct_bound(sigma, fN, N):
    if not sigma > 0 or not fN > 0:
        raise DomainError("sigma and f(N) must be positive")
    alpha = min(1.0, sigma / (4.0 * math.e * fN))
    return math.log(2.0 * math.e / sigma) - alpha * N


def ct_bound(sigma, fN, N):
    """(2e / sigma) exp(-min(1, sigma / (4 e f(N))) N)."""
    return math.exp(log_ct_bound(sigma, fN, N))


def ct_verify(stream, E, sigma, N_list, trunc_size=None, T=None):
    """Log-margins log(bound) - log|G(1, N)| at z = E + i sigma.

    f(N) is the running maximum of a(1..N).
    """
    N_list = np.asarray(N_list, dtype=np.int64)
    if N_list.size == 0 or N_list.min() < 1:
        raise DomainError("N_list must contain positive sites")
    if trunc_size is None:
        trunc_size = 2 * int(N_list.max())
    if trunc_size < 2 * N_list.max():
        raise DomainError("trunc_size must be at least 2 max(N_list)")
    if T is None:
        T = truncate(stream, trunc_size)
    a, _ = stream.block(T.offset + 1, T.offset + 1 + int(N_list.max()))
    f = np.maximum.accumulate(a)
    logabs, _ = greens_column_log(T, complex(E, sigma))
    rows = []
    for N in N_list:
        lb = log_ct_bound(sigma, float(f[N - 1]), int(N))
        lg = float(logabs[N - 1])
        rows.append({"N": int(N), "sigma": float(sigma), "E": float(E),
                     "log_abs_G": lg, "log_bound": lb, "margin": lb - lg})
    return rows


def decay_fit(N, log_abs_G, power):
    """Regress -log|G(1, N)| on N^power: (slope, intercept, R^2)."""
    x = np.asarray(N, dtype=np.float64) ** power
    y = -np.asarray(log_abs_G, dtype=np.float64)
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ np.array([slope, icpt])
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(res @ res) / ss if ss > 0 else 1.0
    return float(slope), float(icpt), r2


def write_greens_csv(rows, path):
    cols = ["N", "sigma", "E", "log_abs_G", "log_bound", "margin"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r["N"]] + [repr(float(r[c])) for c in cols[1:]])
