"""Finite truncations: eigenvalues, spectral weights at delta_1, beta-ensemble checks."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special
from scipy.integrate import trapezoid

from . import _kernels as K
from .coeffstream import uniform_block
from .errors import ConvergenceError, DomainError, StreamError

__all__ = [
    "Tridiagonal",
    "SpectralData",
    "truncate",
    "eigensystem",
    "eigenvectors",
    "sturm_count",
    "bisect_eigenvalues",
    "sample_de_batch",
    "de_joint_density_check",
    "trace_moment_check",
    "write_spectrum_csv",
    "write_stats_json",
]

QL_MAX_ITER = 60


@dataclass
class Tridiagonal:
    """Symmetric tridiagonal matrix: ``diag`` (N) and positive ``offdiag`` (N-1)."""

    diag: np.ndarray
    offdiag: np.ndarray
    offset: int = 0  # site index of row 0 is offset + 1
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.diag = np.ascontiguousarray(self.diag, dtype=np.float64)
        self.offdiag = np.ascontiguousarray(self.offdiag, dtype=np.float64)
        if self.diag.ndim != 1 or self.diag.size < 1:
            raise DomainError("diag must be a non-empty vector")
        if self.offdiag.shape != (self.diag.size - 1,):
            raise DomainError("offdiag must have length N - 1")
        bad = np.flatnonzero(~(self.offdiag > 0.0))
        if bad.size:
            i = int(bad[0])
            raise StreamError(self.offset + i + 1, self.offdiag[i])

    @property
    def N(self):
        return self.diag.size

    def dense(self):
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)

    def matvec(self, x):
        y = self.diag * x
        y[:-1] += self.offdiag * x[1:]
        y[1:] += self.offdiag * x[:-1]
        return y

    def norm_bound(self):
        """Gershgorin bound on the spectral norm."""
        r = np.abs(self.diag).copy()
        r[:-1] += self.offdiag
        r[1:] += self.offdiag
        return float(r.max())

    def leading(self, n):
        """The upper-left n x n block."""
        return Tridiagonal(self.diag[:n], self.offdiag[: n - 1], self.offset, list(self.flags))


@dataclass
class SpectralData:
    eigenvalues: np.ndarray
    weights: np.ndarray


def truncate(stream, N):
    """The N x N upper-left corner of the Jacobi matrix of ``stream``.

    If the stream's first usable site is s > 1, rows start at site s and the
    result carries a flag.
    """
    N = int(N)
    if N < 1:
        raise DomainError("N must be >= 1")
    s = stream.start_index
    a, b = stream.block(s, s + N)
    flags = [] if s == 1 else [f"shifted to start_index={s}"]
    return Tridiagonal(b, a[: N - 1], s - 1, flags)


def eigensystem(T):
    """All eigenvalues (ascending) and weights |v_k(1)|^2 by implicit QL.

    Only the first row of the eigenvector matrix is carried, so the cost is
    O(N^2).  Raises :class:`ConvergenceError` at the iteration cap.
    """
    d = T.diag.copy()
    e = np.zeros(T.N)
    e[: T.N - 1] = T.offdiag
    z = np.zeros((1, T.N))
    z[0, 0] = 1.0
    status = K.ql_implicit(d, e, z, QL_MAX_ITER)
    if status:
        raise ConvergenceError(f"QL did not converge for eigenvalue {status - 1} within {QL_MAX_ITER} sweeps")
    order = np.argsort(d, kind="stable")
    return SpectralData(d[order], z[0, order] ** 2)


def eigenvectors(T, method="lapack"):
    """Eigenvalues and the full orthonormal eigenvector matrix (columns).

    ``method="lapack"`` delegates to the MRRR tridiagonal driver;
    ``method="ql"`` runs the in-repo QL with full vector accumulation, O(N^3).
    """
    if method == "lapack":
        w, v = linalg.eigh_tridiagonal(T.diag, T.offdiag, lapack_driver="stemr")
        return w, v
    if method != "ql":
        raise DomainError(f"unknown method {method!r}")
    d = T.diag.copy()
    e = np.zeros(T.N)
    e[: T.N - 1] = T.offdiag
    z = np.eye(T.N)
    status = K.ql_implicit(d, e, z, QL_MAX_ITER)
    if status:
        raise ConvergenceError(f"QL did not converge for eigenvalue {status - 1}")
    order = np.argsort(d, kind="stable")
    return d[order], np.ascontiguousarray(z[:, order])


def _pivmin(T):
    e2 = T.offdiag**2
    return np.finfo(float).tiny * max(1.0, float(e2.max()) if e2.size else 1.0), e2


def sturm_count(T, x):
    """Number of eigenvalues of T strictly below x."""
    pivmin, e2 = _pivmin(T)
    return int(K.sturm_count(T.diag, e2, float(x), pivmin))


def bisect_eigenvalues(T, indices=None):
    """Selected eigenvalues (0-based ascending indices) by Sturm bisection."""
    pivmin, e2 = _pivmin(T)
    r = T.norm_bound()
    lo, hi = -r - 1.0, r + 1.0
    idx = range(T.N) if indices is None else indices
    return np.array([K.bisect_eigenvalue(T.diag, e2, int(k), lo, hi, pivmin) for k in idx])


# ---------------------------------------------------------------------------
# beta-ensemble checks


def sample_de_batch(beta, N, samples, seed):
    """Independent N x N Dumitriu-Edelman truncations as arrays (a, b).

    a has shape (samples, N-1) with a[:, n-1] ~ sqrt(Gamma(beta n / 2));
    b has shape (samples, N), standard normal.  Row i uses Philox positions
    i*N .. i*N + N - 1 of dedicated batch keys.
    """
    if not beta > 0:
        raise DomainError("beta must be positive")
    S = int(samples)
    N = int(N)
    ub = uniform_block(seed, "batch_b", 0, S * N).reshape(S, N)
    b = special.ndtri(ub)
    if N == 1:
        return np.empty((S, 0)), b
    ua = uniform_block(seed, "batch_a", 0, S * (N - 1)).reshape(S, N - 1)
    shape = 0.5 * beta * np.arange(1, N, dtype=np.float64)
    a = np.sqrt(special.gammaincinv(shape[None, :], ua))
    return a, b


def _ks(sample, grid, cdf):
    x = np.sort(sample)
    F = np.interp(x, grid, cdf)
    m = x.size
    hi = np.arange(1, m + 1) / m - F
    lo = F - np.arange(0, m) / m
    return float(max(hi.max(), lo.max()))


def _marginal_cdfs(beta, half_width=14.0, m=4001):
    """Gap and trace CDFs by numerically integrating f_{beta,2} on a grid.

    In (s, g) = (E1 + E2, E2 - E1) coordinates the unnormalized density is
    |g|^beta exp(-(s^2 + g^2)/4) up to the constant Jacobian.
    """
    g = np.linspace(0.0, half_width, m)
    s = np.linspace(-half_width, half_width, 2 * m - 1)
    E1 = 0.5 * (s[None, :] - g[:, None])
    E2 = 0.5 * (s[None, :] + g[:, None])
    f = np.exp(-0.5 * (E1**2 + E2**2)) * np.abs(E2 - E1) ** beta
    pg = trapezoid(f, s, axis=1)
    ps = trapezoid(f, g, axis=0)

    def cdf(x, p):
        c = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(x))])
        return c / c[-1]

    return (g, cdf(g, pg)), (s, cdf(s, ps))


def de_joint_density_check(beta, samples, seed):
    """Largest KS distance of the N=2 gap and trace against f_{beta,2}."""
    samples = int(samples)
    if samples < 100_000:
        raise DomainError("at least 1e5 samples are required")
    a, b = sample_de_batch(beta, 2, samples, seed)
    tr = b[:, 0] + b[:, 1]
    gap = np.hypot(b[:, 0] - b[:, 1], 2.0 * a[:, 0])
    (gg, cg), (ss, cs) = _marginal_cdfs(beta)
    ks_gap = _ks(gap, gg, cg)
    ks_tr = _ks(tr, ss, cs)
    return {
        "beta": float(beta),
        "samples": samples,
        "seed": int(seed),
        "ks_gap": ks_gap,
        "ks_trace": ks_tr,
        "ks": max(ks_gap, ks_tr),
        "trace_mean": float(tr.mean()),
        "trace_mean_se": float(tr.std(ddof=1) / math.sqrt(samples)),
        "trace_sq_mean": float((tr**2).mean()),
        "trace_sq_mean_se": float((tr**2).std(ddof=1) / math.sqrt(samples)),
    }


def trace_moment_check(beta, N, samples, seed):
    """Sample mean of Tr(J^2) against N + beta N (N - 1) / 2."""
    a, b = sample_de_batch(beta, N, samples, seed)
    t2 = (b**2).sum(axis=1) + 2.0 * (a**2).sum(axis=1)
    expected = N + beta * N * (N - 1) / 2.0
    mean = float(t2.mean())
    se = float(t2.std(ddof=1) / math.sqrt(t2.size))
    return {
        "beta": float(beta),
        "N": int(N),
        "samples": int(samples),
        "seed": int(seed),
        "mean": mean,
        "stderr": se,
        "expected": expected,
        "z": (mean - expected) / se if se > 0 else 0.0,
        "pass": abs(mean - expected) <= 3.0 * se,
    }


def write_spectrum_csv(sd, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "eigenvalue", "weight"])
        for k, (x, wt) in enumerate(zip(sd.eigenvalues, sd.weights)):
            w.writerow([k, repr(float(x)), repr(float(wt))])


def write_stats_json(report, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
