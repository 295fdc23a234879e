"""Transfer matrices and the EFGP (modified Pruefer) recursion.

The n-step matrix T(n) = S(n) ... S(1) is carried as a renormalized 2x2 matrix
times exp(log_scale); rescaling is by exact powers of two.  EFGP variables
(R, theta) are defined relative to the quasi-momentum k_n with
2 cos k_n = E / a~(n), where a~(n) = E[a(n)].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .coeffstream import coeff_at
from .errors import DomainError

__all__ = [
    "one_step",
    "TransferState",
    "PruferState",
    "PropagationRecord",
    "Trajectory",
    "k_angle",
    "kappa_zeta",
    "efgp_start",
    "efgp_init",
    "efgp_step",
    "propagate",
    "propagate_energies",
    "run_trajectory",
    "theta_increment_series",
    "oscillatory_sum",
    "log_grid",
    "spectral_norm_sq",
    "write_trajectory_csv",
]

CHUNK = 1 << 18
HALF_PI = 0.5 * math.pi


def one_step(E, a_prev, a_n, b_n):
    """The one-step matrix [[(E - b)/a_n, -a_prev/a_n], [1, 0]]."""
    if not a_n > 0.0:
        raise DomainError(f"a_n must be positive, got {a_n}")
    if not a_prev > 0.0:
        raise DomainError(f"a_prev must be positive, got {a_prev}")
    return np.array([[(E - b_n) / a_n, -a_prev / a_n], [1.0, 0.0]])


@dataclass
class TransferState:
    """T(n) = exp(log_scale) * matrix, with log|det T(n)| tracked separately."""

    matrix: np.ndarray
    log_scale: float = 0.0
    n: int = 0
    log_det: float = 0.0
    a_prev: float = 1.0

    @classmethod
    def identity(cls, n=0):
        return cls(np.eye(2), 0.0, n, 0.0, 1.0)

    def as_vector(self):
        m = self.matrix
        return np.array([m[0, 0], m[0, 1], m[1, 0], m[1, 1], self.log_scale, self.log_det, self.a_prev])

    @classmethod
    def from_vector(cls, v, n):
        return cls(np.array([[v[0], v[1]], [v[2], v[3]]]), float(v[4]), int(n), float(v[5]), float(v[6]))

    def log_norm_sq(self):
        m = self.matrix
        return float(spectral_norm_sq(m[0, 0], m[0, 1], m[1, 0], m[1, 1])[0]) + 2.0 * self.log_scale


def spectral_norm_sq(m00, m01, m10, m11):
    """log of the squared largest and smallest singular values of 2x2 matrices.

    Uses sigma_max,min = (p +- q) / 2 with p = |(m00+m11, m01-m10)| and
    q = |(m00-m11, m01+m10)|, which avoids the cancellation in the
    characteristic-polynomial form.
    """
    p = np.hypot(np.add(m00, m11), np.subtract(m01, m10))
    q = np.hypot(np.subtract(m00, m11), np.add(m01, m10))
    smax = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        smin = np.abs(np.subtract(m00 * m11, m01 * m10)) / smax
        return 2.0 * np.log(smax), 2.0 * np.log(smin)


@dataclass
class PruferState:
    """EFGP variables for one initial angle ``phi`` at site ``n``."""

    log_R: float
    theta: float
    n: int
    k: float
    phi: float


def k_angle(E, a_tilde):
    """k in (0, pi) with 2 cos k = E / a_tilde."""
    if not a_tilde > 0.0:
        raise DomainError(f"a_tilde must be positive, got {a_tilde}")
    if not abs(E) < 2.0 * a_tilde:
        raise DomainError(f"EFGP not yet defined at this n: |E| = {abs(E)} >= 2 a~ = {2.0 * a_tilde}")
    return math.acos(E / (2.0 * a_tilde))


def kappa_zeta(E, n, stream):
    """(kappa(n+1), zeta(n+1)) of the cotangent recursion between sites n and n+1.

    zeta's diagonal term carries sin(k_{n+1}); this is what the transfer
    matrices imply and what the EFGP/product equivalence checks rely on.
    """
    at0 = float(stream.mean_a(n))
    at1 = float(stream.mean_a(n + 1))
    k_angle(E, at0)
    k_angle(E, at1)
    a1, b1 = coeff_at(stream, n + 1)
    return K.kappa_zeta_values(float(E), at0, at1, a1, b1)


def efgp_start(stream, E):
    """First site n0 >= start_index with |E| < 2 a~(n0)."""
    lo = stream.start_index
    width = 1024
    while True:
        n = np.arange(lo, lo + width)
        ok = np.flatnonzero(abs(E) < 2.0 * stream.mean_a(n))
        if ok.size:
            return int(n[ok[0]])
        lo += width
        width *= 2
        if lo > 1 << 40:
            raise DomainError(f"|E| = {abs(E)} never falls below 2 a~(n)")


def _prufer_from_product(m, log_scale, a_n, at_n, E, phi):
    """(log R^2, theta mod pi) from the product via the defining relations."""
    c = E / (2.0 * at_n)
    k = math.acos(c)
    s = math.sin(k)
    w0 = m[0] * math.cos(phi) + m[1] * math.sin(phi)
    w1 = m[2] * math.cos(phi) + m[3] * math.sin(phi)
    v = a_n * w1
    y = v * s
    x = at_n * w0 - v * c
    logr2 = math.log(x * x + y * y) + 2.0 * log_scale
    th = math.atan2(y, x) % math.pi
    return logr2, th, k


def _advance_transfer(stream, E, lo, hi, state):
    """Run the transfer kernel over sites [lo, hi) without recording."""
    empty_n = np.empty(0, dtype=np.int64)
    for clo in range(lo, hi, CHUNK):
        chi = min(clo + CHUNK, hi)
        a, b = stream.block(clo, chi)
        K.transfer_chunk(float(E), a, b, clo, state, empty_n, 0,
                         np.empty((0, 4)), np.empty(0), np.empty(0))
    return state


def efgp_init(stream, E, phi, n0=None):
    """PruferState at the EFGP start site, computed from the direct product."""
    s = stream.start_index
    if n0 is None:
        n0 = efgp_start(stream, E)
    state = TransferState.identity(s - 1).as_vector()
    _advance_transfer(stream, E, s, n0 + 1, state)
    a_n0 = coeff_at(stream, n0)[0]
    at = float(stream.mean_a(n0))
    logr2, th, k = _prufer_from_product(state, state[4], a_n0, at, E, phi)
    return PruferState(0.5 * logr2, th, n0, k, phi)


def efgp_step(state, E, n, stream):
    """Advance ``state`` from site n to n+1 (scalar reference path)."""
    if state.n != n:
        raise DomainError(f"state is at n={state.n}, asked to step from n={n}")
    at0 = float(stream.mean_a(n))
    at1 = float(stream.mean_a(n + 1))
    k_angle(E, at0)
    k_angle(E, at1)
    a1, b1 = coeff_at(stream, n + 1)
    out = np.empty(9)
    K.efgp_update(float(E), float(state.theta), at0, at1, a1, b1, out)
    return PruferState(state.log_R + 0.5 * out[0], float(out[1]), n + 1, float(out[8]), state.phi)


@dataclass
class PropagationRecord:
    n: np.ndarray
    log_norm_sq: np.ndarray
    log_det: np.ndarray
    matrix: np.ndarray
    log_scale: np.ndarray
    flags: list = field(default_factory=list)


def log_grid(n_lo, n_hi, per_decade=40):
    """Sorted unique integers, roughly log-uniform on [n_lo, n_hi], ends included."""
    n_lo, n_hi = int(n_lo), int(n_hi)
    if n_hi < n_lo:
        return np.empty(0, dtype=np.int64)
    m = max(2, int(math.ceil(per_decade * math.log10(max(n_hi / n_lo, 1.0)))) + 1)
    g = np.unique(np.round(np.geomspace(n_lo, n_hi, m)).astype(np.int64))
    return g


def _record_points(s, n_max, record_every, record_at):
    if record_at is not None:
        rec = np.unique(np.asarray(record_at, dtype=np.int64))
    else:
        step = int(record_every or 1)
        if step < 1:
            raise DomainError("record_every must be positive")
        rec = np.arange(step, n_max + 1, step, dtype=np.int64)
        if rec.size == 0 or rec[-1] != n_max:
            rec = np.append(rec, n_max)
    return rec[(rec >= s) & (rec <= n_max)]


def propagate(stream, E, n_max, record_every=1, record_at=None):
    """log ||T(n)||^2 and log|det T(n)| at the recorded sites.

    When the stream's start_index exceeds 1 the product starts there, with
    a(start_index - 1) taken as the boundary value 1; this is noted in
    ``flags``.
    """
    return propagate_energies(stream, [E], n_max, record_every, record_at)[0]


def propagate_energies(stream, energies, n_max, record_every=1, record_at=None):
    """:func:`propagate` for several energies, sharing each coefficient block."""
    n_max = int(n_max)
    if n_max < 1:
        raise DomainError("n_max must be >= 1")
    s = stream.start_index
    flags = []
    if s > 1:
        flags.append(f"start_index={s}: product starts at site {s} with unit boundary")
    rec = _record_points(s, n_max, record_every, record_at)
    energies = [float(E) for E in energies]
    out_m = [np.empty((rec.size, 4)) for _ in energies]
    out_ls = [np.empty(rec.size) for _ in energies]
    out_ld = [np.empty(rec.size) for _ in energies]
    states = [TransferState.identity(s - 1).as_vector() for _ in energies]
    ptrs = [0] * len(energies)
    for clo in range(s, n_max + 1, CHUNK):
        chi = min(clo + CHUNK, n_max + 1)
        a, b = stream.block(clo, chi)
        for i, E in enumerate(energies):
            ptrs[i] = K.transfer_chunk(E, a, b, clo, states[i], rec, ptrs[i],
                                       out_m[i], out_ls[i], out_ld[i])
    out = []
    for m, ls, ld in zip(out_m, out_ls, out_ld):
        lmax, _ = spectral_norm_sq(m[:, 0], m[:, 1], m[:, 2], m[:, 3])
        out.append(PropagationRecord(rec, lmax + 2.0 * ls, ld, m, ls, list(flags)))
    return out


@dataclass
class Trajectory:
    """Recorded transfer and EFGP data along one (stream, E) trajectory."""

    E: float
    n: np.ndarray
    matrix: np.ndarray
    log_scale: np.ndarray
    log_det: np.ndarray
    phis: np.ndarray
    n0: int
    log_R2: np.ndarray  # (n_phi, n_rec), nan before n0
    theta: np.ndarray  # (n_phi, n_rec), mod pi
    k: np.ndarray  # (n_rec,)
    acc: np.ndarray  # (n_phi, n_rec, N_ACC), sums over EFGP steps up to n
    log_R2_start: np.ndarray  # (n_phi,) value at n0
    increments: np.ndarray | None = None  # (n_phi, n_max - n0), step n0+i -> n0+i+1
    flags: list = field(default_factory=list)
    stream: dict | None = None

    @property
    def log_norm_sq(self):
        m = self.matrix
        lmax, _ = spectral_norm_sq(m[:, 0], m[:, 1], m[:, 2], m[:, 3])
        return lmax + 2.0 * self.log_scale

    def phi_index(self, phi):
        i = np.flatnonzero(np.isclose(self.phis, phi, atol=1e-12))
        if i.size == 0:
            raise KeyError(f"phi={phi} was not propagated")
        return int(i[0])


def run_trajectory(stream, E, n_max, phis=(0.0, HALF_PI), record_every=None, record_at=None,
                   increments=False):
    """Propagate the transfer product and EFGP states for each phi up to n_max.

    EFGP starts at n0 = efgp_start(stream, E) from the direct product; before
    n0 only the product is advanced.  Recorded sites default to a log grid.
    """
    E = float(E)
    n_max = int(n_max)
    s = stream.start_index
    n0 = efgp_start(stream, E)
    if n0 >= n_max:
        raise DomainError(f"EFGP start n0={n0} is not below n_max={n_max}")
    flags = []
    if s > 1:
        flags.append(f"start_index={s}")
    if record_at is None and record_every is None:
        record_at = log_grid(s, n_max)
    rec = _record_points(s, n_max, record_every, record_at)
    phis = np.atleast_1d(np.asarray(phis, dtype=np.float64))
    nphi = phis.size
    nrec = rec.size

    out_m = np.empty((nrec, 4))
    out_ls = np.empty(nrec)
    out_ld = np.empty(nrec)
    logr2 = np.full((nphi, nrec), np.nan)
    theta = np.full((nphi, nrec), np.nan)
    kk = np.full(nrec, np.nan)
    acc_out = np.full((nphi, nrec, K.N_ACC), np.nan)
    incr = np.empty((nphi, n_max - n0)) if increments else None

    state = TransferState.identity(s - 1).as_vector()
    ptr = 0
    ptr_e = 0
    # transfer-only prefix through n0
    for clo in range(s, n0 + 1, CHUNK):
        chi = min(clo + CHUNK, n0 + 1)
        a, b = stream.block(clo, chi)
        ptr = K.transfer_chunk(E, a, b, clo, state, rec, ptr, out_m, out_ls, out_ld)

    a_n0 = coeff_at(stream, n0)[0]
    at_prev = float(stream.mean_a(n0))
    est = np.empty((nphi, 2))
    for p, phi in enumerate(phis):
        lr, th, k0 = _prufer_from_product(state, state[4], a_n0, at_prev, E, phi)
        est[p] = lr, th
    start_logr2 = est[:, 0].copy()
    acc = np.zeros((nphi, K.N_ACC))
    while ptr_e < nrec and rec[ptr_e] < n0:
        ptr_e += 1
    if ptr_e < nrec and rec[ptr_e] == n0:
        logr2[:, ptr_e] = est[:, 0]
        theta[:, ptr_e] = est[:, 1]
        kk[ptr_e] = k0
        acc_out[:, ptr_e, :] = 0.0
        ptr_e += 1

    empty_incr = np.empty((nphi, 0))
    for clo in range(n0 + 1, n_max + 1, CHUNK):
        chi = min(clo + CHUNK, n_max + 1)
        a, b = stream.block(clo, chi)
        at = stream.mean_a(np.arange(clo, chi))
        if np.any(np.abs(E) >= 2.0 * at):
            bad = clo + int(np.flatnonzero(np.abs(E) >= 2.0 * at)[0])
            raise DomainError(f"EFGP undefined at n={bad}: |E| >= 2 a~(n)")
        ptr = K.transfer_chunk(E, a, b, clo, state, rec, ptr, out_m, out_ls, out_ld)
        ib = incr[:, clo - n0 - 1: chi - n0 - 1] if increments else empty_incr
        if increments:
            ib = np.ascontiguousarray(ib)
        ptr_e = K.efgp_chunk(E, a, b, at, clo, at_prev, est, acc, rec, ptr_e,
                             logr2, theta, kk, acc_out, ib)
        if increments:
            incr[:, clo - n0 - 1: chi - n0 - 1] = ib
        at_prev = float(at[-1])

    return Trajectory(E, rec, out_m, out_ls, out_ld, phis, n0, logr2, theta, kk, acc_out,
                      start_logr2, incr, flags, stream.to_dict())


def theta_increment_series(E, stream, phi, n_max):
    """(n, |theta(n+1) - theta_bar(n)|) for n = n0 .. n_max - 1."""
    tr = run_trajectory(stream, E, n_max, phis=(phi,), record_at=[n_max], increments=True)
    n = np.arange(tr.n0, n_max)
    return n, tr.increments[0]


def oscillatory_sum(theta_series, r, gamma, n, j0=1, weights=None):
    """(1 / F_gamma(n)) * sum_{j0 <= j <= n} f(j) cos(2 theta(j)), f(j) = j^r.

    ``theta_series[i]`` is theta(j0 + i).  ``weights`` overrides f.
    """
    from .asymptotics import normalizer

    n = int(n)
    th = np.asarray(theta_series, dtype=np.float64)[: n - j0 + 1]
    j = np.arange(j0, j0 + th.size, dtype=np.float64)
    f = j**r if weights is None else np.asarray(weights, dtype=np.float64)[: th.size]
    return float(np.sum(f * np.cos(2.0 * th)) / normalizer(gamma, n))


def write_trajectory_csv(tr, path):
    """Trajectory dump with columns n, log_norm_sq, log_R0_sq, log_Rpi2_sq, theta0, thetapi2, k_n."""
    i0 = tr.phi_index(0.0)
    i1 = tr.phi_index(HALF_PI)
    lns = tr.log_norm_sq
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "log_norm_sq", "log_R0_sq", "log_Rpi2_sq", "theta0", "thetapi2", "k_n"])
        for i, n in enumerate(tr.n):
            w.writerow([int(n)] + [repr(float(v)) for v in
                                   (lns[i], tr.log_R2[i0, i], tr.log_R2[i1, i],
                                    tr.theta[i0, i], tr.theta[i1, i], tr.k[i])])
