"""Growth exponents, the xi decomposition of log R^2, and the subordinate solution."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as K
from .coeffstream import ensemble_params
from .errors import DomainError
from .transfer import HALF_PI, log_grid, propagate_energies, run_trajectory

__all__ = [
    "normalizer",
    "normalizer_kind_for",
    "predicted_exponent",
    "ExponentEstimate",
    "exponent_fit",
    "aggregate",
    "XiDecomposition",
    "xi_from_trajectory",
    "xi_partial_sums",
    "SubordinateResult",
    "subordinate_angle",
    "subordinate_angles",
    "subordinate_series",
    "theta_separation",
    "angle_difference",
    "increment_decay_fit",
    "write_exponent_report",
    "write_summary_json",
    "MIN_FIT_POINTS",
]

MIN_FIT_POINTS = 20
DEGENERATE_TOL = 1e-3
_CRIT_TOL = 1e-12


def normalizer(gamma, n):
    """F_gamma(n): log n for gamma >= 1/2, n^(1 - 2 gamma) otherwise."""
    n_arr = np.asarray(n, dtype=np.float64)
    if np.any(n_arr < 2):
        raise DomainError("the normalizer needs n >= 2")
    if gamma >= 0.5 - _CRIT_TOL:
        out = np.log(n_arr)
    else:
        out = n_arr ** (1.0 - 2.0 * gamma)
    return float(out) if out.ndim == 0 else out


def normalizer_kind_for(gamma):
    if gamma >= 0.5 - _CRIT_TOL:
        return "log_n"
    return f"power({1.0 - 2.0 * gamma:g})"


def _apply_kind(kind, n):
    n = np.asarray(n, dtype=np.float64)
    if kind == "log_n":
        return np.log(n)
    if isinstance(kind, (int, float)):
        return n ** float(kind)
    if isinstance(kind, str) and kind.startswith("power(") and kind.endswith(")"):
        return n ** float(kind[6:-1])
    raise DomainError(f"unknown normalizer kind {kind!r}")


def predicted_exponent(params, quantity):
    """Limit of log(quantity) / F_gamma(n) in the regime fixed by ``params``."""
    g = params.gamma
    lam = params.Lambda
    e1 = params.eta1
    crit = abs(g - 0.5) <= _CRIT_TOL
    if quantity == "transfer_norm_sq":
        if crit:
            return lam - e1
        return -e1 if g > 0.5 else lam
    if quantity == "prufer_R_sq":
        if crit:
            return lam + e1
        return e1 if g > 0.5 else lam
    if quantity == "subordinate_log":
        if not crit:
            raise DomainError("the subordinate decay exponent is defined only for gamma = 1/2")
        return -0.5 * (lam + e1)
    raise DomainError(f"unknown quantity {quantity!r}")


@dataclass
class ExponentEstimate:
    slope: float
    stderr: float
    window: tuple
    normalizer: str
    realizations: int = 1
    aggregation: str = "single"
    intercept: float = float("nan")
    slopes: list = field(default_factory=list)

    def __post_init__(self):
        if not self.window[0] < self.window[1]:
            raise DomainError(f"empty fit window {self.window}")
        if self.stderr < 0:
            raise DomainError("stderr must be non-negative")


def exponent_fit(series, normalizer_kind, window):
    """Least-squares slope of value against F(n) over ``window`` = (n_lo, n_hi).

    ``series`` is a pair of arrays (n, value) or an (m, 2) array.
    """
    if isinstance(series, tuple) and len(series) == 2:
        n, v = series
    else:
        arr = np.asarray(series, dtype=np.float64)
        n, v = arr[:, 0], arr[:, 1]
    n = np.asarray(n, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    lo, hi = window
    sel = (n >= lo) & (n <= hi) & np.isfinite(v)
    if sel.sum() < MIN_FIT_POINTS:
        raise DomainError(f"only {int(sel.sum())} points in window {window}, need {MIN_FIT_POINTS}")
    x = _apply_kind(normalizer_kind, n[sel])
    y = v[sel]
    xm = x.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    slope = float(dx @ (y - y.mean())) / sxx
    icpt = float(y.mean() - slope * xm)
    res = y - icpt - slope * x
    dof = max(x.size - 2, 1)
    stderr = math.sqrt(float(res @ res) / dof / sxx)
    kind = normalizer_kind if isinstance(normalizer_kind, str) else f"power({normalizer_kind:g})"
    return ExponentEstimate(slope, stderr, (float(lo), float(hi)), kind, 1, "single", icpt, [slope])


def aggregate(estimates, how="median"):
    """Combine per-realization estimates; stderr is the spread of the aggregate."""
    slopes = np.array([e.slope for e in estimates], dtype=np.float64)
    k = slopes.size
    if k == 0:
        raise DomainError("nothing to aggregate")
    sd = float(slopes.std(ddof=1)) if k > 1 else float(estimates[0].stderr)
    if how == "median":
        val = float(np.median(slopes))
        se = math.sqrt(math.pi / 2.0) * sd / math.sqrt(k)
    elif how == "mean":
        val = float(slopes.mean())
        se = sd / math.sqrt(k)
    else:
        raise DomainError(f"unknown aggregation {how!r}")
    e0 = estimates[0]
    return ExponentEstimate(val, se, e0.window, e0.normalizer, k, how, float("nan"), slopes.tolist())


# ---------------------------------------------------------------------------
# xi decomposition


@dataclass
class XiDecomposition:
    """Partial sums normalized by F_gamma(n).

    ``total`` is (log R^2(n) - log R^2(n0)) / F_gamma(n); ``tolerance`` the
    accumulated bound on the neglected higher Taylor terms, same scaling.
    """

    xi_Z: float
    xi_W: float
    xi_ZW: float
    xi_ZW2: float
    xi_A: float
    n: int
    total: float = float("nan")
    tolerance: float = float("nan")

    @property
    def xi_sum(self):
        return self.xi_Z + self.xi_W + self.xi_ZW + self.xi_ZW2 + self.xi_A

    def as_tuple(self):
        return (self.xi_Z, self.xi_W, self.xi_ZW, self.xi_ZW2, self.xi_A)


def xi_from_trajectory(tr, gamma, phi_index=0, rec_index=-1, n_from=None):
    """XiDecomposition at recorded site ``tr.n[rec_index]``.

    With ``n_from`` set, the sums run over n_from < j <= n only and are divided
    by F(n) - F(n_from): the same limits, without the early-site transient.
    """
    acc = tr.acc[phi_index, rec_index]
    n = int(tr.n[rec_index])
    F = normalizer(gamma, n)
    start = np.zeros(K.N_ACC)
    lr0 = tr.log_R2_start[phi_index]
    if n_from is not None:
        i = int(np.searchsorted(tr.n, n_from))
        if i >= tr.n.size or tr.n[i] != n_from or not np.isfinite(tr.log_R2[phi_index, i]):
            raise DomainError(f"n_from={n_from} is not a recorded EFGP site")
        start = tr.acc[phi_index, i]
        lr0 = tr.log_R2[phi_index, i]
        F -= normalizer(gamma, n_from)
    d = (acc - start) / F
    return XiDecomposition(
        float(d[K.ACC_Z]),
        float(d[K.ACC_W]),
        float(d[K.ACC_ZW]),
        float(d[K.ACC_ZW2]),
        float(d[K.ACC_A]),
        n,
        float((tr.log_R2[phi_index, rec_index] - lr0) / F),
        float(d[K.ACC_TOL]),
    )


def xi_partial_sums(E, stream, phi, n, gamma=None, n_from=None):
    """The five normalized xi partial sums along one EFGP trajectory up to n."""
    if gamma is None:
        p = ensemble_params(stream)
        gamma = 0.5 if p is None else p.gamma
    rec = [n] if n_from is None else [n_from, n]
    tr = run_trajectory(stream, E, n, phis=(phi,), record_at=rec)
    return xi_from_trajectory(tr, gamma, 0, -1, n_from)


# ---------------------------------------------------------------------------
# subordinate solution


@dataclass
class SubordinateResult:
    phi_infinity: float
    rho_infinity: float
    decay_slope: float
    rho_convergence_slope: float
    decay_stderr: float = float("nan")
    rho_stderr: float = float("nan")
    degenerate: bool = False
    exploratory: bool = False
    flags: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def subordinate_series(m):
    """(phi_n, log rho_n) from renormalized 2x2 products, rows [m00, m01, m10, m11].

    phi_n is the right singular direction of the smaller singular value,
    folded into (-pi/2, pi/2].
    """
    m = np.asarray(m, dtype=np.float64).reshape(-1, 4)
    m00, m01, m10, m11 = m.T
    p = m00 * m00 + m10 * m10
    r = m01 * m01 + m11 * m11
    q = m00 * m01 + m10 * m11
    alpha = 0.5 * np.arctan2(2.0 * q, p - r)
    phi = alpha + HALF_PI
    phi = np.where(phi > HALF_PI, phi - math.pi, phi)
    log_rho = np.log(np.hypot(m00, m10)) - np.log(np.hypot(m01, m11))
    return phi, log_rho


def _log_image_norm(m, ls, phi):
    c, s = math.cos(phi), math.sin(phi)
    x = m[:, 0] * c + m[:, 1] * s
    y = m[:, 2] * c + m[:, 3] * s
    return np.log(np.hypot(x, y)) + ls


def _tail_sup(v):
    return np.maximum.accumulate(v[::-1])[::-1]


def subordinate_angle(E, stream, n_max, decay_window=None, rho_window=None, per_decade=40):
    """Limit angle and ratio of the subordinate solution, with fitted rates.

    phi_infinity and rho_infinity are read at the horizon n_max.
    decay_slope fits log ||T(n) u_phi_inf|| against log n; rho_convergence_slope
    fits the log of the tail envelope sup_{m >= n} |rho_m - rho_inf|.  Both
    windows default to [n_max / 10^5, n_max / 10], so that the horizon, where
    u_phi_inf is the exact minimizer, stays out of the fits.
    """
    return subordinate_angles([E], stream, n_max, decay_window, rho_window, per_decade)[0]


def subordinate_angles(energies, stream, n_max, decay_window=None, rho_window=None, per_decade=40):
    """:func:`subordinate_angle` at several energies over one coefficient pass."""
    n_max = int(n_max)
    if decay_window is None:
        decay_window = (n_max * 1e-5, n_max * 1e-1)
    if rho_window is None:
        rho_window = (n_max * 1e-5, n_max * 1e-1)
    rec = log_grid(stream.start_index, n_max, per_decade)
    params = ensemble_params(stream)
    exploratory = params is None or abs(params.gamma - 0.5) > _CRIT_TOL
    out = []
    for pr in propagate_energies(stream, energies, n_max, record_at=rec):
        out.append(_subordinate_from_record(pr, decay_window, rho_window, exploratory))
    return out


def _subordinate_from_record(pr, decay_window, rho_window, exploratory):
    flags = list(pr.flags)
    if exploratory:
        flags.append("exploratory: gamma != 1/2")
    phi, log_rho = subordinate_series(pr.matrix)
    phi_inf = float(phi[-1])
    rho_inf = float(math.exp(log_rho[-1]))
    degenerate = min(abs(phi_inf), abs(abs(phi_inf) - HALF_PI)) < DEGENERATE_TOL
    if degenerate:
        flags.append(f"degenerate limit angle {phi_inf:.3e}")

    n = pr.n.astype(np.float64)
    dec = exponent_fit((n, _log_image_norm(pr.matrix, pr.log_scale, phi_inf)), "log_n", decay_window)
    dev = np.abs(np.exp(log_rho - log_rho[-1]) - 1.0) * rho_inf
    with np.errstate(divide="ignore"):
        rfit = exponent_fit((n, np.log(_tail_sup(dev))), "log_n", rho_window)
    return SubordinateResult(
        phi_inf,
        float("nan") if degenerate else rho_inf,
        dec.slope,
        rfit.slope,
        dec.stderr,
        rfit.stderr,
        bool(degenerate),
        bool(exploratory),
        flags,
    )


def increment_decay_fit(n, incr, window, per_decade=10):
    """Log-log slope of the mean angular increment in log-spaced bins of n."""
    n = np.asarray(n, dtype=np.float64)
    incr = np.asarray(incr, dtype=np.float64)
    lo, hi = window
    edges = np.geomspace(lo, hi, int(round(per_decade * math.log10(hi / lo))) + 1)
    idx = np.searchsorted(n, edges)
    centers, means = [], []
    for i0, i1 in zip(idx[:-1], idx[1:]):
        if i1 > i0:
            centers.append(math.sqrt(n[i0] * n[i1 - 1]))
            means.append(math.log(max(float(incr[i0:i1].mean()), 1e-300)))
    return exponent_fit((np.array(centers), np.array(means)), "log_n", window)


def angle_difference(t1, t0):
    """theta1 - theta0 folded to the nearest representative in (-pi/2, pi/2]."""
    d = np.asarray(t1) - np.asarray(t0)
    return d - math.pi * np.floor(d / math.pi + 0.5)


def theta_separation(E, stream, n_max, window=None, tr=None, per_decade=40):
    """Fitted slope of log|theta_0(n) - theta_pi/2(n)| against log n.

    Points where the difference falls below 1e-300 are dropped from the window.
    The default window is [n_max / 10^4, n_max].
    """
    n_max = int(n_max)
    if window is None:
        window = (n_max * 1e-4, n_max)
    if tr is None:
        tr = run_trajectory(stream, E, n_max, phis=(0.0, HALF_PI),
                            record_at=log_grid(stream.start_index, n_max, per_decade))
    i0, i1 = tr.phi_index(0.0), tr.phi_index(HALF_PI)
    d = np.abs(angle_difference(tr.theta[i1], tr.theta[i0]))
    ok = d > 1e-300
    if not ok.all():
        cut = tr.n[np.flatnonzero(~ok & np.isfinite(tr.theta[i0]))]
        if cut.size:
            window = (window[0], min(window[1], float(cut[0] - 1)))
    with np.errstate(divide="ignore"):
        return exponent_fit((tr.n.astype(np.float64), np.where(ok, np.log(d), np.nan)), "log_n", window)


# ---------------------------------------------------------------------------
# reports

REPORT_COLUMNS = ["ensemble_id", "E", "phi", "quantity", "slope", "stderr", "predicted",
                  "n_lo", "n_hi", "seed_count"]


def write_exponent_report(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in REPORT_COLUMNS})


def write_summary_json(summary, path):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

