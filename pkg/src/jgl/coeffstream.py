"""Reproducible Jacobi coefficient sequences.

Every random entry is a pure function of ``(seed, role, n)``.  A role selects
an independent Philox key; the site index ``n`` selects the position inside
the Philox counter stream, so any block ``[lo, hi)`` is produced without
touching earlier sites.  Evaluation order, block boundaries and worker count
therefore never change a value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special

from .errors import ConfigError, DomainError, StreamError

__all__ = [
    "UpsilonParams",
    "CoefficientStream",
    "Unperturbed",
    "Constant",
    "Upsilon",
    "DumitriuEdelman",
    "make_unperturbed",
    "make_constant",
    "sample_upsilon",
    "sample_dumitriu_edelman",
    "coeff_at",
    "uniform_block",
    "stream_from_dict",
    "materialize",
    "START_SCAN",
]

MASK64 = (1 << 64) - 1
START_SCAN = 10_000
_ROLES = {"X": 1, "Y": 2, "b": 3, "a": 4, "batch_b": 5, "batch_a": 6}
_DISTS = ("normal", "uniform")


def _check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def uniform_block(seed, role, lo, hi):
    """Uniform variates in (0, 1) for sites ``lo <= n < hi`` of one role.

    The 53-bit mantissa is taken from the top of each raw Philox word and
    offset by half a unit, so neither endpoint can occur.
    """
    lo, hi = int(lo), int(hi)
    if hi <= lo:
        return np.empty(0)
    key = np.array([_check_seed(seed), _ROLES[role]], dtype=np.uint64)
    skip = lo % 4
    bitgen = np.random.Philox(key=key, counter=lo // 4)
    raw = bitgen.random_raw(hi - lo + skip)[skip:]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _standardized(u, dist):
    # zero mean, unit variance
    if dist == "normal":
        return special.ndtri(u)
    return math.sqrt(3.0) * (2.0 * u - 1.0)


@dataclass(frozen=True)
class UpsilonParams:
    """The quadruple (eta1, eta2, lambda1, lambda2) with derived gamma and Lambda."""

    eta1: float
    eta2: float
    lambda1: float
    lambda2: float

    def __post_init__(self):
        if not 0.0 < self.eta1 < 1.0:
            raise DomainError(f"eta1 must lie in (0, 1), got {self.eta1}")
        if not self.eta2 < self.eta1:
            raise DomainError(f"eta2 must be below eta1, got eta2={self.eta2}, eta1={self.eta1}")
        if not self.lambda1 > 0.0:
            raise DomainError(f"lambda1 must be positive, got {self.lambda1}")
        # lambda2 == 0 is admitted as the degenerate (unperturbed) member
        if not self.lambda2 >= 0.0:
            raise DomainError(f"lambda2 must be non-negative, got {self.lambda2}")

    @property
    def gamma(self):
        return self.eta1 - self.eta2

    @property
    def Lambda(self):
        return 0.5 * (self.lambda2 / self.lambda1) ** 2

    def regime(self):
        """'supercritical', 'critical' or 'subcritical' according to gamma vs 1/2."""
        if math.isclose(self.gamma, 0.5, rel_tol=0.0, abs_tol=1e-12):
            return "critical"
        return "supercritical" if self.gamma > 0.5 else "subcritical"


class CoefficientStream:
    """Base class: an immutable description of the sequences a(n), b(n), n >= 1.

    Subclasses implement :meth:`_raw_block` and :meth:`mean_a`.
    """

    seed: int = 0

    def _raw_block(self, lo, hi):
        raise NotImplementedError

    def mean_a(self, n):
        """Expected off-diagonal entry E[a(n)] (the reference sequence)."""
        raise NotImplementedError

    @cached_property
    def start_index(self):
        return 1

    def block(self, lo, hi, check=True):
        """Arrays ``(a, b)`` for ``lo <= n < hi``.

        With ``check`` set, a non-positive a(n) at or beyond ``start_index``
        raises :class:`StreamError` instead of being returned.
        """
        if lo < 1:
            raise DomainError("site indices start at 1; a(0) = 1 is a boundary convention")
        a, b = self._raw_block(lo, hi)
        if check:
            first = max(lo, self.start_index)
            tail = a[first - lo:]
            bad = np.flatnonzero(tail <= 0.0)
            if bad.size:
                i = bad[0]
                raise StreamError(first + i, tail[i])
        return a, b

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Unperturbed(CoefficientStream):
    lambda1: float
    eta1: float
    seed: int = 0

    def __post_init__(self):
        if not self.lambda1 > 0.0:
            raise DomainError(f"lambda1 must be positive, got {self.lambda1}")
        if not 0.0 < self.eta1 < 1.0:
            raise DomainError(f"eta1 must lie in (0, 1), got {self.eta1}")

    def _raw_block(self, lo, hi):
        n = np.arange(lo, hi, dtype=np.float64)
        return self.lambda1 * n**self.eta1, np.zeros(n.size)

    def mean_a(self, n):
        return self.lambda1 * np.asarray(n, dtype=np.float64) ** self.eta1

    def to_dict(self):
        return {"kind": "unperturbed", "lambda1": self.lambda1, "eta1": self.eta1, "seed": self.seed}


@dataclass(frozen=True)
class Constant(CoefficientStream):
    """a(n) = lambda1, b(n) = 0: the free discrete Laplacian (control case)."""

    lambda1: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.lambda1 > 0.0:
            raise DomainError(f"lambda1 must be positive, got {self.lambda1}")

    def _raw_block(self, lo, hi):
        m = max(hi - lo, 0)
        return np.full(m, float(self.lambda1)), np.zeros(m)

    def mean_a(self, n):
        return np.full(np.shape(n), float(self.lambda1))

    def to_dict(self):
        return {"kind": "constant", "lambda1": self.lambda1, "seed": self.seed}


@dataclass(frozen=True)
class Upsilon(CoefficientStream):
    """a(n) = l1 n^e1 + l2 n^e2 Y(n),  b(n) = l2 n^e2 X(n)."""

    params: UpsilonParams
    seed: int = 0
    x_dist: str = "normal"
    y_dist: str = "normal"

    def __post_init__(self):
        _check_seed(self.seed)
        for name in ("x_dist", "y_dist"):
            if getattr(self, name) not in _DISTS:
                raise DomainError(f"{name} must be one of {_DISTS}")

    def _raw_block(self, lo, hi):
        p = self.params
        n = np.arange(lo, hi, dtype=np.float64)
        x = _standardized(uniform_block(self.seed, "X", lo, hi), self.x_dist)
        y = 0.5 * _standardized(uniform_block(self.seed, "Y", lo, hi), self.y_dist)
        scale = p.lambda2 * n**p.eta2
        return p.lambda1 * n**p.eta1 + scale * y, scale * x

    def mean_a(self, n):
        p = self.params
        return p.lambda1 * np.asarray(n, dtype=np.float64) ** p.eta1

    @cached_property
    def start_index(self):
        a, _ = self._raw_block(1, START_SCAN + 1)
        bad = np.flatnonzero(a <= 0.0)
        return int(bad[-1]) + 2 if bad.size else 1

    def to_dict(self):
        p = self.params
        return {
            "kind": "upsilon",
            "eta1": p.eta1,
            "eta2": p.eta2,
            "lambda1": p.lambda1,
            "lambda2": p.lambda2,
            "x_dist": self.x_dist,
            "y_dist": self.y_dist,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class DumitriuEdelman(CoefficientStream):
    """b(n) ~ N(0, 1); a(n) = sqrt(G), G ~ Gamma(shape=beta*n/2, scale=1)."""

    beta: float
    seed: int = 0

    def __post_init__(self):
        if not self.beta > 0.0:
            raise DomainError(f"beta must be positive, got {self.beta}")
        _check_seed(self.seed)

    def _raw_block(self, lo, hi):
        shape = 0.5 * self.beta * np.arange(lo, hi, dtype=np.float64)
        g = special.gammaincinv(shape, uniform_block(self.seed, "a", lo, hi))
        b = special.ndtri(uniform_block(self.seed, "b", lo, hi))
        return np.sqrt(g), b

    def mean_a(self, n):
        # Gamma((bn+1)/2) / Gamma(bn/2)
        return special.poch(0.5 * self.beta * np.asarray(n, dtype=np.float64), 0.5)

    def effective_params(self):
        """Power-law parameters matching the large-n mean and variance of a(n), b(n)."""
        return UpsilonParams(eta1=0.5, eta2=0.0, lambda1=math.sqrt(self.beta / 2.0), lambda2=1.0)

    def to_dict(self):
        return {"kind": "dumitriu_edelman", "beta": self.beta, "seed": self.seed}


def make_unperturbed(lambda1, eta1):
    return Unperturbed(float(lambda1), float(eta1))


def make_constant(value=1.0):
    return Constant(float(value))


def sample_upsilon(params, seed, x_dist="normal", y_dist="normal"):
    return Upsilon(params, _check_seed(seed), x_dist, y_dist)


def sample_dumitriu_edelman(beta, seed):
    return DumitriuEdelman(float(beta), _check_seed(seed))


def coeff_at(stream, n):
    """``(a(n), b(n))`` for a single site ``n >= 1``."""
    n = int(n)
    if n < 1:
        raise DomainError("n = 0 is reserved: a(0) = 1 is applied by the transfer module")
    a, b = stream.block(n, n + 1, check=False)
    return float(a[0]), float(b[0])


class Materialized(CoefficientStream):
    """A stream whose sites 1..n_max are precomputed; later sites fall through."""

    def __init__(self, base, n_max):
        self.base = base
        self.seed = base.seed
        self.n_max = int(n_max)
        self._a, self._b = base.block(1, self.n_max + 1, check=False)

    @cached_property
    def start_index(self):
        return self.base.start_index

    def _raw_block(self, lo, hi):
        if hi <= self.n_max + 1:
            return self._a[lo - 1:hi - 1], self._b[lo - 1:hi - 1]
        return self.base.block(lo, hi, check=False)

    def mean_a(self, n):
        return self.base.mean_a(n)

    def to_dict(self):
        return self.base.to_dict()


def materialize(stream, n_max):
    """Cache sites 1..n_max of ``stream``, for repeated passes at several energies."""
    return Materialized(stream, n_max)


def _require(d, key, cast=float):
    if key not in d or d[key] is None:
        raise ConfigError(key, "required for this ensemble kind")
    try:
        return cast(d[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"cannot interpret {d[key]!r}") from exc


def stream_from_dict(d, seed=None):
    """Build a stream from its JSON descriptor; ``seed`` overrides ``d['seed']``."""
    if not isinstance(d, dict):
        raise ConfigError("ensemble", "must be a JSON object")
    kind = d.get("kind")
    s = d.get("seed", 0) if seed is None else seed
    try:
        if kind == "unperturbed":
            return Unperturbed(_require(d, "lambda1"), _require(d, "eta1"), seed=int(s))
        if kind == "constant":
            return Constant(float(d.get("lambda1", 1.0)), seed=int(s))
        if kind == "upsilon":
            params = UpsilonParams(
                _require(d, "eta1"), _require(d, "eta2"), _require(d, "lambda1"), _require(d, "lambda2")
            )
            return Upsilon(params, int(s), d.get("x_dist", "normal"), d.get("y_dist", "normal"))
        if kind == "dumitriu_edelman":
            return DumitriuEdelman(_require(d, "beta"), int(s))
    except DomainError as exc:
        raise ConfigError("ensemble", str(exc)) from exc
    raise ConfigError("kind", f"unknown ensemble kind {kind!r}")


def ensemble_params(stream):
    """UpsilonParams governing the asymptotics of ``stream`` (None if not applicable)."""
    if isinstance(stream, Materialized):
        return ensemble_params(stream.base)
    if isinstance(stream, Upsilon):
        return stream.params
    if isinstance(stream, DumitriuEdelman):
        return stream.effective_params()
    if isinstance(stream, Unperturbed):
        return UpsilonParams(stream.eta1, -math.inf, stream.lambda1, 0.0)
    return None
