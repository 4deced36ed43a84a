"""Univariate factor laws for X and their moment transforms.

Every model exposes the moment transform ``h(s) = E|X|^s`` together with
``m(s) = E[|X|^s log|X|] = h'(s)`` and ``sigma2(s)``, the variance of
``log|X|`` under the s-tilted law (the second derivative of ``log h``).
Sampling always takes an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import InitVar, dataclass
from fractions import Fraction
from typing import Any, ClassVar

import numpy as np
from scipy import special, stats

from .errors import DomainError, NonNegativeDriftError, ValidationError

__all__ = [
    "FactorModel",
    "LogNormal",
    "GammaFactor",
    "LogGamma",
    "TwoPoint",
    "SignedMixture",
    "MomentReport",
    "model_from_dict",
    "moment_report",
    "TWO_POINT_FIXTURE",
]


@dataclass(frozen=True)
class MomentReport:
    s: float
    h: float
    m: float
    sigma2: float


class FactorModel:
    """Common interface. Subclasses are frozen dataclasses."""

    kind: ClassVar[str] = ""

    # -- domain -----------------------------------------------------------
    @property
    def s_min(self) -> float:
        return -math.inf

    @property
    def s_max(self) -> float:
        return math.inf

    def _check_s(self, s):
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr <= self.s_min) or np.any(s_arr >= self.s_max):
            bound = self.s_max if np.any(s_arr >= self.s_max) else self.s_min
            raise DomainError(
                f"{self.kind}: h(s) is infinite for s={s!r}; "
                f"finite only on ({self.s_min}, {self.s_max})",
                bound=bound,
            )

    # -- transforms -------------------------------------------------------
    def log_h(self, s):
        raise NotImplementedError

    def dlog_h(self, s):
        raise NotImplementedError

    def d2log_h(self, s):
        raise NotImplementedError

    def h(self, s):
        """E|X|^s."""
        self._check_s(s)
        s = np.asarray(s, dtype=float)
        return _out(np.where(s == 0, 1.0, np.exp(self.log_h(s))))

    def m(self, s):
        """E[|X|^s log|X|]."""
        self._check_s(s)
        return _out(np.exp(self.log_h(s)) * self.dlog_h(s))

    def sigma2(self, s):
        """Variance of log|X| under the law tilted by |X|^s."""
        self._check_s(s)
        return _out(self.d2log_h(s))

    @property
    def drift(self) -> float:
        """E[log|X|]."""
        return float(self.dlog_h(0.0))

    # -- sign structure ---------------------------------------------------
    @property
    def p_positive(self) -> float:
        return 1.0

    @property
    def signed(self) -> bool:
        return self.p_positive < 1.0

    @property
    def is_degenerate(self) -> bool:
        """True when |X| is a.s. constant."""
        return False

    @property
    def arithmetic(self) -> bool:
        return False

    @property
    def lattice_span(self) -> float | None:
        return None

    # -- sampling ---------------------------------------------------------
    def sample_log(self, rng: np.random.Generator, size=None):
        """Draw (log|X|, sign) pairs; sign is an int8 array of +-1."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        logs, sign = self.sample_log(rng, size)
        return sign * np.exp(logs)

    def sample_log_sum(self, n: int, rng: np.random.Generator, size=None):
        """(log|X_1...X_n|, sign of X_1...X_n) for n iid factors.

        Families closed under convolution of log|X| override this with an
        exact one-draw sampler.
        """
        if n < 1:
            raise ValidationError("n must be >= 1")
        total, sign = self.sample_log(rng, size)
        total = np.array(total, dtype=float)
        sign = np.array(sign, dtype=np.int8)
        for _ in range(n - 1):
            lg, sg = self.sample_log(rng, size)
            total += lg
            sign *= sg
        return total, sign

    def tilted(self, alpha: float) -> "FactorModel":
        """Law of X under dP^alpha = |X|^alpha / h(alpha) dP."""
        raise NotImplementedError

    def sample_tilted(self, alpha: float, rng: np.random.Generator, size=None):
        """Draw (log|X|, sign) under the alpha-tilted measure."""
        return self.tilted(alpha).sample_log(rng, size)

    # -- serialisation ----------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    def _check_drift(self):
        d = self.drift
        if not d < 0:
            raise NonNegativeDriftError(
                f"{self.kind}: E[log|X|] = {d:.6g} >= 0; the series Y diverges"
            )


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _probability(name, value, *, open_low=False, open_high=False):
    lo_ok = value > 0 if open_low else value >= 0
    hi_ok = value < 1 if open_high else value <= 1
    if not (lo_ok and hi_ok and math.isfinite(value)):
        raise ValidationError(f"{name}={value!r} is not a valid probability here")


def _positive(name, value):
    if not (math.isfinite(value) and value > 0):
        raise ValidationError(f"{name} must be a positive finite number, got {value!r}")


@dataclass(frozen=True)
class LogNormal(FactorModel):
    """log X ~ N(mu, sigma^2)."""

    mu: float
    sigma: float = 1.0
    check: InitVar[bool] = True
    kind: ClassVar[str] = "log_normal"

    def __post_init__(self, check):
        if not math.isfinite(self.mu):
            raise ValidationError("mu must be finite")
        _positive("s", self.sigma)
        if check:
            self._check_drift()

    def log_h(self, s):
        s = np.asarray(s, dtype=float)
        return self.mu * s + 0.5 * self.sigma**2 * s**2

    def dlog_h(self, s):
        return self.mu + self.sigma**2 * np.asarray(s, dtype=float)

    def d2log_h(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.sigma**2)

    def sample_log(self, rng, size=None):
        logs = rng.normal(self.mu, self.sigma, size)
        return logs, np.ones(np.shape(logs), dtype=np.int8)

    def sample_log_sum(self, n, rng, size=None):
        if n < 1:
            raise ValidationError("n must be >= 1")
        logs = rng.normal(n * self.mu, self.sigma * math.sqrt(n), size)
        return logs, np.ones(np.shape(logs), dtype=np.int8)

    def tilted(self, alpha):
        self._check_s(alpha)
        return LogNormal(self.mu + alpha * self.sigma**2, self.sigma, check=False)

    def to_dict(self):
        return {"kind": self.kind, "mu": self.mu, "s": self.sigma}


@dataclass(frozen=True)
class GammaFactor(FactorModel):
    """X ~ Gamma(shape=gamma, rate=beta)."""

    gamma: float
    beta: float
    check: InitVar[bool] = True
    kind: ClassVar[str] = "gamma"

    def __post_init__(self, check):
        _positive("gamma", self.gamma)
        _positive("beta", self.beta)
        if check:
            self._check_drift()

    @property
    def s_min(self):
        return -self.gamma

    def log_h(self, s):
        s = np.asarray(s, dtype=float)
        return special.gammaln(self.gamma + s) - special.gammaln(self.gamma) - s * math.log(self.beta)

    def dlog_h(self, s):
        return special.digamma(self.gamma + np.asarray(s, dtype=float)) - math.log(self.beta)

    def d2log_h(self, s):
        return special.polygamma(1, self.gamma + np.asarray(s, dtype=float))

    def sample_log(self, rng, size=None):
        x = rng.gamma(self.gamma, 1.0 / self.beta, size)
        return np.log(x), np.ones(np.shape(x), dtype=np.int8)

    def tilted(self, alpha):
        self._check_s(alpha)
        return GammaFactor(self.gamma + alpha, self.beta, check=False)

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma, "beta": self.beta}


@dataclass(frozen=True)
class LogGamma(FactorModel):
    """X = exp(Z - mu) with Z ~ Gamma(shape=gamma, rate=beta)."""

    gamma: float
    beta: float
    mu: float
    check: InitVar[bool] = True
    kind: ClassVar[str] = "log_gamma"

    def __post_init__(self, check):
        _positive("gamma", self.gamma)
        _positive("beta", self.beta)
        if not math.isfinite(self.mu):
            raise ValidationError("mu must be finite")
        if check:
            _positive("mu", self.mu)
            self._check_drift()

    @property
    def s_max(self):
        return self.beta

    def log_h(self, s):
        s = np.asarray(s, dtype=float)
        return -s * self.mu - self.gamma * np.log1p(-s / self.beta)

    def dlog_h(self, s):
        return -self.mu + self.gamma / (self.beta - np.asarray(s, dtype=float))

    def d2log_h(self, s):
        return self.gamma / (self.beta - np.asarray(s, dtype=float)) ** 2

    def sample_log(self, rng, size=None):
        z = rng.gamma(self.gamma, 1.0 / self.beta, size)
        return z - self.mu, np.ones(np.shape(z), dtype=np.int8)

    def sample_log_sum(self, n, rng, size=None):
        if n < 1:
            raise ValidationError("n must be >= 1")
        z = rng.gamma(n * self.gamma, 1.0 / self.beta, size)
        return z - n * self.mu, np.ones(np.shape(z), dtype=np.int8)

    def tilted(self, alpha):
        self._check_s(alpha)
        return LogGamma(self.gamma, self.beta - alpha, self.mu, check=False)

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma, "beta": self.beta, "mu": self.mu}


@dataclass(frozen=True)
class TwoPoint(FactorModel):
    """X = a with probability p_a, else b. Atoms may be negative."""

    a: float
    b: float
    p_a: float
    check: InitVar[bool] = True
    kind: ClassVar[str] = "two_point"

    def __post_init__(self, check):
        for name, v in (("a", self.a), ("b", self.b)):
            if not math.isfinite(v) or v == 0:
                raise ValidationError(f"{name} must be finite and non-zero")
        _probability("p_a", self.p_a)
        if check:
            self._check_drift()

    @property
    def log_a(self) -> float:
        return math.log(abs(self.a))

    @property
    def log_b(self) -> float:
        return math.log(abs(self.b))

    def log_abs_product(self, k, n):
        """log|product| when k of n factors equal a. Shared with exact oracles."""
        k = np.asarray(k)
        return k * self.log_a + (n - k) * self.log_b

    def sign_product(self, k, n):
        k = np.asarray(k)
        if self.a > 0 and self.b > 0:
            return np.ones(k.shape, dtype=np.int8)
        sa = 1 if self.a > 0 else -1
        sb = 1 if self.b > 0 else -1
        return (np.where(k % 2 == 0, 1, sa) * np.where((n - k) % 2 == 0, 1, sb)).astype(np.int8)

    def log_h(self, s):
        s = np.asarray(s, dtype=float)
        terms = []
        if self.p_a > 0:
            terms.append(math.log(self.p_a) + s * self.log_a)
        if self.p_a < 1:
            terms.append(math.log1p(-self.p_a) + s * self.log_b)
        return terms[0] if len(terms) == 1 else np.logaddexp(*terms)

    def _tilted_pa(self, s):
        s = np.asarray(s, dtype=float)
        if self.p_a in (0.0, 1.0):
            return np.full_like(s, self.p_a)
        la = math.log(self.p_a) + s * self.log_a
        lb = math.log1p(-self.p_a) + s * self.log_b
        return special.expit(la - lb)

    def dlog_h(self, s):
        w = self._tilted_pa(s)
        return w * self.log_a + (1 - w) * self.log_b

    def d2log_h(self, s):
        w = self._tilted_pa(s)
        return w * (1 - w) * (self.log_a - self.log_b) ** 2

    @property
    def p_positive(self):
        return (self.p_a if self.a > 0 else 0.0) + ((1 - self.p_a) if self.b > 0 else 0.0)

    @property
    def is_degenerate(self):
        return abs(self.a) == abs(self.b) or self.p_a in (0.0, 1.0)

    @property
    def arithmetic(self):
        return True

    @property
    def lattice_span(self):
        """Largest d with log|a|, log|b| both in d*Z (None if incommensurate)."""
        la, lb = self.log_a, self.log_b
        if la == 0 and lb == 0:
            return None
        if la == 0 or lb == 0 or self.is_degenerate:
            return abs(la if la != 0 else lb)
        ratio = Fraction(la / lb).limit_denominator(10_000)
        if abs(float(ratio) - la / lb) > 1e-12:
            return None
        return abs(lb) / ratio.denominator

    def sample_log(self, rng, size=None):
        k = rng.random(size) < self.p_a
        logs = np.where(k, self.log_a, self.log_b)
        sign = np.where(k, 1 if self.a > 0 else -1, 1 if self.b > 0 else -1).astype(np.int8)
        return logs, sign

    def sample_log_sum(self, n, rng, size=None):
        if n < 1:
            raise ValidationError("n must be >= 1")
        # inverse-cdf draw of the atom count: one uniform and a table lookup per path
        cdf = stats.binom.cdf(np.arange(n + 1), n, self.p_a)
        k = np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), n)
        return self.log_abs_product(k, n).astype(float), self.sign_product(k, n).astype(np.int8)

    def tilted(self, alpha):
        return TwoPoint(self.a, self.b, float(self._tilted_pa(alpha)), check=False)

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "b": self.b, "p_a": self.p_a}


@dataclass(frozen=True)
class SignedMixture(FactorModel):
    """X = +-|B| where B follows ``base`` and the sign flips with probability q."""

    base: FactorModel
    q: float
    check: InitVar[bool] = True
    kind: ClassVar[str] = "signed_mixture"

    def __post_init__(self, check):
        if not isinstance(self.base, FactorModel):
            raise ValidationError("base must be a FactorModel")
        if self.base.signed:
            raise ValidationError("base of a signed mixture must be a.s. positive")
        _probability("q", self.q, open_low=True, open_high=True)
        if check:
            self._check_drift()

    @property
    def s_min(self):
        return self.base.s_min

    @property
    def s_max(self):
        return self.base.s_max

    def log_h(self, s):
        return self.base.log_h(s)

    def dlog_h(self, s):
        return self.base.dlog_h(s)

    def d2log_h(self, s):
        return self.base.d2log_h(s)

    @property
    def p_positive(self):
        return 1.0 - self.q

    @property
    def is_degenerate(self):
        return self.base.is_degenerate

    @property
    def arithmetic(self):
        return self.base.arithmetic

    @property
    def lattice_span(self):
        return self.base.lattice_span

    def sample_log(self, rng, size=None):
        logs, _ = self.base.sample_log(rng, size)
        flip = rng.random(size) < self.q
        return logs, np.where(flip, -1, 1).astype(np.int8)

    def sample_log_sum(self, n, rng, size=None):
        logs, _ = self.base.sample_log_sum(n, rng, size)
        flips = rng.binomial(n, self.q, size)
        return logs, np.where(flips % 2 == 0, 1, -1).astype(np.int8)

    def tilted(self, alpha):
        # |X| and the sign are independent, so tilting leaves q unchanged.
        return SignedMixture(self.base.tilted(alpha), self.q, check=False)

    def to_dict(self):
        return {"kind": self.kind, "base": self.base.to_dict(), "q": self.q}


_KINDS: dict[str, tuple[type, dict[str, str], tuple[str, ...]]] = {
    # kind: (class, json-key -> attribute, required keys)
    "log_normal": (LogNormal, {"mu": "mu", "s": "sigma"}, ("mu",)),
    "gamma": (GammaFactor, {"gamma": "gamma", "beta": "beta"}, ("gamma", "beta")),
    "log_gamma": (LogGamma, {"gamma": "gamma", "beta": "beta", "mu": "mu"}, ("gamma", "beta", "mu")),
    "two_point": (TwoPoint, {"a": "a", "b": "b", "p_a": "p_a"}, ("a", "b", "p_a")),
    "signed_mixture": (SignedMixture, {"base": "base", "q": "q"}, ("base", "q")),
}


def model_from_dict(desc: dict[str, Any], *, check: bool = True) -> FactorModel:
    """Build a model from its JSON descriptor, rejecting unknown fields."""
    if not isinstance(desc, dict):
        raise ValidationError(f"model descriptor must be an object, got {type(desc).__name__}")
    kind = desc.get("kind")
    if kind not in _KINDS:
        raise ValidationError(f"unknown model kind {kind!r}; expected one of {sorted(_KINDS)}")
    cls, keymap, required = _KINDS[kind]
    unknown = set(desc) - set(keymap) - {"kind"}
    if unknown:
        raise ValidationError(f"unknown field(s) for {kind}: {sorted(unknown)}")
    missing = [k for k in required if k not in desc]
    if missing:
        raise ValidationError(f"missing field(s) for {kind}: {missing}")
    kwargs = {}
    for key, attr in keymap.items():
        if key not in desc:
            continue
        value = desc[key]
        if key == "base":
            value = model_from_dict(value, check=False)
        elif isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{kind}.{key} must be a number, got {value!r}")
        else:
            value = float(value)
        kwargs[attr] = value
    return cls(**kwargs, check=check)


def moment_report(model: FactorModel, s: float) -> MomentReport:
    return MomentReport(s=s, h=float(model.h(s)), m=float(model.m(s)), sigma2=float(model.sigma2(s)))


TWO_POINT_FIXTURE = TwoPoint(2.0, 0.5, 1.0 / 3.0)
