"""Cramer exponent: the positive root of h(alpha) = E|X|^alpha = 1."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .errors import BoundaryRootError, NoCramerRootError, ValidationError
from .factor_models import FactorModel, SignedMixture, TwoPoint

__all__ = ["CramerSolution", "ConditionReport", "solve_alpha", "check_conditions", "block_moments"]

H_TOL = 1e-12
_S_CAP = 1e6
# a root this close (relative) to a pole of h is treated as sitting on it
BOUNDARY_RTOL = 1e-6

@dataclass(frozen=True)
class CramerSolution:
    alpha: float
    m_alpha: float
    sigma2_alpha: float
    drift: float
    signed: bool
    p_positive: float
    m_tilde: float
    sigma2_tilde: float
    leading_constant: float

    def to_dict(self):
        return asdict(self)

def _sign_conditional(model: FactorModel, alpha: float):
    """Under the alpha-tilted law: P(X>0) and mean/variance of log|X| given each sign."""
    tilt = model.tilted(alpha)
    if isinstance(model, SignedMixture):
        m = float(tilt.base.dlog_h(0.0))
        v = float(tilt.base.d2log_h(0.0))
        return 1.0 - model.q, (m, v), (m, v)
    if isinstance(model, TwoPoint) and model.signed:
        # each sign class is a single atom, or both atoms share a sign
        atoms = [(tilt.p_a, model.a, model.log_a), (1 - tilt.p_a, model.b, model.log_b)]
        groups = {}
        for w, x, lg in atoms:
            groups.setdefault(x > 0, []).append((w, lg))

        def moments(items):
            if not items:
                return 0.0, (0.0, 0.0)
            tot = sum(w for w, _ in items)
            if tot == 0:
                return 0.0, (0.0, 0.0)
            mean = sum(w * lg for w, lg in items) / tot
            var = sum(w * (lg - mean) ** 2 for w, lg in items) / tot
            return tot, (mean, var)

        p_pos, plus = moments(groups.get(True, []))
        _, minus = moments(groups.get(False, []))
        return p_pos, plus, minus
    m = float(tilt.dlog_h(0.0))
    v = float(tilt.d2log_h(0.0))
    return 1.0, (m, v), (m, v)

def block_moments(model: FactorModel, alpha: float) -> tuple[float, float]:
    """Tilted mean and variance of log of one stopped block (product sign back to +).

    A block is a single positive factor with probability p, otherwise a
    negative factor, a geometric number of positive factors and a closing
    negative factor.
    """
    p, (m_pos, v_pos), (m_neg, v_neg) = _sign_conditional(model, alpha)
    if p >= 1.0:
        return m_pos, v_pos
    q = 1.0 - p
    g_mean = p / q
    g_var = p / q**2
    t_mean = 2 * m_neg + g_mean * m_pos
    t_var = 2 * v_neg + g_mean * v_pos + g_var * m_pos**2
    mean = p * m_pos + q * t_mean
    second = p * (v_pos + m_pos**2) + q * (t_var + t_mean**2)
    return mean, second - mean**2

def _find_bracket(model: FactorModel):
    log_h = lambda s: float(model.log_h(s))
    s_max = model.s_max
    lo, s = 0.0, 1e-3
    while True:
        if s >= s_max:
            s = 0.5 * (lo + s_max)
        if log_h(s) > 0:
            return lo, s
        lo = s
        if math.isfinite(s_max) and s_max - s <= 1e-12 * max(1.0, s_max):
            raise BoundaryRootError(
                f"h(s) < 1 up to the domain edge s={s_max}; no Cramer root inside the domain"
            )
        if s > _S_CAP:
            raise NoCramerRootError(f"h(s) <= 1 for all s <= {_S_CAP:g}; no Cramer root")
        s = 2 * s if 2 * s < s_max else 0.5 * (s + s_max)

def solve_alpha(model: FactorModel, bracket_hint: tuple[float, float] | None = None) -> CramerSolution:
    """Solve h(alpha) = 1 by bisection on the convex function log h."""
    if model.drift >= 0:
        raise NoCramerRootError("non-negative drift: h decreases nowhere near 0")
    if bracket_hint is not None:
        lo, hi = map(float, bracket_hint)
        if not 0 <= lo < hi:
            raise ValidationError("bracket_hint must satisfy 0 <= lo < hi")
        if model.log_h(hi) <= 0 or (lo > 0 and model.log_h(lo) >= 0):
            raise NoCramerRootError(f"log h does not change sign on [{lo}, {hi}]")
    else:
        lo, hi = _find_bracket(model)

    f = lambda s: float(model.log_h(s))
    f_lo = f(lo) if lo > 0 else -0.0
    while hi - lo > 1e-13 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm > 0:
            hi = mid
        else:
            lo, f_lo = mid, fm
    f_hi = f(hi)
    alpha = hi
    if f_hi != f_lo and lo > 0:
        sec = hi - f_hi * (hi - lo) / (f_hi - f_lo)
        if lo <= sec <= hi and abs(f(sec)) <= abs(f_hi):
            alpha = sec
    if abs(f(lo)) < abs(f(alpha)) and lo > 0:
        alpha = lo
    if math.isfinite(model.s_max) and model.s_max - alpha <= BOUNDARY_RTOL * model.s_max:
        raise BoundaryRootError(f"Cramer root {alpha} is at the domain boundary {model.s_max}")
    h_alpha = float(model.h(alpha))
    if abs(h_alpha - 1.0) > H_TOL:
        raise NoCramerRootError(f"solver stalled: h({alpha}) = {h_alpha!r}")
    return _package(model, alpha)

def _package(model: FactorModel, alpha: float) -> CramerSolution:
    m_alpha = float(model.m(alpha))
    sigma2 = float(model.sigma2(alpha))
    signed = model.signed
    if signed:
        m_tilde, sigma2_tilde = block_moments(model, alpha)
    else:
        m_tilde, sigma2_tilde = m_alpha, sigma2
    return CramerSolution(
        alpha=alpha,
        m_alpha=m_alpha,
        sigma2_alpha=sigma2,
        drift=model.drift,
        signed=signed,
        p_positive=model.p_positive,
        m_tilde=m_tilde,
        sigma2_tilde=sigma2_tilde,
        leading_constant=2.0 / m_tilde,
    )

@dataclass(frozen=True)
class ConditionReport:
    negative_drift: bool
    second_log_moment_finite: bool
    arithmetic: bool
    lattice_span: float | None
    constant_factor: bool
    constant_modulus: bool
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (
            self.negative_drift
            and self.second_log_moment_finite
            and not self.constant_factor
            and not self.constant_modulus
        )

    def to_dict(self):
        d = asdict(self)
        d["ok"] = self.ok
        return d

def check_conditions(model: FactorModel, sol: CramerSolution | None = None) -> ConditionReport:
    """Flag which hypotheses of the tail theory hold. Never raises."""
    notes = []
    drift = model.drift
    negative_drift = bool(drift < 0)
    if not negative_drift:
        notes.append(f"E log|X| = {drift:.6g} is not negative")
    constant_modulus = bool(model.is_degenerate)
    constant_factor = constant_modulus and not model.signed
    if constant_modulus:
        notes.append("|X| is a.s. constant: h(s) has no root other than 0 and sigma^2 = 0")
    if constant_factor:
        notes.append("X is a.s. constant: P(Xx + 1 = x) = 1 for x = 1/(1 - X)")
    if sol is not None:
        # every built-in family has all log-moments finite strictly inside its domain
        second = bool(sol.alpha < model.s_max and math.isfinite(sol.sigma2_alpha))
    else:
        second = True
    if model.arithmetic:
        notes.append("log|X| lives on a lattice: only two-sided bounds on x^alpha P(max > x)")
    return ConditionReport(
        negative_drift=negative_drift,
        second_log_moment_finite=second,
        arithmetic=bool(model.arithmetic),
        lattice_span=model.lattice_span,
        constant_factor=constant_factor,
        constant_modulus=constant_modulus,
        notes=notes,
    )
