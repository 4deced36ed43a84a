"""Monte Carlo and importance-sampling estimators.

All log-magnitudes are carried as floats with the sign stored separately,
so a row product only becomes a float when it is added into Y.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .cramer import CramerSolution, solve_alpha
from .errors import (
    DomainError,
    GuardLimitError,
    NoCramerRootError,
    UnsupportedModelError,
    ValidationError,
)
from .factor_models import FactorModel, TwoPoint
from .special import norm_cdf
from .streams import run_blocks
from .tail import adaptive_horizon, horizon, remainder_bound

__all__ = [
    "Adaptive",
    "SimulationConfig",
    "TiltedEstimate",
    "StoppedChainSample",
    "YSample",
    "LindleyStats",
    "resolve_truncation",
    "simulate_Y",
    "is_tail_pn",
    "is_tail_p",
    "brute_force_p",
    "brute_force_terms",
    "sample_stopped_chain",
    "simulate_ruin",
    "simulate_lindley",
    "ev_normalizer",
    "maxima_ks_distance",
    "goldie_constant",
    "martingale_mean",
]

GUARD_STEPS = 10**6
MIN_IS_SAMPLES = 100
# S_n > log x is decided with this slack so lattice-aligned x (e.g. x = 2^k)
# are not flipped by rounding in k log a + (n - k) log b.
EXCEED_SLACK = 1e-9
_CHUNK = 1 << 18


@dataclass(frozen=True)
class Adaptive:
    """Truncate at the first N with h(gamma)^(N+1) / (1 - h(gamma)) < tolerance."""

    tolerance: float = 1e-6
    gamma: float | None = None


@dataclass(frozen=True)
class SimulationConfig:
    n_paths: int = 100_000
    seed: int = 0
    truncation: int | Adaptive = field(default_factory=Adaptive)
    workers: int = 1

    def __post_init__(self):
        if not isinstance(self.n_paths, (int, np.integer)) or self.n_paths < 1:
            raise ValidationError("n_paths must be a positive integer")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValidationError("seed must be a nonnegative integer")
        if not isinstance(self.workers, (int, np.integer)) or self.workers < 1:
            raise ValidationError("workers must be a positive integer")
        t = self.truncation
        if isinstance(t, Adaptive):
            if not 0 < t.tolerance < 1:
                raise ValidationError("adaptive tolerance must lie in (0, 1)")
        elif not isinstance(t, (int, np.integer)) or isinstance(t, bool) or t < 1:
            raise ValidationError("fixed truncation must be a positive integer")

    def to_dict(self):
        t = self.truncation
        trunc = (
            {"adaptive": {"tolerance": t.tolerance, "gamma": t.gamma}}
            if isinstance(t, Adaptive)
            else {"fixed": int(t)}
        )
        return {"n_paths": int(self.n_paths), "seed": int(self.seed), "truncation": trunc,
                "workers": int(self.workers)}


def resolve_truncation(model: FactorModel, cfg: SimulationConfig) -> int:
    t = cfg.truncation
    if not isinstance(t, Adaptive):
        return int(t)
    g = t.gamma
    if g is None:
        try:
            g = 0.5 * solve_alpha(model).alpha
        except NoCramerRootError:
            # no root (e.g. |X| constant below one): any g with h(g) < 1 works
            g = min(1.0, 0.5 * model.s_max)
    log_hg = float(model.log_h(g))
    if not log_hg < 0:
        raise DomainError(f"adaptive truncation needs h(gamma) < 1, got h({g}) = {math.exp(log_hg):.6g}",
                          bound=g)
    # (N + 1) log h + log(1 / (1 - h)) < log tol
    n = (math.log(t.tolerance) + math.log1p(-math.exp(log_hg))) / log_hg - 1
    return max(1, math.floor(n) + 1)


def _mean_se(total: float, total_sq: float, n: int):
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / max(n - 1, 1)
    return mean, math.sqrt(var / n)


@dataclass
class TiltedEstimate:
    value: float
    std_error: float
    n_samples: int
    per_n_breakdown: dict | None = None
    truncation_bound: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.value) and math.isfinite(self.std_error)):
            raise ArithmeticError("estimate is not finite")

    def to_dict(self):
        d = {"value": self.value, "std_error": self.std_error, "n_samples": self.n_samples}
        if self.truncation_bound:
            d["truncation_bound"] = self.truncation_bound
        if self.per_n_breakdown is not None:
            d["per_n"] = [
                {"n": n, "value": v, "std_error": se} for n, (v, se) in sorted(self.per_n_breakdown.items())
            ]
        return d


# --- direct simulation of Y -------------------------------------------------


@dataclass
class YSample:
    values: np.ndarray
    n_rows: int

    def tail(self, x=None, *, log_x=None, side: str = "upper") -> TiltedEstimate:
        """Empirical P(Y > x) (side='upper') or P(Y < -x) (side='lower')."""
        if (x is None) == (log_x is None):
            raise ValidationError("give exactly one of x or log_x")
        thr = x if x is not None else math.exp(log_x)
        if side == "upper":
            hits = self.values > thr
        elif side == "lower":
            hits = self.values < -thr
        else:
            raise ValidationError("side must be 'upper' or 'lower'")
        n = len(self.values)
        k = int(np.count_nonzero(hits))
        p = k / n
        return TiltedEstimate(value=p, std_error=math.sqrt(p * (1 - p) / max(n - 1, 1)), n_samples=n)


def simulate_Y(model: FactorModel, cfg: SimulationConfig) -> YSample:
    """Draw Y = sum_{n<=N} Pi_n with a fresh set of n factors for every row n."""
    n_rows = resolve_truncation(model, cfg)

    def block(rng, size):
        out = np.empty(size)
        for start in range(0, size, _CHUNK):
            m = min(_CHUNK, size - start)
            y = np.zeros(m)
            for n in range(1, n_rows + 1):
                logs, sign = model.sample_log_sum(n, rng, m)
                with np.errstate(over="ignore", under="ignore"):
                    y += sign * np.exp(logs)
            out[start:start + m] = y
        return out

    parts = run_blocks(block, cfg.n_paths, cfg.seed, cfg.workers, key=(0,))
    return YSample(values=np.concatenate(parts), n_rows=n_rows)


# --- importance sampling ------------------------------------------------------


def _log_x(x, log_x):
    if (x is None) == (log_x is None):
        raise ValidationError("give exactly one of x or log_x")
    if log_x is None:
        if not x > 0:
            raise DomainError("x must be positive", bound=0.0)
        return math.log(x)
    return float(log_x)


def _is_moments(model, alpha, n, lx, n_samples, seed, workers):
    tilted = model.tilted(alpha)

    def block(rng, size):
        total = total_sq = 0.0
        for start in range(0, size, _CHUNK):
            m = min(_CHUNK, size - start)
            s, sign = tilted.sample_log_sum(n, rng, m)
            hit = (s > lx + EXCEED_SLACK) & (sign > 0)
            w = np.exp(-alpha * (s[hit] - lx))
            total += float(np.sum(w))
            total_sq += float(np.sum(w * w))
        return total, total_sq

    parts = run_blocks(block, n_samples, seed, workers, key=(1, n))
    total = math.fsum(p[0] for p in parts)
    total_sq = math.fsum(p[1] for p in parts)
    # weights were computed relative to x^-alpha to keep them O(1)
    mean, se = _mean_se(total, total_sq, n_samples)
    scale = math.exp(-alpha * lx)
    return mean * scale, se * scale


def is_tail_pn(model: FactorModel, sol: CramerSolution, n: int, x=None, n_samples: int = 10_000, *,
               log_x=None, seed: int = 0, workers: int = 1) -> TiltedEstimate:
    """Unbiased estimate of P(Pi_n > x) = E^alpha[exp(-alpha S_n); S_n > log x, sign +].

    Tilting only reweights |X|, so the product's sign keeps its plain law and
    signed models need no special routing for a single row.
    """
    lx = _log_x(x, log_x)
    if n < 1:
        raise ValidationError("n must be >= 1")
    if n_samples < MIN_IS_SAMPLES:
        raise ValidationError(f"n_samples must be >= {MIN_IS_SAMPLES}; the standard error is meaningless below")
    value, se = _is_moments(model, sol.alpha, n, lx, n_samples, seed, workers)
    return TiltedEstimate(value=value, std_error=se, n_samples=n_samples)


def _allocation(sol, lx, n_max, per_n, scheme, floor):
    if scheme == "uniform" or not sol.sigma2_tilde > 0:
        return [per_n] * n_max
    if scheme != "phi":
        raise ValidationError("allocation must be 'phi' or 'uniform'")
    n = np.arange(1, n_max + 1)
    weights = norm_cdf((lx - n * sol.m_tilde) / np.sqrt(sol.sigma2_tilde * n))
    budget = per_n * n_max
    return [max(floor, int(round(budget * w / weights.sum()))) for w in weights]


@functools.lru_cache(maxsize=256)
def _cached_horizon(model, sol, lx):
    return adaptive_horizon(model, sol, lx)


@functools.lru_cache(maxsize=256)
def _cached_bound(model, n_max, lx, alpha):
    return remainder_bound(model, n_max, lx, alpha)


def is_tail_p(model: FactorModel, sol: CramerSolution, x=None, n_samples_per_n: int = 10_000, *,
              log_x=None, seed: int = 0, workers: int = 1, n_max: int | None = None,
              allocation: str = "phi", floor: int = 1000) -> TiltedEstimate:
    """p(x) = sum_n P(Pi_n > x) by per-row importance sampling.

    Rows run from 1 to ``n_max``. The default horizon starts at g_0.5(x) and
    grows until the Chernoff remainder is below 1e-3 of the renewal
    prediction; the remainder bound is reported as ``truncation_bound``
    (not folded into ``std_error``).
    """
    lx = _log_x(x, log_x)
    if n_samples_per_n < MIN_IS_SAMPLES:
        raise ValidationError(f"n_samples_per_n must be >= {MIN_IS_SAMPLES}")
    if n_max is None:
        n_max = _cached_horizon(model, sol, lx) if lx > 0 else 1
    counts = _allocation(sol, lx, n_max, n_samples_per_n, allocation, floor)
    breakdown = {}
    for n, count in enumerate(counts, start=1):
        breakdown[n] = _is_moments(model, sol.alpha, n, lx, count, seed, workers)
    value = math.fsum(v for v, _ in breakdown.values())
    se = math.sqrt(math.fsum(s * s for _, s in breakdown.values()))
    bound = _cached_bound(model, n_max, lx, sol.alpha) if lx > 0 else math.inf
    return TiltedEstimate(value=value, std_error=se, n_samples=int(sum(counts)),
                          per_n_breakdown=breakdown, truncation_bound=bound)


# --- exact lattice oracle -----------------------------------------------------


def brute_force_terms(model: TwoPoint, x=None, n_max: int = 400, *, log_x=None) -> np.ndarray:
    """P(Pi_n > x) for n = 1..n_max by summing binomial weights over the atom counts."""
    if not isinstance(model, TwoPoint):
        raise UnsupportedModelError("brute_force_p needs a two-point model")
    if n_max > 10_000:
        raise ValidationError("n_max above 1e4 is refused (O(n_max^2) enumeration)")
    if n_max < 1:
        raise ValidationError("n_max must be >= 1")
    lx = _log_x(x, log_x)
    out = np.empty(n_max)
    for n in range(1, n_max + 1):
        k = np.arange(n + 1)
        hit = (model.log_abs_product(k, n) > lx + EXCEED_SLACK) & (model.sign_product(k, n) > 0)
        out[n - 1] = math.fsum(stats.binom.pmf(k[hit], n, model.p_a))
    return out


def brute_force_p(model: TwoPoint, x=None, n_max: int = 400, *, log_x=None) -> float:
    return math.fsum(brute_force_terms(model, x, n_max, log_x=log_x))


# --- stopped-block chain and ruin ---------------------------------------------


@dataclass
class StoppedChainSample:
    w: np.ndarray
    n1: np.ndarray


def _draw_blocks(model, rng, size, guard):
    w = np.zeros(size)
    n1 = np.zeros(size, dtype=np.int64)
    active = np.arange(size)
    sign = np.ones(size, dtype=np.int8)
    steps = 0
    while active.size:
        steps += 1
        if steps > guard:
            raise GuardLimitError(f"stopped block exceeded {guard} steps")
        logs, sg = model.sample_log(rng, active.size)
        w[active] += logs
        n1[active] += 1
        sign[active] *= sg
        active = active[sign[active] < 0]
    return w, n1


def sample_stopped_chain(model: FactorModel, sol: CramerSolution | None = None, rng=None, size: int = 1, *,
                         tilted: bool = False, guard: int = GUARD_STEPS) -> StoppedChainSample:
    """Blocks of factors ending when the running product is positive again.

    ``w`` is the block log-modulus, ``n1`` its length. With ``tilted=True``
    the factors are drawn under the alpha-tilted law (needs ``sol``).
    """
    if rng is None:
        rng = np.random.default_rng()
    law = model
    if tilted:
        if sol is None:
            raise ValidationError("tilted blocks need a CramerSolution")
        law = model.tilted(sol.alpha)
    w, n1 = _draw_blocks(law, rng, size, guard)
    return StoppedChainSample(w=w, n1=n1)


def martingale_mean(model: FactorModel, sol: CramerSolution, n: int, cfg: SimulationConfig) -> TiltedEstimate:
    """Plain-measure estimate of E[exp(alpha S_n)] (equal to h(alpha)^n = 1)."""
    a = sol.alpha

    def block(rng, size):
        s, _ = model.sample_log_sum(n, rng, size)
        v = np.exp(a * s)
        return float(np.sum(v)), float(np.sum(v * v))

    parts = run_blocks(block, cfg.n_paths, cfg.seed, cfg.workers, key=(2, n))
    mean, se = _mean_se(math.fsum(p[0] for p in parts), math.fsum(p[1] for p in parts), cfg.n_paths)
    return TiltedEstimate(value=mean, std_error=se, n_samples=cfg.n_paths)


def _constant_modulus_below_one(model):
    return model.is_degenerate and float(model.log_h(1.0)) < 0


def simulate_ruin(model: FactorModel, sol: CramerSolution | None, x=None, cfg: SimulationConfig | None = None, *,
                  log_x=None, modulus: bool = False, guard: int = GUARD_STEPS) -> TiltedEstimate:
    """P(max_n Pi'_n > x) by running the walk under the tilted law until it crosses log x.

    Pi'_n = X_1 ... X_n uses one shared sequence. The estimator averages
    exp(-alpha S_tau) over first-passage times tau; for signed factors tau
    additionally requires a positive product unless ``modulus`` is set, in
    which case the target is P(max |Pi'_n| > x).
    """
    cfg = cfg or SimulationConfig()
    lx = _log_x(x, log_x)
    if _constant_modulus_below_one(model) and lx >= 0:
        return TiltedEstimate(value=0.0, std_error=0.0, n_samples=cfg.n_paths)
    if sol is None:
        sol = solve_alpha(model)
    a = sol.alpha
    law = model.tilted(a)
    need_sign = model.signed and not modulus

    def block(rng, size):
        total = total_sq = 0.0
        for start in range(0, size, _CHUNK):
            m = min(_CHUNK, size - start)
            s = np.zeros(m)
            sign = np.ones(m, dtype=np.int8)
            over = np.zeros(m)
            active = np.arange(m)
            steps = 0
            while active.size:
                steps += 1
                if steps > guard:
                    raise GuardLimitError(f"ruin path exceeded {guard} steps")
                logs, sg = law.sample_log(rng, active.size)
                s[active] += logs
                sign[active] *= sg
                done = s[active] > lx + EXCEED_SLACK
                if need_sign:
                    done &= sign[active] > 0
                over[active[done]] = s[active[done]] - lx
                active = active[~done]
            wts = np.exp(-a * over)
            total += float(np.sum(wts))
            total_sq += float(np.sum(wts * wts))
        return total, total_sq

    parts = run_blocks(block, cfg.n_paths, cfg.seed, cfg.workers, key=(3,))
    mean, se = _mean_se(math.fsum(p[0] for p in parts), math.fsum(p[1] for p in parts), cfg.n_paths)
    scale = math.exp(-a * lx)
    return TiltedEstimate(value=mean * scale, std_error=se * scale, n_samples=cfg.n_paths)


# --- Lindley recursion --------------------------------------------------------


@dataclass
class LindleyStats:
    u_grid: np.ndarray
    mean_exceedances: np.ndarray
    mean_cluster_size: np.ndarray
    mean_zero_hits: float
    path_min: float
    path_max: float
    n_paths: int
    n_steps: int
    paths: np.ndarray | None = None

    def to_dict(self):
        return {
            "u": self.u_grid.tolist(),
            "mean_exceedances": self.mean_exceedances.tolist(),
            "mean_cluster_size": self.mean_cluster_size.tolist(),
            "mean_zero_hits": self.mean_zero_hits,
            "path_min": self.path_min,
            "path_max": self.path_max,
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
        }


def simulate_lindley(model: FactorModel, n_steps: int, cfg: SimulationConfig | None = None, u_grid=(1.0, 2.0, 4.0),
                     *, keep_paths: bool = False) -> LindleyStats:
    """S+_t = max(S+_{t-1} + log|X_t|, 0) from S+_0 = 0.

    A cluster is the set of exceedances of u inside one excursion away from
    zero; ``mean_cluster_size`` averages its size over excursions with at
    least one exceedance (nan when there are none).
    """
    cfg = cfg or SimulationConfig(n_paths=1000)
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    u = np.asarray(u_grid, dtype=float)

    def block(rng, size):
        s = np.zeros(size)
        exceed = np.zeros((len(u), size))
        in_cluster = np.zeros((len(u), size), dtype=bool)
        clusters = np.zeros((len(u), size))
        zeros = np.zeros(size)
        lo, hi = math.inf, -math.inf
        path = np.empty((n_steps, size)) if keep_paths else None
        for t in range(n_steps):
            logs, _ = model.sample_log(rng, size)
            s = np.maximum(s + logs, 0.0)
            at_zero = s == 0.0
            zeros += at_zero
            ex = s[None, :] > u[:, None]
            exceed += ex
            clusters += ex & ~in_cluster
            # a cluster stays open until the walk regenerates at zero
            in_cluster = (in_cluster | ex) & ~at_zero[None, :]
            lo = min(lo, float(s.min()))
            hi = max(hi, float(s.max()))
            if keep_paths:
                path[t] = s
        return exceed.sum(axis=1), clusters.sum(axis=1), zeros.sum(), lo, hi, path

    parts = run_blocks(block, cfg.n_paths, cfg.seed, cfg.workers, key=(4,))
    exc = np.sum([p[0] for p in parts], axis=0)
    clu = np.sum([p[1] for p in parts], axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cluster_size = np.where(clu > 0, exc / np.maximum(clu, 1), np.nan)
    paths = np.concatenate([p[5] for p in parts], axis=1).T if keep_paths else None
    return LindleyStats(
        u_grid=u,
        mean_exceedances=exc / cfg.n_paths,
        mean_cluster_size=cluster_size,
        mean_zero_hits=float(sum(p[2] for p in parts) / cfg.n_paths),
        path_min=min(p[3] for p in parts),
        path_max=max(p[4] for p in parts),
        n_paths=cfg.n_paths,
        n_steps=n_steps,
        paths=paths,
    )


# --- extremes -----------------------------------------------------------------


def ev_normalizer(sol: CramerSolution, n: float) -> float:
    """a_n = (2 n log n / (alpha m(alpha)))^(1/alpha)."""
    if sol.signed:
        raise UnsupportedModelError("the maxima normalizer is defined for nonnegative factors only")
    if not n >= 2:
        raise ValidationError("n must be >= 2")
    return (2.0 * n * math.log(n) / (sol.alpha * sol.m_alpha)) ** (1.0 / sol.alpha)


def maxima_ks_distance(model: FactorModel, sol: CramerSolution, n: int, reps: int, cfg: SimulationConfig,
                       t_grid=None, normalizer=None) -> float:
    """sup_t |P(max_{i<=n} Y_i <= a_n t) - exp(-t^-alpha)| over a t grid.

    ``normalizer`` defaults to ``ev_normalizer(sol, n)``; ``reps`` maxima of
    ``n`` iid copies of Y are simulated (n * reps draws in total).
    """
    a_n = ev_normalizer(sol, n) if normalizer is None else float(normalizer)
    t = np.geomspace(0.2, 5.0, 41) if t_grid is None else np.asarray(t_grid, dtype=float)
    sub = SimulationConfig(n_paths=n * reps, seed=cfg.seed, truncation=cfg.truncation, workers=cfg.workers)
    maxima = simulate_Y(model, sub).values.reshape(reps, n).max(axis=1)
    emp = (maxima[:, None] <= a_n * t[None, :]).mean(axis=0)
    return float(np.max(np.abs(emp - np.exp(-t ** -sol.alpha))))


# --- Goldie constant ----------------------------------------------------------


def goldie_constant(model: FactorModel, sol, cfg: SimulationConfig | None = None, *, burn_in: int = 1000
                    ) -> TiltedEstimate:
    """E[(X Y' + 1)^alpha - (X Y')^alpha] with Y' from the recursion Y' <- X Y' + 1.

    ``sol`` may be a CramerSolution or a bare exponent (useful for factor
    laws with no Cramer root, such as a constant X).
    """
    cfg = cfg or SimulationConfig()
    if model.signed:
        raise UnsupportedModelError("goldie_constant covers nonnegative factors only")
    a = sol.alpha if isinstance(sol, CramerSolution) else float(sol)
    if not a > 0:
        raise ValidationError("alpha must be positive")

    def block(rng, size):
        y = np.zeros(size)
        for _ in range(burn_in):
            y = model.sample(rng, size) * y + 1.0
        if not np.all(np.isfinite(y)):
            raise GuardLimitError("Y' burn-in produced non-finite values")
        xy = model.sample(rng, size) * y
        v = (xy + 1.0) ** a - xy ** a
        return float(np.sum(v)), float(np.sum(v * v))

    parts = run_blocks(block, cfg.n_paths, cfg.seed, cfg.workers, key=(5,))
    mean, se = _mean_se(math.fsum(p[0] for p in parts), math.fsum(p[1] for p in parts), cfg.n_paths)
    return TiltedEstimate(value=mean, std_error=se, n_samples=cfg.n_paths)
