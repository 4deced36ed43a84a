"""Products of iid nonnegative random matrices.

Products are carried as (matrix scaled to unit max-entry, log of the scale)
so depths of several hundred factors neither overflow nor underflow.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp

from .errors import (
    BracketError,
    InfeasibleError,
    NonNegativeDriftError,
    UnstableEstimateError,
    ValidationError,
)
from .factor_models import FactorModel, model_from_dict
from .montecarlo import SimulationConfig
from .streams import run_blocks

__all__ = [
    "MatrixEnsemble",
    "MultivariateCramer",
    "MVTailEstimates",
    "ensemble_from_dict",
    "log_norm_samples",
    "estimate_h",
    "estimate_lyapunov",
    "solve_alpha_mv",
    "mv_tail_estimates",
]

FD_STEP = 0.05
_N_BATCHES = 20


@dataclass(frozen=True)
class MatrixEnsemble:
    """Either independent entries (FactorModel or a constant >= 0) or finite matrix atoms.

    ``dense_subgroup`` records the user's assertion that the non-lattice
    condition on the spectral radii holds; it cannot be checked here.
    """

    d: int
    entries: tuple | None = None
    atoms: tuple | None = None
    probs: tuple | None = None
    scale: float = 1.0
    dense_subgroup: bool = False

    def __post_init__(self):
        if (self.entries is None) == (self.atoms is None):
            raise ValidationError("give exactly one of entries or atoms")
        if not isinstance(self.d, int) or self.d < 2:
            raise ValidationError("d must be an integer >= 2")
        if not self.scale > 0:
            raise ValidationError("scale must be positive")
        if self.entries is not None:
            self._validate_entries()
        else:
            self._validate_atoms()

    def _validate_entries(self):
        if len(self.entries) != self.d or any(len(r) != self.d for r in self.entries):
            raise ValidationError(f"entries must be a {self.d}x{self.d} table")
        for i, row in enumerate(self.entries):
            live = False
            for e in row:
                if isinstance(e, FactorModel):
                    if e.signed:
                        raise ValidationError("matrix entries must be nonnegative")
                    live = True
                elif isinstance(e, (int, float)) and not isinstance(e, bool) and math.isfinite(e):
                    if e < 0:
                        raise ValidationError("matrix entries must be nonnegative")
                    live = live or e > 0
                else:
                    raise ValidationError(f"entry {e!r} is neither a model nor a number")
            if not live:
                raise ValidationError(f"row {i} is zero with probability one")

    def _validate_atoms(self):
        if self.probs is None or len(self.probs) != len(self.atoms) or not self.atoms:
            raise ValidationError("atoms need one probability each")
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValidationError("atom probabilities must be nonnegative and sum to 1")
        for m in self.atoms:
            a = np.asarray(m, dtype=float)
            if a.shape != (self.d, self.d):
                raise ValidationError(f"every atom must be {self.d}x{self.d}")
            if np.any(a < 0) or not np.all(np.isfinite(a)):
                raise ValidationError("atoms must be finite and nonnegative")
        for m, q in zip(self.atoms, p):
            if q > 0 and np.any(np.asarray(m, dtype=float).max(axis=1) == 0):
                raise ValidationError("an atom with positive probability has a zero row")

    # -- constructors --------------------------------------------------------
    @classmethod
    def from_entries(cls, entries, **kw):
        return cls(d=len(entries), entries=tuple(tuple(r) for r in entries), **kw)

    @classmethod
    def from_atoms(cls, matrices, probs, **kw):
        mats = tuple(tuple(tuple(float(v) for v in row) for row in m) for m in matrices)
        return cls(d=len(mats[0]), atoms=mats, probs=tuple(float(p) for p in probs), **kw)

    @classmethod
    def diagonal(cls, models):
        d = len(models)
        return cls.from_entries([[models[i] if i == j else 0.0 for j in range(d)] for i in range(d)])

    def scaled(self, c: float) -> "MatrixEnsemble":
        return MatrixEnsemble(self.d, self.entries, self.atoms, self.probs, self.scale * c, self.dense_subgroup)

    # -- sampling ------------------------------------------------------------
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty((size, self.d, self.d))
        if self.entries is not None:
            for i, row in enumerate(self.entries):
                for j, e in enumerate(row):
                    out[:, i, j] = e.sample(rng, size) if isinstance(e, FactorModel) else e
        else:
            cdf = np.cumsum(self.probs)
            idx = np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), len(self.atoms) - 1)
            out[:] = np.asarray(self.atoms, dtype=float)[idx]
        if self.scale != 1.0:
            out *= self.scale
        return out

    def to_dict(self) -> dict[str, Any]:
        if self.entries is not None:
            body = {"d": self.d, "entries": [[e.to_dict() if isinstance(e, FactorModel) else e for e in row]
                                            for row in self.entries]}
        else:
            body = {"atoms": [{"matrix": [list(r) for r in m], "prob": p} for m, p in zip(self.atoms, self.probs)]}
        if self.scale != 1.0:
            body["scale"] = self.scale
        if self.dense_subgroup:
            body["dense_subgroup"] = True
        return body


def ensemble_from_dict(desc: dict[str, Any]) -> MatrixEnsemble:
    if not isinstance(desc, dict):
        raise ValidationError("ensemble descriptor must be a JSON object")
    extra = dict(scale=float(desc.get("scale", 1.0)), dense_subgroup=bool(desc.get("dense_subgroup", False)))
    if "entries" in desc:
        unknown = set(desc) - {"d", "entries", "scale", "dense_subgroup"}
        if unknown:
            raise ValidationError(f"unknown ensemble field(s): {sorted(unknown)}")
        rows = desc["entries"]
        if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
            raise ValidationError("entries must be a list of lists")
        if "d" in desc and desc["d"] != len(rows):
            raise ValidationError("d does not match the entries table")

        def entry(e):
            if isinstance(e, dict):
                # entries are marginal laws; their own drift is irrelevant here
                return model_from_dict(e, check=False)
            if isinstance(e, bool) or not isinstance(e, (int, float)):
                raise ValidationError(f"entry {e!r} is neither a model nor a number")
            return float(e)

        return MatrixEnsemble.from_entries([[entry(e) for e in r] for r in rows], **extra)
    if "atoms" in desc:
        unknown = set(desc) - {"atoms", "scale", "dense_subgroup"}
        if unknown:
            raise ValidationError(f"unknown ensemble field(s): {sorted(unknown)}")
        atoms = desc["atoms"]
        if not isinstance(atoms, list) or not atoms:
            raise ValidationError("atoms must be a non-empty list")
        try:
            mats = [a["matrix"] for a in atoms]
            probs = [a["prob"] for a in atoms]
        except (KeyError, TypeError):
            raise ValidationError("each atom needs 'matrix' and 'prob'") from None
        return MatrixEnsemble.from_atoms(mats, probs, **extra)
    raise ValidationError("ensemble descriptor needs 'entries' or 'atoms'")


# --- products -----------------------------------------------------------------


def _log_opnorm(m: np.ndarray) -> np.ndarray:
    """log of the largest singular value of each matrix in a stack."""
    if m.shape[-1] == 2:
        # sigma_max^2 = (T + sqrt(T^2 - 4 det^2)) / 2 with T the squared Frobenius norm
        t = np.einsum("kij,kij->k", m, m)
        det = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
        disc = np.sqrt(np.maximum(t * t - 4 * det * det, 0.0))
        return 0.5 * np.log(0.5 * (t + disc))
    return np.log(np.linalg.svd(m, compute_uv=False)[:, 0])


def _product_log_norms(ens, depths, rng, size):
    """log ||X_1 ... X_k|| at each k in ``depths`` along the same paths."""
    depths = sorted(set(depths))
    out = np.empty((len(depths), size))
    prod = np.broadcast_to(np.eye(ens.d), (size, ens.d, ens.d)).copy()
    log_scale = np.zeros(size)
    col = 0
    for k in range(1, depths[-1] + 1):
        prod = prod @ ens.sample(rng, size)
        c = prod.max(axis=(1, 2))
        prod /= c[:, None, None]
        log_scale += np.log(c)
        if k == depths[col]:
            out[col] = log_scale + _log_opnorm(prod)
            col += 1
    return out


@functools.lru_cache(maxsize=32)
def _cached_log_norms(ens, depths, n_samples, seed, workers):
    parts = run_blocks(lambda rng, size: _product_log_norms(ens, depths, rng, size), n_samples, seed, workers,
                       key=(10, *depths))
    arr = np.concatenate(parts, axis=1)
    arr.setflags(write=False)
    return arr


def log_norm_samples(ens: MatrixEnsemble, depths, n_samples: int, seed: int = 0, workers: int = 1) -> np.ndarray:
    """Array (len(depths), n_samples) of log ||Pi'_k||; identical inputs return identical draws."""
    depths = tuple(sorted(set(int(k) for k in depths)))
    if depths[0] < 1:
        raise ValidationError("depths must be >= 1")
    if n_samples < 2:
        raise ValidationError("n_samples must be >= 2")
    return _cached_log_norms(ens, depths, int(n_samples), int(seed), int(workers))


# --- h(s) ---------------------------------------------------------------------


def _log_mean_pow(logs, s):
    return logsumexp(s * logs, axis=-1) - math.log(logs.shape[-1])


def _rel_se(logs, s, log_mean):
    # SE of the sample mean of ||Pi||^s relative to the mean, in a scale-free form
    w = np.exp(s * logs - log_mean)
    return float(np.std(w, ddof=1) / math.sqrt(logs.shape[-1]))


def _depths(depth, method):
    if method == "power":
        return (depth,)
    if method == "ratio":
        if depth < 2:
            raise ValidationError("the ratio method needs depth >= 2")
        return (depth // 2, depth)
    raise ValidationError("method must be 'power' or 'ratio'")


def _log_h_from(logs, s, depth, method):
    if method == "power":
        return _log_mean_pow(logs[0], s) / depth
    half = depth // 2
    return (_log_mean_pow(logs[1], s) - _log_mean_pow(logs[0], s)) / (depth - half)


def estimate_h(ens: MatrixEnsemble, s: float, depth: int = 30, n_samples: int = 20_000, *, seed: int = 0,
               workers: int = 1, method: str = "power") -> tuple[float, float]:
    """h(s) from products of ``depth`` factors, with a delta-method standard error.

    ``power``: (mean ||Pi'_n||^s)^(1/n). ``ratio``: (mean ||Pi'_n||^s / mean
    ||Pi'_{n/2}||^s)^(1/(n - n/2)) on the same paths, which divides out the
    constant prefactor that makes the plain root converge like c^(1/n).
    """
    if s < 0:
        raise ValidationError("s must be >= 0")
    if s == 0:
        return 1.0, 0.0
    depths = _depths(depth, method)
    logs = log_norm_samples(ens, depths, n_samples, seed, workers)
    lm = [_log_mean_pow(row, s) for row in logs]
    rel = [_rel_se(row, s, m) for row, m in zip(logs, lm)]
    if max(rel) > 0.5:
        raise UnstableEstimateError(f"relative standard error {max(rel):.2f} at s={s}: moment dominated by few paths")
    log_h = _log_h_from(logs, s, depth, method)
    value = math.exp(log_h)
    if method == "power":
        se = value * rel[0] / depth
    else:
        wf = np.exp(s * logs[1] - lm[1])
        wh = np.exp(s * logs[0] - lm[0])
        # var of log(mean_f) - log(mean_h) by the delta method with the CRN covariance
        var = float(np.var(wf - wh, ddof=1)) / logs.shape[1]
        se = value * math.sqrt(var) / (depth - depth // 2)
    return value, se


def estimate_lyapunov(ens: MatrixEnsemble, depth: int = 30, n_samples: int = 20_000, *, seed: int = 0,
                      workers: int = 1, max_depth: int = 960, check: bool = True) -> tuple[float, float, int]:
    """(gamma, SE, depth used): mean of log ||Pi'_n|| / n, doubling n until two depths agree within 2 SE."""
    prev = None
    k = depth
    while True:
        logs = log_norm_samples(ens, (k,), n_samples, seed, workers)[0]
        g = float(np.mean(logs)) / k
        se = float(np.std(logs, ddof=1)) / math.sqrt(len(logs)) / k
        if prev is not None and abs(g - prev[0]) <= 2 * math.hypot(se, prev[1]):
            break
        if 2 * k > max_depth:
            break
        prev = (g, se)
        k *= 2
    if check and g > 3 * se:
        raise NonNegativeDriftError(f"estimated Lyapunov exponent {g:.4g} (SE {se:.2g}) is positive")
    return g, se, k


@dataclass
class MultivariateCramer:
    alpha: float
    alpha_se: float
    m_alpha: float
    m_alpha_se: float
    n_products: int
    method: str
    h_curve: list = field(default_factory=list)

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "alpha_se": self.alpha_se,
            "m_alpha": self.m_alpha,
            "m_alpha_se": self.m_alpha_se,
            "n_products": self.n_products,
            "method": self.method,
            "h_curve": [{"s": s, "h": h, "se": se} for s, h, se in self.h_curve],
        }


def _bisect_log_h(logs, depth, method, lo, hi, tol=1e-7, scan=64):
    f = lambda s: _log_h_from(logs, s, depth, method)
    f_lo = f(lo) if lo > 0 else -0.0
    if f_lo > 0:
        raise BracketError(f"log h-hat is already positive at the bracket start s={lo}")
    # For large s the sample moment collapses onto the largest path and log h-hat
    # can turn negative again, so look for the first upward crossing on a grid
    # instead of trusting the sign at the far end of the bracket.
    grid = np.linspace(lo, hi, scan)
    vals = np.array([f(s) for s in grid[1:]])
    up = np.flatnonzero(vals > 0)
    if up.size == 0:
        raise BracketError(
            f"log h-hat does not change sign on [{lo}, {hi}] (max {vals.max():.4g} at s={grid[1 + vals.argmax()]:.3g})"
        )
    hi = float(grid[1 + up[0]])
    lo = float(grid[up[0]])
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def solve_alpha_mv(ens: MatrixEnsemble, depth: int = 30, n_samples: int = 20_000, bracket=(0.05, 5.0), *,
                   seed: int = 0, workers: int = 1, method: str = "ratio", curve_points: int = 11
                   ) -> MultivariateCramer:
    """Root of h-hat(s) = 1 with every s evaluated on the same simulated products.

    Standard errors come from repeating the solve on disjoint batches.
    m(alpha) = h'(alpha) is a centred difference of log h-hat with step 0.05.
    """
    lo, hi = map(float, bracket)
    if not 0 <= lo < hi:
        raise ValidationError("bracket must satisfy 0 <= lo < hi")
    depths = _depths(depth, method)
    logs = np.asarray(log_norm_samples(ens, depths, n_samples, seed, workers))

    def solve(sub):
        a = _bisect_log_h(sub, depth, method, lo, hi)
        m = (_log_h_from(sub, a + FD_STEP, depth, method) - _log_h_from(sub, a - FD_STEP, depth, method)) / (
            2 * FD_STEP)
        return a, m

    alpha, m_alpha = solve(logs)
    batches = np.array_split(np.arange(logs.shape[1]), _N_BATCHES)
    reps = []
    for b in batches:
        try:
            reps.append(solve(logs[:, b]))
        except BracketError:
            continue
    if len(reps) >= 2:
        arr = np.array(reps)
        alpha_se, m_se = (arr.std(axis=0, ddof=1) / math.sqrt(len(reps))).tolist()
    else:
        alpha_se = m_se = math.inf
    if not m_alpha > 0:
        raise BracketError(f"h-hat'(alpha) = {m_alpha:.4g} is not positive")
    curve = []
    for s in np.linspace(lo, hi, curve_points):
        try:
            curve.append((float(s), *estimate_h(ens, float(s), depth, n_samples, seed=seed, workers=workers,
                                                method=method)))
        except UnstableEstimateError:
            curve.append((float(s), math.nan, math.nan))
    return MultivariateCramer(alpha=alpha, alpha_se=alpha_se, m_alpha=m_alpha, m_alpha_se=m_se,
                              n_products=depth, method=method, h_curve=curve)


# --- directional tails --------------------------------------------------------


@dataclass
class MVTailEstimates:
    log_x: np.ndarray
    p_u: np.ndarray
    p_u_se: np.ndarray
    p_uv: np.ndarray
    p_uv_se: np.ndarray
    ratio: np.ndarray
    ratio_se: np.ndarray
    target_ratio: float
    n_max: int
    n_samples: int

    def to_rows(self):
        return [
            {"log_x": float(lx), "p_u": float(a), "p_u_se": float(b), "p_uv": float(c), "p_uv_se": float(d),
             "ratio": float(r), "ratio_se": float(rs)}
            for lx, a, b, c, d, r, rs in zip(self.log_x, self.p_u, self.p_u_se, self.p_uv, self.p_uv_se,
                                             self.ratio, self.ratio_se)
        ]


def _unit_nonneg(vec, name):
    v = np.asarray(vec, dtype=float)
    if v.ndim != 1 or np.any(v < 0) or abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValidationError(f"{name} must be a nonnegative unit vector")
    return v


def mv_tail_estimates(ens: MatrixEnsemble, mv: MultivariateCramer, u, v, log_x_grid, cfg: SimulationConfig, *,
                      n_max: int | None = None, min_hits: int = 10) -> MVTailEstimates:
    """Plain MC of p_u(x) = sum_n P(|Pi_n^T u| > x) and p_uv(x) = sum_n P(v^T Pi_n^T u > x).

    One chain w_k = X_k^T w_{k-1}, w_0 = u, per path has w_k distributed as
    Pi_k^T u for every k, so the number of k <= n_max with |w_k| > x is an
    unbiased estimate of the truncated sum. The default ``n_max`` is
    ceil(6 max log x / m(alpha)) + 10.
    """
    u = _unit_nonneg(u, "u")
    v = _unit_nonneg(v, "v")
    if len(u) != ens.d or len(v) != ens.d:
        raise ValidationError(f"u and v must have length {ens.d}")
    lx = np.asarray(log_x_grid, dtype=float)
    if lx.ndim != 1 or len(lx) == 0:
        raise ValidationError("log_x grid must be a non-empty 1-d array")
    if n_max is None:
        n_max = int(math.ceil(6 * lx.max() / mv.m_alpha)) + 10

    def block(rng, size):
        w = np.broadcast_to(u, (size, ens.d)).copy()
        log_scale = np.zeros(size)
        cnt_u = np.zeros((len(lx), size))
        cnt_uv = np.zeros((len(lx), size))
        for _ in range(n_max):
            w = np.einsum("kji,kj->ki", ens.sample(rng, size), w)
            c = w.max(axis=1)
            w /= c[:, None]
            log_scale += np.log(c)
            with np.errstate(divide="ignore"):
                l_norm = log_scale + np.log(np.linalg.norm(w, axis=1))
                l_v = log_scale + np.log(w @ v)
            cnt_u += l_norm[None, :] > lx[:, None]
            cnt_uv += l_v[None, :] > lx[:, None]
        return cnt_u, cnt_uv

    parts = run_blocks(block, cfg.n_paths, cfg.seed, cfg.workers, key=(11,))
    cu = np.concatenate([p[0] for p in parts], axis=1)
    cuv = np.concatenate([p[1] for p in parts], axis=1)
    n = cfg.n_paths
    hits = np.count_nonzero(cu, axis=1)
    bad = hits < min_hits
    if np.any(bad):
        ok = lx[~bad]
        raise InfeasibleError(
            f"fewer than {min_hits} paths exceed x at log x = {lx[bad].tolist()}; "
            f"feasible log x up to {ok.max() if ok.size else 'none'} at {n} paths",
            feasible_log_x_max=float(ok.max()) if ok.size else None,
        )
    p_u = cu.mean(axis=1)
    p_uv = cuv.mean(axis=1)
    se_u = cu.std(axis=1, ddof=1) / math.sqrt(n)
    se_uv = cuv.std(axis=1, ddof=1) / math.sqrt(n)
    ratio = p_uv / p_u
    # delta method for a ratio of means on shared paths
    resid = cuv - ratio[:, None] * cu
    ratio_se = resid.std(axis=1, ddof=1) / math.sqrt(n) / p_u
    return MVTailEstimates(
        log_x=lx, p_u=p_u, p_u_se=se_u, p_uv=p_uv, p_uv_se=se_uv, ratio=ratio, ratio_se=ratio_se,
        target_ratio=float(v @ u) ** mv.alpha, n_max=n_max, n_samples=n,
    )
