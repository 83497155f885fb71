"""Probit-transform Gaussian KDE pair copulas.

Training pairs are mapped to the latent normal scale ``(s_k, t_k) =
(ndtri(u_k), ndtri(v_k))`` and smoothed with an isotropic Gaussian kernel of
variance ``b``. The copula density divides the latent KDE by the standard
normal marginals::

    c(u, v) = (1/K) sum_k phi(s - s_k; b) phi(t - t_k; b) / (phi(s) phi(t))

The h-functions are the conditional cdfs of the latent KDE, which are
normalised by construction (``h(1 | v) = 1``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .numerics import open_uniform, seed_sequence, std_normal_logpdf
from .scoring import energy_score_total

H_CLAMP = 1e-10
_CHUNK = 2_000_000  # max query x kernel-point cells held at once
_Z_TOL = 1e-11  # latent-scale step tolerance of the inverse h-functions

SCALES = ("variance", "reference")
# Tuning grids. "reference" grids hold multipliers of the normal-reference
# bandwidth (see kernel_variance); "variance" grids hold raw kernel variances.
DEFAULT_BANDWIDTH_SCALE = "reference"
DEFAULT_BANDWIDTH_GRID = tuple(np.linspace(1.25, 4.0, 50).tolist())
WIDE_REFERENCE_GRID = tuple(np.linspace(2.0, 4.0, 50).tolist())
VARIANCE_BANDWIDTH_GRID = tuple(np.linspace(0.01, 1.0, 50).tolist())


def reference_variance(n_points: int) -> float:
    """Kernel variance of the bivariate normal-reference rule, ``(n^{-1/6})^2``.

    The latent coordinates are close to standard normal, so this is Scott's
    rule for a 2-d Gaussian KDE with unit scale.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    return float(n_points) ** (-1.0 / 3.0)


def kernel_variance(value: float, n_points: int, scale: str = "variance") -> float:
    """Kernel variance for a grid value given as a raw variance or as a
    multiplier of the normal-reference bandwidth (standard-deviation units)."""
    if scale == "variance":
        return float(value)
    if scale == "reference":
        return float(value) ** 2 * reference_variance(n_points)
    raise ValueError(f"unknown bandwidth scale {scale!r}; expected one of {SCALES}")


def _check_open(name, a):
    if np.any(~((a > 0.0) & (a < 1.0))):
        raise ValueError(f"{name} must lie strictly inside (0, 1)")


def _chunks(m: int, K: int):
    step = max(1, _CHUNK // max(K, 1))
    for start in range(0, m, step):
        yield slice(start, min(m, start + step))


class IndependenceCopula:
    """Product copula; used for truncated edges."""

    bandwidth = None
    n_points = 0

    def log_density(self, u, v):
        return np.zeros(np.broadcast(np.asarray(u), np.asarray(v)).shape)

    def density(self, u, v):
        return np.exp(self.log_density(u, v))

    def h1(self, u, v):
        return np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v))[0].copy()

    def h2(self, u, v):
        return np.broadcast_arrays(np.asarray(v, dtype=float), np.asarray(u))[0].copy()

    def h1_inverse(self, p, v):
        return self.h1(p, v)

    def h2_inverse(self, p, u):
        return self.h2(u, p)

    def to_dict(self) -> dict:
        return {"family": "indep"}


@dataclass(frozen=True, eq=False)
class PairCopulaKde:
    latent: np.ndarray  # (K, 2)
    bandwidth: float

    @property
    def n_points(self) -> int:
        return self.latent.shape[0]

    # -- density -----------------------------------------------------------
    def log_density(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        shape = u.shape
        s = special.ndtri(u.reshape(-1))
        t = special.ndtri(v.reshape(-1))
        b = self.bandwidth
        sk, tk = self.latent[:, 0], self.latent[:, 1]
        out = np.empty(s.size)
        for sl in _chunks(s.size, sk.size):
            q = ((s[sl, None] - sk) ** 2 + (t[sl, None] - tk) ** 2) / (2.0 * b)
            out[sl] = special.logsumexp(-q, axis=1)
        out += -np.log(sk.size) - np.log(2.0 * np.pi * b)
        out -= std_normal_logpdf(s) + std_normal_logpdf(t)
        return out.reshape(shape)

    def density(self, u, v):
        return np.exp(self.log_density(u, v))

    # -- conditional cdfs --------------------------------------------------
    def _cond_cdf(self, x, cond, ix: int):
        """P(X <= x | C = cond) for latent column ``ix`` given the other one."""
        x, cond = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(cond, dtype=float))
        shape = x.shape
        zs = special.ndtri(x.reshape(-1))
        zc = special.ndtri(cond.reshape(-1))
        pts_x, pts_c = self.latent[:, ix], self.latent[:, 1 - ix]
        sd = np.sqrt(self.bandwidth)
        out = np.empty(zs.size)
        for sl in _chunks(zs.size, pts_x.size):
            logw = -((zc[sl, None] - pts_c) ** 2) / (2.0 * self.bandwidth)
            w = np.exp(logw - logw.max(axis=1, keepdims=True))
            out[sl] = np.sum(w * special.ndtr((zs[sl, None] - pts_x) / sd), axis=1) / w.sum(axis=1)
        return out.reshape(shape)

    def h1(self, u, v):
        """h1(u | v) = P(U <= u | V = v)."""
        return self._cond_cdf(u, v, 0)

    def h2(self, u, v):
        """h2(v | u) = P(V <= v | U = u)."""
        return self._cond_cdf(v, u, 1)

    def _cond_inverse(self, p, cond, ix: int, tol: float = 1e-9, max_iter: int = 200):
        p, cond = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(cond, dtype=float))
        shape = p.shape
        # saturated inputs (exactly 0 or 1) map to the extreme representable quantiles
        p = np.clip(p.reshape(-1), 1e-300, 1.0 - 2.0**-53)
        zc = special.ndtri(cond.reshape(-1))
        pts_x, pts_c = self.latent[:, ix], self.latent[:, 1 - ix]
        sd = np.sqrt(self.bandwidth)
        zp = special.ndtri(p)
        out = np.empty(p.size)
        for sl in _chunks(p.size, pts_x.size):
            logw = -((zc[sl, None] - pts_c) ** 2) / (2.0 * self.bandwidth)
            w = np.exp(logw - logw.max(axis=1, keepdims=True))
            w /= w.sum(axis=1, keepdims=True)
            # the mixture cdf lies between its extreme components
            lo = pts_x.min() + sd * zp[sl]
            hi = pts_x.max() + sd * zp[sl]
            z = 0.5 * (lo + hi)
            target = p[sl]
            done = np.zeros(z.size, dtype=bool)
            for _ in range(max_iter):
                d = (z[:, None] - pts_x) / sd
                F = np.sum(w * special.ndtr(d), axis=1)
                err = F - target
                hi = np.where(err > 0, z, hi)
                lo = np.where(err <= 0, z, lo)
                f = np.sum(w * np.exp(-0.5 * d * d), axis=1) / (sd * np.sqrt(2.0 * np.pi))
                with np.errstate(divide="ignore", invalid="ignore"):
                    step = err / f
                    newton = z - step
                # a small residual alone is not enough where the cdf is nearly flat
                done = (np.abs(err) < tol) & ((np.abs(step) < _Z_TOL) | (hi - lo < _Z_TOL))
                if done.all():
                    break
                ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
                z = np.where(done, z, np.where(ok, newton, 0.5 * (lo + hi)))
            else:
                if np.any(np.abs(err) >= tol):
                    raise ArithmeticError("inverse h-function did not converge")
            out[sl] = special.ndtr(z)
        return out.reshape(shape)

    def h1_inverse(self, p, v):
        """u such that h1(u | v) = p."""
        return self._cond_inverse(p, v, 0)

    def h2_inverse(self, p, u):
        """v such that h2(v | u) = p."""
        return self._cond_inverse(p, u, 1)

    def to_dict(self) -> dict:
        return {"family": "kde", "bandwidth": self.bandwidth, "latent": self.latent.tolist()}


def copula_from_dict(d: dict):
    if d["family"] == "indep":
        return IndependenceCopula()
    return PairCopulaKde(np.asarray(d["latent"], dtype=float).reshape(-1, 2), float(d["bandwidth"]))


def fit_pair(pairs, bandwidth: float) -> PairCopulaKde:
    """Store the probit-transformed training pairs; nothing else is estimated."""
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
    if pairs.shape[0] < 1:
        raise ValueError("need at least one pair")
    _check_open("pair coordinates", pairs)
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    return PairCopulaKde(special.ndtri(pairs), float(bandwidth))


def pc_density(c, u, v):
    return c.density(u, v)


def sample_pair(c, count: int, seed=None) -> np.ndarray:
    """Draw ``count`` pairs: u uniform, then v from h2^{-1}(w | u)."""
    rng = np.random.default_rng(seed)
    w = open_uniform(rng, (count, 2))
    u = w[:, 0]
    v = np.clip(c.h2_inverse(w[:, 1], u), H_CLAMP, 1.0 - H_CLAMP)
    return np.column_stack([u, v])


def kfold_indices(n: int, folds: int, seed) -> list[np.ndarray]:
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if folds > n:
        raise ValueError(f"folds ({folds}) exceeds the number of points ({n})")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, folds)]


def select_bandwidth(pairs, grid=DEFAULT_BANDWIDTH_GRID, folds: int = 10, seed=None,
                     n_samples: int = 100, beta: float = 1.0,
                     scale: str = DEFAULT_BANDWIDTH_SCALE) -> tuple[float, float]:
    """k-fold CV of the energy score between held-out pairs and copula samples.

    Every (fold, bandwidth) cell reuses the same uniforms so that bandwidths
    are compared on common random numbers. Ties go to the smaller bandwidth.
    With ``scale="reference"`` the grid holds multipliers of the
    normal-reference bandwidth, resolved against each training fold's size,
    and the returned value is the chosen multiplier; with ``"variance"`` it is
    the kernel variance itself.
    """
    pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("bandwidth grid must be non-empty and positive")
    ss = seed_sequence(seed)
    fold_seed, sample_seed = ss.spawn(2)
    idx = kfold_indices(pairs.shape[0], folds, fold_seed)
    fold_seeds = sample_seed.spawn(folds)
    scores = np.zeros(grid.size)
    for f, test in enumerate(idx):
        train = np.setdiff1d(np.arange(pairs.shape[0]), test)
        for g, b in enumerate(grid):
            cop = fit_pair(pairs[train], kernel_variance(b, train.size, scale))
            draws = sample_pair(cop, n_samples, fold_seeds[f])
            scores[g] += energy_score_total(draws, pairs[test], beta).mean / folds
    return argmin_smallest(grid, scores)


def argmin_smallest(grid: np.ndarray, scores: np.ndarray) -> tuple[float, float]:
    """Minimiser of ``scores`` over ``grid``; ties resolve to the smallest grid value."""
    ties = np.flatnonzero(scores == scores.min())
    i = int(ties[np.argmin(grid[ties])])
    return float(grid[i]), float(scores[i])
