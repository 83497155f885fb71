"""Univariate recursive Bayesian predictive (R-BP) marginals.

The predictive after ``n`` observations is obtained by ``n`` copula updates of
an initial distribution::

    P_k(x) = (1 - a_k) P_{k-1}(x) + a_k H_rho(P_{k-1}(x), v_k)
    p_k(x) = p_{k-1}(x) [(1 - a_k) + a_k c_rho(P_{k-1}(x), v_k)]

with ``v_k = P_{k-1}(x_k)`` and ``a_k = (2 - 1/k) / (k + 1)``. Fitting only
caches the ``v_k``; every evaluation replays the recursion, O(n) per point.

All recursions here run over a leading batch axis so that permutations of the
data and candidate ``rho`` values are processed together.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import numerics
from .numerics import build_inverse_cdf, inverse_eval, open_uniform
from .scoring import energy_score_total

V_CLAMP = 1e-12
# keeps ndtri finite when a cdf saturates in the tails
_U_LO = 1e-300
_U_HI = 1.0 - 2.0**-53

DEFAULT_RHO_GRID = tuple(np.linspace(0.1, 0.99, 50).tolist())


@dataclass(frozen=True)
class InitialPredictive:
    """Initial predictive P0/p0: ``cauchy`` or ``normal`` (loc, scale) or
    ``uniform`` over ``[low, high]``."""

    kind: str = "cauchy"
    loc: float = 0.0
    scale: float = 1.0
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if self.kind not in ("cauchy", "normal", "uniform"):
            raise ValueError(f"unknown initial predictive kind {self.kind!r}")
        if self.kind == "uniform":
            if not self.high > self.low:
                raise ValueError("uniform initial needs high > low")
        elif not self.scale > 0:
            raise ValueError("initial scale must be positive")

    @classmethod
    def uniform_over_range(cls, data, margin: float = 0.5) -> "InitialPredictive":
        data = np.asarray(data, dtype=float)
        return cls(kind="uniform", low=float(data.min() - margin), high=float(data.max() + margin))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "cauchy":
            return numerics.cauchy_cdf(x, self.loc, self.scale)
        if self.kind == "normal":
            return numerics.std_normal_cdf((x - self.loc) / self.scale)
        return np.clip((x - self.low) / (self.high - self.low), 0.0, 1.0)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "cauchy":
            return numerics.cauchy_logpdf(x, self.loc, self.scale)
        if self.kind == "normal":
            return numerics.std_normal_logpdf((x - self.loc) / self.scale) - np.log(self.scale)
        inside = (x >= self.low) & (x <= self.high)
        return np.where(inside, -np.log(self.high - self.low), -np.inf)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def median(self) -> float:
        return self.loc if self.kind != "uniform" else 0.5 * (self.low + self.high)

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "low": self.low, "high": self.high}
        return {"kind": self.kind, "loc": self.loc, "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "InitialPredictive":
        return cls(**d)


def alpha_weight(k: int) -> float:
    if k < 1:
        raise ValueError("alpha_weight is defined for k >= 1")
    return (2.0 - 1.0 / k) / (k + 1.0)


def alpha_weights(n: int) -> np.ndarray:
    k = np.arange(1, n + 1, dtype=float)
    return (2.0 - 1.0 / k) / (k + 1.0)


def _check_rho(rho) -> None:
    if np.any(np.abs(np.asarray(rho, dtype=float)) >= 1.0):
        raise ValueError("rho must satisfy |rho| < 1")


def h_rho(u, v, rho):
    """Conditional Gaussian copula cdf H_rho(u | v)."""
    _check_rho(rho)
    u = np.asarray(u, dtype=float)
    if rho == 0:
        return np.array(u, copy=True)
    z_u = special.ndtri(u)
    z_v = special.ndtri(v)
    return special.ndtr((z_u - rho * z_v) / np.sqrt(1.0 - rho * rho))


def gaussian_copula_logdensity(u, v, rho):
    _check_rho(rho)
    s = special.ndtri(u)
    t = special.ndtri(v)
    if rho == 0:
        return np.zeros(np.broadcast(s, t).shape)
    r2 = rho * rho
    return -0.5 * np.log1p(-r2) - (r2 * (s * s + t * t) - 2.0 * rho * s * t) / (2.0 * (1.0 - r2))


def gaussian_copula_density(u, v, rho):
    return np.exp(gaussian_copula_logdensity(u, v, rho))


def _fit_v(seqs: np.ndarray, rho: np.ndarray, initial: InitialPredictive) -> np.ndarray:
    """Cache v_k = P_{k-1}(x_k) for each row of ``seqs`` (shape (B, n))."""
    B, n = seqs.shape
    alphas = alpha_weights(n)
    rho = rho.reshape(B, 1)
    zero = rho == 0.0
    sig = np.sqrt(1.0 - rho * rho)
    cur = initial.cdf(seqs)
    v = np.empty((B, n))
    for k in range(n):
        vk = np.clip(cur[:, k], V_CLAMP, 1.0 - V_CLAMP)
        v[:, k] = vk
        if k == n - 1:
            break
        tail = cur[:, k + 1:]
        z_u = special.ndtri(np.clip(tail, _U_LO, _U_HI))
        z_v = special.ndtri(vk)[:, None]
        h = np.where(zero, tail, special.ndtr((z_u - rho * z_v) / sig))
        cur[:, k + 1:] = tail + alphas[k] * (h - tail)
    return v


def _recursion(x: np.ndarray, v: np.ndarray, rho: np.ndarray, initial: InitialPredictive,
               with_pdf: bool = True):
    """Replay the recursion at points ``x`` (m,) for each of B cached sequences.

    Returns ``(cdf, logpdf)`` each of shape (B, m); ``logpdf`` is None when
    ``with_pdf`` is false.
    """
    B, n = v.shape
    x = np.asarray(x, dtype=float).reshape(-1)
    alphas = alpha_weights(n)
    rho = rho.reshape(B, 1)
    zero = rho == 0.0
    r2 = rho * rho
    sig = np.sqrt(1.0 - r2)
    half_log = -0.5 * np.log1p(-r2)
    denom = 2.0 * (1.0 - r2)
    zv_all = special.ndtri(v)
    cur = np.broadcast_to(initial.cdf(x), (B, x.size)).copy()
    logp = np.broadcast_to(initial.logpdf(x), (B, x.size)).copy() if with_pdf else None
    for k in range(n):
        z_u = special.ndtri(np.clip(cur, _U_LO, _U_HI))
        z_v = zv_all[:, k:k + 1]
        a = alphas[k]
        if with_pdf:
            logc = half_log - (r2 * (z_u * z_u + z_v * z_v) - 2.0 * rho * z_u * z_v) / denom
            c = np.where(zero, 1.0, np.exp(logc))
            logp += np.log1p(a * (c - 1.0))
        h = np.where(zero, cur, special.ndtr((z_u - rho * z_v) / sig))
        cur += a * (h - cur)
    return cur, logp


@dataclass(frozen=True, eq=False)
class PredictiveMarginal:
    """A fitted R-BP predictive for one ordering of the data."""

    rho: float
    initial: InitialPredictive
    train_seq: np.ndarray
    cached_v: np.ndarray

    @property
    def n(self) -> int:
        return self.train_seq.size

    @property
    def alphas(self) -> np.ndarray:
        return alpha_weights(self.n)

    def _eval(self, x, with_pdf=True):
        x = np.asarray(x, dtype=float)
        cdf, logp = _recursion(x, self.cached_v[None, :], np.array([self.rho]), self.initial,
                               with_pdf)
        return cdf[0].reshape(x.shape), (None if logp is None else logp[0].reshape(x.shape))

    def cdf(self, x):
        return self._eval(x, with_pdf=False)[0]

    def logpdf(self, x):
        return self._eval(x)[1]

    def pdf(self, x):
        return np.exp(self.logpdf(x))


def fit_marginal(observations, rho: float, initial: InitialPredictive | None = None) -> PredictiveMarginal:
    obs = np.asarray(observations, dtype=float).reshape(-1)
    if obs.size == 0:
        raise ValueError("need at least one observation")
    if not np.all(np.isfinite(obs)):
        raise ValueError("observations must be finite")
    _check_rho(rho)
    initial = initial or InitialPredictive()
    v = _fit_v(obs[None, :], np.array([float(rho)]), initial)[0]
    return PredictiveMarginal(float(rho), initial, obs.copy(), v)


def cdf_eval(m: PredictiveMarginal, x):
    return m.cdf(x)


def pdf_eval(m: PredictiveMarginal, x):
    return m.pdf(x)


@dataclass(frozen=True, eq=False)
class AveragedMarginal:
    """Equal-weight mixture of R-BP predictives fitted to permutations of the data."""

    members: tuple[PredictiveMarginal, ...]
    _v: np.ndarray = field(init=False, repr=False)
    _rho: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.members:
            raise ValueError("need at least one member")
        initial = self.members[0].initial
        if any(m.initial != initial for m in self.members):
            raise ValueError("members must share the initial predictive")
        object.__setattr__(self, "_v", np.stack([m.cached_v for m in self.members]))
        object.__setattr__(self, "_rho", np.array([m.rho for m in self.members]))

    @property
    def weight(self) -> float:
        return 1.0 / len(self.members)

    @property
    def rho(self) -> float:
        return self.members[0].rho

    @property
    def initial(self) -> InitialPredictive:
        return self.members[0].initial

    @property
    def data(self) -> np.ndarray:
        return self.members[0].train_seq

    def cdf_logpdf(self, x, with_pdf=True):
        x = np.asarray(x, dtype=float)
        cdf, logp = _recursion(x, self._v, self._rho, self.initial, with_pdf)
        cdf = cdf.mean(axis=0).reshape(x.shape)
        if logp is not None:
            logp = (special.logsumexp(logp, axis=0) - np.log(len(self.members))).reshape(x.shape)
        return cdf, logp

    def cdf(self, x):
        return self.cdf_logpdf(x, with_pdf=False)[0]

    def logpdf(self, x):
        return self.cdf_logpdf(x)[1]

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def to_dict(self) -> dict:
        return {
            "initial": self.initial.to_dict(),
            "members": [
                {"rho": m.rho, "train_seq": m.train_seq.tolist(), "cached_v": m.cached_v.tolist()}
                for m in self.members
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AveragedMarginal":
        initial = InitialPredictive.from_dict(d["initial"])
        return cls(tuple(
            PredictiveMarginal(float(m["rho"]), initial, np.asarray(m["train_seq"], dtype=float),
                               np.asarray(m["cached_v"], dtype=float))
            for m in d["members"]
        ))


def average_marginals(data, rho: float, initial: InitialPredictive | None = None,
                      n_perms: int = 10, seed=None) -> AveragedMarginal:
    """Fit one predictive per ordering and average them pointwise.

    The first ordering is the data as given; the remaining ``n_perms - 1`` are
    independent uniform permutations drawn from ``seed``.
    """
    if n_perms < 1:
        raise ValueError("n_perms must be >= 1")
    data = np.asarray(data, dtype=float).reshape(-1)
    if data.size == 0 or not np.all(np.isfinite(data)):
        raise ValueError("data must be non-empty and finite")
    _check_rho(rho)
    initial = initial or InitialPredictive()
    rng = np.random.default_rng(seed)
    seqs = np.empty((n_perms, data.size))
    seqs[0] = data
    for i in range(1, n_perms):
        seqs[i] = data[rng.permutation(data.size)]
    v = _fit_v(seqs, np.full(n_perms, float(rho)), initial)
    return AveragedMarginal(tuple(
        PredictiveMarginal(float(rho), initial, seqs[i].copy(), v[i]) for i in range(n_perms)
    ))


def default_eta(data) -> float:
    return 3.0 * float(np.std(np.asarray(data, dtype=float), ddof=1))


def build_sampler(marginal, K: int = 512, eta: float | None = None):
    """Interpolated inverse cdf of a fitted marginal over its data range."""
    data = marginal.data if isinstance(marginal, AveragedMarginal) else marginal.train_seq
    eta = default_eta(data) if eta is None else eta
    return build_inverse_cdf(marginal.cdf, float(data.min()), float(data.max()), eta, K)


def select_rho(data, initial: InitialPredictive | None = None, grid=DEFAULT_RHO_GRID,
               n_samples: int = 100, seed=None, K: int = 512, eta: float | None = None,
               beta: float = 1.0) -> tuple[float, float]:
    """Grid search for rho minimising the energy score of model samples.

    Each candidate is fitted on ``data`` in the given order, ``n_samples``
    draws are taken through the interpolated inverse cdf (the same uniforms for
    every candidate), and the energy score against every data point is averaged.
    Ties go to the smaller rho.
    """
    data = np.asarray(data, dtype=float).reshape(-1)
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("rho grid is empty")
    _check_rho(grid)
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    if data.size < 2 or np.ptp(data) == 0:
        raise ValueError("cannot select rho on degenerate (all-equal) data")
    initial = initial or InitialPredictive()
    eta = default_eta(data) if eta is None else eta
    u = open_uniform(np.random.default_rng(seed), n_samples)
    scores = rho_scores(data, initial, grid, u, K, eta, beta)
    best = scores.min()
    idx = int(np.flatnonzero(scores == best)[np.argmin(grid[scores == best])])
    return float(grid[idx]), float(scores[idx])


def rho_scores(data, initial, grid, u, K, eta, beta) -> np.ndarray:
    """Energy score of each candidate rho given fixed sampling uniforms ``u``."""
    R = grid.size
    v = _fit_v(np.broadcast_to(data, (R, data.size)).copy(), grid, initial)
    lo, hi = data.min() - eta, data.max() + eta
    y = np.linspace(lo, hi, K + 2)
    cdf, _ = _recursion(y[1:-1], v, grid, initial, with_pdf=False)
    scores = np.empty(R)
    for r in range(R):
        sampler = build_inverse_cdf(lambda _y, r=r: cdf[r], float(data.min()), float(data.max()),
                                    eta, K)
        samples = inverse_eval(sampler, u)
        scores[r] = energy_score_total(samples, data, beta).mean
    return scores
