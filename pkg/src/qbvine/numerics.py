"""Distribution primitives and the grid-based inverse-cdf sampler.

The standard-normal routines wrap :mod:`scipy.special` (``ndtr``/``ndtri``),
which are accurate to a few ulps over the full double range.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def std_normal_cdf(x):
    """Standard normal cdf. Saturates to 0/1 in the far tails."""
    return special.ndtr(x)


def std_normal_quantile(p):
    """Inverse standard normal cdf.

    Raises
    ------
    ValueError
        If any ``p`` lies outside the open interval (0, 1).
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0.0) & (p_arr < 1.0))):
        raise ValueError("std_normal_quantile requires p in (0, 1)")
    return special.ndtri(p)


def std_normal_logpdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - _LOG_SQRT_2PI


def std_normal_pdf(x):
    return np.exp(std_normal_logpdf(x))


def _check_scale(scale: float) -> None:
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")


def cauchy_cdf(x, loc: float = 0.0, scale: float = 1.0):
    _check_scale(scale)
    return 0.5 + np.arctan((np.asarray(x, dtype=float) - loc) / scale) / np.pi


def cauchy_quantile(p, loc: float = 0.0, scale: float = 1.0):
    _check_scale(scale)
    return loc + scale * np.tan(np.pi * (np.asarray(p, dtype=float) - 0.5))


def cauchy_logpdf(x, loc: float = 0.0, scale: float = 1.0):
    _check_scale(scale)
    z = (np.asarray(x, dtype=float) - loc) / scale
    return -np.log(np.pi * scale) - np.log1p(z * z)


@dataclass(frozen=True)
class InterpolatedInverseCdf:
    """Piecewise-linear quantile function built from a context set of knots.

    ``y`` is strictly increasing and ``c`` strictly increasing after flat
    regions were merged, with ``c[0] == 0`` and ``c[-1] == 1``.
    """

    y: np.ndarray
    c: np.ndarray
    eta: float
    grid_size: int

    @property
    def knots(self) -> list[tuple[float, float]]:
        return list(zip(self.y.tolist(), self.c.tolist()))

    def __call__(self, c):
        return inverse_eval(self, c)

    def to_dict(self) -> dict:
        return {"y": self.y.tolist(), "c": self.c.tolist(), "eta": self.eta,
                "grid_size": self.grid_size}

    @classmethod
    def from_dict(cls, d: dict) -> "InterpolatedInverseCdf":
        return cls(np.asarray(d["y"], dtype=float), np.asarray(d["c"], dtype=float),
                   float(d["eta"]), int(d["grid_size"]))


def inverse_cdf_from_knots(y, c, eta: float = 0.0) -> InterpolatedInverseCdf:
    """Build the interpolator directly from a knot list (first c must be 0, last 1)."""
    y = np.asarray(y, dtype=float)
    c = np.asarray(c, dtype=float)
    if y.ndim != 1 or y.shape != c.shape or y.size < 2:
        raise ValueError("knots must be two equal-length 1-d sequences of length >= 2")
    if c[0] != 0.0 or c[-1] != 1.0:
        raise ValueError("first knot must have c=0 and last knot c=1")
    if np.any(np.diff(y) <= 0):
        raise ValueError("knot y-values must be strictly increasing")
    if np.any(np.diff(c) < 0):
        raise ValueError("knot c-values must be non-decreasing")
    # A flat run keeps its leftmost y: the segment rule c_j < c <= c_{j+1}
    # never selects a zero-width segment.
    keep = np.concatenate([[True], np.diff(c) > 0])
    return InterpolatedInverseCdf(y[keep], c[keep], float(eta), int(y.size - 2))


def build_inverse_cdf(
    cdf_eval: Callable[[np.ndarray], np.ndarray],
    support_min: float,
    support_max: float,
    eta: float,
    K: int = 512,
) -> InterpolatedInverseCdf:
    """Tabulate ``cdf_eval`` on a uniform grid and return its linear inverse.

    The grid has ``K + 2`` equispaced points over
    ``[support_min - eta, support_max + eta]``; the ``K`` interior points carry
    ``cdf_eval`` values and the two ends are pinned to 0 and 1.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    if eta < 0:
        raise ValueError("eta must be non-negative")
    lo, hi = support_min - eta, support_max + eta
    if not hi > lo:
        raise ValueError("empty support")
    y = np.linspace(lo, hi, K + 2)
    inner = np.asarray(cdf_eval(y[1:-1]), dtype=float)
    if inner.shape != (K,) or not np.all(np.isfinite(inner)):
        raise ValueError("cdf_eval must return K finite values")
    if np.any(np.diff(inner) < -1e-9):
        raise ValueError("cdf_eval is decreasing on the grid; marginal looks broken")
    inner = np.clip(np.maximum.accumulate(inner), 0.0, 1.0)
    c = np.concatenate([[0.0], inner, [1.0]])
    return inverse_cdf_from_knots(y, c, eta)


def inverse_eval(model: InterpolatedInverseCdf, c):
    """Evaluate the piecewise-linear inverse at probabilities in (0, 1)."""
    c_arr = np.asarray(c, dtype=float)
    if np.any(~((c_arr > 0.0) & (c_arr < 1.0))):
        raise ValueError("inverse_eval requires c in (0, 1)")
    return np.interp(c_arr, model.c, model.y)


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws strictly inside (0, 1) on a 2**-53 lattice."""
    return (rng.integers(0, 2**53, size=size) + 0.5) / 2.0**53


def seed_sequence(seed) -> np.random.SeedSequence:
    """SeedSequence from an int, None or another SeedSequence.

    A passed SeedSequence is copied with a fresh spawn counter, so spawning
    from the result is reproducible however often the caller reuses it.
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
    return np.random.SeedSequence(seed)
