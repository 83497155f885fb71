"""End-to-end QB-Vine: R-BP marginals glued by a KDE vine copula.

The joint density factorises as ``p(x) = prod_i p_i(x_i) * c(P_1(x_1), ..., P_d(x_d))``.
Data are standardised first; densities are reported on the original scale.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import special

from . import __version__
from .data import DataError, column_stats
from .marginal import (DEFAULT_RHO_GRID, AveragedMarginal, InitialPredictive, average_marginals,
                       build_sampler, select_rho)
from .numerics import InterpolatedInverseCdf, inverse_eval, open_uniform, seed_sequence
from .paircopula import DEFAULT_BANDWIDTH_GRID, DEFAULT_BANDWIDTH_SCALE, SCALES, kernel_variance
from .parallel import parallel_map
from .vine import VineModel, fit_vine, select_vine_bandwidth

U_CLAMP = 1e-10
FORMAT_VERSION = 1
CLASS_ANCHORS = (-10.0, 10.0)
REGRESSION = "regression"
CLASSIFICATION = "classification"


def _grid(value) -> tuple[float, ...]:
    if isinstance(value, dict):
        unknown = set(value) - {"start", "stop", "num"}
        if unknown:
            raise KeyError(f"unknown grid key(s): {sorted(unknown)}")
        missing = [k for k in ("start", "stop", "num") if k not in value]
        if missing:
            raise KeyError(f"grid is missing key(s): {missing}")
        value = np.linspace(float(value["start"]), float(value["stop"]), int(value["num"]))
    return tuple(float(x) for x in np.asarray(value, dtype=float).reshape(-1))


@dataclass(frozen=True)
class QbVineConfig:
    """Hyperparameters of a fit.

    Defaults: Cauchy initial predictive, rho grid of 50 values in [0.1, 0.99],
    10 permutations, 10-fold CV over 50 bandwidths, 100 energy-score draws.
    ``bandwidth_grid`` and a fixed ``bandwidth`` are read in the units of
    ``bandwidth_scale``: multipliers of the normal-reference bandwidth
    (``"reference"``) or raw kernel variances (``"variance"``).
    """

    initial_kind: str | tuple[str, ...] = "cauchy"
    rho_grid: tuple[float, ...] = DEFAULT_RHO_GRID
    n_perms: int = 10
    bandwidth_grid: tuple[float, ...] = DEFAULT_BANDWIDTH_GRID
    cv_folds: int = 10
    energy_samples: int = 100
    beta: float = 1.0
    seed: int = 0
    truncation_tau: float = 0.05
    bandwidth_scale: str = DEFAULT_BANDWIDTH_SCALE
    bandwidth: float | None = None  # fixed value skips the CV search
    sampler_grid: int = 512
    separate_feature_bandwidth: bool = True

    def __post_init__(self):
        object.__setattr__(self, "rho_grid", _grid(self.rho_grid))
        object.__setattr__(self, "bandwidth_grid", _grid(self.bandwidth_grid))
        if isinstance(self.initial_kind, (list, tuple)):
            object.__setattr__(self, "initial_kind", tuple(self.initial_kind))
        if not self.rho_grid or not self.bandwidth_grid:
            raise ValueError("grids must be non-empty")
        if self.n_perms < 1:
            raise ValueError("n_perms must be >= 1")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if self.energy_samples < 2:
            raise ValueError("energy_samples must be >= 2")
        if not 0 < self.beta <= 2:
            raise ValueError("beta must lie in (0, 2]")
        if not 0 <= self.truncation_tau < 1:
            raise ValueError("truncation_tau must lie in [0, 1)")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if any(b <= 0 for b in self.bandwidth_grid):
            raise ValueError("bandwidth grid values must be positive")
        if self.bandwidth_scale not in SCALES:
            raise ValueError(f"bandwidth_scale must be one of {SCALES}")
        if self.sampler_grid < 2:
            raise ValueError("sampler_grid must be >= 2")

    def initial_for(self, i: int, column) -> InitialPredictive:
        kind = self.initial_kind[i] if isinstance(self.initial_kind, tuple) else self.initial_kind
        if kind == "uniform":
            return InitialPredictive.uniform_over_range(column)
        return InitialPredictive(kind=kind)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rho_grid"] = list(self.rho_grid)
        d["bandwidth_grid"] = list(self.bandwidth_grid)
        if isinstance(self.initial_kind, tuple):
            d["initial_kind"] = list(self.initial_kind)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QbVineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**d)


def _clamp(u):
    return np.clip(u, U_CLAMP, 1.0 - U_CLAMP)


@dataclass(frozen=True, eq=False)
class QbVineModel:
    marginals: tuple[AveragedMarginal, ...]
    inverse_samplers: tuple[InterpolatedInverseCdf, ...]
    vine: VineModel | None  # None only for a single dimension
    config: QbVineConfig
    location: np.ndarray
    scale: np.ndarray
    fit_report: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return len(self.marginals)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x = x.reshape(1, -1) if x.ndim == 1 else x
        if x.ndim != 2 or x.shape[1] != self.dimension:
            raise ValueError(f"expected {self.dimension} columns")
        return x

    def transform(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Pseudo-observations and per-coordinate marginal log densities (original scale)."""
        z = (self._check(x) - self.location) / self.scale
        u = np.empty_like(z)
        logp = np.empty_like(z)
        for i, m in enumerate(self.marginals):
            u[:, i], logp[:, i] = m.cdf_logpdf(z[:, i])
        return _clamp(u), logp - np.log(self.scale)

    def copula_log_density(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.vine is None:
            return np.zeros(u.reshape(-1, self.dimension).shape[0])
        return self.vine.log_density(u)

    def marginal_log_density(self, x) -> np.ndarray:
        return self.transform(x)[1]

    def joint_log_density(self, x) -> np.ndarray:
        u, logp = self.transform(x)
        return logp.sum(axis=1) + self.copula_log_density(u)

    def sample(self, count: int, seed=None) -> np.ndarray:
        if count < 1:
            raise ValueError("count must be >= 1")
        if self.vine is None:
            u = open_uniform(np.random.default_rng(seed), (count, self.dimension))
        else:
            u = self.vine.sample(count, seed)
        z = np.column_stack([inverse_eval(s, u[:, i]) for i, s in enumerate(self.inverse_samplers)])
        return z * self.scale + self.location

    def to_dict(self) -> dict:
        return {
            "format": "qbvine-model",
            "version": FORMAT_VERSION,
            "library_version": __version__,
            "config": self.config.to_dict(),
            "location": self.location.tolist(),
            "scale": self.scale.tolist(),
            "marginals": [m.to_dict() for m in self.marginals],
            "samplers": [s.to_dict() for s in self.inverse_samplers],
            "vine": None if self.vine is None else self.vine.to_dict(),
            "fit_report": self.fit_report,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QbVineModel":
        _check_format(d, "qbvine-model")
        return cls(
            tuple(AveragedMarginal.from_dict(m) for m in d["marginals"]),
            tuple(InterpolatedInverseCdf.from_dict(s) for s in d["samplers"]),
            None if d["vine"] is None else VineModel.from_dict(d["vine"]),
            QbVineConfig.from_dict(d["config"]),
            np.asarray(d["location"], dtype=float),
            np.asarray(d["scale"], dtype=float),
            d.get("fit_report", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "QbVineModel":
        return load_model(path)


def _check_format(d: dict, kind: str) -> None:
    if d.get("format") != kind:
        raise ValueError(f"not a {kind} file")
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported {kind} version {d.get('version')}")


def joint_log_density(m: QbVineModel, x):
    return m.joint_log_density(x)


def sample(m: QbVineModel, count: int, seed=None):
    return m.sample(count, seed)


# -- fitting ---------------------------------------------------------------

def _check_data(data, config: QbVineConfig, min_dim: int) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise DataError("data must be an (n, d) matrix")
    n, d = x.shape
    if d < min_dim:
        raise DataError(f"need at least {min_dim} columns, got {d}")
    if n < 10:
        raise DataError(f"need at least 10 rows, got {n}")
    if n < config.cv_folds:
        raise DataError(f"n = {n} is smaller than cv_folds = {config.cv_folds}")
    if not np.all(np.isfinite(x)):
        raise DataError("data contain NaN or inf")
    if isinstance(config.initial_kind, tuple) and len(config.initial_kind) != d:
        raise ValueError(f"initial_kind lists {len(config.initial_kind)} entries for {d} columns")
    return x


def _fit_marginals(z: np.ndarray, config: QbVineConfig, seeds, threads):
    """Per-column rho selection and permutation averaging; column i only sees
    column i and its own seed."""

    def one(i):
        col = z[:, i]
        initial = config.initial_for(i, col)
        rho_seed, perm_seed = seed_sequence(seeds[i]).spawn(2)
        rho, score = select_rho(col, initial, config.rho_grid, config.energy_samples, rho_seed,
                                config.sampler_grid, beta=config.beta)
        m = average_marginals(col, rho, initial, config.n_perms, perm_seed)
        return m, build_sampler(m, config.sampler_grid), rho, score

    out = parallel_map(one, range(z.shape[1]), threads)
    return ([o[0] for o in out], [o[1] for o in out], [o[2] for o in out], [o[3] for o in out])


def _fit_copula(u: np.ndarray, config: QbVineConfig, seed, threads, bandwidth=None):
    """Tune (unless ``bandwidth``/``config.bandwidth`` fixes it) and fit the vine.

    ``bandwidth`` is a raw kernel variance; ``config.bandwidth`` follows
    ``config.bandwidth_scale``.
    """
    if u.shape[1] < 2:
        return None, {"bandwidth": None, "bandwidth_scale": config.bandwidth_scale,
                      "bandwidth_value": None, "cv_energy": None, "cv_scores": []}
    scale = config.bandwidth_scale
    if bandwidth is not None:
        b = float(bandwidth)
        info = {"bandwidth_value": None, "cv_energy": None, "cv_scores": []}
    elif config.bandwidth is not None:
        b = kernel_variance(config.bandwidth, u.shape[0], scale)
        info = {"bandwidth_value": config.bandwidth, "cv_energy": None, "cv_scores": []}
    else:
        value, s, scores = select_vine_bandwidth(u, config.bandwidth_grid, config.cv_folds, seed,
                                                 config.energy_samples, config.beta,
                                                 config.truncation_tau, threads, scale)
        b = kernel_variance(value, u.shape[0], scale)
        info = {"bandwidth_value": value, "cv_energy": s, "cv_scores": scores.tolist()}
    info = {"bandwidth": b, "bandwidth_scale": scale, **info}
    vine = fit_vine(u, None, b, config.truncation_tau)
    info["structure"] = vine.structure.to_array().tolist()
    info["n_independence_edges"] = sum(e.copula.bandwidth is None for e in vine.edges)
    return vine, info


def _pseudo_obs(marginals, z) -> np.ndarray:
    return _clamp(np.column_stack([m.cdf(z[:, i]) for i, m in enumerate(marginals)]))


def fit(data, config: QbVineConfig | None = None, threads: int | None = None,
        timings: dict | None = None) -> QbVineModel:
    """Fit marginals, tune the copula bandwidth by CV and fit the vine.

    Deterministic given ``config.seed``, whatever the thread count. Stage
    wall-clock times are written into ``timings`` when a dict is supplied.
    """
    config = config or QbVineConfig()
    x = _check_data(data, config, 2)
    timings = {} if timings is None else timings
    loc, sc = column_stats(x)
    z = (x - loc) / sc
    marg_ss, cv_ss = seed_sequence(config.seed).spawn(2)

    t0 = time.perf_counter()
    marginals, samplers, rhos, mscores = _fit_marginals(z, config, marg_ss.spawn(x.shape[1]), threads)
    timings["marginals"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    u = _pseudo_obs(marginals, z)
    vine, info = _fit_copula(u, config, cv_ss, threads)
    timings["copula"] = time.perf_counter() - t0

    report = {"n": int(x.shape[0]), "d": int(x.shape[1]), "seed": config.seed, "rho": rhos,
              "marginal_energy": mscores, **info}
    return QbVineModel(tuple(marginals), tuple(samplers), vine, config, loc, sc, report)


def load_model(path):
    d = json.loads(Path(path).read_text())
    if d.get("format") == "qbvine-conditional":
        return ConditionalModel.from_dict(d)
    return QbVineModel.from_dict(d)


# -- supervised ------------------------------------------------------------

def transform_labels(y, seed=None) -> np.ndarray:
    """Map binary labels to -10 / +10 plus standard normal noise."""
    y = np.asarray(y).reshape(-1)
    if y.size == 0 or not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0 or 1")
    noise = np.random.default_rng(seed).standard_normal(y.size)
    return np.where(y == 1, CLASS_ANCHORS[1], CLASS_ANCHORS[0]) + noise


@dataclass(frozen=True, eq=False)
class ConditionalModel:
    """p(y | x) = c(u_y, u_x) p_y(y) / c(u_x), with the x marginals shared."""

    joint: QbVineModel
    features: QbVineModel
    task: str
    q: float | None = None

    def __post_init__(self):
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise ValueError(f"unknown task {self.task!r}")

    @property
    def n_features(self) -> int:
        return self.features.dimension

    def conditional_log_density(self, y_value, x) -> np.ndarray:
        x = self.features._check(x)
        y = np.broadcast_to(np.asarray(y_value, dtype=float).reshape(-1), (x.shape[0],))
        u, logp = self.joint.transform(np.column_stack([y, x]))
        return logp[:, 0] + self.joint.copula_log_density(u) - self.features.copula_log_density(u[:, 1:])

    def predict_proba(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Positive-class probability from the density ratio at the two anchors.

        Returns ``(prob_positive, degenerate)``; rows where both anchor densities
        vanish get the training positive rate ``1 - q`` and ``degenerate=True``.
        """
        if self.task != CLASSIFICATION:
            raise ValueError("predict_class needs a classification model")
        lo = self.conditional_log_density(CLASS_ANCHORS[0], x)
        hi = self.conditional_log_density(CLASS_ANCHORS[1], x)
        degenerate = ~np.isfinite(lo) & ~np.isfinite(hi) | np.isnan(lo) | np.isnan(hi)
        with np.errstate(invalid="ignore"):
            p = special.expit(hi - lo)
        p = np.where(degenerate, 1.0 - self.q, p)
        return p, degenerate

    def predict_class(self, x) -> tuple[np.ndarray, np.ndarray]:
        p, _ = self.predict_proba(x)
        return p, (p >= 0.5).astype(int)

    def conditional_mean(self, x, grid_size: int = 512) -> np.ndarray:
        """E[y | x] by trapezoidal quadrature over the y sampler's support."""
        x = self.features._check(x)
        knots = self.joint.inverse_samplers[0].y
        zs = np.linspace(knots[0], knots[-1], grid_size)
        ys = zs * self.joint.scale[0] + self.joint.location[0]
        rows = np.repeat(np.arange(x.shape[0]), grid_size)
        ld = self.conditional_log_density(np.tile(ys, x.shape[0]), x[rows]).reshape(x.shape[0], grid_size)
        dens = np.exp(ld)
        mass = np.trapezoid(dens, ys, axis=1)
        return np.trapezoid(dens * ys, ys, axis=1) / mass

    def to_dict(self) -> dict:
        feat = self.features
        return {
            "format": "qbvine-conditional",
            "version": FORMAT_VERSION,
            "library_version": __version__,
            "task": self.task,
            "q": self.q,
            "joint": self.joint.to_dict(),
            "feature_vine": None if feat.vine is None else feat.vine.to_dict(),
            "feature_report": feat.fit_report,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionalModel":
        _check_format(d, "qbvine-conditional")
        joint = QbVineModel.from_dict(d["joint"])
        fv = None if d["feature_vine"] is None else VineModel.from_dict(d["feature_vine"])
        return cls(joint, _feature_model(joint, fv, d.get("feature_report", {})), d["task"], d["q"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


def _feature_model(joint: QbVineModel, vine, report) -> QbVineModel:
    return QbVineModel(joint.marginals[1:], joint.inverse_samplers[1:], vine, joint.config,
                       joint.location[1:], joint.scale[1:], report)


def fit_conditional(X, y, task: str = REGRESSION, config: QbVineConfig | None = None,
                    threads: int | None = None, timings: dict | None = None) -> ConditionalModel:
    """Fit the (d+1)-dim joint QB-Vine on (y, X) and a feature vine on X.

    The x marginals are fitted once and shared, so the numerator and
    denominator copulas see identical pseudo-observations.
    """
    config = config or QbVineConfig()
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != X.shape[0]:
        raise DataError("X and y have different numbers of rows")
    label_ss, joint_ss, feat_ss = seed_sequence(config.seed).spawn(3)
    q = None
    if task == CLASSIFICATION:
        counts = [int(np.sum(y == 0)), int(np.sum(y == 1))]
        if min(counts) == 0:
            raise DataError("classification needs both classes in the training data")
        y = transform_labels(y, label_ss)
        q = counts[0] / (counts[0] + counts[1])
    elif task != REGRESSION:
        raise ValueError(f"unknown task {task!r}")
    timings = {} if timings is None else timings
    data = _check_data(np.column_stack([y, X]), config, 2)
    loc, sc = column_stats(data)
    z = (data - loc) / sc
    marg_ss, cv_ss = joint_ss.spawn(2)

    t0 = time.perf_counter()
    marginals, samplers, rhos, mscores = _fit_marginals(z, config, marg_ss.spawn(data.shape[1]), threads)
    timings["marginals"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    u = _pseudo_obs(marginals, z)
    vine, info = _fit_copula(u, config, cv_ss, threads)
    timings["joint_copula"] = time.perf_counter() - t0
    report = {"n": int(data.shape[0]), "d": int(data.shape[1]), "seed": config.seed, "rho": rhos,
              "marginal_energy": mscores, "task": task, "q": q, **info}
    joint = QbVineModel(tuple(marginals), tuple(samplers), vine, config, loc, sc, report)

    t0 = time.perf_counter()
    b = None if config.separate_feature_bandwidth else info["bandwidth"]
    fvine, finfo = _fit_copula(u[:, 1:], config, feat_ss, threads, b)
    timings["feature_copula"] = time.perf_counter() - t0
    return ConditionalModel(joint, _feature_model(joint, fvine, finfo), task, q)


def conditional_log_density(m: ConditionalModel, y_value, x):
    return m.conditional_log_density(y_value, x)


def predict_class(m: ConditionalModel, x):
    return m.predict_class(x)
