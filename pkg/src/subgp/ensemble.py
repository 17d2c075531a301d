"""Ensembles of GP models trained on independent subsample draws.

Each ensemble member draws one representative point per partition cell
(its own RNG stream, seed = base_seed XOR member index) and fits a GP to
those points.  The predictive distribution at a query point is the equally
weighted mixture of the members' Gaussian predictives; quantiles come from
bisection on the analytic mixture CDF, and highest-density regions from a
thresholded density grid.  Member training is embarrassingly parallel and
results do not depend on the worker count.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy.special import ndtr
from threadpoolctl import threadpool_limits

from . import gp
from .catalog import Catalog
from .errors import ConfigError, NumericalError
from .partition import PartitionGraph, Partitioning
from .sampler import SamplerConfig, draw_subsample, member_config

_RETRY_SALT = 0x5BD1E995


@dataclass
class EnsembleConfig:
    """Snapshot of the settings that produced an ensemble."""

    n_min: int
    n_max: int
    eta: float
    n_m: int
    base_seed: int
    member_seeds: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_min": self.n_min,
            "n_max": self.n_max,
            "eta": self.eta,
            "n_m": self.n_m,
            "base_seed": self.base_seed,
            "member_seeds": list(self.member_seeds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleConfig":
        return cls(
            n_min=int(d["n_min"]),
            n_max=int(d["n_max"]),
            eta=float(d["eta"]),
            n_m=int(d["n_m"]),
            base_seed=int(d["base_seed"]),
            member_seeds=[int(s) for s in d["member_seeds"]],
        )


@dataclass
class EnsembleModel:
    members: list[gp.GPModel]
    config: EnsembleConfig

    @property
    def n_m(self) -> int:
        return len(self.members)

    def mixture_components(self, X: np.ndarray, include_noise: bool = True):
        return mixture_components(self, X, include_noise=include_noise)


@dataclass
class MixturePredictive:
    """Equally weighted Gaussian mixture at one query point."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.means = np.atleast_1d(np.asarray(self.means, dtype=float))
        self.variances = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if not (self.variances > 0).all():
            raise ConfigError("mixture variances must be strictly positive")

    @property
    def n_components(self) -> int:
        return self.means.size


def _fit_member(
    i: int,
    part: Partitioning,
    graph: PartitionGraph,
    sampler_cfg: SamplerConfig,
    gp_opts: gp.FitOptions,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Draw and optimize one member; returns (draw indices, phi, sigma2).

    The cached factorization is rebuilt by the caller, so the worker return
    payload stays small under process-based parallelism.
    """
    with threadpool_limits(limits=1):
        cfg_i = member_config(sampler_cfg, i)
        draw = draw_subsample(part, graph, cfg_i)
        try:
            model = gp.fit(part.X[draw.indices], part.y[draw.indices], gp_opts)
        except NumericalError:
            retry = SamplerConfig(eta=sampler_cfg.eta, seed=cfg_i.seed ^ _RETRY_SALT)
            draw = draw_subsample(part, graph, retry)
            try:
                model = gp.fit(part.X[draw.indices], part.y[draw.indices], gp_opts)
            except NumericalError as exc:
                raise NumericalError(f"ensemble member {i} failed to fit after retry: {exc}") from exc
        return draw.indices, model.hyperparams.phi, model.hyperparams.sigma2


def train_ensemble(
    cat: Catalog,
    part: Partitioning,
    graph: PartitionGraph,
    n_m: int,
    sampler_cfg: SamplerConfig | None = None,
    gp_opts: gp.FitOptions | None = None,
    n_jobs: int = 1,
) -> EnsembleModel:
    """Fit n_m GPs on independent subsample draws (order-stable by index)."""
    if n_m < 1:
        raise ConfigError(f"ensemble size must be >= 1, got {n_m}")
    if part.X.shape != cat.X.shape or part.X is not cat.X and not np.array_equal(part.X, cat.X):
        raise ConfigError("partitioning was built on a different catalog")
    sampler_cfg = sampler_cfg or SamplerConfig()
    gp_opts = gp_opts or gp.FitOptions()
    if n_jobs == 1:
        fitted = [_fit_member(i, part, graph, sampler_cfg, gp_opts) for i in range(n_m)]
    else:
        fitted = Parallel(n_jobs=n_jobs, backend="loky")(
            delayed(_fit_member)(i, part, graph, sampler_cfg, gp_opts) for i in range(n_m)
        )
    members = [
        gp.make_model(gp.GPHyperparams(phi=phi, sigma2=sigma2), part.X[idx], part.y[idx])
        for idx, phi, sigma2 in fitted
    ]
    config = EnsembleConfig(
        n_min=part.n_min,
        n_max=part.n_max,
        eta=sampler_cfg.eta,
        n_m=n_m,
        base_seed=sampler_cfg.seed,
        member_seeds=[sampler_cfg.seed ^ i for i in range(n_m)],
    )
    return EnsembleModel(members=members, config=config)


def mixture_components(
    model: EnsembleModel, X: np.ndarray, include_noise: bool = True, chunk: int = 2048
):
    """Member means/variances at query rows: two (n, N_m) arrays."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    k = model.n_m
    means = np.empty((n, k))
    variances = np.empty((n, k))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        for j, mem in enumerate(model.members):
            pred = gp.predict(mem, X[lo:hi], include_noise=include_noise)
            means[lo:hi, j] = pred.mean
            variances[lo:hi, j] = pred.variance
    return means, variances


def predictive(model: EnsembleModel, x_star: np.ndarray, include_noise: bool = True) -> MixturePredictive:
    """Mixture predictive at a single query point."""
    x_star = np.asarray(x_star, dtype=float)
    if x_star.ndim != 1:
        raise ConfigError("predictive expects a single d-vector; use mixture_components for batches")
    means, variances = mixture_components(model, x_star[None, :], include_noise=include_noise)
    return MixturePredictive(means=means[0], variances=variances[0])


# ---------------------------------------------------------------------------
# Mixture math
# ---------------------------------------------------------------------------


def mixture_pdf(mp: MixturePredictive, ys) -> np.ndarray:
    ys = np.asarray(ys, dtype=float)
    sd = np.sqrt(mp.variances)
    z = (ys[..., None] - mp.means) / sd
    dens = np.exp(-0.5 * z**2) / (sd * np.sqrt(2.0 * np.pi))
    return dens.mean(axis=-1)


def mixture_cdf(mp: MixturePredictive, ys) -> np.ndarray:
    ys = np.asarray(ys, dtype=float)
    sd = np.sqrt(mp.variances)
    return ndtr((ys[..., None] - mp.means) / sd).mean(axis=-1)


def _envelope(means: np.ndarray, variances: np.ndarray, spread: float = 8.0):
    sd = np.sqrt(variances)
    return float((means - spread * sd).min()), float((means + spread * sd).max())


def mixture_quantile(mp: MixturePredictive, q) -> np.ndarray | float:
    """Quantile(s) by bisection on the analytic CDF, to 1e-8 in y."""
    q_arr = np.atleast_1d(np.asarray(q, dtype=float))
    if not ((q_arr > 0) & (q_arr < 1)).all():
        raise ConfigError("quantile levels must lie strictly inside (0, 1)")
    lo_env, hi_env = _envelope(mp.means, mp.variances)
    lo = np.full(q_arr.shape, lo_env)
    hi = np.full(q_arr.shape, hi_env)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = mixture_cdf(mp, mid) < q_arr
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if float((hi - lo).max()) < 1e-8:
            break
    out = 0.5 * (lo + hi)
    return float(out[0]) if np.isscalar(q) or np.asarray(q).ndim == 0 else out


def quantile_batch(means: np.ndarray, variances: np.ndarray, q: float) -> np.ndarray:
    """Row-wise mixture quantile for batched components (n, k)."""
    sd = np.sqrt(variances)
    lo = (means - 8.0 * sd).min(axis=1)
    hi = (means + 8.0 * sd).max(axis=1)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        cdf = ndtr((mid[:, None] - means) / sd).mean(axis=1)
        below = cdf < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if float((hi - lo).max()) < 1e-8:
            break
    return 0.5 * (lo + hi)


def _superlevel_intervals(grid: np.ndarray, dens: np.ndarray, t: float) -> list[tuple[float, float]]:
    """Intervals where the density exceeds t, with interpolated crossings."""
    above = dens >= t
    if not above.any():
        return []
    intervals: list[tuple[float, float]] = []
    idx = np.flatnonzero(above)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    stops = np.concatenate([idx[breaks], [idx[-1]]])
    for a, b in zip(starts, stops):
        lo = grid[a]
        hi = grid[b]
        if a > 0 and dens[a] != dens[a - 1]:
            frac = (t - dens[a - 1]) / (dens[a] - dens[a - 1])
            lo = grid[a - 1] + frac * (grid[a] - grid[a - 1])
        if b < grid.size - 1 and dens[b] != dens[b + 1]:
            frac = (t - dens[b + 1]) / (dens[b] - dens[b + 1])
            hi = grid[b + 1] - frac * (grid[b + 1] - grid[b])
        intervals.append((float(lo), float(hi)))
    return intervals


def _intervals_probability(mp: MixturePredictive, intervals) -> float:
    return float(
        sum(mixture_cdf(mp, np.array([hi]))[0] - mixture_cdf(mp, np.array([lo]))[0] for lo, hi in intervals)
    )


def hpd_region(
    mp: MixturePredictive, level: float, grid_size: int = 4096
) -> list[tuple[float, float]]:
    """Highest-density super-level set holding ``level`` probability.

    The density threshold is found by bisection until the region's mixture
    probability is within 1e-4 of the requested level; multimodal mixtures
    may yield several disjoint intervals.
    """
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must lie in (0,1), got {level}")
    lo_env, hi_env = _envelope(mp.means, mp.variances)
    grid = np.linspace(lo_env, hi_env, grid_size)
    dens = mixture_pdf(mp, grid)
    t_lo, t_hi = 0.0, float(dens.max())
    intervals = [(lo_env, hi_env)]
    for _ in range(100):
        t = 0.5 * (t_lo + t_hi)
        intervals = _superlevel_intervals(grid, dens, t)
        p = _intervals_probability(mp, intervals)
        if abs(p - level) <= 1e-4:
            return intervals
        if p > level:
            t_lo = t
        else:
            t_hi = t
    return intervals


def sample_predictive(mp: MixturePredictive, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n samples: uniform component choice, then a Gaussian draw."""
    if n < 1:
        raise ConfigError(f"sample count must be >= 1, got {n}")
    comp = rng.integers(mp.n_components, size=n)
    return rng.normal(mp.means[comp], np.sqrt(mp.variances[comp]))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_ensemble(model: EnsembleModel, directory: str | Path) -> dict:
    """Write member JSONs plus a manifest with config, seeds, content hashes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, member in enumerate(model.members):
        name = f"member_{i:04d}.json"
        payload = json.dumps(gp.model_to_dict(member), sort_keys=True) + "\n"
        (directory / name).write_text(payload, encoding="utf-8")
        digest = hashlib.sha256(payload.encode("utf-8")).hexdigest()
        entries.append({"file": name, "sha256": digest})
    manifest = {"config": model.config.to_dict(), "members": entries}
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def load_ensemble(directory: str | Path) -> EnsembleModel:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no ensemble manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    members = [gp.load_model(directory / e["file"]) for e in manifest["members"]]
    return EnsembleModel(members=members, config=EnsembleConfig.from_dict(manifest["config"]))
