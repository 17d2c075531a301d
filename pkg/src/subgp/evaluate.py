"""Calibration and accuracy diagnostics, plus synthetic data for verification.

PIT values are the mixture CDF evaluated at each observed test response;
under perfect calibration they are uniform on [0,1].  Coverage counts how
often the response lands inside the central predictive interval.  The
synthetic generator mixes closed-form latent branches with Gaussian noise,
standardizes, and keeps the branch labels so model output can be checked
against the known truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import chi2

from .catalog import Catalog, NormalizationState
from .ensemble import MixturePredictive, mixture_pdf, quantile_batch
from .errors import ConfigError, DataError

PIT_BINS = 20


@dataclass
class PITResult:
    values: np.ndarray
    hist: np.ndarray
    chi2_stat: float
    p_value: float


@dataclass
class SyntheticSpec:
    """Mixture of latent branch functions with additive Gaussian noise."""

    branches: Sequence[Callable[[np.ndarray], np.ndarray]]
    weights: Sequence[float]
    noise_sd: float
    n: int
    d: int = 1
    seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.branches) != w.size:
            raise ConfigError("one weight per branch is required")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError(f"branch weights must sum to 1, got {w.sum()}")
        if self.noise_sd <= 0:
            raise ConfigError("noise sd must be positive")


def _components_of(model, X: np.ndarray):
    """(means, variances) arrays from anything exposing mixture components."""
    return model.mixture_components(np.atleast_2d(np.asarray(X, dtype=float)))


def pit(model, test: Catalog) -> PITResult:
    """Mixture-CDF values at the observed test responses, with a chi-square
    uniformity test over 20 equal bins."""
    if test.n == 0:
        raise DataError("test catalog is empty")
    means, variances = _components_of(model, test.X)
    sd = np.sqrt(variances)
    values = ndtr((test.y[:, None] - means) / sd).mean(axis=1)
    hist, _ = np.histogram(values, bins=PIT_BINS, range=(0.0, 1.0))
    expected = test.n / PIT_BINS
    stat = float(((hist - expected) ** 2 / expected).sum())
    return PITResult(
        values=values,
        hist=hist,
        chi2_stat=stat,
        p_value=float(chi2.sf(stat, PIT_BINS - 1)),
    )


def coverage(model, test: Catalog, level: float) -> float:
    """Fraction of test responses inside the central ``level`` interval."""
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must lie in (0,1), got {level}")
    means, variances = _components_of(model, test.X)
    alpha = (1.0 - level) / 2.0
    lo = quantile_batch(means, variances, alpha)
    hi = quantile_batch(means, variances, 1.0 - alpha)
    return float(((test.y >= lo) & (test.y <= hi)).mean())


def point_errors(model, test: Catalog) -> dict:
    """RMSE/MAE of the mixture median against the observed responses."""
    means, variances = _components_of(model, test.X)
    median = quantile_batch(means, variances, 0.5)
    err = median - test.y
    return {
        "rmse_median": float(np.sqrt(np.mean(err**2))),
        "mae_median": float(np.mean(np.abs(err))),
    }


def generate_synthetic(spec: SyntheticSpec) -> tuple[Catalog, np.ndarray]:
    """Sample x ~ U[0,1]^d, pick a branch by weight, add noise, standardize.

    Returns the catalog and the per-row branch labels.  The catalog's
    transform holds the standardization constants (no log), so the raw
    conditional truth can be mapped into model units.
    """
    rng = np.random.default_rng(spec.seed)
    X = rng.uniform(size=(spec.n, spec.d))
    labels = rng.choice(len(spec.branches), size=spec.n, p=np.asarray(spec.weights, dtype=float))
    y_raw = np.empty(spec.n)
    for b, fn in enumerate(spec.branches):
        mask = labels == b
        if mask.any():
            y_raw[mask] = np.asarray(fn(X[mask]), dtype=float)
    y_raw = y_raw + rng.normal(scale=spec.noise_sd, size=spec.n)
    mu = float(y_raw.mean())
    sd = float(y_raw.std())
    if sd <= 0:
        raise DataError("synthetic responses have zero spread")
    state = NormalizationState(
        input_min=np.zeros(spec.d),
        input_max=np.ones(spec.d),
        y_mean=mu,
        y_sd=sd,
        log_response=False,
    )
    cat = Catalog(X=X, y=(y_raw - mu) / sd, transform=state)
    return cat, labels


@dataclass
class SyntheticTruth:
    """The generator's own conditional mixture, in standardized units.

    Only equal branch weights can be expressed as an equally weighted
    mixture; unequal weights are rejected.
    """

    spec: SyntheticSpec
    state: NormalizationState

    def __post_init__(self):
        w = np.asarray(self.spec.weights, dtype=float)
        if not np.allclose(w, w[0]):
            raise ConfigError("synthetic truth mixture requires equal branch weights")

    def mixture_components(self, X: np.ndarray):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        means = np.column_stack(
            [(np.asarray(fn(X), dtype=float) - self.state.y_mean) / self.state.y_sd for fn in self.spec.branches]
        )
        var = (self.spec.noise_sd / self.state.y_sd) ** 2
        return means, np.full_like(means, var)

    def predictive(self, x: np.ndarray) -> MixturePredictive:
        means, variances = self.mixture_components(np.atleast_2d(x))
        return MixturePredictive(means=means[0], variances=variances[0])


def mode_count(
    mp: MixturePredictive,
    min_separation: float = 0.5,
    min_prominence: float = 1.2,
    grid_size: int = 4096,
) -> int:
    """Number of well-separated, prominent local maxima of the mixture density.

    Peaks are found on a grid spanning the mixture's +-8 sd envelope.
    Adjacent peaks merge when they are closer than ``min_separation`` or
    when the smaller peak is less than ``min_prominence`` times the density
    at the saddle between them.
    """
    if min_separation <= 0 or min_prominence <= 0:
        raise ConfigError("mode-count thresholds must be positive")
    sd = np.sqrt(mp.variances)
    lo = float((mp.means - 8.0 * sd).min())
    hi = float((mp.means + 8.0 * sd).max())
    grid = np.linspace(lo, hi, grid_size)
    dens = mixture_pdf(mp, grid)
    interior = np.flatnonzero(
        (dens[1:-1] > dens[:-2]) & (dens[1:-1] >= dens[2:])
    ) + 1
    peaks = list(interior)
    if not peaks:
        return 1
    while len(peaks) > 1:
        removed = False
        for a, b in zip(peaks[:-1], peaks[1:]):
            saddle = float(dens[a : b + 1].min())
            smaller = min(dens[a], dens[b])
            ratio = np.inf if saddle == 0.0 else smaller / saddle
            if (grid[b] - grid[a]) < min_separation or ratio < min_prominence:
                peaks.remove(a if dens[a] <= dens[b] else b)
                removed = True
                break
        if not removed:
            break
    return len(peaks)


def mode_count_batch(
    means: np.ndarray,
    variances: np.ndarray,
    min_separation: float = 0.5,
    min_prominence: float = 1.2,
) -> np.ndarray:
    """mode_count per row of batched mixture components."""
    return np.array(
        [
            mode_count(
                MixturePredictive(means=means[i], variances=variances[i]),
                min_separation=min_separation,
                min_prominence=min_prominence,
            )
            for i in range(means.shape[0])
        ],
        dtype=int,
    )


def pit_self_consistency(model, X: np.ndarray, n: int, seed: int = 0) -> float:
    """KS statistic of PIT values for samples drawn from the model itself.

    Samples are generated from the model's own predictive mixtures (cycling
    over the given query rows), so their PIT values must be uniform
    regardless of any training data.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rng = np.random.default_rng(seed)
    rows = np.resize(np.arange(X.shape[0]), n)
    means, variances = _components_of(model, X)
    m = means[rows]
    v = variances[rows]
    comp = rng.integers(m.shape[1], size=n)
    take = np.arange(n)
    ys = rng.normal(m[take, comp], np.sqrt(v[take, comp]))
    pit_vals = ndtr((ys[:, None] - m) / np.sqrt(v)).mean(axis=1)
    sorted_vals = np.sort(pit_vals)
    grid_hi = np.arange(1, n + 1) / n
    grid_lo = np.arange(0, n) / n
    return float(np.max(np.maximum(grid_hi - sorted_vals, sorted_vals - grid_lo)))
