"""Shared data generators for the test suite."""

import numpy as np

from subgp.catalog import Catalog


def make_catalog(X, y=None, seed=0) -> Catalog:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if y is None:
        y = np.random.default_rng(seed).normal(size=X.shape[0])
    return Catalog(X=X, y=np.asarray(y, dtype=float))


def uniform_points(n: int, d: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).uniform(size=(n, d))


def clustered_points(n: int, d: int, seed: int, k: int = 5) -> np.ndarray:
    """Gaussian blobs min-max rescaled to the unit cube."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(size=(k, d))
    scales = rng.uniform(0.02, 0.2, size=(k, d))
    comp = rng.integers(k, size=n)
    X = rng.normal(centers[comp], scales[comp])
    span = X.max(axis=0) - X.min(axis=0)
    return (X - X.min(axis=0)) / np.where(span > 0, span, 1.0)


def two_branch_spec(n: int, seed: int = 0, noise_sd: float = 0.1, gap: float = 3.0):
    from subgp.evaluate import SyntheticSpec

    return SyntheticSpec(
        branches=[
            lambda X: np.sin(2.0 * np.pi * X[:, 0]),
            lambda X, g=gap: np.sin(2.0 * np.pi * X[:, 0]) + g,
        ],
        weights=[0.5, 0.5],
        noise_sd=noise_sd,
        n=n,
        d=1,
        seed=seed,
    )
