"""Catalog ingestion: color features, response/input normalization, holdout splits.

Raw records carry five broadband magnitudes (u, g, r, i, z) and a
spectroscopic redshift.  The modeling inputs are four adjacent-band colors
plus the i-band magnitude, min-max scaled to the unit cube; the response is
the log redshift standardized to mean zero and unit standard deviation.
Scaling constants are fitted on a caller-chosen subset (normally the
training split) and kept in an invertible :class:`NormalizationState`.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

RAW_COLUMNS = ("u", "g", "r", "i", "z", "spec_z")


@dataclass
class NormalizationState:
    """Invertible transform from raw feature/response space to model space."""

    input_min: np.ndarray
    input_max: np.ndarray
    y_mean: float
    y_sd: float
    log_response: bool = True

    def transform_inputs(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.input_min) / (
            self.input_max - self.input_min
        )

    def inverse_inputs(self, scaled: np.ndarray) -> np.ndarray:
        return np.asarray(scaled, dtype=float) * (self.input_max - self.input_min) + self.input_min

    def transform_response(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        base = np.log(raw) if self.log_response else raw
        return (base - self.y_mean) / self.y_sd

    def inverse_response(self, y: np.ndarray) -> np.ndarray:
        base = np.asarray(y, dtype=float) * self.y_sd + self.y_mean
        return np.exp(base) if self.log_response else base

    def to_dict(self) -> dict:
        return {
            "input_min": self.input_min.tolist(),
            "input_max": self.input_max.tolist(),
            "y_mean": float(self.y_mean),
            "y_sd": float(self.y_sd),
            "log_response": bool(self.log_response),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationState":
        return cls(
            input_min=np.asarray(d["input_min"], dtype=float),
            input_max=np.asarray(d["input_max"], dtype=float),
            y_mean=float(d["y_mean"]),
            y_sd=float(d["y_sd"]),
            log_response=bool(d["log_response"]),
        )


@dataclass
class Catalog:
    """Normalized dataset: inputs in [0,1]^d and a standardized response.

    ``clamped`` marks rows whose scaled inputs fell outside [0,1] and were
    clipped to the boundary (possible only for rows outside the fitting
    subset); :func:`clip_outliers` can drop them.
    """

    X: np.ndarray
    y: np.ndarray
    transform: NormalizationState | None = None
    clamped: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def take(self, idx: np.ndarray) -> "Catalog":
        return Catalog(
            X=self.X[idx],
            y=self.y[idx],
            transform=self.transform,
            clamped=None if self.clamped is None else self.clamped[idx],
        )


def compute_features(magnitudes: np.ndarray) -> np.ndarray:
    """Adjacent-band colors plus the i magnitude: (u-g, g-r, r-i, i-z, i).

    Accepts one record of shape (5,) or a table of shape (n, 5) ordered as
    u, g, r, i, z.  Row k of the output depends only on row k of the input.
    Non-finite magnitudes are rejected with the offending row indices.
    """
    mags = np.asarray(magnitudes, dtype=float)
    single = mags.ndim == 1
    table = mags[None, :] if single else mags
    if table.ndim != 2 or table.shape[1] != 5:
        raise DataError(f"expected 5 magnitudes per record, got shape {mags.shape}")
    bad = ~np.isfinite(table).all(axis=1)
    if bad.any():
        idx = np.flatnonzero(bad)
        raise DataError(f"non-finite magnitudes in records {idx.tolist()}")
    u, g, r, i, z = (table[:, k] for k in range(5))
    feats = np.column_stack([u - g, g - r, r - i, i - z, i])
    return feats[0] if single else feats


def normalize(
    raw_features: np.ndarray,
    raw_z: np.ndarray,
    fit_on: np.ndarray | None = None,
    log_response: bool = True,
) -> tuple[Catalog, NormalizationState]:
    """Scale inputs to [0,1] and standardize the (logged) response.

    Scaling constants (per-dimension min/max, response mean/sd) are computed
    over the ``fit_on`` index subset; all rows are then transformed with
    those constants.  Rows outside the fitting subset whose scaled inputs
    leave [0,1] are clamped to the boundary and flagged, with a warning.
    """
    F = np.asarray(raw_features, dtype=float)
    zv = np.asarray(raw_z, dtype=float)
    if F.ndim != 2:
        raise DataError(f"raw_features must be 2-D, got shape {F.shape}")
    if zv.shape != (F.shape[0],):
        raise DataError("raw_z length does not match raw_features rows")
    if not np.isfinite(F).all():
        raise DataError("raw_features contain non-finite values")
    if log_response and not (zv > 0).all():
        idx = np.flatnonzero(~(zv > 0))
        raise DataError(f"response must be positive for the log transform; rows {idx.tolist()[:10]}")

    fit_idx = np.arange(F.shape[0]) if fit_on is None else np.asarray(fit_on, dtype=int)
    if fit_idx.size == 0:
        raise DataError("fit_on subset is empty")

    base = np.log(zv) if log_response else zv
    mu = float(np.mean(base[fit_idx]))
    sd = float(np.std(base[fit_idx]))
    if sd <= 0.0:
        raise DataError("response has zero spread on the fitting subset")

    mins = F[fit_idx].min(axis=0)
    maxs = F[fit_idx].max(axis=0)
    degenerate = np.flatnonzero(maxs - mins <= 0.0)
    if degenerate.size:
        raise DataError(f"zero input range in dimension(s) {degenerate.tolist()}")

    state = NormalizationState(mins, maxs, mu, sd, log_response=log_response)
    X = state.transform_inputs(F)
    y = (base - mu) / sd

    outside = (X < 0.0) | (X > 1.0)
    clamped = outside.any(axis=1)
    if clamped.any():
        warnings.warn(
            f"{int(clamped.sum())} row(s) fell outside the fitted input range and were clamped to [0,1]",
            stacklevel=2,
        )
        X = np.clip(X, 0.0, 1.0)
    return Catalog(X=X, y=y, transform=state, clamped=clamped), state


def holdout_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (train, test) index split; test size = round(n * fraction)."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"holdout fraction must lie in (0,1), got {fraction}")
    n_test = int(round(n * fraction))
    if n_test == 0 or n_test == n:
        raise ConfigError(f"holdout fraction {fraction} leaves an empty split for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    return train, test


def split_holdout(cat: Catalog, fraction: float, seed: int) -> tuple[Catalog, Catalog]:
    """Split a catalog into disjoint (train, test) catalogs, reproducibly."""
    train_idx, test_idx = holdout_indices(cat.n, fraction, seed)
    return cat.take(train_idx), cat.take(test_idx)


def clip_outliers(cat: Catalog, k: float) -> Catalog:
    """Drop rows with |y| > k or inputs clamped from outside the fitted range.

    Disabled by default in the pipeline; k = inf is the identity.
    """
    if not k > 0:
        raise ConfigError(f"sigma multiplier must be positive, got {k}")
    keep = np.abs(cat.y) <= k
    if cat.clamped is not None:
        keep &= ~cat.clamped
    return cat.take(np.flatnonzero(keep))


# ---------------------------------------------------------------------------
# CSV / JSON interfaces
# ---------------------------------------------------------------------------


def read_raw_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, list[tuple[int, str]]]:
    """Read a raw catalog CSV with header u,g,r,i,z,spec_z (extras ignored).

    Returns (magnitudes (n,5), spec_z (n,), skipped) where ``skipped`` lists
    (line_number, reason) for rows that failed to parse and were dropped.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        names = [h.strip() for h in header]
        missing = [c for c in RAW_COLUMNS if c not in names]
        if missing:
            raise ConfigError(f"{path}: missing required column(s) {missing}")
        cols = [names.index(c) for c in RAW_COLUMNS]

        mags: list[list[float]] = []
        zs: list[float] = []
        skipped: list[tuple[int, str]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) <= max(cols):
                skipped.append((lineno, "too few fields"))
                continue
            try:
                vals = [float(row[c]) for c in cols]
            except ValueError:
                skipped.append((lineno, "unparseable numeric field"))
                continue
            if not all(np.isfinite(v) for v in vals):
                skipped.append((lineno, "non-finite value"))
                continue
            if vals[5] <= 0:
                skipped.append((lineno, "non-positive spec_z"))
                continue
            mags.append(vals[:5])
            zs.append(vals[5])
    if not mags:
        raise DataError(f"{path}: no valid rows")
    return np.asarray(mags, dtype=float), np.asarray(zs, dtype=float), skipped


def write_catalog_csv(cat: Catalog, path: str | Path) -> None:
    """Write the normalized catalog as x1..xd,y with round-trippable floats."""
    path = Path(path)
    header = ",".join([f"x{j + 1}" for j in range(cat.d)] + ["y"])
    data = np.column_stack([cat.X, cat.y])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def read_catalog_csv(path: str | Path, transform: NormalizationState | None = None) -> Catalog:
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] < 2:
        raise DataError(f"{path}: expected at least two columns (x1..xd, y)")
    return Catalog(X=data[:, :-1], y=data[:, -1], transform=transform)


def write_normalization_json(
    state: NormalizationState, path: str | Path, extra: dict | None = None
) -> None:
    payload = state.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_normalization_json(path: str | Path) -> tuple[NormalizationState, dict]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    state = NormalizationState.from_dict(payload)
    extra = {k: v for k, v in payload.items() if k not in state.to_dict()}
    return state, extra
