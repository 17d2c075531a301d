"""Pipeline command line: ingest | synth | partition | train | predict | evaluate.

Each subcommand reads and writes a workspace directory with the layout
``workspace/{catalog,partition,ensemble,predictions,diagnostics}`` and
records its configuration, library versions, timestamp, and output hashes
in ``workspace/manifest.json``.  Outputs themselves carry no timestamps, so
reruns with identical configuration are byte-stable.

Configuration precedence: command-line flag > --config JSON file > default.
Exit codes: 0 success, 2 configuration/validation error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from . import __version__, catalog, ensemble, evaluate, gp, partition
from .errors import ConfigError, DataError, NumericalError, SubgpError
from .sampler import SamplerConfig

COVERAGE_LEVELS = (0.5, 0.9)


@dataclass
class RunConfig:
    n_min: int = 50
    n_max: int = 150
    grid: str = "auto"
    eta: float = 0.5
    members: int = 50
    holdout: float = 0.2
    seed: int = 0
    threads: int = 1
    mode: str = "balanced"
    variance: str = "noisy-y"
    clip_k: float | None = None
    max_reject_rate: float = 0.01
    eval_points: int = 500

    def validate(self) -> None:
        if self.n_min < 1:
            raise ConfigError(f"n-min must be >= 1, got {self.n_min}")
        if self.n_max < 2 * self.n_min:
            raise ConfigError(f"n-max must be >= 2 * n-min, got ({self.n_min}, {self.n_max})")
        if self.members < 1:
            raise ConfigError(f"members must be >= 1, got {self.members}")
        if not 0.0 < self.holdout < 1.0:
            raise ConfigError(f"holdout must lie in (0,1), got {self.holdout}")
        if self.eta <= 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.mode not in ("balanced", "equal-volume"):
            raise ConfigError(f"mode must be 'balanced' or 'equal-volume', got {self.mode!r}")
        if self.variance not in ("noisy-y", "latent-z"):
            raise ConfigError(f"variance must be 'noisy-y' or 'latent-z', got {self.variance!r}")

    def grid_spec(self, d: int) -> tuple[int, ...] | None:
        if self.grid == "auto":
            return None
        try:
            parts = tuple(int(v) for v in self.grid.split(","))
        except ValueError:
            raise ConfigError(f"grid must be 'auto' or comma-separated counts, got {self.grid!r}") from None
        if len(parts) == 1:
            parts = parts * d
        if len(parts) != d:
            raise ConfigError(f"grid has {len(parts)} entries for d={d}")
        return parts


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the optional config file, and explicit flags."""
    values = asdict(RunConfig())
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            fromfile = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        unknown = set(fromfile) - set(values)
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        values.update(fromfile)
    for key in values:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Workspace helpers
# ---------------------------------------------------------------------------


def _ws(args) -> Path:
    ws = Path(args.workspace)
    for sub in ("catalog", "partition", "ensemble", "predictions", "diagnostics"):
        (ws / sub).mkdir(parents=True, exist_ok=True)
    return ws


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest_key(p: Path, ws: Path) -> str:
    try:
        return str(p.relative_to(ws))
    except ValueError:
        return str(p)


def _update_manifest(ws: Path, stage: str, cfg: RunConfig, outputs: list[Path]) -> None:
    manifest_path = ws / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.exists() else {}
    manifest[stage] = {
        "config": asdict(cfg),
        "versions": {"subgp": __version__, "numpy": np.__version__},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "outputs": {_manifest_key(p, ws): _sha256(p) for p in outputs},
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_split(
    ws: Path,
    cfg: RunConfig,
    cat: catalog.Catalog,
    state: catalog.NormalizationState,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
) -> list[Path]:
    train = cat.take(train_idx)
    test = cat.take(test_idx)
    if cfg.clip_k is not None:
        before = train.n
        train = catalog.clip_outliers(train, cfg.clip_k)
        print(f"clip: removed {before - train.n} of {before} training rows (k={cfg.clip_k})")
    train_path = ws / "catalog" / "train.csv"
    test_path = ws / "catalog" / "test.csv"
    norm_path = ws / "catalog" / "normalization.json"
    catalog.write_catalog_csv(train, train_path)
    catalog.write_catalog_csv(test, test_path)
    catalog.write_normalization_json(
        state,
        norm_path,
        extra={
            "seed": cfg.seed,
            "holdout_fraction": cfg.holdout,
            "test_indices": test_idx.tolist(),
        },
    )
    return [train_path, test_path, norm_path]


def _read_train(ws: Path) -> catalog.Catalog:
    path = ws / "catalog" / "train.csv"
    if not path.exists():
        raise ConfigError(f"no training catalog at {path}; run 'subgp ingest' or 'subgp synth' first")
    state, _ = catalog.read_normalization_json(ws / "catalog" / "normalization.json")
    return catalog.read_catalog_csv(path, transform=state)


def _read_test(ws: Path) -> catalog.Catalog:
    path = ws / "catalog" / "test.csv"
    if not path.exists():
        raise ConfigError(f"no test catalog at {path}")
    state, _ = catalog.read_normalization_json(ws / "catalog" / "normalization.json")
    return catalog.read_catalog_csv(path, transform=state)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = build_config(args)
    ws = _ws(args)
    mags, zvals, skipped = catalog.read_raw_csv(args.input)
    total = mags.shape[0] + len(skipped)
    if skipped:
        for lineno, reason in skipped[:10]:
            print(f"skipped line {lineno}: {reason}", file=sys.stderr)
        print(f"skipped {len(skipped)} of {total} rows", file=sys.stderr)
    if len(skipped) > cfg.max_reject_rate * total:
        raise DataError(
            f"rejected {len(skipped)}/{total} rows, above the allowed rate {cfg.max_reject_rate}"
        )
    feats = catalog.compute_features(mags)
    train_idx, test_idx = catalog.holdout_indices(mags.shape[0], cfg.holdout, cfg.seed)
    cat, state = catalog.normalize(feats, zvals, fit_on=train_idx)
    outputs = _write_split(ws, cfg, cat, state, train_idx, test_idx)
    _update_manifest(ws, "ingest", cfg, outputs)
    print(f"ingest: {mags.shape[0]} rows -> {len(train_idx)} train / {len(test_idx)} test")
    return 0


SYNTH_GENERATORS = ("two-branch", "single-sine")


def _synth_spec(args, cfg: RunConfig) -> evaluate.SyntheticSpec:
    gap = args.gap
    if args.generator == "two-branch":
        branches = [
            lambda X: np.sin(2.0 * np.pi * X[:, 0]),
            lambda X, g=gap: np.sin(2.0 * np.pi * X[:, 0]) + g,
        ]
        weights = [0.5, 0.5]
    elif args.generator == "single-sine":
        branches = [lambda X: np.sin(2.0 * np.pi * X[:, 0])]
        weights = [1.0]
    else:
        raise ConfigError(f"unknown generator {args.generator!r}; choose from {SYNTH_GENERATORS}")
    return evaluate.SyntheticSpec(
        branches=branches,
        weights=weights,
        noise_sd=args.noise_sd,
        n=args.n,
        d=args.d,
        seed=cfg.seed,
    )


def cmd_synth(args) -> int:
    cfg = build_config(args)
    ws = _ws(args)
    spec = _synth_spec(args, cfg)
    cat, labels = evaluate.generate_synthetic(spec)
    train_idx, test_idx = catalog.holdout_indices(cat.n, cfg.holdout, cfg.seed)
    outputs = _write_split(ws, cfg, cat, cat.transform, train_idx, test_idx)
    truth_path = ws / "catalog" / "truth.json"
    truth_path.write_text(
        json.dumps(
            {
                "generator": args.generator,
                "gap": args.gap,
                "noise_sd": args.noise_sd,
                "weights": [1.0 / len(spec.branches)] * len(spec.branches)
                if args.generator == "two-branch"
                else [1.0],
                "y_mean": cat.transform.y_mean,
                "y_sd": cat.transform.y_sd,
                "labels": labels.tolist(),
            },
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    outputs.append(truth_path)
    _update_manifest(ws, "synth", cfg, outputs)
    print(f"synth: {cat.n} rows ({args.generator}) -> {len(train_idx)} train / {len(test_idx)} test")
    return 0


def cmd_partition(args) -> int:
    cfg = build_config(args)
    ws = _ws(args)
    train = _read_train(ws)
    t0 = time.perf_counter()
    if cfg.mode == "balanced":
        part, graph = partition.partition_pipeline(
            train, cfg.n_min, cfg.n_max, m_per_dim=cfg.grid_spec(train.d)
        )
    else:
        m = cfg.grid_spec(train.d) or partition.default_grid(train.n, train.d, cfg.n_min, cfg.n_max)
        part = partition.equal_volume_partition(train, m)
        part.n_min, part.n_max = cfg.n_min, cfg.n_max
        graph = partition.build_graph(part)
    elapsed = time.perf_counter() - t0
    cells_path = ws / "partition" / "cells.json"
    members_path = ws / "partition" / "members.csv"
    partition.dump_partition(part, graph, cells_path, members_path)
    summary = partition.partition_summary(part)
    card = summary["cardinality"]
    print(
        f"partition[{cfg.mode}]: {summary['n_cells']} cells "
        f"({summary['n_nonempty']} nonempty, {summary['n_empty']} empty), "
        f"cardinality min/mean/max = {card['min']}/{card['mean']:.1f}/{card['max']}, "
        f"{elapsed:.2f}s"
    )
    summary_path = ws / "partition" / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _update_manifest(ws, "partition", cfg, [cells_path, members_path, summary_path])
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    ws = _ws(args)
    train = _read_train(ws)
    part, graph = partition.load_partition(
        ws / "partition" / "cells.json", ws / "partition" / "members.csv", train
    )
    t0 = time.perf_counter()
    sampler_cfg = SamplerConfig(eta=cfg.eta, seed=cfg.seed)
    model = ensemble.train_ensemble(
        train,
        part,
        graph,
        n_m=cfg.members,
        sampler_cfg=sampler_cfg,
        gp_opts=gp.FitOptions(seed=cfg.seed),
        n_jobs=cfg.threads,
    )
    elapsed = time.perf_counter() - t0
    ens_dir = ws / "ensemble"
    ensemble.save_ensemble(model, ens_dir)
    outputs = sorted(ens_dir.glob("member_*.json")) + [ens_dir / "manifest.json"]
    if args.trace:
        from .sampler import draw_subsample, member_config

        for i in range(cfg.members):
            draw = draw_subsample(part, graph, member_config(sampler_cfg, i), trace=True)
            trace_path = ens_dir / f"trace_{i:04d}.jsonl"
            trace_path.write_text(
                "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in draw.trace),
                encoding="utf-8",
            )
            outputs.append(trace_path)
    _update_manifest(ws, "train", cfg, outputs)
    print(f"train: {cfg.members} members on {part.n_cells} cells in {elapsed:.1f}s ({cfg.threads} worker(s))")
    return 0


def _read_queries(path: Path, d: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Read query rows x1..xd with an optional trailing y column."""
    import csv as _csv

    with path.open(newline="", encoding="utf-8") as fh:
        reader = _csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty query file") from None
        has_y = header[-1] == "y"
        want = d + 1 if has_y else d
        expected = [f"x{j + 1}" for j in range(d)] + (["y"] if has_y else [])
        if header != expected:
            raise ConfigError(
                f"{path}: header {header} does not match expected {expected} for d={d}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != want:
                raise ConfigError(f"{path}: row at line {lineno} has {len(row)} fields, expected {want}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DataError(f"{path}: non-numeric value at line {lineno}") from None
    if not rows:
        return np.empty((0, d)), (np.empty(0) if has_y else None)
    arr = np.asarray(rows, dtype=float)
    return (arr[:, :d], arr[:, d] if has_y else None)


def cmd_predict(args) -> int:
    cfg = build_config(args)
    ws = _ws(args)
    model = ensemble.load_ensemble(ws / "ensemble")
    d = model.members[0].X_train.shape[1]
    X, y_true = _read_queries(Path(args.queries), d)
    include_noise = cfg.variance == "noisy-y"
    out_path = Path(args.output) if args.output else ws / "predictions" / "predictions.csv"
    lines = ["id,y_true,median,q05,q95,hpd_intervals,pit"]
    if X.shape[0]:
        means, variances = ensemble.mixture_components(model, X, include_noise=include_noise)
        median = ensemble.quantile_batch(means, variances, 0.5)
        q05 = ensemble.quantile_batch(means, variances, 0.05)
        q95 = ensemble.quantile_batch(means, variances, 0.95)
        for i in range(X.shape[0]):
            mp = ensemble.MixturePredictive(means=means[i], variances=variances[i])
            hpd = ensemble.hpd_region(mp, 0.9)
            hpd_s = ";".join(f"{lo:.6g}:{hi:.6g}" for lo, hi in hpd)
            if y_true is not None:
                pit_i = float(ndtr((y_true[i] - means[i]) / np.sqrt(variances[i])).mean())
                lines.append(
                    f"{i},{y_true[i]:.9g},{median[i]:.9g},{q05[i]:.9g},{q95[i]:.9g},{hpd_s},{pit_i:.9g}"
                )
            else:
                lines.append(f"{i},,{median[i]:.9g},{q05[i]:.9g},{q95[i]:.9g},{hpd_s},")
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    outputs = [out_path]
    if args.density_grid and X.shape[0]:
        dens_path = out_path.with_name(out_path.stem + "_density.csv")
        g = int(args.density_grid)
        dens_lines = ["id,y,pdf"]
        for i in range(X.shape[0]):
            mp = ensemble.MixturePredictive(means=means[i], variances=variances[i])
            sd = np.sqrt(mp.variances)
            grid = np.linspace(float((mp.means - 8 * sd).min()), float((mp.means + 8 * sd).max()), g)
            pdf = ensemble.mixture_pdf(mp, grid)
            dens_lines.extend(f"{i},{gy:.9g},{py:.9g}" for gy, py in zip(grid, pdf))
        dens_path.write_text("\n".join(dens_lines) + "\n", encoding="utf-8")
        outputs.append(dens_path)
    _update_manifest(ws, "predict", cfg, outputs)
    print(f"predict: {X.shape[0]} queries -> {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = build_config(args)
    ws = _ws(args)
    model = ensemble.load_ensemble(ws / "ensemble")
    test = _read_test(ws)
    include_noise = cfg.variance == "noisy-y"

    means, variances = ensemble.mixture_components(model, test.X, include_noise=include_noise)
    wrapped = _PrecomputedComponents(means, variances)
    pit_res = evaluate.pit(wrapped, test)
    cov = {str(level): evaluate.coverage(wrapped, test, level) for level in COVERAGE_LEVELS}
    errs = evaluate.point_errors(wrapped, test)
    n_eval = min(cfg.eval_points, test.n)
    modes = evaluate.mode_count_batch(means[:n_eval], variances[:n_eval])
    mode_hist = np.bincount(modes, minlength=4)

    diag = {
        "pit_hist": pit_res.hist.tolist(),
        "chi2": pit_res.chi2_stat,
        "p_value": pit_res.p_value,
        "coverage_by_level": cov,
        "rmse_median": errs["rmse_median"],
        "mae_median": errs["mae_median"],
        "mode_count_hist": mode_hist.tolist(),
        "n_test": test.n,
        "n_mode_points": int(n_eval),
    }
    diag_path = ws / "diagnostics" / "diagnostics.json"
    diag_path.write_text(json.dumps(diag, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    pit_path = ws / "diagnostics" / "pit.csv"
    pit_path.write_text(
        "pit\n" + "\n".join(f"{v:.9g}" for v in pit_res.values) + "\n", encoding="utf-8"
    )
    median = ensemble.quantile_batch(means, variances, 0.5)
    q05 = ensemble.quantile_batch(means, variances, 0.05)
    q95 = ensemble.quantile_batch(means, variances, 0.95)
    scatter_path = ws / "diagnostics" / "scatter.csv"
    scatter_path.write_text(
        "y_true,median,q05,q95\n"
        + "\n".join(
            f"{test.y[i]:.9g},{median[i]:.9g},{q05[i]:.9g},{q95[i]:.9g}" for i in range(test.n)
        )
        + "\n",
        encoding="utf-8",
    )
    _update_manifest(ws, "evaluate", cfg, [diag_path, pit_path, scatter_path])
    print(
        f"evaluate: n={test.n}, PIT chi2={pit_res.chi2_stat:.2f} (p={pit_res.p_value:.4g}), "
        + ", ".join(f"coverage@{k}={v:.3f}" for k, v in cov.items())
    )
    return 0


class _PrecomputedComponents:
    """Adapter exposing already-computed mixture components to evaluate()."""

    def __init__(self, means: np.ndarray, variances: np.ndarray):
        self._means = means
        self._variances = variances

    def mixture_components(self, X):
        return self._means, self._variances


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workspace", required=True, help="workspace directory")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--seed", type=int, help="base RNG seed")
    p.add_argument("--threads", type=int, help="parallel workers for ensemble training")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-min", dest="n_min", type=int, help="minimum points per cell")
    p.add_argument("--n-max", dest="n_max", type=int, help="maximum points per cell")
    p.add_argument("--grid", help="'auto' or comma-separated per-dimension interval counts")
    p.add_argument("--eta", type=float, help="conditional-sampling kernel width")
    p.add_argument("--members", type=int, help="ensemble size")
    p.add_argument("--holdout", type=float, help="test fraction in (0,1)")
    p.add_argument("--mode", choices=["balanced", "equal-volume"], help="partitioning mode")
    p.add_argument(
        "--variance", choices=["noisy-y", "latent-z"], help="predictive variance convention"
    )
    p.add_argument("--eval-points", dest="eval_points", type=int, help="test points for mode counting")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subgp",
        description="Ensemble GP regression via balanced partitioning and graph-conditioned subsampling",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a raw magnitude catalog")
    p.add_argument("--input", required=True, help="raw CSV with header u,g,r,i,z,spec_z")
    p.add_argument("--clip-k", dest="clip_k", type=float, help="sigma clip for training rows (off by default)")
    p.add_argument(
        "--max-reject-rate",
        dest="max_reject_rate",
        type=float,
        help="abort when more than this fraction of rows fails to parse",
    )
    _add_common(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic catalog with known truth")
    p.add_argument("--generator", default="two-branch", choices=SYNTH_GENERATORS)
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--gap", type=float, default=3.0, help="raw offset between branches")
    p.add_argument("--noise-sd", dest="noise_sd", type=float, default=0.1)
    _add_common(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("partition", help="balanced (or equal-volume) partitioning of the training set")
    _add_common(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train", help="train the GP ensemble")
    p.add_argument(
        "--draws", dest="members", type=int, help="number of independent subsample draws (alias of --members)"
    )
    p.add_argument(
        "--trace", action="store_true", help="write per-member sampling traces (JSON lines)"
    )
    _add_common(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict at query points")
    p.add_argument("--queries", required=True, help="CSV with header x1..xd[,y]")
    p.add_argument("--output", help="output CSV (default workspace/predictions/predictions.csv)")
    p.add_argument("--density-grid", dest="density_grid", type=int, help="emit per-query density on a grid")
    _add_common(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="calibration and accuracy diagnostics on the test split")
    _add_common(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except SubgpError as exc:  # pragma: no cover - catch-all for subclasses
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
