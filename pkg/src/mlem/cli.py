"""Command-line interface.

Subcommands cover the full workflow: ``simulate`` writes synthetic
datasets with a planted metric, ``fit`` trains a model per split,
``importance`` computes permutation importance for a trained model,
``compare`` scores weight matrices and importance profiles against each
other or a planted ground truth, and ``univariate`` trains one model
per representation unit.  Every command is deterministic under a fixed
seed and writes machine-readable JSON plus flat CSV, with a rendered
figure beside each report.

Exit codes: 0 success, 2 invalid input, 3 degenerate data,
4 convergence failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, figures
from .data import (
    check_aligned,
    load_feature_table,
    load_representations,
    write_feature_csv,
    write_representations_binary,
)
from .errors import DegenerateDataError, InvalidInputError, MlemError
from .importance import (
    frobenius_distance,
    permutation_importance,
    weighted_tau,
)
from .io import atomic_write_json, atomic_write_text, load_json
from .model import MetricParams, VARIANTS, weights_from_payload, weights_payload
from .pairs import BatchSizeParams, pair_count, sample_pairs, select_batch_size, assemble_batch
from .softrank import SoftRankConfig
from .synth import SynthConfig, generate_dataset
from .training import (
    FoldResult,
    SplitSpec,
    TrainConfig,
    TrainTrace,
    TrainedModel,
    run_split,
    univariate_models,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DEGENERATE = 3
EXIT_NO_CONVERGENCE = 4

CONVERGENCE_FLOOR = 0.05

_STREAM_IMPORTANCE_PAIRS = 71


def _default_jobs() -> int:
    raw = os.environ.get("MLEM_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _mean_std(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(arr.mean()) if arr.size else None,
        "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
    }


def _fold_payload(result: FoldResult) -> dict:
    model = result.model
    return {
        "fold": result.fold,
        "n_train": int(len(result.train_indices)),
        "n_test": int(len(result.test_indices)),
        "test_spearman": result.test_spearman,
        "steps_to_converge": model.trace.steps_to_converge,
        "stop_reason": model.trace.stop_reason,
        "best_step": model.trace.best_step,
        "best_objective": model.trace.best_objective,
        "objectives": list(model.trace.objectives),
        "weights": weights_payload(model.variant, list(model.feature_names), model.W),
    }


def _add_fit_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--batch-size", default="auto",
                        help="pairs per step: 'auto' runs the stability search (default auto)")
    parser.add_argument("--softrank-eps", type=float, default=1.0,
                        help="soft rank regularization strength (default 1.0)")
    parser.add_argument("--learning-rate", type=float, default=0.1)
    parser.add_argument("--patience", type=int, default=50)
    parser.add_argument("--max-steps", type=int, default=1000)
    parser.add_argument("--eval-cap", type=int, default=200_000,
                        help="max held-out pairs scored exactly (default 200000)")
    parser.add_argument("--seed", type=int, default=0)


def _train_config(args, batch_size: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.learning_rate,
        patience=args.patience,
        max_steps=args.max_steps,
        batch_size=batch_size,
        softrank=SoftRankConfig(regularization=args.softrank_eps),
        seed=args.seed,
    )


def _resolve_batch_size(args, table) -> tuple[int, bool | None]:
    if args.batch_size == "auto":
        result = select_batch_size(
            table,
            BatchSizeParams(),
            np.random.default_rng(np.random.SeedSequence((args.seed, 81))),
        )
        if not result.met_threshold:
            print(
                f"warning: correlation stability threshold not met, using cap {result.size}",
                file=sys.stderr,
            )
        return result.size, result.met_threshold
    try:
        size = int(args.batch_size)
    except ValueError:
        raise InvalidInputError(
            f"--batch-size must be 'auto' or an integer, got {args.batch_size!r}"
        ) from None
    if size < 1:
        raise InvalidInputError("--batch-size must be positive")
    return size, None


def cmd_simulate(args) -> int:
    out = Path(args.out)
    for seed in range(args.seeds):
        config = SynthConfig(
            n=args.n,
            m=args.m,
            d=args.d,
            noise_level=args.noise,
            seed=seed,
            refine_iterations=args.refine,
        )
        dataset = generate_dataset(config)
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        write_feature_csv(dataset.table, seed_dir / "features.csv")
        write_representations_binary(dataset.reps, seed_dir / "reps.bin")
        atomic_write_json(
            seed_dir / "ground_truth.json",
            {
                "seed": seed,
                "n": config.n,
                "m": config.m,
                "d": config.d,
                "noise_level": config.noise_level,
                "refine_iterations": config.refine_iterations,
                "feature_names": dataset.table.feature_names,
                "W": [float(x) for x in dataset.ground_truth.W.reshape(-1)],
                "mds_max_rel_error": dataset.mds_info.max_rel_error,
                "mds_n_positive": dataset.mds_info.n_positive,
                "mds_dropped_negative_mass": dataset.mds_info.dropped_negative_mass,
                "mds_truncated": dataset.mds_info.truncated,
            },
        )
    print(f"wrote {args.seeds} dataset(s) under {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    table = load_feature_table(args.features)
    reps = load_representations(args.reps)
    check_aligned(table, reps)
    batch_size, met_threshold = _resolve_batch_size(args, table)
    config = _train_config(args, batch_size)
    split = SplitSpec(
        mode=args.split,
        train_fraction=args.train_fraction,
        folds=args.folds,
        seed=args.seed,
    )
    results = run_split(table, reps, args.variant, config, split, eval_cap=args.eval_cap)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for result in results:
        name = "model.json" if len(results) == 1 else f"model_fold{result.fold}.json"
        atomic_write_json(
            out / name,
            weights_payload(args.variant, table.feature_names, result.model.W),
        )
    report = {
        "command": "fit",
        "version": __version__,
        "config": {
            "features": str(args.features),
            "reps": str(args.reps),
            "variant": args.variant,
            "split": {
                "mode": split.mode,
                "train_fraction": split.train_fraction,
                "folds": split.folds if split.mode == "kfold" else None,
            },
            "batch_size_requested": args.batch_size,
            "batch_size": batch_size,
            "batch_size_met_threshold": met_threshold,
            "softrank_eps": args.softrank_eps,
            "learning_rate": args.learning_rate,
            "patience": args.patience,
            "max_steps": args.max_steps,
            "eval_cap": args.eval_cap,
            "seed": args.seed,
        },
        "folds": [_fold_payload(r) for r in results],
        "summary": {
            "test_spearman": _mean_std([r.test_spearman for r in results]),
            "steps_to_converge": _mean_std(
                [float(r.model.trace.steps_to_converge) for r in results]
            ),
        },
    }
    atomic_write_json(out / "report.json", report)
    figures.render_traces(
        out / "trace.png",
        [list(r.model.trace.objectives) for r in results],
        [f"fold {r.fold}" for r in results],
    )
    for result in results:
        print(
            f"fold {result.fold}: test spearman {result.test_spearman:.4f} "
            f"({result.model.trace.steps_to_converge} steps, {result.model.trace.stop_reason})"
        )
    failed = [
        r
        for r in results
        if r.model.trace.stop_reason == "max_steps"
        and (r.model.trace.best_objective or 0.0) < CONVERGENCE_FLOOR
    ]
    if failed:
        print(
            f"convergence failure on fold(s) {[r.fold for r in failed]}", file=sys.stderr
        )
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def _load_trained_model(path: str) -> TrainedModel:
    # Only the weight matrix matters for scoring; trace and config are
    # not part of the serialized weight schema.
    variant, names, W = weights_from_payload(load_json(path))
    return TrainedModel(
        variant=variant,
        feature_names=tuple(names),
        params=MetricParams(A=np.zeros_like(W), variant=variant),
        W=W,
        trace=TrainTrace((), (), 0, "max_steps", 0, None),
        config=TrainConfig(),
    )


def cmd_importance(args) -> int:
    model = _load_trained_model(args.model)
    table = load_feature_table(args.features)
    reps = load_representations(args.reps)
    check_aligned(table, reps)
    if list(model.feature_names) != table.feature_names:
        raise InvalidInputError(
            "model feature names do not match the feature table: "
            f"{list(model.feature_names)} vs {table.feature_names}"
        )
    rng = np.random.default_rng(
        np.random.SeedSequence((args.seed, _STREAM_IMPORTANCE_PAIRS))
    )
    pairs = sample_pairs(table.n, min(args.max_pairs, pair_count(table.n)), rng)
    batch = assemble_batch(table, reps, pairs)
    report = permutation_importance(
        model, batch, n_permutations=args.n_perm, seed=args.seed
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = sorted(report.entries, key=lambda e: e.importance, reverse=True)
    stds = {
        e.name: float(np.std(e.per_permutation_scores, ddof=1))
        if len(e.per_permutation_scores) > 1
        else 0.0
        for e in report.entries
    }
    atomic_write_json(
        out / "importance.json",
        {
            "command": "importance",
            "version": __version__,
            "config": {
                "model": str(args.model),
                "features": str(args.features),
                "reps": str(args.reps),
                "n_perm": args.n_perm,
                "max_pairs": args.max_pairs,
                "seed": args.seed,
            },
            "baseline_score": report.baseline_score,
            "n_pairs": report.n_pairs,
            "entries": [
                {
                    "name": e.name,
                    "feature_k": e.feature_k,
                    "feature_l": e.feature_l,
                    "importance": e.importance,
                    "std": stds[e.name],
                    "per_permutation_scores": list(e.per_permutation_scores),
                }
                for e in report.entries
            ],
        },
    )
    lines = ["name,importance,std"]
    for e in entries:
        lines.append(f"{e.name},{e.importance!r},{stds[e.name]!r}")
    atomic_write_text(out / "importance.csv", "\n".join(lines) + "\n")
    figures.render_importance(
        out / "importance.png",
        [e.name for e in entries],
        [e.importance for e in entries],
        [stds[e.name] for e in entries],
    )
    print(
        f"baseline spearman {report.baseline_score:.4f} over {report.n_pairs} pairs; "
        f"top entry {entries[0].name} ({entries[0].importance:.4f})"
    )
    return EXIT_OK


def _extract_side(paths: list[str]) -> dict:
    """Pull weight matrices, steps, and importance profiles from report files."""
    weights: list[np.ndarray] = []
    names: list[list[str]] = []
    steps: list[int] = []
    profiles: list[dict[str, float]] = []
    for path in paths:
        payload = load_json(path)
        if "entries" in payload:
            profiles.append({e["name"]: e["importance"] for e in payload["entries"]})
            continue
        if "folds" in payload:
            for fold in payload["folds"]:
                _, n, W = weights_from_payload(fold["weights"])
                weights.append(W)
                names.append(n)
                steps.append(int(fold["steps_to_converge"]))
            continue
        if "variant" in payload:
            _, n, W = weights_from_payload(payload)
            weights.append(W)
            names.append(n)
            continue
        if "W" in payload and "feature_names" in payload:
            n = [str(x) for x in payload["feature_names"]]
            W = np.asarray(payload["W"], dtype=np.float64).reshape(len(n), len(n))
            weights.append(W)
            names.append(n)
            continue
        raise InvalidInputError(f"{path}: unrecognized report format")
    return {"weights": weights, "names": names, "steps": steps, "profiles": profiles}


def _ground_truth_weights(paths: list[str]) -> list[np.ndarray]:
    out = []
    for path in paths:
        payload = load_json(path)
        if "W" not in payload or "feature_names" not in payload:
            raise InvalidInputError(f"{path}: not a weight-bearing file")
        n = len(payload["feature_names"])
        out.append(np.asarray(payload["W"], dtype=np.float64).reshape(n, n))
    return out


def cmd_compare(args) -> int:
    side_a = _extract_side(args.a)
    side_b = _extract_side(args.b)
    report: dict = {
        "command": "compare",
        "version": __version__,
        "config": {
            "a": [str(p) for p in args.a],
            "b": [str(p) for p in args.b],
            "ground_truth": [str(p) for p in args.ground_truth] if args.ground_truth else None,
        },
    }

    pairwise = None
    if side_a["weights"] and side_b["weights"]:
        if len(side_a["weights"]) != len(side_b["weights"]):
            raise InvalidInputError(
                f"side A has {len(side_a['weights'])} weight matrices, "
                f"side B has {len(side_b['weights'])}"
            )
        values = [
            frobenius_distance(wa, wb)
            for wa, wb in zip(side_a["weights"], side_b["weights"])
        ]
        pairwise = {"frobenius": values, **_mean_std(values)}
    report["pairwise"] = pairwise

    if args.ground_truth:
        gts = _ground_truth_weights(args.ground_truth)
        for label, side in (("a", side_a), ("b", side_b)):
            if not side["weights"]:
                report[f"frobenius_to_ground_truth_{label}"] = None
                continue
            if len(gts) not in (1, len(side["weights"])):
                raise InvalidInputError(
                    "ground truth count must be 1 or match the model count"
                )
            values = [
                frobenius_distance(w, gts[i % len(gts)] if len(gts) > 1 else gts[0])
                for i, w in enumerate(side["weights"])
            ]
            report[f"frobenius_to_ground_truth_{label}"] = {
                "values": values,
                **_mean_std(values),
            }

    taus = None
    if side_a["profiles"] and side_b["profiles"]:
        if len(side_a["profiles"]) != len(side_b["profiles"]):
            raise InvalidInputError("importance profile counts differ between sides")
        values = []
        for pa, pb in zip(side_a["profiles"], side_b["profiles"]):
            if set(pa) != set(pb):
                raise InvalidInputError("importance profiles name different entries")
            keys = sorted(pa)
            values.append(
                weighted_tau(
                    np.array([pa[k] for k in keys]), np.array([pb[k] for k in keys])
                )
            )
        taus = {"values": values, **_mean_std(values)}
    report["weighted_tau_importance"] = taus

    for label, side in (("a", side_a), ("b", side_b)):
        report[f"steps_{label}"] = (
            {"values": side["steps"], **_mean_std([float(s) for s in side["steps"]])}
            if side["steps"]
            else None
        )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_json(out / "comparison.json", report)

    series: dict[str, list[float]] = {}
    labels: list[str] = []
    if args.ground_truth and side_a["weights"] and side_b["weights"]:
        labels = [f"item {i}" for i in range(len(side_a["weights"]))]
        series["A to truth"] = report["frobenius_to_ground_truth_a"]["values"]
        series["B to truth"] = report["frobenius_to_ground_truth_b"]["values"]
    elif pairwise:
        labels = [f"item {i}" for i in range(len(pairwise["frobenius"]))]
        series["A vs B"] = pairwise["frobenius"]
    if series:
        figures.render_comparison(out / "comparison.png", labels, series)
    if pairwise:
        print(f"pairwise frobenius mean {pairwise['mean']:.4f}")
    if taus:
        print(f"importance weighted tau mean {taus['mean']:.4f}")
    return EXIT_OK


def _parse_units(value: str, d: int) -> list[int]:
    if value == "all":
        return list(range(d))
    try:
        units = [int(x) for x in value.split(",") if x.strip() != ""]
    except ValueError:
        raise InvalidInputError(f"--units must be 'all' or a comma list, got {value!r}") from None
    for u in units:
        if not 0 <= u < d:
            raise InvalidInputError(f"unit {u} out of range for d={d}")
    return units


def cmd_univariate(args) -> int:
    table = load_feature_table(args.features)
    reps = load_representations(args.reps)
    check_aligned(table, reps)
    units = _parse_units(args.units, reps.d)
    batch_size, _ = _resolve_batch_size(args, table)
    config = _train_config(args, batch_size)
    split = SplitSpec(
        mode="holdout", train_fraction=args.train_fraction, seed=args.seed
    )
    multivariate = run_split(table, reps, "mlem", config, split, eval_cap=args.eval_cap)[0]
    jobs = args.jobs

    def train_unit(unit: int):
        return univariate_models(table, reps, [unit], config, split, eval_cap=args.eval_cap)[unit]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            unit_results = list(pool.map(train_unit, units))
    else:
        unit_results = [train_unit(u) for u in units]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        {
            "unit": unit,
            "test_spearman": result.test_spearman,
            "steps_to_converge": result.model.trace.steps_to_converge,
            "stop_reason": result.model.trace.stop_reason,
        }
        for unit, result in zip(units, unit_results)
    ]
    atomic_write_json(
        out / "univariate.json",
        {
            "command": "univariate",
            "version": __version__,
            "config": {
                "features": str(args.features),
                "reps": str(args.reps),
                "units": args.units,
                "batch_size": batch_size,
                "softrank_eps": args.softrank_eps,
                "learning_rate": args.learning_rate,
                "patience": args.patience,
                "max_steps": args.max_steps,
                "train_fraction": args.train_fraction,
                "eval_cap": args.eval_cap,
                "seed": args.seed,
            },
            "multivariate": {
                "test_spearman": multivariate.test_spearman,
                "steps_to_converge": multivariate.model.trace.steps_to_converge,
                "stop_reason": multivariate.model.trace.stop_reason,
            },
            "units": rows,
        },
    )
    lines = ["unit,test_spearman"]
    for row in rows:
        lines.append(f"{row['unit']},{row['test_spearman']!r}")
    atomic_write_text(out / "univariate.csv", "\n".join(lines) + "\n")
    figures.render_univariate(
        out / "univariate.png",
        [row["test_spearman"] for row in rows],
        multivariate.test_spearman,
    )
    best = max(rows, key=lambda r: r["test_spearman"])
    print(
        f"multivariate spearman {multivariate.test_spearman:.4f}; "
        f"best unit {best['unit']} at {best['test_spearman']:.4f} over {len(rows)} unit(s)"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlem",
        description="Learn a feature-space metric matching neural representation geometry.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate synthetic datasets with a planted metric")
    sim.add_argument("--n", type=int, default=256, help="stimuli per dataset (default 256)")
    sim.add_argument("--m", type=int, default=16, help="binary features (default 16)")
    sim.add_argument("--d", type=int, default=768, help="embedding dimension (default 768)")
    sim.add_argument("--noise", type=float, default=0.0, help="noise level (default 0)")
    sim.add_argument("--seeds", type=int, default=5, help="number of datasets (default 5)")
    sim.add_argument("--refine", type=int, default=0,
                     help="stress-refinement iterations for the embedding (default 0)")
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="train a metric model")
    fit.add_argument("--features", required=True)
    fit.add_argument("--reps", required=True)
    fit.add_argument("--variant", choices=list(VARIANTS), default="mlem")
    fit.add_argument("--split", choices=["holdout", "kfold"], default="holdout")
    fit.add_argument("--train-fraction", type=float, default=0.8)
    fit.add_argument("--folds", type=int, default=5)
    _add_fit_options(fit)
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=cmd_fit)

    imp = sub.add_parser("importance", help="permutation importance for a trained model")
    imp.add_argument("--model", required=True)
    imp.add_argument("--features", required=True)
    imp.add_argument("--reps", required=True)
    imp.add_argument("--n-perm", type=int, default=10)
    imp.add_argument("--max-pairs", type=int, default=20_000)
    imp.add_argument("--seed", type=int, default=0)
    imp.add_argument("--out", required=True)
    imp.set_defaults(func=cmd_importance)

    cmp_ = sub.add_parser("compare", help="compare weights and importance profiles")
    cmp_.add_argument("--a", nargs="+", required=True, help="side A files")
    cmp_.add_argument("--b", nargs="+", required=True, help="side B files")
    cmp_.add_argument("--ground-truth", nargs="+", default=None)
    cmp_.add_argument("--out", required=True)
    cmp_.set_defaults(func=cmd_compare)

    uni = sub.add_parser("univariate", help="one model per representation unit")
    uni.add_argument("--features", required=True)
    uni.add_argument("--reps", required=True)
    uni.add_argument("--units", default="all", help="'all' or comma list of unit indices")
    uni.add_argument("--train-fraction", type=float, default=0.8)
    uni.add_argument("--jobs", type=int, default=_default_jobs(),
                     help="parallel unit fits (default MLEM_JOBS or 1)")
    _add_fit_options(uni)
    uni.add_argument("--out", required=True)
    uni.set_defaults(func=cmd_univariate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DegenerateDataError as exc:
        print(f"degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except MlemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
