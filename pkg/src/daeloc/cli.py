"""Command-line surface.

Each subcommand is a thin wrapper over one module operation; ``run``
composes the full pipeline and writes the complete artifact bundle. All
randomness flows from the mandatory ``--seed`` through documented child
seeds, so repeating a command with the same inputs reproduces its outputs
byte for byte. Flags win over values from ``--config``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from .data import write_csv
from .experiment import (RunConfig, load_dataset, load_scenario, load_split,
                         run_full, split_payload, write_run_artifacts)
from .learn import load_forest, save_forest
from .pipeline import (DEFAULT_SWEEP_FRACTIONS, build_dae_targets, check_partition,
                       evaluate, read_estimates_csv, repartition_sweep,
                       selection_curve, train_dae_model, train_position_model,
                       write_estimates_csv, write_selection_csv, write_summary_json,
                       write_sweep_csv)
from .rng import derive_seed
from .spatial import (cluster_report, kmeans, write_centers_csv,
                      write_cluster_report_csv, write_correlations_json)
from .synth import generate

_CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def parse_grid(text: str) -> tuple[float, ...]:
    """Parse ``lo:hi:step`` into an inclusive float grid."""
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise ValueError(f"expected lo:hi:step, got {text!r}") from None
    if step <= 0 or hi < lo:
        raise ValueError(f"invalid grid {text!r}: need step > 0 and hi >= lo")
    values = []
    v = lo
    while v <= hi + 1e-9:
        values.append(round(v, 10))
        v += step
    return tuple(values)


def parse_portions(text: str) -> tuple[float, ...]:
    """Portions as either ``lo:hi:step`` or a comma list, sorted ascending."""
    if ":" in text:
        return parse_grid(text)
    values = sorted({float(v) for v in text.split(",") if v.strip()})
    if not values:
        raise ValueError("empty portions list")
    return tuple(values)


def _build_config(args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    overrides = {k: v for k, v in vars(args).items() if k in _CONFIG_KEYS and v is not None}
    merged = {**raw, **overrides}
    if isinstance(merged.get("sweep"), str):
        merged["sweep"] = parse_grid(merged["sweep"])
    if isinstance(merged.get("portions"), str):
        merged["portions"] = parse_portions(merged["portions"])
    for key in ("fractions", "portions", "sweep"):
        if isinstance(merged.get(key), list):
            merged[key] = tuple(merged[key])
    return RunConfig(**merged)


def _add_source_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", help="fingerprint CSV path")
    p.add_argument("--schema", help="column-mapping config (JSON or key=value)")
    p.add_argument("--synth", help="synthetic scenario: 'default' or a JSON file")
    p.add_argument("--sentinel", type=float, help="RSS value marking 'not received' (default -200)")
    p.add_argument("--min-rx", dest="min_rx", type=int,
                   help="minimum receiving gateways per record (default 3)")
    p.add_argument("--config", help="JSON config file; explicit flags win")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trees", type=int, help="trees per forest (default 100)")
    p.add_argument("--jobs", type=int, help="parallel workers for tree growing (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="daeloc",
        description="RSS-fingerprint positioning with dynamic accuracy estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline: train, evaluate, select, cluster")
    _add_source_args(p)
    _add_model_args(p)
    p.add_argument("--seed", type=int, help="master seed (mandatory)")
    p.add_argument("--fraction-dae", "--fraction-m2", dest="fraction_dae", type=float,
                   help="share of the training pool for the accuracy model (default 0.5)")
    p.add_argument("--sweep", help="also run a repartition sweep over lo:hi:step")
    p.add_argument("--portions", help="selection portions: lo:hi:step or comma list")
    p.add_argument("--k", type=int, help="spatial cluster count (default 20)")
    p.add_argument("--out", help="output directory (default daeloc_out)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    p.add_argument("--scenario", default="default", help="'default' or a scenario JSON file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest-check", help="parse a dataset and report diagnostics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--schema")
    p.add_argument("--sentinel", type=float)
    p.add_argument("--min-rx", dest="min_rx", type=int)
    p.set_defaults(func=cmd_ingest_check)

    p = sub.add_parser("split", help="write the deterministic train/validation/test split")
    _add_source_args(p)
    p.add_argument("--seed", type=int, help="master seed (mandatory)")
    p.add_argument("--out", required=True, help="output split.json path")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the position and accuracy forests")
    _add_source_args(p)
    _add_model_args(p)
    p.add_argument("--seed", type=int, help="master seed (mandatory)")
    p.add_argument("--fraction-dae", "--fraction-m2", dest="fraction_dae", type=float)
    p.add_argument("--out", required=True, help="output directory for models and split.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate trained models on a held-out set")
    _add_source_args(p)
    p.add_argument("--models", required=True, help="directory written by 'train'")
    p.add_argument("--on", choices=("validation", "test"), default="validation")
    p.add_argument("--seed", type=int, help="only used when the source is --synth")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="repartition sweep of the training pool")
    _add_source_args(p)
    _add_model_args(p)
    p.add_argument("--seed", type=int, help="master seed (mandatory)")
    p.add_argument("--sweep", default="0.1:0.9:0.1", help="fraction grid lo:hi:step")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("select", help="selection curve from an estimates.csv")
    p.add_argument("--estimates", required=True)
    p.add_argument("--portions", help="lo:hi:step or comma list (default 0.05:1.0:0.05)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("cluster", help="k-means clusters and per-cluster statistics")
    _add_source_args(p)
    p.add_argument("--estimates", required=True, help="estimates.csv from 'eval' or 'run'")
    p.add_argument("--k", type=int, help="cluster count (default 20)")
    p.add_argument("--seed", type=int, help="master seed (mandatory)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("report", help="merge run artifacts into one plot-ready bundle")
    p.add_argument("--dir", required=True, help="directory holding run artifacts")
    p.set_defaults(func=cmd_report)

    return parser


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    result = run_full(cfg)
    written = write_run_artifacts(cfg, result)
    print(f"dataset: {result.data.dataset.n_records} records "
          f"({result.data.ingested_records} ingested, min_rx={cfg.min_rx})")
    print(f"validation: pos mean {result.val_summary.pos_mean:.1f} m, "
          f"median {result.val_summary.pos_median:.1f} m; "
          f"dae-err mean {result.val_summary.dae_err_mean:.1f} m, "
          f"median {result.val_summary.dae_err_median:.1f} m")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    # Same child-seed derivation as `run --synth`, so the written file equals
    # the dataset an equal-seed run generates internally.
    dataset = generate(scenario, derive_seed(args.seed, "synth"))
    write_csv(dataset, args.out)
    print(f"wrote {args.out}: {dataset.n_records} records, "
          f"{dataset.gateway_count} gateways")
    return 0


def cmd_ingest_check(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    if cfg.dataset is None:
        raise ValueError("--dataset is required")
    from .data import ingest
    from .experiment import load_schema

    result = ingest(cfg.dataset, load_schema(cfg))
    ds = result.dataset
    print(f"ingested {ds.n_records} records, {ds.gateway_count} gateways, "
          f"{result.n_rejected} rows rejected")
    for line_no, reason in result.rejected[:20]:
        print(f"  line {line_no}: {reason}")
    if result.n_rejected > 20:
        print(f"  ... {result.n_rejected - 20} more")
    if args.min_rx is not None:
        from .data import filter_min_gateways

        kept = filter_min_gateways(ds, args.min_rx).n_records
        print(f"min_rx={args.min_rx}: {kept} kept / {ds.n_records - kept} dropped")
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    cfg.validate()
    data = load_dataset(cfg)
    from .data import split as split_dataset

    parts = split_dataset(data.dataset, cfg.fractions, derive_seed(cfg.seed, "split"))
    write_summary_json(split_payload(parts, data.dataset), args.out)
    print(f"wrote {args.out}: pool {len(parts.train_pool)}, "
          f"validation {len(parts.validation)}, test {len(parts.test)}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    cfg.validate()
    data = load_dataset(cfg)
    dataset = data.dataset
    from .data import split as split_dataset

    parts = split_dataset(dataset, cfg.fractions, derive_seed(cfg.seed, "split"))
    parts = parts.with_repartition(cfg.fraction_dae, derive_seed(cfg.seed, "repartition"))
    check_partition(parts, dataset.n_records)
    params = cfg.forest_params()
    pos_model = train_position_model(dataset, parts.train_pos, params,
                                     derive_seed(cfg.seed, "forest-pos"), cfg.jobs)
    targets = build_dae_targets(pos_model, dataset, parts.train_dae, parts.train_pos)
    dae_model = train_dae_model(dataset, parts.train_dae, targets, params,
                                derive_seed(cfg.seed, "forest-dae"), cfg.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_summary_json(split_payload(parts, dataset), out / "split.json")
    save_forest(pos_model, out / "pos_model.npz")
    save_forest(dae_model, out / "dae_model.npz")
    print(f"wrote {out}/split.json, pos_model.npz, dae_model.npz")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    # The split is loaded from disk, so a seed is only needed to regenerate
    # a synthetic dataset.
    cfg.validate(require_seed=cfg.synth is not None)
    data = load_dataset(cfg)
    models = Path(args.models)
    parts = load_split(models / "split.json", data.dataset)
    pos_model = load_forest(models / "pos_model.npz")
    dae_model = load_forest(models / "dae_model.npz")
    eval_idx = parts.validation if args.on == "validation" else parts.test
    records, summary = evaluate(pos_model, dae_model, data.dataset, eval_idx)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_estimates_csv(records, out / "estimates.csv")
    write_summary_json({"set": args.on, "count": len(records), **summary.to_dict()},
                       out / "summary.json")
    print(f"{args.on}: pos mean {summary.pos_mean:.1f} m, median {summary.pos_median:.1f} m; "
          f"dae-err mean {summary.dae_err_mean:.1f} m, median {summary.dae_err_median:.1f} m")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    if cfg.sweep is None:
        cfg.sweep = DEFAULT_SWEEP_FRACTIONS
    cfg.validate()
    data = load_dataset(cfg)
    from .data import split as split_dataset

    parts = split_dataset(data.dataset, cfg.fractions, derive_seed(cfg.seed, "split"))
    rows = repartition_sweep(data.dataset, parts.train_pool, parts.validation,
                             cfg.sweep, cfg.forest_params(), cfg.seed, cfg.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out / "sweep.csv")
    print(f"wrote {out}/sweep.csv ({len(rows)} rows)")
    return 0


def cmd_select(args: argparse.Namespace) -> int:
    records = read_estimates_csv(args.estimates)
    portions = parse_portions(args.portions) if args.portions else None
    curve = selection_curve(records, portions) if portions else selection_curve(records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_selection_csv(curve, out / "selection.csv")
    print(f"wrote {out}/selection.csv ({len(curve.points)} portions)")
    return 0


def cmd_cluster(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    cfg.validate()
    data = load_dataset(cfg)
    records = read_estimates_csv(args.estimates)
    assignment = kmeans(data.dataset.lats, data.dataset.lons, cfg.k,
                        derive_seed(cfg.seed, "kmeans"))
    report = cluster_report(data.dataset, assignment, records,
                            seed=derive_seed(cfg.seed, "cluster-report"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_cluster_report_csv(report, out / "clusters.csv")
    write_centers_csv(assignment, out / "centers.csv")
    write_correlations_json(report, out / "correlations.json")
    print(f"wrote {out}/clusters.csv, centers.csv, correlations.json")
    return 0


def _read_table(path: Path) -> dict[str, list]:
    """CSV to a column-per-series mapping with numeric cells parsed."""
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        columns: dict[str, list] = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for name, cell in row.items():
                if cell == "":
                    columns[name].append(None)
                    continue
                try:
                    columns[name].append(float(cell))
                except ValueError:
                    columns[name].append(cell)
    return columns


def cmd_report(args: argparse.Namespace) -> int:
    directory = Path(args.dir)
    if not directory.is_dir():
        raise ValueError(f"not a directory: {directory}")
    bundle: dict = {}
    for name in ("summary.json", "manifest.json", "correlations.json"):
        path = directory / name
        if path.exists():
            bundle[name.removesuffix(".json")] = json.loads(path.read_text(encoding="utf-8"))
    for name in ("sweep.csv", "selection.csv", "clusters.csv", "centers.csv"):
        path = directory / name
        if path.exists():
            bundle[name.removesuffix(".csv")] = _read_table(path)
    if not bundle:
        raise ValueError(f"no run artifacts found in {directory}")
    out = directory / "report.json"
    write_summary_json(bundle, out)
    print(f"wrote {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
