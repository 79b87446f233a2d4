"""Command line entry point: ``lvtopo {generate,pipeline,eval,experiment}``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 pipeline
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from lvtopo import __version__
from lvtopo.config import build_config, config_document, load_config
from lvtopo.errors import ConfigError, DataError, LvtopoError, MeterSetMismatch
from lvtopo.metrics import aligned_accuracy, confusion_matrix, purity
from lvtopo.model import LabelSet, write_panel_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PIPELINE = 0, 1, 2, 3
MANIFEST_FORMAT = "lvtopo-dataset/1"


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _on_off(value: str) -> bool:
    v = value.lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on or off, got {value!r}")


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    from lvtopo.experiment import prepare_dataset

    overrides = {".seed": args.seed} if args.seed is not None else {}
    cfg = load_config(args.config, overrides)
    prep = prepare_dataset(cfg)
    data = prep.data
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    files = {
        "topology": "topology.json",
        "voltages": "voltages.csv",
        "feeder_labels": "feeder_labels.csv",
        "phase_labels": "phase_labels.csv",
        "switch_labels": "switch_labels.csv",
    }
    data.topology.save(out / files["topology"])
    write_panel_csv(prep.panel, out / files["voltages"])
    data.feeder_truth().save(out / files["feeder_labels"])
    data.phase_truth().save(out / files["phase_labels"])
    with open(out / files["switch_labels"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "label", "state"])
        if data.switch_labels is not None:
            bar = data.topology.switch_bars[0]
            for ts, lab in zip(prep.panel.timestamps(), data.switch_labels):
                w.writerow([ts.isoformat(), int(lab), "".join(map(str, bar.decode(int(lab))))])
    manifest = {
        "format": MANIFEST_FORMAT,
        "generator": f"lvtopo {__version__}",
        "seed": cfg.seed,
        "sub_seeds": prep.seeds,
        "config": config_document(cfg),
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(files)} files and manifest.json to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def cmd_pipeline(args) -> int:
    from lvtopo.pipeline import StageError, load_dataset, run_pipeline, write_outputs

    ds = load_dataset(args.manifest)
    overrides = {
        "selection.time_filter": args.time_filter,
        "pipeline.k": args.k,
        "pipeline.method": args.method,
        "pipeline.threads": args.threads,
        "selection.max_sm_per_feeder": args.max_sm,
    }
    if args.config is not None:
        cfg = load_config(args.config, overrides)
    else:
        # reuse the configuration recorded at generation time
        doc = ds.manifest.get("config", {})
        if "seed" not in doc and "seed" in ds.manifest:
            doc = {**doc, "seed": ds.manifest["seed"]}
        cfg = build_config(doc, "", overrides)
    recordings = LabelSet.load(args.recordings) if args.recordings else None
    out = Path(args.out)
    try:
        result = run_pipeline(ds, cfg, recordings)
    except StageError as exc:
        if exc.partial is not None:
            write_outputs(exc.partial, ds, out, failed_stage=exc.stage)
        print(f"error: {exc}", file=sys.stderr)
        print(f"partial outputs written to {out}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc.cause, DataError) else EXIT_PIPELINE
    write_outputs(result, ds, out)
    print("\n".join(result.report_lines()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    pred = LabelSet.load(args.predicted)
    truth = LabelSet.load(args.truth)
    try:
        c = confusion_matrix(pred, truth)
    except MeterSetMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(f"meters: {c.n}")
    print(f"purity: {purity(pred, truth):.4f}")
    print(f"accuracy (aligned): {aligned_accuracy(pred, truth):.4f}")
    print("confusion (rows predicted, columns truth):")
    sys.stdout.write(c.to_csv())
    if args.csv:
        Path(args.csv).write_text(c.to_csv())
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


def cmd_experiment(args) -> int:
    from lvtopo.experiment import load_experiment, run_experiment

    spec = load_experiment(args.spec)
    report = run_experiment(spec, threads=args.threads, heatmap_dir=args.emit_heatmap)
    if args.out:
        Path(args.out).write_text(report.to_csv())
    else:
        sys.stdout.write(report.to_csv())
    sys.stdout.write(report.summary())
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lvtopo", description="Low-voltage network topology correction "
                                            "from smart-meter voltages.")
    p.add_argument("--version", action="version", version=f"lvtopo {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--config", help="TOML config file (defaults when omitted)")
    g.add_argument("--seed", type=int, help="override the config seed")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("pipeline", help="run switch, feeder and phase identification")
    r.add_argument("manifest", help="dataset manifest.json")
    r.add_argument("--config", help="TOML config (defaults to the one in the manifest)")
    r.add_argument("--time-filter", type=_on_off, metavar="{on,off}")
    r.add_argument("--k", type=int, help="neighbours for assignment")
    r.add_argument("--method", choices=("auto", "cluster", "knn", "mfp"))
    r.add_argument("--recordings", help="LabelSet CSV of recorded feeder labels")
    r.add_argument("--max-sm", type=int, help="smart meters per feeder for switch ID")
    r.add_argument("--threads", type=int, help="worker threads")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_pipeline)

    e = sub.add_parser("eval", help="score predicted labels against truth")
    e.add_argument("predicted")
    e.add_argument("truth")
    e.add_argument("--csv", help="also write the confusion matrix here")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="run a seeded experiment sweep")
    x.add_argument("spec", help="experiment TOML file")
    x.add_argument("--out", help="CSV report path (stdout when omitted)")
    x.add_argument("--emit-heatmap", metavar="DIR", help="dump distance matrices here")
    x.add_argument("--threads", type=int, default=1)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LvtopoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
