"""Command-line entry point: decompose | train | evaluate | compare | count-params.

Exit codes: 0 success, 1 validation error, 2 runtime or numeric failure.
Set ``CRU_LOG`` (e.g. ``INFO`` or ``DEBUG``) for progress logging on stderr.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from cru import experiment as ex
from cru.cells import CellKind, closed_form_parameter_count, count_parameters
from cru.data import DataError, load_csv
from cru.linalg import ShapeError
from cru.metrics import summarize_trials
from cru.stl import StlConfig, StlError, stl_decompose
from cru.train import init_weights

log = logging.getLogger("cru")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
VALIDATION_ERRORS = (ex.ConfigError, DataError, StlError, ShapeError)


class RunFailed(RuntimeError):
    """A command ran but could not finish; partial output may exist."""


def _write(path: Path, text: str) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode("utf-8")
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def _overrides(cfg, args):
    if getattr(args, "out", None):
        cfg["out"] = args.out
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "workers", None):
        cfg["workers"] = args.workers
    return cfg


def _mape_key(args):
    return "mape_paper_literal" if getattr(args, "mape_paper_literal", False) else "mape"


# ---------------------------------------------------------------- decompose


def cmd_decompose(args) -> int:
    if args.config:
        cfg = ex.load_config(args.config)
        dataset = ex.load_dataset(cfg)
        stl = ex.stl_config(cfg, dataset)
    else:
        if not args.input:
            raise ex.ConfigError("decompose needs --input or --config")
        dataset = load_csv(args.input, args.columns, args.period or 12)
        stl = StlConfig(
            args.period or dataset.period,
            args.seasonal_span,
            args.trend_span,
            args.inner_iters,
            args.outer_iters,
            args.degree,
        )
    names = list(dataset.channels)
    single = len(names) == 1
    header, columns = [], []
    worst = 0.0
    for name in names:
        y = dataset.channels[name]
        comp = stl_decompose(y, stl)
        worst = max(worst, float(np.max(np.abs(comp.reconstruct() - y))))
        for part, values in (("original", y), ("trend", comp.trend),
                             ("seasonal", comp.seasonal), ("remainder", comp.remainder)):
            header.append(part if single else f"{name}_{part}")
            columns.append(values)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in zip(*columns):
        writer.writerow([repr(float(v)) for v in row])
    _write(Path(args.out), buf.getvalue())
    if args.verify:
        if worst > 1e-9:
            raise RunFailed(f"reconstruction error {worst:.3e} exceeds 1e-9")
        print(f"verified: max |T+S+R-Y| = {worst:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------- train/compare


def _trial_record(outcome, out_dir: Path, stem: str, prep, cfg) -> dict:
    rec = {
        "index": outcome.index,
        "seed": outcome.seed,
        "metrics": outcome.metrics.to_dict(),
        "loss_curve": [float(v) for v in outcome.loss_curve],
    }
    if out_dir is not None:
        ck = ex.checkpoint_dict(outcome.model, prep, outcome.seed, cfg)
        name = f"{stem}trial_{outcome.index:02d}.ckpt.json"
        rec["checkpoint"] = name
        rec["checkpoint_sha256"] = _write(out_dir / name, ex.dumps(ck))
    return rec


def _run_row(cfg, dataset, kind, horizon, out_dir, stem=""):
    """Train all trials of one (kind, horizon); returns (row, error message)."""
    decompose = ex.needs_decomposition(kind)
    prep = ex.prepare(cfg, dataset, horizon, decompose, stld_targets=kind in ex.STLD_KINDS)
    m = dataset.n_channels
    o = m * horizon
    row = {
        "kind": kind,
        "horizon": horizon,
        "parameter_count": ex.expected_parameter_count(kind, m, cfg["model"]["hidden"], o),
        "trials": [],
    }
    log.info("training %s h=%d: %d trials", kind, horizon, cfg["trials"])
    outcomes = ex.run_trials(cfg, kind, prep, ex.trial_seeds(cfg), cfg["workers"])
    error = None
    good = []
    for oc in outcomes:
        if oc.error is not None:
            error = error or oc.error
            row.setdefault("error", {"trial": oc.index, "message": oc.error})
            continue
        good.append(oc)
        row["trials"].append(_trial_record(oc, out_dir, stem, prep, cfg))
    if good:
        row["parameter_count"] = good[0].model.parameter_count
        summary = summarize_trials([oc.metrics for oc in good], [oc.seed for oc in good])
        row["summary"] = summary.to_dict()
    return row, error


def _report(command, cfg, dataset, rows, started) -> dict:
    report = {
        "schema": "cru-report",
        "schema_version": ex.REPORT_SCHEMA_VERSION,
        "command": command,
        "config": ex.config_echo(cfg),
        "dataset_sha256": ex.dataset_digest(dataset),
        "rows": rows,
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
    }
    return ex.validate_report(report)


def _loss_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "horizon", "trial", "epoch", "loss"])
    for row in rows:
        for t in row["trials"]:
            for e, v in enumerate(t["loss_curve"]):
                w.writerow([row["kind"], row["horizon"], t["index"], e, repr(v)])
    return buf.getvalue()


def cmd_train(args) -> int:
    cfg = _overrides(ex.load_config(args.config), args)
    started = time.perf_counter()
    dataset = ex.load_dataset(cfg)
    kind = ex.parse_kind(cfg["model"]["kind"])
    out_dir = Path(cfg["out"])
    row, error = _run_row(cfg, dataset, kind, cfg["window"]["horizon"], out_dir)
    report = _report("train", cfg, dataset, [row], started)
    _write(out_dir / "report.json", ex.dumps(report))
    _write(out_dir / "loss_curves.csv", _loss_csv([row]))
    if error:
        raise RunFailed(error)
    s = row["summary"]
    key = _mape_key(args)
    print(f"{kind} h={row['horizon']}: RMSE {s['cells']['rmse']}  "
          f"MAPE {s['cells'][key]}  params {row['parameter_count']}")
    print(f"report: {out_dir / 'report.json'}")
    return EXIT_OK


COMPARE_COLUMNS = [
    "kind", "horizon", "parameter_count", "rmse", "mape",
    "rmse_best", "mape_best", "rmse_mean", "rmse_std", "mape_mean", "mape_std", "error",
]


def _table(rows, key):
    out = []
    for row in rows:
        s = row.get("summary")
        rec = {"kind": row["kind"], "horizon": row["horizon"],
               "parameter_count": row.get("parameter_count", ""),
               "error": row.get("error", {}).get("message", "")}
        if s:
            rec.update(
                rmse=s["cells"]["rmse"], mape=s["cells"][key],
                rmse_best=repr(s["best"]["rmse"]), mape_best=repr(s["best"][key]),
                rmse_mean=repr(s["mean"]["rmse"]), rmse_std=repr(s["std"]["rmse"]),
                mape_mean=repr(s["mean"][key]), mape_std=repr(s["std"][key]),
            )
        out.append(rec)
    return out


def _pretty(table) -> str:
    heads = ["model", "h", "params", "RMSE avg (std)", "MAPE avg (std)", "RMSE best", "MAPE best"]
    cells = [heads]
    for rec in table:
        if not rec.get("rmse"):
            cells.append([rec["kind"], str(rec["horizon"]), "", f"failed: {rec['error']}", "", "", ""])
            continue
        cells.append([
            rec["kind"], str(rec["horizon"]), str(rec["parameter_count"]),
            rec["rmse"], rec["mape"],
            f"{float(rec['rmse_best']):.3f}", f"{float(rec['mape_best']):.3f}",
        ])
    widths = [max(len(r[i]) for r in cells) for i in range(len(heads))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in cells) + "\n"


def cmd_compare(args) -> int:
    cfg = _overrides(ex.load_config(args.config), args)
    kinds = [ex.parse_kind(k) for k in cfg.get("kinds", [])]
    if len(kinds) < 2:
        raise ex.ConfigError("compare needs a 'kinds' list with at least two entries")
    started = time.perf_counter()
    dataset = ex.load_dataset(cfg)
    out_dir = Path(cfg["out"])
    horizons = cfg.get("horizons") or [cfg["window"]["horizon"]]
    rows, failures = [], []
    for i, kind in enumerate(kinds):
        for horizon in horizons:
            stem = f"{i:02d}_{kind}_h{horizon}_"
            try:
                row, error = _run_row(cfg, dataset, kind, horizon, out_dir / "checkpoints", stem)
            except (*VALIDATION_ERRORS, ArithmeticError) as exc:
                row = {"kind": kind, "horizon": horizon, "trials": [],
                       "error": {"trial": -1, "message": str(exc)}}
                error = str(exc)
            if error:
                failures.append(f"{kind} h={horizon}: {error}")
                log.warning("row %s h=%d failed: %s", kind, horizon, error)
            rows.append(row)
    report = _report("compare", cfg, dataset, rows, started)
    _write(out_dir / "report.json", ex.dumps(report))
    table = _table(rows, _mape_key(args))
    buf = io.StringIO()
    w = csv.DictWriter(buf, COMPARE_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(table)
    _write(out_dir / "comparison.csv", buf.getvalue())
    text = _pretty(table)
    _write(out_dir / "comparison.txt", text)
    _write(out_dir / "loss_curves.csv", _loss_csv(rows))
    sys.stdout.write(text)
    if failures:
        raise RunFailed("; ".join(failures))
    return EXIT_OK


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(args) -> int:
    model, ck = ex.load_checkpoint(args.checkpoint)
    if args.horizon is not None and args.horizon != ck["horizon"]:
        raise ex.ConfigError(
            f"checkpoint was trained for horizon {ck['horizon']}, not {args.horizon}"
        )
    cfg = ex.load_config(args.config)
    dataset = ex.load_dataset(cfg)
    prep = ex.prepare_for_checkpoint(ck, dataset)
    metrics = ex.persistence_metrics(prep) if args.persistence else ex.evaluate_model(model, prep)
    out = {"model": "persistence" if args.persistence else ck["kind"],
           "horizon": ck["horizon"], **metrics.to_dict()}
    if args.mape_paper_literal:
        out["mape"] = out["mape_paper_literal"]
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- count-params


def cmd_count_params(args) -> int:
    m, H, o = args.m, args.hidden, args.out_dim
    if min(m, H, o) < 1:
        raise ex.ConfigError("dimensions must be positive")
    if args.all:
        kinds = [k.value for k in CellKind] + list(ex.STLD_KINDS)
    else:
        kinds = [ex.parse_kind(args.kind)]
    print(f"{'model':<10} {'params':>10}")
    for kind in kinds:
        if kind in ex.STLD_KINDS:
            n = ex.expected_parameter_count(kind, m, H, o)
        else:
            n = count_parameters(init_weights(kind, m, H, o, seed=0))
            assert n == closed_form_parameter_count(kind, m, H, o)
        print(f"{kind:<10} {n:>10}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cru", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("decompose", help="STL-decompose every channel of a CSV file")
    p.add_argument("--input", help="input CSV (header row, optional timestamp column)")
    p.add_argument("--config", help="take dataset and STL settings from a config file")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--columns", nargs="+")
    p.add_argument("--period", type=int)
    p.add_argument("--seasonal-span", type=int)
    p.add_argument("--trend-span", type=int)
    p.add_argument("--inner-iters", type=int, default=2)
    p.add_argument("--outer-iters", type=int, default=1)
    p.add_argument("--degree", type=int, default=1, choices=(0, 1))
    p.add_argument("--verify", action="store_true", help="check T+S+R == Y within 1e-9")
    p.set_defaults(func=cmd_decompose)

    for name, func, text in (
        ("train", cmd_train, "train one model kind over several seeds"),
        ("compare", cmd_compare, "train and tabulate several model kinds"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="base seed (overrides config)")
        p.add_argument("--workers", type=int, help="parallel trials")
        p.add_argument("--mape-paper-literal", action="store_true",
                       help="print the square-rooted MAPE variant")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="score a checkpoint on its test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True, help="config naming the dataset")
    p.add_argument("--horizon", type=int)
    p.add_argument("--persistence", action="store_true",
                   help="score the last-value baseline instead of the model")
    p.add_argument("--mape-paper-literal", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("count-params", help="learnable parameter counts")
    p.add_argument("--kind", default="CRU")
    p.add_argument("--m", type=int, default=1, help="input channels")
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--out-dim", type=int, default=1)
    p.add_argument("--all", action="store_true", help="all kinds plus STLD baselines")
    p.set_defaults(func=cmd_count_params)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("CRU_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RunFailed as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ArithmeticError, RuntimeError, FloatingPointError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
