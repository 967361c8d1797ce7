"""Experiment configuration, trial execution, checkpoints and reports.

A config is a JSON document with a required ``version`` field. The same
prediction path serves training-time evaluation and the ``evaluate``
command, so both produce identical metrics for one checkpoint.
"""

import copy
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from cru.cells import CellKind, CellParams, closed_form_parameter_count, count_parameters
from cru.data import (
    DataError,
    Dataset,
    Scaler,
    WindowSpec,
    chrono_split,
    decompose_window,
    load_csv,
    make_windows,
    synth_series,
)
from cru.metrics import MetricResult, evaluate, summarize_trials
from cru.stl import StlConfig
from cru.train import Sample, TrainingDiverged, forward_sequence, stack_samples, train

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
REPORT_SCHEMA_VERSION = 1
CHECKPOINT_VERSION = 1

STLD_KINDS = ("RNN_STLD", "LSTM_STLD", "GRU_STLD")


class ConfigError(ValueError):
    """The experiment config is malformed or refers to missing files."""


_positive = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["version", "dataset"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "dataset": {
            "type": "object",
            "oneOf": [{"required": ["csv"]}, {"required": ["synth"]}],
            "properties": {
                "csv": {"type": "string"},
                "columns": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "period": {"type": "integer", "minimum": 2},
                "name": {"type": "string"},
                "synth": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["trend+season+noise", "random-walk", "constant"]},
                        "length": _positive,
                        "seed": {"type": "integer"},
                        "params": {"type": "object"},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "model": {
            "type": "object",
            "properties": {
                "kind": {"type": "string"},
                "hidden": _positive,
                "lambda": {"type": "number", "minimum": 0, "maximum": 1},
            },
            "additionalProperties": False,
        },
        "kinds": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "window": {
            "type": "object",
            "properties": {"lookback": _positive, "horizon": _positive, "stride": _positive},
            "additionalProperties": False,
        },
        "horizons": {"type": "array", "items": _positive, "minItems": 1},
        "stl": {
            "type": "object",
            "properties": {
                "period": {"type": "integer", "minimum": 2},
                "seasonal_span": {"type": "integer", "minimum": 3},
                "trend_span": {"type": "integer", "minimum": 3},
                "inner_iters": _positive,
                "outer_iters": {"type": "integer", "minimum": 0},
                "loess_degree": {"enum": [0, 1]},
            },
            "additionalProperties": False,
        },
        "optimizer": {
            "type": "object",
            "properties": {
                "name": {"enum": ["adam", "sgd"]},
                "lr": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "epochs": {"type": "integer", "minimum": 0},
        "trials": _positive,
        "seed": {"type": "integer"},
        "scaler": {"enum": ["zscore", "minmax", "none"]},
        "split": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "batch_size": {"type": ["integer", "null"], "minimum": 1},
        "clip_norm": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "workers": _positive,
        "out": {"type": "string"},
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "model": {"kind": "CRU", "hidden": 16, "lambda": 0.5},
    "window": {"lookback": 24, "horizon": 1, "stride": 1},
    "optimizer": {"name": "adam", "lr": 1e-3},
    "epochs": 200,
    "trials": 5,
    "seed": 0,
    "scaler": "zscore",
    "split": 0.7,
    "batch_size": None,
    "clip_norm": 5.0,
    "workers": 1,
    "out": "runs",
}

_metric = {"type": "number", "minimum": 0}
REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema", "schema_version", "command", "config", "rows", "wall_clock_seconds"],
    "properties": {
        "schema": {"const": "cru-report"},
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "command": {"enum": ["train", "compare"]},
        "config": {"type": "object"},
        "dataset_sha256": {"type": "string"},
        "wall_clock_seconds": {"type": "number", "minimum": 0},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "horizon", "trials"],
                "properties": {
                    "kind": {"type": "string"},
                    "horizon": _positive,
                    "parameter_count": {"type": "integer", "minimum": 0},
                    "error": {"type": "object"},
                    "summary": {"type": "object"},
                    "trials": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["index", "seed", "metrics", "loss_curve"],
                            "properties": {
                                "index": {"type": "integer", "minimum": 0},
                                "seed": {"type": "integer"},
                                "metrics": {
                                    "type": "object",
                                    "required": ["rmse", "mape", "mape_paper_literal", "n_points"],
                                    "properties": {
                                        "rmse": _metric,
                                        "mape": _metric,
                                        "mape_paper_literal": _metric,
                                        "n_points": {"type": "integer", "minimum": 1},
                                    },
                                },
                                "loss_curve": {"type": "array", "items": {"type": "number"}},
                                "checkpoint": {"type": "string"},
                                "checkpoint_sha256": {"type": "string"},
                            },
                        },
                    },
                },
            },
        },
    },
}


# ---------------------------------------------------------------- config


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return validate_config(raw, base_dir=path.parent)


def validate_config(raw: dict, base_dir=".") -> dict:
    """Check a config against the schema, fill defaults, resolve paths."""
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    ds = cfg["dataset"]
    if "csv" in ds:
        csv_path = Path(ds["csv"])
        if not csv_path.is_absolute():
            csv_path = Path(base_dir) / csv_path
        if not csv_path.exists():
            raise ConfigError(f"dataset file not found: {csv_path}")
        ds["csv"] = str(csv_path)
    kinds = cfg.get("kinds") or [cfg["model"]["kind"]]
    for k in kinds:
        parse_kind(k)
    parse_kind(cfg["model"]["kind"])
    return cfg


def parse_kind(name: str) -> str:
    key = str(name).upper().replace("-", "_")
    if key in STLD_KINDS:
        return key
    try:
        return CellKind.parse(key).value
    except ValueError:
        raise ConfigError(f"unknown model kind {name!r}") from None


def needs_decomposition(kind: str) -> bool:
    return kind in STLD_KINDS or CellKind.parse(kind).decomposed


def load_dataset(cfg: dict) -> Dataset:
    ds = cfg["dataset"]
    if "csv" in ds:
        return load_csv(ds["csv"], ds.get("columns"), ds.get("period", 12), ds.get("name"))
    syn = ds["synth"]
    params = dict(syn.get("params", {}))
    if "period" in ds:
        params.setdefault("period", ds["period"])
    return synth_series(syn["kind"], params, syn.get("seed", 0), syn.get("length", 360))


def stl_config(cfg: dict, dataset: Dataset) -> StlConfig:
    opts = dict(cfg.get("stl", {}))
    opts.setdefault("period", dataset.period)
    return StlConfig(**opts)


def dataset_digest(d: Dataset) -> str:
    h = hashlib.sha256()
    for name, values in d.channels.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(values).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- data prep


@dataclass
class Split:
    """Normalised windows of one data split, with optional decompositions."""

    raw: Sample
    decomposed: Sample | None = None
    targets_decomposed: np.ndarray | None = None  # (N, 3, h*m), STLD only


def prepare_split(values: np.ndarray, scaler: Scaler, spec: WindowSpec,
                  stl: StlConfig | None, with_targets: bool = False) -> Split:
    norm = scaler.normalize(values)
    windows = make_windows(norm, spec)
    raw = stack_samples(windows)
    if stl is None:
        return Split(raw)
    if spec.lookback < 2 * stl.period:
        raise DataError(
            f"lookback {spec.lookback} is shorter than two STL periods ({2 * stl.period})"
        )
    dec = np.stack([decompose_window(w.inputs, stl) for w in windows])
    split = Split(raw, Sample(raw.inputs, raw.target, dec))
    if with_targets:
        L, h = spec.lookback, spec.horizon
        comps = []
        for k in range(len(windows)):
            i = k * spec.stride
            full = decompose_window(norm[i : i + L + h], stl)  # (L+h, 3, m)
            comps.append(full[L:].transpose(1, 0, 2).reshape(3, -1))
        split.targets_decomposed = np.stack(comps)
    return split


@dataclass
class Prepared:
    dataset: Dataset
    scaler: Scaler
    spec: WindowSpec
    stl: StlConfig | None
    train: Split
    test: Split


def prepare(cfg: dict, dataset: Dataset, horizon: int, decompose: bool,
            stld_targets: bool = False) -> Prepared:
    w = cfg["window"]
    spec = WindowSpec(w["lookback"], horizon, w.get("stride", 1))
    train_d, test_d = chrono_split(dataset, cfg["split"], min_rows=spec.span)
    scaler = Scaler.fit(train_d.values, cfg["scaler"])
    stl = stl_config(cfg, dataset) if decompose else None
    return Prepared(
        dataset, scaler, spec, stl,
        prepare_split(train_d.values, scaler, spec, stl, stld_targets),
        prepare_split(test_d.values, scaler, spec, stl),
    )


# ---------------------------------------------------------------- models


@dataclass
class Model:
    """A trained forecaster: one cell, or three summed baselines (STLD)."""

    kind: str
    networks: list  # of CellParams

    @property
    def parameter_count(self) -> int:
        return sum(count_parameters(p) for p in self.networks)

    def predict(self, split: Split) -> np.ndarray:
        """Normalised predictions, ``(N, h*m)``."""
        if self.kind in STLD_KINDS:
            dec = split.decomposed.decomposed
            total = 0.0
            for c, p in enumerate(self.networks):
                comp = Sample(dec[:, :, c], split.raw.target)
                total = total + forward_sequence(p, comp)[0]
            return total
        p = self.networks[0]
        sample = split.decomposed if p.kind.decomposed else split.raw
        return forward_sequence(p, sample)[0]


def expected_parameter_count(kind: str, m: int, H: int, o: int) -> int:
    if kind in STLD_KINDS:
        return 3 * closed_form_parameter_count(kind.split("_")[0], m, H, o)
    return closed_form_parameter_count(kind, m, H, o)


def fit_model(cfg: dict, kind: str, prep: Prepared, seed: int):
    """Train one model; returns ``(model, loss_curve)``."""
    opts = dict(
        epochs=cfg["epochs"],
        seed=seed,
        hidden=cfg["model"]["hidden"],
        lam=cfg["model"]["lambda"],
        optimizer=cfg["optimizer"]["name"],
        learning_rate=cfg["optimizer"]["lr"],
        batch_size=cfg["batch_size"],
        clip_norm=cfg["clip_norm"],
    )
    if kind in STLD_KINDS:
        base = kind.split("_")[0]
        dec = prep.train.decomposed.decomposed
        targets = prep.train.targets_decomposed
        nets, curves = [], []
        for c in range(3):
            comp = Sample(dec[:, :, c], targets[:, c])
            result = train(base, comp, **{**opts, "seed": seed * 3 + c})
            nets.append(result.params)
            curves.append(result.loss_curve)
        # summed component losses per epoch
        return Model(kind, nets), [float(sum(v)) for v in zip(*curves)]
    cell = CellKind.parse(kind)
    data = prep.train.decomposed if cell.decomposed else prep.train.raw
    result = train(cell, data, **opts)
    return Model(kind, [result.params]), result.loss_curve


def eval_matrices(prep: Prepared, pred_norm: np.ndarray):
    """Original-scale truth and prediction, shaped ``(channels, points)``."""
    m = prep.dataset.n_channels
    truth = prep.scaler.denormalize(prep.test.raw.target.reshape(-1, m))
    pred = prep.scaler.denormalize(np.asarray(pred_norm).reshape(-1, m))
    return truth.T, pred.T


def evaluate_model(model: Model, prep: Prepared) -> MetricResult:
    Y, Y_hat = eval_matrices(prep, model.predict(prep.test))
    return evaluate(Y, Y_hat)


def persistence_metrics(prep: Prepared) -> MetricResult:
    """Metrics of the last-value forecast on the test windows."""
    last = prep.test.raw.inputs[:, -1, :]  # (N, m), normalised
    pred = np.tile(last, (1, prep.spec.horizon))
    Y, Y_hat = eval_matrices(prep, pred)
    return evaluate(Y, Y_hat)


# ---------------------------------------------------------------- checkpoints


def checkpoint_dict(model: Model, prep: Prepared, seed: int, cfg: dict) -> dict:
    first = model.networks[0]
    return {
        "format": "cru-checkpoint",
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "input_dim": prep.dataset.n_channels,
        "hidden_dim": first.hidden_dim,
        "output_dim": first.output_dim,
        "lambda": first.lam,
        "seed": seed,
        "lookback": prep.spec.lookback,
        "horizon": prep.spec.horizon,
        "stride": prep.spec.stride,
        "split": cfg["split"],
        "scaler": prep.scaler.to_dict(),
        "stl": None if prep.stl is None else prep.stl.to_dict(),
        "networks": [
            {
                "kind": p.kind.value,
                "order": [[name, list(shape)] for name, shape in p.layout()],
                "params": p.flat().tolist(),
            }
            for p in model.networks
        ],
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    ck = json.loads(path.read_text(encoding="utf-8"))
    if ck.get("format") != "cru-checkpoint" or ck.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path} is not a version {CHECKPOINT_VERSION} checkpoint")
    nets = []
    for net in ck["networks"]:
        p = CellParams.zeros(net["kind"], ck["input_dim"], ck["hidden_dim"],
                             ck["output_dim"], ck["lambda"])
        if [[n, list(s)] for n, s in p.layout()] != net["order"]:
            raise ConfigError(f"{path}: parameter order does not match {net['kind']}")
        nets.append(p.with_flat(net["params"]))
    return Model(ck["kind"], nets), ck


def prepare_for_checkpoint(ck: dict, dataset: Dataset) -> Prepared:
    if dataset.n_channels != ck["input_dim"]:
        raise ConfigError(
            f"checkpoint expects {ck['input_dim']} channels, dataset has {dataset.n_channels}"
        )
    spec = WindowSpec(ck["lookback"], ck["horizon"], ck.get("stride", 1))
    _, test_d = chrono_split(dataset, ck["split"], min_rows=spec.span)
    scaler = Scaler.from_dict(ck["scaler"])
    stl = None if ck["stl"] is None else StlConfig(**ck["stl"])
    test = prepare_split(test_d.values, scaler, spec, stl)
    return Prepared(dataset, scaler, spec, stl, None, test)


# ---------------------------------------------------------------- trials


@dataclass
class TrialOutcome:
    index: int
    seed: int
    model: Model | None
    metrics: MetricResult | None
    loss_curve: list
    error: str | None = None


def run_trial(cfg, kind, prep, index, seed) -> TrialOutcome:
    try:
        model, curve = fit_model(cfg, kind, prep, seed)
    except TrainingDiverged as exc:
        return TrialOutcome(index, seed, None, None, [], f"trial {index}: {exc}")
    return TrialOutcome(index, seed, model, evaluate_model(model, prep), curve)


def _trial_job(args):
    return run_trial(*args)


def run_trials(cfg, kind, prep, seeds, workers=1) -> list:
    jobs = [(cfg, kind, prep, i, s) for i, s in enumerate(seeds)]
    if workers <= 1 or len(jobs) == 1:
        return [_trial_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order, so output ignores scheduling
        return list(pool.map(_trial_job, jobs))


def trial_seeds(cfg) -> list:
    return [cfg["seed"] + i for i in range(cfg["trials"])]


def validate_report(report: dict) -> dict:
    jsonschema.validate(report, REPORT_SCHEMA)
    return report


def read_report(path) -> dict:
    return validate_report(json.loads(Path(path).read_text(encoding="utf-8")))


def config_echo(cfg: dict) -> dict:
    return json.loads(json.dumps(cfg))
