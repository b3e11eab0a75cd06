"""End-to-end pipeline driven by one JSON config document.

Stages: data (generate or load, window, balance, standardize) -> optional
tuning -> training -> evaluation -> artifacts. Every seed used anywhere is
derived from the config's top-level ``seed``.
"""

from __future__ import annotations

import copy
import json
import logging
from importlib import resources
from pathlib import Path

import numpy as np

from . import data as D
from . import hyperopt as H
from .errors import (
    CapacityError,
    ConfigError,
    CorruptFile,
    FormatError,
    InvalidArgument,
    NumericError,
    ParseError,
    SchemaError,
    StallnetError,
    VersionError,
)
from .metrics import evaluate, roc_csv
from .nn import LayerSpec, ModelSpec, init_model, param_count, predict_proba, preset
from .persistence import save_model
from .synthgen import generate_corpus
from .training import TrainConfig, fit

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS = {
    "seed": 0,
    "output_dir": None,
    "data": {
        "source": "synthetic",
        "corpus": {
            "n_cruise": 60,
            "n_gradual": 120,
            "n_abrupt": 0,
            "duration_s": 420,
            "noise_level": 1.0,
        },
        "window_len": 10,
        "horizon": 10,
        "n_train_pos": 1020,
        "n_train_neg": 1020,
        "n_val_each": 150,
        "n_test_each": 150,
        "segment_exclusive": True,
    },
    "model": {"preset": "arch-a"},
    "init": {"forget_bias": 1.0, "he": True},
    "train": {"learning_rate": 1e-3, "epochs": 100, "batch_size": 32, "shuffle": True},
    "tune": {
        "enabled": False,
        "budget": 25,
        "init": 5,
        "epochs": 20,
        "space": None,
        "kernel": {"length_scale": 0.2, "noise_var": 1e-6, "prior_mean": 1.0},
    },
    "evaluate": {"threshold": 0.5, "abrupt_flights": 0},
}


class StageError(StallnetError):
    def __init__(self, stage, exc, exit_code):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage
        self.exit_code = exit_code
        self.__cause__ = exc


def deep_merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


_CONFIGS = resources.files(__package__).joinpath("configs")


def bundled_configs():
    """Names of the configs shipped with the package (usable in place of a path)."""
    return sorted(p.name[:-5] for p in _CONFIGS.iterdir() if p.name.endswith(".json"))


def load_config(path_or_dict, fragment=None, seed=None):
    """Resolved config dict (defaults < file < fragment < seed override) and its base dir."""
    if isinstance(path_or_dict, dict):
        raw, base = path_or_dict, Path.cwd()
    elif not Path(path_or_dict).exists() and str(path_or_dict) in bundled_configs():
        # bundled presets resolve relative paths against the working directory
        raw = json.loads(_CONFIGS.joinpath(f"{path_or_dict}.json").read_text())
        base = Path.cwd()
    else:
        p = Path(path_or_dict)
        try:
            raw = json.loads(p.read_text())
        except FileNotFoundError:
            raise StageError("config", ConfigError(str(p), "config file not found"), EXIT_CONFIG)
        except json.JSONDecodeError as e:
            raise StageError("config", ConfigError(str(p), f"invalid JSON ({e})"), EXIT_CONFIG)
        base = p.resolve().parent
    cfg = deep_merge(DEFAULTS, raw)
    if fragment:
        cfg = deep_merge(cfg, fragment)
    if seed is not None:
        cfg["seed"] = int(seed)
    _validate(cfg)
    return cfg, base


def _validate(cfg):
    d = cfg["data"]
    src = d.get("source")
    required = {"synthetic": None, "csv_dir": "csv_dir", "prepared": "dataset_path"}
    if src not in required:
        raise StageError("config", ConfigError("data.source", f"unknown value {src!r}"), EXIT_CONFIG)
    key = required[src]
    if key and not d.get(key):
        raise StageError("config", ConfigError(f"data.{key}"), EXIT_CONFIG)
    if "preset" not in cfg["model"] and "spec" not in cfg["model"]:
        raise StageError("config", ConfigError("model.preset"), EXIT_CONFIG)
    try:
        model_spec(cfg)
        train_config(cfg)
    except (InvalidArgument, KeyError, TypeError) as e:
        raise StageError("config", e, EXIT_CONFIG) from None


def model_spec(cfg):
    m = cfg["model"]
    d = cfg["data"]
    if "spec" in m:
        return ModelSpec.from_dict(m["spec"])
    return preset(m["preset"], input_features=D.N_FEATURES, window_len=d["window_len"])


def train_config(cfg):
    t = dict(cfg["train"])
    t.setdefault("seed", cfg["seed"] + 3)
    return TrainConfig.from_dict(t)


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() else base / p


def prepare_data(cfg, base):
    """Returns ``(splits, standardizer, info)`` with standardized splits."""
    d = cfg["data"]
    seed = cfg["seed"]
    if d["source"] == "prepared":
        splits, std, manifest = D.load_prepared(_resolve(base, d["dataset_path"]))
        for name in ("train", "val", "test"):
            if name not in splits:
                raise FormatError(f"prepared dataset lacks split {name!r}")
        return splits, std, {"source": "prepared", "retention": manifest.get("retention")}
    if d["source"] == "synthetic":
        c = d["corpus"]
        series = generate_corpus(
            c.get("n_cruise", 60), c.get("n_gradual", 120), c.get("n_abrupt", 0), seed=seed,
            duration_s=c.get("duration_s", 420), noise_level=c.get("noise_level", 1.0),
        )
    else:
        directory = _resolve(base, d["csv_dir"])
        if not directory.is_dir():
            raise FormatError(f"csv_dir {directory} is not a directory")
        series = D.read_corpus(directory)
    pool = D.build_pool(series, d["window_len"], d["horizon"])
    train, val, test = D.balance_and_split(
        pool, d["n_train_pos"], d["n_train_neg"], d["n_val_each"], d["n_test_each"],
        seed=seed + 1, segment_exclusive=d["segment_exclusive"],
    )
    std = D.fit_standardizer(train)
    splits = {k: D.apply_standardizer(std, v) for k, v in
              (("train", train), ("val", val), ("test", test))}
    info = {
        "source": d["source"],
        "retention": D.retention_stats(series, pool, (train, val, test)),
        "train_checksum": D.checksum(train.x),
    }
    return splits, std, info


def default_space(spec):
    dims = [H.Dimension("learning_rate", H.KIND_LOG, 1e-5, 1e-2)]
    for i, layer in enumerate(spec.layers):
        if layer.is_lstm:
            dims.append(H.Dimension(f"units_{i}", H.KIND_INT, 8, 256))
    return H.SearchSpace(dims)


def apply_values(spec, tcfg, values):
    """Spec and train config with tuned values substituted."""
    layers = list(spec.layers)
    lr = tcfg.learning_rate
    for name, v in values.items():
        if name == "learning_rate":
            lr = float(v)
        elif name.startswith("units_"):
            i = int(name.split("_")[1])
            old = layers[i]
            layers[i] = LayerSpec(old.kind, int(v), old.activation, old.drop_rate)
        else:
            raise InvalidArgument(f"cannot apply tuned dimension {name!r}")
    new_cfg = TrainConfig(**{**tcfg.to_dict(), "learning_rate": lr})
    return ModelSpec(tuple(layers), spec.input_features, spec.window_len), new_cfg


def run_tuning(cfg, splits):
    t = cfg["tune"]
    spec = model_spec(cfg)
    tcfg = train_config(cfg)
    space = H.SearchSpace.from_dict(t["space"]) if t.get("space") else default_space(spec)
    kernel = H.Kernel(**t.get("kernel", {}))
    short = TrainConfig(**{**tcfg.to_dict(), "epochs": int(t["epochs"])})

    def objective(values):
        s, c = apply_values(spec, short, values)
        m = init_model(s, seed=cfg["seed"] + 2, **cfg["init"])
        _, hist = fit(m, splits["train"], splits["val"], c)
        return hist.val_accuracy[-1]

    best, trace = H.tune(objective, space, budget=int(t["budget"]), init=int(t["init"]),
                         seed=cfg["seed"] + 5, kernel=kernel)
    if best is None:
        raise NumericError("every tuning trial failed")
    s, c = apply_values(spec, tcfg, best)
    fragment = {"model": {"spec": s.to_dict()}, "train": {"learning_rate": c.learning_rate}}
    return fragment, trace


def _abrupt_recall(cfg, model, std, threshold):
    n = int(cfg["evaluate"].get("abrupt_flights", 0))
    if n <= 0:
        return None
    c = cfg["data"].get("corpus", {})
    series = generate_corpus(0, 0, n, seed=cfg["seed"] + 4,
                             duration_s=c.get("duration_s", 420),
                             noise_level=c.get("noise_level", 1.0))
    pool = D.build_pool(series, cfg["data"]["window_len"], cfg["data"]["horizon"])
    pos = pool.subset(np.flatnonzero(pool.y == 1))
    p = predict_proba(model, D.apply_standardizer(std, pos).x)
    return {"positives": len(pos), "recall": float(np.mean(p >= threshold)) if len(pos) else 0.0}


def _stage(name, code, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except StageError:
        raise
    except (SchemaError, ParseError, FormatError, CapacityError, CorruptFile, VersionError,
            FileNotFoundError) as e:
        raise StageError(name, e, EXIT_DATA) from e
    except (NumericError, FloatingPointError) as e:
        raise StageError(name, e, EXIT_NUMERIC) from e
    except (InvalidArgument, ConfigError) as e:
        raise StageError(name, e, code) from e


def run_experiment(config, out_dir=None, seed=None, fragment=None, tune_only=False,
                   skip_tune=False):
    """Run the whole pipeline and write artifacts; returns a summary dict.

    Artifacts: ``eval_report.json``, ``history.csv``, ``model.stallnet``,
    ``roc.csv``, ``resolved_config.json`` and, when tuning ran,
    ``tune_trace.csv`` and ``best_config.json``.
    """
    cfg, base = load_config(config, fragment, seed)
    if skip_tune:
        cfg["tune"]["enabled"] = False
    out = Path(out_dir) if out_dir else _resolve(base, cfg["output_dir"] or "runs/experiment")
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    splits, std, info = _stage("data", EXIT_DATA, prepare_data, cfg, base)
    result = {"output_dir": str(out)}
    if cfg["tune"]["enabled"] or tune_only:
        frag, trace = _stage("tune", EXIT_CONFIG, run_tuning, cfg, splits)
        (out / "tune_trace.csv").write_text(trace.to_csv())
        (out / "best_config.json").write_text(json.dumps(frag, indent=2, sort_keys=True) + "\n")
        result["best_config"] = frag
        if tune_only:
            return result
        cfg = deep_merge(cfg, frag)
    spec = _stage("model", EXIT_CONFIG, model_spec, cfg)
    tcfg = train_config(cfg)
    model = init_model(spec, seed=cfg["seed"] + 2, **cfg["init"])
    log.info("training %d parameters for %d epochs", param_count(spec), tcfg.epochs)
    model, hist = _stage("train", EXIT_NUMERIC, fit, model, splits["train"], splits["val"], tcfg)
    test = splits["test"]
    thr = float(cfg["evaluate"]["threshold"])
    probs = predict_proba(model, test.x)
    report = evaluate(probs, test.y, thr)
    kinds = np.asarray(test.kinds)
    by_kind = {}
    for k in sorted(set(test.kinds)):
        mask = (kinds == k) & (test.y == 1)
        if mask.any():
            by_kind[k] = {"positives": int(mask.sum()),
                          "recall": float(np.mean(probs[mask] >= thr))}
    ab = _stage("evaluate", EXIT_DATA, _abrupt_recall, cfg, model, std, thr)
    if ab is not None:
        by_kind["abrupt_stall"] = ab
    report.extra = {
        "param_count": param_count(spec),
        "epochs": len(hist),
        "best_val_epoch": hist.best_epoch(),
        "test_count": len(test),
        "recall_by_kind": by_kind,
        "retention": info.get("retention"),
    }
    (out / "eval_report.json").write_text(report.to_json())
    (out / "history.csv").write_text(hist.to_csv())
    (out / "roc.csv").write_text(roc_csv(probs, test.y))
    save_model(model, std, out / "model.stallnet")
    result.update(report=report, history=hist, model=model, standardizer=std)
    return result
