"""Command-line interface: ``stallnet <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import deque
from pathlib import Path

import numpy as np

from . import data as D
from .errors import (
    CapacityError,
    ConfigError,
    CorruptFile,
    FormatError,
    InvalidArgument,
    NumericError,
    ParseError,
    SchemaError,
    VersionError,
)
from .experiment import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, StageError, run_experiment
from .metrics import evaluate
from .nn import predict_proba
from .persistence import load_model
from .synthgen import generate_corpus


def _cmd_generate(a):
    series = generate_corpus(a.cruise, a.gradual, a.abrupt, seed=a.seed, duration_s=a.duration)
    D.write_corpus(series, a.out)
    print(f"wrote {len(series)} recordings to {a.out}")


def _cmd_prepare(a):
    series = D.read_corpus(a.corpus)
    pool = D.build_pool(series, a.window_len, a.horizon)
    train, val, test = D.balance_and_split(
        pool, a.train_pos, a.train_neg, a.val_each, a.test_each, seed=a.seed
    )
    std = D.fit_standardizer(train)
    splits = {k: D.apply_standardizer(std, v) for k, v in
              (("train", train), ("val", val), ("test", test))}
    D.save_prepared(a.out, splits, std, a.seed,
                    {"retention": D.retention_stats(series, pool, (train, val, test))})
    print(f"wrote {a.out}: train={len(train)} val={len(val)} test={len(test)}")


def _load_fragment(path):
    if not path:
        return None
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise StageError("config", ConfigError(str(path), f"unreadable fragment ({e})"), EXIT_CONFIG)


def _print_summary(res):
    r = res["report"]
    print(f"accuracy={r.accuracy:.4f} precision={r.precision:.4f} recall={r.recall:.4f} "
          f"f1={r.f1:.4f} auc={r.auc if r.auc is None else round(r.auc, 4)}")
    print(f"artifacts in {res['output_dir']}")


def _cmd_train(a):
    res = run_experiment(a.config, out_dir=a.out, seed=a.seed,
                         fragment=_load_fragment(a.fragment), skip_tune=True)
    _print_summary(res)


def _cmd_run(a):
    _print_summary(run_experiment(a.config, out_dir=a.out, seed=a.seed,
                                  fragment=_load_fragment(a.fragment)))


def _cmd_tune(a):
    res = run_experiment(a.config, out_dir=a.out, seed=a.seed, tune_only=True)
    print(json.dumps(res["best_config"], indent=2, sort_keys=True))


def _cmd_evaluate(a):
    model, _ = load_model(a.model)
    splits, _, _ = D.load_prepared(a.dataset)
    if a.split not in splits:
        raise FormatError(f"dataset has no split {a.split!r}")
    ds = splits[a.split]
    report = evaluate(predict_proba(model, ds.x), ds.y, a.threshold)
    text = report.to_json()
    if a.out:
        Path(a.out).write_text(text)
    sys.stdout.write(text)


def _rows_to_window(rows, std):
    x = np.asarray(rows, dtype=np.float64).T[None]  # (1, F, T)
    return x if std is None else std.transform(x)


def _emit(t, p, thr, out):
    out.write(json.dumps({"t": t, "probability": float(p), "alarm": bool(p >= thr)}) + "\n")
    out.flush()


def _cmd_predict(a):
    model, std = load_model(a.model)
    w = model.spec.window_len
    out = sys.stdout
    if a.follow:
        header = sys.stdin.readline()
        if not header:
            return
        idx = _column_index(header.strip().split(","))
        buf = deque(maxlen=w)
        for lineno, line in enumerate(sys.stdin, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            try:
                t = float(cells[idx["time"]]) if idx["time"] is not None else lineno - 2
                buf.append([float(cells[i]) for i in idx["features"]])
            except (ValueError, IndexError):
                raise ParseError(f"cannot parse row {line!r}", lineno) from None
            if len(buf) == w:
                _emit(t, predict_proba(model, _rows_to_window(buf, std))[0], a.threshold, out)
        return
    ts = D.parse_flight_csv(a.csv)
    if len(ts) < w:
        raise FormatError(f"recording has {len(ts)} rows, need at least {w}")
    win = np.lib.stride_tricks.sliding_window_view(ts.values, w, axis=0)  # (n, F, w)
    x = win if std is None else std.transform(win)
    probs = predict_proba(model, x)
    for k, p in enumerate(probs):
        _emit((k + w - 1) / ts.sample_rate, p, a.threshold, out)


def _column_index(cols):
    missing = [c for c in D.COLUMNS if c not in cols]
    if missing:
        raise SchemaError(missing[0])
    return {
        "features": [cols.index(c) for c in D.COLUMNS],
        "time": cols.index(D.TIME_COLUMN) if D.TIME_COLUMN in cols else None,
    }


def build_parser():
    p = argparse.ArgumentParser(prog="stallnet", description="Stall-warning prediction with LSTMs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic flight corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--cruise", type=int, default=60)
    g.add_argument("--gradual", type=int, default=120)
    g.add_argument("--abrupt", type=int, default=0)
    g.add_argument("--duration", type=int, default=420)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=_cmd_generate)

    pr = sub.add_parser("prepare", help="window, balance, split and standardize a corpus")
    pr.add_argument("--corpus", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--window-len", type=int, default=10)
    pr.add_argument("--horizon", type=int, default=10)
    pr.add_argument("--train-pos", type=int, default=1020)
    pr.add_argument("--train-neg", type=int, default=1020)
    pr.add_argument("--val-each", type=int, default=150)
    pr.add_argument("--test-each", type=int, default=150)
    pr.add_argument("--seed", type=int, default=0)
    pr.set_defaults(fn=_cmd_prepare)

    for name, fn, text in (("train", _cmd_train, "train and evaluate without tuning"),
                           ("run", _cmd_run, "full pipeline, tuning if the config enables it"),
                           ("tune", _cmd_tune, "hyperparameter search only")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True)
        s.add_argument("--out", help="output directory (overrides output_dir)")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        if name != "tune":
            s.add_argument("--fragment", help="JSON merged over the config, e.g. best_config.json")
        s.set_defaults(fn=fn)

    e = sub.add_parser("evaluate", help="score a saved model on a prepared split")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--out")
    e.set_defaults(fn=_cmd_evaluate)

    pd = sub.add_parser("predict", help="per-window warning probabilities as JSON lines")
    src = pd.add_mutually_exclusive_group(required=True)
    src.add_argument("--csv", help="flight CSV to score")
    src.add_argument("--follow", action="store_true", help="stream CSV rows from stdin")
    pd.add_argument("--model", required=True)
    pd.add_argument("--threshold", type=float, default=0.5)
    pd.set_defaults(fn=_cmd_predict)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (ConfigError, InvalidArgument) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaError, ParseError, FormatError, CapacityError, CorruptFile, VersionError,
            FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
