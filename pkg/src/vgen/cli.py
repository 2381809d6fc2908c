"""Command-line interface: ``vgen <subcommand> [--config FILE] [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import baselines as bl
from . import data
from .errors import CompatibilityError, VgenError
from .metrics import render_table
from .model import encode_examples
from .training import Checkpoint, TrainConfig, evaluate, load_model, predict, tiny_grad_check, train

log = logging.getLogger("vgen")

LOG_FILE = "log.jsonl"
ORACLE_FILE = "oracle.jsonl"
CKPT_FILE = "model.ckpt"
TRACE_FILE = "train_trace.jsonl"
REPORT_FILE = "report.json"
PRED_FILE = "predictions.jsonl"
BASELINE_REPORT_FILE = "baselines.json"


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1 (argparse's default is 2, which we reserve for data errors)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="FILE", help="flat JSON config; unknown keys are rejected")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: current)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="vgen", description="Segment-level watch-time modelling toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    sub.add_parser("generate", parents=[common], help="write a synthetic log and its oracle sidecar")

    p = sub.add_parser("train", parents=[common], help="train the model on a log")
    p.add_argument("--log", help=f"interaction log (default: OUT/{LOG_FILE})")

    for name, text in (("evaluate", "score a checkpoint"), ("predict", "per-example curves from a checkpoint")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--log", help=f"interaction log (default: OUT/{LOG_FILE})")
        p.add_argument("--checkpoint", help=f"model checkpoint (default: OUT/{CKPT_FILE})")
        p.add_argument("--split", choices=("eval", "train", "all"), default="eval", help="which time split to use")
        if name == "evaluate":
            p.add_argument("--oracle", help="oracle sidecar; adds an oracle row to the report")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check on a tiny model")
    p.add_argument("--variant", choices=("chain", "recursive", "both"), default="both")
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("baselines", parents=[common], help="fit VR, WLR, OR and D2Q and compare with the model")
    p.add_argument("--log", help=f"interaction log (default: OUT/{LOG_FILE})")
    p.add_argument("--checkpoint", help=f"model checkpoint (default: OUT/{CKPT_FILE}; trained if absent)")
    p.add_argument("--oracle", help=f"oracle sidecar (default: OUT/{ORACLE_FILE} when present)")
    return parser


def _config(args):
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    cfg.validate()
    return cfg


def _path(args, given, default):
    return given if given else os.path.join(args.out, default)


def _splits(cfg, log_path):
    parsed = data.read_log(log_path)
    examples = data.build_examples(parsed.records, cfg.L_hist, cfg.M, cfg.n_behaviors)
    return data.time_split(examples, cfg.split)


def _select(split, train_ex, eval_ex):
    return {"train": train_ex, "eval": eval_ex, "all": train_ex + eval_ex}[split]


def cmd_generate(args, cfg):
    records, oracle = data.synth_generate(cfg.synth_config())
    log_path, oracle_path = os.path.join(args.out, LOG_FILE), os.path.join(args.out, ORACLE_FILE)
    data.write_log(records, log_path)
    data.write_sidecar(records, oracle, oracle_path)
    print(f"wrote {len(records)} impressions to {log_path} and {oracle_path}")


def cmd_train(args, cfg):
    train_ex, eval_ex = _splits(cfg, _path(args, args.log, LOG_FILE))

    def show(rec):
        extra = ""
        if "eval_mae_sec" in rec:
            extra = f"  eval MAE {rec['eval_mae_sec']:.4f}  XAUC {rec['eval_xauc']:.4f}"
        print(f"epoch {rec['epoch']}: loss {rec['train_loss']:.5f}{extra}", flush=True)

    result = train(cfg, train_ex, eval_ex, progress=show)
    ckpt_path = os.path.join(args.out, CKPT_FILE)
    result.checkpoint.save(ckpt_path)
    with open(os.path.join(args.out, TRACE_FILE), "w", encoding="utf-8") as fh:
        for rec in result.trace:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote {ckpt_path}")


def _ckpt_and_examples(args, cfg):
    ckpt = Checkpoint.load(_path(args, args.checkpoint, CKPT_FILE))
    # the split must be rebuilt with the checkpoint's own settings
    trained = TrainConfig.from_dict(ckpt.config)
    if args.config and cfg.M != trained.M:
        raise CompatibilityError(f"config asks for M={cfg.M} but the checkpoint was trained with M={trained.M}")
    train_ex, eval_ex = _splits(trained, _path(args, args.log, LOG_FILE))
    return ckpt, trained, _select(args.split, train_ex, eval_ex)


def cmd_evaluate(args, cfg):
    ckpt, _, examples = _ckpt_and_examples(args, cfg)
    report = evaluate(ckpt, examples, cfg.eval_config())
    reports = [report]
    if args.oracle:
        reports.append(data.oracle_metrics(data.read_sidecar(args.oracle), examples, cfg.eval_config()))
    with open(os.path.join(args.out, REPORT_FILE), "w", encoding="utf-8") as fh:
        json.dump({r.method: r.to_flat() for r in reports}, fh, indent=2, sort_keys=True)
    print(render_table(reports))


def cmd_predict(args, cfg):
    ckpt, _, examples = _ckpt_and_examples(args, cfg)
    rows = predict(ckpt, examples)
    path = os.path.join(args.out, PRED_FILE)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    print(f"wrote {len(rows)} predictions to {path}")


def cmd_gradcheck(args, cfg):
    variants = ("chain", "recursive") if args.variant == "both" else (args.variant,)
    ok = True
    for variant in variants:
        report = tiny_grad_check(variant, seed=args.seed if args.seed is not None else 1, tol=args.tol)
        print(f"{variant}: max relative error {report.overall:.3e} ({'pass' if report.passed else 'FAIL'})")
        ok = ok and report.passed
    return 0 if ok else 3


def cmd_baselines(args, cfg):
    ckpt_path = _path(args, args.checkpoint, CKPT_FILE)
    train_ex, eval_ex = _splits(cfg, _path(args, args.log, LOG_FILE))
    if os.path.exists(ckpt_path):
        ckpt = Checkpoint.load(ckpt_path)
        train_ex, eval_ex = _splits(TrainConfig.from_dict(ckpt.config), _path(args, args.log, LOG_FILE))
    else:
        print(f"no checkpoint at {ckpt_path}; training the model first", flush=True)
        ckpt = train(cfg, train_ex, eval_ex).checkpoint
        ckpt.save(ckpt_path)
    store, mcfg, vocabs, trained = load_model(ckpt)
    tr = encode_examples(train_ex, vocabs, trained.L_hist, trained.M)
    ev = encode_examples(eval_ex, vocabs, trained.L_hist, trained.M)
    X_tr = bl.shared_features(store, mcfg, tr)
    X_ev = bl.shared_features(store, mcfg, ev)
    _, reports = bl.run_baselines(X_tr, tr, X_ev, ev, cfg, cfg.eval_config())
    rows = [reports[name] for name in bl.BASELINES]
    rows.append(evaluate(ckpt, eval_ex, cfg.eval_config(), method="model"))
    oracle_path = args.oracle or os.path.join(args.out, ORACLE_FILE)
    if os.path.exists(oracle_path):
        rows.append(data.oracle_metrics(data.read_sidecar(oracle_path), eval_ex, cfg.eval_config()))
    with open(os.path.join(args.out, BASELINE_REPORT_FILE), "w", encoding="utf-8") as fh:
        json.dump({r.method: r.to_flat() for r in rows}, fh, indent=2, sort_keys=True)
    print(render_table(rows))


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "baselines": cmd_baselines,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](args, cfg) or 0
    except VgenError as exc:
        print(f"vgen {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        # unreadable inputs are data problems, not usage problems
        print(f"vgen {args.command}: {exc}", file=sys.stderr)
        return 2
