"""Command-line front end: data synthesis, teachers, training, evaluation, robustness
sweeps, ablations and the latency benchmark.

Run options form one flat JSON document. Every key has a built-in default, a JSON
file given with ``--config`` overrides those, and command-line flags override
both. ``STDISTILL_SEED`` replaces the built-in seed default. The resolved document
is echoed into every artifact so a run can be repeated from its own output.

Exit codes: 0 success, 1 data or runtime failure, 2 usage or configuration error.
Failures print one JSON object on stderr: ``{"error": <kind>, "message": <text>}``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import bench
from . import data as sd
from . import teacher as te
from . import trainer as tr
from .losses import LossConfig
from .metrics import report

SEED_ENV = "STDISTILL_SEED"
CHECKPOINT_NAME = "checkpoint.stck"
LOG_NAME = "log.jsonl"
REPORT_NAME = "report.json"


class UsageError(Exception):
    """Bad invocation or configuration; maps to exit code 2."""


def _run_defaults() -> dict:
    synth = asdict(sd.SynthConfig())
    synth.pop("seed")
    train = {f.name: f.default for f in fields(tr.TrainConfig)
             if f.name != "loss" and not f.name.startswith("no_")}
    train["milestones"] = list(train["milestones"])
    return {
        "data": None,
        "teacher": None,
        "out": "run",
        "variant": "full",
        **synth,
        **train,
        **asdict(LossConfig()),
    }


RUN_DEFAULTS = _run_defaults()
_LOSS_KEYS = {f.name for f in fields(LossConfig)}
_SYNTH_KEYS = set(asdict(sd.SynthConfig())) - {"seed"}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _flag_type(default):
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, list):
        return _int_list
    return str


def _add_run_flags(parser: argparse.ArgumentParser, skip=()) -> None:
    group = parser.add_argument_group("run configuration (flag > --config file > default)")
    group.add_argument("--config", help="flat JSON document of run options")
    for key, default in RUN_DEFAULTS.items():
        if key in skip:
            continue
        group.add_argument("--" + key.replace("_", "-"), dest=key, type=_flag_type(default),
                           default=argparse.SUPPRESS, help=f"default {default!r}")


def _check_type(key: str, value) -> None:
    default = RUN_DEFAULTS[key]
    if default is None:
        ok = value is None or isinstance(value, str)
    elif isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    else:
        ok = isinstance(value, str)
    if not ok:
        raise UsageError(f"config key {key!r} has value {value!r} of the wrong type")


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional config file and explicit flags."""
    cfg = dict(RUN_DEFAULTS)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from None
    path = getattr(args, "config", None)
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        unknown = sorted(set(doc) - set(RUN_DEFAULTS))
        if unknown:
            raise UsageError(f"unknown config keys {unknown}")
        for key, value in doc.items():
            _check_type(key, value)
        cfg.update(doc)
    for key in RUN_DEFAULTS:
        if key in vars(args):
            cfg[key] = getattr(args, key)
    return cfg


def train_config(cfg: dict) -> tr.TrainConfig:
    loss = LossConfig(**{k: cfg[k] for k in _LOSS_KEYS})
    keys = {f.name for f in fields(tr.TrainConfig)} - {"loss"}
    opts = {k: cfg[k] for k in keys if k in cfg}
    opts["milestones"] = tuple(opts["milestones"])
    base = tr.TrainConfig(loss=loss, **opts)
    return tr.ablate(cfg["variant"], base)


def load_data(cfg: dict) -> tuple[sd.STGraph, sd.STSeries]:
    if cfg["data"]:
        return sd.load_dataset(cfg["data"])
    synth = sd.SynthConfig(seed=cfg["seed"], **{k: cfg[k] for k in _SYNTH_KEYS})
    return sd.synth_generate(synth)


def prepared(cfg: dict) -> tr.PreparedData:
    graph, series = load_data(cfg)
    return tr.prepare(graph, series, cfg["history"], cfg["horizon"])


def teacher_for(cfg: dict, data: tr.PreparedData, tcfg: tr.TrainConfig) -> np.ndarray | None:
    """``teacher`` is a prediction file or ``perfect`` (the ground truth itself)."""
    if tcfg.effective_loss.kd_weight == 0:
        return None
    source = cfg["teacher"]
    if source is None:
        raise UsageError("distillation is enabled but no teacher was configured; "
                         "pass --teacher FILE, --teacher perfect, or --kd-weight 0")
    if source == "perfect":
        return te.synth_teacher(data.windows.y)
    return te.load_teacher(source, data.teacher_shape)


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True, allow_nan=False))


def _train_run(cfg: dict) -> dict:
    tcfg = train_config(cfg)
    data = prepared(cfg)
    teacher = teacher_for(cfg, data, tcfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / LOG_NAME, "w") as log:
        ckpt, logs = tr.train(data, teacher, tcfg,
                              on_epoch=lambda rec: log.write(json.dumps(rec, sort_keys=True) + "\n"))
    ckpt.meta["run"] = cfg
    ckpt.save(out / CHECKPOINT_NAME)
    rep = tr.evaluate(ckpt, data, "test", label=cfg["variant"])
    doc = {
        "command": "train",
        "config": cfg,
        "epochs_run": len(logs),
        "best_epoch": ckpt.meta["epoch"],
        "best_val_mae": ckpt.meta["best_val_mae"],
        "checkpoint": str(out / CHECKPOINT_NAME),
        "report": rep.to_dict(),
    }
    (out / REPORT_NAME).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return doc


# ----------------------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    cfg = sd.SynthConfig(nodes=args.nodes, days=args.days, steps_per_day=args.steps_per_day,
                         features=args.features, graph=args.graph, diffusion=args.diffusion,
                         noise=args.noise, seed=_seed(args.seed))
    graph, series = sd.synth_generate(cfg)
    sd.write_dataset(args.output, graph, series)
    _emit({"command": "synth", "config": asdict(cfg), "output": str(args.output),
           "num_steps": series.num_steps})
    return 0


def cmd_teacher(args) -> int:
    cfg = resolve_config(args)
    data = prepared(cfg)
    doc = {"command": "teacher", "mode": args.mode, "config": cfg}
    if args.mode == "import":
        y_t = te.load_teacher(args.path, data.teacher_shape)
    elif args.mode == "synthetic":
        y_t = te.synth_teacher(data.windows.y, args.sigma, args.bias, cfg["seed"])
    else:
        model = te.train_ref_teacher(data.graph, data.split("train"), data.normalizer,
                                     epochs=args.epochs, seed=cfg["seed"], hidden=args.hidden)
        y_t = te.teacher_predictions(model, data.windows, data.normalizer)
    if args.mode != "import":
        if not args.output:
            raise UsageError(f"teacher {args.mode} needs -o/--output")
        te.save_teacher(args.output, y_t)
        doc["output"] = str(args.output)
    doc["report"] = report(y_t[data.test_idx], data.split("test").y, f"teacher-{args.mode}").to_dict()
    doc["shape"] = list(y_t.shape)
    _emit(doc)
    return 0


def cmd_train(args) -> int:
    _emit(_train_run(resolve_config(args)))
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    cfg["variant"] = args.variant_name
    if cfg["out"] == RUN_DEFAULTS["out"]:
        cfg["out"] = str(Path(cfg["out"]) / args.variant_name.replace("/", "_"))
    doc = _train_run(cfg)
    doc["command"] = "ablate"
    _emit(doc)
    return 0


def _checkpoint_and_data(args) -> tuple[tr.Checkpoint, tr.PreparedData, dict]:
    ckpt = tr.Checkpoint.load(args.checkpoint)
    cfg = dict(ckpt.meta.get("run", RUN_DEFAULTS))
    if args.data:
        cfg["data"] = args.data
    return ckpt, prepared(cfg), cfg


def _corruption(mode, gamma, seed):
    return None if mode is None else (mode, gamma, seed)


def cmd_eval(args) -> int:
    ckpt, data, cfg = _checkpoint_and_data(args)
    label = args.label if args.label is not None else cfg.get("variant", "")
    rep = tr.evaluate(ckpt, data, args.split, _corruption(args.mode, args.gamma, _seed(args.seed)), label)
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())
    _emit({"command": "eval", "config": cfg, "split": args.split, "corruption": args.mode,
           "gamma": args.gamma if args.mode else 0.0, "report": rep.to_dict()})
    return 0


def parse_gammas(text: str) -> list[float]:
    """``start:stop:step`` (inclusive of ``stop``) or a comma list."""
    if ":" in text:
        try:
            start, stop, step = (float(v) for v in text.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError("gamma range needs step > 0 and stop >= start")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(count)]
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_robust(args) -> int:
    ckpt, data, cfg = _checkpoint_and_data(args)
    seed = _seed(args.seed)
    reports = []
    for gamma in args.gammas:
        rep = tr.evaluate(ckpt, data, args.split, (args.mode, gamma, seed), f"{args.mode}={gamma:g}")
        reports.append({"gamma": gamma, **rep.to_dict()})
    clean = reports[0]["mae"] if args.gammas[0] == 0 else tr.evaluate(ckpt, data, args.split).mae
    for r in reports:
        r["relative_mae"] = r["mae"] / clean
    _emit({"command": "robust", "config": cfg, "mode": args.mode, "split": args.split, "reports": reports})
    return 0


def cmd_bench(args) -> int:
    rows = bench.latency_table(args.nodes, reps=args.reps, warmup=args.warmup, d=args.d,
                               rounds=args.rounds, seed=_seed(args.seed))
    _emit({"command": "bench", "rows": rows})
    return 0


def _seed(flag):
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


# ----------------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("usage", f"{self.prog}: {message}", 2)


def _fail(kind: str, message: str, code: int):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    raise SystemExit(code)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stdistill", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    base = sd.SynthConfig()
    for key in ("nodes", "days", "steps_per_day", "features"):
        s.add_argument("--" + key.replace("_", "-"), dest=key, type=int, default=getattr(base, key))
    s.add_argument("--graph", choices=("ring", "grid"), default=base.graph)
    s.add_argument("--diffusion", type=float, default=base.diffusion)
    s.add_argument("--noise", type=float, default=base.noise)
    s.add_argument("--seed", type=int)
    s.add_argument("-o", "--output", required=True, help="*.json writes the text format, anything else binary")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("teacher", help="prepare teacher predictions")
    tsub = t.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    ref = tsub.add_parser("ref", help="train the reference graph teacher")
    ref.add_argument("--epochs", type=int, default=30)
    ref.add_argument("--hidden", type=int, default=32)
    syn = tsub.add_parser("synthetic", help="ground truth plus bias and noise")
    syn.add_argument("--sigma", type=float, default=0.0)
    syn.add_argument("--bias", type=float, default=0.0)
    imp = tsub.add_parser("import", help="validate an external prediction file")
    imp.add_argument("path")
    for q in (ref, syn, imp):
        q.add_argument("-o", "--output")
        _add_run_flags(q, skip=("epochs",) if q is ref else ())
        q.set_defaults(func=cmd_teacher)

    tr_p = sub.add_parser("train", help="train the student and write checkpoint, log and report")
    _add_run_flags(tr_p)
    tr_p.set_defaults(func=cmd_train)

    ab = sub.add_parser("ablate", help="train one ablation variant")
    ab.add_argument("--variant", dest="variant_name", required=True, choices=tr.VARIANTS)
    _add_run_flags(ab, skip=("variant",))
    ab.set_defaults(func=cmd_ablate)

    for name, func, help_text in (("eval", cmd_eval, "evaluate a checkpoint"),
                                  ("robust", cmd_robust, "evaluate over corruption levels")):
        e = sub.add_parser(name, help=help_text)
        e.add_argument("checkpoint")
        e.add_argument("--data", help="dataset file; defaults to the one recorded in the checkpoint")
        e.add_argument("--split", choices=("train", "val", "test"), default="test")
        e.add_argument("--seed", type=int, help="corruption seed")
        if name == "eval":
            e.add_argument("--mode", choices=("noise", "missing"))
            e.add_argument("--gamma", type=float, default=0.0)
            e.add_argument("--label")
            e.add_argument("--csv", help="also write per-horizon metrics as CSV")
        else:
            e.add_argument("--mode", choices=("noise", "missing"), required=True)
            e.add_argument("--gammas", type=parse_gammas, default=parse_gammas("0:0.3:0.05"))
        e.set_defaults(func=func)

    b = sub.add_parser("bench", help="student vs reference-teacher inference latency")
    b.add_argument("--nodes", type=_int_list, default=list(bench.DEFAULT_NODES))
    b.add_argument("--reps", type=int, default=100)
    b.add_argument("--warmup", type=int, default=10)
    b.add_argument("--rounds", type=int, default=5)
    b.add_argument("--d", type=int, default=64)
    b.add_argument("--seed", type=int)
    b.set_defaults(func=cmd_bench)
    return p


_RUNTIME_ERRORS = (te.AlignmentError, sd.DatasetParseError, tr.TrainingError, OSError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, sd.ConfigError) as exc:
        _fail("config", str(exc), 2)
    except _RUNTIME_ERRORS as exc:
        _fail(type(exc).__name__, str(exc), 1)
    except (ValueError, TypeError, KeyError) as exc:
        # dataclass validation and shape checks surface here
        _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
