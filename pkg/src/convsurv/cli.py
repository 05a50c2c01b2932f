"""Command-line entry point: ``convsurv <command> [options]``.

Every command writes plain CSV/JSON into ``--out``. Failures print one JSON
object ``{"error": CODE, "message": ...}`` on stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import dumps, load_model, save_model
from .data import DEFAULT_HORIZON, load_conversations, load_subject_map, stratified_split, write_conversations
from .errors import ConvSurvError, ConvSurvWarning, InvalidInput
from .evaluation import ModelConfig, cross_validate, default_grid, evaluate, fit_config, risk_scores, stratify_by_risk
from .features import DRIFT_NAMES
from .monitor import (
    DEFAULT_TAU,
    drift_baseline_monitor,
    format_table,
    reports_json,
    run_monitor,
    tune_drift_threshold,
    tune_threshold,
)
from .synthetic import GeneratorSpec, generate


class CommandError(ConvSurvError):
    pass


def _need_file(path: str | None, what: str) -> Path:
    if path is None:
        raise InvalidInput(f"missing --{what}")
    p = Path(path)
    if not p.is_file():
        raise CommandError(f"{what} file not found: {p}", code="E_DATA_NOT_FOUND")
    return p


def _need_seed(args) -> int:
    if args.seed is None:
        raise InvalidInput(f"--seed is required for '{args.command}'")
    return args.seed


def _load(args, path: str | None, what: str = "data"):
    subject_map = load_subject_map(args.subject_map) if args.subject_map else None
    if args.subject_map:
        _need_file(args.subject_map, "subject-map")
    return load_conversations(_need_file(path, what), args.horizon, subject_map)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> None:
    coefficients = {"drift": args.drift_coef}
    spec = GeneratorSpec(
        family=args.family,
        n=args.n,
        horizon=args.horizon,
        intercept=args.intercept,
        coefficients=coefficients,
        sigma=args.sigma,
        censoring_rate=args.censoring_rate,
        dim=args.dim,
        spike=args.spike,
        spike_false_rate=args.spike_false_rate,
        flip=args.flip,
        seed=_need_seed(args),
    )
    out = _out(args)
    write_conversations(out / "conversations.jsonl", generate(spec))


def cmd_featurize(args) -> None:
    dataset = _load(args, args.data)
    out = _out(args)
    rows = ["conversation_id,start,stop,event,p2p,c2p,cum,length,model_id,subject_cluster,difficulty"]
    for conv in dataset:
        T, event = conv.outcome.event_time, conv.outcome.event_observed
        for t in range(T):
            p2p, c2p, cum = conv.drift[t].tolist()
            ev = int(event and t + 1 == T)
            rows.append(
                f"{conv.conversation_id},{t},{t + 1},{ev},{p2p!r},{c2p!r},{cum!r},{int(conv.lengths[t])},"
                f"{conv.model_id},{conv.subject_cluster},{conv.difficulty}"
            )
    _write(out / "turns.csv", "\n".join(rows) + "\n")


def _grid(args) -> list[ModelConfig]:
    if args.grid is None:
        return default_grid(args.family)
    entries = json.loads(_need_file(args.grid, "grid").read_text(encoding="utf-8"))
    if not isinstance(entries, list) or not entries:
        raise InvalidInput("grid file must hold a non-empty JSON list of parameter objects")
    return [ModelConfig.make(args.family, **e) for e in entries]


def cmd_fit(args) -> None:
    seed = _need_seed(args)
    dataset = _load(args, args.data)
    out = _out(args)
    if args.split:
        split = json.loads(_need_file(args.split, "split").read_text(encoding="utf-8"))
        by_id = {c.conversation_id: c for c in dataset}
        missing = [i for i in split["train"] + split["test"] if i not in by_id]
        if missing:
            raise InvalidInput(f"split file names {len(missing)} unknown conversation(s), e.g. {missing[0]!r}")
        train = [by_id[i] for i in split["train"]]
        test = [by_id[i] for i in split["test"]]
    else:
        train, test = stratified_split(dataset, args.test_fraction, seed)
    split = {"train": [c.conversation_id for c in train], "test": [c.conversation_id for c in test]}
    _write(out / "split.json", dumps(split))
    write_conversations(out / "train.jsonl", train)
    write_conversations(out / "test.jsonl", test)

    cv = cross_validate(train, grid=_grid(args), k=args.folds, seed=seed)
    _write(out / "cv_table.csv", cv.to_csv())
    fit = fit_config(cv.selected, train, seed=seed)
    save_model(fit, out / "model.json", cv.selected.to_json())


def _model_label(fit) -> str:
    return f"aft-{fit.family}" if fit.kind == "aft" else fit.kind


def cmd_evaluate(args) -> None:
    dataset = _load(args, args.data)
    out = _out(args)
    rows = ["model,kind,n_covariates,c_index,ibs"]
    for i, path in enumerate(args.model):
        fit = load_model(path)
        report = evaluate(fit, dataset)
        label = _model_label(fit)
        suffix = "" if len(args.model) == 1 else f"_{i}"
        _write(out / f"evaluation{suffix}.json", dumps({"model": str(path), "label": label, **report.to_json()}))
        _write(out / f"brier{suffix}.csv", report.brier_csv())
        rows.append(f"{path},{label},{fit.n_covariates},{report.c_index!r},{report.ibs!r}")
    _write(out / "comparison.csv", "\n".join(rows) + "\n")


def cmd_stratify(args) -> None:
    dataset = _load(args, args.data)
    out = _out(args)
    if args.model:
        fit = load_model(args.model)
        values = risk_scores(fit, dataset)
        source = f"risk score of {args.model}"
    else:
        col = DRIFT_NAMES.index(args.by)
        values = np.array([c.drift[-1, col] if args.by == "cum" else c.drift[:, col].mean() for c in dataset])
        source = f"drift {args.by}"
    result = stratify_by_risk(dataset, values, args.quantiles)
    _write(out / "stratify.json", dumps({"stratifier": source, "quantiles": list(args.quantiles), **result.to_json()}))
    H = dataset[0].horizon
    lines = ["group,t,survival"]
    for label, curve in result.curves.items():
        lines += [f"{label},{t},{s!r}" for t, s in zip(range(H + 1), curve.survival.tolist())]
    _write(out / "km_curves.csv", "\n".join(lines) + "\n")


def cmd_monitor(args) -> None:
    fit = load_model(_need_file(args.model, "model"))
    dataset = _load(args, args.data)
    train = _load(args, args.train, "train") if args.train else None
    out = _out(args)
    if args.threshold is not None:
        threshold = args.threshold
    elif train is not None:
        threshold = tune_threshold(train, fit, args.tau)
    else:
        raise InvalidInput("give --threshold or a --train file to tune it on")
    reports = [run_monitor(dataset, fit, threshold, args.tau)]
    reports[0].method = _model_label(fit)
    if args.baseline == "drift":
        if args.drift_threshold is not None:
            dthr = args.drift_threshold
        elif train is not None:
            dthr = tune_drift_threshold(train)
        else:
            raise InvalidInput("drift baseline needs --drift-threshold or a --train file")
        reports.append(drift_baseline_monitor(dataset, dthr))
        _write(out / "baseline_turns.csv", reports[1].turn_csv())
    _write(out / "monitor.json", reports_json(reports))
    _write(out / "monitor_turns.csv", reports[0].turn_csv())
    _write(out / "monitor_table.txt", format_table(reports))


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (required by simulate and fit)")
    common.add_argument("--horizon", type=int, default=DEFAULT_HORIZON, help="turn horizon H (default 8)")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--subject-map", default=None, help="JSON cluster table overriding the packaged one")

    parser = argparse.ArgumentParser(prog="convsurv", description="Survival analysis of multi-turn conversation consistency.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write synthetic conversations")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--family", default="weibull", choices=["weibull", "lognormal", "loglogistic", "cox-discrete"])
    p.add_argument("--intercept", type=float, default=1.5)
    p.add_argument("--drift-coef", type=float, default=-0.5)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--censoring-rate", type=float, default=0.0)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--spike", action="store_true", help="put a drift spike two turns before each failure")
    p.add_argument("--spike-false-rate", type=float, default=0.0)
    p.add_argument("--flip", type=float, default=0.0, help="mid-horizon sign flip of the drift effect (cox-discrete)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("featurize", parents=[common], help="write per-turn drift covariates")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("fit", parents=[common], help="split, cross-validate and fit a model")
    p.add_argument("--data", required=True)
    p.add_argument("--family", default="aft", choices=["cox", "aft", "rsf"])
    p.add_argument("--split", default=None, help="JSON file with 'train' and 'test' id lists")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--grid", default=None, help="JSON list of parameter objects replacing the default grid")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", parents=[common], help="C-index, Brier by round and IBS on held-out data")
    p.add_argument("--model", required=True, nargs="+")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stratify", parents=[common], help="risk groups, KM curves and log-rank test")
    p.add_argument("--data", required=True)
    p.add_argument("--model", default=None, help="stratify by this model's risk score")
    p.add_argument("--by", default="cum", choices=list(DRIFT_NAMES), help="drift stratifier when no model is given")
    p.add_argument("--quantiles", type=float, nargs="+", default=[1 / 3, 2 / 3])
    p.set_defaults(func=cmd_stratify)

    p = sub.add_parser("monitor", parents=[common], help="turn-wise conditional failure alerts")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--train", default=None, help="training conversations for threshold tuning")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--tau", type=int, default=DEFAULT_TAU)
    p.add_argument("--baseline", choices=["drift"], default=None)
    p.add_argument("--drift-threshold", type=float, default=None)
    p.set_defaults(func=cmd_monitor)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvSurvWarning)
            args.func(args)
    except ConvSurvError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
