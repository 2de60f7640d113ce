"""Command-line entry point.

Every command writes its artifacts plus a ``manifest.json`` (command, inputs,
effective config, config hash, outputs, package versions) to ``--out``.
Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""
import argparse
import json
import logging
import sys
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from .alerters import make_alerter
from .config import METHODS, PROFILES, RunConfig, load_config_file, load_run_matrix, parse_seeds, resolve_config
from .errors import ConfigError
from .experiments import (
    CellResult, build_responder, cell_records, evaluate_responder, make_split, prepare_dataset,
    run_bias_experiment, run_inversion_experiment, run_method_matrix, run_recoding_comparison,
    run_trainsize_ablation,
)
from .policies import load_policy
from .reports import LAYOUTS, build_report, write_table
from .sft import BIAS_TAGS, ChatArgumentGenerator, StubArgumentGenerator, generate_argument_corpus, load_arguments, save_arguments
from .space import AnswerMatrix, fit_space, project
from .splits import STRATEGIES, load_split, save_split
from .storages import make_store
from .surveys import SCHEMES, SURVEYS, Dataset, recode_dataset, save_dataset

logger = logging.getLogger(__name__)

EXPERIMENTS = ("matrix", "bias", "inversion", "trainsize", "recoding")
VERSIONED_PACKAGES = ("stancealign", "numpy", "pandas", "scipy", "statsmodels", "scikit-learn", "matplotlib")


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def survey_name(text: str) -> str:
    for name in SURVEYS:
        if text.casefold() == name.casefold():
            return name
    raise argparse.ArgumentTypeError(f"unknown survey {text!r}; choose from {', '.join(SURVEYS)}")


def package_versions() -> Dict[str, Optional[str]]:
    versions = {}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def write_manifest(
    out_dir: Path,
    command: str,
    inputs: Dict[str, Any],
    outputs: Sequence[Path],
    config: Optional[RunConfig] = None,
) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "inputs": inputs,
        "config": config.to_json() if config is not None else None,
        "config_hash": config.config_hash() if config is not None else None,
        "outputs": sorted(str(Path(p).relative_to(out_dir)) if Path(p).is_relative_to(out_dir) else str(p) for p in outputs),
        "versions": package_versions(),
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", required=True, help="dataset JSON or synthetic:<survey>[:seed]")
    parser.add_argument("--method", required=True, choices=METHODS)
    parser.add_argument("--survey", type=survey_name)
    parser.add_argument("--scheme", choices=SCHEMES)
    parser.add_argument("--profile", choices=tuple(PROFILES), default="toy")
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--backend")
    parser.add_argument("--model")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--eval-seeds", help="comma-separated evaluation seeds")
    parser.add_argument("--n-runs", type=int)
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--bias", choices=BIAS_TAGS)
    parser.add_argument("--train-fraction", type=float)
    parser.add_argument("--split", dest="split_path", help="split JSON written by the split command")
    parser.add_argument("--strategy", choices=STRATEGIES)
    parser.add_argument("--split-seed", type=int)
    parser.add_argument("--n-test", type=int)
    parser.add_argument("--context-limit", type=int)
    parser.add_argument("--unit", action="append", dest="units", help="unit id (repeatable)")
    parser.add_argument("--arguments", help="argument corpus JSON lines")
    parser.add_argument("--invert", action="store_true", default=None)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="stancealign", description="Align policies with survey answers and report the results")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=ArgumentParser)

    ingest = sub.add_parser("ingest", help="validate a survey file and write it in canonical form")
    ingest.add_argument("--input", required=True, help="dataset JSON or synthetic:<survey>[:seed]")
    ingest.add_argument("--survey", type=survey_name)
    ingest.add_argument("--out", required=True)

    recode = sub.add_parser("recode", help="re-derive answers under another recoding scheme")
    recode.add_argument("--input", required=True)
    recode.add_argument("--survey", type=survey_name)
    recode.add_argument("--scheme", required=True, choices=SCHEMES)
    recode.add_argument("--out", required=True)

    split = sub.add_parser("split", help="write a train/test question split")
    split.add_argument("--input", required=True)
    split.add_argument("--survey", type=survey_name)
    split.add_argument("--strategy", choices=STRATEGIES)
    split.add_argument("--seed", type=int, default=0)
    split.add_argument("--n-test", type=int)
    split.add_argument("--out", required=True)

    sft_build = sub.add_parser("sft-build", help="generate an argument corpus for SFT")
    sft_build.add_argument("--input", required=True)
    sft_build.add_argument("--survey", type=survey_name)
    sft_build.add_argument("--bias", choices=BIAS_TAGS, default="default")
    sft_build.add_argument("--generator", choices=("stub", "chat"), default="stub")
    sft_build.add_argument("--seed", type=int, default=0)
    sft_build.add_argument("--split", dest="split_path", help="restrict to the training questions of this split")
    sft_build.add_argument("--max-in-flight", type=int, default=4)
    sft_build.add_argument("--out", required=True)

    train = sub.add_parser("train", help="train one unit's policy and write its checkpoint")
    _add_run_flags(train)
    train.add_argument("--out", required=True)

    evaluate = sub.add_parser("evaluate", help="score a checkpoint or a baseline on the test questions")
    _add_run_flags(evaluate)
    evaluate.add_argument("--checkpoint", help="checkpoint written by train (trained methods)")
    evaluate.add_argument("--results", help="results store: directory or gs://bucket/prefix")
    evaluate.add_argument("--out", required=True)

    pca = sub.add_parser("analyze-pca", help="fit the two-component answer space")
    pca.add_argument("--input", required=True)
    pca.add_argument("--survey", type=survey_name)
    pca.add_argument("--out", required=True)

    experiment = sub.add_parser("experiment", help="run the method matrix or a follow-up study")
    experiment.add_argument("kind", choices=EXPERIMENTS)
    experiment.add_argument("--matrix", help="run-matrix TOML or JSON (kind=matrix)")
    experiment.add_argument("--dataset", help="dataset for the follow-up studies")
    experiment.add_argument("--survey", type=survey_name)
    experiment.add_argument("--method", choices=METHODS)
    experiment.add_argument("--profile", choices=tuple(PROFILES))
    experiment.add_argument("--config", help="TOML or JSON config file")
    experiment.add_argument("--seed", type=int)
    experiment.add_argument("--arguments-dir", help="directory holding <bias>.jsonl argument corpora")
    experiment.add_argument("--results", help="results store: directory or gs://bucket/prefix")
    experiment.add_argument("--workers", type=int)
    experiment.add_argument("--alerter", choices=("stderr", "slack"), default="stderr")
    experiment.add_argument("--checkpoints", help="directory for policy checkpoints")
    experiment.add_argument("--out", required=True)

    report = sub.add_parser("report", help="render a table or figure from the results store")
    report.add_argument("--results", required=True)
    report.add_argument("--layout", required=True, choices=tuple(LAYOUTS))
    report.add_argument("--reference", help="reference scores JSON (defaults to the bundled file)")
    report.add_argument("--out", required=True)
    return parser


def _load_input(source: str, survey: Optional[str]) -> Dataset:
    return prepare_dataset(RunConfig(dataset=source, method="majority", survey=survey))


def _flag_values(args: argparse.Namespace) -> Dict[str, Any]:
    flags = {
        "dataset": args.dataset,
        "method": args.method,
        "survey": args.survey,
        "scheme": getattr(args, "scheme", None),
        "backend": getattr(args, "backend", None),
        "model": getattr(args, "model", None),
        "seed": args.seed,
        "eval_seeds": list(parse_seeds(getattr(args, "eval_seeds", None))) or None,
        "n_runs": getattr(args, "n_runs", None),
        "temperature": getattr(args, "temperature", None),
        "bias": getattr(args, "bias", None),
        "train_fraction": getattr(args, "train_fraction", None),
        "split": getattr(args, "strategy", None),
        "split_seed": getattr(args, "split_seed", None),
        "n_test": getattr(args, "n_test", None),
        "context_limit": getattr(args, "context_limit", None),
        "units": getattr(args, "units", None),
        "arguments": getattr(args, "arguments", None),
        "invert": getattr(args, "invert", None),
    }
    return {k: v for k, v in flags.items() if v is not None}


def _run_config(args: argparse.Namespace) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    return resolve_config(args.profile or file_values.pop("profile", "toy"), file_values, _flag_values(args))


def _units(config: RunConfig, dataset: Dataset):
    if not config.units:
        return list(dataset.units)
    try:
        return [dataset.unit(u) for u in config.units]
    except KeyError as e:
        raise ConfigError(f"Unknown unit id {e}")


def cmd_ingest(args, out: Path) -> List[Path]:
    dataset = _load_input(args.input, args.survey)
    path = out / "dataset.json"
    save_dataset(dataset, path)
    write_manifest(out, "ingest", {"input": args.input, "survey": dataset.survey}, [path])
    return [path]


def cmd_recode(args, out: Path) -> List[Path]:
    dataset = recode_dataset(_load_input(args.input, args.survey), args.scheme)
    path = out / f"dataset.{args.scheme}.json"
    save_dataset(dataset, path)
    write_manifest(out, "recode", {"input": args.input, "scheme": args.scheme}, [path])
    return [path]


def cmd_split(args, out: Path) -> List[Path]:
    dataset = _load_input(args.input, args.survey)
    config = RunConfig(dataset=args.input, method="majority", split=args.strategy, split_seed=args.seed, n_test=args.n_test)
    split = make_split(dataset, config)
    path = out / "split.json"
    save_split(split, path)
    write_manifest(out, "split", {"input": args.input, "strategy": split.strategy, "seed": args.seed}, [path])
    return [path]


def cmd_sft_build(args, out: Path) -> List[Path]:
    dataset = _load_input(args.input, args.survey)
    question_ids = list(load_split(args.split_path).train_ids) if args.split_path else None
    if args.generator == "chat":
        generator = ChatArgumentGenerator()
    else:
        generator = StubArgumentGenerator(seed=args.seed)
    records, uncovered = generate_argument_corpus(dataset, generator, args.bias, question_ids, args.max_in_flight)
    path = out / f"{args.bias}.jsonl"
    save_arguments(records, path)
    if uncovered:
        logger.warning("%d questions have no arguments: %s", len(uncovered), ", ".join(uncovered))
    write_manifest(out, "sft-build", {
        "input": args.input, "bias": args.bias, "generator": args.generator, "uncovered": list(uncovered),
    }, [path])
    return [path]


def _prepared(args) -> tuple:
    config = _run_config(args)
    dataset = prepare_dataset(config)
    split = load_split(args.split_path) if args.split_path else make_split(dataset, config)
    arguments = load_arguments(config.arguments) if config.arguments else None
    return config, dataset, split, arguments


def cmd_train(args, out: Path) -> List[Path]:
    config, dataset, split, arguments = _prepared(args)
    if not config.trains:
        raise ConfigError(f"Method {config.method} has nothing to train; use evaluate")
    outputs = []
    for unit in _units(config, dataset):
        result = build_responder(config, dataset, split, unit, arguments, out / "checkpoints")
        outputs.append(out / "checkpoints" / unit.unit_id / config.method / str(config.seed) / "final")
        if result.train_log is not None:
            log_path = out / "train_logs" / f"{unit.unit_id}.jsonl"
            result.train_log.save(log_path)
            outputs.append(log_path)
        if result.sft_losses:
            loss_path = out / "sft_losses" / f"{unit.unit_id}.json"
            loss_path.parent.mkdir(parents=True, exist_ok=True)
            loss_path.write_text(json.dumps(result.sft_losses) + "\n", encoding="utf-8")
            outputs.append(loss_path)
    write_manifest(out, "train", {"dataset": config.dataset, "split": args.split_path}, outputs, config)
    return outputs


def cmd_evaluate(args, out: Path) -> List[Path]:
    config, dataset, split, arguments = _prepared(args)
    if config.trains and not args.checkpoint:
        raise ConfigError(f"Method {config.method} needs --checkpoint from the train command")
    records = []
    for unit in _units(config, dataset):
        if args.checkpoint:
            checkpoint = Path(args.checkpoint)
            if checkpoint.is_dir():
                checkpoint = checkpoint / unit.unit_id / config.method / str(config.seed) / "final"
            result = CellResult([], load_policy(checkpoint))
        else:
            result = build_responder(config, dataset, split, unit, arguments)
        evaluate_responder(config, dataset, split, unit, result)
        records.extend(cell_records(config, dataset, unit, result))
    if args.results:
        make_store(args.results).append_many(records)
    scores = pd.DataFrame(
        [r for r in records if r["record"] == "score"],
        columns=["unit_id", "method", "run_index", "seed", "macro_f1", "accuracy", "neutral_base_rate"],
    )
    outputs = write_table(scores, out, "scores")
    write_manifest(out, "evaluate", {
        "dataset": config.dataset, "split": args.split_path, "checkpoint": args.checkpoint,
    }, outputs, config)
    return outputs


def cmd_analyze_pca(args, out: Path) -> List[Path]:
    dataset = _load_input(args.input, args.survey)
    matrix = AnswerMatrix.from_dataset(dataset)
    model = fit_space(matrix)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "space.json"
    with open(model_path, "w", encoding="utf-8") as f:
        json.dump(model.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
    rows = []
    for unit_id, vector, group, party in zip(matrix.unit_ids, matrix.values, matrix.groups, matrix.parties):
        x, y = project(model, vector)
        rows.append({"unit_id": unit_id, "group": group.value, "party": party, "x": x, "y": y})
    outputs = [model_path] + write_table(pd.DataFrame(rows, columns=["unit_id", "group", "party", "x", "y"]), out, "positions")
    write_manifest(out, "analyze-pca", {"input": args.input, "excluded": list(matrix.excluded)}, outputs)
    return outputs


def _arguments_dir(path: Optional[str]) -> Dict[str, list]:
    if not path:
        return {}
    corpora = {}
    for bias in BIAS_TAGS:
        file = Path(path) / f"{bias}.jsonl"
        if file.exists():
            corpora[bias] = load_arguments(file)
    return corpora


def cmd_experiment(args, out: Path) -> List[Path]:
    store = make_store(args.results or out / "results")
    kwargs = {"checkpoint_root": Path(args.checkpoints) if args.checkpoints else None}
    arguments = _arguments_dir(args.arguments_dir)
    alerter = make_alerter(args.alerter)
    inputs = {"kind": args.kind, "results": str(args.results or out / "results")}
    outputs: List[Path] = []

    if args.kind == "matrix":
        if not args.matrix:
            raise ConfigError("experiment matrix needs --matrix")
        configs = load_run_matrix(args.matrix, args.profile)
        summary = run_method_matrix(configs, store, args.workers, alerter, arguments, **kwargs)
        outputs += write_table(pd.DataFrame(
            summary.failures, columns=["cell", "error_type", "message"],
        ), out, "failures")
        inputs.update(matrix=args.matrix, completed=summary.completed, skipped=summary.skipped, failed=summary.failed)
        write_manifest(out, "experiment", inputs, outputs)
        if summary.failed:
            raise RuntimeError(f"{summary.failed} matrix cells failed")
        return outputs

    if not args.dataset:
        raise ConfigError(f"experiment {args.kind} needs --dataset")
    args.method = args.method or "sft+grpo"
    base = _run_config(args)
    if args.kind == "bias":
        dataset = prepare_dataset(base)
        for bias in BIAS_TAGS:
            if bias not in arguments:
                logger.info("No %s argument corpus given; using the stub generator", bias)
                arguments[bias], _ = generate_argument_corpus(dataset, StubArgumentGenerator(seed=base.seed), bias)
        grouped, displacements = run_bias_experiment(base, arguments, store, args.workers, alerter=alerter, **kwargs)
        outputs += write_table(grouped, out, "bias_groups") + write_table(displacements, out, "bias_displacements")
    elif args.kind == "inversion":
        outputs += write_table(run_inversion_experiment(base, store, args.workers, alerter=alerter, **kwargs), out, "inversion")
    elif args.kind == "trainsize":
        outputs += write_table(run_trainsize_ablation(base, store, workers=args.workers, alerter=alerter, **kwargs), out, "trainsize")
    else:
        comparison = run_recoding_comparison(base, store, workers=args.workers, alerter=alerter, **kwargs)
        outputs += write_table(comparison.scores, out, "recoding_scores")
        for scheme, confusion in comparison.confusions.items():
            outputs += write_table(confusion.reset_index(), out, f"confusion_{scheme}")
        summary = {"neutral_counts": comparison.neutral_counts, "regressions": comparison.regressions}
        path = out / "recoding_summary.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")
        outputs.append(path)
    write_manifest(out, "experiment", inputs, outputs, base)
    return outputs


def cmd_report(args, out: Path) -> List[Path]:
    store = make_store(args.results)
    reference = load_config_file(args.reference) if args.reference else None
    result = build_report(store.records(), args.layout, out, reference)
    write_manifest(out, "report", {"results": args.results, "layout": args.layout}, result.files)
    return result.files


COMMANDS = {
    "ingest": cmd_ingest,
    "recode": cmd_recode,
    "split": cmd_split,
    "sft-build": cmd_sft_build,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "analyze-pca": cmd_analyze_pca,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s: %(name)s: %(message)s",
    )
    try:
        outputs = COMMANDS[args.verb](args, Path(args.out))
    except ValueError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.debug("Command %s failed", args.verb, exc_info=True)
        print(f"ERROR: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    for path in outputs:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
