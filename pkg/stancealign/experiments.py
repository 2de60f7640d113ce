"""Experiment orchestration: the per-unit method matrix and the follow-up studies.

Every matrix cell is one (RunConfig, unit) pair. Cells run on a bounded worker
pool. Each cell's records reach the results store in one write, in submission
order, so a rerun that skips completed cells leaves an identical store.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .alerters import Alerter, StderrAlerter
from .baselines import IclResponder, MajorityResponder, RandomResponder
from .config import RunConfig, default_split, default_test_size, worker_count
from .errors import ConfigError, RecodeError, StanceAlignError, UnsupportedOperationError
from .grpo import TrainLog, grpo_train
from .metrics import RunScores, confusion_matrix, evaluate_unit
from .policies import Responder, make_policy
from .prompts import prompt_for
from .sft import ArgumentRecord, StubArgumentGenerator, build_sft_corpus, generate_argument_corpus, sft_train
from .space import AnswerMatrix, SpaceModel, agent_vector, displacement_vectors, fit_space, project
from .splits import Split, split_fixed_external, split_random, split_topic_stratified, subsample_train_ids
from .stances import BINARY, Stance
from .stats import regress_vs_neutral_rate
from .storages import ResultStore
from .surveys import Dataset, Group, UnitProfile, invert_answers, load_dataset, recode_dataset
from .synthetic import synthetic_dataset

logger = logging.getLogger(__name__)

SYNTHETIC_PREFIX = "synthetic:"


def prepare_dataset(config: RunConfig, base: Optional[Dataset] = None) -> Dataset:
    """Load (or reuse) the dataset and apply the config's recoding scheme and inversion."""
    if base is not None:
        dataset = base
    elif config.dataset.startswith(SYNTHETIC_PREFIX):
        name, _, seed = config.dataset[len(SYNTHETIC_PREFIX):].partition(":")
        try:
            dataset = synthetic_dataset(name, seed=int(seed or 0))
        except KeyError:
            raise ConfigError(f"Unknown synthetic dataset {name!r}")
    else:
        dataset = load_dataset(config.dataset, config.survey)
    if config.survey is not None and dataset.survey != config.survey:
        raise ConfigError(f"Config expects a {config.survey} dataset, got {dataset.survey}")
    if config.scheme is not None and config.scheme != dataset.recoding_scheme:
        try:
            dataset = recode_dataset(dataset, config.scheme)
        except RecodeError as e:
            raise ConfigError(f"Dataset cannot be recoded under '{config.scheme}': {e}")
    if config.invert:
        dataset = invert_answers(dataset)
    return dataset


def make_split(dataset: Dataset, config: RunConfig) -> Split:
    strategy = config.split or default_split(dataset.survey)
    if strategy == "topic_stratified":
        return split_topic_stratified(dataset, config.split_seed)
    if strategy == "fixed_external":
        return split_fixed_external(dataset)
    n_test = config.n_test or default_test_size(dataset.survey) or max(1, len(dataset.questions) // 6)
    return split_random(dataset, n_test, config.split_seed)


def unit_train_ids(split: Split, unit: UnitProfile, config: RunConfig) -> List[str]:
    train_ids = split.unit_train_ids(unit)
    if config.train_fraction < 1.0:
        train_ids = subsample_train_ids(train_ids, config.train_fraction, config.seed)
    return train_ids


@dataclass
class CellResult:
    scores: List[RunScores]
    responder: Responder
    greedy: Dict[str, Optional[Stance]] = field(default_factory=dict)
    train_log: Optional[TrainLog] = None
    sft_losses: List[float] = field(default_factory=list)


def build_responder(
    config: RunConfig,
    dataset: Dataset,
    split: Split,
    unit: UnitProfile,
    arguments: Optional[Sequence[ArgumentRecord]] = None,
    checkpoint_dir: Optional[Path] = None,
) -> CellResult:
    """Fresh responder for one unit: a baseline, or a policy after optional SFT and optional GRPO."""
    train_ids = unit_train_ids(split, unit, config)
    train_log = None
    sft_losses: List[float] = []
    if config.method == "majority":
        responder: Responder = MajorityResponder.for_unit(unit, train_ids)
    elif config.method == "random":
        responder = RandomResponder()
    elif config.method == "icl":
        responder = IclResponder(dataset, unit, train_ids, config.context_limit, config.seed)
    else:
        policy = make_policy(config.backend, dataset.label_space, dataset.question_ids, seed=config.seed)
        if config.method in ("sft", "sft+grpo"):
            if arguments is None:
                arguments, _ = generate_argument_corpus(
                    dataset, StubArgumentGenerator(seed=config.seed), config.bias, train_ids,
                )
            corpus = build_sft_corpus(dataset, unit, train_ids, arguments, config.bias)
            policy, sft_losses = sft_train(policy, corpus, config.sft)
        if config.method in ("grpo", "sft+grpo"):
            unit_split = Split(tuple(train_ids), split.test_ids, split.strategy, split.seed)
            policy, train_log = grpo_train(
                policy, dataset, unit, unit_split, config.reward, config.grpo,
                checkpoint_dir=checkpoint_dir, method=config.method,
            )
        if checkpoint_dir is not None:
            policy.save(Path(checkpoint_dir) / unit.unit_id / config.method / str(config.seed) / "final")
        responder = policy
    return CellResult([], responder, train_log=train_log, sft_losses=sft_losses)


def evaluate_responder(config: RunConfig, dataset: Dataset, split: Split, unit: UnitProfile, result: CellResult) -> CellResult:
    """Fill in the evaluation runs and the greedy test answers of ``result``."""
    responder = result.responder
    test_ids = split.unit_test_ids(unit)
    result.scores = evaluate_unit(
        responder, dataset, unit, test_ids,
        n_runs=config.n_runs, temperature=config.temperature, seeds=config.seeds, method=config.method,
    )
    result.greedy = {
        qid: responder.greedy_stance(prompt_for(dataset, dataset.question(qid), unit.country))
        for qid in test_ids
    }
    return result


def train_and_evaluate(
    config: RunConfig,
    dataset: Dataset,
    split: Split,
    unit: UnitProfile,
    arguments: Optional[Sequence[ArgumentRecord]] = None,
    checkpoint_dir: Optional[Path] = None,
) -> CellResult:
    result = build_responder(config, dataset, split, unit, arguments, checkpoint_dir)
    return evaluate_responder(config, dataset, split, unit, result)


def _cell_fields(config: RunConfig, dataset: Dataset, unit: UnitProfile) -> dict:
    return {
        "config_hash": config.config_hash(),
        "dataset": config.dataset,
        "survey": dataset.survey,
        "scheme": dataset.recoding_scheme,
        "method": config.method,
        "model": config.model_name,
        "bias": config.bias,
        "train_fraction": config.train_fraction,
        "inverted": config.invert,
        "unit_id": unit.unit_id,
        "group": unit.group.value,
        "party": unit.party_or_ideology,
    }


def _failure_key(record: dict) -> Tuple[str, str, str, str]:
    return record.get("config_hash", ""), record.get("unit_id", ""), record.get("error_type", ""), record.get("message", "")


def cell_records(
    config: RunConfig,
    dataset: Dataset,
    unit: UnitProfile,
    result: CellResult,
    space: Optional[SpaceModel] = None,
) -> List[dict]:
    base = _cell_fields(config, dataset, unit)
    records = []
    for s in result.scores:
        row = dict(base, record="score")
        row.update(s.to_json())
        records.append(row)
    if result.train_log is not None and len(result.train_log):
        rewards = result.train_log.mean_rewards
        tenth = max(1, len(rewards) // 10)
        records.append(dict(
            base,
            record="train",
            steps=len(rewards),
            first_reward=float(np.mean(rewards[:tenth])),
            final_reward=float(np.mean(rewards[-tenth:])),
            final_sft_loss=result.sft_losses[-1] if result.sft_losses else None,
        ))
    if space is not None and all(q in unit.responses for q in space.question_ids):
        human = project(space, agent_vector(unit, space.question_ids, {}))
        agent = project(space, agent_vector(unit, space.question_ids, result.greedy))
        records.append(dict(
            base, record="position",
            human_x=human[0], human_y=human[1], agent_x=agent[0], agent_y=agent[1],
        ))
    return records


@dataclass
class MatrixSummary:
    completed: int = 0
    skipped: int = 0
    failed: int = 0
    failures: List[Tuple[str, str, str]] = field(default_factory=list)


def _space_for(dataset: Dataset) -> Optional[SpaceModel]:
    if dataset.label_space != BINARY:
        return None
    try:
        return fit_space(AnswerMatrix.from_dataset(dataset))
    except StanceAlignError as e:
        logger.warning("No political space for %s: %s", dataset.survey, e)
        return None


def run_method_matrix(
    configs: Sequence[RunConfig],
    store: ResultStore,
    workers: Optional[int] = None,
    alerter: Optional[Alerter] = None,
    arguments: Optional[Mapping[str, Sequence[ArgumentRecord]]] = None,
    datasets: Optional[Mapping[str, Dataset]] = None,
    checkpoint_root: Optional[Path] = None,
) -> MatrixSummary:
    """Run every (config, unit) cell not already completed in ``store``.

    ``arguments`` maps bias tags to argument corpora; trained methods fall back
    to the deterministic stub corpus when a tag is missing. ``datasets`` maps
    config dataset ids to already-loaded datasets.
    """
    alerter = alerter or StderrAlerter()
    done = store.completed_cells()
    known_failures = {_failure_key(r) for r in store.records("failure")}
    summary = MatrixSummary()

    prepared: Dict[Tuple[str, Optional[str], bool], Tuple[Dataset, Split, Optional[SpaceModel]]] = {}
    cells = []
    for config in configs:
        key = (config.dataset, config.scheme, config.invert)
        if key not in prepared:
            dataset = prepare_dataset(config, (datasets or {}).get(config.dataset))
            reference = dataset
            if config.invert:
                reference = prepare_dataset(config.with_overrides(invert=False), (datasets or {}).get(config.dataset))
            prepared[key] = (dataset, make_split(dataset, config), _space_for(reference))
        dataset, split, space = prepared[key]
        wanted = set(config.units)
        for unit in dataset.units:
            if wanted and unit.unit_id not in wanted:
                continue
            if (config.config_hash(), unit.unit_id) in done:
                summary.skipped += 1
                continue
            cells.append((config, dataset, split, space, unit))
    logger.info("Running %d matrix cells (%d already complete)", len(cells), summary.skipped)

    def run_cell(cell):
        config, dataset, split, space, unit = cell
        corpus = (arguments or {}).get(config.bias)
        checkpoint_dir = None
        if checkpoint_root is not None:
            checkpoint_dir = Path(checkpoint_root) / dataset.survey
        try:
            result = train_and_evaluate(config, dataset, split, unit, corpus, checkpoint_dir)
            return cell_records(config, dataset, unit, result, space), None
        except Exception as e:
            logger.exception("Cell %s/%s/%s failed", config.dataset, config.method, unit.unit_id)
            return None, e

    with ThreadPoolExecutor(max_workers=worker_count(workers)) as pool:
        for cell, (records, error) in zip(cells, pool.map(run_cell, cells)):
            config, dataset, _, _, unit = cell
            if error is None:
                store.append_many(records)
                summary.completed += 1
                continue
            summary.failed += 1
            cell_id = f"{config.dataset}/{config.method}/{unit.unit_id}"
            summary.failures.append((cell_id, type(error).__name__, str(error)))
            failure = dict(
                _cell_fields(config, dataset, unit),
                record="failure", error_type=type(error).__name__, message=str(error),
            )
            if _failure_key(failure) not in known_failures:
                store.append(failure)
                known_failures.add(_failure_key(failure))
            alerter.alert(f"Matrix cell failed: {error}", cell_id, failure)
    return summary


def scores_frame(records: Iterable[dict]) -> pd.DataFrame:
    rows = [r for r in records if r.get("record") == "score"]
    columns = [
        "config_hash", "dataset", "survey", "scheme", "method", "model", "bias", "train_fraction",
        "inverted", "unit_id", "group", "party", "run_index", "seed", "macro_f1", "accuracy",
        "drop_neutral_f1", "drop_neutral_accuracy", "neutral_base_rate",
    ]
    frame = pd.DataFrame(rows, columns=columns + ["per_class_recall", "predictions", "truths"])
    return frame.sort_values(["survey", "method", "model", "bias", "train_fraction", "inverted", "unit_id", "run_index"],
                             kind="mergesort").reset_index(drop=True)


def unit_means(frame: pd.DataFrame, keys: Sequence[str] = ("survey", "method", "model", "unit_id", "group")) -> pd.DataFrame:
    """Mean of each score over the evaluation runs of every unit."""
    return (
        frame.groupby(list(keys), dropna=False)[["macro_f1", "accuracy", "neutral_base_rate"]]
        .mean()
        .reset_index()
    )


def _records_for(store: ResultStore, configs: Sequence[RunConfig]) -> List[dict]:
    hashes = {c.config_hash() for c in configs}
    return [r for r in store.records() if r.get("config_hash") in hashes]


def run_bias_experiment(
    base: RunConfig,
    arguments: Mapping[str, Sequence[ArgumentRecord]],
    store: ResultStore,
    workers: Optional[int] = None,
    biases: Sequence[str] = ("default", "progressive", "conservative"),
    **matrix_kwargs,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """SFT+GRPO per unit under each argument corpus; returns (group scores, group displacements)."""
    missing = [b for b in biases if b not in arguments]
    if missing:
        raise ConfigError(f"Missing argument corpora for: {', '.join(missing)}")
    configs = [base.with_overrides(method="sft+grpo", bias=b) for b in biases]
    run_method_matrix(configs, store, workers, arguments=arguments, **matrix_kwargs)
    records = _records_for(store, configs)

    means = unit_means(scores_frame(records), ("bias", "unit_id", "group"))
    grouped = means.groupby(["bias", "group"])["macro_f1"].agg(["mean", "std", "count"]).reset_index()
    grouped = _complete_grid(grouped, biases)

    rows = []
    for bias in biases:
        pairs = [
            ((r["human_x"], r["human_y"]), (r["agent_x"], r["agent_y"]), Group(r["group"]))
            for r in records if r["record"] == "position" and r["bias"] == bias
        ]
        for group, (dx, dy) in displacement_vectors(pairs).items():
            rows.append({"bias": bias, "group": group.value, "dx": dx, "dy": dy})
    return grouped, pd.DataFrame(rows, columns=["bias", "group", "dx", "dy"])


def _complete_grid(grouped: pd.DataFrame, biases: Sequence[str]) -> pd.DataFrame:
    grid = pd.MultiIndex.from_product([list(biases), [g.value for g in Group]], names=["bias", "group"])
    return grouped.set_index(["bias", "group"]).reindex(grid).reset_index()


def run_inversion_experiment(
    base: RunConfig,
    store: ResultStore,
    workers: Optional[int] = None,
    **matrix_kwargs,
) -> pd.DataFrame:
    """Per-unit F1 on original versus inverted answers, ordered by the unit's first coordinate."""
    original = base.with_overrides(method="sft+grpo", invert=False)
    inverted = base.with_overrides(method="sft+grpo", invert=True)
    dataset = prepare_dataset(original, (matrix_kwargs.get("datasets") or {}).get(base.dataset))
    if dataset.label_space != BINARY:
        raise UnsupportedOperationError("The inversion experiment needs a binary dataset")
    space = fit_space(AnswerMatrix.from_dataset(dataset))
    run_method_matrix([original, inverted], store, workers, **matrix_kwargs)

    frame = unit_means(scores_frame(_records_for(store, [original, inverted])), ("inverted", "unit_id", "group"))
    rows = []
    for unit in dataset.units:
        if not all(q in unit.responses for q in space.question_ids):
            continue
        rows_for_unit = frame[frame["unit_id"] == unit.unit_id]
        scores = {bool(k): float(v) for k, v in zip(rows_for_unit["inverted"], rows_for_unit["macro_f1"])}
        if False not in scores or True not in scores:
            continue
        f1_orig, f1_inv = scores[False], scores[True]
        pc1 = project(space, agent_vector(unit, space.question_ids, {}))[0]
        row = {
            "unit_id": unit.unit_id, "group": unit.group.value, "party": unit.party_or_ideology,
            "f1_orig": f1_orig, "f1_inv": f1_inv, "delta_f1": f1_inv - f1_orig, "pc1": pc1,
        }
        rows.append(row)
    result = pd.DataFrame(rows, columns=["unit_id", "group", "party", "f1_orig", "f1_inv", "delta_f1", "pc1"])
    result = result.sort_values(["pc1", "unit_id"], kind="mergesort").reset_index(drop=True)
    known = {(r["config_hash"], r["unit_id"]) for r in store.records("inversion")}
    store.append_many([
        dict(row, record="inversion", config_hash=original.config_hash(), dataset=base.dataset)
        for row in result.to_dict("records")
        if (original.config_hash(), row["unit_id"]) not in known
    ])
    return result


def run_trainsize_ablation(
    base: RunConfig,
    store: ResultStore,
    fractions: Sequence[float] = (0.10, 0.25, 0.50, 0.75, 1.00),
    workers: Optional[int] = None,
    **matrix_kwargs,
) -> pd.DataFrame:
    """Mean F1 per unit and training fraction over nested seeded subsets."""
    for fraction in fractions:
        if not 0.0 < fraction <= 1.0:
            raise ConfigError(f"Training fractions must be in (0, 1], got {fraction}")
    dataset = prepare_dataset(base, (matrix_kwargs.get("datasets") or {}).get(base.dataset))
    split = make_split(dataset, base)
    for unit in dataset.units:
        n = len(split.unit_train_ids(unit))
        for fraction in fractions:
            if math.floor(fraction * n) == 0:
                raise ConfigError(f"Fraction {fraction} leaves unit {unit.unit_id} without training questions")
    configs = [base.with_overrides(method="sft+grpo", train_fraction=f) for f in fractions]
    run_method_matrix(configs, store, workers, **matrix_kwargs)
    means = unit_means(scores_frame(_records_for(store, configs)), ("train_fraction", "unit_id", "group", "party"))
    return means.sort_values(["party", "unit_id", "train_fraction"], kind="mergesort").reset_index(drop=True)


@dataclass
class RecodingComparison:
    scores: pd.DataFrame
    confusions: Dict[str, pd.DataFrame]
    regressions: Dict[str, dict]
    neutral_counts: Dict[str, int]


def run_recoding_comparison(
    base: RunConfig,
    store: ResultStore,
    schemes: Sequence[str] = ("conservative", "aggressive"),
    workers: Optional[int] = None,
    **matrix_kwargs,
) -> RecodingComparison:
    configs = [base.with_overrides(scheme=s) for s in schemes]
    neutral_counts = {}
    for config in configs:
        dataset = prepare_dataset(config, (matrix_kwargs.get("datasets") or {}).get(base.dataset))
        neutral_counts[config.scheme] = sum(
            s is Stance.NEUTRAL for u in dataset.units for s in u.responses.values()
        )
    run_method_matrix(configs, store, workers, **matrix_kwargs)

    frame = scores_frame(_records_for(store, configs))
    confusions, regressions = {}, {}
    for config in configs:
        rows = frame[frame["scheme"] == config.scheme]
        predictions = [None if p is None else Stance(p) for ps in rows["predictions"] for p in ps]
        truths = [Stance(t) for ts in rows["truths"] for t in ts]
        label_space = prepare_dataset(config, (matrix_kwargs.get("datasets") or {}).get(base.dataset)).label_space
        if truths:
            confusions[config.scheme] = confusion_matrix(predictions, truths, label_space)
        means = unit_means(rows)
        if len(means) >= 3 and means["neutral_base_rate"].nunique() > 1:
            regressions[config.scheme] = regress_vs_neutral_rate(
                list(zip(means["neutral_base_rate"], means["macro_f1"]))
            ).to_json()
    return RecodingComparison(
        scores=unit_means(frame, ("scheme", "unit_id", "group")),
        confusions=confusions,
        regressions=regressions,
        neutral_counts=neutral_counts,
    )
