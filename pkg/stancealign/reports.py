"""Report layouts over result-store records.

Tables are written as CSV and JSON, figures as SVG and PNG with the plotted
numbers alongside as CSV. Cells without results are written as ``missing``.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Union

import matplotlib
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .config import METHODS
from .errors import MetricError, RankError, ReportError
from .experiments import scores_frame
from .metrics import confusion_matrix
from .space import displacement_vectors
from .stances import BINARY, TERNARY, Stance
from .stats import regress_vs_neutral_rate, significance_report
from .surveys import GROUP_ORDER, SURVEYS, Group

matplotlib.use("Agg")

logger = logging.getLogger(__name__)

MISSING = "missing"
REFERENCE_PATH = Path(__file__).parent / "data" / "reference_scores.json"
DEFAULT_SCHEMES = {"ANES": "conservative"}
BIASES = ("default", "progressive", "conservative")
GROUP_COLORS = {"Left": "tab:red", "Center": "tab:purple", "Right": "tab:blue"}

plt.rcParams["svg.hashsalt"] = "stancealign"


@dataclass
class ReportOutput:
    layout: str
    files: List[Path] = field(default_factory=list)


def load_reference(path: Union[str, Path] = REFERENCE_PATH) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def dataset_column(survey: str, scheme: Optional[str]) -> str:
    if scheme in (None, "none", DEFAULT_SCHEMES.get(survey, "none")):
        return survey
    return f"{survey} ({scheme})"


def _column_order(columns: Iterable[str]) -> List[str]:
    def key(name: str):
        survey = name.split(" (")[0]
        return (SURVEYS.index(survey) if survey in SURVEYS else len(SURVEYS), name)
    return sorted(set(columns), key=key)


def _method_order(methods: Iterable[str]) -> List[str]:
    return sorted(set(methods), key=lambda m: (METHODS.index(m) if m in METHODS else len(METHODS), m))


def _frame(records: Sequence[dict]) -> pd.DataFrame:
    frame = scores_frame(records)
    if frame.empty:
        raise ReportError("No score records in the results store")
    frame["column"] = [dataset_column(s, c) for s, c in zip(frame["survey"], frame["scheme"])]
    return frame


def default_condition(frame: pd.DataFrame) -> pd.DataFrame:
    """Rows of the main matrix: default arguments, full training set, original answers."""
    mask = (frame["bias"] == "default") & (frame["train_fraction"] == 1.0) & (~frame["inverted"].astype(bool))
    return frame[mask]


def run_level(frame: pd.DataFrame, metric: str, keys: Sequence[str] = ("model", "method", "column")) -> pd.DataFrame:
    """Unit-averaged score per evaluation run."""
    rows = frame.dropna(subset=[metric])
    return rows.groupby(list(keys) + ["run_index"])[metric].mean().reset_index()


def _cell(mean: float, std: float) -> str:
    std = 0.0 if math.isnan(std) else std
    return f"{mean * 100:.2f} ({std * 100:.2f})"


def score_table(records: Sequence[dict], metric: str, reference: Optional[Dict[str, Any]] = None) -> pd.DataFrame:
    """Mean (std) percent per (model, method) and dataset column, std taken across runs."""
    frame = default_condition(_frame(records))
    runs = run_level(frame, metric)
    if runs.empty:
        raise ReportError(f"No results carry {metric}")
    stats = runs.groupby(["model", "method", "column"])[metric].agg(["mean", "std"]).reset_index()
    columns = _column_order(stats["column"])
    if reference is not None and metric in reference:
        columns = _column_order(columns + list(reference.get("surveys", [])))

    rows = []
    for model in sorted(stats["model"].unique()):
        for method in _method_order(stats.loc[stats["model"] == model, "method"]):
            row = {"model": model, "method": method, "source": "computed"}
            cells = stats[(stats["model"] == model) & (stats["method"] == method)].set_index("column")
            for column in columns:
                row[column] = _cell(cells.at[column, "mean"], cells.at[column, "std"]) if column in cells.index else MISSING
            rows.append(row)
    if reference is not None and metric in reference:
        for entry in reference[metric]:
            row = {"model": entry["model"], "method": entry["method"], "source": "reference"}
            for column in columns:
                value = entry.get(column)
                row[column] = f"{value[0]:.2f} ({value[1]:.2f})" if value else MISSING
            rows.append(row)
        for method, values in sorted(reference.get("baselines", {}).items()):
            if metric != "macro_f1":
                continue
            row = {"model": "-", "method": method, "source": "reference"}
            for column in columns:
                row[column] = f"{values[column]:.2f}" if column in values else MISSING
            rows.append(row)
    return pd.DataFrame(rows, columns=["model", "method", "source"] + columns)


def significance_table(records: Sequence[dict], metric: str, target: str = "sft+grpo", alpha: float = 0.05) -> pd.DataFrame:
    """One-tailed Welch test of ``target`` against every other method, Bonferroni over all tests."""
    runs = run_level(default_condition(_frame(records)), metric)
    tests = []
    for (model, column), block in runs.groupby(["model", "column"]):
        mine = block.loc[block["method"] == target, metric].to_numpy()
        if len(mine) == 0:
            continue
        for method in _method_order(block["method"]):
            if method == target:
                continue
            tests.append((model, column, method, mine, block.loc[block["method"] == method, metric].to_numpy()))
    if not tests:
        raise ReportError(f"No {target} results to compare against")
    rows = []
    for model, column, method, mine, theirs in tests:
        report = significance_report(mine, theirs, len(tests), f"{target} > {method}", model, column, alpha)
        rows.append(report.to_json())
    frame = pd.DataFrame(rows)
    return frame[["model", "dataset", "comparison", "p_value", "cohens_d", "tier", "m",
                  "significant_bonferroni", "significant_uncorrected", "degenerate"]]


def regression_table(records: Sequence[dict]) -> pd.DataFrame:
    """Score against Neutral base rate over units, per dataset column, method and model."""
    frame = default_condition(_frame(records))
    frame = frame[frame["survey"] != "smartvote"]
    if frame.empty:
        raise ReportError("Regression needs results on a dataset with a Neutral class")
    means = frame.groupby(["column", "method", "model", "unit_id"])[["macro_f1", "accuracy", "neutral_base_rate"]].mean().reset_index()
    rows = []
    for (column, method, model), block in means.groupby(["column", "method", "model"]):
        for metric in ("macro_f1", "accuracy"):
            row = {"dataset": column, "method": method, "model": model, "metric": metric}
            try:
                fit = regress_vs_neutral_rate(list(zip(block["neutral_base_rate"], block[metric])))
                row.update(fit.to_json())
                row["note"] = ""
            except (MetricError, RankError) as e:
                row["note"] = str(e)
            rows.append(row)
    columns = ["dataset", "method", "model", "metric", "n", "intercept", "slope", "slope_se", "slope_ci95",
               "r", "r_squared", "p_value", "rmse", "note"]
    return pd.DataFrame(rows, columns=columns)


def _clean(value: Any) -> Any:
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return _clean(value.item())
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def write_table(frame: pd.DataFrame, out_dir: Path, name: str) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    json_path = out_dir / f"{name}.json"
    frame.to_csv(csv_path, index=False, na_rep=MISSING, lineterminator="\n")
    rows = [{k: _clean(v) for k, v in row.items()} for row in frame.to_dict("records")]
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(rows, f, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False)
        f.write("\n")
    return [csv_path, json_path]


def save_figure(fig, out_dir: Path, name: str) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    svg_path = out_dir / f"{name}.svg"
    png_path = out_dir / f"{name}.png"
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    fig.savefig(png_path, format="png", dpi=150, metadata={"Software": None})
    plt.close(fig)
    return [svg_path, png_path]


def _table_layout(metric: str, name: str):
    def build(records, out_dir, reference):
        return write_table(score_table(records, metric, reference), out_dir, name)
    return build


def _table8(records, out_dir, reference):
    return write_table(significance_table(records, "macro_f1"), out_dir, "table8")


def _table10(records, out_dir, reference):
    return write_table(significance_table(records, "accuracy"), out_dir, "table10")


def _table11(records, out_dir, reference):
    return write_table(regression_table(records), out_dir, "table11")


def _position_rows(records: Sequence[dict], method: str = "sft+grpo") -> List[dict]:
    rows = [r for r in records if r.get("record") == "position" and r.get("method") == method]
    if not rows:
        raise ReportError(f"No {method} position records in the results store")
    return rows


def _fig2(records, out_dir, reference):
    positions = _position_rows(records)
    points = []
    seen = set()
    for r in sorted(positions, key=lambda r: (r["inverted"], r["bias"], r["unit_id"])):
        if r["bias"] != "default" or r["train_fraction"] != 1.0:
            continue
        if not r["inverted"] and r["unit_id"] not in seen:
            seen.add(r["unit_id"])
            points.append({"unit_id": r["unit_id"], "kind": "human", "x": r["human_x"], "y": r["human_y"], "group": r["group"]})
        points.append({
            "unit_id": r["unit_id"], "kind": "inverted" if r["inverted"] else "agent",
            "x": r["agent_x"], "y": r["agent_y"], "group": r["group"],
        })
    if not points:
        raise ReportError("No default-condition positions to plot")
    data = pd.DataFrame(points, columns=["unit_id", "kind", "x", "y", "group"])

    fig, ax = plt.subplots(figsize=(7, 6))
    humans = data[data["kind"] == "human"].set_index("unit_id")
    agents = data[data["kind"] == "agent"].set_index("unit_id")
    agents = agents[~agents.index.duplicated()]
    for unit_id in agents.index.intersection(humans.index):
        h, a = humans.loc[unit_id], agents.loc[unit_id]
        ax.plot([h["x"], a["x"]], [h["y"], a["y"]], color="lightgray", linewidth=0.6, zorder=1)
    markers = {"human": "o", "agent": "x", "inverted": "^"}
    for (kind, group), block in data.groupby(["kind", "group"]):
        ax.scatter(block["x"], block["y"], marker=markers[kind], color=GROUP_COLORS.get(group, "gray"),
                   label=f"{group} {kind}", s=18, zorder=2)
    pairs = [
        ((r["human_x"], r["human_y"]), (r["agent_x"], r["agent_y"]), Group(r["group"]))
        for r in positions if r["bias"] == "default" and not r["inverted"] and r["train_fraction"] == 1.0
    ]
    for group, (dx, dy) in displacement_vectors(pairs).items():
        block = humans[humans["group"] == group.value]
        if len(block):
            ax.annotate("", xy=(block["x"].mean() + dx, block["y"].mean() + dy),
                        xytext=(block["x"].mean(), block["y"].mean()),
                        arrowprops={"arrowstyle": "->", "color": GROUP_COLORS[group.value], "linewidth": 2})
    ax.set_xlabel("PC1")
    ax.set_ylabel("PC2")
    ax.legend(fontsize=7)
    files = save_figure(fig, out_dir, "fig2")
    return files + _write_csv(data, out_dir, "fig2")


def _write_csv(frame: pd.DataFrame, out_dir: Path, name: str) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.csv"
    frame.to_csv(path, index=False, na_rep=MISSING, lineterminator="\n")
    return [path]


def group_scores(frame: pd.DataFrame, keys: Sequence[str]) -> pd.DataFrame:
    means = frame.groupby(list(keys) + ["unit_id", "group"])["macro_f1"].mean().reset_index()
    return means.groupby(list(keys) + ["group"])["macro_f1"].agg(["mean", "std", "count"]).reset_index()


def _fig3(records, out_dir, reference):
    data = group_scores(default_condition(_frame(records)), ("column", "method"))
    columns = _column_order(data["column"])
    methods = _method_order(data["method"])
    fig, axes = plt.subplots(1, len(columns), figsize=(4 * len(columns), 4), squeeze=False)
    width = 0.8 / max(len(methods), 1)
    for ax, column in zip(axes[0], columns):
        block = data[data["column"] == column]
        for i, method in enumerate(methods):
            rows = block[block["method"] == method].set_index("group")
            heights = [rows.at[g.value, "mean"] if g.value in rows.index else 0.0 for g in GROUP_ORDER]
            ax.bar(np.arange(len(GROUP_ORDER)) + i * width, heights, width, label=method)
        ax.set_xticks(np.arange(len(GROUP_ORDER)) + 0.4 - width / 2)
        ax.set_xticklabels([g.value for g in GROUP_ORDER])
        ax.set_title(column)
        ax.set_ylim(0, 1)
    axes[0][0].set_ylabel("macro-F1")
    axes[0][-1].legend(fontsize=7)
    files = save_figure(fig, out_dir, "fig3")
    return files + _write_csv(data, out_dir, "fig3")


def recall_by_class(frame: pd.DataFrame) -> pd.DataFrame:
    rows = []
    for (column, method), block in frame.groupby(["column", "method"]):
        for stance in TERNARY:
            values = [r[stance.value] for r in block["per_class_recall"] if stance.value in r]
            rows.append({
                "column": column, "method": method, "stance": stance.value,
                "recall": float(np.mean(values)) if values else float("nan"),
            })
    return pd.DataFrame(rows, columns=["column", "method", "stance", "recall"])


def _fig4(records, out_dir, reference):
    frame = default_condition(_frame(records))
    frame = frame[frame["survey"] != "smartvote"]
    if frame.empty:
        raise ReportError("Neutral-rate plot needs results on a dataset with a Neutral class")
    points = frame.groupby(["column", "method", "unit_id"])[["neutral_base_rate", "macro_f1"]].mean().reset_index()
    recalls = recall_by_class(frame)

    fig, (left, right) = plt.subplots(1, 2, figsize=(11, 4))
    for (column, method), block in points.groupby(["column", "method"]):
        left.scatter(block["neutral_base_rate"], block["macro_f1"], s=14, label=f"{column} {method}")
    left.set_xlabel("Neutral base rate")
    left.set_ylabel("macro-F1")
    left.legend(fontsize=6)
    labels = [f"{c}\n{m}" for c, m in recalls[["column", "method"]].drop_duplicates().itertuples(index=False)]
    width = 0.8 / len(TERNARY)
    for i, stance in enumerate(TERNARY):
        values = recalls[recalls["stance"] == stance.value]["recall"].fillna(0.0).to_numpy()
        right.bar(np.arange(len(values)) + i * width, values, width, label=stance.value)
    right.set_xticks(np.arange(len(labels)) + 0.4 - width / 2)
    right.set_xticklabels(labels, fontsize=6)
    right.set_ylabel("recall")
    right.legend(fontsize=7)
    files = save_figure(fig, out_dir, "fig4")
    return files + _write_csv(points, out_dir, "fig4") + _write_csv(recalls, out_dir, "fig4_recall")


def _bias_frame(records: Sequence[dict]) -> pd.DataFrame:
    frame = _frame(records)
    mask = (frame["method"] == "sft+grpo") & (frame["train_fraction"] == 1.0) & (~frame["inverted"].astype(bool))
    return frame[mask]


def _fig5(records, out_dir, reference):
    frame = _bias_frame(records)
    if frame.empty:
        raise ReportError("No sft+grpo results for the argument-bias plot")
    data = group_scores(frame, ("bias",))
    grid = pd.MultiIndex.from_product([list(BIASES), [g.value for g in GROUP_ORDER]], names=["bias", "group"])
    data = data.set_index(["bias", "group"]).reindex(grid).reset_index()

    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / len(BIASES)
    for i, bias in enumerate(BIASES):
        heights = data[data["bias"] == bias]["mean"].fillna(0.0).to_numpy()
        ax.bar(np.arange(len(GROUP_ORDER)) + i * width, heights, width, label=bias)
    ax.set_xticks(np.arange(len(GROUP_ORDER)) + 0.4 - width / 2)
    ax.set_xticklabels([g.value for g in GROUP_ORDER])
    ax.set_ylabel("macro-F1")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=7)
    files = save_figure(fig, out_dir, "fig5")
    return files + _write_csv(data, out_dir, "fig5")


def _fig6(records, out_dir, reference):
    positions = [r for r in _position_rows(records) if not r["inverted"] and r["train_fraction"] == 1.0]
    rows = []
    for bias in BIASES:
        pairs = [
            ((r["human_x"], r["human_y"]), (r["agent_x"], r["agent_y"]), Group(r["group"]))
            for r in positions if r["bias"] == bias
        ]
        shifts = displacement_vectors(pairs) if pairs else {}
        for group in GROUP_ORDER:
            dx, dy = shifts.get(group, (float("nan"), float("nan")))
            rows.append({"bias": bias, "group": group.value, "dx": dx, "dy": dy})
    data = pd.DataFrame(rows, columns=["bias", "group", "dx", "dy"])
    if data[["dx", "dy"]].isna().all().all():
        raise ReportError("No displacements to plot")

    fig, axes = plt.subplots(1, len(BIASES), figsize=(4 * len(BIASES), 4), sharex=True, sharey=True)
    for ax, bias in zip(axes, BIASES):
        for r in data[data["bias"] == bias].dropna().itertuples(index=False):
            ax.annotate("", xy=(r.dx, r.dy), xytext=(0.0, 0.0),
                        arrowprops={"arrowstyle": "->", "color": GROUP_COLORS[r.group], "linewidth": 2})
        ax.axhline(0.0, color="lightgray", linewidth=0.5)
        ax.axvline(0.0, color="lightgray", linewidth=0.5)
        ax.set_title(bias)
    limit = float(np.nanmax(np.abs(data[["dx", "dy"]].to_numpy()))) * 1.2 or 1.0
    axes[0].set_xlim(-limit, limit)
    axes[0].set_ylim(-limit, limit)
    files = save_figure(fig, out_dir, "fig6")
    return files + _write_csv(data, out_dir, "fig6")


def _fig7(records, out_dir, reference):
    rows = [r for r in records if r.get("record") == "inversion"]
    if not rows:
        raise ReportError("No inversion records in the results store")
    data = pd.DataFrame(rows, columns=["unit_id", "group", "party", "f1_orig", "f1_inv", "delta_f1", "pc1"])
    data = data.sort_values(["pc1", "unit_id"], kind="mergesort").reset_index(drop=True)

    fig, ax = plt.subplots(figsize=(max(6, 0.25 * len(data)), 4))
    x = np.arange(len(data))
    ax.bar(x - 0.2, data["f1_orig"], 0.4, label="original")
    ax.bar(x + 0.2, data["f1_inv"], 0.4, label="inverted")
    ax.set_xticks(x)
    ax.set_xticklabels(data["party"], rotation=90, fontsize=6)
    ax.set_ylabel("macro-F1")
    ax.legend(fontsize=7)
    files = save_figure(fig, out_dir, "fig7")
    return files + _write_csv(data, out_dir, "fig7")


def _fig10(records, out_dir, reference):
    frame = default_condition(_frame(records))
    frame = frame[frame["method"] == "sft+grpo"]
    if frame.empty:
        raise ReportError("No sft+grpo results for the confusion matrices")
    columns = _column_order(frame["column"])
    rows = []
    fig, axes = plt.subplots(1, len(columns), figsize=(4 * len(columns), 3.5), squeeze=False)
    for ax, column in zip(axes[0], columns):
        block = frame[frame["column"] == column]
        survey = block["survey"].iloc[0]
        label_space = BINARY if survey == "smartvote" else TERNARY
        predictions = [None if p is None else Stance(p) for ps in block["predictions"] for p in ps]
        truths = [Stance(t) for ts in block["truths"] for t in ts]
        counts = confusion_matrix(predictions, truths, label_space)
        for truth, row in counts.iterrows():
            for prediction, count in row.items():
                rows.append({"dataset": column, "truth": truth, "prediction": prediction, "count": int(count)})
        ax.imshow(counts.to_numpy(), cmap="Blues")
        ax.set_xticks(range(counts.shape[1]))
        ax.set_xticklabels(counts.columns, fontsize=7)
        ax.set_yticks(range(counts.shape[0]))
        ax.set_yticklabels(counts.index, fontsize=7)
        for (i, j), count in np.ndenumerate(counts.to_numpy()):
            ax.text(j, i, str(count), ha="center", va="center", fontsize=7)
        ax.set_title(column)
    files = save_figure(fig, out_dir, "fig10")
    return files + _write_csv(pd.DataFrame(rows, columns=["dataset", "truth", "prediction", "count"]), out_dir, "fig10")


def _fig11(records, out_dir, reference):
    frame = _frame(records)
    frame = frame[(frame["method"] == "sft+grpo") & (frame["bias"] == "default") & (~frame["inverted"].astype(bool))]
    if frame["train_fraction"].nunique() < 2:
        raise ReportError("Train-size plot needs results for at least two training fractions")
    data = (
        frame.groupby(["party", "train_fraction", "unit_id"])["macro_f1"].mean()
        .groupby(["party", "train_fraction"]).agg(["mean", "std"]).reset_index()
    )
    fig, ax = plt.subplots(figsize=(6, 4))
    for party, block in data.groupby("party"):
        ax.errorbar(block["train_fraction"], block["mean"], yerr=block["std"].fillna(0.0), marker="o",
                    capsize=2, label=party)
    ax.set_xlabel("fraction of training questions")
    ax.set_ylabel("macro-F1")
    ax.legend(fontsize=7)
    files = save_figure(fig, out_dir, "fig11")
    return files + _write_csv(data, out_dir, "fig11")


LAYOUTS: Dict[str, Callable[[Sequence[dict], Path, Optional[Dict[str, Any]]], List[Path]]] = {
    "table3": _table_layout("macro_f1", "table3"),
    "table4": _table_layout("accuracy", "table4"),
    "table8": _table8,
    "table9": _table_layout("drop_neutral_f1", "table9"),
    "table10": _table10,
    "table11": _table11,
    "fig2": _fig2,
    "fig3": _fig3,
    "fig4": _fig4,
    "fig5": _fig5,
    "fig6": _fig6,
    "fig7": _fig7,
    "fig10": _fig10,
    "fig11": _fig11,
}


def build_report(
    records: Sequence[dict],
    layout: str,
    out_dir: Union[str, Path],
    reference: Optional[Dict[str, Any]] = None,
) -> ReportOutput:
    if layout not in LAYOUTS:
        raise ReportError(f"Unknown report layout {layout!r}; choose from {', '.join(LAYOUTS)}")
    if not records:
        raise ReportError("Results store is empty")
    if reference is None and layout in ("table3", "table4"):
        reference = load_reference()
    files = LAYOUTS[layout](records, Path(out_dir), reference)
    logger.info("Wrote %s report: %s", layout, ", ".join(p.name for p in files))
    return ReportOutput(layout, files)
