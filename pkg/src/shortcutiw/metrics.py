"""Evaluation metrics: test-set accuracies, logit-scale gain/loss/overall
benefit against ordinary training, weight-distribution diagnostics, and
multi-run aggregation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .weighting import IwTable

HISTOGRAM_BINS = 50
BOTTOM_QUANTILES = (0.1, 0.2, 0.3)
GROUP_QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)


@dataclass(frozen=True)
class EvalResult:
    """One condition's accuracies on the three test sets, for one run."""

    condition: str
    run: int
    acc_congruent: float
    acc_incongruent: float
    acc_neutral: float
    n_congruent: int
    n_incongruent: int
    n_neutral: int


@dataclass(frozen=True)
class ObResult:
    gain: float
    loss: float
    overall_benefit: float  # always gain + loss

    def __post_init__(self):
        if self.overall_benefit != self.gain + self.loss:
            raise ValueError("overall benefit must equal gain + loss exactly")


def accuracy(clf, X, y) -> float:
    """Fraction of argmax-correct predictions (ties toward the lower class)."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty test set")
    correct = int((clf.predict(X) == y).sum())
    return correct / len(y)


def logit(p: float, n_samples: int) -> float:
    """Empirical logit with the 1/(2N) clamp, so p of 0 or 1 stays finite."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0,1]")
    if n_samples < 1:
        raise ValueError(f"need a positive sample count, got {n_samples}")
    eps = 1.0 / (2 * n_samples)
    clamped = min(max(p, eps), 1.0 - eps)
    return math.log(clamped / (1.0 - clamped))


def overall_benefit(iw_result: EvalResult, ordinary_result: EvalResult) -> ObResult:
    """Gain on the incongruent set plus loss on the neutral set, logit scale."""
    gain = (logit(iw_result.acc_incongruent, iw_result.n_incongruent)
            - logit(ordinary_result.acc_incongruent, ordinary_result.n_incongruent))
    loss = (logit(iw_result.acc_neutral, iw_result.n_neutral)
            - logit(ordinary_result.acc_neutral, ordinary_result.n_neutral))
    return ObResult(gain, loss, gain + loss)


def iw_distribution_report(table: IwTable, manifest_rows: list[dict] | None = None) -> dict:
    """Histogram split by shortcut flag, per-group quantiles, bottom-tail shares.

    When manifest rows are given, flags are cross-checked against the
    manifest's train entries; an index mismatch is an error.
    """
    flags = table.shortcut_flags
    if manifest_rows is not None:
        train_rows = {r["source_index"]: r["shortcut_flag"]
                      for r in manifest_rows if r["split_role"] == "train"}
        if set(train_rows) != set(int(i) for i in table.index):
            raise ValueError("manifest train indices do not match the weight table")
        flags = np.array([train_rows[int(i)] for i in table.index], dtype=bool)

    weights = table.weights
    edges = np.linspace(0.0, 1.0, HISTOGRAM_BINS + 1)
    count_shortcut, _ = np.histogram(weights[flags], bins=edges)
    count_clean, _ = np.histogram(weights[~flags], bins=edges)

    def group_quantiles(values):
        if len(values) == 0:
            return {}
        qs = np.quantile(values, GROUP_QUANTILES)
        return {str(q): float(v) for q, v in zip(GROUP_QUANTILES, qs)}

    order = np.argsort(weights, kind="stable")
    n, n_flagged = len(weights), int(flags.sum())
    bottom_shares = {}
    for q in BOTTOM_QUANTILES:
        m = int(math.floor(q * n))
        in_bottom = flags[order[:m]]
        bottom_shares[str(q)] = {
            "flagged_share_of_bottom": float(in_bottom.mean()) if m else 0.0,
            "flagged_coverage": float(in_bottom.sum() / n_flagged) if n_flagged else 0.0,
        }

    return {
        "bin_edges": edges.tolist(),
        "count_shortcut": count_shortcut.tolist(),
        "count_clean": count_clean.tolist(),
        "quantiles": {"shortcut": group_quantiles(weights[flags]),
                      "clean": group_quantiles(weights[~flags])},
        "bottom_shares": bottom_shares,
        "counts": {"shortcut": n_flagged, "clean": int(n - n_flagged)},
    }


def write_iw_report_csv(path, report: dict):
    edges = report["bin_edges"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "count_shortcut", "count_clean"])
        for i in range(len(edges) - 1):
            writer.writerow([f"{edges[i]:.2f}", f"{edges[i + 1]:.2f}",
                             report["count_shortcut"][i], report["count_clean"][i]])


RESULT_METRICS = ("acc_congruent", "acc_incongruent", "acc_neutral", "G", "L", "OB")


def aggregate_runs(records: list[dict]) -> list[dict]:
    """Per-(pair, shortcut_kind, condition) means and sample standard deviations.

    A single run aggregates to std 0 by convention.
    """
    if not records:
        raise ValueError("no result records to aggregate")
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        key = (tuple(rec["pair"]), rec["shortcut_kind"], rec["condition"])
        groups.setdefault(key, []).append(rec)
    rows = []
    for key in sorted(groups):
        members = groups[key]
        row = {"pair": f"{key[0][0]}-{key[0][1]}", "shortcut_kind": key[1],
               "condition": key[2], "n_runs": len(members)}
        for metric in RESULT_METRICS:
            values = np.array([m[metric] for m in members], dtype=np.float64)
            row[f"mean_{metric}"] = float(values.mean())
            row[f"std_{metric}"] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        rows.append(row)
    return rows


def write_aggregate_csv(path, rows: list[dict]):
    header = ["pair", "shortcut_kind", "condition", "n_runs"]
    for metric in RESULT_METRICS:
        header += [f"mean_{metric}", f"std_{metric}"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[h] if isinstance(row[h], (str, int)) else f"{row[h]:.9g}"
                             for h in header])
