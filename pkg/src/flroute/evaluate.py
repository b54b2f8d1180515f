"""ROC AUC scoring and the method x client results table."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from flroute import nn
from flroute.data import Dataset
from flroute.errors import ConfigurationError, UndefinedAUCError
from flroute.nn import ModelSpec, ParameterVector

GAP = "--"


def roc_auc(scores, labels) -> float:
    """Mann-Whitney rank statistic; tied scores share their average rank."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ConfigurationError("scores and labels differ in length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ConfigurationError("labels must be 0/1")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(f"AUC undefined with {n_pos} positives and {n_neg} negatives")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def predict(spec: ModelSpec, params: ParameterVector, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = [nn.model_forward(spec, params, x[i : i + batch_size], mode="eval") for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0,) + x.shape[2:])


def evaluate_model(spec: ModelSpec, params: ParameterVector, test: Dataset) -> float:
    """Pool every cell of every test grid into one scored set and return its AUC."""
    return roc_auc(predict(spec, params, test.x), test.y)


@dataclass
class ResultsTable:
    clients: list[int]
    rows: dict[str, list[float | None]] = field(default_factory=dict)

    def add(self, method: str, values: Sequence[float | None]) -> None:
        if len(values) != len(self.clients):
            raise ConfigurationError(f"{method}: expected {len(self.clients)} values, got {len(values)}")
        self.rows[method] = list(values)

    def average(self, method: str) -> float | None:
        vals = self.rows[method]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))

    @property
    def complete(self) -> bool:
        return all(v is not None for vals in self.rows.values() for v in vals)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "client", "auc"])
        for method, vals in self.rows.items():
            for client, v in zip(self.clients, vals):
                writer.writerow([method, client, _full(v)])
            writer.writerow([method, "average", _full(self.average(method))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ResultsTable":
        rows: dict[str, dict[str, float | None]] = {}
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != ["method", "client", "auc"]:
            raise ConfigurationError(f"unexpected CSV header {reader.fieldnames}")
        for rec in reader:
            value = None if rec["auc"] == GAP else float(rec["auc"])
            rows.setdefault(rec["method"], {})[rec["client"]] = value
        clients = [int(c) for c in next(iter(rows.values()), {}) if c != "average"]
        table = cls(clients)
        for method, vals in rows.items():
            table.add(method, [vals[str(c)] for c in clients])
        return table

    def to_text(self, width: int = 8) -> str:
        name_w = max([len("method")] + [len(m) for m in self.rows]) + 2
        header = "method".ljust(name_w) + "".join(f"client {c}".rjust(width + 2) for c in self.clients)
        header += "average".rjust(width + 2)
        lines = [header, "-" * len(header)]
        for method, vals in self.rows.items():
            cells = [_short(v) for v in vals] + [_short(self.average(method))]
            lines.append(method.ljust(name_w) + "".join(c.rjust(width + 2) for c in cells))
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        head = ["method"] + [f"client {c}" for c in self.clients] + ["average"]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for method, vals in self.rows.items():
            cells = [_short(v) for v in vals] + [_short(self.average(method))]
            lines.append("| " + " | ".join([method] + cells) + " |")
        return "\n".join(lines) + "\n"


def _full(v: float | None) -> str:
    return GAP if v is None else format(v, ".17g")


def _short(v: float | None) -> str:
    return GAP if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.2f}"


def local_average_rows(spec: ModelSpec, local_models: Sequence[ParameterVector], tests: Sequence[Dataset]):
    """Both readings of the local-baseline row.

    Returns ``(diagonal, cross, matrix)``: ``diagonal[k]`` is b_k on client k's
    test set, ``cross[k]`` averages every b_j on it, and ``matrix[k, j]`` holds
    the individual scores.
    """
    k = len(tests)
    matrix = np.array([[evaluate_model(spec, local_models[j], tests[i]) for j in range(k)] for i in range(k)])
    return list(np.diag(matrix)), list(matrix.mean(axis=1)), matrix


def build_results_table(spec_for: Mapping[str, ModelSpec] | ModelSpec,
                        methods: Sequence[tuple[str, Sequence[ParameterVector | None]]],
                        tests: Sequence[Dataset], client_ids: Sequence[int]) -> ResultsTable:
    """Evaluate each method's per-client model on that client's test set.

    A ``None`` model leaves a gap marker in the table instead of failing.
    """
    table = ResultsTable(list(client_ids))
    for name, models in methods:
        spec = spec_for if isinstance(spec_for, ModelSpec) else spec_for[name]
        if len(models) == 1 and len(tests) > 1:
            models = list(models) * len(tests)
        if len(models) != len(tests):
            raise ConfigurationError(f"{name}: {len(models)} models for {len(tests)} clients")
        table.add(name, [None if m is None else evaluate_model(spec, m, t) for m, t in zip(models, tests)])
    return table
