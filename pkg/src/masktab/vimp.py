"""Permutation variable importance under the masked losses.

Importance is the percent increase in masked loss when a predictor group is
shuffled across samples, breaking its association with the responses while
preserving its distribution. Indicator columns born from one categorical are
always permuted together with the same row permutation, so permuted one-hot
rows remain valid level assignments. Grouped mode additionally bundles the
daily lag columns of one weather variable (and the sin/cos pair of one date)
into a single feature history.
"""

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from . import jsonio
from .data_model import FeatureSchema, TabularDataset
from .masked_loss import MaskedBatch, masked_bce, masked_mse
from .nn_core import NetworkParams, forward

TASKS = ("regression", "classification")

_LAG_RE = re.compile(r"^(.+)_lag_\d+$")
_SINCOS_RE = re.compile(r"^(.+)_(sin|cos)$")


def _task_loss(params: NetworkParams, X: np.ndarray, ds: TabularDataset, rows, task: str) -> float:
    out, _ = forward(params, X, mode="infer")
    if task == "regression":
        loss, _ = masked_mse(MaskedBatch(y=ds.Y_cont[rows], y_hat=out["cont"], m=ds.M[rows]))
    elif task == "classification":
        loss, _ = masked_bce(MaskedBatch(y=ds.Y_bin[rows], y_hat=out["bin"], m=ds.M[rows]))
    else:
        raise ValueError(f"unknown task {task!r}")
    return loss


def per_column_groups(schema: FeatureSchema) -> dict[str, list[int]]:
    """Every encoded column as its own singleton group (dummy levels separate)."""
    return {e.column_name(): [e.column_index] for e in schema.entries}


def grouped_variable_groups(schema: FeatureSchema) -> dict[str, list[int]]:
    """Schema groups with lag families and date sin/cos pairs bundled.

    Columns named ``<var>_lag_<d>`` merge into ``<var>_history``; the two
    cyclical encodings of ``<var>`` merge back into ``<var>``. Categorical
    one-hot groups are kept whole as in the schema.
    """
    merged: dict[str, list[int]] = {}
    for gid, cols in schema.groups().items():
        var = schema.entries[cols[0]].original_variable
        m = _LAG_RE.match(var)
        if m and schema.entries[cols[0]].kind == "continuous":
            merged.setdefault(f"{m.group(1)}_history", []).extend(cols)
            continue
        m = _SINCOS_RE.match(var)
        if m and schema.entries[cols[0]].kind == "continuous":
            merged.setdefault(m.group(1), []).extend(cols)
            continue
        merged.setdefault(gid, []).extend(cols)
    return {g: sorted(cols) for g, cols in merged.items()}


@dataclass
class ImportanceEntry:
    group: str
    task: str
    baseline_loss: float
    permuted_loss_mean: float
    permuted_loss_sd: float
    importance_pct: float
    n_repeats: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "task": self.task,
            "baseline_loss": self.baseline_loss,
            "permuted_loss_mean": self.permuted_loss_mean,
            "permuted_loss_sd": self.permuted_loss_sd,
            "importance_pct": self.importance_pct,
            "n_repeats": self.n_repeats,
            "seed": self.seed,
        }


@dataclass
class ImportanceReport:
    entries: list[ImportanceEntry]
    groups: dict[str, list[int]]
    mode: str
    n_repeats: int
    seed: int
    rows_label: str = "test"

    def task_entries(self, task: str) -> list[ImportanceEntry]:
        return [e for e in self.entries if e.task == task]

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "mode": self.mode,
            "n_repeats": self.n_repeats,
            "seed": self.seed,
            "rows_label": self.rows_label,
            "groups": {g: list(cols) for g, cols in self.groups.items()},
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImportanceReport":
        entries = [
            ImportanceEntry(
                group=e["group"],
                task=e["task"],
                baseline_loss=float(e["baseline_loss"]),
                permuted_loss_mean=float(e["permuted_loss_mean"]),
                permuted_loss_sd=float(e["permuted_loss_sd"]),
                importance_pct=float(e["importance_pct"]),
                n_repeats=int(e["n_repeats"]),
                seed=int(e["seed"]),
            )
            for e in d["entries"]
        ]
        return cls(
            entries=entries,
            groups={g: [int(c) for c in cols] for g, cols in d["groups"].items()},
            mode=d["mode"],
            n_repeats=int(d["n_repeats"]),
            seed=int(d["seed"]),
            rows_label=d.get("rows_label", "test"),
        )

    def save(self, path) -> None:
        jsonio.dump(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "ImportanceReport":
        return cls.from_dict(jsonio.load(path))


def _child_seed(seed: int, task: str, group: str) -> int:
    digest = hashlib.sha256(f"{seed}:{task}:{group}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


def permutation_importance(
    params: NetworkParams,
    ds: TabularDataset,
    rows,
    group: str,
    columns: list[int],
    task: str,
    n_repeats: int = 30,
    seed: int = 0,
    baseline_loss: float | None = None,
) -> ImportanceEntry:
    """Permute one predictor group and measure the masked-loss increase.

    Every column of the group is shuffled with the same row permutation per
    repeat. The entry's seed is derived from (seed, task, group), so a full
    report is reproducible whatever order its entries are computed in.
    """
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("empty row set")
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    if not columns:
        raise ValueError(f"unknown or empty group {group!r}")
    X = ds.X[rows]
    if baseline_loss is None:
        baseline_loss = _task_loss(params, X, ds, rows, task)
    entry_seed = _child_seed(seed, task, group)
    rng = np.random.default_rng(np.random.PCG64(entry_seed))
    losses = np.empty(n_repeats)
    X_perm = X.copy()
    for r in range(n_repeats):
        perm = rng.permutation(rows.size)
        X_perm[:, columns] = X[perm][:, columns]
        losses[r] = _task_loss(params, X_perm, ds, rows, task)
        X_perm[:, columns] = X[:, columns]
    if losses.min() == losses.max():  # keep exact equality when repeats agree
        mean, sd = float(losses[0]), 0.0
    else:
        mean, sd = float(losses.mean()), float(losses.std())
    if baseline_loss != 0.0:
        importance = 100.0 * (mean - baseline_loss) / baseline_loss
    else:
        importance = 0.0 if mean == 0.0 else float("inf")
    return ImportanceEntry(
        group=group,
        task=task,
        baseline_loss=float(baseline_loss),
        permuted_loss_mean=mean,
        permuted_loss_sd=sd,
        importance_pct=importance,
        n_repeats=n_repeats,
        seed=entry_seed,
    )


def importance_report(
    params: NetworkParams,
    ds: TabularDataset,
    rows,
    mode: str = "grouped",
    n_repeats: int = 30,
    seed: int = 0,
    groups: dict[str, list[int]] | None = None,
    rows_label: str = "test",
) -> ImportanceReport:
    """Importance of every predictor group, for both tasks."""
    if groups is None:
        if mode == "grouped":
            groups = grouped_variable_groups(ds.schema)
        elif mode == "per-column":
            groups = per_column_groups(ds.schema)
        else:
            raise ValueError(f"unknown mode {mode!r}")
    rows = np.asarray(rows, dtype=np.int64)
    X = ds.X[rows]
    entries: list[ImportanceEntry] = []
    for task in TASKS:
        baseline = _task_loss(params, X, ds, rows, task)
        for group in sorted(groups):
            entries.append(
                permutation_importance(
                    params, ds, rows, group, groups[group], task,
                    n_repeats=n_repeats, seed=seed, baseline_loss=baseline,
                )
            )
    return ImportanceReport(
        entries=entries, groups=groups, mode=mode, n_repeats=n_repeats, seed=seed,
        rows_label=rows_label,
    )


def rank_importance(report: ImportanceReport, top_n: int = 10) -> dict:
    """Descending importance per task plus the overlap of the two top lists.

    Ties rank in schema order (a group's first column index).
    """
    first_col = {g: min(cols) for g, cols in report.groups.items()}
    out: dict = {"version": 1, "top_n": top_n}
    tops: dict[str, list[str]] = {}
    for task in TASKS:
        ranked = sorted(
            report.task_entries(task), key=lambda e: (-e.importance_pct, first_col[e.group])
        )
        out[task] = [
            {"group": e.group, "importance_pct": e.importance_pct} for e in ranked
        ]
        tops[task] = [e.group for e in ranked[:top_n]]
    inter = [g for g in tops["regression"] if g in set(tops["classification"])]
    out["intersection"] = inter
    return out
