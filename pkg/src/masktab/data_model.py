"""Dataset containers shared by every other module.

A model-ready dataset couples an encoded feature matrix with two response
matrices (log-scale concentrations and presence indicators), an observation
mask that is the single source of truth for which response cells exist, block
labels used for leakage-free splitting, and a feature schema that maps encoded
columns back to their original variables.

Missing responses are carried as ``NaN`` in the response matrices *and* a zero
in the mask; the mask is authoritative, the NaN is only an interchange
sentinel.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import jsonio

COLUMN_KINDS = ("continuous", "one_hot_level")

FEATURES_FILE = "features.csv"
RESPONSES_CONT_FILE = "responses_cont.csv"
RESPONSES_BIN_FILE = "responses_bin.csv"
MASK_FILE = "mask.csv"
BLOCKS_FILE = "blocks.csv"
SCHEMA_FILE = "schema.json"


def block_label(site: str, year) -> str:
    """Canonical block key: one location-year combination per label."""
    return f"{site}|{year}"


@dataclass(frozen=True)
class SchemaEntry:
    """One encoded feature column."""

    column_index: int
    original_variable: str
    kind: str  # "continuous" or "one_hot_level"
    group_id: str
    level_label: str | None = None

    def column_name(self) -> str:
        if self.kind == "one_hot_level":
            return f"{self.original_variable}={self.level_label}"
        return self.original_variable


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered column descriptions; group_ids partition the column set.

    Continuous columns form singleton groups; all indicator columns derived
    from one categorical variable share that variable's group_id.
    """

    entries: tuple[SchemaEntry, ...]

    @property
    def n_columns(self) -> int:
        return len(self.entries)

    def column_names(self) -> list[str]:
        return [e.column_name() for e in self.entries]

    def groups(self) -> dict[str, list[int]]:
        """group_id -> column indices, in first-appearance order."""
        out: dict[str, list[int]] = {}
        for e in self.entries:
            out.setdefault(e.group_id, []).append(e.column_index)
        return out

    def validate(self) -> list[str]:
        violations = []
        idx = [e.column_index for e in self.entries]
        if idx != list(range(len(self.entries))):
            violations.append("schema column indices are not 0..P-1 in order")
        for e in self.entries:
            if e.kind not in COLUMN_KINDS:
                violations.append(f"schema column {e.column_index}: unknown kind {e.kind!r}")
            if e.kind == "one_hot_level" and e.level_label is None:
                violations.append(f"schema column {e.column_index}: one_hot_level without level_label")
        for gid, cols in self.groups().items():
            kinds = {self.entries[c].kind for c in cols}
            if len(kinds) > 1:
                violations.append(f"schema group {gid!r} mixes column kinds")
            elif kinds == {"one_hot_level"} and len(cols) < 2:
                violations.append(f"schema group {gid!r}: one-hot group has no sibling columns")
            elif kinds == {"continuous"} and len(cols) != 1:
                violations.append(f"schema group {gid!r}: continuous group is not a singleton")
        return violations

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "entries": [
                {
                    "column_index": e.column_index,
                    "original_variable": e.original_variable,
                    "kind": e.kind,
                    "group_id": e.group_id,
                    "level_label": e.level_label,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        entries = tuple(
            SchemaEntry(
                column_index=int(e["column_index"]),
                original_variable=e["original_variable"],
                kind=e["kind"],
                group_id=e["group_id"],
                level_label=e.get("level_label"),
            )
            for e in d["entries"]
        )
        return cls(entries=entries)


@dataclass
class TabularDataset:
    """Encoded predictors plus dual masked response matrices.

    X       : (N, P) float64, fully observed after preprocessing.
    Y_cont  : (N, K) float64, log(x+1) concentrations; NaN where masked.
    Y_bin   : (N, K) float64 in {0, 1}; NaN where masked.
    M       : (N, K) float64 in {0, 1}; 1 = response observed.
    blocks  : (N,) location-year labels.
    """

    X: np.ndarray
    Y_cont: np.ndarray
    Y_bin: np.ndarray
    M: np.ndarray
    blocks: np.ndarray
    schema: FeatureSchema
    response_names: tuple[str, ...]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y_cont = np.asarray(self.Y_cont, dtype=np.float64)
        self.Y_bin = np.asarray(self.Y_bin, dtype=np.float64)
        self.M = np.asarray(self.M, dtype=np.float64)
        self.blocks = np.asarray(self.blocks, dtype=object)
        self.response_names = tuple(self.response_names)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_responses(self) -> int:
        return self.Y_cont.shape[1]


def validate(ds: TabularDataset) -> list[str]:
    """Check every dataset invariant; returns one descriptor per violation.

    An empty list means the dataset is consistent. Violations are data, not
    exceptions: callers decide whether to abort.
    """
    v: list[str] = []
    n, p = ds.X.shape

    if ds.Y_cont.shape != ds.Y_bin.shape or ds.Y_cont.shape != ds.M.shape:
        v.append(f"response/mask shape mismatch: {ds.Y_cont.shape} vs {ds.Y_bin.shape} vs {ds.M.shape}")
        return v
    if ds.Y_cont.shape[0] != n:
        v.append(f"row count mismatch: X has {n} rows, responses have {ds.Y_cont.shape[0]}")
    if len(ds.blocks) != n:
        v.append(f"block labels: expected {n}, got {len(ds.blocks)}")
    if len(ds.response_names) != ds.Y_cont.shape[1]:
        v.append(f"response names: expected {ds.Y_cont.shape[1]}, got {len(ds.response_names)}")
    if ds.schema.n_columns != p:
        v.append(f"schema covers {ds.schema.n_columns} columns, X has {p}")
    v.extend(ds.schema.validate())

    if not np.isfinite(ds.X).all():
        bad = np.argwhere(~np.isfinite(ds.X))[0]
        v.append(f"non-finite predictor at ({bad[0]},{bad[1]})")
    if not np.isin(ds.M, (0.0, 1.0)).all():
        bad = np.argwhere(~np.isin(ds.M, (0.0, 1.0)))[0]
        v.append(f"mask entry not in {{0,1}} at ({bad[0]},{bad[1]})")

    observed = ds.M == 1.0
    for i, k in np.argwhere(observed & ~np.isfinite(ds.Y_cont)):
        v.append(f"observed Y_cont not finite at ({i},{k})")
    for i, k in np.argwhere(observed & (ds.Y_cont < 0)):
        v.append(f"negative Y_cont at ({i},{k})")
    with np.errstate(invalid="ignore"):
        bin_ok = np.isin(ds.Y_bin, (0.0, 1.0))
    for i, k in np.argwhere(observed & ~bin_ok):
        v.append(f"observed Y_bin not in {{0,1}} at ({i},{k})")
    consistent = bin_ok & (ds.Y_bin == (ds.Y_cont > 0))
    for i, k in np.argwhere(observed & bin_ok & ~consistent):
        v.append(f"bin/cont inconsistency at ({i},{k})")
    for i, k in np.argwhere(~observed & ~(np.isnan(ds.Y_cont) & np.isnan(ds.Y_bin))):
        v.append(f"masked entry not sentinel at ({i},{k})")

    names = ds.schema.column_names()
    for j in range(p):
        col = ds.X[:, j]
        if n > 0 and (col == col[0]).all():
            v.append(f"constant column {names[j] if j < len(names) else j!r}")
    return v


@dataclass
class SplitAssignment:
    """Row partition; validation rows are a subset of training rows."""

    train_rows: np.ndarray
    test_rows: np.ndarray
    val_rows: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))

    def __post_init__(self):
        self.train_rows = np.asarray(self.train_rows, dtype=np.int64)
        self.test_rows = np.asarray(self.test_rows, dtype=np.int64)
        self.val_rows = np.asarray(self.val_rows, dtype=np.int64)

    @property
    def fit_rows(self) -> np.ndarray:
        """Training rows excluding the validation holdout."""
        return np.setdiff1d(self.train_rows, self.val_rows)

    def violations(self, blocks: np.ndarray | None = None) -> list[str]:
        v = []
        train = set(self.train_rows.tolist())
        test = set(self.test_rows.tolist())
        val = set(self.val_rows.tolist())
        if train & test:
            v.append("train and test rows overlap")
        if not val <= train:
            v.append("validation rows are not a subset of training rows")
        if blocks is not None:
            if train | test != set(range(len(blocks))):
                v.append("train and test do not cover all rows")
            parts = {
                "train": sorted(train - val),
                "val": sorted(val),
                "test": sorted(test),
            }
            seen: dict[str, str] = {}
            for part, rows in parts.items():
                for r in rows:
                    label = blocks[r]
                    if label in seen and seen[label] != part:
                        v.append(f"block {label!r} spans {seen[label]} and {part}")
                        seen[label] = part  # report each leaking block once
                    else:
                        seen[label] = part
        return v

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "train_rows": self.train_rows.tolist(),
            "val_rows": self.val_rows.tolist(),
            "test_rows": self.test_rows.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitAssignment":
        return cls(
            train_rows=np.array(d["train_rows"], dtype=np.int64),
            test_rows=np.array(d["test_rows"], dtype=np.int64),
            val_rows=np.array(d.get("val_rows", []), dtype=np.int64),
        )

    def save(self, path) -> None:
        jsonio.dump(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "SplitAssignment":
        return cls.from_dict(jsonio.load(path))


# ---------------------------------------------------------------------------
# Raw (pre-encoding) table: what the generator emits and preprocessing eats.
# ---------------------------------------------------------------------------

@dataclass
class RawMeta:
    """Column roles of a raw table; drives the encoding pipeline."""

    site_column: str
    year_column: str
    categorical_columns: tuple[str, ...]
    continuous_columns: tuple[str, ...]
    day_of_year_columns: tuple[str, ...] = ()
    soil_ph_columns: tuple[str, ...] = ()
    temperature_lag_columns: tuple[str, ...] = ()
    dew_point_lag_columns: tuple[str, ...] = ()
    precipitation_lag_columns: tuple[str, ...] = ()
    humidity_prefix: str = "humidity_lag"

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "site_column": self.site_column,
            "year_column": self.year_column,
            "categorical_columns": list(self.categorical_columns),
            "continuous_columns": list(self.continuous_columns),
            "day_of_year_columns": list(self.day_of_year_columns),
            "soil_ph_columns": list(self.soil_ph_columns),
            "temperature_lag_columns": list(self.temperature_lag_columns),
            "dew_point_lag_columns": list(self.dew_point_lag_columns),
            "precipitation_lag_columns": list(self.precipitation_lag_columns),
            "humidity_prefix": self.humidity_prefix,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RawMeta":
        return cls(
            site_column=d["site_column"],
            year_column=d["year_column"],
            categorical_columns=tuple(d["categorical_columns"]),
            continuous_columns=tuple(d["continuous_columns"]),
            day_of_year_columns=tuple(d.get("day_of_year_columns", [])),
            soil_ph_columns=tuple(d.get("soil_ph_columns", [])),
            temperature_lag_columns=tuple(d.get("temperature_lag_columns", [])),
            dew_point_lag_columns=tuple(d.get("dew_point_lag_columns", [])),
            precipitation_lag_columns=tuple(d.get("precipitation_lag_columns", [])),
            humidity_prefix=d.get("humidity_prefix", "humidity_lag"),
        )


@dataclass
class RawTable:
    """Pre-encoding table: predictors as named columns, raw responses in ug/kg.

    Response cells are NaN where a compound was not measured for a sample.
    ``loq`` holds, per response, the lowest reliably quantifiable
    concentration; anything measured below it is treated as zero downstream.
    """

    columns: dict[str, np.ndarray]
    meta: RawMeta
    responses: np.ndarray  # (N, K) raw concentrations, NaN = not measured
    response_names: tuple[str, ...]
    loq: np.ndarray  # (K,)

    @property
    def n_samples(self) -> int:
        return self.responses.shape[0]

    def block_labels(self) -> np.ndarray:
        site = self.columns[self.meta.site_column]
        year = self.columns[self.meta.year_column]
        return np.array([block_label(s, y) for s, y in zip(site, year)], dtype=object)


# ---------------------------------------------------------------------------
# CSV helpers (deterministic formatting, '.' decimal separator, UTF-8)
# ---------------------------------------------------------------------------

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return ""
        return jsonio.format_float(float(value))
    return str(value)


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(x) for x in row])


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def _float_matrix(rows: list[list[str]]) -> np.ndarray:
    out = np.empty((len(rows), len(rows[0]) if rows else 0), dtype=np.float64)
    for i, row in enumerate(rows):
        for j, cell in enumerate(row):
            out[i, j] = math.nan if cell == "" else float(cell)
    return out


# ---------------------------------------------------------------------------
# Dataset interchange directory
# ---------------------------------------------------------------------------

def save_dataset(ds: TabularDataset, out_dir) -> None:
    """Write the interchange directory; row order is shared across files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / FEATURES_FILE, ds.schema.column_names(), ds.X)
    _write_csv(out / RESPONSES_CONT_FILE, list(ds.response_names), ds.Y_cont)
    _write_csv(out / RESPONSES_BIN_FILE, list(ds.response_names), ds.Y_bin)
    _write_csv(out / MASK_FILE, list(ds.response_names), ds.M.astype(np.int64))
    _write_csv(out / BLOCKS_FILE, ["block"], [[b] for b in ds.blocks])
    jsonio.dump(ds.schema.to_dict(), out / SCHEMA_FILE)


def load_dataset(in_dir) -> TabularDataset:
    src = Path(in_dir)
    schema = FeatureSchema.from_dict(jsonio.load(src / SCHEMA_FILE))
    _, feat_rows = _read_csv(src / FEATURES_FILE)
    cont_header, cont_rows = _read_csv(src / RESPONSES_CONT_FILE)
    _, bin_rows = _read_csv(src / RESPONSES_BIN_FILE)
    _, mask_rows = _read_csv(src / MASK_FILE)
    _, block_rows = _read_csv(src / BLOCKS_FILE)
    return TabularDataset(
        X=_float_matrix(feat_rows),
        Y_cont=_float_matrix(cont_rows),
        Y_bin=_float_matrix(bin_rows),
        M=_float_matrix(mask_rows),
        blocks=np.array([r[0] for r in block_rows], dtype=object),
        schema=schema,
        response_names=tuple(cont_header),
    )


# ---------------------------------------------------------------------------
# Raw table directory (generator output / preprocessing input)
# ---------------------------------------------------------------------------

RAW_FILE = "raw.csv"
RAW_RESPONSES_FILE = "responses.csv"
RAW_LOQ_FILE = "loq.json"
RAW_META_FILE = "meta.json"


def save_raw_table(raw: RawTable, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(raw.columns)
    rows = zip(*(raw.columns[c] for c in names))
    _write_csv(out / RAW_FILE, names, rows)
    _write_csv(out / RAW_RESPONSES_FILE, list(raw.response_names), raw.responses)
    jsonio.dump({n: float(q) for n, q in zip(raw.response_names, raw.loq)}, out / RAW_LOQ_FILE)
    jsonio.dump(raw.meta.to_dict(), out / RAW_META_FILE)


def load_raw_table(in_dir) -> RawTable:
    src = Path(in_dir)
    meta = RawMeta.from_dict(jsonio.load(src / RAW_META_FILE))
    header, rows = _read_csv(src / RAW_FILE)
    numeric = set(meta.continuous_columns) | set(meta.day_of_year_columns)
    numeric |= set(meta.temperature_lag_columns) | set(meta.dew_point_lag_columns)
    numeric |= set(meta.precipitation_lag_columns)
    columns: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        cells = [row[j] for row in rows]
        if name in numeric:
            columns[name] = np.array(
                [math.nan if c == "" else float(c) for c in cells], dtype=np.float64
            )
        else:
            columns[name] = np.array([c if c != "" else None for c in cells], dtype=object)
    resp_header, resp_rows = _read_csv(src / RAW_RESPONSES_FILE)
    loq_map = jsonio.load(src / RAW_LOQ_FILE)
    return RawTable(
        columns=columns,
        meta=meta,
        responses=_float_matrix(resp_rows),
        response_names=tuple(resp_header),
        loq=np.array([float(loq_map[n]) for n in resp_header], dtype=np.float64),
    )
