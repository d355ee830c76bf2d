"""Log ingestion, validation, feature encoding, and train/test splitting.

The raw input is a stream of logged marketplace interactions (CSV or
JSON-lines) plus optional user/item metadata catalogs.  A declarative
schema config maps columns to roles.  The output is an immutable
:class:`Dataset` that the replay environment consumes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .errors import ConfigError, DataError, InvariantError

UNKNOWN = "__unknown__"
UNSEEN = "__unseen__"

FEATURE_KINDS = ("numeric", "categorical", "vector")


@dataclass(frozen=True)
class FeatureSpec:
    """One context feature: a numeric scalar, a categorical level, or a
    fixed-length numeric vector."""

    name: str
    kind: str
    dim: int = 1
    encoding: str = "onehot"  # categorical only: "onehot" | "hash"
    hash_buckets: int = 64

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ConfigError(f"unknown feature kind {self.kind!r}")
        if self.kind == "vector" and self.dim < 1:
            raise ConfigError("vector feature needs dim >= 1")


@dataclass
class SchemaConfig:
    """Column-role mapping for the raw interaction log."""

    timestamp_col: str
    user_col: str
    session_col: str
    action_col: str
    success_col: str
    context: list[FeatureSpec]
    candidates_col: str | None = None
    propensity_col: str | None = None
    candidate_key_col: str | None = None  # fallback candidate grouping
    sensitive_attributes: list[str] = field(default_factory=list)
    delimiter: str = ","
    list_delimiter: str = "|"
    malformed_tolerance: float = 0.05

    @classmethod
    def from_file(cls, path: str) -> "SchemaConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "SchemaConfig":
        try:
            context = [FeatureSpec(**spec) for spec in raw.pop("context")]
            return cls(context=context, **raw)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad schema config: {exc}") from exc

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["context"] = [dict(fs.__dict__) for fs in self.context]
        return d


@dataclass(frozen=True)
class InteractionRecord:
    """One logged user-platform event."""

    timestamp: int
    user_id: str
    session_id: str
    context_features: dict
    shown_action: str
    candidate_actions: tuple
    success: bool
    logged_propensity: float | None = None

    def validate(self):
        if not self.candidate_actions:
            raise DataError("empty candidate list")
        if len(set(self.candidate_actions)) != len(self.candidate_actions):
            raise DataError("duplicate candidates")
        if self.shown_action not in self.candidate_actions:
            raise DataError("shown action not in candidates")
        if self.logged_propensity is not None and not (0 < self.logged_propensity <= 1):
            raise DataError("logged propensity outside (0, 1]")


@dataclass
class Dataset:
    """Ordered interaction records plus catalogs and the feature schema."""

    records: list[InteractionRecord]
    schema: SchemaConfig
    user_catalog: dict = field(default_factory=dict)
    item_catalog: dict = field(default_factory=dict)
    split_tags: list[str] | None = None  # parallel to records: "train"/"test"

    def __post_init__(self):
        ts = [r.timestamp for r in self.records]
        if any(a > b for a, b in zip(ts, ts[1:])):
            order = sorted(range(len(self.records)),
                           key=lambda i: self.records[i].timestamp)
            self.records = [self.records[i] for i in order]
            if self.split_tags is not None:
                self.split_tags = [self.split_tags[i] for i in order]

    @property
    def actions(self) -> list[str]:
        """All distinct action ids seen, in first-appearance order."""
        seen = {}
        for r in self.records:
            for a in r.candidate_actions:
                seen.setdefault(a, None)
        return list(seen)

    def subset(self, tag: str) -> "Dataset":
        if self.split_tags is None:
            raise DataError("dataset has no split")
        recs = [r for r, t in zip(self.records, self.split_tags) if t == tag]
        return Dataset(recs, self.schema, self.user_catalog, self.item_catalog,
                       split_tags=[tag] * len(recs))

    def catalog_lookup(self, kind: str, entity_id: str) -> dict:
        table = self.user_catalog if kind == "user" else self.item_catalog
        return table.get(entity_id, {"__sentinel__": UNKNOWN})


def _parse_value(spec: FeatureSpec, raw):
    if spec.kind == "numeric":
        return float(raw)
    if spec.kind == "vector":
        if isinstance(raw, (list, tuple)):
            vec = [float(v) for v in raw]
        else:
            vec = [float(v) for v in str(raw).split("|") if v != ""]
        if len(vec) != spec.dim:
            raise DataError(f"vector feature {spec.name} has length "
                            f"{len(vec)}, expected {spec.dim}")
        return tuple(vec)
    return str(raw)


def _row_to_record(row: dict, schema: SchemaConfig) -> InteractionRecord:
    context = {}
    for spec in schema.context:
        if spec.name not in row or row[spec.name] in ("", None):
            context[spec.name] = None  # imputed at encode time
        else:
            context[spec.name] = _parse_value(spec, row[spec.name])
    action = str(row[schema.action_col])
    if schema.candidates_col and row.get(schema.candidates_col) not in ("", None):
        raw = row[schema.candidates_col]
        if isinstance(raw, (list, tuple)):
            candidates = tuple(str(c) for c in raw)
        else:
            candidates = tuple(c for c in str(raw).split(schema.list_delimiter) if c)
    else:
        candidates = ()
    success_raw = row[schema.success_col]
    success = str(success_raw).strip().lower() in ("1", "true", "t", "yes")
    prop = None
    if schema.propensity_col and row.get(schema.propensity_col) not in ("", None):
        prop = float(row[schema.propensity_col])
    rec = InteractionRecord(
        timestamp=int(row[schema.timestamp_col]),
        user_id=str(row[schema.user_col]),
        session_id=str(row[schema.session_col]),
        context_features=context,
        shown_action=action,
        candidate_actions=candidates or (action,),
        success=success,
        logged_propensity=prop,
    )
    if candidates:
        rec.validate()
    return rec


def _fill_candidates(records, rows, schema: SchemaConfig):
    """Fallback for logs without an impression list: candidates become all
    actions seen under the same key column (or globally without one)."""
    key_col = schema.candidate_key_col
    groups: dict = {}
    for rec, row in zip(records, rows):
        key = str(row.get(key_col, "")) if key_col else ""
        groups.setdefault(key, {})[rec.shown_action] = None
    out = []
    for rec, row in zip(records, rows):
        if len(rec.candidate_actions) > 1:
            out.append(rec)
            continue
        key = str(row.get(key_col, "")) if key_col else ""
        cands = tuple(groups[key])
        fixed = replace(rec, candidate_actions=cands)
        fixed.validate()
        out.append(fixed)
    return out


def _iter_rows(source, schema: SchemaConfig, fmt: str):
    if fmt == "jsonl":
        for line in source:
            line = line.strip()
            if line:
                yield json.loads(line)
    else:
        reader = csv.DictReader(source, delimiter=schema.delimiter)
        if reader.fieldnames is None:
            return
        yield from reader


def parse_logs(source, schema: SchemaConfig, fmt: str = "csv",
               user_catalog: dict | None = None,
               item_catalog: dict | None = None) -> Dataset:
    """Parse an interaction log stream into a validated Dataset.

    ``source`` is a text stream or a path.  Malformed rows are counted and
    tolerated up to ``schema.malformed_tolerance`` of the input; a missing
    mandatory column or an over-tolerance malformed fraction is a hard error.
    """
    close = False
    if isinstance(source, (str, os.PathLike)):
        fmt = "jsonl" if str(source).endswith((".jsonl", ".ndjson")) else fmt
        try:
            source = open(source)
        except OSError as exc:
            raise DataError(f"cannot read interaction log: {exc}") from exc
        close = True
    try:
        rows_seen = 0
        bad = 0
        records = []
        kept_rows = []
        mandatory = [schema.timestamp_col, schema.user_col, schema.session_col,
                     schema.action_col, schema.success_col]
        for row in _iter_rows(source, schema, fmt):
            if rows_seen == 0:
                missing = [c for c in mandatory if c not in row]
                if missing:
                    raise DataError(f"missing mandatory columns: {missing}")
            rows_seen += 1
            try:
                records.append(_row_to_record(row, schema))
                kept_rows.append(row)
            except (DataError, ValueError, KeyError):
                bad += 1
        if rows_seen == 0:
            raise DataError("empty input")
        if bad / rows_seen > schema.malformed_tolerance:
            raise DataError(
                f"{bad}/{rows_seen} malformed rows exceeds tolerance "
                f"{schema.malformed_tolerance}")
        records = _fill_candidates(records, kept_rows, schema)
        order = sorted(range(len(records)), key=lambda i: records[i].timestamp)
        records = [records[i] for i in order]
        ds = Dataset(records, schema,
                     user_catalog=dict(user_catalog or {}),
                     item_catalog=dict(item_catalog or {}))
        _ensure_catalog_coverage(ds)
        ds.malformed_rows = bad  # type: ignore[attr-defined]
        return ds
    finally:
        if close:
            source.close()


def parse_catalog(source, id_col: str, fmt: str = "jsonl") -> dict:
    """Parse an entity metadata file into {entity_id: attributes}."""
    close = False
    if isinstance(source, (str, os.PathLike)):
        fmt = "csv" if str(source).endswith(".csv") else fmt
        source = open(source)
        close = True
    try:
        table = {}
        if fmt == "csv":
            for row in csv.DictReader(source):
                table[str(row[id_col])] = {k: v for k, v in row.items() if k != id_col}
        else:
            for line in source:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                table[str(row[id_col])] = {k: v for k, v in row.items() if k != id_col}
        return table
    finally:
        if close:
            source.close()


def _ensure_catalog_coverage(ds: Dataset):
    """Every referenced user/item resolves to metadata or a sentinel row."""
    for rec in ds.records:
        ds.user_catalog.setdefault(rec.user_id, {"__sentinel__": UNKNOWN})
        for a in rec.candidate_actions:
            ds.item_catalog.setdefault(a, {"__sentinel__": UNKNOWN})


def filter_successes(ds: Dataset) -> Dataset:
    """Keep only successful interactions; these carry the ground truth."""
    recs = [r for r in ds.records if r.success]
    if not recs:
        raise DataError("no ground-truth interactions")
    tags = None
    if ds.split_tags is not None:
        tags = [t for r, t in zip(ds.records, ds.split_tags) if r.success]
    return Dataset(recs, ds.schema, ds.user_catalog, ds.item_catalog, tags)


def split_train_test(ds: Dataset, policy: str = "temporal",
                     test_fraction: float = 0.2, seed: int = 0) -> Dataset:
    """Assign train/test tags.  Temporal: the latest ``test_fraction`` of
    records becomes test.  Random: a seeded permutation.  The test count is
    floor(fraction * n), at least 1."""
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must be in (0,1), got {test_fraction}")
    if policy not in ("temporal", "random"):
        raise ConfigError(f"unknown split policy {policy!r}")
    n = len(ds.records)
    n_test = max(1, math.floor(test_fraction * n))
    tags = ["train"] * n
    if policy == "temporal":
        for i in range(n - n_test, n):
            tags[i] = "test"
    else:
        rng = np.random.default_rng(seed)
        for i in rng.permutation(n)[:n_test]:
            tags[i] = "test"
    return Dataset(list(ds.records), ds.schema, ds.user_catalog,
                   ds.item_catalog, tags)


class FeatureEncoder:
    """Turns (record, action) pairs into fixed-length numeric vectors.

    Numeric features are standardized with train-split statistics;
    categoricals are one-hot (with a reserved unseen bucket) or
    hash-bucketed; the action gets its own one-hot block over the action
    vocabulary.  All statistics are frozen at fit time, so encoding is a
    pure function afterwards.
    """

    def __init__(self, schema: SchemaConfig):
        self.schema = schema
        self._fitted = False

    def fit(self, ds: Dataset) -> "FeatureEncoder":
        train = ds.records
        if ds.split_tags is not None:
            train = [r for r, t in zip(ds.records, ds.split_tags) if t == "train"]
        if not train:
            raise DataError("no train records to fit encoder")
        self.num_stats = {}
        self.cat_vocab = {}
        for spec in self.schema.context:
            vals = [r.context_features.get(spec.name) for r in train]
            vals = [v for v in vals if v is not None]
            if spec.kind == "numeric":
                arr = np.array(vals, dtype=float) if vals else np.zeros(1)
                sd = float(arr.std())
                self.num_stats[spec.name] = (float(arr.mean()), sd if sd > 0 else 1.0)
            elif spec.kind == "categorical" and spec.encoding == "onehot":
                levels = sorted({str(v) for v in vals})
                self.cat_vocab[spec.name] = {lv: i for i, lv in enumerate(levels)}
        self.action_vocab = {a: i for i, a in enumerate(sorted(ds.actions))}
        self._offsets = {}
        off = 0
        for spec in self.schema.context:
            self._offsets[spec.name] = off
            off += self._block_width(spec)
        self.action_offset = off
        self.dim = off + len(self.action_vocab) + 1  # +1 unseen action slot
        self._fitted = True
        return self

    def _block_width(self, spec: FeatureSpec) -> int:
        if spec.kind == "numeric":
            return 1
        if spec.kind == "vector":
            return spec.dim
        if spec.encoding == "hash":
            return spec.hash_buckets
        return len(self.cat_vocab[spec.name]) + 1  # + unseen bucket

    def encode_vector(self, record: InteractionRecord, action: str) -> np.ndarray:
        if not self._fitted:
            raise InvariantError("encoder used before fit")
        x = np.zeros(self.dim)
        for spec in self.schema.context:
            off = self._offsets[spec.name]
            val = record.context_features.get(spec.name)
            if spec.kind == "numeric":
                mean, sd = self.num_stats[spec.name]
                x[off] = 0.0 if val is None else (float(val) - mean) / sd
            elif spec.kind == "vector":
                if val is not None:
                    x[off:off + spec.dim] = val
            elif spec.encoding == "hash":
                bucket = _stable_hash(str(val)) % spec.hash_buckets
                x[off + bucket] = 1.0
            else:
                vocab = self.cat_vocab[spec.name]
                idx = vocab.get(str(val), len(vocab))  # unseen bucket
                x[off + idx] = 1.0
        a_idx = self.action_vocab.get(action, len(self.action_vocab))
        x[self.action_offset + a_idx] = 1.0
        return x

    def encode(self, record: InteractionRecord, action: str) -> "EncodedExample":
        reward = int(record.success and action == record.shown_action)
        prop = record.logged_propensity if record.logged_propensity else 1.0
        return EncodedExample(
            dense_vector=self.encode_vector(record, action),
            action_index=self.action_vocab.get(action, len(self.action_vocab)),
            reward=reward,
            propensity=prop,
        )


def _stable_hash(s: str) -> int:
    # FNV-1a; process-independent, unlike builtin hash()
    h = 0xCBF29CE484222325
    for byte in s.encode():
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class EncodedExample:
    """Numeric view of one (context, action, reward) triple."""

    dense_vector: np.ndarray
    action_index: int
    reward: int
    propensity: float

    def __post_init__(self):
        if self.propensity <= 0:
            raise DataError("propensity must be positive")


# ---------------------------------------------------------------------------
# On-disk dataset directory: records.jsonl, catalog.jsonl, schema.json,
# split.json.  Round-trips field-for-field.

def save_dataset(ds: Dataset, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "records.jsonl"), "w") as fh:
        for r in ds.records:
            fh.write(json.dumps({
                "timestamp": r.timestamp,
                "user_id": r.user_id,
                "session_id": r.session_id,
                "context_features": {
                    k: (list(v) if isinstance(v, tuple) else v)
                    for k, v in r.context_features.items()},
                "shown_action": r.shown_action,
                "candidate_actions": list(r.candidate_actions),
                "success": r.success,
                "logged_propensity": r.logged_propensity,
            }) + "\n")
    with open(os.path.join(out_dir, "catalog.jsonl"), "w") as fh:
        for kind, table in (("user", ds.user_catalog), ("item", ds.item_catalog)):
            for eid, attrs in table.items():
                fh.write(json.dumps({"entity_kind": kind, "entity_id": eid,
                                     "attributes": attrs}) + "\n")
    with open(os.path.join(out_dir, "schema.json"), "w") as fh:
        json.dump(ds.schema.to_dict(), fh, indent=2)
    with open(os.path.join(out_dir, "split.json"), "w") as fh:
        json.dump({"split_tags": ds.split_tags}, fh)


def load_dataset(in_dir: str) -> Dataset:
    with open(os.path.join(in_dir, "schema.json")) as fh:
        schema = SchemaConfig.from_dict(json.load(fh))
    records = []
    with open(os.path.join(in_dir, "records.jsonl")) as fh:
        for line in fh:
            row = json.loads(line)
            ctx = {}
            for spec in schema.context:
                v = row["context_features"].get(spec.name)
                if v is not None and spec.kind == "vector":
                    v = tuple(v)
                ctx[spec.name] = v
            records.append(InteractionRecord(
                timestamp=row["timestamp"], user_id=row["user_id"],
                session_id=row["session_id"], context_features=ctx,
                shown_action=row["shown_action"],
                candidate_actions=tuple(row["candidate_actions"]),
                success=row["success"],
                logged_propensity=row["logged_propensity"]))
    user_cat, item_cat = {}, {}
    with open(os.path.join(in_dir, "catalog.jsonl")) as fh:
        for line in fh:
            row = json.loads(line)
            table = user_cat if row["entity_kind"] == "user" else item_cat
            table[row["entity_id"]] = row["attributes"]
    with open(os.path.join(in_dir, "split.json")) as fh:
        tags = json.load(fh)["split_tags"]
    return Dataset(records, schema, user_cat, item_cat, tags)
