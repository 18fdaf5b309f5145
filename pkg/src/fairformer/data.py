"""Graph data model, dataset ingestion, label binarization and split protocol.

Datasets arrive as two delimited text files: a node table (header row with an
id column, numeric feature columns, a binary sensitive column and a label
column) and an edge list with two id columns. A plain-text manifest names the
files and columns. Edge lists may record each undirected edge once; the
loader symmetrizes and collapses duplicates. Self-loops present in the input
are kept as-is.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import IngestionError, SchemaError, SplitError


@dataclass(frozen=True)
class Graph:
    """Immutable node-classification graph.

    adjacency is a symmetric 0/1 CSR matrix (stored entries are 1.0, both
    directions of every undirected edge present). features holds the raw node
    table columns; features[:, sensitive_index] is exactly 0/1. labels are
    binary for every node where label_mask is True and -1 elsewhere.
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    sensitive_index: int
    labels: np.ndarray
    label_mask: np.ndarray

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def sensitive(self) -> np.ndarray:
        return self.features[:, self.sensitive_index]

    def directed_entry_count(self) -> int:
        """Number of stored (directed) adjacency entries."""
        return int(self.adjacency.nnz)

    def undirected_edge_count(self) -> int:
        """Number of undirected edges; self-loops count once."""
        loops = int(self.adjacency.diagonal().sum())
        return (self.adjacency.nnz - loops) // 2 + loops

    def validate(self) -> None:
        a = self.adjacency
        if a.shape[0] != a.shape[1]:
            raise SchemaError(f"adjacency must be square, got {a.shape}")
        if (a != a.T).nnz != 0:
            raise SchemaError("adjacency is not symmetric")
        if a.nnz and not np.all(a.data == 1.0):
            raise SchemaError("adjacency entries must all equal 1")
        if self.features.shape[0] != self.n:
            raise SchemaError("features row count does not match node count")
        sens = self.features[:, self.sensitive_index]
        if not np.all(np.isin(sens, (0.0, 1.0))):
            raise SchemaError(f"sensitive column {self.sensitive_index} is not binary")
        masked = self.labels[self.label_mask]
        if masked.size and not np.all(np.isin(masked, (0, 1))):
            raise SchemaError("labels must be binary on masked nodes")

    def __post_init__(self):
        self.validate()
        self.features.setflags(write=False)
        self.labels.setflags(write=False)
        self.label_mask.setflags(write=False)


def binarize_labels(raw_labels) -> np.ndarray:
    """Map raw class ids to binary labels: 0 stays 0, every class >= 1 becomes 1."""
    raw = np.asarray(raw_labels)
    if raw.size and np.any(raw < 0):
        raise SchemaError("binarize_labels: negative label encountered")
    return (raw >= 1).astype(np.int64)


@dataclass(frozen=True)
class ColumnSchema:
    """Column mapping for the node/edge files."""

    id_column: str = "id"
    sensitive: str = "sensitive"
    label: str = "label"
    feature_columns: tuple | None = None  # None -> all non-id, non-label columns
    delimiter: str = ","
    unlabeled_values: tuple = ("",)  # label cell values meaning "no ground truth"
    standardize: bool = False  # per-column z-scoring of non-sensitive features


def load_manifest(path) -> tuple[Path, Path, ColumnSchema]:
    """Parse a key=value manifest: nodes=..., edges=..., sensitive=..., label=...

    Optional keys: id, delimiter, features (comma list), unlabeled (comma
    list of label cell values to treat as missing), standardize (0/1).
    Relative file paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"manifest not found: {path}")
    entries = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise IngestionError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    for required in ("nodes", "edges", "sensitive", "label"):
        if required not in entries:
            raise IngestionError(f"{path}: manifest missing key {required!r}")
    base = path.parent
    schema = ColumnSchema(
        id_column=entries.get("id", "id"),
        sensitive=entries["sensitive"],
        label=entries["label"],
        feature_columns=tuple(c.strip() for c in entries["features"].split(",")) if "features" in entries else None,
        delimiter=entries.get("delimiter", ","),
        unlabeled_values=tuple(v.strip() for v in entries.get("unlabeled", "").split(",")) if "unlabeled" in entries else ("",),
        standardize=entries.get("standardize", "0") not in ("0", "false", "no"),
    )
    return base / entries["nodes"], base / entries["edges"], schema


def load_dataset(node_file, edge_file, schema: ColumnSchema | None = None) -> Graph:
    """Ingest node and edge files into a Graph.

    The node file needs a header row. The edge file holds two id columns per
    row; a single header row is skipped if its first row does not map onto
    known node ids. Every edge is stored in both directions; duplicates
    collapse to a single unit entry.
    """
    schema = schema or ColumnSchema()
    node_file, edge_file = Path(node_file), Path(edge_file)
    if not node_file.exists():
        raise IngestionError(f"node file not found: {node_file}")
    if not edge_file.exists():
        raise IngestionError(f"edge file not found: {edge_file}")

    with node_file.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{node_file}: empty node file") from None
        header = [h.strip() for h in header]
        col_index = {name: i for i, name in enumerate(header)}
        for needed in (schema.id_column, schema.sensitive, schema.label):
            if needed not in col_index:
                raise SchemaError(f"{node_file}: column {needed!r} missing from header {header}")
        if schema.feature_columns is None:
            feature_names = [h for h in header if h not in (schema.id_column, schema.label)]
        else:
            feature_names = list(schema.feature_columns)
            for name in feature_names:
                if name not in col_index:
                    raise SchemaError(f"{node_file}: feature column {name!r} missing")
            if schema.sensitive not in feature_names:
                feature_names.append(schema.sensitive)

        ids, rows, raw_labels, mask = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestionError(f"{node_file}:{lineno}: expected {len(header)} cells, got {len(row)}")
            ids.append(row[col_index[schema.id_column]].strip())
            values = []
            for name in feature_names:
                cell = row[col_index[name]].strip()
                try:
                    values.append(float(cell))
                except ValueError:
                    raise IngestionError(
                        f"{node_file}:{lineno}: non-numeric value {cell!r} in column {name!r}") from None
            rows.append(values)
            label_cell = row[col_index[schema.label]].strip()
            if label_cell in schema.unlabeled_values:
                raw_labels.append(0)
                mask.append(False)
            else:
                try:
                    raw_labels.append(int(float(label_cell)))
                except ValueError:
                    raise IngestionError(
                        f"{node_file}:{lineno}: non-integer label {label_cell!r}") from None
                mask.append(True)

    if not ids:
        raise IngestionError(f"{node_file}: no node rows")
    if len(set(ids)) != len(ids):
        raise IngestionError(f"{node_file}: duplicate node ids")
    id_of = {node_id: i for i, node_id in enumerate(ids)}
    n = len(ids)

    features = np.asarray(rows, dtype=np.float64)
    sensitive_index = feature_names.index(schema.sensitive)
    sens = features[:, sensitive_index]
    if not np.all(np.isin(sens, (0.0, 1.0))):
        bad = sorted(set(sens) - {0.0, 1.0})
        raise SchemaError(f"{node_file}: sensitive column {schema.sensitive!r} has non-binary values {bad[:5]}")

    label_mask = np.asarray(mask, dtype=bool)
    raw = np.asarray(raw_labels, dtype=np.int64)
    if np.any(raw[label_mask] < 0):
        raise SchemaError(f"{node_file}: negative label on a labeled node")
    labels = np.full(n, -1, dtype=np.int64)
    labels[label_mask] = binarize_labels(raw[label_mask])

    if schema.standardize:
        features = features.copy()
        for j in range(features.shape[1]):
            if j == sensitive_index:
                continue
            col = features[:, j]
            std = col.std()
            if std > 0:
                features[:, j] = (col - col.mean()) / std

    def looks_numeric(cell):
        try:
            float(cell)
            return True
        except ValueError:
            return False

    src, dst = [], []
    with edge_file.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            cells = [c.strip() for c in row if c.strip() != ""]
            if len(cells) < 2:
                raise IngestionError(f"{edge_file}:{lineno}: expected two id columns")
            u, v = cells[0], cells[1]
            if u not in id_of or v not in id_of:
                # a first row of non-numeric non-ids is a header; anything else dangles
                if lineno == 1 and not looks_numeric(u) and not looks_numeric(v):
                    continue
                raise IngestionError(f"{edge_file}:{lineno}: edge endpoint {u!r} or {v!r} is not a node id")
            src.append(id_of[u])
            dst.append(id_of[v])

    row_idx = np.asarray(src + dst, dtype=np.int64)
    col_idx = np.asarray(dst + src, dtype=np.int64)
    adjacency = sp.coo_matrix((np.ones(row_idx.size), (row_idx, col_idx)), shape=(n, n)).tocsr()
    adjacency.data[:] = 1.0  # collapse duplicates
    adjacency.eliminate_zeros()

    return Graph(adjacency=adjacency, features=features, sensitive_index=sensitive_index,
                 labels=labels, label_mask=label_mask)


@dataclass(frozen=True)
class SplitSpec:
    """Split protocol parameters.

    Per class, the train pool takes min(ceil(0.5 * class_size), cap) nodes
    drawn outside val/test; val and test each take the val/test fraction of
    all labeled nodes, balanced across classes within one node.
    """

    train_per_class_cap: int = 50
    val_fraction: float = 0.25
    test_fraction: float = 0.25
    seed: int = 0
    folds: int = 5

    def __post_init__(self):
        if self.train_per_class_cap <= 0:
            raise SplitError("train_per_class_cap must be positive")
        if not 0 < self.val_fraction + self.test_fraction < 1:
            raise SplitError("val_fraction + test_fraction must lie in (0, 1)")
        if self.folds < 1:
            raise SplitError("folds must be >= 1")


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        sets = [set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise SplitError("split sets overlap")

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for part in (self.train, self.val, self.test):
            h.update(np.sort(part).astype("<i8").tobytes())
            h.update(b"|")
        return h.hexdigest()


def _balanced_shares(total: int, class_order) -> dict:
    """Split `total` slots across classes as evenly as possible (within one)."""
    shares = {}
    base, extra = divmod(total, len(class_order))
    for i, cls in enumerate(class_order):
        shares[cls] = base + (1 if i < extra else 0)
    return shares


def make_split(g: Graph, spec: SplitSpec) -> Split:
    """Draw one seeded train/val/test split over labeled nodes.

    Validation and test sets are class-balanced within one node; the train
    set takes up to min(ceil(0.5 * class_size), cap) per class from the
    remaining labeled nodes (clamped to what is left after val/test).
    """
    labeled = np.nonzero(g.label_mask)[0]
    classes = [0, 1]
    per_class = {c: labeled[g.labels[labeled] == c] for c in classes}
    for c in classes:
        if per_class[c].size < 2:
            raise SplitError(f"class {c} has {per_class[c].size} labeled nodes; need at least 2")

    n_labeled = labeled.size
    val_total = int(np.floor(spec.val_fraction * n_labeled))
    test_total = int(np.floor(spec.test_fraction * n_labeled))
    # give any odd slot to the larger class so small classes are not drained
    order = sorted(classes, key=lambda c: (-per_class[c].size, c))
    val_share = _balanced_shares(val_total, order)
    test_share = _balanced_shares(test_total, order)

    rng = np.random.default_rng(spec.seed)
    train_parts, val_parts, test_parts = [], [], []
    for c in classes:
        pool = per_class[c].copy()
        rng.shuffle(pool)
        need = val_share[c] + test_share[c]
        if pool.size <= need:
            raise SplitError(
                f"class {c} too small to fill val/test: {pool.size} labeled nodes, "
                f"{need} required before any training node")
        val_parts.append(pool[:val_share[c]])
        test_parts.append(pool[val_share[c]:need])
        remaining = pool[need:]
        want = min(int(np.ceil(0.5 * pool.size)), spec.train_per_class_cap, remaining.size)
        train_parts.append(remaining[:want])

    return Split(
        train=np.sort(np.concatenate(train_parts)),
        val=np.sort(np.concatenate(val_parts)),
        test=np.sort(np.concatenate(test_parts)),
    )


def make_folds(g: Graph, spec: SplitSpec) -> list[Split]:
    """Independent seeded re-splits, one per fold (seed, seed+1, ...)."""
    return [make_split(g, replace(spec, seed=spec.seed + i)) for i in range(spec.folds)]
