"""Subject-wise signed functional-connectivity graphs.

ROI time series -> Pearson correlation -> per-node top-k positive and
negative neighbours -> symmetric sparse signed graph.  Also the on-disk
formats: time-series CSV, versioned graph JSON and dataset manifests.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GRAPH_FORMAT_VERSION = 1
DEGENERATE_STD = 1e-12

__all__ = [
    "FormatError",
    "GraphError",
    "SubjectTimeSeries",
    "SignedGraph",
    "pearson_correlation",
    "build_signed_graph",
    "graph_from_series",
    "standardize_rows",
    "load_time_series",
    "save_time_series",
    "save_graph",
    "load_graph",
    "read_manifest",
    "write_manifest",
]


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class GraphError(ValueError):
    pass


@dataclass
class SubjectTimeSeries:
    series: np.ndarray  # (N, T)
    subject_id: str = ""
    label: int | None = None

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=float)
        if self.series.ndim != 2:
            raise ValueError("series must be a 2-D (ROI x time) matrix")
        if self.series.shape[1] < 3:
            raise ValueError("need at least 3 time points per ROI")
        if not np.all(np.isfinite(self.series)):
            raise GraphError("series contains non-finite values")

    @property
    def roi_count(self) -> int:
        return self.series.shape[0]

    @property
    def time_points(self) -> int:
        return self.series.shape[1]


@dataclass(eq=False)
class SignedGraph:
    """Signed graph with undirected edges stored once as ``i < j``.

    ``pos``/``neg`` are (m, 2) int arrays, ``pos_w``/``neg_w`` the matching
    weights in (0, 1]; negative weights store the correlation magnitude.
    """

    features: np.ndarray
    pos: np.ndarray
    pos_w: np.ndarray
    neg: np.ndarray
    neg_w: np.ndarray
    label: int | None = None
    subject_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.pos = np.asarray(self.pos, dtype=np.int64).reshape(-1, 2)
        self.neg = np.asarray(self.neg, dtype=np.int64).reshape(-1, 2)
        self.pos_w = np.asarray(self.pos_w, dtype=float).reshape(-1)
        self.neg_w = np.asarray(self.neg_w, dtype=float).reshape(-1)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @staticmethod
    def _both(pairs, w):
        out = []
        for (i, j), x in zip(pairs.tolist(), w.tolist()):
            out.append((i, j, x))
            out.append((j, i, x))
        return sorted(out)

    @property
    def pos_edges(self) -> list:
        """Symmetric list of (i, j, w): every edge appears in both directions."""
        return self._both(self.pos, self.pos_w)

    @property
    def neg_edges(self) -> list:
        return self._both(self.neg, self.neg_w)

    def neighbors(self, sign: int) -> list:
        pairs = self.pos if sign > 0 else self.neg
        out = [[] for _ in range(self.n)]
        for i, j in pairs.tolist():
            out[i].append(j)
            out[j].append(i)
        return [sorted(x) for x in out]

    def permuted(self, perm) -> "SignedGraph":
        """Relabel nodes: new node ``a`` is old node ``perm[a]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))

        def relabel(pairs, w):
            if not len(pairs):
                return pairs.copy(), w.copy()
            p = np.sort(inv[pairs], axis=1)
            order = np.lexsort((p[:, 1], p[:, 0]))  # keep the canonical edge order
            return p[order], w[order]

        pos, pos_w = relabel(self.pos, self.pos_w)
        neg, neg_w = relabel(self.neg, self.neg_w)
        return SignedGraph(
            self.features[perm], pos, pos_w, neg, neg_w, self.label, self.subject_id,
        )

    def __eq__(self, other):
        if not isinstance(other, SignedGraph):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.pos, other.pos)
            and np.array_equal(self.pos_w, other.pos_w)
            and np.array_equal(self.neg, other.neg)
            and np.array_equal(self.neg_w, other.neg_w)
        )


def pearson_correlation(series) -> np.ndarray:
    """Row-wise Pearson correlation; constant rows correlate 0 with everything."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 2 or x.shape[1] < 3:
        raise GraphError("series must be N x T with T >= 3")
    if not np.all(np.isfinite(x)):
        raise GraphError("series contains non-finite values")
    xc = x - x.mean(axis=1, keepdims=True)
    std = np.sqrt(np.mean(xc * xc, axis=1))
    ok = std >= DEGENERATE_STD
    nrm = np.sqrt(np.sum(xc * xc, axis=1))
    z = np.zeros_like(xc)
    z[ok] = xc[ok] / nrm[ok, None]
    c = z @ z.T
    c = 0.5 * (c + c.T)
    np.clip(c, -1.0, 1.0, out=c)
    np.fill_diagonal(c, 1.0)
    return c


def _select_topk(a: np.ndarray, k: int) -> set:
    """Per-row top-k strictly positive off-diagonal entries, ties -> lower column."""
    n = a.shape[0]
    chosen = set()
    cols = np.arange(n)
    for i in range(n):
        row = a[i]
        cand = np.flatnonzero((row > 0) & (cols != i))
        if len(cand) == 0:
            continue
        order = np.lexsort((cand, -row[cand]))
        for j in cand[order[:k]]:
            chosen.add((min(i, int(j)), max(i, int(j))))
    return chosen


def build_signed_graph(C, k: int, features=None, label=None, subject_id="") -> SignedGraph:
    """Keep each node's ``k`` strongest positive and ``k`` strongest negative
    correlations, then symmetrise by union."""
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if C.ndim != 2 or C.shape[1] != n:
        raise GraphError("correlation matrix must be square")
    if not (1 <= k < n):
        raise GraphError(f"k out of range: need 1 <= k < {n}, got {k}")
    edges = []
    for a in (np.maximum(C, 0.0), np.maximum(-C, 0.0)):
        pairs = sorted(_select_topk(a, k))
        idx = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        w = a[idx[:, 0], idx[:, 1]] if len(idx) else np.zeros(0)
        edges.append((idx, w))
    if features is None:
        features = np.zeros((n, 0))
    (pos, pw), (neg, nw) = edges
    return SignedGraph(features, pos, pw, neg, nw, label, subject_id)


def standardize_rows(x) -> np.ndarray:
    """Zero-mean rows scaled to unit Euclidean norm (z-score / sqrt(T)).

    Constant rows become all zeros.
    """
    x = np.asarray(x, dtype=float)
    xc = x - x.mean(axis=1, keepdims=True)
    nrm = np.linalg.norm(xc, axis=1, keepdims=True)
    out = np.zeros_like(xc)
    ok = nrm[:, 0] > DEGENERATE_STD * math.sqrt(x.shape[1])
    out[ok] = xc[ok] / nrm[ok]
    return out


def graph_from_series(ts: SubjectTimeSeries, k: int = 10, zscore: bool = True) -> SignedGraph:
    feats = standardize_rows(ts.series) if zscore else ts.series.copy()
    C = pearson_correlation(ts.series)
    return build_signed_graph(C, k, feats, ts.label, ts.subject_id)


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------


def _parse_header(line: str, path, lineno: int) -> dict:
    out = {}
    for tok in line.lstrip("#").split():
        if "=" not in tok:
            raise FormatError(f"malformed header token {tok!r}", path, lineno)
        key, val = tok.split("=", 1)
        out[key.strip()] = val.strip()
    if "label" in out:
        try:
            out["label"] = int(out["label"])
        except ValueError:
            raise FormatError(f"label must be an integer, got {out['label']!r}", path, lineno) from None
    return out


def load_time_series(path) -> SubjectTimeSeries:
    """Read one subject: one CSV row per ROI, optional ``# subject=.. label=..`` header."""
    path = Path(path)
    header = {}
    rows = []
    width = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if rows:
                    raise FormatError("header must precede data rows", path, lineno)
                header.update(_parse_header(line, path, lineno))
                continue
            try:
                vals = [float(t) for t in line.split(",")]
            except ValueError:
                raise FormatError("non-numeric value in ROI row", path, lineno) from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise FormatError(
                    f"ragged row: ROI row {len(rows) + 1} has {len(vals)} values, expected {width}",
                    path, lineno,
                )
            if not all(math.isfinite(v) for v in vals):
                raise FormatError("non-finite value in ROI row", path, lineno)
            rows.append(vals)
    if not rows:
        raise FormatError("no ROI rows", path)
    if width < 3:
        raise FormatError("need at least 3 time points per ROI", path)
    return SubjectTimeSeries(
        np.array(rows), str(header.get("subject", path.stem)), header.get("label")
    )


def save_time_series(ts: SubjectTimeSeries, path) -> None:
    with open(path, "w") as fh:
        head = f"# subject={ts.subject_id}"
        if ts.label is not None:
            head += f" label={int(ts.label)}"
        fh.write(head + "\n")
        for row in ts.series:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _edge_rows(pairs, w):
    return [[int(i), int(j), float(x)] for (i, j), x in zip(pairs.tolist(), w.tolist())]


def save_graph(graph: SignedGraph, path) -> None:
    doc = {
        "version": GRAPH_FORMAT_VERSION,
        "n": graph.n,
        "features": graph.features.tolist(),
        "pos_edges": _edge_rows(graph.pos, graph.pos_w),
        "neg_edges": _edge_rows(graph.neg, graph.neg_w),
        "label": graph.label,
        "subject": graph.subject_id,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def _parse_edges(rows, n, what, path):
    if not isinstance(rows, list):
        raise FormatError(f"{what} must be a list", path)
    pairs, w = [], []
    for r in rows:
        if not (isinstance(r, list) and len(r) == 3):
            raise FormatError(f"{what} entries must be [i, j, w]", path)
        i, j, x = int(r[0]), int(r[1]), float(r[2])
        if not (0 <= i < j < n):
            raise FormatError(f"{what} entry {r} must satisfy 0 <= i < j < n", path)
        if not (0.0 < x <= 1.0):
            raise FormatError(f"{what} weight {x} outside (0, 1]", path)
        pairs.append((i, j))
        w.append(x)
    return np.array(pairs, dtype=np.int64).reshape(-1, 2), np.array(w, dtype=float)


def load_graph(path) -> SignedGraph:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(doc, dict):
        raise FormatError("graph file must hold a JSON object", path)
    version = doc.get("version")
    if version != GRAPH_FORMAT_VERSION:
        raise FormatError(f"unknown graph format version {version!r}", path)
    for key in ("n", "features", "pos_edges", "neg_edges"):
        if key not in doc:
            raise FormatError(f"missing field {key!r}", path)
    n = int(doc["n"])
    feats = np.array(doc["features"], dtype=float)
    if feats.ndim != 2 or feats.shape[0] != n:
        if not (n == 0 or feats.size == 0):
            raise FormatError(f"features must be an n x T matrix with n={n}", path)
        feats = feats.reshape(n, -1)
    pos, pw = _parse_edges(doc["pos_edges"], n, "pos_edges", path)
    neg, nw = _parse_edges(doc["neg_edges"], n, "neg_edges", path)
    label = doc.get("label")
    return SignedGraph(feats, pos, pw, neg, nw, None if label is None else int(label),
                       str(doc.get("subject", "")))


def read_manifest(path) -> list:
    """Parse ``<path> [label]`` lines; relative paths resolve against the manifest."""
    path = Path(path)
    base = path.parent
    out = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) > 2:
                raise FormatError("expected '<path> [label]'", path, lineno)
            p = Path(parts[0])
            if not p.is_absolute():
                p = base / p
            label = None
            if len(parts) == 2:
                try:
                    label = int(parts[1])
                except ValueError:
                    raise FormatError(f"label must be an integer: {parts[1]!r}", path, lineno) from None
            out.append((p, label))
    if not out:
        raise FormatError("manifest lists no files", path)
    return out


def write_manifest(entries, path) -> None:
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w") as fh:
        for p, label in entries:
            p = Path(p).resolve()
            try:
                rel = os.path.relpath(p, base)
            except ValueError:
                rel = str(p)
            fh.write(rel if label is None else f"{rel} {int(label)}")
            fh.write("\n")


def load_dataset(manifest, k: int = 10, zscore: bool = True) -> list:
    """Load every entry of a manifest as a :class:`SignedGraph`.

    Graph JSON files are read directly; CSV time series are converted with
    :func:`graph_from_series`.  Manifest labels override file labels.
    """
    graphs = []
    for p, label in read_manifest(manifest):
        if p.suffix.lower() == ".csv":
            g = graph_from_series(load_time_series(p), k=k, zscore=zscore)
        else:
            g = load_graph(p)
        if label is not None:
            g.label = label
        if g.label is None:
            raise FormatError("subject has no label", p)
        graphs.append(g)
    return graphs
