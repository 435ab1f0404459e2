"""Graph bundles on disk, random node splits, and a synthetic SBM generator.

A bundle directory holds::

    edges.tsv     one undirected edge per line: two 0-based node ids
    features.csv  n lines of d comma-separated floats
    labels.csv    n lines, one 0-based class id each
    meta.json     optional: {"name": ..., "num_classes": ...}
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from autopoly import rng as _rng
from autopoly.errors import InputError
from autopoly.graph import Graph, from_edge_list, node_homophily

log = logging.getLogger(__name__)

SEMI_SUPERVISED = (0.10, 0.10, 0.80)
SUPERVISED = (0.48, 0.32, 0.20)
MAX_SBM_ATTEMPTS = 10


@dataclass(frozen=True)
class Bundle:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "bundle"

    def __post_init__(self):
        n = self.graph.n
        if self.features.ndim != 2 or self.features.shape[0] != n or self.features.shape[1] < 1:
            raise InputError(f"features must be {n} x d with d >= 1, got {self.features.shape}")
        if self.labels.shape != (n,):
            raise InputError(f"expected {n} labels, got shape {self.labels.shape}")
        if self.num_classes < 2:
            raise InputError(f"need at least 2 classes, got {self.num_classes}")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise InputError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise InputError("features contain non-finite values")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def row_normalized(self) -> "Bundle":
        """Copy with each feature row scaled to unit L1 norm (zero rows kept)."""
        s = np.abs(self.features).sum(axis=1, keepdims=True)
        s[s == 0] = 1.0
        return Bundle(self.graph, self.features / s, self.labels, self.num_classes, self.name)


def _read_lines(path: Path):
    if not path.is_file():
        raise InputError("file not found", path=path)
    text = path.read_text(encoding="utf-8")
    # splitlines() accepts both LF and CRLF
    return text.splitlines()


def load_bundle(path) -> Bundle:
    """Read and validate a bundle directory."""
    root = Path(path)
    if not root.is_dir():
        raise InputError("bundle directory not found", path=root)

    meta = {}
    meta_path = root / "meta.json"
    if meta_path.is_file():
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"invalid JSON: {exc.msg}", path=meta_path, line=exc.lineno) from None

    labels_path = root / "labels.csv"
    labels = []
    for lineno, line in enumerate(_read_lines(labels_path), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            labels.append(int(line))
        except ValueError:
            raise InputError(f"not an integer class id: {line!r}", path=labels_path, line=lineno) from None
        if labels[-1] < 0:
            raise InputError(f"negative class id {labels[-1]}", path=labels_path, line=lineno)
    if not labels:
        raise InputError("no labels", path=labels_path)
    labels = np.array(labels, dtype=np.int64)
    n = labels.size

    if "num_classes" in meta:
        num_classes = int(meta["num_classes"])
        bad = np.flatnonzero(labels >= num_classes)
        if bad.size:
            raise InputError(
                f"class id {labels[bad[0]]} outside declared range [0, {num_classes})",
                path=labels_path,
                line=_nth_nonblank_line(labels_path, bad[0]),
            )
    else:
        num_classes = int(labels.max()) + 1

    features_path = root / "features.csv"
    rows = []
    width = None
    for lineno, line in enumerate(_read_lines(features_path), start=1):
        if not line.strip():
            continue
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError:
            raise InputError("unparseable float", path=features_path, line=lineno) from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise InputError(f"ragged row: {len(row)} values, expected {width}", path=features_path, line=lineno)
        rows.append(row)
    if len(rows) != n:
        raise InputError(f"{len(rows)} feature rows but {n} labels", path=features_path)
    features = np.array(rows, dtype=np.float64)

    edges_path = root / "edges.tsv"
    pairs = []
    for lineno, line in enumerate(_read_lines(edges_path), start=1):
        toks = line.split()
        if not toks:
            continue
        if len(toks) != 2:
            raise InputError(f"expected two node ids, got {len(toks)} fields", path=edges_path, line=lineno)
        try:
            u, v = int(toks[0]), int(toks[1])
        except ValueError:
            raise InputError("node ids must be integers", path=edges_path, line=lineno) from None
        if not (0 <= u < n and 0 <= v < n):
            raise InputError(f"edge ({u}, {v}) out of range for n={n}", path=edges_path, line=lineno)
        pairs.append((u, v))

    graph = from_edge_list(n, pairs)
    return Bundle(graph, features, labels, num_classes, str(meta.get("name", root.name)))


def _nth_nonblank_line(path: Path, index: int) -> int:
    seen = -1
    for lineno, line in enumerate(_read_lines(path), start=1):
        if line.strip():
            seen += 1
            if seen == index:
                return lineno
    return -1


def save_bundle(bundle: Bundle, path) -> Path:
    """Write ``bundle`` in the directory format read by :func:`load_bundle`."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for u, v in bundle.graph.edges.tolist():
            fh.write(f"{u}\t{v}\n")
    with open(root / "features.csv", "w", encoding="utf-8", newline="\n") as fh:
        for row in bundle.features.tolist():
            fh.write(",".join(repr(x) for x in row) + "\n")
    with open(root / "labels.csv", "w", encoding="utf-8", newline="\n") as fh:
        for y in bundle.labels.tolist():
            fh.write(f"{y}\n")
    meta = {"name": bundle.name, "num_classes": bundle.num_classes}
    (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return root


@dataclass(frozen=True)
class Split:
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    seed: int
    ratios: tuple = field(default=())

    def sizes(self):
        return tuple(int(m.sum()) for m in (self.train_mask, self.val_mask, self.test_mask))


def repair_ratios(train_ratio, val_ratio, test_ratio):
    """Shrink the test share when the three ratios sum past 1.

    48/32/32 (112%) becomes 48/32/20: train and val keep their shares and
    test takes what is left.
    """
    for name, r in (("train", train_ratio), ("val", val_ratio), ("test", test_ratio)):
        if not 0.0 < r < 1.0:
            raise InputError(f"{name} ratio must lie in (0, 1), got {r}")
    if train_ratio + val_ratio >= 1.0:
        raise InputError(f"train + val ratios leave no test nodes ({train_ratio} + {val_ratio})")
    total = train_ratio + val_ratio + test_ratio
    if total > 1.0 + 1e-12:
        repaired = 1.0 - train_ratio - val_ratio
        log.warning("split ratios sum to %.4g; test ratio %.4g reduced to %.4g", total, test_ratio, repaired)
        test_ratio = repaired
    return train_ratio, val_ratio, test_ratio


def _count(ratio, n):
    # tolerate representation error such as 0.29 * 100 = 28.999999999999996
    return int(math.floor(ratio * n + 1e-9))


def random_split(n, train_ratio, val_ratio, test_ratio, seed, labels=None) -> Split:
    """Shuffle node ids and cut consecutive train/val/test blocks by floor(ratio * n).

    When ``labels`` is given, a split whose training block misses some
    class is rejected. No stratification is performed.
    """
    ratios = repair_ratios(train_ratio, val_ratio, test_ratio)
    sizes = [_count(r, n) for r in ratios]
    if sum(sizes) > n:
        sizes[2] = n - sizes[0] - sizes[1]
    for name, s in zip(("train", "val", "test"), sizes):
        if s < 1:
            raise InputError(f"{name} split would be empty for n={n} and ratios {ratios}")

    order = _rng.make_rng(seed, _rng.SPLIT).permutation(n)
    masks = []
    start = 0
    for s in sizes:
        m = np.zeros(n, dtype=bool)
        m[order[start : start + s]] = True
        masks.append(m)
        start += s

    if labels is not None:
        labels = np.asarray(labels)
        present = np.unique(labels[masks[0]])
        missing = np.setdiff1d(np.unique(labels), present)
        if missing.size:
            raise InputError(f"training split (seed {seed}) has no nodes of class {missing.tolist()}")
    return Split(masks[0], masks[1], masks[2], int(seed), tuple(float(r) for r in ratios))


@dataclass(frozen=True)
class SbmParams:
    n: int
    num_classes: int
    p_in: float
    p_out: float
    num_features: int = 16
    feature_noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise InputError(f"need at least 2 classes, got {self.num_classes}")
        if self.n < self.num_classes or self.n % self.num_classes:
            raise InputError(f"n={self.n} must be a positive multiple of num_classes={self.num_classes}")
        for name in ("p_in", "p_out"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise InputError(f"{name} must lie in [0, 1], got {p}")
        if self.num_features < 1:
            raise InputError("num_features must be at least 1")
        if self.feature_noise < 0:
            raise InputError("feature_noise must be non-negative")


def class_means(seed: int, num_classes: int, dim: int) -> np.ndarray:
    """Unit-norm class centres; orthonormal whenever ``dim >= num_classes``."""
    g = _rng.make_rng(seed, _rng.SBM_MEANS, num_classes, dim).standard_normal((dim, num_classes))
    if dim >= num_classes:
        q, r = np.linalg.qr(g)
        # fix column signs so the result does not depend on the LAPACK build
        q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
        return np.ascontiguousarray(q.T)
    return (g / np.linalg.norm(g, axis=0)).T.copy()


def _sample_edges(params: SbmParams, attempt: int) -> np.ndarray:
    rng = _rng.make_rng(params.seed, _rng.SBM_EDGES, attempt)
    size = params.n // params.num_classes
    chunks = []
    for a in range(params.num_classes):
        for b in range(a, params.num_classes):
            p = params.p_in if a == b else params.p_out
            draws = rng.random((size, size))
            hit = draws < p
            if a == b:
                hit = np.triu(hit, k=1)
            u, v = np.nonzero(hit)
            chunks.append(np.stack([u + a * size, v + b * size], axis=1))
    return np.concatenate(chunks, axis=0)


def sbm_generate(params: SbmParams, name: str | None = None) -> Bundle:
    """Sample a stochastic-block-model bundle with Gaussian class-mean features.

    Blocks are equal-sized and contiguous (node i has class
    ``i // (n / C)``). Edge sets leaving some class with no edges at all
    are redrawn with a new sub-seed, at most 10 times.
    """
    C = params.num_classes
    labels = np.repeat(np.arange(C, dtype=np.int64), params.n // C)
    for attempt in range(MAX_SBM_ATTEMPTS):
        graph = from_edge_list(params.n, _sample_edges(params, attempt))
        per_class = np.bincount(labels, weights=graph.degrees, minlength=C)
        if np.all(per_class > 0):
            break
    else:
        raise InputError(
            f"SBM with p_in={params.p_in}, p_out={params.p_out} left a class without edges "
            f"after {MAX_SBM_ATTEMPTS} attempts"
        )
    means = class_means(params.seed, C, params.num_features)
    noise = _rng.make_rng(params.seed, _rng.SBM_NOISE).standard_normal((params.n, params.num_features))
    features = means[labels] + params.feature_noise * noise
    if name is None:
        name = f"sbm-n{params.n}-c{C}-pin{params.p_in:g}-pout{params.p_out:g}-s{params.seed}"
    return Bundle(graph, features, labels, C, name)


def bundle_homophily(bundle: Bundle):
    return node_homophily(bundle.graph, bundle.labels)
