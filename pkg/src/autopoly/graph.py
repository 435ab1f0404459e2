"""Undirected graphs and the sparse operators built from them.

A :class:`Graph` is built once from an edge list and then never mutated.
It carries three CSR matrices of the same sparsity (plus the diagonal):

* ``adjacency``       A, the 0/1 simple-graph adjacency;
* ``norm_adjacency``  D^-1/2 (A + I) D^-1/2 with D the degree of A + I;
* ``norm_laplacian``  I - norm_adjacency.

All values are float64 and every row stores its column indices sorted,
so a sparse-dense product accumulates in a fixed order.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from autopoly.errors import InputError, ShapeError

NARROW = 4


class Graph:
    """Immutable simple undirected graph with its normalized operators."""

    def __init__(self, n: int, edges: np.ndarray):
        self.n = int(n)
        # (m, 2) int64, u < v, lexicographically sorted
        self.edges = edges
        self.edges.setflags(write=False)

        u, v = edges[:, 0], edges[:, 1]
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        ones = np.ones(rows.shape[0], dtype=np.float64)
        self.adjacency = _csr(sp.coo_matrix((ones, (rows, cols)), shape=(n, n)))

        self.degrees = np.diff(self.adjacency.indptr).astype(np.int64)
        dhat = self.degrees + 1.0

        # one rounding per entry; the product d_i * d_j is exact and symmetric
        a = self.adjacency.tocoo()
        vals = 1.0 / np.sqrt(dhat[a.row] * dhat[a.col])
        off = sp.csr_matrix((vals, (a.row, a.col)), shape=(n, n))
        # Diagonal of the Laplacian is computed first and the adjacency
        # diagonal is derived from it, so A~ + L~ == I holds bit-exactly.
        lap_diag = 1.0 - 1.0 / dhat
        adj_diag = 1.0 - lap_diag
        self.norm_adjacency = _csr(off + sp.diags(adj_diag))
        self.norm_laplacian = _csr(sp.diags(lap_diag) - off)

        self._cache: dict = {}
        for m in (self.adjacency, self.norm_adjacency, self.norm_laplacian):
            for arr in (m.data, m.indices, m.indptr):
                arr.setflags(write=False)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def neighbors(self, v: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[v] : a.indptr[v + 1]]

    def rescaled_laplacian(self, lambda_max: float = 2.0) -> sp.csr_matrix:
        """Return ``2 L / lambda_max - I``, cached per ``lambda_max``."""
        key = ("cheb", float(lambda_max))
        if key not in self._cache:
            m = self.norm_laplacian * (2.0 / lambda_max) - sp.identity(self.n, format="csr")
            self._cache[key] = _csr(m)
        return self._cache[key]

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, edges={self.num_edges})"


def _csr(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m, dtype=np.float64)
    m.sum_duplicates()
    m.sort_indices()
    return m


def from_edge_list(n: int, raw_edges) -> Graph:
    """Build a :class:`Graph` from possibly redundant undirected edges.

    Both orientations of an edge and repeated edges collapse to one;
    self-loops are dropped (they only reappear inside normalization).

    >>> g = from_edge_list(3, [(0, 1), (1, 0), (1, 1)])
    >>> g.edges.tolist()
    [[0, 1]]
    """
    n = int(n)
    if n < 1:
        raise InputError(f"node count must be positive, got {n}")
    pairs = np.asarray(list(raw_edges) if not isinstance(raw_edges, np.ndarray) else raw_edges)
    if pairs.size == 0:
        pairs = np.zeros((0, 2), dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise InputError(f"edges must be (u, v) pairs, got array of shape {pairs.shape}")
    if not np.issubdtype(pairs.dtype, np.integer):
        if not np.all(np.equal(np.mod(pairs, 1), 0)):
            raise InputError("edge endpoints must be integers")
    pairs = pairs.astype(np.int64)

    bad = np.flatnonzero((pairs < 0).any(axis=1) | (pairs >= n).any(axis=1))
    if bad.size:
        u, v = pairs[bad[0]]
        raise InputError(f"edge ({u}, {v}) at index {bad[0]} is out of range for n={n}")

    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.sort(pairs, axis=1)
    pairs = np.unique(pairs, axis=0) if pairs.shape[0] else pairs.reshape(0, 2)
    return Graph(n, np.ascontiguousarray(pairs))


class Homophily(NamedTuple):
    ratio: float
    excluded: int


def node_homophily(graph: Graph, labels) -> Homophily:
    """Average over nodes of the fraction of neighbours sharing the node's label.

    Nodes without neighbours have an undefined fraction; they are left
    out of the average and counted in ``excluded``.
    """
    labels = np.asarray(labels)
    if labels.shape != (graph.n,):
        raise ShapeError(f"expected {graph.n} labels, got shape {labels.shape}")
    deg = graph.degrees
    if graph.num_edges == 0:
        raise InputError("graph has no edges; homophily is undefined")

    u, v = graph.edges[:, 0], graph.edges[:, 1]
    same = (labels[u] == labels[v]).astype(np.float64)
    matches = np.bincount(u, weights=same, minlength=graph.n) + np.bincount(
        v, weights=same, minlength=graph.n
    )
    has = deg > 0
    ratio = float(np.mean(matches[has] / deg[has]))
    return Homophily(ratio, int(np.count_nonzero(~has)))


def spmv(matrix, dense: np.ndarray) -> np.ndarray:
    """Sparse (n x m) times dense (m x d), returning a new float64 array."""
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim not in (1, 2) or matrix.shape[1] != dense.shape[0]:
        raise ShapeError(f"cannot multiply {matrix.shape} operator by array of shape {dense.shape}")
    if dense.ndim == 2 and dense.shape[1] <= NARROW:
        # scipy's single-vector kernel is ~3x faster than its multi-vector one for a few columns
        out = np.empty((matrix.shape[0], dense.shape[1]))
        for c in range(dense.shape[1]):
            out[:, c] = matrix @ np.ascontiguousarray(dense[:, c])
        return out
    return np.asarray(matrix @ dense, dtype=np.float64)
