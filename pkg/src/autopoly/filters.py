"""Polynomial spectral filters in three bases.

A filter is ``sum_k theta_k P_k(M) X`` where the basis matrix ``M`` and
the polynomials ``P_k`` depend on the basis:

==========  ===========================  ==========================================
basis       M                            P_k(x)
==========  ===========================  ==========================================
monomial    normalized adjacency         x^k
chebyshev   2 L / lambda_max - I         T_k(x), T_k = 2x T_{k-1} - T_{k-2}
bernstein   normalized Laplacian         2^-K C(K,k) (2 - x)^(K-k) x^k
==========  ===========================  ==========================================

:func:`apply_filter` only ever multiplies ``X`` by sparse matrices.
:func:`dense_spectral_filter` eigendecomposes ``M`` and is kept as an
independent oracle for small graphs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from autopoly import rng as _rng
from autopoly.errors import GuardError, InputError, ShapeError
from autopoly.graph import Graph, spmv

BASES = ("monomial", "chebyshev", "bernstein")
DENSE_LIMIT = 500
GRID_POINTS = 201


@dataclass(frozen=True)
class FilterSpec:
    basis: str
    theta: np.ndarray
    lambda_max: float = 2.0
    order: int = field(init=False)

    def __post_init__(self):
        if self.basis not in BASES:
            raise InputError(f"unknown basis {self.basis!r}; expected one of {BASES}")
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if theta.size < 1:
            raise InputError("theta needs at least one coefficient")
        if self.basis == "chebyshev" and not 0.0 < self.lambda_max <= 2.0:
            raise InputError(f"lambda_max must lie in (0, 2], got {self.lambda_max}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "order", theta.size - 1)

    def with_theta(self, theta) -> "FilterSpec":
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.size != self.order + 1:
            raise ShapeError(f"theta length {theta.size} != K+1 = {self.order + 1}")
        return FilterSpec(self.basis, theta, self.lambda_max)


def bernstein_weights(order: int) -> np.ndarray:
    """``2^-K C(K, k)`` for k = 0..K, from exact integer binomials."""
    # Division by a power of two is exact in floating point.
    return np.array([math.comb(order, k) / 2.0**order for k in range(order + 1)])


def basis_blocks(basis: str, order: int, graph: Graph, X: np.ndarray, lambda_max: float = 2.0):
    """Return the list ``[P_0(M) X, ..., P_K(M) X]``.

    Monomial and Chebyshev need K sparse products. Bernstein computes
    ``L^j X`` for every j and then applies ``(2I - L)`` to each block the
    remaining ``K - j`` times, K(K+3)/2 products in total.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != graph.n:
        raise ShapeError(f"signal must have {graph.n} rows, got shape {X.shape}")

    if basis == "monomial":
        blocks = [X]
        for _ in range(order):
            blocks.append(spmv(graph.norm_adjacency, blocks[-1]))
        return blocks

    if basis == "chebyshev":
        M = graph.rescaled_laplacian(lambda_max)
        blocks = [X]
        if order >= 1:
            blocks.append(spmv(M, X))
        for _ in range(2, order + 1):
            blocks.append(2.0 * spmv(M, blocks[-1]) - blocks[-2])
        return blocks

    if basis == "bernstein":
        L = graph.norm_laplacian
        powers = [X]
        for _ in range(order):
            powers.append(spmv(L, powers[-1]))
        weights = bernstein_weights(order)
        blocks = []
        for k, Z in enumerate(powers):
            for _ in range(order - k):
                Z = 2.0 * Z - spmv(L, Z)
            blocks.append(weights[k] * Z)
        return blocks

    raise InputError(f"unknown basis {basis!r}")


def combine(theta: np.ndarray, blocks) -> np.ndarray:
    out = theta[0] * blocks[0]
    for t, b in zip(theta[1:], blocks[1:]):
        out = out + t * b
    return out


def apply_filter(spec: FilterSpec, graph: Graph, X: np.ndarray) -> np.ndarray:
    """Filter the graph signal ``X`` (n x d) by ``spec`` using sparse products only."""
    X = np.asarray(X, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != graph.n:
        raise ShapeError(f"signal must have {graph.n} rows, got shape {X.shape}")
    if spec.basis == "bernstein":
        blocks = basis_blocks(spec.basis, spec.order, graph, X, spec.lambda_max)
        out = combine(spec.theta, blocks)
    else:
        out = _running_sum(spec, graph, X)
    return out[:, 0] if squeeze else out


def _running_sum(spec, graph, X):
    # Running accumulation keeps at most three blocks alive.
    theta = spec.theta
    if spec.basis == "monomial":
        Z = X
        out = theta[0] * Z
        for k in range(1, spec.order + 1):
            Z = spmv(graph.norm_adjacency, Z)
            out = out + theta[k] * Z
        return out
    M = graph.rescaled_laplacian(spec.lambda_max)
    prev, cur = X, None
    out = theta[0] * X
    if spec.order >= 1:
        cur = spmv(M, X)
        out = out + theta[1] * cur
    for k in range(2, spec.order + 1):
        prev, cur = cur, 2.0 * spmv(M, cur) - prev
        out = out + theta[k] * cur
    return out


def basis_matrix_dense(spec: FilterSpec, graph: Graph) -> np.ndarray:
    if spec.basis == "monomial":
        return graph.norm_adjacency.toarray()
    if spec.basis == "chebyshev":
        return graph.rescaled_laplacian(spec.lambda_max).toarray()
    return graph.norm_laplacian.toarray()


def scalar_basis(basis: str, order: int, x: np.ndarray) -> np.ndarray:
    """Evaluate ``P_k(x)`` at points ``x`` of the basis variable; shape (K+1, len(x))."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((order + 1,) + x.shape)
    if basis == "monomial":
        out[0] = 1.0
        for k in range(1, order + 1):
            out[k] = out[k - 1] * x
    elif basis == "chebyshev":
        out[0] = 1.0
        if order >= 1:
            out[1] = x
        for k in range(2, order + 1):
            out[k] = 2.0 * x * out[k - 1] - out[k - 2]
    elif basis == "bernstein":
        w = bernstein_weights(order)
        for k in range(order + 1):
            out[k] = w[k] * (2.0 - x) ** (order - k) * x**k
    else:
        raise InputError(f"unknown basis {basis!r}")
    return out


def dense_spectral_filter(spec: FilterSpec, graph: Graph, X: np.ndarray) -> np.ndarray:
    """Reference filter via a dense eigendecomposition of the basis matrix.

    Only meant for checking :func:`apply_filter` on small graphs.
    """
    if graph.n > DENSE_LIMIT:
        raise GuardError(f"dense eigendecomposition refused for n={graph.n} > {DENSE_LIMIT}")
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != graph.n:
        raise ShapeError(f"signal must have {graph.n} rows, got shape {X.shape}")
    evals, U = np.linalg.eigh(basis_matrix_dense(spec, graph))
    h = spec.theta @ scalar_basis(spec.basis, spec.order, evals)
    return U @ (h[:, None] * (U.T @ X)) if X.ndim == 2 else U @ (h * (U.T @ X))


@dataclass(frozen=True)
class SpectralResponse:
    lambdas: np.ndarray
    values: np.ndarray

    def to_csv(self) -> str:
        lines = ["lambda,response"]
        lines += [f"{lam!r},{val!r}" for lam, val in zip(self.lambdas.tolist(), self.values.tolist())]
        return "\n".join(lines) + "\n"


def response_grid(points: int = GRID_POINTS) -> np.ndarray:
    if points < 2:
        raise InputError(f"grid needs at least 2 points, got {points}")
    return np.linspace(0.0, 2.0, points)


def spectral_response(spec: FilterSpec, grid=None) -> SpectralResponse:
    """Evaluate ``h(lambda)`` over Laplacian eigenvalues ``lambda`` in [0, 2].

    The Laplacian eigenvalue is mapped onto each basis variable first:
    ``1 - lambda`` for monomial (powers of the adjacency) and
    ``2 lambda / lambda_max - 1`` for Chebyshev.
    """
    lam = response_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if lam.ndim != 1 or lam.size == 0:
        raise InputError("grid must be a non-empty 1-d sequence")
    if lam.min() < 0.0 or lam.max() > 2.0:
        raise InputError("grid points must lie in [0, 2]")
    if lam.size > 1 and np.any(np.diff(lam) <= 0):
        raise InputError("grid points must be strictly increasing")
    if spec.basis == "monomial":
        x = 1.0 - lam
    elif spec.basis == "chebyshev":
        x = 2.0 * lam / spec.lambda_max - 1.0
    else:
        x = lam
    values = spec.theta @ scalar_basis(spec.basis, spec.order, x)
    return SpectralResponse(lam.copy(), values)


def ppr_coefficients(alpha: float, order: int) -> np.ndarray:
    """Personalized-PageRank weights ``alpha (1 - alpha)^k``; the last one takes the tail.

    >>> ppr_coefficients(0.5, 2).tolist()
    [0.5, 0.25, 0.25]
    """
    if not 0.0 < alpha <= 1.0:
        raise InputError(f"teleport probability must lie in (0, 1], got {alpha}")
    if order < 0:
        raise InputError(f"order must be non-negative, got {order}")
    theta = alpha * (1.0 - alpha) ** np.arange(order + 1, dtype=np.float64)
    theta[order] = (1.0 - alpha) ** order
    return theta


def init_coefficients(strategy: str, order: int, seed: int = 0, alpha: float = 0.1) -> np.ndarray:
    """Initial filter coefficients.

    ``strategy`` is ``"random_uniform"`` (U(-0.5, 0.5) per coefficient),
    ``"delta0"`` (identity filter), or ``"ppr"`` / ``"ppr(<alpha>)"``.
    """
    if order < 0:
        raise InputError(f"order must be non-negative, got {order}")
    if strategy == "random_uniform":
        return _rng.make_rng(seed, _rng.THETA).uniform(-0.5, 0.5, size=order + 1)
    if strategy == "delta0":
        theta = np.zeros(order + 1)
        theta[0] = 1.0
        return theta
    if strategy == "ppr":
        return ppr_coefficients(alpha, order)
    if strategy.startswith("ppr(") and strategy.endswith(")"):
        try:
            a = float(strategy[4:-1])
        except ValueError:
            raise InputError(f"cannot parse teleport probability in {strategy!r}") from None
        return ppr_coefficients(a, order)
    raise InputError(f"unknown init strategy {strategy!r}")


def estimate_lambda_max(graph: Graph, tol: float = 1e-6, max_iter: int = 1000, seed: int = 0) -> float:
    """Largest eigenvalue of the normalized Laplacian by power iteration.

    The returned value is clipped into (0, 2]; a graph with no edges has
    spectrum {0}, for which 2.0 is returned as the conventional bound.
    """
    L = graph.norm_laplacian
    if graph.num_edges == 0:
        return 2.0
    v = _rng.make_rng(seed, 99).standard_normal(graph.n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = L @ v
        new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        v = w / norm
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            lam = new
            break
        lam = new
    return float(min(max(lam, 1e-12), 2.0))
