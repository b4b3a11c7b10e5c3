"""Moving least squares gradient operators on a uniform background grid.

Interpolation uses tensor-product B-spline windows (quadratic or cubic).
All routines are batched: positions are (n, d) arrays and a stencil table
holds the bound neighborhood of every center at once.  Offsets follow the
convention r = neighbor - center throughout.

The least-squares gradient of a field phi sampled at the stencil nodes is

    grad phi = (sum_j (phi_j - phi_c) (x) r_j W_j) K,   K = (sum_j r_j (x) r_j W_j)^-1

which reproduces affine fields exactly.  On an unclipped uniform stencil K
collapses to (4 / dx^2) I for quadratic windows and (3 / dx^2) I for cubic
ones; `moment_matrix` computes it numerically regardless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateNeighborhoodError, OutOfDomainError

QUADRATIC = "quadratic"
CUBIC = "cubic"

# nodes per axis covered by each window
_SUPPORT = {QUADRATIC: 3, CUBIC: 4}

# condition number above which a neighborhood counts as degenerate
COND_LIMIT = 1.0e8

_offset_cache: dict[tuple[int, int], np.ndarray] = {}


def _offsets(count: int, dim: int) -> np.ndarray:
    """Lexicographic (S, dim) table of node offsets 0..count-1 per axis."""
    key = (count, dim)
    if key not in _offset_cache:
        grids = np.meshgrid(*([np.arange(count)] * dim), indexing="ij")
        _offset_cache[key] = np.stack(grids, axis=-1).reshape(-1, dim)
    return _offset_cache[key]


def _bspline_1d(x: np.ndarray, order: str) -> tuple[np.ndarray, np.ndarray]:
    """Window value and derivative at offset x (in cell units)."""
    ax = np.abs(x)
    sg = np.sign(x)
    if order == QUADRATIC:
        w = np.where(ax < 0.5, 0.75 - ax * ax, np.where(ax < 1.5, 0.5 * (1.5 - ax) ** 2, 0.0))
        dw = np.where(ax < 0.5, -2.0 * x, np.where(ax < 1.5, (ax - 1.5) * sg, 0.0))
    elif order == CUBIC:
        w = np.where(ax < 1.0, 0.5 * ax**3 - ax * ax + 2.0 / 3.0,
                     np.where(ax < 2.0, (2.0 - ax) ** 3 / 6.0, 0.0))
        dw = np.where(ax < 1.0, (1.5 * ax - 2.0) * ax * sg,
                      np.where(ax < 2.0, -0.5 * (2.0 - ax) ** 2 * sg, 0.0))
    else:
        raise ValueError(f"unknown spline order {order!r}")
    return w, dw


def bspline_weight(offset: np.ndarray, order: str = QUADRATIC) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product window weight and gradient for offsets in cell units.

    offset has shape (..., d); returns W with shape (...) and dW with shape
    (..., d), both per cell (divide the gradient by dx for physical units).
    """
    offset = np.asarray(offset, dtype=np.float64)
    w1, dw1 = _bspline_1d(offset, order)
    w = np.prod(w1, axis=-1)
    dim = offset.shape[-1]
    dw = np.empty_like(offset)
    for k in range(dim):
        others = [w1[..., j] for j in range(dim) if j != k]
        prod = np.ones_like(w)
        for o in others:
            prod = prod * o
        dw[..., k] = dw1[..., k] * prod
    return w, dw


@dataclass
class Stencil:
    """Bound neighborhoods of n centers against one uniform grid.

    coords  (n, S, d) integer lattice coordinates of the nodes
    r       (n, S, d) physical offsets node - center
    w       (n, S)    window weights (each row sums to 1)
    dw      (n, S, d) window gradients wrt the center position, per length
    """

    coords: np.ndarray
    r: np.ndarray
    w: np.ndarray
    dw: np.ndarray
    order: str
    dx: float

    @property
    def size(self) -> int:
        return self.w.shape[1]


def build_stencil(centers: np.ndarray, origin: np.ndarray, dx: float,
                  n_nodes: np.ndarray, order: str = QUADRATIC) -> Stencil:
    """Bind each center to the grid nodes inside its window support.

    n_nodes gives the node count per axis; a center whose support sticks out
    of the node box raises OutOfDomainError (no one-sided stencils).
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    origin = np.asarray(origin, dtype=np.float64)
    n_nodes = np.asarray(n_nodes, dtype=np.int64)
    n, dim = centers.shape
    count = _SUPPORT[order]

    u = (centers - origin) / dx
    if order == QUADRATIC:
        base = np.floor(u - 0.5).astype(np.int64)
    else:
        base = np.floor(u).astype(np.int64) - 1

    bad = np.any(base < 0, axis=1) | np.any(base + count > n_nodes[None, :], axis=1)
    if np.any(bad):
        idx = np.flatnonzero(bad)
        raise OutOfDomainError(
            f"{idx.size} stencil center(s) outside the valid domain, "
            f"first indices {idx[:8].tolist()}"
        )

    offs = _offsets(count, dim)                       # (S, dim)
    frac = u[:, None, :] - base[:, None, :]           # offset of center from base, cells
    args = frac - offs[None, :, :]                    # center - node per axis, cells
    w1, dw1 = _bspline_1d(args, order)                # (n, S, dim)

    w = np.prod(w1, axis=-1)
    dw = np.empty((n, offs.shape[0], dim))
    for k in range(dim):
        prod = np.ones_like(w)
        for j in range(dim):
            if j != k:
                prod = prod * w1[..., j]
        dw[..., k] = dw1[..., k] * prod / dx

    coords = base[:, None, :] + offs[None, :, :]
    r = (coords - u[:, None, :]) * dx
    return Stencil(coords=coords, r=r, w=w, dw=dw, order=order, dx=float(dx))


def moment_matrix(stencil: Stencil) -> np.ndarray:
    """Inverse second-moment matrix K_p = (sum_j r_j (x) r_j W_j)^-1, (n, d, d)."""
    m = np.einsum("nsa,nsb,ns->nab", stencil.r, stencil.r, stencil.w)
    eig = np.linalg.eigvalsh(m)
    lo = np.min(np.abs(eig), axis=1)
    hi = np.max(np.abs(eig), axis=1)
    cond = np.where(lo > 0.0, hi / np.maximum(lo, 1e-300), np.inf)
    if np.any(cond > COND_LIMIT):
        worst = int(np.argmax(cond))
        raise DegenerateNeighborhoodError(
            f"moment matrix condition {cond[worst]:.3e} exceeds {COND_LIMIT:.1e} "
            f"at center {worst}"
        )
    return np.linalg.inv(m)


def gradient_weights(stencil: Stencil, K: np.ndarray) -> np.ndarray:
    """Per-node gradient vectors g_j = W_j K r_j, shape (n, S, d).

    The least-squares gradient of any field is then sum_j (phi_j - phi_c) (x) g_j.
    """
    return stencil.w[:, :, None] * np.einsum("nab,nsb->nsa", K, stencil.r)


def mls_gradient(phi_center: np.ndarray, phi_nodes: np.ndarray,
                 stencil: Stencil, K: np.ndarray) -> np.ndarray:
    """Least-squares gradient of a sampled field.

    Scalar fields: phi_center (n,), phi_nodes (n, S) -> (n, d).
    Vector fields: phi_center (n, m), phi_nodes (n, S, m) -> (n, m, d) with
    entry [a, b] = d phi_a / d x_b.
    """
    g = gradient_weights(stencil, K)
    phi_center = np.asarray(phi_center, dtype=np.float64)
    phi_nodes = np.asarray(phi_nodes, dtype=np.float64)
    if phi_center.ndim == 1:
        delta = phi_nodes - phi_center[:, None]
        return np.einsum("ns,nsb->nb", delta, g)
    delta = phi_nodes - phi_center[:, None, :]
    return np.einsum("nsa,nsb->nab", delta, g)


def mls_gradient_derivative(stencil: Stencil, K: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Derivative of the gradient operator wrt its samples.

    Returns (g_nodes, g_center) with g_nodes (n, S, d) and g_center (n, d) =
    -sum_j g_nodes[j].  The full derivative has Kronecker structure:
    d(grad phi)_[a, b] / d(phi_j)_c = delta_ac * g_nodes[n, j, b], and the
    center sample contributes delta_ac * g_center[n, b].
    """
    g = gradient_weights(stencil, K)
    return g, -np.sum(g, axis=1)
