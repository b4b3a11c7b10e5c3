"""Deformation bookkeeping around an updatable intermediate configuration.

Each particle factors its total deformation gradient as F_total = F_sn F_0s:
F_0s maps the initial configuration to the reference configuration the grid
is currently bound against, and F_sn accumulates motion measured since that
binding.  Keeping the binding fixed gives a total-Lagrangian scheme;
rebinding every step gives the usual Eulerian scheme; rebinding when enough
particles exceed a volume-change threshold interpolates between the two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OrphanParticleError
from .mls import QUADRATIC, Stencil, build_stencil, gradient_weights, moment_matrix


@dataclass
class UpdatePolicy:
    """Rebinding criterion: mark particles with |det F_sn - 1| >= epsilon,
    rebind when the marked fraction reaches eta."""

    epsilon: float
    eta: float

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be non-negative")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")

    @classmethod
    def solid(cls) -> "UpdatePolicy":
        return cls(epsilon=0.5, eta=0.1)

    @classmethod
    def fluid(cls) -> "UpdatePolicy":
        return cls(epsilon=0.01, eta=0.01)


@dataclass
class DeformationState:
    """Per-particle deformation factors, both (n, d, d)."""

    F_0s: np.ndarray
    F_sn: np.ndarray

    @classmethod
    def identity(cls, n: int, dim: int) -> "DeformationState":
        eye = np.broadcast_to(np.eye(dim), (n, dim, dim)).copy()
        return cls(F_0s=eye, F_sn=eye.copy())


@dataclass
class ConfigurationMap:
    """Grid binding of one object at its reference configuration.

    Holds the reference particle positions, the interpolation stencils built
    there, their moment matrices K, the cached gradient weights
    G_j = W_j K r_j and the storage slots of the bound grid nodes.
    """

    epoch: int
    ref_positions: np.ndarray
    stencil: Stencil
    K: np.ndarray
    G: np.ndarray
    slots: np.ndarray

    @classmethod
    def build(cls, positions: np.ndarray, grid, order: str = QUADRATIC,
              epoch: int = 0) -> "ConfigurationMap":
        positions = np.asarray(positions, dtype=np.float64)
        st = build_stencil(positions, grid.origin, grid.dx, grid.n_nodes, order)
        coverage = st.w.sum(axis=1)
        if np.any(coverage <= 0.0):
            idx = np.flatnonzero(coverage <= 0.0)
            raise OrphanParticleError(
                f"{idx.size} particle(s) with zero grid coverage, first {idx[:8].tolist()}"
            )
        K = moment_matrix(st)
        G = gradient_weights(st, K)
        n, S = st.w.shape
        slots = grid.activate(st.coords.reshape(-1, st.coords.shape[-1])).reshape(n, S)
        return cls(epoch=epoch, ref_positions=positions.copy(), stencil=st,
                   K=K, G=G, slots=slots)

    @property
    def node_ref_positions(self) -> np.ndarray:
        """Reference positions of the bound nodes, (n, S, d)."""
        return self.ref_positions[:, None, :] + self.stencil.r


def velocity_gradient_s(v_center: np.ndarray, v_nodes: np.ndarray,
                        cmap: ConfigurationMap) -> np.ndarray:
    """Velocity gradient wrt the reference configuration, (n, d, d).

    v_center is the particle velocity (n, d), v_nodes the grid velocities
    gathered at the stencil nodes (n, S, d).
    """
    delta = v_nodes - v_center[:, None, :]
    return np.einsum("nsa,nsb->nab", delta, cmap.G)


def advance_F_sn(state: DeformationState, grad_v: np.ndarray, dt: float) -> int:
    """F_sn <- F_sn + dt grad_v in place; returns the count of non-positive
    determinants afterwards (inverted elements, reported as a diagnostic)."""
    state.F_sn += dt * grad_v
    return int(np.count_nonzero(np.linalg.det(state.F_sn) <= 0.0))


def compose_total(state: DeformationState) -> np.ndarray:
    """Total deformation gradient F_sn F_0s, (n, d, d)."""
    return np.einsum("nab,nbc->nac", state.F_sn, state.F_0s)


def deformation_delta(state: DeformationState) -> np.ndarray:
    """Volume-change measure |det F_sn - 1| per particle."""
    return np.abs(np.linalg.det(state.F_sn) - 1.0)


def should_update(delta: np.ndarray, policy: UpdatePolicy) -> tuple[int, bool]:
    """Marked-particle count and whether the rebinding criterion fires."""
    n = delta.shape[0]
    marked = int(np.count_nonzero(delta >= policy.epsilon))
    if n == 0:
        return 0, False
    return marked, (marked / n) >= policy.eta


def apply_update(state: DeformationState, positions: np.ndarray, grid,
                 cmap: ConfigurationMap) -> ConfigurationMap:
    """Rebind at the current positions and fold F_sn into F_0s.

    Afterwards F_0s holds the old product F_sn F_0s, F_sn is the identity,
    and the returned map carries fresh stencils, moment matrices and slots
    with the epoch counter advanced by one.
    """
    state.F_0s = compose_total(state)
    dim = state.F_sn.shape[-1]
    state.F_sn = np.broadcast_to(np.eye(dim), state.F_sn.shape).copy()
    return ConfigurationMap.build(positions, grid, cmap.stencil.order, cmap.epoch + 1)
