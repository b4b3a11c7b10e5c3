"""Tile-based sparse background grid and static collision geometry.

Nodes live on a uniform lattice; storage is allocated in fixed-size tiles
(tile^d nodes each) the first time any node of a tile is bound.  Activation
is idempotent and lookups of nodes in untouched tiles report zero mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfDomainError


class SparseGrid:
    """Uniform grid over a box, with tiled on-demand node storage."""

    def __init__(self, origin, dx: float, n_cells, tile: int = 4):
        self.origin = np.asarray(origin, dtype=np.float64)
        self.dx = float(dx)
        self.n_cells = np.asarray(n_cells, dtype=np.int64)
        self.n_nodes = self.n_cells + 1
        self.dim = len(self.n_cells)
        self.tile = int(tile)

        n_tiles_axis = -(-self.n_nodes // self.tile)  # ceil division
        self._n_tiles_axis = n_tiles_axis
        strides = np.ones(self.dim, dtype=np.int64)
        for k in range(self.dim - 2, -1, -1):
            strides[k] = strides[k + 1] * n_tiles_axis[k + 1]
        self._tile_strides = strides
        self._tile_lut = np.full(int(np.prod(n_tiles_axis)), -1, dtype=np.int64)
        self._within_strides = self.tile ** np.arange(self.dim - 1, -1, -1)
        self.tile_nodes = self.tile**self.dim

        offs = np.stack(np.meshgrid(*([np.arange(self.tile)] * self.dim),
                                    indexing="ij"), axis=-1).reshape(-1, self.dim)
        self._tile_offsets = offs

        self.n_tiles = 0
        self.coords = np.empty((0, self.dim), dtype=np.int64)
        self._alloc(0)

    @property
    def n_slots(self) -> int:
        return self.n_tiles * self.tile_nodes

    def _alloc(self, n_slots: int) -> None:
        d = self.dim
        self.mass = np.zeros(n_slots)
        self.momentum = np.zeros((n_slots, d))
        self.velocity = np.zeros((n_slots, d))
        self.velocity0 = np.zeros((n_slots, d))
        self.force = np.zeros((n_slots, d))
        self.pos_accum = np.zeros((n_slots, d))
        self.w_accum = np.zeros(n_slots)
        self.position = np.zeros((n_slots, d))

    def _grow(self, new_tiles: np.ndarray) -> None:
        """Append storage for tiles given by their lattice-tile coordinates."""
        add = new_tiles.shape[0]
        if add == 0:
            return
        node_coords = (new_tiles[:, None, :] * self.tile
                       + self._tile_offsets[None, :, :]).reshape(-1, self.dim)
        self.coords = np.concatenate([self.coords, node_coords], axis=0)
        self.n_tiles += add
        old = self.mass.shape[0]
        pad = add * self.tile_nodes
        d = self.dim
        self.mass = np.concatenate([self.mass, np.zeros(pad)])
        for name in ("momentum", "velocity", "velocity0", "force", "pos_accum", "position"):
            setattr(self, name, np.concatenate([getattr(self, name), np.zeros((pad, d))]))
        self.w_accum = np.concatenate([self.w_accum, np.zeros(pad)])
        del old

    def activate(self, coords: np.ndarray) -> np.ndarray:
        """Bind lattice coordinates (m, d) and return their storage slots."""
        coords = np.asarray(coords, dtype=np.int64)
        if coords.size and (np.any(coords < 0) or np.any(coords >= self.n_nodes[None, :])):
            bad = np.flatnonzero(np.any((coords < 0) | (coords >= self.n_nodes[None, :]), axis=1))
            raise OutOfDomainError(
                f"{bad.size} node coordinate(s) outside the grid, first {coords[bad[0]].tolist()}"
            )
        tc = coords // self.tile
        enc = tc @ self._tile_strides
        tslot = self._tile_lut[enc]
        missing = tslot < 0
        if np.any(missing):
            new_enc = np.unique(enc[missing])
            self._tile_lut[new_enc] = self.n_tiles + np.arange(new_enc.size)
            new_tiles = np.stack(np.unravel_index(
                new_enc, tuple(self._n_tiles_axis.tolist())), axis=-1)
            self._grow(new_tiles)
            self.position[-new_enc.size * self.tile_nodes:] = (
                self.origin + self.coords[-new_enc.size * self.tile_nodes:] * self.dx)
            tslot = self._tile_lut[enc]
        within = coords - tc * self.tile
        return tslot * self.tile_nodes + within @ self._within_strides

    def slot_of(self, coords) -> np.ndarray:
        """Slots for lattice coordinates, -1 where the tile was never bound."""
        coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        tc = coords // self.tile
        tslot = self._tile_lut[tc @ self._tile_strides]
        within = (coords - tc * self.tile) @ self._within_strides
        return np.where(tslot >= 0, tslot * self.tile_nodes + within, -1)

    def mass_at(self, coords) -> np.ndarray:
        slots = self.slot_of(coords)
        out = np.zeros(slots.shape)
        hit = slots >= 0
        out[hit] = self.mass[slots[hit]]
        return out

    def zero_fields(self) -> None:
        self.mass[:] = 0.0
        self.momentum[:] = 0.0
        self.velocity[:] = 0.0
        self.velocity0[:] = 0.0
        self.force[:] = 0.0
        self.pos_accum[:] = 0.0
        self.w_accum[:] = 0.0


@dataclass
class HalfSpace:
    """Static wall: material is kept on the side the normal points into."""

    point: np.ndarray
    normal: np.ndarray
    mode: str = "slip"  # 'sticky' | 'slip'
    velocity: np.ndarray | None = None

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=np.float64)
        n = np.asarray(self.normal, dtype=np.float64)
        self.normal = n / np.linalg.norm(n)
        if self.velocity is None:
            self.velocity = np.zeros_like(self.point)
        else:
            self.velocity = np.asarray(self.velocity, dtype=np.float64)

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        return (x - self.point) @ self.normal

    def normal_at(self, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.normal, x.shape)


@dataclass
class SphereObstacle:
    """Static spherical (circular in 2d) obstacle; material stays outside."""

    center: np.ndarray
    radius: float
    mode: str = "slip"
    velocity: np.ndarray | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.radius = float(self.radius)
        if self.velocity is None:
            self.velocity = np.zeros_like(self.center)
        else:
            self.velocity = np.asarray(self.velocity, dtype=np.float64)

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.norm(x - self.center, axis=-1) - self.radius

    def normal_at(self, x: np.ndarray) -> np.ndarray:
        d = x - self.center
        norm = np.linalg.norm(d, axis=-1, keepdims=True)
        return d / np.maximum(norm, 1e-300)
