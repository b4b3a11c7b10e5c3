"""Scene description: loading, validation and particle sampling.

Scenes are JSON documents with a grid box, a solver block, a list of
objects (shape + material + initial motion) and optional collision
geometry.  `load_scene` accepts a path or an already-parsed dict,
validates it against the bundled schema plus a handful of semantic
checks, and returns a `Scene`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .constitutive import FLUID, SNOW, MaterialModel
from .errors import SceneError
from .grid import HalfSpace, SphereObstacle
from .kinematics import UpdatePolicy
from .mls import QUADRATIC

_SCHEMA = json.loads(
    resources.files("aulmpm").joinpath("data/scene.schema.json").read_text())


@dataclass
class SolverConfig:
    dt: float
    steps: int
    frame_dt: float | None = None
    integrator: str = "explicit"
    transfer: str = "least_squares"
    mode: str = "adaptive"
    flip_blend: float = 0.95
    cfl: float | None = None
    order: str = QUADRATIC
    seed: int = 0


@dataclass
class ObjectSpec:
    name: str
    shape: dict
    spacing: float
    material: MaterialModel
    jitter: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    angular_velocity: float = 0.0
    update: UpdatePolicy | None = None


@dataclass
class Scene:
    name: str
    origin: np.ndarray
    size: np.ndarray
    cells: np.ndarray
    gravity: np.ndarray
    solver: SolverConfig
    objects: list[ObjectSpec]
    colliders: list

    @property
    def dim(self) -> int:
        return self.origin.shape[0]

    @property
    def dx(self) -> float:
        return float(self.size[0] / self.cells[0])

    def with_cells(self, cells) -> "Scene":
        """Same scene on a different grid resolution (same aspect ratio)."""
        return replace(self, cells=np.asarray(cells, dtype=np.int64))


def _vec(raw, dim: int, what: str) -> np.ndarray:
    v = np.asarray(raw, dtype=np.float64)
    if v.shape != (dim,):
        raise SceneError(f"{what} must have {dim} components, got {list(raw)}")
    return v


def _material_from(raw: dict) -> MaterialModel:
    kind = raw["type"]
    if kind == FLUID:
        if "bulk" not in raw:
            raise SceneError("fluid material needs a bulk modulus")
        return MaterialModel.fluid(density=raw["density"], bulk=raw["bulk"],
                                   gamma=raw.get("gamma", 7.0))
    if "youngs" not in raw or "poisson" not in raw:
        raise SceneError(f"{kind} material needs youngs and poisson")
    extra = {}
    if kind == SNOW:
        for key in ("theta_c", "theta_s", "hardening"):
            if key in raw:
                extra[key] = raw[key]
    return MaterialModel.from_youngs(kind, density=raw["density"],
                                     youngs=raw["youngs"],
                                     poisson=raw["poisson"], **extra)


def _collider_from(raw: dict, dim: int):
    mode = raw.get("mode", "slip")
    vel = raw.get("velocity")
    if vel is not None:
        vel = _vec(vel, dim, "collider velocity")
    if raw["type"] == "half_space":
        if "point" not in raw or "normal" not in raw:
            raise SceneError("half_space collider needs point and normal")
        normal = _vec(raw["normal"], dim, "collider normal")
        if np.linalg.norm(normal) == 0.0:
            raise SceneError("collider normal must be nonzero")
        return HalfSpace(point=_vec(raw["point"], dim, "collider point"),
                         normal=normal, mode=mode, velocity=vel)
    if "center" not in raw or "radius" not in raw:
        raise SceneError("sphere collider needs center and radius")
    return SphereObstacle(center=_vec(raw["center"], dim, "collider center"),
                          radius=float(raw["radius"]), mode=mode, velocity=vel)


def _shape_bounds(shape: dict, dim: int) -> tuple[np.ndarray, np.ndarray]:
    if shape["type"] == "disk":
        c = _vec(shape["center"], dim, "disk center")
        r = float(shape["radius"])
        return c - r, c + r
    lo = _vec(shape["min"], dim, "box min")
    hi = _vec(shape["max"], dim, "box max")
    if np.any(hi <= lo):
        raise SceneError("box max must exceed box min on every axis")
    return lo, hi


def sample_shape(shape: dict, spacing: float, dim: int,
                 jitter: float = 0.0, rng=None) -> np.ndarray:
    """Cell-centered lattice of pitch `spacing` clipped to the shape.

    The lattice is anchored at the shape's lower bound, so the point count
    depends only on the shape and the spacing, never on the grid.
    """
    lo, hi = _shape_bounds(shape, dim)
    axes = []
    for k in range(dim):
        # relative nudge so exact multiples are not lost to rounding
        count = int(math.floor((hi[k] - lo[k]) / spacing * (1.0 + 1e-12)))
        axes.append(lo[k] + (np.arange(count) + 0.5) * spacing)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    if shape["type"] == "disk":
        c = _vec(shape["center"], dim, "disk center")
        keep = np.einsum("nd,nd->n", pts - c, pts - c) <= float(shape["radius"]) ** 2
        pts = pts[keep]
    if pts.shape[0] == 0:
        raise SceneError("shape produced no particles; spacing too coarse")
    if jitter > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        pts = pts + jitter * spacing * rng.uniform(-0.5, 0.5, size=pts.shape)
    return pts


def particle_count(shape: dict, spacing: float, dim: int) -> int:
    """Lattice point count for a shape without building jittered samples."""
    return sample_shape(shape, spacing, dim).shape[0]


def _object_from(raw: dict, index: int, dim: int) -> ObjectSpec:
    mat = _material_from(raw["material"])
    vel = raw.get("velocity")
    vel = np.zeros(dim) if vel is None else _vec(vel, dim, "object velocity")
    upd = raw.get("update")
    if upd is not None:
        upd = UpdatePolicy(epsilon=upd["epsilon"], eta=upd["eta"])
    ang = float(raw.get("angular_velocity", 0.0))
    if ang != 0.0 and dim != 2:
        raise SceneError("scalar angular_velocity is a 2d feature")
    return ObjectSpec(name=raw.get("name", f"object{index}"),
                      shape=raw["shape"], spacing=float(raw["spacing"]),
                      material=mat, jitter=float(raw.get("jitter", 0.0)),
                      velocity=vel, angular_velocity=ang, update=upd)


def bundled_scene(name: str) -> Scene:
    """Load one of the scenes shipped with the package by bare name."""
    ref = resources.files("aulmpm").joinpath(f"data/scenes/{name}.json")
    try:
        text = ref.read_text()
    except FileNotFoundError:
        have = sorted(p.name[:-5] for p in
                      resources.files("aulmpm").joinpath("data/scenes").iterdir())
        raise SceneError(f"no bundled scene {name!r}; have {have}") from None
    return load_scene(json.loads(text))


def load_scene(source) -> Scene:
    """Parse and validate a scene from a path, JSON string, or dict."""
    if isinstance(source, dict):
        raw = source
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise SceneError(f"cannot read scene {source}: {exc}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SceneError(f"scene {source} is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(raw, _SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "(top level)"
        raise SceneError(f"invalid scene at {where}: {exc.message}") from None

    grid = raw["grid"]
    origin = np.asarray(grid["origin"], dtype=np.float64)
    size = np.asarray(grid["size"], dtype=np.float64)
    cells = np.asarray(grid["cells"], dtype=np.int64)
    dim = origin.shape[0]
    if size.shape != (dim,) or cells.shape != (dim,):
        raise SceneError("grid origin, size and cells must share one dimension")
    if np.any(size <= 0):
        raise SceneError("grid size must be positive")
    dx = size / cells
    if not np.allclose(dx, dx[0], rtol=1e-12, atol=0.0):
        raise SceneError("grid cells must be square; size/cells must match per axis")

    sol = raw["solver"]
    if ("steps" in sol) == ("duration" in sol):
        raise SceneError("solver needs exactly one of steps or duration")
    dt = float(sol["dt"])
    steps = sol["steps"] if "steps" in sol else max(1, round(sol["duration"] / dt))
    solver = SolverConfig(
        dt=dt, steps=int(steps), frame_dt=sol.get("frame_dt"),
        integrator=sol.get("integrator", "explicit"),
        transfer=sol.get("transfer", "least_squares"),
        mode=sol.get("mode", "adaptive"),
        flip_blend=float(sol.get("flip_blend", 0.95)),
        cfl=sol.get("cfl"), order=sol.get("order", QUADRATIC),
        seed=int(sol.get("seed", 0)))

    gravity = raw.get("gravity")
    gravity = np.zeros(dim) if gravity is None else _vec(gravity, dim, "gravity")

    objects = [_object_from(o, i, dim) for i, o in enumerate(raw["objects"])]
    margin = 2.0 * float(dx[0])
    for obj in objects:
        lo, hi = _shape_bounds(obj.shape, dim)
        if np.any(lo < origin + margin) or np.any(hi > origin + size - margin):
            raise SceneError(
                f"object {obj.name!r} must stay {margin:g} away from the domain edge")

    colliders = [_collider_from(c, dim) for c in raw.get("colliders", [])]
    return Scene(name=raw.get("name", "scene"), origin=origin, size=size,
                 cells=cells, gravity=gravity, solver=solver,
                 objects=objects, colliders=colliders)
