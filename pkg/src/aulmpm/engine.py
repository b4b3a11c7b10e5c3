"""Time stepping, output, and per-step bookkeeping.

`Simulation` owns one background grid plus one `Body` per scene object.
Every step runs the same phase order regardless of transfer flavor or
integrator:

    scatter -> grid velocities -> stress and forces -> momentum update
    -> collision projection -> gather -> deformation update -> plastic
    projection -> rebind check

Rebinding (when an object's update policy fires) folds the accumulated
deformation into the stored reference map and rebuilds stencils at the
current particle positions; total deformation gradients are unchanged
by it.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constitutive import FLUID, SNOW, wave_speed
from .errors import NumericalError
from .kinematics import (
    ConfigurationMap,
    DeformationState,
    UpdatePolicy,
    advance_F_sn,
    apply_update,
    compose_total,
    deformation_delta,
    should_update,
)
from .constitutive import plastic_project
from .grid import SparseGrid
from .scene import Scene, sample_shape
from .transfers import (
    Body,
    explicit_update,
    finalize_grid,
    g2p,
    g2p_kernel,
    grid_collisions,
    grid_internal_forces,
    grid_internal_forces_kernel,
    implicit_update,
    mass_epsilon,
    p2g,
    p2g_kernel,
    stress_pass,
)


@dataclass
class StepRecord:
    step: int
    time: float
    mass: float
    momentum: np.ndarray
    angular_momentum: float
    kinetic_energy: float
    updates: int
    marked_fraction: float
    wall_ms: float
    rebound: bool


def _policy_for(obj, mode: str) -> UpdatePolicy | None:
    """Rebinding policy by solver mode, with per-object overrides."""
    if mode == "total_lagrangian":
        return None
    if obj.update is not None:
        base = obj.update
    elif obj.material.kind == FLUID:
        base = UpdatePolicy.fluid()
    else:
        base = UpdatePolicy.solid()
    if mode == "eulerian":
        return UpdatePolicy(epsilon=base.epsilon, eta=0.0)
    return base


def _spin_matrix(omega: float) -> np.ndarray:
    return np.array([[0.0, -omega], [omega, 0.0]])


class Simulation:
    def __init__(self, scene: Scene):
        self.scene = scene
        self.grid = SparseGrid(scene.origin, scene.dx, scene.cells)
        self.colliders = list(scene.colliders)
        self.gravity = scene.gravity
        self.bodies: list[Body] = []
        rng = np.random.default_rng(scene.solver.seed)
        d = scene.dim
        for obj in scene.objects:
            pts = sample_shape(obj.shape, obj.spacing, d, obj.jitter, rng)
            n = pts.shape[0]
            vol = obj.spacing ** d
            vel = np.tile(obj.velocity, (n, 1))
            C = np.zeros((n, d, d))
            if obj.angular_velocity != 0.0:
                c = np.asarray(obj.shape["center"], dtype=np.float64)
                spin = _spin_matrix(obj.angular_velocity)
                vel = vel + (pts - c) @ spin.T
                C[:] = spin
            body = Body(
                material=obj.material,
                x=pts, v=vel,
                m=np.full(n, obj.material.density * vol),
                V0=np.full(n, vol),
                C=C,
                state=DeformationState.identity(n, d),
                cmap=ConfigurationMap.build(pts, self.grid, scene.solver.order),
                policy=_policy_for(obj, scene.solver.mode),
                F_plastic=(np.tile(np.eye(d), (n, 1, 1))
                           if obj.material.kind == SNOW else None),
            )
            self.bodies.append(body)
        self.mass_eps = mass_epsilon(self.bodies)
        self.time = 0.0
        self.steps_done = 0
        self.records: list[StepRecord] = []
        self.cg_info: dict | None = None

    @property
    def n_particles(self) -> int:
        return sum(b.n for b in self.bodies)

    def stable_dt(self) -> float:
        """CFL-limited step, capped by the frame interval.

        dt = cfl dx / (max particle speed + stiffness wave speed); with no
        cfl factor configured the fixed dt is returned unchanged.
        """
        sol = self.scene.solver
        if sol.cfl is None:
            return sol.dt
        cap = sol.frame_dt if sol.frame_dt is not None else sol.dt
        top = 0.0
        for b in self.bodies:
            vmax = float(np.sqrt((b.v * b.v).sum(axis=1).max()))
            if b.material.kind == FLUID:
                jmin = float(np.linalg.det(compose_total(b.state)).min())
                c = wave_speed(b.material, max(jmin, 1e-3))
            else:
                c = wave_speed(b.material)
            top = max(top, vmax + c)
        if top == 0.0:
            return cap
        return min(cap, sol.cfl * self.grid.dx / top)

    def step(self, dt: float | None = None) -> bool:
        """Advance one step; returns whether any object rebound."""
        if dt is None:
            dt = self.stable_dt()
        sol = self.scene.solver
        kernel = sol.transfer == "kernel"
        grid = self.grid
        t0 = time.perf_counter()

        grid.zero_fields()
        for b in self.bodies:
            (p2g_kernel if kernel else p2g)(b, grid)
        finalize_grid(grid, self.mass_eps)
        for b in self.bodies:
            stress_pass(b)
            (grid_internal_forces_kernel if kernel else grid_internal_forces)(b, grid)
        if sol.integrator == "implicit":
            self.cg_info = implicit_update(self.bodies, grid, dt, self.gravity,
                                           self.mass_eps)
        else:
            explicit_update(grid, dt, self.gravity, self.mass_eps)
        grid_collisions(grid, self.colliders, dt, self.mass_eps)

        rebound = False
        total_marked = 0
        for b in self.bodies:
            if kernel:
                g2p_kernel(b, grid, dt, sol.flip_blend)
            else:
                g2p(b, grid, dt)
            if not (np.isfinite(b.x).all() and np.isfinite(b.v).all()):
                raise NumericalError(
                    f"non-finite particle state at step {self.steps_done}")
            b.inverted += advance_F_sn(b.state, b.C, dt)
            if b.material.kind == SNOW:
                F_total = compose_total(b.state)
                Fe = np.einsum("nab,nbc->nac", F_total, np.linalg.inv(b.F_plastic))
                _, b.F_plastic = plastic_project(Fe, b.F_plastic, b.material)
            if b.policy is not None:
                marked, fire = should_update(deformation_delta(b.state), b.policy)
                b.marked = marked
                total_marked += marked
                if fire:
                    b.cmap = apply_update(b.state, b.x, grid, b.cmap)
                    b.updates += 1
                    rebound = True
            else:
                b.marked = 0

        self.time += dt
        self.steps_done += 1
        self._record(total_marked, rebound, (time.perf_counter() - t0) * 1e3)
        return rebound

    def _record(self, total_marked: int, rebound: bool, wall_ms: float) -> None:
        mass = 0.0
        mom = np.zeros(self.scene.dim)
        ang = 0.0
        kin = 0.0
        center = self.scene.origin + 0.5 * self.scene.size
        for b in self.bodies:
            mass += float(b.m.sum())
            mv = b.m[:, None] * b.v
            mom += mv.sum(axis=0)
            r = b.x - center
            if self.scene.dim == 2:
                ang += float((r[:, 0] * mv[:, 1] - r[:, 1] * mv[:, 0]).sum())
            else:
                ang += float(np.linalg.norm(np.cross(r, mv).sum(axis=0)))
            kin += 0.5 * float((b.m * (b.v * b.v).sum(axis=1)).sum())
        self.records.append(StepRecord(
            step=self.steps_done, time=self.time, mass=mass, momentum=mom,
            angular_momentum=ang, kinetic_energy=kin,
            updates=sum(b.updates for b in self.bodies),
            marked_fraction=total_marked / self.n_particles,
            wall_ms=wall_ms, rebound=rebound))

    # ------------------------------------------------------------- output

    def particle_table(self) -> np.ndarray:
        """Structured snapshot: id, position, velocity, total J, epoch."""
        d = self.scene.dim
        names = ["id"] + list("xyz"[:d]) + ["v" + a for a in "xyz"[:d]]
        names += ["J", "epoch"]
        rows = []
        offset = 0
        for b in self.bodies:
            J = np.linalg.det(compose_total(b.state))
            tab = np.zeros(b.n, dtype=[(nm, np.float64) for nm in names])
            tab["id"] = offset + np.arange(b.n)
            for k, a in enumerate("xyz"[:d]):
                tab[a] = b.x[:, k]
                tab["v" + a] = b.v[:, k]
            tab["J"] = J
            tab["epoch"] = b.cmap.epoch
            rows.append(tab)
            offset += b.n
        return np.concatenate(rows)

    def _write_frame(self, out: Path, index: int) -> None:
        tab = self.particle_table()
        names = tab.dtype.names
        path = out / "frames" / f"frame_{index:06d}.csv"
        with path.open("w") as fh:
            fh.write(",".join(names) + "\n")
            for row in tab:
                vals = [f"{int(row['id'])}"]
                vals += [f"{float(row[nm]):.17g}" for nm in names[1:-1]]
                vals.append(f"{int(row['epoch'])}")
                fh.write(",".join(vals) + "\n")

    def _write_stats(self, out: Path) -> None:
        d = self.scene.dim
        cols = ["step", "time", "mass"]
        cols += [f"momentum_{a}" for a in "xyz"[:d]]
        cols += ["angular_momentum", "kinetic_energy", "updates",
                 "marked_fraction", "wall_ms"]
        with (out / "stats.csv").open("w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.records:
                vals = [str(r.step), f"{r.time:.17g}", f"{r.mass:.17g}"]
                vals += [f"{v:.17g}" for v in r.momentum]
                vals += [f"{r.angular_momentum:.17g}", f"{r.kinetic_energy:.17g}",
                         str(r.updates), f"{r.marked_fraction:.17g}",
                         f"{r.wall_ms:.6g}"]
                fh.write(",".join(vals) + "\n")

    def summary(self) -> dict:
        sol = self.scene.solver
        return {
            "name": self.scene.name,
            "steps": self.steps_done,
            "time": self.time,
            "particles": self.n_particles,
            "integrator": sol.integrator,
            "transfer": sol.transfer,
            "mode": sol.mode,
            "updates_total": sum(b.updates for b in self.bodies),
            "objects": [
                {"name": obj.name, "particles": b.n, "updates": b.updates,
                 "epoch": b.cmap.epoch, "inverted": b.inverted}
                for obj, b in zip(self.scene.objects, self.bodies)
            ],
        }

    def run(self, out_dir=None, frames: int | None = None, progress=None) -> dict:
        """Run the scene, optionally writing output under `out_dir`.

        Output layout: frames/frame_NNNNNN.csv snapshots, stats.csv with
        one row per step, and summary.json.  With `frames=None` the
        configured step count runs, snapshotting every frame_dt (plus the
        initial and final states).  With `frames=N` the run emits exactly
        N snapshots after the initial one, each separated by frame_dt
        worth of steps (or an even split of the configured steps when no
        frame_dt is set); `frames=0` writes the initial state and stops.
        """
        sol = self.scene.solver
        out = None
        if out_dir is not None:
            out = Path(out_dir)
            (out / "frames").mkdir(parents=True, exist_ok=True)
        per_frame = 0
        if sol.frame_dt is not None:
            per_frame = max(1, round(sol.frame_dt / sol.dt))
        if frames is None:
            total = sol.steps
            stride = per_frame
        else:
            stride = per_frame if per_frame else max(1, sol.steps // max(frames, 1))
            total = frames * stride
        frame = 0
        if out is not None:
            self._write_frame(out, frame)
            frame += 1
        t0 = time.perf_counter()
        for k in range(total):
            self.step()
            last = k + 1 == total
            if out is not None and (last or (stride and (k + 1) % stride == 0)):
                self._write_frame(out, frame)
                frame += 1
            if progress is not None and (last or (k + 1) % 50 == 0):
                progress(k + 1, total)
        wall = time.perf_counter() - t0
        info = self.summary()
        info["wall_s"] = wall
        info["frames"] = frame
        if out is not None:
            self._write_stats(out)
            (out / "summary.json").write_text(json.dumps(info, indent=2) + "\n")
        return info


def run_scene(scene: Scene, out_dir=None, progress=None) -> dict:
    return Simulation(scene).run(out_dir=out_dir, progress=progress)
