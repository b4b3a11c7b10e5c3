"""Tests for deformation bookkeeping and the rebinding criterion.

The accumulation tests use an independent reference: the product of the
per-step increments is recomputed in the test with plain matmuls, so any
bookkeeping error in the split F_total = F_sn F_0s shows up as a mismatch.
"""

import numpy as np
import pytest

from aulmpm.grid import SparseGrid
from aulmpm.kinematics import (
    ConfigurationMap,
    DeformationState,
    UpdatePolicy,
    advance_F_sn,
    apply_update,
    compose_total,
    deformation_delta,
    should_update,
    velocity_gradient_s,
)

COMPOSE_RTOL = 1e-12
ACCUM_RTOL = 1e-12
AFFINE_ATOL = 1e-10


def _grid(n_cells=32, dx=1.0 / 32.0):
    return SparseGrid(origin=(0.0, 0.0), dx=dx, n_cells=(n_cells, n_cells))


# -------------------------------------------------------------- composition


def test_compose_total_multiplies_in_map_order():
    state = DeformationState.identity(1, 2)
    state.F_0s[0] = [[2.0, 0.0], [0.0, 1.0]]   # applied first
    state.F_sn[0] = [[1.0, 0.5], [0.0, 1.0]]   # applied second
    expect = np.array([[1.0, 0.5], [0.0, 1.0]]) @ np.array([[2.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(compose_total(state)[0], expect, rtol=COMPOSE_RTOL)


def test_deformation_delta_measures_volume_change_since_binding():
    state = DeformationState.identity(3, 2)
    state.F_sn[1] = [[1.2, 0.0], [0.0, 1.0]]
    state.F_sn[2] = [[0.0, 1.0], [-1.0, 0.0]]  # rotation, det = 1
    np.testing.assert_allclose(deformation_delta(state), [0.0, 0.2, 0.0], atol=1e-14)


def test_update_policy_validation_and_trigger_edges():
    with pytest.raises(ValueError):
        UpdatePolicy(epsilon=-1.0, eta=0.1)
    with pytest.raises(ValueError):
        UpdatePolicy(epsilon=0.1, eta=1.5)

    delta = np.array([0.0, 0.05, 0.4])
    marked, fire = should_update(delta, UpdatePolicy(epsilon=0.0, eta=0.0))
    assert marked == 3 and fire  # epsilon 0 marks everything, eta 0 always fires
    marked, fire = should_update(delta, UpdatePolicy(epsilon=1e9, eta=0.0))
    assert marked == 0 and fire  # eta 0 fires regardless of markings
    marked, fire = should_update(delta, UpdatePolicy.solid())
    assert marked == 0 and not fire
    marked, fire = should_update(delta, UpdatePolicy(epsilon=0.04, eta=0.5))
    assert marked == 2 and fire


# -------------------------------------------------------------- accumulation


def test_accumulation_is_independent_of_rebinding_schedule():
    # drive with a fixed sequence of spatial velocity gradients; the run that
    # folds F_sn into F_0s every 7 steps must reproduce the plain product
    rng = np.random.default_rng(5)
    dt = 1e-3
    n_steps = 100
    Ls = rng.normal(scale=2.0, size=(n_steps, 2, 2))

    ref = np.eye(2)
    for L in Ls:
        ref = (np.eye(2) + dt * L) @ ref

    folding = DeformationState.identity(1, 2)
    plain = DeformationState.identity(1, 2)
    for k, L in enumerate(Ls):
        for state in (folding, plain):
            grad = np.einsum("ab,nbc->nac", L, state.F_sn)
            advance_F_sn(state, grad, dt)
        if (k + 1) % 7 == 0:
            folding.F_0s = compose_total(folding)
            folding.F_sn = np.broadcast_to(np.eye(2), folding.F_sn.shape).copy()

    np.testing.assert_allclose(compose_total(plain)[0], ref, rtol=ACCUM_RTOL)
    np.testing.assert_allclose(compose_total(folding)[0], ref, rtol=ACCUM_RTOL)
    np.testing.assert_allclose(compose_total(folding), compose_total(plain),
                               rtol=ACCUM_RTOL)


def test_advance_reports_inverted_elements():
    state = DeformationState.identity(2, 2)
    grad = np.zeros((2, 2, 2))
    grad[0] = [[-3.0, 0.0], [0.0, 0.0]]  # drives det negative at dt = 1
    assert advance_F_sn(state, grad, 1.0) == 1


# ------------------------------------------------------------------ binding


def test_configuration_map_binds_reference_geometry():
    grid = _grid()
    rng = np.random.default_rng(2)
    pos = rng.uniform(0.2, 0.8, size=(40, 2))
    cmap = ConfigurationMap.build(pos, grid)
    assert cmap.epoch == 0
    np.testing.assert_allclose(cmap.ref_positions, pos)
    # bound slots agree with the grid's own lookup
    np.testing.assert_array_equal(
        cmap.slots, grid.slot_of(cmap.stencil.coords.reshape(-1, 2)).reshape(cmap.slots.shape))
    np.testing.assert_allclose(cmap.node_ref_positions,
                               grid.position[cmap.slots], atol=1e-14)


def test_velocity_gradient_recovers_affine_grid_fields():
    grid = _grid()
    rng = np.random.default_rng(9)
    pos = rng.uniform(0.2, 0.8, size=(200, 2))
    cmap = ConfigurationMap.build(pos, grid)
    B = np.array([[0.4, -1.1], [0.9, 0.2]])
    c = np.array([0.3, -0.2])
    v_nodes = cmap.node_ref_positions @ B.T + c
    v_p = pos @ B.T + c
    grad = velocity_gradient_s(v_p, v_nodes, cmap)
    np.testing.assert_allclose(grad, np.broadcast_to(B, grad.shape), atol=AFFINE_ATOL)


def test_apply_update_folds_and_rebinds():
    grid = _grid()
    rng = np.random.default_rng(13)
    pos = rng.uniform(0.3, 0.7, size=(25, 2))
    cmap = ConfigurationMap.build(pos, grid)
    state = DeformationState.identity(25, 2)
    state.F_sn = np.broadcast_to(np.array([[1.1, 0.2], [0.0, 0.9]]), (25, 2, 2)).copy()
    total_before = compose_total(state)

    moved = pos + 0.05
    new_map = apply_update(state, moved, grid, cmap)

    assert new_map.epoch == cmap.epoch + 1
    np.testing.assert_allclose(new_map.ref_positions, moved)
    np.testing.assert_allclose(state.F_sn, np.broadcast_to(np.eye(2), (25, 2, 2)))
    np.testing.assert_allclose(compose_total(state), total_before, rtol=1e-15)
