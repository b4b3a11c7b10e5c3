"""Material models: energy densities, first Piola stress and its linearization.

Three kinds are supported:

* ``fixed_corotated``  psi = mu sum_i (sigma_i - 1)^2 + lambda/2 (J - 1)^2
* ``snow``             fixed corotated on the elastic factor, singular values
                       clamped to [1 - theta_c, 1 + theta_s], moduli scaled by
                       exp(hardening (1 - J_plastic))
* ``weakly_compressible_fluid``  pressure-only equation of state
                       p(J) = bulk ((1/J)^gamma - 1)

All stresses are measured per unit initial volume (first Piola wrt the
initial configuration); `mapped_stress` pushes them to an intermediate
reference configuration.  Inverted elements are handled through a signed
SVD convention: U and V are proper rotations and the smallest singular
value carries the sign of det F.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import SceneError

FIXED_COROTATED = "fixed_corotated"
SNOW = "snow"
FLUID = "weakly_compressible_fluid"

KINDS = (FIXED_COROTATED, SNOW, FLUID)

# determinant floor for the fluid equation of state
J_FLOOR = 1e-6
# cap on the hardening exponent to keep exp() finite
HARDENING_CAP = 30.0


@dataclass(frozen=True)
class MaterialModel:
    kind: str
    density: float
    mu: float = 0.0
    lam: float = 0.0
    theta_c: float = 2.5e-2
    theta_s: float = 7.5e-3
    hardening: float = 10.0
    bulk: float = 0.0
    gamma: float = 7.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SceneError(f"unknown material kind {self.kind!r}")
        if self.density <= 0.0:
            raise SceneError("density must be positive")
        if self.mu < 0.0 or self.lam < 0.0 or self.bulk < 0.0:
            raise SceneError("moduli must be non-negative")

    @classmethod
    def from_youngs(cls, kind: str, density: float, youngs: float, poisson: float,
                    **kw) -> "MaterialModel":
        mu = youngs / (2.0 * (1.0 + poisson))
        lam = youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
        return cls(kind=kind, density=density, mu=mu, lam=lam, **kw)

    @classmethod
    def fluid(cls, density: float, bulk: float, gamma: float = 7.0) -> "MaterialModel":
        return cls(kind=FLUID, density=density, bulk=bulk, gamma=gamma)

    def with_moduli(self, mu, lam) -> "MaterialModel":
        return replace(self, mu=mu, lam=lam)


@dataclass
class StressState:
    """Energy density (n,) and first Piola stress (n, d, d)."""

    energy: np.ndarray
    P: np.ndarray


# ------------------------------------------------------------ linear algebra


def signed_svd(F: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched SVD with rotations for U, V; sign of det F on the last sigma."""
    F = np.asarray(F, dtype=np.float64)
    if F.shape[-1] == 2:
        a = F[..., 0, 0]
        b = F[..., 0, 1]
        c = F[..., 1, 0]
        d = F[..., 1, 1]
        x1 = a + d
        y1 = c - b
        x2 = a - d
        y2 = b + c
        h1 = np.hypot(x1, y1)
        h2 = np.hypot(x2, y2)
        t1 = np.arctan2(y1, x1)
        t2 = np.arctan2(y2, x2)
        # t1 = theta_u - theta_v, t2 = theta_u + theta_v
        sig = np.stack([(h1 + h2) * 0.5, (h1 - h2) * 0.5], axis=-1)
        tu = (t1 + t2) * 0.5
        tv = (t2 - t1) * 0.5
        U = _rot2(tu)
        Vt = np.swapaxes(_rot2(tv), -1, -2)
        return U, sig, Vt
    U, sig, Vt = np.linalg.svd(F)
    neg = np.linalg.det(U) < 0.0
    U[neg, :, -1] *= -1.0
    sig[neg, -1] *= -1.0
    neg = np.linalg.det(Vt) < 0.0
    Vt[neg, -1, :] *= -1.0
    sig[neg, -1] *= -1.0
    return U, sig, Vt


def _rot2(theta: np.ndarray) -> np.ndarray:
    ct = np.cos(theta)
    st = np.sin(theta)
    out = np.empty(theta.shape + (2, 2))
    out[..., 0, 0] = ct
    out[..., 0, 1] = -st
    out[..., 1, 0] = st
    out[..., 1, 1] = ct
    return out


def polar_rotation(F: np.ndarray) -> np.ndarray:
    """Rotation factor R = U V^T of the signed SVD."""
    if F.shape[-1] == 2:
        theta = np.arctan2(F[..., 1, 0] - F[..., 0, 1], F[..., 0, 0] + F[..., 1, 1])
        return _rot2(theta)
    U, _, Vt = signed_svd(F)
    return U @ Vt


def cofactor(F: np.ndarray) -> np.ndarray:
    """Cofactor matrix (equals det(F) F^-T for invertible F), any det."""
    d = F.shape[-1]
    if d == 2:
        out = np.empty_like(F)
        out[..., 0, 0] = F[..., 1, 1]
        out[..., 0, 1] = -F[..., 1, 0]
        out[..., 1, 0] = -F[..., 0, 1]
        out[..., 1, 1] = F[..., 0, 0]
        return out
    if d == 3:
        c0 = np.cross(F[..., :, 1], F[..., :, 2])
        c1 = np.cross(F[..., :, 2], F[..., :, 0])
        c2 = np.cross(F[..., :, 0], F[..., :, 1])
        return np.stack([c0, c1, c2], axis=-1)
    raise ValueError("only 2x2 and 3x3 supported")


def _d_cofactor(F: np.ndarray, dF: np.ndarray) -> np.ndarray:
    d = F.shape[-1]
    if d == 2:
        return cofactor(dF)  # the 2x2 cofactor map is linear
    c0 = np.cross(dF[..., :, 1], F[..., :, 2]) + np.cross(F[..., :, 1], dF[..., :, 2])
    c1 = np.cross(dF[..., :, 2], F[..., :, 0]) + np.cross(F[..., :, 2], dF[..., :, 0])
    c2 = np.cross(dF[..., :, 0], F[..., :, 1]) + np.cross(F[..., :, 0], dF[..., :, 1])
    return np.stack([c0, c1, c2], axis=-1)


def _d_polar_rotation(F: np.ndarray, R: np.ndarray, dF: np.ndarray) -> np.ndarray:
    """Differential of the rotation factor along dF."""
    d = F.shape[-1]
    A = np.einsum("nba,nbc->nac", R, dF)  # R^T dF
    S = np.einsum("nba,nbc->nac", R, F)   # symmetric stretch
    if d == 2:
        tr = S[:, 0, 0] + S[:, 1, 1]
        tr = np.where(np.abs(tr) > 1e-10, tr, np.where(tr >= 0.0, 1e-10, -1e-10))
        w = (A[:, 1, 0] - A[:, 0, 1]) / tr
        # dR = R @ [[0, -w], [w, 0]]
        dR = np.empty_like(R)
        dR[:, 0, 0] = R[:, 0, 1] * w
        dR[:, 0, 1] = -R[:, 0, 0] * w
        dR[:, 1, 0] = R[:, 1, 1] * w
        dR[:, 1, 1] = -R[:, 1, 0] * w
        return dR
    # 3d: solve (tr(S) I - S) omega = 2 axial(skew(A)), dR = R [omega]_x
    G = np.trace(S, axis1=-2, axis2=-1)[:, None, None] * np.eye(3) - S
    G = 0.5 * (G + np.swapaxes(G, -1, -2))
    G += 1e-14 * np.eye(3)
    rhs = np.stack([A[:, 2, 1] - A[:, 1, 2],
                    A[:, 0, 2] - A[:, 2, 0],
                    A[:, 1, 0] - A[:, 0, 1]], axis=-1)
    omega = np.linalg.solve(G, rhs[..., None])[..., 0]
    W = np.zeros_like(R)
    W[:, 0, 1] = -omega[:, 2]
    W[:, 0, 2] = omega[:, 1]
    W[:, 1, 0] = omega[:, 2]
    W[:, 1, 2] = -omega[:, 0]
    W[:, 2, 0] = -omega[:, 1]
    W[:, 2, 1] = omega[:, 0]
    return R @ W


# ------------------------------------------------------------------- stress


def _corotated(F, mu, lam):
    U, sig, Vt = signed_svd(F)
    R = U @ Vt
    J = np.prod(sig, axis=-1)
    psi = mu * np.sum((sig - 1.0) ** 2, axis=-1) + 0.5 * lam * (J - 1.0) ** 2
    P = (2.0 * mu)[:, None, None] * (F - R) \
        + (lam * (J - 1.0))[:, None, None] * cofactor(F)
    return psi, P


def _snow_moduli(model: MaterialModel, J_plastic):
    h = np.exp(np.clip(model.hardening * (1.0 - J_plastic), -HARDENING_CAP, HARDENING_CAP))
    return model.mu * h, model.lam * h


def energy_and_piola(F: np.ndarray, model: MaterialModel,
                     J_plastic: np.ndarray | None = None) -> StressState:
    """Energy density and first Piola stress for a batch of gradients.

    For snow, F is the elastic factor and J_plastic feeds the hardening
    multiplier; for the fluid only det F matters.
    """
    F = np.asarray(F, dtype=np.float64)
    n = F.shape[0]
    if model.kind == FIXED_COROTATED:
        mu = np.full(n, model.mu)
        lam = np.full(n, model.lam)
        psi, P = _corotated(F, mu, lam)
        return StressState(energy=psi, P=P)
    if model.kind == SNOW:
        jp = np.ones(n) if J_plastic is None else np.asarray(J_plastic, dtype=np.float64)
        mu, lam = _snow_moduli(model, jp)
        psi, P = _corotated(F, mu, lam)
        return StressState(energy=psi, P=P)
    if model.kind == FLUID:
        J = np.maximum(np.linalg.det(F), J_FLOOR)
        k = model.bulk
        g = model.gamma
        psi = k * (J + J ** (1.0 - g) / (g - 1.0) - g / (g - 1.0))
        P = (k * (1.0 - J ** (-g)))[:, None, None] * cofactor(F)
        return StressState(energy=psi, P=P)
    raise SceneError(f"unknown material kind {model.kind!r}")


def pressure(J: np.ndarray, model: MaterialModel) -> np.ndarray:
    """Fluid equation of state p(J) = bulk ((1/J)^gamma - 1)."""
    J = np.maximum(np.asarray(J, dtype=np.float64), J_FLOOR)
    return model.bulk * (J ** (-model.gamma) - 1.0)


def hessian_action(F: np.ndarray, dF: np.ndarray, model: MaterialModel,
                   J_plastic: np.ndarray | None = None) -> np.ndarray:
    """Directional derivative dP = (d2 psi / dF dF) : dF at F."""
    F = np.asarray(F, dtype=np.float64)
    dF = np.asarray(dF, dtype=np.float64)
    n = F.shape[0]
    if model.kind == FLUID:
        J = np.maximum(np.linalg.det(F), J_FLOOR)
        cof = cofactor(F)
        dJ = np.einsum("nab,nab->n", cof, dF)
        k = model.bulk
        g = model.gamma
        return (k * g * J ** (-g - 1.0) * dJ)[:, None, None] * cof \
            + (k * (1.0 - J ** (-g)))[:, None, None] * _d_cofactor(F, dF)
    if model.kind == SNOW:
        jp = np.ones(n) if J_plastic is None else np.asarray(J_plastic, dtype=np.float64)
        mu, lam = _snow_moduli(model, jp)
    else:
        mu = np.full(n, model.mu)
        lam = np.full(n, model.lam)
    R = polar_rotation(F)
    dR = _d_polar_rotation(F, R, dF)
    cof = cofactor(F)
    J = np.linalg.det(F)
    dJ = np.einsum("nab,nab->n", cof, dF)
    return (2.0 * mu)[:, None, None] * (dF - dR) \
        + (lam * dJ)[:, None, None] * cof \
        + (lam * (J - 1.0))[:, None, None] * _d_cofactor(F, dF)


def mapped_stress(P0: np.ndarray, F_0s: np.ndarray,
                  J_0s: np.ndarray | None = None) -> np.ndarray:
    """Push the initial-configuration stress to the reference configuration:
    P_s = P_0 F_0s^T / det(F_0s)."""
    if J_0s is None:
        J_0s = np.linalg.det(F_0s)
    return np.einsum("nab,ncb->nac", P0, F_0s) / J_0s[:, None, None]


def plastic_project(F_elastic: np.ndarray, F_plastic: np.ndarray,
                    model: MaterialModel) -> tuple[np.ndarray, np.ndarray]:
    """Clamp the elastic singular values and push the excess into the
    plastic factor; the product F_elastic F_plastic is preserved."""
    if model.kind != SNOW:
        return F_elastic, F_plastic
    U, sig, Vt = signed_svd(F_elastic)
    clamped = np.clip(sig, 1.0 - model.theta_c, 1.0 + model.theta_s)
    Fe = np.einsum("nab,nb,nbc->nac", U, clamped, Vt)
    # F_p' = V diag(sig / clamped) V^T F_p keeps the total product fixed
    V = np.swapaxes(Vt, -1, -2)
    scale = sig / clamped
    Fp = np.einsum("nab,nb,nbc,ncd->nad", V, scale, Vt, F_plastic)
    return Fe, Fp


def wave_speed(model: MaterialModel, J: float = 1.0) -> float:
    """Stiffness wave speed used for time step control."""
    if model.kind == FLUID:
        c2 = model.bulk * model.gamma / model.density * max(J, J_FLOOR) ** (1.0 - model.gamma)
        return float(np.sqrt(c2))
    return float(np.sqrt((model.lam + 2.0 * model.mu) / model.density))
