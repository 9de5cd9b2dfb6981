"""Planar floating-base rigid-body dynamics.

Provides the inertia matrix M(q), Coriolis matrix C(q, qdot), gravity
vector G(q), foot kinematics and contact Jacobians, and the generalized
momentum m = M(q) qdot together with its rate.

M, C and G are derived symbolically once per robot geometry (Lagrangian
of the chain, Coriolis matrix from Christoffel symbols) and compiled to
fast numpy callables.  The Christoffel construction guarantees
dM/dt = C + C^T, which downstream momentum models rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

from .model import GeneralizedState, ModelError, RobotModel, perp, rot2

_DYN_CACHE: dict[tuple, tuple] = {}


@dataclass(frozen=True)
class DynamicsTerms:
    """M, C, G plus the column split of M and row split of C.

    M1 holds the columns of M multiplying the base linear velocity,
    M2 the remaining columns; C1 the rows paired with the base linear
    velocity, C2 the remaining rows.
    """

    M: np.ndarray
    C: np.ndarray
    G: np.ndarray

    @property
    def M1(self) -> np.ndarray:
        return self.M[:, :2]

    @property
    def M2(self) -> np.ndarray:
        return self.M[:, 2:]

    @property
    def C1(self) -> np.ndarray:
        return self.C[:2, :]

    @property
    def C2(self) -> np.ndarray:
        return self.C[2:, :]


@dataclass(frozen=True)
class FootKinematics:
    fk: np.ndarray       # foot position, body frame
    J_b: np.ndarray      # (2, n) body Jacobian over all joints
    J_i: np.ndarray      # (2, 3+n) world contact Jacobian
    v_foot: np.ndarray   # world foot velocity


def _build_functions(model: RobotModel):
    """Symbolically derive M, C, G for this geometry and lambdify."""
    n = model.n_joints
    nq = model.n_coords
    px, pz, th = sp.symbols("px pz th")
    alphas = sp.symbols(f"al0:{n}") if n else ()
    qs = [px, pz, th, *alphas]
    qds = sp.symbols(f"qd0:{nq}")
    qdv = sp.Matrix(qds)

    T = (sp.Rational(1, 2) * model.base_mass * (qdv[0] ** 2 + qdv[1] ** 2)
         + sp.Rational(1, 2) * model.base_inertia * qdv[2] ** 2)
    V = model.base_mass * model.gravity * pz

    R = sp.Matrix([[sp.cos(th), -sp.sin(th)], [sp.sin(th), sp.cos(th)]])
    p = sp.Matrix([px, pz])
    ji = 0
    for leg in model.legs:
        joint_pos = p + R * sp.Matrix(leg.hip_offset)
        sigma = th
        omega = qdv[2]
        for link in leg.links:
            sigma = sigma + qs[3 + ji]
            omega = omega + qdv[3 + ji]
            d = sp.Matrix([sp.sin(sigma), -sp.cos(sigma)])
            com = joint_pos + link.com_offset * d
            vcom = com.jacobian(sp.Matrix(qs)) * qdv
            T += (sp.Rational(1, 2) * link.mass * (vcom.T * vcom)[0]
                  + sp.Rational(1, 2) * link.inertia * omega ** 2)
            V += link.mass * model.gravity * com[1]
            joint_pos = joint_pos + link.length * d
            ji += 1

    T = sp.expand(T)
    M = sp.Matrix([[sp.diff(T, qds[i], qds[j])
                    for j in range(nq)] for i in range(nq)])
    dM = [M.diff(s) for s in qs]
    C = sp.Matrix([[sum(sp.Rational(1, 2)
                        * (dM[k][i, j] + dM[j][i, k] - dM[i][j, k]) * qds[k]
                        for k in range(nq))
                    for j in range(nq)] for i in range(nq)])
    G = sp.Matrix([sp.diff(V, s) for s in qs])

    fM = sp.lambdify((qs,), M, "numpy", cse=True)
    fC = sp.lambdify((qs, qds), C, "numpy", cse=True)
    fG = sp.lambdify((qs,), G, "numpy", cse=True)
    fV = sp.lambdify((qs,), V, "numpy", cse=True)
    return fM, fC, fG, fV


def _functions(model: RobotModel):
    key = model.cache_key()
    if key not in _DYN_CACHE:
        _DYN_CACHE[key] = _build_functions(model)
    return _DYN_CACHE[key]


def compute_dynamics_terms(model: RobotModel, state: GeneralizedState) -> DynamicsTerms:
    """Evaluate M, C (Christoffel-consistent) and G at the given state."""
    state.check_model(model)
    fM, fC, fG, _ = _functions(model)
    q = state.q
    M = np.array(fM(q), dtype=float)
    C = np.array(fC(q, state.qdot), dtype=float)
    G = np.array(fG(q), dtype=float).reshape(-1)
    return DynamicsTerms(M=M, C=C, G=G)


def kinetic_energy(model: RobotModel, state: GeneralizedState) -> float:
    M = compute_dynamics_terms(model, state).M
    return float(0.5 * state.qdot @ M @ state.qdot)


def potential_energy(model: RobotModel, state: GeneralizedState) -> float:
    state.check_model(model)
    fV = _functions(model)[3]
    return float(fV(state.q))


def compute_foot_kinematics(model: RobotModel, state: GeneralizedState,
                            foot: str) -> FootKinematics:
    """Analytic foot position, body/world Jacobians and world foot velocity."""
    state.check_model(model)
    leg = model.leg(foot)
    jsl = model.joint_slice(foot)
    alpha = state.joint_angles[jsl]

    fk = np.array(leg.hip_offset, dtype=float)
    sigma = 0.0
    dirs = []
    for link, a in zip(leg.links, alpha):
        sigma += a
        d = np.array([np.sin(sigma), -np.cos(sigma)])
        dirs.append((link.length, d))
        fk = fk + link.length * d

    n = model.n_joints
    J_b = np.zeros((2, n))
    for j in range(len(leg.links)):
        col = np.zeros(2)
        for i in range(j, len(leg.links)):
            length, d = dirs[i]
            col += length * perp(d)
        J_b[:, jsl.start + j] = col

    R = rot2(state.pitch)
    J_i = np.zeros((2, model.n_coords))
    J_i[:, 0:2] = np.eye(2)
    J_i[:, 2] = perp(R @ fk)
    J_i[:, 3:] = R @ J_b
    v_foot = J_i @ state.qdot
    return FootKinematics(fk=fk, J_b=J_b, J_i=J_i, v_foot=v_foot)


def world_foot_position(model: RobotModel, state: GeneralizedState,
                        foot: str) -> np.ndarray:
    fk = compute_foot_kinematics(model, state, foot).fk
    return state.base_pos + rot2(state.pitch) @ fk


def generalized_momentum(model: RobotModel, state: GeneralizedState) -> np.ndarray:
    """m = M(q) qdot."""
    return compute_dynamics_terms(model, state).M @ state.qdot


def momentum_rate(model: RobotModel, state_estimate: GeneralizedState,
                  measured_rates: tuple[float, np.ndarray],
                  torques: np.ndarray,
                  grfs: dict[str, np.ndarray]) -> np.ndarray:
    """Momentum rate from the Coriolis-transpose form.

    mdot = C1^T v + C2^T [omega; alphadot] - G + B u + sum_i J_i^T f_i,
    with all matrices evaluated at the supplied state estimate.  Linear in
    (v, f_i) for a fixed configuration.
    """
    terms = compute_dynamics_terms(model, state_estimate)
    omega, alphadot = measured_rates
    rates = np.concatenate(([float(omega)], np.asarray(alphadot, dtype=float)))
    mdot = (terms.C1.T @ state_estimate.base_vel
            + terms.C2.T @ rates
            - terms.G
            + model.actuation_map @ np.asarray(torques, dtype=float))
    for foot, f in grfs.items():
        J_i = compute_foot_kinematics(model, state_estimate, foot).J_i
        mdot = mdot + J_i.T @ np.asarray(f, dtype=float)
    return mdot
