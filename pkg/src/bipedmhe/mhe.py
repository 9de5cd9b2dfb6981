"""Moving-horizon estimation of base state and ground reaction forces.

The estimator keeps a short window of sensor ticks and solves a convex QP
per tick.  Decision variables are the stacked per-tick states

    x_k = [p, v, b_a, m, f_foot...]   (base position/velocity, accel bias,
                                       generalized momentum, per-foot force)

Dynamics and measurement matrices are evaluated at a configuration built
from measured joint angles and the filtered pitch, so the process model is
linear time-varying and the program stays convex.  Contact switching enters
through hard complementarity rows (stance feet cannot move, swing feet
carry no force, normal forces are nonnegative) instead of a hybrid model.
Information leaving the window is folded into a quadratic arrival cost by
Schur-complement elimination on the equality-constrained KKT system.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dynamics import compute_dynamics_terms, compute_foot_kinematics
from .model import GeneralizedState, RobotModel, perp, rot2
from .qp import QpProblem, QpSettings, solve_qp


# --------------------------------------------------------------------------
# state layout


@dataclass(frozen=True)
class StateLayout:
    """Index ranges of the per-tick state blocks."""

    dim: int
    position: slice
    velocity: slice
    bias: slice
    momentum: slice
    force: dict


def state_layout(model: RobotModel) -> StateLayout:
    nc = model.n_coords
    base = 6 + nc
    force = {}
    for i, foot in enumerate(model.foot_ids):
        force[foot] = slice(base + 2 * i, base + 2 * i + 2)
    return StateLayout(dim=base + 2 * len(model.foot_ids),
                       position=slice(0, 2), velocity=slice(2, 4),
                       bias=slice(4, 6), momentum=slice(6, 6 + nc),
                       force=force)


@dataclass
class EstimatorState:
    """Point estimate: base kinematics, accel bias, momentum, foot forces."""

    position: np.ndarray
    velocity: np.ndarray
    accel_bias: np.ndarray
    momentum: np.ndarray
    forces: dict

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.accel_bias = np.asarray(self.accel_bias, dtype=float)
        self.momentum = np.asarray(self.momentum, dtype=float)
        self.forces = {k: np.asarray(v, dtype=float)
                       for k, v in self.forces.items()}
        parts = [self.position, self.velocity, self.accel_bias, self.momentum]
        parts += list(self.forces.values())
        if not all(np.all(np.isfinite(p)) for p in parts):
            raise ValueError("estimator state has non-finite entries")

    def to_vector(self, model: RobotModel) -> np.ndarray:
        blocks = [self.position, self.velocity, self.accel_bias,
                  self.momentum]
        blocks += [self.forces[foot] for foot in model.foot_ids]
        return np.concatenate(blocks)

    @classmethod
    def from_vector(cls, model: RobotModel, x) -> "EstimatorState":
        lay = state_layout(model)
        x = np.asarray(x, dtype=float)
        if x.shape != (lay.dim,):
            raise ValueError(f"state vector has shape {x.shape}, "
                             f"expected ({lay.dim},)")
        return cls(position=x[lay.position], velocity=x[lay.velocity],
                   accel_bias=x[lay.bias], momentum=x[lay.momentum],
                   forces={f: x[s] for f, s in lay.force.items()})

    @classmethod
    def zero(cls, model: RobotModel) -> "EstimatorState":
        return cls.from_vector(model, np.zeros(state_layout(model).dim))


@dataclass
class NoiseModel:
    """Process/measurement noise levels; random walks are per sqrt-second.

    Process noise for base position and velocity is derived from the
    accelerometer noise that drives those rows, with an extra random-walk
    term absorbing discretization error.  Momentum rows carry the model
    uncertainty of the linearized rate coupling.
    """

    accel_std: float = 0.04            # m/s^2, drives p and v process rows
    position_walk_std: float = 1e-3    # m/sqrt(s)
    velocity_walk_std: float = 0.0     # (m/s)/sqrt(s)
    bias_walk_std: float = 1e-3        # (m/s^2)/sqrt(s)
    momentum_model_std: float = 1.0    # per momentum row /sqrt(s)
    force_walk_std: float = 50.0       # N/sqrt(s)
    leg_odometry_std: float = 0.01     # m/s
    momentum_meas_std: float = 0.02    # per momentum row
    vo_tick_std: float = 1e-3          # m per tick

    def __post_init__(self):
        positive = [self.accel_std, self.position_walk_std,
                    self.bias_walk_std, self.momentum_model_std,
                    self.force_walk_std, self.leg_odometry_std,
                    self.momentum_meas_std, self.vo_tick_std]
        if any(v <= 0 for v in positive) or self.velocity_walk_std < 0:
            raise ValueError("noise levels must be positive")

    def process_variances(self, model: RobotModel, dt: float) -> np.ndarray:
        qp = (0.5 * self.accel_std * dt * dt) ** 2 \
            + self.position_walk_std ** 2 * dt
        qv = (self.accel_std * dt) ** 2 + self.velocity_walk_std ** 2 * dt
        qb = self.bias_walk_std ** 2 * dt
        qm = self.momentum_model_std ** 2 * dt
        qf = self.force_walk_std ** 2 * dt
        return np.concatenate([
            np.full(2, qp), np.full(2, qv), np.full(2, qb),
            np.full(model.n_coords, qm),
            np.full(2 * len(model.foot_ids), qf)])

    def leg_odometry_variances(self) -> np.ndarray:
        return np.full(2, self.leg_odometry_std ** 2)

    def momentum_variances(self, model: RobotModel) -> np.ndarray:
        return np.full(model.n_coords, self.momentum_meas_std ** 2)

    def vo_variances(self) -> np.ndarray:
        return np.full(2, self.vo_tick_std ** 2)


@dataclass
class ArrivalCost:
    """Quadratic prior 0.5 (x - mean)' information (x - mean) on the
    window-start state."""

    mean: np.ndarray
    information: np.ndarray
    tick: int = 0
    regularized: bool = False

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        info = np.asarray(self.information, dtype=float)
        d = self.mean.size
        if info.shape != (d, d):
            raise ValueError(f"information shape {info.shape} does not "
                             f"match mean dimension {d}")
        if np.abs(info - info.T).max() > 1e-8 * max(1.0, np.abs(info).max()):
            raise ValueError("arrival information is not symmetric")
        info = 0.5 * (info + info.T)
        w = np.linalg.eigvalsh(info)
        if w[0] < -1e-8 * max(1.0, w[-1]):
            raise ValueError("arrival information is not positive "
                             "semidefinite")
        self.information = info


def default_initial_information(model: RobotModel) -> np.ndarray:
    """Weak diagonal prior used when the caller supplies none."""
    stds = np.concatenate([
        np.full(2, 1.0),       # position, m
        np.full(2, 1.0),       # velocity, m/s
        np.full(2, 0.1),       # accel bias, m/s^2
        np.full(model.n_coords, 10.0),
        np.full(2 * len(model.foot_ids), 200.0)])
    return np.diag(1.0 / stds ** 2)


# --------------------------------------------------------------------------
# window buffer


@dataclass
class WindowTick:
    """One tick of inputs plus everything evaluated at its linearization."""

    time: float
    accel: np.ndarray
    gyro: float
    joint_pos: np.ndarray
    joint_vel: np.ndarray
    effort: np.ndarray
    contacts: dict
    rotation: np.ndarray
    terms: object = None          # DynamicsTerms at the linearization point
    feet: dict = None             # foot -> FootKinematics
    m_inv: np.ndarray = None
    y_leg: dict = None            # stance foot -> leg-odometry velocity
    y_mom: np.ndarray = None
    vo: np.ndarray = None         # displacement toward the next tick, or None


@dataclass
class WindowBuffer:
    """Time-ordered ring of ticks at fixed spacing."""

    size: int = 8
    dt: float = 0.005
    ticks: list = field(default_factory=list)

    @property
    def full(self) -> bool:
        return len(self.ticks) >= self.size

    def push(self, tick: WindowTick):
        if self.ticks:
            gap = tick.time - self.ticks[-1].time
            if abs(gap - self.dt) > 1e-6:
                raise ValueError(f"tick spacing {gap:.6g} does not match "
                                 f"dt={self.dt:.6g}")
        if len(self.ticks) >= self.size:
            raise ValueError("window buffer is full")
        self.ticks.append(tick)

    def pop_oldest(self) -> WindowTick:
        return self.ticks.pop(0)


# --------------------------------------------------------------------------
# measurement models


def leg_odometry_measurement(model: RobotModel, rotation, joint_pos,
                             joint_vel, gyro, contact, foot):
    """Base velocity implied by a pinned foot; valid only in stance.

    With the foot static, the base velocity equals minus the foot velocity
    the joints and pitch rate would otherwise produce.
    """
    pitch = math.atan2(rotation[1, 0], rotation[0, 0])
    q = np.concatenate(([0.0, 0.0, pitch], np.asarray(joint_pos, float)))
    state = GeneralizedState(q=q, qdot=np.zeros(model.n_coords))
    kin = compute_foot_kinematics(model, state, foot)
    R = np.asarray(rotation, dtype=float)
    y = -R @ (kin.J_b @ np.asarray(joint_vel, float)) \
        - float(gyro) * perp(R @ kin.fk)
    return y, bool(contact)


def momentum_measurement(model: RobotModel, state_estimate: GeneralizedState,
                         gyro, joint_vel) -> np.ndarray:
    """Momentum contribution of the measured rates, M2 [omega; alphadot].

    The window residual pairs this with (m - M1 v) so the unknown base
    velocity stays on the state side.
    """
    terms = compute_dynamics_terms(model, state_estimate)
    rates = np.concatenate(([float(gyro)], np.asarray(joint_vel, float)))
    return terms.M2 @ rates


def interpolate_vo(vo_increments, imu_ticks):
    """Spread slow relative-translation increments onto per-tick displacements.

    Each increment (t_i, t_j, dp) is aligned to the nearest ticks (ties to
    the earlier tick).  Chained increments become control points of a C1
    piecewise cubic Bezier path; differencing the path at tick fractions
    yields per-tick displacements whose sum over an increment interval
    equals that increment exactly.  Returns (values, valid): values[k] is
    the displacement from tick k to k+1, NaN where coverage is missing.
    """
    t = np.asarray(imu_ticks, dtype=float)
    n = t.size
    values = np.full((n, 2), np.nan)
    valid = np.zeros(n, dtype=bool)

    def align(x):
        i = int(np.searchsorted(t, x))
        if i <= 0:
            return 0
        if i >= n:
            return n - 1
        return i - 1 if x - t[i - 1] <= t[i] - x else i

    spans = []
    for t_i, t_j, dp in vo_increments:
        a, b = align(t_i), align(t_j)
        if b > a:
            spans.append((a, b, np.asarray(dp, dtype=float)))
    spans.sort(key=lambda s: s[0])

    chains = []
    for span in spans:
        if chains and chains[-1][-1][1] == span[0]:
            chains[-1].append(span)
        else:
            chains.append([span])

    for chain in chains:
        pts = np.zeros((len(chain) + 1, 2))
        for i, (_, _, dp) in enumerate(chain):
            pts[i + 1] = pts[i] + dp
        tans = np.zeros_like(pts)
        tans[0] = pts[1] - pts[0]
        tans[-1] = pts[-1] - pts[-2]
        tans[1:-1] = 0.5 * (pts[2:] - pts[:-2])
        for i, (a, b, _) in enumerate(chain):
            b0, b3 = pts[i], pts[i + 1]
            b1 = b0 + tans[i] / 3.0
            b2 = b3 - tans[i + 1] / 3.0
            tau = np.linspace(0.0, 1.0, b - a + 1)[:, None]
            path = ((1 - tau) ** 3 * b0 + 3 * (1 - tau) ** 2 * tau * b1
                    + 3 * (1 - tau) * tau ** 2 * b2 + tau ** 3 * b3)
            values[a:b] = np.diff(path, axis=0)
            valid[a:b] = True
    return values, valid


# --------------------------------------------------------------------------
# window assembly


def make_window_tick(model: RobotModel, inputs, base_velocity=None) -> WindowTick:
    """Evaluate dynamics terms and per-tick measurements for one input tick.

    The linearization configuration uses measured joint angles and the
    supplied pitch; base velocity (previous estimate) only enters the
    Coriolis evaluation.
    """
    rotation = np.asarray(inputs.rotation, dtype=float)
    pitch = math.atan2(rotation[1, 0], rotation[0, 0])
    joint_pos = np.asarray(inputs.joint_pos, dtype=float)
    joint_vel = np.asarray(inputs.joint_vel, dtype=float)
    v_lin = np.zeros(2) if base_velocity is None \
        else np.asarray(base_velocity, dtype=float)
    q = np.concatenate(([0.0, 0.0, pitch], joint_pos))
    qdot = np.concatenate((v_lin, [float(inputs.gyro)], joint_vel))
    state = GeneralizedState(q=q, qdot=qdot)
    terms = compute_dynamics_terms(model, state)
    feet = {foot: compute_foot_kinematics(model, state, foot)
            for foot in model.foot_ids}
    y_leg = {}
    for foot in model.foot_ids:
        if inputs.contacts[foot]:
            y, ok = leg_odometry_measurement(
                model, rotation, joint_pos, joint_vel, inputs.gyro,
                inputs.contacts[foot], foot)
            if ok:
                y_leg[foot] = y
    rates = np.concatenate(([float(inputs.gyro)], joint_vel))
    return WindowTick(
        time=float(inputs.time), accel=np.asarray(inputs.accel, float),
        gyro=float(inputs.gyro), joint_pos=joint_pos, joint_vel=joint_vel,
        effort=np.asarray(inputs.effort, float), contacts=dict(inputs.contacts),
        rotation=rotation, terms=terms, feet=feet,
        m_inv=np.linalg.inv(terms.M), y_leg=y_leg,
        y_mom=terms.M2 @ rates,
        vo=None if inputs.vo is None else np.asarray(inputs.vo, float))


def _require_terms(tick: WindowTick):
    if tick.terms is None or tick.feet is None or tick.m_inv is None:
        raise ValueError(f"tick at t={tick.time:.6g} is missing evaluated "
                         "dynamics terms")


def _transition(model: RobotModel, tick: WindowTick, dt: float,
                lay: StateLayout):
    """LTV step x+ = A x + c built from one tick's inputs and terms."""
    _require_terms(tick)
    A = np.eye(lay.dim)
    c = np.zeros(lay.dim)
    R = tick.rotation
    accel_w = R @ tick.accel + np.array([0.0, -model.gravity])
    A[lay.position, lay.velocity] = dt * np.eye(2)
    A[lay.position, lay.bias] = -0.5 * dt * dt * R
    A[lay.velocity, lay.bias] = -dt * R
    A[lay.momentum, lay.velocity] = dt * tick.terms.C1.T
    for foot in model.foot_ids:
        A[lay.momentum, lay.force[foot]] = dt * tick.feet[foot].J_i.T
    c[lay.position] = 0.5 * dt * dt * accel_w
    c[lay.velocity] = dt * accel_w
    rates = np.concatenate(([tick.gyro], tick.joint_vel))
    c[lay.momentum] = dt * (tick.terms.C2.T @ rates - tick.terms.G
                            + model.actuation_map @ tick.effort)
    return A, c


def _tick_measurements(model: RobotModel, tick: WindowTick, noise: NoiseModel,
                       lay: StateLayout):
    """Rows (P, z, w_inv) attached to a single tick."""
    _require_terms(tick)
    rows = []
    for foot, y in tick.y_leg.items():
        P = np.zeros((2, lay.dim))
        P[:, lay.velocity] = np.eye(2)
        rows.append((P, y, 1.0 / noise.leg_odometry_variances()))
    P = np.zeros((model.n_coords, lay.dim))
    P[:, lay.momentum] = np.eye(model.n_coords)
    P[:, lay.velocity] = -tick.terms.M1
    rows.append((P, tick.y_mom, 1.0 / noise.momentum_variances(model)))
    return rows


def _vo_rows(tick: WindowTick, lay: StateLayout):
    """Cross-tick rows R' (p_next - p) = vo for a tick with VO coverage."""
    Rt = tick.rotation.T
    P0 = np.zeros((2, lay.dim))
    P1 = np.zeros((2, lay.dim))
    P0[:, lay.position] = -Rt
    P1[:, lay.position] = Rt
    return P0, P1, tick.vo


def _tick_constraints(model: RobotModel, tick: WindowTick, lay: StateLayout,
                      slippery: bool):
    """Complementarity rows for one tick: equality matrix and f_z >= 0 rows."""
    _require_terms(tick)
    eq = []
    for foot in model.foot_ids:
        if tick.contacts[foot]:
            # stance: foot velocity J_i qdot = J_i M^-1 m must vanish
            vel_rows = tick.feet[foot].J_i @ tick.m_inv
            if slippery:
                vel_rows = vel_rows[1:]  # normal component only
            for r in vel_rows:
                row = np.zeros(lay.dim)
                row[lay.momentum] = r
                eq.append(row)
        else:
            # swing: no force
            for j in range(2):
                row = np.zeros(lay.dim)
                row[lay.force[foot].start + j] = 1.0
                eq.append(row)
    ineq = []
    for foot in model.foot_ids:
        row = np.zeros(lay.dim)
        row[lay.force[foot].start + 1] = -1.0  # -f_z <= 0
        ineq.append(row)
    eq_mat = np.array(eq).reshape(len(eq), lay.dim)
    in_mat = np.array(ineq).reshape(len(ineq), lay.dim)
    return eq_mat, in_mat


def _tick_row_counts(model: RobotModel, tick: WindowTick, slippery: bool):
    n_eq = 0
    for foot in model.foot_ids:
        if tick.contacts[foot]:
            n_eq += 1 if slippery else 2
        else:
            n_eq += 2
    return n_eq, len(model.foot_ids)


def build_window_qp(buffer: WindowBuffer, arrival: ArrivalCost,
                    noise: NoiseModel, model: RobotModel, *,
                    constraints: bool = True,
                    slippery: bool = False) -> QpProblem:
    """Assemble the window MAP problem as a QP over the stacked states."""
    lay = state_layout(model)
    D = lay.dim
    ticks = buffer.ticks
    W = len(ticks)
    if W == 0:
        raise ValueError("window buffer is empty")
    nv = W * D
    H = np.zeros((nv, nv))
    c = np.zeros(nv)

    H[:D, :D] += arrival.information
    c[:D] -= arrival.information @ arrival.mean

    q_inv = 1.0 / noise.process_variances(model, buffer.dt)
    for k in range(W - 1):
        A, ck = _transition(model, ticks[k], buffer.dt, lay)
        i, j = k * D, (k + 1) * D
        WA = A * q_inv[:, None]          # Q^-1 A
        H[i:i + D, i:i + D] += A.T @ WA
        H[i:i + D, j:j + D] -= WA.T
        H[j:j + D, i:i + D] -= WA
        H[j:j + D, j:j + D] += np.diag(q_inv)
        c[i:i + D] += WA.T @ ck
        c[j:j + D] -= q_inv * ck

    vo_inv = 1.0 / noise.vo_variances()
    for k, tick in enumerate(ticks):
        i = k * D
        for P, z, w_inv in _tick_measurements(model, tick, noise, lay):
            WP = P * w_inv[:, None]
            H[i:i + D, i:i + D] += P.T @ WP
            c[i:i + D] -= WP.T @ z
        if tick.vo is not None and k < W - 1:
            P0, P1, z = _vo_rows(tick, lay)
            j = i + D
            W0 = P0 * vo_inv[:, None]
            W1 = P1 * vo_inv[:, None]
            H[i:i + D, i:i + D] += P0.T @ W0
            H[i:i + D, j:j + D] += W0.T @ P1
            H[j:j + D, i:i + D] += W1.T @ P0
            H[j:j + D, j:j + D] += P1.T @ W1
            c[i:i + D] -= W0.T @ z
            c[j:j + D] -= W1.T @ z

    H = 0.5 * (H + H.T)

    A_eq = b_eq = A_in = b_in = None
    if constraints:
        eq_blocks, in_blocks = [], []
        for k, tick in enumerate(ticks):
            eq_mat, in_mat = _tick_constraints(model, tick, lay, slippery)
            for mat, blocks in ((eq_mat, eq_blocks), (in_mat, in_blocks)):
                wide = np.zeros((mat.shape[0], nv))
                wide[:, k * D:(k + 1) * D] = mat
                blocks.append(wide)
        A_eq = sp.csc_matrix(np.vstack(eq_blocks))
        A_in = sp.csc_matrix(np.vstack(in_blocks))
        b_eq = np.zeros(A_eq.shape[0])
        b_in = np.zeros(A_in.shape[0])
    return QpProblem(H=sp.csc_matrix(H), c=c, A_eq=A_eq, b_eq=b_eq,
                     A_in=A_in, b_in=b_in)


def marginalize_arrival_cost(buffer: WindowBuffer, arrival: ArrivalCost,
                             noise: NoiseModel, model: RobotModel, *,
                             constraints: bool = True,
                             slippery: bool = False) -> ArrivalCost:
    """Fold the oldest tick into a new arrival cost on the next state.

    Eliminates the window-start state (and the Lagrange multipliers of its
    complementarity rows) from the quadratic formed by the current arrival
    cost, the oldest tick's measurements, its transition, and any VO rows
    coupling it forward.  The result is the Schur complement of that KKT
    system, a quadratic prior on the state one tick later.  Inequality rows
    are not part of the elimination.
    """
    lay = state_layout(model)
    D = lay.dim
    tick = buffer.ticks[0]
    A, ck = _transition(model, tick, buffer.dt, lay)
    q_inv = 1.0 / noise.process_variances(model, buffer.dt)

    S00 = arrival.information.copy()
    g0 = -(arrival.information @ arrival.mean)
    S01 = np.zeros((D, D))
    S11 = np.diag(q_inv).copy()
    g1 = np.zeros(D)

    WA = A * q_inv[:, None]
    S00 += A.T @ WA
    S01 -= WA.T
    g0 += WA.T @ ck
    g1 -= q_inv * ck

    for P, z, w_inv in _tick_measurements(model, tick, noise, lay):
        WP = P * w_inv[:, None]
        S00 += P.T @ WP
        g0 -= WP.T @ z

    if tick.vo is not None:
        P0, P1, z = _vo_rows(tick, lay)
        vo_inv = 1.0 / noise.vo_variances()
        W0 = P0 * vo_inv[:, None]
        W1 = P1 * vo_inv[:, None]
        S00 += P0.T @ W0
        S01 += W0.T @ P1
        S11 += P1.T @ W1
        g0 -= W0.T @ z
        g1 -= W1.T @ z

    if constraints:
        E, _ = _tick_constraints(model, tick, lay, slippery)
    else:
        E = np.zeros((0, D))
    me = E.shape[0]

    K = np.block([[S00, E.T], [E, np.zeros((me, me))]])
    B = np.vstack([S01, np.zeros((me, D))])
    g = np.concatenate([g0, np.zeros(me)])

    flagged = False
    sv = np.linalg.svd(K, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1.0):
        K = K + 1e-9 * np.eye(K.shape[0])
        flagged = True

    KiB = np.linalg.solve(K, B)
    Kig = np.linalg.solve(K, g)
    info = S11 - B.T @ KiB
    lin = g1 - B.T @ Kig
    info = 0.5 * (info + info.T)
    w, V = np.linalg.eigh(info)
    if w[0] < 0:
        info = (V * np.maximum(w, 0.0)) @ V.T
    mean = np.linalg.lstsq(info, -lin, rcond=None)[0]
    return ArrivalCost(mean=mean, information=info, tick=arrival.tick + 1,
                       regularized=flagged)


# --------------------------------------------------------------------------
# per-tick estimator


@dataclass
class TickInputs:
    """Raw sensor data for one estimator tick."""

    time: float
    accel: np.ndarray
    gyro: float
    joint_pos: np.ndarray
    joint_vel: np.ndarray
    effort: np.ndarray
    contacts: dict
    rotation: np.ndarray
    vo: np.ndarray = None


@dataclass
class EstimateOut:
    """Newest-tick estimate plus solver diagnostics."""

    time: float
    state: EstimatorState
    x: np.ndarray
    status: str
    iterations: int
    solve_time: float
    degraded: bool
    arrival_regularized: bool


@dataclass
class MheConfig:
    window_size: int = 8
    rate_hz: float = 200.0
    constraints: bool = True
    slippery: bool = False
    noise: NoiseModel = field(default_factory=NoiseModel)
    solver: QpSettings = field(
        default_factory=lambda: QpSettings(scaling_iters=3))

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be at least 1")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")


class MovingHorizonEstimator:
    """Sliding-window estimator; feed ticks in order through step()."""

    def __init__(self, model: RobotModel, config: MheConfig = None,
                 initial_state: EstimatorState = None,
                 initial_information=None):
        self.model = model
        self.config = config if config is not None else MheConfig()
        self.layout = state_layout(model)
        dt = 1.0 / self.config.rate_hz
        self.buffer = WindowBuffer(size=self.config.window_size, dt=dt)
        mean = (initial_state if initial_state is not None
                else EstimatorState.zero(model)).to_vector(model)
        info = (default_initial_information(model)
                if initial_information is None
                else np.asarray(initial_information, dtype=float))
        self.arrival = ArrivalCost(mean=mean, information=info, tick=0)
        self._prev_tick = None
        self._prev_x = None
        self._prev_eq = None
        self._prev_in = None
        self._last_estimate = mean.copy()
        self.last_problem = None
        self.last_solution = None

    def _warm_start(self, shifted, n_eq_new, n_in_new, problem):
        D = self.layout.dim
        if self._prev_x is None:
            return None, None
        core = self._prev_x[D:] if shifted else self._prev_x
        last = core[-D:] if core.size else self._prev_x[-D:]
        A, c = _transition(self.model, self._prev_tick, self.buffer.dt,
                           self.layout)
        x0 = np.concatenate([core, A @ last + c])
        y0 = None
        if self._prev_eq is not None:
            eq = (self._prev_eq[1:] if shifted else self._prev_eq) \
                + [np.zeros(n_eq_new)]
            ins = (self._prev_in[1:] if shifted else self._prev_in) \
                + [np.zeros(n_in_new)]
            y0 = np.concatenate(eq + ins)
            if y0.size != problem.m_eq + problem.m_in:
                y0 = None
        if x0.size != problem.n:
            return None, None
        return x0, y0

    def step(self, inputs: TickInputs) -> EstimateOut:
        cfg = self.config
        prev_v = self._last_estimate[self.layout.velocity]
        tick = make_window_tick(self.model, inputs, base_velocity=prev_v)

        shifted = False
        if self.buffer.full:
            self.arrival = marginalize_arrival_cost(
                self.buffer, self.arrival, cfg.noise, self.model,
                constraints=cfg.constraints, slippery=cfg.slippery)
            self.buffer.pop_oldest()
            shifted = True
        self.buffer.push(tick)

        problem = build_window_qp(self.buffer, self.arrival, cfg.noise,
                                  self.model, constraints=cfg.constraints,
                                  slippery=cfg.slippery)
        counts = [_tick_row_counts(self.model, tk, cfg.slippery)
                  for tk in self.buffer.ticks] if cfg.constraints else None
        n_eq_new, n_in_new = counts[-1] if counts else (0, 0)
        x0, y0 = self._warm_start(shifted, n_eq_new, n_in_new, problem)

        start = _time.perf_counter()
        sol = solve_qp(problem, cfg.solver, x0=x0, y0=y0)
        elapsed = _time.perf_counter() - start
        self.last_problem = problem
        self.last_solution = sol

        D = self.layout.dim
        degraded = sol.status != "solved"
        if degraded:
            if self._prev_tick is not None:
                A, c = _transition(self.model, self._prev_tick,
                                   self.buffer.dt, self.layout)
                x_new = A @ self._last_estimate + c
            else:
                x_new = self.arrival.mean.copy()
            self._prev_x = None
            self._prev_eq = None
            self._prev_in = None
        else:
            x_new = sol.x[-D:].copy()
            if cfg.constraints:
                # the swing rows hold exactly in the reported state, not
                # merely to solver roundoff
                for foot in self.model.foot_ids:
                    if not tick.contacts[foot]:
                        x_new[self.layout.force[foot]] = 0.0
            self._prev_x = sol.x
            if cfg.constraints:
                self._prev_eq, self._prev_in = [], []
                at_eq = at_in = 0
                for n_eq, n_in in counts:
                    self._prev_eq.append(sol.y_eq[at_eq:at_eq + n_eq])
                    self._prev_in.append(sol.y_in[at_in:at_in + n_in])
                    at_eq += n_eq
                    at_in += n_in
            else:
                self._prev_eq = self._prev_in = None

        self._prev_tick = tick
        self._last_estimate = x_new
        return EstimateOut(
            time=tick.time,
            state=EstimatorState.from_vector(self.model, x_new),
            x=x_new, status=sol.status, iterations=sol.iterations,
            solve_time=elapsed, degraded=degraded,
            arrival_regularized=self.arrival.regularized)


# --------------------------------------------------------------------------
# log driver


@dataclass
class EstimateTrace:
    """Per-tick estimates stacked into arrays for metrics and logging."""

    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    accel_bias: np.ndarray
    momentum: np.ndarray
    forces: np.ndarray            # (K, n_feet, 2)
    foot_names: tuple
    status: list
    iterations: np.ndarray
    solve_time: np.ndarray
    degraded: np.ndarray

    @classmethod
    def from_outputs(cls, model: RobotModel, outputs) -> "EstimateTrace":
        feet = model.foot_ids
        return cls(
            t=np.array([o.time for o in outputs]),
            position=np.array([o.state.position for o in outputs]),
            velocity=np.array([o.state.velocity for o in outputs]),
            accel_bias=np.array([o.state.accel_bias for o in outputs]),
            momentum=np.array([o.state.momentum for o in outputs]),
            forces=np.array([[o.state.forces[f] for f in feet]
                             for o in outputs]),
            foot_names=tuple(feet),
            status=[o.status for o in outputs],
            iterations=np.array([o.iterations for o in outputs]),
            solve_time=np.array([o.solve_time for o in outputs]),
            degraded=np.array([o.degraded for o in outputs], dtype=bool))


def iter_tick_inputs(log, use_vo: bool = True, orientation_config=None):
    """Yield per-tick estimator inputs from a sensor log; pitch comes from
    the orientation filter and VO increments are interpolated onto ticks."""
    from .orientation import run_orientation_filter

    pitch = run_orientation_filter(log, config=orientation_config,
                                   use_vo=use_vo)["pitch"]
    vo_vals = vo_valid = None
    if use_vo and log.vo_ti.size:
        vo_vals, vo_valid = interpolate_vo(
            zip(log.vo_ti, log.vo_tj, log.vo_dp), log.tick_t)
    for k in range(log.n_ticks):
        contacts = {foot: bool(log.contact_flags[k, i])
                    for i, foot in enumerate(log.foot_names)}
        vo_k = None
        if vo_vals is not None and vo_valid[k]:
            vo_k = vo_vals[k]
        yield TickInputs(
            time=float(log.tick_t[k]), accel=log.imu_accel[k],
            gyro=float(log.imu_gyro[k]), joint_pos=log.enc_pos[k],
            joint_vel=log.enc_vel[k], effort=log.effort[k],
            contacts=contacts, rotation=rot2(pitch[k]), vo=vo_k)


def run_mhe(log, model: RobotModel, config: MheConfig = None,
            initial_state: EstimatorState = None, initial_information=None,
            use_vo: bool = True, orientation_config=None) -> EstimateTrace:
    """Run the estimator over a sensor log."""
    cfg = config if config is not None else MheConfig()
    est = MovingHorizonEstimator(model, cfg, initial_state=initial_state,
                                 initial_information=initial_information)
    outputs = [est.step(inputs) for inputs in
               iter_tick_inputs(log, use_vo=use_vo,
                                orientation_config=orientation_config)]
    return EstimateTrace.from_outputs(model, outputs)
