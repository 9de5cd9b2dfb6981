"""Time-stepping simulation of the planar biped and noisy sensor synthesis.

The simulator integrates the full rigid-body dynamics against a compliant
ground (normal spring-damper, stick-slip tangential spring capped by a
Coulomb cone) and records ground-truth states, contact flags and ground
reaction forces.  A joint-space gait controller produces standing and
walking data.  synthesize_sensors turns a truth trace into the noisy IMU,
encoder, effort, contact-switch and visual-odometry streams the estimators
consume.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import (
    compute_dynamics_terms,
    compute_foot_kinematics,
    kinetic_energy,
    potential_energy,
)
from .model import GeneralizedState, RobotModel, rot2


class SimulationFault(RuntimeError):
    """Raised when the integration produces non-finite or exploding state."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time:.4f} s")
        self.time = time


@dataclass
class ContactParams:
    # spring rates and damping kept inside the explicit-integration
    # stability bounds dt*sqrt(k*(J M^-1 J')_ii) < 2 and
    # dt * c * (J M^-1 J')_ii < 2 for the lightest foot direction
    stiffness: float = 1e5           # N/m, normal spring
    damping: float = 300.0           # N s/m, normal
    tangent_stiffness: float = 1e5   # N/m, stick-slip anchor spring
    tangent_damping: float = 150.0   # N s/m, tangential
    friction: float = 0.7            # Coulomb cone on the tangential force
    contact_threshold: float = 2.0   # N, pressure-switch level for the flag
    ground_height: float = 0.0


@dataclass
class SimState:
    time: float
    state: GeneralizedState
    contact_flags: dict
    grf_truth: dict      # per foot, zeroed below the contact threshold
    torques: np.ndarray
    # tangential anchor x per foot as of *before* this state's contact
    # evaluation, so grf_truth is a pure function of (state, anchors)
    contact_anchors: dict = None


def _contact_forces(model, state, params, anchors):
    """Per-foot applied force, recorded force, contact flag, new anchors.

    The tangential force is a spring from the touchdown anchor point plus
    viscous damping, saturated by the Coulomb cone; on saturation the
    anchor slips so the spring keeps holding the cone-edge force.
    """
    applied, recorded, flags, new_anchors = {}, {}, {}, {}
    R = rot2(state.pitch)
    for foot in model.foot_ids:
        kin = compute_foot_kinematics(model, state, foot)
        pos = state.base_pos + R @ kin.fk
        depth = params.ground_height - pos[1]
        force = np.zeros(2)
        new_anchors[foot] = None
        if depth > 0.0:
            fz = params.stiffness * depth - params.damping * kin.v_foot[1]
            fz = max(fz, 0.0)
            anchor = anchors.get(foot)
            if anchor is None:
                anchor = float(pos[0])
            ft = -params.tangent_stiffness * (pos[0] - anchor) \
                - params.tangent_damping * kin.v_foot[0]
            cap = params.friction * fz
            if abs(ft) > cap:
                ft = np.sign(ft) * cap
                anchor = float(pos[0] + (ft + params.tangent_damping
                                         * kin.v_foot[0])
                               / params.tangent_stiffness)
            force = np.array([ft, fz])
            new_anchors[foot] = anchor
        flag = bool(force[1] > params.contact_threshold)
        applied[foot] = force
        flags[foot] = flag
        recorded[foot] = force.copy() if flag else np.zeros(2)
    return applied, recorded, flags, new_anchors


def make_sim_state(model, state, time=0.0, contact=None, torques=None,
                   anchors=None) -> SimState:
    params = contact if contact is not None else ContactParams()
    anchors = dict(anchors) if anchors is not None else {}
    _, recorded, flags, _ = _contact_forces(model, state, params, anchors)
    if torques is None:
        torques = np.zeros(model.n_joints)
    return SimState(time=time, state=state.copy(), contact_flags=flags,
                    grf_truth=recorded, torques=np.asarray(torques, float),
                    contact_anchors=anchors)


def step(model, sim_state, torques, dt, contact=None) -> SimState:
    """Advance one step: second-order position update, first-order velocity."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    params = contact if contact is not None else ContactParams()
    st = sim_state.state
    anchors = sim_state.contact_anchors or {}
    torques = np.asarray(torques, dtype=float)
    terms = compute_dynamics_terms(model, st)
    applied, _, _, new_anchors = _contact_forces(model, st, params, anchors)
    rhs = model.actuation_map @ torques - terms.C @ st.qdot - terms.G
    for foot, force in applied.items():
        if force[1] > 0.0:
            J = compute_foot_kinematics(model, st, foot).J_i
            rhs = rhs + J.T @ force
    qddot = np.linalg.solve(terms.M, rhs)
    qdot_new = st.qdot + dt * qddot
    q_new = st.q + dt * st.qdot + 0.5 * dt * dt * qddot
    t_new = sim_state.time + dt
    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(qdot_new))):
        raise SimulationFault("non-finite state", t_new)
    if np.abs(qdot_new).max() > 1e4:
        raise SimulationFault("velocity divergence", t_new)
    new_state = GeneralizedState(q_new, qdot_new)
    _, recorded, flags, _ = _contact_forces(model, new_state, params,
                                            new_anchors)
    return SimState(time=t_new, state=new_state, contact_flags=flags,
                    grf_truth=recorded, torques=torques.copy(),
                    contact_anchors=new_anchors)


def mechanical_energy(model, sim_state, contact=None) -> float:
    """Kinetic + gravitational + ground-spring energy of the current state."""
    params = contact if contact is not None else ContactParams()
    st = sim_state.state
    anchors = sim_state.contact_anchors or {}
    energy = kinetic_energy(model, st) + potential_energy(model, st)
    R = rot2(st.pitch)
    for foot in model.foot_ids:
        kin = compute_foot_kinematics(model, st, foot)
        pos = st.base_pos + R @ kin.fk
        depth = params.ground_height - pos[1]
        if depth > 0.0:
            energy += 0.5 * params.stiffness * depth ** 2
            anchor = anchors.get(foot)
            if anchor is not None:
                energy += 0.5 * params.tangent_stiffness \
                    * (pos[0] - anchor) ** 2
    return energy


# --- gait generation -------------------------------------------------------

@dataclass
class GaitParams:
    period: float = 0.45         # s, full cycle (one step per leg)
    step_length: float = 0.06    # m, stride per step at nominal speed
    base_height: float = 0.36    # m, nominal virtual leg length
    clearance: float = 0.05      # m, swing-leg retraction
    stance_spread: float = 0.05  # m, standing fore/aft foot split
    kp: float = 120.0            # N m/rad joint PD
    kd: float = 4.0
    pitch_kp: float = 60.0       # N m/rad stance-hip torso servo
    pitch_kd: float = 8.0
    speed_gain: float = 0.5      # rad per m/s touchdown-angle feedback
    torque_limit: float = 30.0   # N m saturation
    ramp_time: float = 0.5       # s, speed-target ramp from standstill
    amplitude: float = 1.0       # 0 = stand at the reference posture

    @property
    def nominal_speed(self) -> float:
        """Average forward speed: two steps per cycle."""
        return self.amplitude * 2.0 * self.step_length / self.period


def leg_ik(l1, l2, tx, tz):
    """Two-link inverse kinematics, knee-behind branch; target rel. hip."""
    r = float(np.hypot(tx, tz))
    r = min(max(r, abs(l1 - l2) + 1e-6), l1 + l2 - 1e-6)
    phi = np.arctan2(tx, -tz)
    cos_gamma = (l1 * l1 + l2 * l2 - r * r) / (2.0 * l1 * l2)
    gamma = np.arccos(np.clip(cos_gamma, -1.0, 1.0))
    cos_beta = (l1 * l1 + r * r - l2 * l2) / (2.0 * l1 * r)
    beta = np.arccos(np.clip(cos_beta, -1.0, 1.0))
    a1 = phi + beta
    a2 = gamma - np.pi
    return float(a1), float(a2)


def gait_phases(model, gait, t):
    """Per-leg stance flag and in-step phase; legs alternate step by step.

    The rear standing foot takes the first step's stance so the initial
    topple is forward.
    """
    half = gait.period / 2.0
    k = int(np.floor(t / half))
    u = t / half - k
    stance_leg = model.legs[(k + 1) % 2].name
    stance = {leg.name: leg.name == stance_leg for leg in model.legs}
    return u, stance


def gait_reference(model, gait, t):
    """World-aligned standing foot targets (relative to base) and flags."""
    targets, stance = {}, {}
    for idx, leg in enumerate(model.legs):
        spread = gait.stance_spread if idx == 0 else -gait.stance_spread
        targets[leg.name] = np.array([spread, -gait.base_height])
        stance[leg.name] = True
    return targets, stance


def _ik_joint_targets(model, foot_targets, pitch):
    """IK joint references; targets are gravity-aligned, so counter-rotate."""
    Rt = rot2(pitch).T
    out = np.zeros(model.n_joints)
    for leg in model.legs:
        rel = Rt @ foot_targets[leg.name] - np.asarray(leg.hip_offset)
        l1, l2 = leg.links[0].length, leg.links[1].length
        a1, a2 = leg_ik(l1, l2, rel[0], rel[1])
        sl = model.joint_slice(leg.name)
        out[sl.start] = a1
        out[sl.start + 1] = a2
    return out


def _leg_angles(leg, length, phi_world, pitch):
    """Joint targets for a virtual leg of given length and world angle."""
    l1, l2 = leg.links[0].length, leg.links[1].length
    r = min(max(length, abs(l1 - l2) + 1e-6), l1 + l2 - 1e-6)
    cos_gamma = (l1 * l1 + l2 * l2 - r * r) / (2.0 * l1 * l2)
    gamma = np.arccos(np.clip(cos_gamma, -1.0, 1.0))
    cos_beta = (l1 * l1 + r * r - l2 * l2) / (2.0 * l1 * r)
    beta = np.arccos(np.clip(cos_beta, -1.0, 1.0))
    return float(phi_world - pitch + beta), float(gamma - np.pi)


def _virtual_leg(model, state, leg):
    """Current length and world angle of the hip-to-foot virtual leg."""
    kin = compute_foot_kinematics(model, state, leg.name)
    rel = kin.fk - np.asarray(leg.hip_offset)
    r = float(np.hypot(rel[0], rel[1]))
    phi = float(np.arctan2(rel[0], -rel[1]) + state.pitch)
    return r, phi


def _swing_profile(gait, u, phi_mirror, phi_td):
    """Virtual-leg angle and length along the swing.

    Early swing mirrors the stance leg (so the legs scissor symmetrically),
    blending into the touchdown angle by 85 % of the step with the leg
    re-extended.
    """
    s = min(u / 0.85, 1.0)
    sigma = 0.5 * (1.0 - np.cos(np.pi * s))
    phi = (1.0 - sigma) * phi_mirror + sigma * phi_td
    length = gait.base_height - gait.clearance * np.sin(np.pi * s)
    return phi, length


def gait_controller(model, sim_state, gait, t) -> np.ndarray:
    """Joint PD on the gait targets.

    Standing (zero amplitude): IK posture PD with the torso-pitch servo
    shared by both hips.  Walking: alternating time-scheduled steps; the
    stance hip runs the torso-pitch servo, the stance knee holds the
    virtual leg length, and the swing leg tracks a retract-and-reach arc
    toward a touchdown angle with velocity feedback (forward progress
    itself is the unactuated vaulting motion over the stance foot).
    """
    st = sim_state.state
    pitch_u = gait.pitch_kp * st.pitch + gait.pitch_kd * st.pitch_rate
    if gait.amplitude == 0.0:
        foot_targets, _ = gait_reference(model, gait, t)
        targets = _ik_joint_targets(model, foot_targets, st.pitch)
        u = gait.kp * (targets - st.joint_angles) - gait.kd * st.joint_rates
        for leg in model.legs:
            u[model.joint_slice(leg.name).start] += pitch_u / len(model.legs)
        return np.clip(u, -gait.torque_limit, gait.torque_limit)

    phase, stance = gait_phases(model, gait, t)
    v_des = gait.nominal_speed
    if gait.ramp_time > 0.0:
        v_des *= min(t / gait.ramp_time, 1.0)
    r0 = gait.base_height
    # neutral touchdown angle scales with speed (symmetric vault) plus a
    # capture-style correction on the speed error
    v = st.qdot[0]
    phi_td = 0.25 * v * gait.period / r0 \
        + gait.speed_gain * (v - v_des)
    phi_td = float(np.clip(phi_td, -0.45, 0.45))
    stance_leg = next(leg for leg in model.legs if stance[leg.name])
    _, phi_st = _virtual_leg(model, st, stance_leg)

    u = np.zeros(model.n_joints)
    dt_ref = 1e-3
    for leg in model.legs:
        sl = model.joint_slice(leg.name)
        if stance[leg.name]:
            # hip: torso servo; knee: hold the virtual leg length
            _, a2_ref = _leg_angles(leg, r0, 0.0, st.pitch)
            u[sl.start] = pitch_u
            u[sl.start + 1] = gait.kp * (a2_ref - st.joint_angles[sl][1]) \
                - gait.kd * st.joint_rates[sl][1]
        else:
            phi, length = _swing_profile(gait, phase, -phi_st, phi_td)
            phi_p, length_p = _swing_profile(gait, max(phase - dt_ref
                                                       / (gait.period / 2.0),
                                                       0.0),
                                             -phi_st, phi_td)
            ref = np.array(_leg_angles(leg, length, phi, st.pitch))
            prev = np.array(_leg_angles(leg, length_p, phi_p, st.pitch))
            rates = (ref - prev) / dt_ref
            u[sl] = gait.kp * (ref - st.joint_angles[sl]) + \
                gait.kd * (rates - st.joint_rates[sl])
    return np.clip(u, -gait.torque_limit, gait.torque_limit)


def standing_posture(model, gait=None) -> GeneralizedState:
    """Static reference configuration with feet on the ground."""
    gait = gait if gait is not None else GaitParams(amplitude=0.0)
    ref = replace(gait, amplitude=0.0)
    foot_targets, _ = gait_reference(model, ref, 0.0)
    targets = _ik_joint_targets(model, foot_targets, 0.0)
    q = np.concatenate([[0.0, ref.base_height, 0.0], targets])
    return GeneralizedState(q, np.zeros(model.n_coords))


def run_simulation(model, duration, gait=None, dt=5e-4, contact=None,
                   initial=None, controller=None) -> list:
    """Closed-loop simulation; returns the SimState trace including t=0."""
    gait = gait if gait is not None else GaitParams()
    params = contact if contact is not None else ContactParams()
    if controller is None:
        controller = gait_controller
    if initial is None:
        initial = standing_posture(model, gait)
    current = make_sim_state(model, initial, 0.0, params)
    n_steps = int(round(duration / dt))
    trace = []
    for _ in range(n_steps):
        u = controller(model, current, gait, current.time)
        trace.append(replace(current, torques=np.asarray(u, float)))
        current = step(model, current, u, dt, params)
    trace.append(current)
    return trace


# --- sensor synthesis ------------------------------------------------------

@dataclass
class NoiseConfig:
    accel_std: float = 0.04        # m/s^2
    gyro_std: float = 0.002        # rad/s
    encoder_vel_std: float = 0.02  # rad/s
    encoder_pos_std: float = 0.01  # rad
    effort_std: float = 0.01       # N m
    vo_trans_std: float = 0.002    # m per increment
    vo_rot_std: float = 0.001      # rad per increment
    accel_bias: float = 0.05       # m/s^2, constant per-axis offset
    accel_bias_walk_std: float = 0.0  # m/s^2 sqrt(s)
    seed: int = 0

    def __post_init__(self):
        for name in ("accel_std", "gyro_std", "encoder_vel_std",
                     "encoder_pos_std", "effort_std", "vo_trans_std",
                     "vo_rot_std", "accel_bias_walk_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class SensorLog:
    tick_t: np.ndarray         # estimator clock
    imu_accel: np.ndarray      # (K, 2) body-frame specific force
    imu_gyro: np.ndarray       # (K,)
    enc_pos: np.ndarray        # (K, n)
    enc_vel: np.ndarray        # (K, n)
    effort: np.ndarray         # (K, n)
    contact_flags: np.ndarray  # (K, F) bool
    vo_ti: np.ndarray          # (Kv,)
    vo_tj: np.ndarray
    vo_dp: np.ndarray          # (Kv, 2) body-frame translation increment
    vo_dth: np.ndarray         # (Kv,)
    truth_t: np.ndarray        # full simulation rate
    truth_q: np.ndarray
    truth_qd: np.ndarray
    truth_grf: np.ndarray      # (M, F, 2)
    truth_flags: np.ndarray    # (M, F) bool
    truth_torque: np.ndarray   # (M, n)
    foot_names: tuple

    @property
    def n_ticks(self):
        return self.tick_t.size


def synthesize_sensors(truth_trace, model, noise=None,
                       rates=(200, 50)) -> SensorLog:
    """Sample a truth trace into noisy sensor streams at the estimator rates."""
    noise = noise if noise is not None else NoiseConfig()
    imu_hz, vo_hz = rates
    dt_sim = truth_trace[1].time - truth_trace[0].time
    sim_hz = round(1.0 / dt_sim)
    if abs(sim_hz * dt_sim - 1.0) > 1e-9 or sim_hz % imu_hz or \
            sim_hz % vo_hz or imu_hz % vo_hz:
        raise ValueError(f"rates {rates} must divide the simulation rate "
                         f"{sim_hz}")
    stride = sim_hz // imu_hz
    n = model.n_joints
    feet = model.foot_ids
    n_feet = len(feet)
    m_samples = len(truth_trace)

    truth_t = np.array([s.time for s in truth_trace])
    truth_q = np.array([s.state.q for s in truth_trace])
    truth_qd = np.array([s.state.qdot for s in truth_trace])
    truth_grf = np.array([[s.grf_truth[f] for f in feet]
                          for s in truth_trace])
    truth_flags = np.array([[s.contact_flags[f] for f in feet]
                            for s in truth_trace])
    truth_torque = np.array([s.torques for s in truth_trace])

    tick_idx = np.arange(0, m_samples - stride, stride)
    k = tick_idx.size
    dt_tick = stride * dt_sim
    rng = np.random.default_rng(noise.seed)

    bias = np.full((k, 2), noise.accel_bias)
    if noise.accel_bias_walk_std > 0.0:
        steps = rng.normal(size=(k, 2)) * noise.accel_bias_walk_std * \
            np.sqrt(dt_tick)
        steps[0] = 0.0
        bias = bias + np.cumsum(steps, axis=0)

    g_vec = np.array([0.0, -model.gravity])
    # velocity increment over the tick, i.e. an anti-aliased delta-v output;
    # an instantaneous sample would alias the contact-spring transients
    accel_w = (truth_qd[tick_idx + stride, :2] - truth_qd[tick_idx, :2]) \
        / dt_tick
    imu_accel = np.empty((k, 2))
    for row, idx in enumerate(tick_idx):
        R = rot2(truth_q[idx, 2])
        imu_accel[row] = R.T @ (accel_w[row] - g_vec)
    imu_accel += bias + noise.accel_std * rng.normal(size=(k, 2))
    imu_gyro = truth_qd[tick_idx, 2] + noise.gyro_std * rng.normal(size=k)
    enc_pos = truth_q[tick_idx, 3:] + noise.encoder_pos_std * \
        rng.normal(size=(k, n))
    enc_vel = truth_qd[tick_idx, 3:] + noise.encoder_vel_std * \
        rng.normal(size=(k, n))
    effort = truth_torque[tick_idx] + noise.effort_std * \
        rng.normal(size=(k, n))
    contact = truth_flags[tick_idx]

    ticks_per_vo = imu_hz // vo_hz
    vo_epochs = tick_idx[::ticks_per_vo]
    vo_ti, vo_tj, vo_dp, vo_dth = [], [], [], []
    for a, b in zip(vo_epochs[:-1], vo_epochs[1:]):
        R_i = rot2(truth_q[a, 2])
        dp = R_i.T @ (truth_q[b, :2] - truth_q[a, :2]) + \
            noise.vo_trans_std * rng.normal(size=2)
        dth = truth_q[b, 2] - truth_q[a, 2] + \
            noise.vo_rot_std * rng.normal()
        vo_ti.append(truth_t[a])
        vo_tj.append(truth_t[b])
        vo_dp.append(dp)
        vo_dth.append(dth)

    return SensorLog(
        tick_t=truth_t[tick_idx], imu_accel=imu_accel, imu_gyro=imu_gyro,
        enc_pos=enc_pos, enc_vel=enc_vel, effort=effort,
        contact_flags=contact,
        vo_ti=np.array(vo_ti), vo_tj=np.array(vo_tj),
        vo_dp=np.array(vo_dp).reshape(-1, 2), vo_dth=np.array(vo_dth),
        truth_t=truth_t, truth_q=truth_q, truth_qd=truth_qd,
        truth_grf=truth_grf, truth_flags=truth_flags,
        truth_torque=truth_torque, foot_names=tuple(feet))
