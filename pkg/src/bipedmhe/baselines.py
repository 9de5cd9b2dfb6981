"""Reference estimators for the benchmark comparison.

Two baselines: a disturbance Kalman filter (DKF) that augments the state
with the foot forces as random-walk disturbances, and a momentum-based
observer (MBO) that integrates the generalized-momentum dynamics and reads
external forces off the residual.

The DKF is deliberately the same code path as the window-1 unconstrained
moving-horizon estimator (solve = measurement update, marginalize =
prediction), wrapped to expose a covariance; the equivalence is structural
rather than numerical coincidence.  The MBO consumes ground-truth base
velocity, the idealization used in the comparison it reproduces.
"""

import time as _time
from dataclasses import dataclass

import numpy as np

from .dynamics import (compute_foot_kinematics, generalized_momentum,
                       momentum_rate)
from .mhe import (EstimateTrace, EstimatorState, MheConfig,
                  MovingHorizonEstimator, NoiseModel, build_window_qp,
                  run_mhe)
from .model import GeneralizedState, RobotModel


# --------------------------------------------------------------------------
# disturbance Kalman filter


@dataclass
class DkfState:
    """Posterior estimate and covariance after one filter step."""

    time: float
    state: EstimatorState
    covariance: np.ndarray
    clamped: bool = False        # eigenvalue floor applied to the covariance
    degraded: bool = False       # underlying solve failed; estimate coasted

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be square")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-8 * max(
                1.0, np.abs(cov).max())):
            raise ValueError("covariance must be symmetric")
        self.covariance = cov


class DisturbanceKalmanFilter:
    """Kalman filter with foot forces carried as random-walk disturbances.

    Implemented as an unconstrained moving-horizon estimator with a window
    of one tick; the information-form solve and Schur-complement
    marginalization then reduce exactly to the measurement update and
    prediction of a Kalman filter.  The posterior covariance is the inverse
    of the solved window's Hessian.
    """

    def __init__(self, model: RobotModel, noise: NoiseModel = None,
                 initial_state=None, initial_information=None,
                 solver=None):
        kwargs = {"window_size": 1, "constraints": False,
                  "noise": noise if noise is not None else NoiseModel()}
        if solver is not None:
            kwargs["solver"] = solver
        config = MheConfig(**kwargs)
        self.model = model
        self.config = config
        self._mhe = MovingHorizonEstimator(
            model, config, initial_state=initial_state,
            initial_information=initial_information)
        self.last_output = None

    def step(self, inputs) -> DkfState:
        out = self._mhe.step(inputs)
        self.last_output = out
        # posterior information of the single-tick window is its Hessian
        problem = build_window_qp(self._mhe.buffer, self._mhe.arrival,
                                  self.config.noise, self.model,
                                  constraints=False)
        info = problem.H.toarray()
        cov = np.linalg.inv(info)
        cov = 0.5 * (cov + cov.T)
        clamped = False
        eigval, eigvec = np.linalg.eigh(cov)
        if eigval.min() < 1e-12:
            eigval = np.maximum(eigval, 1e-12)
            cov = (eigvec * eigval) @ eigvec.T
            clamped = True
        return DkfState(time=out.time, state=out.state, covariance=cov,
                        clamped=clamped, degraded=out.degraded)


def run_dkf(log, model: RobotModel, noise: NoiseModel = None,
            initial_state=None, initial_information=None,
            orientation_config=None) -> EstimateTrace:
    """Run the disturbance Kalman filter over a sensor log."""
    config = MheConfig(window_size=1, constraints=False,
                       noise=noise if noise is not None else NoiseModel())
    return run_mhe(log, model, config=config, initial_state=initial_state,
                   initial_information=initial_information, use_vo=False,
                   orientation_config=orientation_config)


# --------------------------------------------------------------------------
# momentum-based observer


@dataclass
class MboState:
    """First-order residual observer on the generalized momentum."""

    gain: np.ndarray             # (n_coords,) diagonal of K_O, 1/s
    residual: np.ndarray         # (n_coords,) external generalized force
    integral: np.ndarray         # running integral of the momentum rate
    m0: np.ndarray = None        # momentum at observer start

    def __post_init__(self):
        self.gain = np.asarray(self.gain, dtype=float)
        if np.any(self.gain <= 0.0) or not np.all(np.isfinite(self.gain)):
            raise ValueError("observer gain must be positive")


def make_mbo(model: RobotModel, gain=50.0) -> MboState:
    n = model.n_coords
    return MboState(gain=np.broadcast_to(np.asarray(gain, float), n).copy(),
                    residual=np.zeros(n), integral=np.zeros(n))


def mbo_step(mbo: MboState, model: RobotModel, state: GeneralizedState,
             torques, dt: float, contacts) -> tuple:
    """Advance the observer one step and extract per-foot forces.

    r = K_O (m(t) - int_0^t (C1' v + C2' [omega; alphadot] - G + B u + r)
    - m(0)); forces are recovered from r by least squares on the stacked
    stance-foot jacobian transpose.  Swing feet report zero force; with no
    stance feet the residual still propagates.
    """
    m = generalized_momentum(model, state)
    if mbo.m0 is None:
        mbo.m0 = m.copy()
    residual = mbo.gain * (m - mbo.integral - mbo.m0)
    rate = momentum_rate(model, state,
                         (state.pitch_rate, state.joint_rates),
                         np.asarray(torques, dtype=float), {})
    out = MboState(gain=mbo.gain, residual=residual,
                   integral=mbo.integral + dt * (rate + residual),
                   m0=mbo.m0)

    forces = {foot: np.zeros(2) for foot in model.foot_ids}
    stance = [foot for foot in model.foot_ids if contacts.get(foot, False)]
    if stance:
        jt = np.hstack([compute_foot_kinematics(model, state, foot).J_i.T
                        for foot in stance])
        f, *_ = np.linalg.lstsq(jt, residual, rcond=None)
        for i, foot in enumerate(stance):
            forces[foot] = f[2 * i:2 * i + 2]
    return out, forces


def run_mbo(log, model: RobotModel, gain=50.0) -> EstimateTrace:
    """Run the momentum observer over a log, using ground-truth base state.

    Base pose and rates come from the recorded truth (the idealization the
    comparison grants this baseline); joint angles and rates come from the
    encoders.
    """
    n_ticks = log.n_ticks
    dt_truth = log.truth_t[1] - log.truth_t[0]
    dt_tick = log.tick_t[1] - log.tick_t[0]
    stride = int(round(dt_tick / dt_truth))
    feet = list(log.foot_names)

    mbo = make_mbo(model, gain)
    momentum = np.zeros((n_ticks, model.n_coords))
    forces = np.zeros((n_ticks, len(feet), 2))
    solve_time = np.zeros(n_ticks)
    for k in range(n_ticks):
        t0 = _time.perf_counter()
        i = k * stride
        q = np.concatenate([log.truth_q[i, :3], log.enc_pos[k]])
        qd = np.concatenate([log.truth_qd[i, :3], log.enc_vel[k]])
        state = GeneralizedState(q=q, qdot=qd)
        contacts = {f: bool(log.contact_flags[k, j])
                    for j, f in enumerate(feet)}
        momentum[k] = generalized_momentum(model, state)
        mbo, f_hat = mbo_step(mbo, model, state, log.effort[k], dt_tick,
                              contacts)
        for j, foot in enumerate(feet):
            forces[k, j] = f_hat[foot]
        solve_time[k] = _time.perf_counter() - t0

    truth_idx = np.arange(n_ticks) * stride
    return EstimateTrace(
        t=log.tick_t[:n_ticks].copy(),
        position=log.truth_q[truth_idx, 0:2].copy(),
        velocity=log.truth_qd[truth_idx, 0:2].copy(),
        accel_bias=np.zeros((n_ticks, 2)),
        momentum=momentum,
        forces=forces,
        foot_names=tuple(feet),
        status=["solved"] * n_ticks,
        iterations=np.zeros(n_ticks, dtype=int),
        solve_time=solve_time,
        degraded=np.zeros(n_ticks, dtype=bool))
