"""Standalone pitch estimator feeding the downstream state estimators.

A two-state extended Kalman filter (pitch, gyro bias) integrates the gyro
and corrects with the accelerometer gravity direction whenever the
specific-force magnitude passes a quasi-static gate, plus optionally with
visual-odometry rotation increments anchored at the previous camera epoch.
Downstream models only consume the resulting planar rotation, so a richer
attitude filter can be swapped in without touching them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    return float(np.mod(angle - np.pi, -2.0 * np.pi) + np.pi)


@dataclass
class OrientationConfig:
    gyro_std: float = 0.002        # rad/s per sample
    gyro_bias_walk_std: float = 1e-4  # rad/s sqrt(s)
    # tilt-from-gravity noise, blended from the quasi-static value to the
    # locomotion value as the gyro activity rises: base acceleration
    # corrupts the gravity direction whenever the robot is moving
    accel_tilt_std: float = 0.03   # rad, quasi-static
    accel_tilt_std_dynamic: float = 1.5  # rad, in motion
    activity_ref: float = 0.1      # rad/s of smoothed |rate| for full blend
    activity_tau: float = 0.05     # s, smoothing horizon of the activity
    vo_rot_std: float = 0.001      # rad per increment
    gravity: float = 9.81
    gate_low: float = 0.8          # accel gate, fractions of g
    gate_high: float = 1.2


@dataclass
class OrientationEstimate:
    pitch: float = 0.0
    pitch_rate_bias: float = 0.0
    covariance: np.ndarray = field(
        default_factory=lambda: np.diag([1e-2, 1e-4]))
    accel_rejected: bool = False   # diagnostic: last accel sample gated out
    vo_anchor: tuple = None        # (pitch, variance) at the last VO epoch
    rate_activity: float = 0.0     # smoothed |bias-corrected gyro|, rad/s

    def __post_init__(self):
        self.covariance = np.asarray(self.covariance, dtype=float)
        if self.covariance.shape != (2, 2):
            raise ValueError("covariance must be 2x2")

    @property
    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.pitch), np.sin(self.pitch)
        return np.array([[c, -s], [s, c]])


def orientation_predict(est, gyro, dt, config=None) -> OrientationEstimate:
    """Integrate the bias-corrected gyro and inflate the covariance."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    cfg = config if config is not None else OrientationConfig()
    rate = float(gyro) - est.pitch_rate_bias
    pitch = wrap_angle(est.pitch + rate * dt)
    F = np.array([[1.0, -dt], [0.0, 1.0]])
    Q = np.diag([(cfg.gyro_std * dt) ** 2,
                 cfg.gyro_bias_walk_std ** 2 * dt])
    P = F @ est.covariance @ F.T + Q
    beta = min(dt / cfg.activity_tau, 1.0)
    activity = (1.0 - beta) * est.rate_activity + beta * abs(rate)
    return replace(est, pitch=pitch, covariance=0.5 * (P + P.T),
                   rate_activity=activity)


def _scalar_update(pitch, bias, P, innovation, r):
    H = np.array([1.0, 0.0])
    S = float(H @ P @ H) + r
    K = P @ H / S
    pitch = wrap_angle(pitch + K[0] * innovation)
    bias = bias + K[1] * innovation
    IKH = np.eye(2) - np.outer(K, H)
    P = IKH @ P @ IKH.T + r * np.outer(K, K)
    return pitch, bias, 0.5 * (P + P.T)


def orientation_correct(est, accel, vo_rotation_increment=None,
                        config=None) -> OrientationEstimate:
    """Fuse the accelerometer gravity direction and/or a VO rotation.

    The accel update applies only when the specific-force magnitude is
    close to g (quasi-static gate); a gated-out sample sets the
    accel_rejected diagnostic and leaves the state untouched.  A VO
    increment measures pitch relative to the estimate stored at the
    previous camera epoch.
    """
    cfg = config if config is not None else OrientationConfig()
    pitch, bias = est.pitch, est.pitch_rate_bias
    P = est.covariance.copy()
    rejected = False

    if accel is not None:
        accel = np.asarray(accel, dtype=float)
        norm = float(np.linalg.norm(accel))
        if cfg.gate_low * cfg.gravity <= norm <= cfg.gate_high * cfg.gravity:
            z = np.arctan2(accel[0], accel[1])
            blend = min(est.rate_activity / cfg.activity_ref, 1.0)
            std = cfg.accel_tilt_std + blend * (cfg.accel_tilt_std_dynamic
                                                - cfg.accel_tilt_std)
            pitch, bias, P = _scalar_update(
                pitch, bias, P, wrap_angle(z - pitch), std ** 2)
        else:
            rejected = True

    anchor = est.vo_anchor
    if vo_rotation_increment is not None:
        if anchor is not None:
            z = anchor[0] + float(vo_rotation_increment)
            r = cfg.vo_rot_std ** 2 + anchor[1]
            pitch, bias, P = _scalar_update(pitch, bias, P,
                                            wrap_angle(z - pitch), r)
        anchor = (pitch, float(P[0, 0]))

    return replace(est, pitch=pitch, pitch_rate_bias=bias, covariance=P,
                   accel_rejected=rejected, vo_anchor=anchor)


def run_orientation_filter(log, config=None, initial=None,
                           use_vo=True) -> dict:
    """Filter a sensor log tick by tick; returns per-tick estimate arrays.

    The gyro is integrated trapezoidally between ticks; the accelerometer
    corrects every tick, VO rotation increments at their arrival epochs.
    """
    cfg = config if config is not None else OrientationConfig()
    est = initial if initial is not None else OrientationEstimate()
    if est.rate_activity == 0.0:
        # start pessimistic: the accel earns trust once the gyro is quiet
        est = replace(est, rate_activity=cfg.activity_ref)
    k = log.n_ticks
    pitch = np.empty(k)
    bias = np.empty(k)
    var = np.empty(k)
    gated = np.zeros(k, dtype=bool)

    vo_at = {}
    if use_vo and log.vo_tj.size:
        vo_at = {float(tj): float(dth)
                 for tj, dth in zip(log.vo_tj, log.vo_dth)}
        est = replace(est, vo_anchor=(est.pitch,
                                      float(est.covariance[0, 0])))

    for i in range(k):
        if i:
            dt = log.tick_t[i] - log.tick_t[i - 1]
            gyro = 0.5 * (log.imu_gyro[i - 1] + log.imu_gyro[i])
            est = orientation_predict(est, gyro, dt, cfg)
        dth = vo_at.get(float(log.tick_t[i])) if vo_at else None
        est = orientation_correct(est, log.imu_accel[i], dth, cfg)
        pitch[i] = est.pitch
        bias[i] = est.pitch_rate_bias
        var[i] = est.covariance[0, 0]
        gated[i] = est.accel_rejected
    return {"t": log.tick_t.copy(), "pitch": pitch, "bias": bias,
            "pitch_var": var, "accel_rejected": gated, "final": est}
