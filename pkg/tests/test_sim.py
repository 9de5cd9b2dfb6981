import numpy as np
import pytest

from bipedmhe.dynamics import generalized_momentum, momentum_rate
from bipedmhe.model import GeneralizedState, default_model, rot2
from bipedmhe.sim import (
    ContactParams,
    GaitParams,
    NoiseConfig,
    SimState,
    SimulationFault,
    gait_phases,
    leg_ik,
    make_sim_state,
    mechanical_energy,
    run_simulation,
    standing_posture,
    step,
    synthesize_sensors,
)


def passive(model, sim_state, gait, t):
    return np.zeros(model.n_joints)


def zero_noise(**kw):
    base = dict(accel_std=0, gyro_std=0, encoder_vel_std=0,
                encoder_pos_std=0, effort_std=0, vo_trans_std=0,
                vo_rot_std=0, accel_bias=0.0)
    base.update(kw)
    return NoiseConfig(**base)


@pytest.fixture(scope="module")
def stand_trace(biped):
    return run_simulation(biped, 5.0, gait=GaitParams(amplitude=0.0))


@pytest.fixture(scope="module")
def walk_trace(biped):
    return run_simulation(biped, 10.0)


# --- integrator -------------------------------------------------------------

def test_ballistic_parabola(biped):
    q0 = standing_posture(biped).q.copy()
    q0[1] = 1.0  # feet well above the ground
    qd0 = np.zeros_like(q0)
    qd0[0], qd0[1] = 0.3, 0.5
    init = GeneralizedState(q0, qd0)
    trace = run_simulation(biped, 0.2, dt=2e-3, initial=init,
                           controller=passive)
    for s in trace:
        t = s.time
        assert abs(s.state.q[0] - (q0[0] + 0.3 * t)) < 1e-6
        assert abs(s.state.q[1] - (q0[1] + 0.5 * t
                                   - 0.5 * biped.gravity * t * t)) < 1e-6
        assert not any(s.contact_flags.values())
        assert all(np.all(f == 0.0) for f in s.grf_truth.values())


def test_static_weight_support(biped, stand_trace):
    late = [s for s in stand_trace if s.time >= 0.5]
    total_fz = np.array([sum(s.grf_truth[f][1] for f in biped.foot_ids)
                         for s in late])
    weight = biped.total_mass * biped.gravity
    assert abs(total_fz.mean() - weight) < 0.01 * weight
    for s in late:
        assert all(s.contact_flags.values())


def test_drop_energy_audit(biped):
    init = standing_posture(biped)
    init.q[1] += 0.05
    trace = run_simulation(biped, 1.0, initial=init, controller=passive)
    E = np.array([mechanical_energy(biped, s) for s in trace])
    touch = next(i for i, s in enumerate(trace)
                 if any(s.contact_flags.values()))
    # conservative flight, then never above the touchdown level
    assert np.abs(np.diff(E[:touch])).max() < 1e-9
    assert (E[touch:] - E[touch]).max() < 1e-2
    # dissipative at the contact-transient time scale (50 ms) and overall
    coarse = E[touch::100]
    assert np.diff(coarse).max() < 5e-3
    assert E[touch] - E[-1] > 10.0


def test_step_rejects_bad_dt(biped):
    ss = make_sim_state(biped, standing_posture(biped))
    with pytest.raises(ValueError):
        step(biped, ss, np.zeros(biped.n_joints), 0.0)


def test_divergence_raises_fault(biped):
    def violent(model, sim_state, gait, t):
        return np.full(model.n_joints, 1e9)

    with pytest.raises(SimulationFault) as exc:
        run_simulation(biped, 0.5, controller=violent)
    assert exc.value.time > 0.0


# --- gait controller --------------------------------------------------------

def test_leg_ik_roundtrip(rng):
    l1 = l2 = 0.22
    for _ in range(200):
        r = rng.uniform(0.1, 0.42)
        ang = rng.uniform(-1.2, 1.2)
        tx, tz = r * np.sin(ang), -r * np.cos(ang)
        a1, a2 = leg_ik(l1, l2, tx, tz)
        p = l1 * np.array([np.sin(a1), -np.cos(a1)]) \
            + l2 * np.array([np.sin(a1 + a2), -np.cos(a1 + a2)])
        assert np.hypot(p[0] - tx, p[1] - tz) < 1e-9


def test_gait_phases_alternate(biped):
    gait = GaitParams()
    half = gait.period / 2.0
    names = [leg.name for leg in biped.legs]
    for k in range(6):
        _, stance = gait_phases(biped, gait, (k + 0.5) * half)
        in_stance = [n for n in names if stance[n]]
        assert len(in_stance) == 1
        if k:
            assert in_stance[0] != prev
        prev = in_stance[0]


def test_standing_height_drift(stand_trace):
    z = np.array([s.state.q[1] for s in stand_trace])
    assert np.abs(z - z[0]).max() < 0.01


def test_walking_speed_window(walk_trace):
    x = np.array([s.state.q[0] for s in walk_trace])
    t = np.array([s.time for s in walk_trace])
    mid = len(x) // 2
    overall = (x[-1] - x[0]) / (t[-1] - t[0])
    second_half = (x[-1] - x[mid]) / (t[-1] - t[mid])
    assert 0.05 <= overall <= 0.5
    assert 0.05 <= second_half <= 0.5


def test_torque_limit_respected(walk_trace):
    limit = GaitParams().torque_limit
    u = np.array([s.torques for s in walk_trace])
    assert np.abs(u).max() <= limit + 1e-12


def test_truth_complementarity(biped, walk_trace):
    for s in walk_trace:
        for foot in biped.foot_ids:
            if not s.contact_flags[foot]:
                assert np.all(s.grf_truth[foot] == 0.0)


def test_momentum_rate_matches_simulation(biped, walk_trace):
    # forward difference of M qdot against the Coriolis-transpose momentum
    # rate fed the torque/GRF that act over exactly that interval
    dt = walk_trace[1].time - walk_trace[0].time
    i0, i1 = int(round(0.5 / dt)), int(round(1.5 / dt))
    m = np.array([generalized_momentum(biped, s.state)
                  for s in walk_trace[i0:i1 + 2]])
    fd = (m[1:] - m[:-1]) / dt
    md = np.array([momentum_rate(biped, s.state,
                                 (s.state.pitch_rate, s.state.joint_rates),
                                 s.torques, s.grf_truth)
                   for s in walk_trace[i0:i1 + 1]])
    rel = np.sqrt(np.mean((fd - md) ** 2) / np.mean(fd ** 2))
    assert rel < 0.02


# --- sensor synthesis -------------------------------------------------------

def test_zero_noise_identity(biped, walk_trace):
    log = synthesize_sensors(walk_trace, biped, zero_noise())
    stride = round((log.tick_t[1] - log.tick_t[0])
                   / (log.truth_t[1] - log.truth_t[0]))
    idx = np.arange(log.n_ticks) * stride
    np.testing.assert_array_equal(log.enc_pos, log.truth_q[idx, 3:])
    np.testing.assert_array_equal(log.enc_vel, log.truth_qd[idx, 3:])
    np.testing.assert_array_equal(log.effort, log.truth_torque[idx])
    np.testing.assert_array_equal(log.imu_gyro, log.truth_qd[idx, 2])
    np.testing.assert_array_equal(log.contact_flags, log.truth_flags[idx])
    for ti, tj, dp, dth in zip(log.vo_ti, log.vo_tj, log.vo_dp, log.vo_dth):
        a = np.searchsorted(log.truth_t, ti)
        b = np.searchsorted(log.truth_t, tj)
        R_i = rot2(log.truth_q[a, 2])
        np.testing.assert_allclose(
            dp, R_i.T @ (log.truth_q[b, :2] - log.truth_q[a, :2]),
            atol=1e-15)
        assert dth == pytest.approx(log.truth_q[b, 2] - log.truth_q[a, 2],
                                    abs=1e-15)


def test_vo_chain_composes_to_final_pose(biped, walk_trace):
    log = synthesize_sensors(walk_trace, biped, zero_noise())
    a = np.searchsorted(log.truth_t, log.vo_ti[0])
    p = log.truth_q[a, :2].copy()
    th = log.truth_q[a, 2]
    for dp, dth in zip(log.vo_dp, log.vo_dth):
        p = p + rot2(th) @ dp
        th = th + dth
    b = np.searchsorted(log.truth_t, log.vo_tj[-1])
    assert np.abs(p - log.truth_q[b, :2]).max() < 1e-9
    assert abs(th - log.truth_q[b, 2]) < 1e-9


def test_vo_intervals_tile_timeline(biped, walk_trace):
    log = synthesize_sensors(walk_trace, biped, zero_noise())
    assert np.all(np.diff(log.tick_t) > 0)
    np.testing.assert_allclose(log.vo_ti[1:], log.vo_tj[:-1], atol=1e-12)
    np.testing.assert_allclose(log.vo_tj - log.vo_ti, 0.02, atol=1e-12)


def test_specific_force_in_flight_and_standing(biped, stand_trace):
    q0 = standing_posture(biped).q.copy()
    q0[1] = 1.0
    qd0 = np.zeros_like(q0)
    qd0[0] = 0.4
    flight = run_simulation(biped, 0.2, dt=5e-4,
                            initial=GeneralizedState(q0, qd0),
                            controller=passive)
    log = synthesize_sensors(flight, biped, zero_noise())
    assert np.abs(log.imu_accel).max() < 1e-9  # free fall reads zero

    log = synthesize_sensors(stand_trace, biped, zero_noise())
    stride = round((log.tick_t[1] - log.tick_t[0])
                   / (log.truth_t[1] - log.truth_t[0]))
    late = log.tick_t >= 1.0
    g_up = np.array([0.0, biped.gravity])
    world = np.array([rot2(log.truth_q[i * stride, 2]) @ a
                      for i, a in enumerate(log.imu_accel)])[late]
    assert np.abs(world - g_up).max() < 0.1  # residual is true base accel
    assert np.abs(world.mean(axis=0) - g_up).max() < 0.02


def test_same_seed_bit_identical(biped, stand_trace):
    short = stand_trace[:2001]
    a = synthesize_sensors(short, biped, NoiseConfig(seed=7))
    b = synthesize_sensors(short, biped, NoiseConfig(seed=7))
    c = synthesize_sensors(short, biped, NoiseConfig(seed=8))
    for name in ("imu_accel", "imu_gyro", "enc_pos", "enc_vel", "effort",
                 "vo_dp", "vo_dth"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.imu_accel, c.imu_accel)


def test_accel_noise_empirical_std(biped):
    # constant hovering truth so the residual is the injected noise alone
    q = standing_posture(biped).q.copy()
    q[1] = 1.0
    st = GeneralizedState(q, np.zeros_like(q))
    dt = 1.0 / 200.0
    proto = make_sim_state(biped, st)
    trace = [SimState(time=k * dt, state=st,
                      contact_flags=proto.contact_flags,
                      grf_truth=proto.grf_truth, torques=proto.torques,
                      contact_anchors=proto.contact_anchors)
             for k in range(50002)]
    log = synthesize_sensors(trace, biped, zero_noise(accel_std=0.04),
                             rates=(200, 50))
    resid = log.imu_accel - rot2(st.pitch).T @ np.array([0.0, biped.gravity])
    assert resid.size >= 1e5
    assert 0.038 <= resid.std() <= 0.042


def test_rates_must_divide_sim_rate(biped, stand_trace):
    with pytest.raises(ValueError):
        synthesize_sensors(stand_trace[:10], biped, rates=(300, 50))
    with pytest.raises(ValueError):
        synthesize_sensors(stand_trace[:10], biped, rates=(200, 60))


def test_negative_noise_std_rejected():
    with pytest.raises(ValueError):
        NoiseConfig(gyro_std=-0.1)


def test_contact_params_are_stable_defaults(biped):
    # the advertised explicit-integration bounds hold for the default rates
    cp = ContactParams()
    dt = 5e-4
    m_eff = 0.11  # lightest foot-direction apparent mass
    assert dt * np.sqrt(cp.stiffness / m_eff) < 2.0
    assert dt * cp.damping / m_eff < 2.0
    assert dt * np.sqrt(cp.tangent_stiffness / m_eff) < 2.0
    assert dt * cp.tangent_damping / m_eff < 2.0
