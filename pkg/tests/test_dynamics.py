import numpy as np
import pytest

from bipedmhe.dynamics import (
    compute_dynamics_terms,
    compute_foot_kinematics,
    generalized_momentum,
    momentum_rate,
    world_foot_position,
)
from bipedmhe.model import (
    GeneralizedState,
    LegModel,
    LinkParams,
    ModelError,
    RobotModel,
    default_model,
)

from conftest import random_state


@pytest.fixture(scope="module")
def base_only():
    return RobotModel(base_mass=5.0, base_inertia=0.1, legs=())


def test_base_only_terms(base_only):
    st = GeneralizedState(np.array([0.3, -0.2, 0.7]), np.zeros(3))
    terms = compute_dynamics_terms(base_only, st)
    np.testing.assert_allclose(terms.M, np.diag([5.0, 5.0, 0.1]), atol=1e-14)
    np.testing.assert_allclose(terms.C, np.zeros((3, 3)), atol=1e-14)
    np.testing.assert_allclose(terms.G, [0.0, 5.0 * 9.81, 0.0], atol=1e-12)


def test_dimension_mismatch_rejected(biped):
    with pytest.raises(ModelError):
        compute_dynamics_terms(biped, GeneralizedState(np.zeros(4), np.zeros(4)))


def test_mdot_equals_c_plus_ct(biped, rng):
    # dM/dt along qdot via central differences vs the Christoffel C + C^T
    h = 1e-6
    for _ in range(50):
        st = random_state(biped, rng)
        Mp = compute_dynamics_terms(biped, GeneralizedState(st.q + h * st.qdot)).M
        Mm = compute_dynamics_terms(biped, GeneralizedState(st.q - h * st.qdot)).M
        Md_fd = (Mp - Mm) / (2 * h)
        C = compute_dynamics_terms(biped, st).C
        rel = np.linalg.norm(Md_fd - (C + C.T)) / np.linalg.norm(Md_fd)
        assert rel < 1e-6


def test_mass_matrix_positive_definite(biped, rng):
    for _ in range(200):
        st = random_state(biped, rng, q_scale=2.0)
        M = compute_dynamics_terms(biped, st).M
        np.linalg.cholesky(M)  # raises if not PD


def test_partition_identities(biped, rng):
    for _ in range(100):
        st = random_state(biped, rng)
        terms = compute_dynamics_terms(biped, st)
        assert np.array_equal(np.hstack([terms.M1, terms.M2]), terms.M)
        assert np.array_equal(np.vstack([terms.C1, terms.C2]), terms.C)


def test_gravity_vector_base_rows(biped):
    st = GeneralizedState(np.zeros(biped.n_coords))
    G = compute_dynamics_terms(biped, st).G
    assert G[0] == pytest.approx(0.0, abs=1e-12)
    assert G[1] == pytest.approx(biped.total_mass * biped.gravity, rel=1e-12)


def test_straight_leg_fk():
    links = (LinkParams(0.4, 0.2, 0.002, 0.25), LinkParams(0.3, 0.1, 0.001, 0.25))
    model = RobotModel(base_mass=2.0, base_inertia=0.02,
                       legs=(LegModel("only", (0.0, 0.0), links),))
    st = GeneralizedState(np.zeros(model.n_coords))
    fk = compute_foot_kinematics(model, st, "only").fk
    np.testing.assert_allclose(fk, [0.0, -0.5], atol=1e-15)


def test_zero_qdot_zero_foot_velocity(biped):
    st = GeneralizedState(np.array([0.1, 0.5, 0.2, 0.3, -0.6, -0.1, 0.4]))
    for foot in biped.foot_ids:
        v = compute_foot_kinematics(biped, st, foot).v_foot
        np.testing.assert_allclose(v, [0.0, 0.0], atol=1e-15)


def test_unknown_foot_rejected(biped):
    st = GeneralizedState(np.zeros(biped.n_coords))
    with pytest.raises(KeyError):
        compute_foot_kinematics(biped, st, "tail")


def test_contact_jacobian_matches_fd(biped, rng):
    eps = 1e-7
    for _ in range(20):
        st = random_state(biped, rng)
        for foot in biped.foot_ids:
            J = compute_foot_kinematics(biped, st, foot).J_i
            for k in range(biped.n_coords):
                dq = np.zeros(biped.n_coords)
                dq[k] = eps
                pp = world_foot_position(biped, GeneralizedState(st.q + dq), foot)
                pm = world_foot_position(biped, GeneralizedState(st.q - dq), foot)
                np.testing.assert_allclose((pp - pm) / (2 * eps), J[:, k],
                                           rtol=0, atol=1e-5)


def test_foot_velocity_consistent_with_fd(biped, rng):
    # J_i qdot equals the time derivative of the world foot position
    h = 1e-7
    for _ in range(20):
        st = random_state(biped, rng)
        for foot in biped.foot_ids:
            kin = compute_foot_kinematics(biped, st, foot)
            pp = world_foot_position(biped, GeneralizedState(st.q + h * st.qdot), foot)
            pm = world_foot_position(biped, GeneralizedState(st.q - h * st.qdot), foot)
            np.testing.assert_allclose(kin.v_foot, (pp - pm) / (2 * h),
                                       rtol=0, atol=1e-5)


def test_momentum_zero_rate(biped):
    st = GeneralizedState(np.array([0.1, 0.5, 0.2, 0.3, -0.6, -0.1, 0.4]))
    np.testing.assert_allclose(generalized_momentum(biped, st),
                               np.zeros(biped.n_coords), atol=1e-15)


def test_momentum_base_only(base_only):
    st = GeneralizedState(np.zeros(3), np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(generalized_momentum(base_only, st),
                               [5.0, 0.0, 0.0], atol=1e-14)


def test_momentum_is_m_times_qdot(biped, rng):
    for _ in range(20):
        st = random_state(biped, rng)
        m = generalized_momentum(biped, st)
        ref = compute_dynamics_terms(biped, st).M @ st.qdot
        np.testing.assert_allclose(m, ref, atol=1e-12)


def test_momentum_rate_free_fall(biped):
    st = GeneralizedState(np.array([0.0, 1.0, 0.1, 0.2, -0.4, -0.2, 0.4]))
    mdot = momentum_rate(biped, st, (0.0, np.zeros(4)), np.zeros(4), {})
    G = compute_dynamics_terms(biped, st).G
    np.testing.assert_allclose(mdot, -G, atol=1e-12)
    assert mdot[1] == pytest.approx(-biped.total_mass * biped.gravity, rel=1e-12)


def test_momentum_rate_equilibrium(biped):
    # symmetric stance: equal vertical GRFs balance gravity, torques from
    # the joint rows; the resulting momentum rate is exactly zero
    q = np.array([0.0, 0.4, 0.0, 0.3, -0.6, -0.3, 0.6])
    st = GeneralizedState(q, np.zeros(7))
    terms = compute_dynamics_terms(biped, st)
    w = biped.total_mass * biped.gravity
    grfs = {"left": np.array([0.0, w / 2]), "right": np.array([0.0, w / 2])}
    resid = terms.G.copy()
    for foot, f in grfs.items():
        resid -= compute_foot_kinematics(biped, st, foot).J_i.T @ f
    assert abs(resid[0]) < 1e-12 and abs(resid[1]) < 1e-12 and abs(resid[2]) < 1e-12
    u = resid[3:]
    mdot = momentum_rate(biped, st, (0.0, np.zeros(4)), u, grfs)
    np.testing.assert_allclose(mdot, np.zeros(7), atol=1e-10)


def test_momentum_rate_linear_in_grf(biped, rng):
    # superposition in the contact forces for a fixed state estimate
    st = random_state(biped, rng)
    rates = (float(st.qdot[2]), st.qdot[3:].copy())
    u = rng.normal(size=4)
    f0, f1 = rng.normal(size=2), rng.normal(size=2)
    base = momentum_rate(biped, st, rates, u, {})
    both = momentum_rate(biped, st, rates, u, {"left": f0, "right": f1})
    left = momentum_rate(biped, st, rates, u, {"left": f0})
    right = momentum_rate(biped, st, rates, u, {"right": f1})
    np.testing.assert_allclose(both - base, (left - base) + (right - base),
                               atol=1e-9)
