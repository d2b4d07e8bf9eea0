import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from muxscal.protocol import (
    DampedSinusoid,
    DisturbanceSpec,
    GainSet,
    build_topology,
    check_layer_order,
    coupling_terms,
    eval_disturbance,
    polynomial_offsets,
    protocol_derivatives,
    zeta_coordinates,
)
from oracles import poly_derivative_offsets

SET_A = GainSet(1.4155, 1.5103, 0.4803, 0.642, 0.872, 0.425, 0.1, -0.6, -1.6)
SIN = DampedSinusoid([0.4, 0.4], 0.5, 0.1, 0.0)


def test_gainset_derived_quantities_and_round_trip():
    np.testing.assert_allclose(SET_A.g_bar, [0.0642, 0.0872, 0.0425])
    assert SET_A.alpha == (-0.6, -1.6)
    assert SET_A.layer_gains(1) == (1.5103, 0.872)
    assert GainSet.from_dict(SET_A.to_dict()) == SET_A
    again = GainSet.from_gbar(SET_A.k, SET_A.g_bar, SET_A.k_psi, SET_A.alpha)
    np.testing.assert_allclose(again.k_tau, SET_A.k_tau, rtol=1e-15)
    assert SET_A.sign_constraints_ok()
    assert not GainSet(0, 0, 0, 0, 0, 0, 0.1).sign_constraints_ok()


def test_gainset_validation():
    with pytest.raises(ValueError):
        GainSet(-1, 0, 0, 0, 0, 0, 0.1)
    with pytest.raises(ValueError):
        GainSet(1, 0, 0, 0, 0, 0, 0.0)
    with pytest.raises(ValueError):
        GainSet(float("nan"), 0, 0, 0, 0, 0, 0.1)
    with pytest.raises(ValueError):
        SET_A.layer_gains(3)
    d = SET_A.to_dict()
    del d["k2"]
    with pytest.raises(KeyError):
        GainSet.from_dict(d)
    with pytest.raises(KeyError):
        GainSet.from_dict({**SET_A.to_dict(), "k3": 1.0})


def test_reference_disturbances():
    d1 = DisturbanceSpec([[0.04, 0.04]], (SIN,))
    d3 = DisturbanceSpec([[0.0, 0.0], [-0.05, -0.05]], (SIN,))
    t = np.array([0.0, 3.0, 10.0])
    w = 0.4 * np.sin(0.5 * t) * np.exp(-0.1 * t)
    np.testing.assert_allclose(eval_disturbance(d1, t), np.column_stack([0.04 + w] * 2))
    np.testing.assert_allclose(eval_disturbance(d3, t), np.column_stack([-0.05 * t + w] * 2))
    assert d1.order == 1 and d3.order == 2
    assert d1.residual_sup(60.0) >= np.abs(d1.residual(np.linspace(0, 60, 5001))).max() * np.sqrt(2)
    assert DisturbanceSpec().residual_sup(10.0) == 0.0


@given(arrays(float, st.tuples(st.integers(0, 3), st.just(2)), elements=st.floats(-2, 2)),
       st.floats(-5, 20))
def test_polynomial_offsets_are_derivatives(coeffs, t):
    spec = DisturbanceSpec(coeffs)
    m = 3
    np.testing.assert_allclose(polynomial_offsets(spec, m, t),
                               poly_derivative_offsets(coeffs, m, t), atol=1e-9, rtol=1e-12)


def test_zeta_coordinates_shift_integrators():
    spec = DisturbanceSpec([[0.04, 0.04], [-0.05, -0.05]])
    r = np.array([[-0.04 + 0.05 * 2.0, -0.04 + 0.05 * 2.0], [0.05, 0.05]])
    np.testing.assert_allclose(zeta_coordinates(r, spec, 2.0), 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        polynomial_offsets(DisturbanceSpec([[1, 1]] * 3), 2, 0.0)


def test_disturbance_dict_round_trip():
    spec = DisturbanceSpec([[0.0, 0.0], [-0.05, -0.05]], (SIN,))
    back = DisturbanceSpec.from_dict(spec.to_dict())
    np.testing.assert_array_equal(back.poly_coeffs, spec.poly_coeffs)
    assert back.to_dict() == spec.to_dict()
    with pytest.raises(KeyError):
        DisturbanceSpec.from_dict({"poly": [], "bogus": 1})
    with pytest.raises(ValueError):
        DampedSinusoid(-1.0, 1.0)


def test_layer_order_warning():
    with pytest.warns(UserWarning):
        assert not check_layer_order({1: DisturbanceSpec([[1, 1]] * 3)}, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert check_layer_order({1: DisturbanceSpec([[1, 1]] * 2)}, 2)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 10])
def test_topology_shape(n):
    top = build_topology(n)
    assert top.n_agents == 2 * n * (n + 1)
    for k in range(1, n + 1):
        agents = top.agents_on_circle(k)
        assert len(agents) == 4 * k
        np.testing.assert_allclose(np.linalg.norm(top.positions[agents], axis=1), 0.2 * k)
    assert all(1 <= len(nb) <= 3 for nb in top.neighbors)
    # information only flows outwards
    for i, nb in enumerate(top.neighbors):
        assert all(top.circle_of[j] <= top.circle_of[i] for j in nb)


def test_topology_neighbours():
    top = build_topology(3)
    assert top.neighbors[0] == (1, 3)
    assert top.neighbors[2] == (1, 3)
    # agent on circle 2 at angle 0 sees its ring mates and agent 0 inwards
    assert top.neighbors[4] == (0, 5, 11)
    for i in top.agents_on_circle(3):
        inner = [j for j in top.neighbors[i] if top.circle_of[j] == 2]
        assert len(inner) == 1
        d = np.linalg.norm(top.positions[top.agents_on_circle(2)] - top.positions[i], axis=1)
        assert np.linalg.norm(top.positions[inner[0]] - top.positions[i]) <= d.min() + 1e-12
    np.testing.assert_allclose(top.neighbor_offset(0, 1), top.positions[1] - top.positions[0])
    np.testing.assert_allclose(top.leader_offsets, -top.positions)


def test_topology_validation():
    with pytest.raises(ValueError):
        build_topology(0)
    with pytest.raises(ValueError):
        build_topology(2, radius_step=0.0)
    small = build_topology(2, n_bar=1)
    assert all(len(nb) == 1 for nb in small.neighbors)


def test_desired_solution_is_equilibrium():
    top = build_topology(3)
    leader = np.array([0.3, -0.2])
    vel = np.array([0.1, 0.05])
    eta = leader + top.positions
    r = np.zeros((top.n_agents, 2, 2))
    u, r_dot = protocol_derivatives(SET_A, top, eta, eta, leader, vel, r)
    np.testing.assert_allclose(u, np.broadcast_to(vel, u.shape), atol=1e-15)
    np.testing.assert_allclose(r_dot, 0.0, atol=1e-15)


def test_vectorized_protocol_matches_per_agent_terms():
    rng = np.random.default_rng(4)
    top = build_topology(2)
    n = top.n_agents
    leader = rng.normal(size=2)
    eta = leader + top.positions + 0.5 * rng.normal(size=(n, 2))
    eta_d = eta + 0.3 * rng.normal(size=(n, 2))
    r = rng.normal(size=(n, 2, 2))
    u, r_dot = protocol_derivatives(SET_A, top, eta, eta_d, leader, np.zeros(2), r)
    for i in range(n):
        nbrs = [(eta_d[j], eta_d[i], top.neighbor_offset(i, j)) for j in top.neighbors[i]]
        terms = [coupling_terms(SET_A, layer, eta[i], leader, top.leader_offsets[i], nbrs)
                 for layer in range(3)]
        np.testing.assert_allclose(u[i], sum(terms[0]) + r[i, 0], atol=1e-14)
        np.testing.assert_allclose(r_dot[i, 0], sum(terms[1]) + r[i, 1], atol=1e-14)
        np.testing.assert_allclose(r_dot[i, 1], sum(terms[2]), atol=1e-14)


def test_protocol_shape_check():
    top = build_topology(1)
    with pytest.raises(ValueError):
        protocol_derivatives(SET_A, top, top.positions, top.positions, np.zeros(2),
                             np.zeros(2), np.zeros((4, 3, 2)))


def test_saturation_bounds_delayed_term():
    top = build_topology(1)
    huge = top.positions * 1e6
    _, delayed = coupling_terms(SET_A, 0, huge[0], np.zeros(2), top.leader_offsets[0],
                                [(huge[j], huge[0], top.neighbor_offset(0, j))
                                 for j in top.neighbors[0]])
    assert np.all(np.abs(delayed) <= SET_A.k0_tau * len(top.neighbors[0]) + 1e-12)
