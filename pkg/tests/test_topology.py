import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfel.errors import ConfigError, DomainError, InvariantError
from cfel.topology import (BackhaulGraph, build_graph, gossip_power, jacobi_eigenvalues, metropolis_weights,
                           mixing_from_matrix, omega_constants, read_edge_list, spectral_zeta, uniform_weights,
                           validate_mixing, write_edge_list)


def test_path3_metropolis_matrix():
    h = metropolis_weights(build_graph("path", 3)).entries
    expected = np.array([[2 / 3, 1 / 3, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 3, 2 / 3]])
    np.testing.assert_allclose(h, expected, atol=1e-15)


def test_ring8_zeta_closed_form():
    # circulant ring: eigenvalues (1 + 2 cos(2 pi k / 8)) / 3
    assert metropolis_weights(build_graph("ring", 8)).zeta == pytest.approx((1 + math.sqrt(2)) / 3, abs=1e-12)


def test_complete_graph_zeta_zero():
    assert abs(metropolis_weights(build_graph("complete", 8)).zeta) <= 1e-12


def test_single_server_zeta_zero():
    assert metropolis_weights(build_graph("ring", 1)).zeta == 0.0


@pytest.mark.parametrize("m", [2, 5, 9, 16])
def test_jacobi_matches_numpy(m):
    rng = np.random.default_rng(m)
    a = rng.standard_normal((m, m))
    a = a + a.T
    np.testing.assert_allclose(jacobi_eigenvalues(a), np.sort(np.linalg.eigvalsh(a))[::-1], atol=1e-12)


def test_spectral_zeta_rejects_asymmetry():
    h = np.array([[0.5, 0.5], [0.4, 0.6]])
    with pytest.raises(InvariantError):
        spectral_zeta(h)


def test_omega_constants_hand_values():
    o1, o2 = omega_constants(0.5, 1)
    assert o1 == pytest.approx(1 / 3, rel=1e-15)
    assert o2 == pytest.approx(22 / 3, rel=1e-15)


def test_omega_constants_at_zero():
    assert omega_constants(0.0, 4) == (0.0, 3.0)


def test_omega_domain():
    for zeta, pi in ((1.0, 1), (-0.1, 1), (0.5, 0)):
        with pytest.raises(DomainError):
            omega_constants(zeta, pi)


def test_gossip_power_ring8_pi10():
    mix = metropolis_weights(build_graph("ring", 8))
    p = gossip_power(mix.entries, 10)
    assert np.max(np.abs(p.sum(axis=1) - 1)) < 1e-12
    # reconstruction from the eigendecomposition as an independent reference
    w, v = np.linalg.eigh(mix.entries)
    np.testing.assert_allclose(p, (v * w ** 10) @ v.T, atol=1e-13)
    assert np.max(np.abs(p - 1 / 8)) <= mix.zeta ** 10


def test_gossip_power_one_is_identity_map():
    h = metropolis_weights(build_graph("path", 4)).entries
    np.testing.assert_array_equal(gossip_power(h, 1), h)


@pytest.mark.parametrize("kind,m", [("ring", 6), ("path", 5), ("torus2d", 12), ("erdos_renyi", 9)])
def test_monotone_mixing(kind, m):
    mix = metropolis_weights(build_graph(kind, m, seed=3))
    j = np.full((m, m), 1 / m)
    prev = np.linalg.norm(np.eye(m) - j)
    for pi in range(1, 12):
        cur = np.linalg.norm(mix.power(pi) - j)
        assert cur <= mix.zeta * prev + 1e-13
        prev = cur


@settings(max_examples=30, deadline=None)
@given(m=st.integers(2, 14), seed=st.integers(0, 1000), p=st.floats(0.2, 0.9))
def test_random_graph_mixing_invariants(m, seed, p):
    graph = build_graph("erdos_renyi", m, seed=seed, p_edge=p)
    for mix in (metropolis_weights(graph), uniform_weights(graph)):
        zeta = validate_mixing(mix.entries, graph)
        assert 0 <= zeta < 1
        assert zeta == pytest.approx(mix.zeta)


def test_validate_catches_each_violation():
    graph = build_graph("ring", 4)
    good = metropolis_weights(graph).entries
    bad_row = good.copy()
    bad_row[0, 0] += 0.01
    with pytest.raises(InvariantError):
        validate_mixing(bad_row)
    asym = good.copy()
    asym[0, 1] += 0.01
    asym[0, 0] -= 0.01
    with pytest.raises(InvariantError):
        validate_mixing(asym)
    # weight on a non-edge of the ring
    off = good.copy()
    off[0, 2] = off[2, 0] = 0.1
    off[0, 0] -= 0.1
    off[2, 2] -= 0.1
    validate_mixing(off)
    with pytest.raises(InvariantError):
        validate_mixing(off, graph)
    # identity on m > 1 is disconnected: zeta = 1
    with pytest.raises(InvariantError):
        validate_mixing(np.eye(3))


def test_mixing_from_matrix_validates():
    with pytest.raises(InvariantError):
        mixing_from_matrix(np.array([[0.5, 0.51], [0.5, 0.49]]))


def test_graph_kinds_and_degrees():
    assert sorted(build_graph("ring", 5).degrees()) == [2] * 5
    assert sorted(build_graph("complete", 5).degrees()) == [4] * 5
    assert sorted(build_graph("torus2d", 12).degrees()) == [4] * 12
    assert list(build_graph("path", 4).degrees()) == [1, 2, 2, 1]


def test_torus_needs_two_factors():
    build_graph("torus2d", 8)
    for m in (7, 2):
        with pytest.raises(ConfigError):
            build_graph("torus2d", m)


def test_disconnected_graph_rejected():
    with pytest.raises(ConfigError):
        BackhaulGraph(4, frozenset({(0, 1), (2, 3)}))
    with pytest.raises(ConfigError):
        build_graph("hypercube", 4)


def test_edge_list_round_trip(tmp_path):
    graph = build_graph("erdos_renyi", 10, seed=1)
    path = tmp_path / "edges.txt"
    write_edge_list(graph, path)
    back = read_edge_list(path, 10)
    assert back.edges == graph.edges
