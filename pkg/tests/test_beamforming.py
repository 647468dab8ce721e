import math

import numpy as np
import pytest
from scipy.optimize import minimize

from cranopt.beamforming import (
    GsbfSettings,
    InfeasibleError,
    beam_directions,
    exhaustive_oracle,
    feasible,
    fixed_direction_maxmin,
    gsbf,
    gsbf_select,
    gsbf_stage1,
    maxmin_rate,
    powermin,
)
from cranopt.network import (
    ChannelModel,
    NetworkInstance,
    PowerModel,
    Topology,
    evaluate_sinr,
    group_norms,
    make_instance,
    network_power,
    sample_channel,
)
from cranopt.solver import Status


def custom_instance(H, antennas, fronthaul=None, p_max=1.0, gamma=1.0, noise=1.0):
    H = np.atleast_2d(np.asarray(H, complex))
    K, L = H.shape[0], len(antennas)
    topo = Topology(np.zeros((L, 2)), np.zeros((K, 2)), tuple(antennas))
    edges = np.cumsum((0,) + tuple(antennas))
    g = np.stack([np.sum(np.abs(H[:, a:b]) ** 2, axis=1) for a, b in zip(edges[:-1], edges[1:])], axis=1)
    power = PowerModel(np.zeros(L) if fronthaul is None else np.asarray(fronthaul, float), np.ones(L),
                       np.broadcast_to(np.asarray(p_max, float), (L,)).copy())
    return NetworkInstance(topo, power, np.full(K, float(gamma)), np.full(K, float(noise)), H, g)


def assert_valid(inst, V, gamma=None):
    gamma = inst.gamma if gamma is None else gamma
    assert np.all(evaluate_sinr(inst.H, V, inst.noise_w) >= gamma - 1e-3)
    assert np.all(group_norms(V, inst.topology.antennas) <= np.sqrt(inst.power.p_max_w) + 1e-6)


# --- power minimization --------------------------------------------------------


def test_powermin_single_user_closed_form():
    h = np.array([1.0 + 0.5j, -0.3 + 2j, 0.2j])
    inst = custom_instance(h, (3,), p_max=100.0, gamma=2.0, noise=0.5)
    res = powermin(inst)
    assert res.feasible
    assert res.transmit_power_w == pytest.approx(2.0 * 0.5 / np.linalg.norm(h) ** 2, rel=1e-4)
    v = res.V[:, 0]
    cos = abs(h.conj() @ v) / (np.linalg.norm(h) * np.linalg.norm(v))
    assert cos == pytest.approx(1.0, abs=1e-6)


def test_powermin_unreachable_target_certified():
    inst = custom_instance([1.0, 1.0], (1, 1), gamma=1e6)
    res = powermin(inst)
    assert res.infeasible
    cert = res.outcome.certificate
    assert cert is not None


def _brute_force_powermin(inst, starts=20, seed=0):
    """Multi-start SLSQP over the real parametrization of V."""
    N, K = inst.N, inst.K
    rng = np.random.default_rng(seed)

    def unpack(z):
        return (z[:N * K] + 1j * z[N * K:]).reshape(N, K)

    cons = [
        {"type": "ineq", "fun": lambda z: evaluate_sinr(inst.H, unpack(z), inst.noise_w) / inst.gamma - 1.0},
        {"type": "ineq", "fun": lambda z: inst.power.p_max_w - group_norms(unpack(z), inst.topology.antennas) ** 2},
    ]
    best = math.inf
    for _ in range(starts):
        z0 = rng.standard_normal(2 * N * K) * 0.5
        r = minimize(lambda z: z @ z, z0, constraints=cons, method="SLSQP", options={"maxiter": 500, "ftol": 1e-12})
        if r.success and min(c["fun"](r.x).min() for c in cons) >= -1e-7:
            best = min(best, r.fun)
    return best


def test_powermin_matches_local_search_oracle():
    inst = make_instance(11, 3, 2, antennas=1, noise_dbm=-102.0)
    # rescale to unit noise so the local search is well conditioned
    inst = custom_instance(inst.H / np.sqrt(inst.noise_w[:, None]), (1, 1, 1), p_max=1e3)
    res = powermin(inst)
    assert res.feasible
    ref = _brute_force_powermin(inst)
    assert math.isfinite(ref)
    assert res.transmit_power_w == pytest.approx(ref, rel=1e-2)


def test_powermin_rejects_empty_active_set():
    with pytest.raises(ValueError):
        powermin(make_instance(0, 2, 1), active=[])


# --- group sparse beamforming ------------------------------------------------


def _clustered_instance():
    # every user sits next to RRH 0; RRHs 1-3 are far away and expensive
    rrh = np.array([[0.0, 0.0], [900.0, 900.0], [-900.0, 900.0], [900.0, -900.0]])
    users = np.array([[15.0, 0.0], [0.0, 20.0], [-12.0, -10.0]])
    topo = Topology(rrh, users, (2, 2, 2, 2))
    H, g = sample_channel(topo, 3, ChannelModel(shadowing_std_db=0.0))
    power = PowerModel(np.array([5.0, 50.0, 50.0, 50.0]), np.ones(4), np.ones(4))
    return NetworkInstance(topo, power, np.ones(3), np.full(3, 10 ** (-102 / 10) / 1000), H, g)


def test_stage1_sparsifies_distant_rrhs():
    inst = _clustered_instance()
    _, norms = gsbf_stage1(inst)
    assert np.all(norms[1:] <= 1e-3 * norms.max())


def test_stage1_uniform_geometry_no_exact_zeros():
    inst = make_instance(4, 4, 3, antennas=2, fronthaul_w=[5.0] * 4)
    _, norms = gsbf_stage1(inst)
    assert np.all(norms > 0)


def test_stage1_no_users():
    inst = make_instance(0, 3, 0)
    V, norms = gsbf_stage1(inst)
    assert V.shape == (inst.N, 0)
    np.testing.assert_array_equal(norms, 0.0)


def test_select_single_rrh_sufficient():
    H = np.array([[3.0, 1e-4, 1e-4, 1e-4], [2.0j, 1e-4, 1e-4, 1e-4]])
    H = np.concatenate([H, H[:, :1] * 1j], axis=1)
    inst = custom_instance(H[:, [0, 4, 1, 2, 3]], (2, 1, 1, 1), fronthaul=[5, 6, 7, 8], gamma=0.2)
    sel = gsbf_select(inst, np.array([4.0, 1.0, 2.0, 3.0]))
    assert sel.active == (0,)
    assert sel.probes <= math.ceil(math.log2(inst.L + 1)) + 1


def test_select_all_active_infeasible():
    inst = custom_instance([1.0, 1.0], (1, 1), gamma=1e6)
    with pytest.raises(InfeasibleError):
        gsbf_select(inst, np.array([0.0, 1.0]))


@pytest.mark.parametrize("seed", range(3))
def test_gsbf_probe_bound_validity_and_monotone_probes(seed):
    inst = make_instance(seed, 6, 4, antennas=2)
    res = gsbf(inst)
    assert res.feasibility_probe_count <= math.ceil(math.log2(inst.L + 1)) + 1
    assert_valid(inst, res.V_final)
    inactive = [l for l in range(inst.L) if l not in res.active_set]
    assert np.all(group_norms(res.V_final, inst.topology.antennas)[inactive] == 0)
    assert res.network_power_w == pytest.approx(
        network_power(res.V_final, res.active_set, inst.power, inst.topology.antennas))
    sel = gsbf_select(inst, res.ordering)
    feas = [set(a) for a, s in sel.probe_log if s == Status.OPTIMAL.value]
    for a, s in sel.probe_log:
        if any(set(a) >= f for f in feas):
            assert s == Status.OPTIMAL.value


def test_gsbf_deterministic():
    inst = make_instance(5, 5, 3, antennas=2)
    a, b = gsbf(inst), gsbf(inst)
    assert a.active_set == b.active_set and np.array_equal(a.V_final, b.V_final)


@pytest.mark.parametrize("seed", range(3))
def test_stage3_not_above_stage1_transmit_power(seed):
    inst = make_instance(seed, 4, 3, antennas=2)
    V1, norms = gsbf_stage1(inst)
    res = powermin(inst)
    assert res.transmit_power_w <= np.sum(norms ** 2) * (1 + 1e-4)


# --- oracle --------------------------------------------------------------------


def test_oracle_single_rrh():
    inst = make_instance(2, 1, 1, antennas=3, region_half_width=200.0)
    best = exhaustive_oracle(inst)
    assert best.active == (0,)


def test_oracle_zero_fronthaul_is_all_active():
    inst = make_instance(3, 4, 2, antennas=2, fronthaul_w=[0.0] * 4, p_max_w=10.0)
    best = exhaustive_oracle(inst)
    full = powermin(inst)
    assert best.network_power_w == pytest.approx(full.network_power_w, rel=1e-3)


@pytest.mark.parametrize("seed", range(2))
def test_oracle_not_above_gsbf(seed):
    inst = make_instance(seed, 5, 3, antennas=2)
    assert exhaustive_oracle(inst).network_power_w <= gsbf(inst).network_power_w * (1 + 1e-6)


def test_oracle_refuses_large_networks():
    with pytest.raises(ValueError):
        exhaustive_oracle(make_instance(0, 13, 1))


# --- max-min -------------------------------------------------------------------


def test_maxmin_single_user_closed_form():
    h = np.array([0.4 + 1j, 1.5 - 0.2j])
    inst = custom_instance(h, (2,), p_max=3.0, noise=0.7)
    tol = 1e-3
    res = maxmin_rate(inst, tol=tol)
    ref = 3.0 * np.linalg.norm(h) ** 2 / 0.7
    assert abs(res.gamma - ref) <= 2 * tol * max(1, ref)
    assert_valid(inst, res.V, gamma=res.gamma)


def test_maxmin_probe_count_bound():
    inst = make_instance(1, 3, 2, antennas=2)
    tol = 1e-2
    res = maxmin_rate(inst, tol=tol)
    hi = float(np.max(np.sum(np.abs(inst.H) ** 2, axis=1) * inst.power.p_max_w.sum() / inst.noise_w))
    assert res.probes <= math.ceil(math.log2(hi / tol)) + res.expansions + 1


def test_maxmin_rejects_bad_tol():
    with pytest.raises(ValueError):
        maxmin_rate(make_instance(0, 2, 1), tol=0.0)


@pytest.mark.parametrize("seed", range(2))
def test_optimal_beamforming_dominates_fixed_directions(seed):
    inst = make_instance(seed, 3, 2, antennas=2)
    tol = 1e-2
    opt = maxmin_rate(inst, tol=tol)
    for kind in ("MRT", "ZF"):
        fixed = fixed_direction_maxmin(inst, kind, tol=tol)
        assert opt.gamma >= fixed.gamma - tol * max(1.0, fixed.gamma)
        assert_valid(inst, fixed.V, gamma=fixed.gamma)


def test_fixed_direction_single_user_matches_maxmin():
    # one RRH: with several per-RRH caps the MRT split across RRHs is no longer optimal
    inst = make_instance(7, 1, 1, antennas=3)
    tol = 1e-3
    a, b = maxmin_rate(inst, tol=tol), fixed_direction_maxmin(inst, "MRT", tol=tol)
    assert b.gamma == pytest.approx(a.gamma, rel=3 * tol)


def test_zf_nulls_interference(rng):
    H = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
    D = beam_directions(H, "ZF")
    C = np.abs(H.conj() @ D)
    scale = np.outer(np.linalg.norm(H, axis=1), np.linalg.norm(D, axis=0))
    off = ~np.eye(3, dtype=bool)
    assert np.all(C[off] <= 1e-8 * scale[off])


def test_zf_equals_mrt_on_orthogonal_channels():
    H = np.array([[1.0, 0, 0, 0], [0, 2j, 0, 0]], complex)
    np.testing.assert_allclose(beam_directions(H, "ZF"), beam_directions(H, "MRT"), atol=1e-12)


def test_zf_requires_enough_antennas():
    with pytest.raises(ValueError):
        beam_directions(np.ones((3, 2), complex), "ZF")
    with pytest.raises(ValueError):
        beam_directions(np.ones((1, 2), complex), "SVD")


def test_feasible_probe_returns_valid_beamformer():
    inst = make_instance(3, 3, 2, antennas=2)
    st, V, _ = feasible(inst, range(3))
    assert st is Status.OPTIMAL
    assert_valid(inst, V)
