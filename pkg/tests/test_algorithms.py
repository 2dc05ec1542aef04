"""Association algorithms: reweighted group-sparse selection, backward
elimination, and the baselines, validated on constructed geometries with
known answers and against exhaustive enumeration."""

import dataclasses
import json

import numpy as np
import pytest

from cranopt import algorithms as alg
from cranopt import beamform as bf
from cranopt import scenario as sc
from cranopt.scenario import ChannelRealization, Scenario

# thermal noise level used by all experiment-scale instances in this file;
# the service-area pathlosses put link gains around 1e-7..1e-9, so anything
# much larger makes every instance infeasible at 1 W transmit limits
NOISE = 4e-11


def make_instance(num_aps, num_mus, scenario_seed, channel_seed, **cfg_kwargs):
    cfg_kwargs.setdefault("noise_power", NOISE)
    cfg = sc.make_homogeneous_config(num_aps, num_mus, **cfg_kwargs)
    scn = sc.generate_scenario(cfg, seed=scenario_seed)
    return scn, sc.sample_channel(scn, seed=channel_seed)


def placed_scenario(cfg, ap_positions, mu_positions):
    return Scenario(
        config=cfg,
        ap_positions=np.asarray(ap_positions, dtype=float),
        mu_positions=np.asarray(mu_positions, dtype=float),
        seed=0,
    )


def patterned_channel(scn, patterns):
    """Deterministic reciprocal channel: sqrt(pathloss) times a fixed
    per-MU antenna pattern, so every block norm is known in closed form."""
    gain = sc.pathloss_gains(scn)
    K, N = gain.shape
    pats = np.asarray(patterns, dtype=float)
    ants = scn.config.antennas_per_ap
    h = np.zeros((K, sum(ants)))
    col = 0
    for n in range(N):
        for k in range(K):
            h[k, col : col + ants[n]] = np.sqrt(gain[k, n]) * pats[k]
        col += ants[n]
    return ChannelRealization(h=h, g=h.copy(), antennas_per_ap=ants, seed=0)


def trace_events(result, phase):
    return [ev for ev in result.trace if ev.get("phase") == phase]


# ---------------------------------------------------------------------------
# reweighting and pricing arithmetic


def test_reweight_betas_values():
    beta = alg.reweight_betas([0.0, 1.0], [2.0, 2.0], epsilon=1e-6)
    assert beta[0] == pytest.approx(2e6)
    assert beta[1] == pytest.approx(2.0, rel=1e-5)

    with pytest.raises(ValueError):
        alg.reweight_betas([-0.1, 1.0], [2.0, 2.0], epsilon=1e-6)
    with pytest.raises(ValueError):
        alg.reweight_betas([0.0, 1.0], [2.0], epsilon=1e-6)
    with pytest.raises(ValueError):
        alg.reweight_betas([0.0, 1.0], [2.0, 2.0], epsilon=0.0)


def price_fixture(excess_ratio):
    # single MU transmitting at (1 + excess_ratio) * limit; sleeping AP 1 has
    # uplink block norm^2 = 0.2 and static power 2, so its price is
    # excess_ratio * 0.2 / 2
    ch = ChannelRealization(
        h=np.array([[1.0, np.sqrt(0.2)]]),
        g=np.array([[1.0, np.sqrt(0.2)]]),
        antennas_per_ap=(1, 1),
        seed=0,
    )
    p_tilde = [0.5 * (1.0 + excess_ratio)]
    return ch, p_tilde


def test_price_update_formula():
    ch, p_tilde = price_fixture(1.0)
    state, chosen = alg.price_update(ch, p_tilde, [0.5], [2.0, 2.0], bf.ActiveSet((0,)))
    assert state.violating == (0,)
    assert state.prices[1] == pytest.approx(0.1, rel=1e-12)
    assert chosen == 1


def test_price_update_linear_in_excess():
    ch, p1 = price_fixture(1.0)
    _, _ = alg.price_update(ch, p1, [0.5], [2.0, 2.0], bf.ActiveSet((0,)))
    s1, _ = alg.price_update(ch, p1, [0.5], [2.0, 2.0], bf.ActiveSet((0,)))
    ch2, p2 = price_fixture(2.0)
    s2, _ = alg.price_update(ch2, p2, [0.5], [2.0, 2.0], bf.ActiveSet((0,)))
    assert s2.prices[1] == pytest.approx(2.0 * s1.prices[1], rel=1e-12)


def test_price_update_tie_breaks_on_lowest_index():
    # two sleeping APs with identical blocks get identical prices
    ch = ChannelRealization(
        h=np.array([[1.0, 0.5, 0.5]]),
        g=np.array([[1.0, 0.5, 0.5]]),
        antennas_per_ap=(1, 1, 1),
        seed=0,
    )
    state, chosen = alg.price_update(ch, [1.0], [0.5], [2.0, 2.0, 2.0], bf.ActiveSet((0,)))
    assert state.prices[1] == state.prices[2]
    assert chosen == 1


def test_price_update_rejects_degenerate_calls():
    ch, p_tilde = price_fixture(1.0)
    with pytest.raises(ValueError):
        # nobody over the limit
        alg.price_update(ch, [0.4], [0.5], [2.0, 2.0], bf.ActiveSet((0,)))
    with pytest.raises(ValueError):
        # no AP left to wake
        alg.price_update(ch, p_tilde, [0.5], [2.0, 2.0], bf.ActiveSet((0, 1)))


def test_gso_params_validation():
    with pytest.raises(ValueError):
        alg.GsoParams(epsilon=0.0)
    with pytest.raises(ValueError):
        alg.GsoParams(convergence_eta=-1.0)
    with pytest.raises(ValueError):
        alg.GsoParams(l_max=0)
    with pytest.raises(ValueError):
        alg.GsoParams(penalty="l2")
    with pytest.raises(ValueError):
        alg.GsoParams(sparsity_threshold=1.0)


# ---------------------------------------------------------------------------
# single-AP and dominant-AP instances: every method must agree


def test_single_ap_all_methods_agree():
    scn, ch = make_instance(1, 1, scenario_seed=1, channel_seed=1)
    res = {
        "gso": alg.algorithm_gso(scn, ch),
        "rip": alg.algorithm_rip(scn, ch),
        "es": alg.exhaustive_search(scn, ch),
    }
    for name, r in res.items():
        assert r.feasible, name
        assert tuple(r.active) == (0,)
        b = r.objective
        assert b.total == pytest.approx(
            b.ap_static + b.dl_transmit + b.ul_weight * b.ul_transmit
        )
    totals = [r.objective.total for r in res.values()]
    assert max(totals) == pytest.approx(min(totals), rel=1e-6)
    # reciprocal channel and equal DL/UL targets make the two transmit
    # terms coincide
    es = res["es"].objective
    assert es.dl_transmit == pytest.approx(es.ul_transmit, rel=1e-6)


def dominant_toy():
    """Three APs, one MU sitting 14 m from AP 1; the other two APs are more
    than a kilometre away, so the singleton {1} wins by any measure."""
    cfg = sc.make_homogeneous_config(3, 1, noise_power=NOISE)
    scn = placed_scenario(
        cfg,
        [[-1200.0, -1200.0], [200.0, 300.0], [1200.0, 1200.0]],
        [[210.0, 310.0]],
    )
    return scn, sc.sample_channel(scn, seed=5)


def test_dominant_ap_toy_consensus():
    scn, ch = dominant_toy()
    es = alg.exhaustive_search(scn, ch)
    gso = alg.algorithm_gso(scn, ch)
    rip = alg.algorithm_rip(scn, ch)
    assert tuple(es.active) == (1,)
    assert tuple(gso.active) == (1,)
    assert tuple(rip.active) == (1,)
    assert gso.objective.total == pytest.approx(es.objective.total, rel=1e-6)
    assert rip.objective.total == pytest.approx(es.objective.total, rel=1e-6)


def test_reweight_product_converges_to_static_power():
    # at a fixed point of the reweighting map, beta_n * t_n recovers the
    # static power of every AP the penalty kept (and ~0 for silenced ones)
    scn, ch = dominant_toy()
    res = alg.algorithm_gso(scn, ch)
    rw = [ev for ev in trace_events(res, "reweight") if "beta" in ev]
    assert len(rw) >= 2
    beta = np.array(rw[-1]["beta"])
    t = np.array(rw[-1]["t"])
    prod = beta * t
    assert prod[1] == pytest.approx(2.0, rel=2e-2)
    assert prod[0] < 1e-6 and prod[2] < 1e-6


def test_rip_removes_at_most_n_minus_one():
    scn, ch = dominant_toy()
    res = alg.algorithm_rip(scn, ch)
    removals = [ev["removed"] for ev in trace_events(res, "eliminate") if "removed" in ev]
    assert 1 <= len(removals) <= 2
    assert 1 not in removals


# ---------------------------------------------------------------------------
# GSO uplink repair path


def repair_instance():
    """MU 1 sits between AP 0 and AP 2; serving everyone from AP 0 alone is
    downlink-cheap but pushes MU 1 over its uplink power budget, which only
    waking AP 2 can fix. Orthogonal per-MU patterns keep the two links from
    interfering, so the geometry alone decides."""
    cfg = sc.make_homogeneous_config(3, 2, noise_power=NOISE, qos_dl_db=4.0, qos_ul_db=13.0)
    scn = placed_scenario(
        cfg,
        [[-800.0, 0.0], [1200.0, 1200.0], [500.0, 0.0]],
        [[-800.0, 1000.0], [300.0, 0.0]],
    )
    ch = patterned_channel(scn, [[1.0, 1.0], [1.0, -1.0]])
    return scn, ch


def test_gso_price_repair_wakes_priced_ap():
    scn, ch = repair_instance()
    res = alg.algorithm_gso(scn, ch)
    assert res.feasible
    assert tuple(res.active) == (0, 2)

    th = trace_events(res, "threshold")[0]
    assert th["kept"] == [0]

    repairs = [ev for ev in trace_events(res, "repair") if ev.get("added") is not None]
    assert len(repairs) == 1
    assert repairs[0]["violating"] == [1]
    assert repairs[0]["added"] == 2
    prices = repairs[0]["prices"]
    assert prices["2"] > prices["1"]

    assert np.all(res.solution.p_ul <= np.asarray(scn.config.mu_tx_limit) * (1 + 1e-9))


def test_gso_repair_termination_record():
    scn, ch = repair_instance()
    res = alg.algorithm_gso(scn, ch)
    # the loop ends with an explicit all-within-limits record
    closing = trace_events(res, "repair")[-1]
    assert closing["violating"] == []
    assert max(closing["p_ul"]) <= 0.5


# ---------------------------------------------------------------------------
# determinism


def test_gso_is_deterministic():
    scn, ch = make_instance(4, 2, scenario_seed=0, channel_seed=50, qos_dl_db=6.0, qos_ul_db=6.0)
    a = alg.algorithm_gso(scn, ch)
    b = alg.algorithm_gso(scn, ch)
    assert tuple(a.active) == tuple(b.active)
    assert a.trace == b.trace
    assert a.objective.total == b.objective.total


def test_rip_is_deterministic():
    scn, ch = make_instance(4, 2, scenario_seed=1, channel_seed=51, qos_dl_db=6.0, qos_ul_db=6.0)
    a = alg.algorithm_rip(scn, ch)
    b = alg.algorithm_rip(scn, ch)
    assert tuple(a.active) == tuple(b.active)
    assert a.trace == b.trace


# ---------------------------------------------------------------------------
# exhaustive search and paired orderings


def test_exhaustive_search_prefers_cheap_static_power():
    # AP 1 is closer (cheaper transmit) but burns 10 W static vs 2; the
    # search must pick the far AP on total power
    cfg = sc.make_homogeneous_config(2, 1, noise_power=NOISE)
    cfg = dataclasses.replace(cfg, ap_static_power=(2.0, 10.0))
    scn = placed_scenario(cfg, [[400.0, 0.0], [150.0, 0.0]], [[0.0, 0.0]])
    ch = sc.sample_channel(scn, seed=3)
    res = alg.exhaustive_search(scn, ch)
    assert tuple(res.active) == (0,)

    records = {tuple(ev["subset"]): ev for ev in trace_events(res, "search")}
    assert set(records) == {(0,), (1,), (0, 1)}
    assert records[(1,)]["feasible"]
    assert records[(1,)]["total"] > records[(0,)]["total"]


def test_exhaustive_search_cap():
    scn, ch = make_instance(11, 1, scenario_seed=0, channel_seed=0)
    with pytest.raises(ValueError, match="cap"):
        alg.exhaustive_search(scn, ch)


def test_exhaustive_search_lower_bounds_every_method():
    for seed in (0, 1, 2):
        scn, ch = make_instance(
            4, 2, scenario_seed=seed, channel_seed=50 + seed, qos_dl_db=6.0, qos_ul_db=6.0
        )
        es = alg.exhaustive_search(scn, ch)
        assert es.feasible
        for other in (
            alg.algorithm_gso(scn, ch),
            alg.algorithm_rip(scn, ch),
            alg.joint_processing(scn, ch),
        ):
            if not other.feasible:
                continue
            assert es.objective.total <= other.objective.total * (1 + 1e-6)
            # independent feasibility recheck of the reported active set
            report = bf.check_joint_feasibility(ch, scn.config, other.active)
            assert report.feasible


def test_joint_processing_activates_everything():
    scn, ch = make_instance(4, 2, scenario_seed=2, channel_seed=52, qos_dl_db=6.0, qos_ul_db=6.0)
    jp = alg.joint_processing(scn, ch)
    assert tuple(jp.active) == (0, 1, 2, 3)
    ref = alg.evaluate_active_set(scn, ch, bf.ActiveSet((0, 1, 2, 3)))
    assert jp.feasible == ref.feasible
    assert jp.objective.total == pytest.approx(ref.objective.total, rel=1e-9)


# ---------------------------------------------------------------------------
# signal-strength baselines


def strength_fixture():
    cfg = sc.make_homogeneous_config(2, 1, noise_power=NOISE)
    scn = placed_scenario(cfg, [[-300.0, 0.0], [300.0, 0.0]], [[0.0, 0.0]])
    h = np.array([[1.0, 1.0, 1.0, -1.0]]) * 1e-4  # equal block norms
    ch = ChannelRealization(h=h, g=h.copy(), antennas_per_ap=(2, 2), seed=0)
    return scn, ch


def test_ap_strength_selection_weights_reference_power():
    scn, ch = strength_fixture()
    # equal channel gains: the reference transmit power decides
    assert tuple(alg.apirss_select(scn, ch, ref_power=(20.0, 1.0))) == (0,)
    assert tuple(alg.apirss_select(scn, ch, ref_power=(1.0, 20.0))) == (1,)
    # exact tie goes to the lowest index
    assert tuple(alg.apirss_select(scn, ch)) == (0,)
    with pytest.raises(ValueError):
        alg.apirss_select(scn, ch, ref_power=(1.0, 2.0, 3.0))


def test_equal_reference_matches_mu_strength_on_reciprocal_channel():
    scn, ch = strength_fixture()
    assert tuple(alg.apirss_select(scn, ch)) == tuple(alg.muirss_select(scn, ch))


def test_mu_strength_selects_nearest_ap_under_unit_fading():
    cfg = sc.make_homogeneous_config(3, 2, noise_power=NOISE)
    scn = placed_scenario(
        cfg,
        [[-900.0, 0.0], [0.0, 0.0], [900.0, 0.0]],
        [[-850.0, 40.0], [880.0, -30.0]],
    )
    ch = patterned_channel(scn, [[1.0, 1.0], [1.0, 1.0]])
    active = alg.muirss_select(scn, ch)
    assert tuple(active) == (0, 2)
    assert len(tuple(active)) <= min(3, 2)


# ---------------------------------------------------------------------------
# downlink-only variant


def test_dl_only_matches_joint_when_uplink_is_slack():
    # 0 dB uplink targets never bind, so selecting on the downlink alone
    # finds the same association at the same cost
    for seed in (1, 4):
        scn, ch = make_instance(
            4, 2, scenario_seed=seed, channel_seed=300 + seed, qos_dl_db=8.0, qos_ul_db=0.0
        )
        joint = alg.algorithm_gso(scn, ch)
        dl = alg.algorithm_gso_dl_only(scn, ch)
        assert joint.feasible and dl.feasible
        assert tuple(dl.active) == tuple(joint.active)
        assert dl.objective.total == pytest.approx(joint.objective.total, rel=1e-5)
        # per-AP downlink budgets hold
        w = dl.solution.w_dl
        for n, slc in enumerate(ch.ap_slices):
            p_n = float(np.sum(np.abs(w[:, slc]) ** 2))
            assert p_n <= scn.config.ap_tx_limit[n] * (1 + 1e-6)


def test_dl_only_misses_uplink_feasibility_more_often():
    # uplink-dominant targets: ignoring the uplink while choosing the active
    # set must fail the uplink check at least as often as the joint design,
    # and strictly more often on this family
    fails = {"joint": 0, "dl_only": 0}
    for seed in (1, 4, 7, 8, 12):
        scn, ch = make_instance(
            5, 3, scenario_seed=seed, channel_seed=200 + seed, qos_dl_db=4.0, qos_ul_db=12.0
        )
        joint = alg.algorithm_gso(scn, ch)
        pre = joint.trace[0]
        assert pre["dl_feasible"] and pre["ul_feasible"]
        dl = alg.algorithm_gso_dl_only(scn, ch)
        fails["joint"] += int(not joint.feasible)
        fails["dl_only"] += int(not dl.feasible)
    assert fails["joint"] == 0
    assert fails["dl_only"] >= 2


# ---------------------------------------------------------------------------
# traces


def test_export_trace_roundtrip(tmp_path):
    scn, ch = make_instance(1, 1, scenario_seed=1, channel_seed=1)
    res = alg.algorithm_gso(scn, ch)
    out = tmp_path / "trace.json"
    alg.export_trace(res, out)
    data = json.loads(out.read_text())
    assert data["active"] == [0]
    assert data["feasible"] is True
    assert data["trace"]
    assert all("phase" in ev for ev in data["trace"])
    phases = {ev["phase"] for ev in data["trace"]}
    assert {"precheck", "reweight", "threshold", "verify"} <= phases
