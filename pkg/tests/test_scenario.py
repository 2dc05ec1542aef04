"""Tests for network generation and the fading channel model."""

import json

import numpy as np
import pytest

from cranopt.scenario import (
    FDD_INDEPENDENT,
    TDD_RECIPROCAL,
    ChannelRealization,
    NetworkConfig,
    db_to_linear,
    generate_scenario,
    link_distances,
    load_config,
    make_heterogeneous_config,
    make_homogeneous_config,
    pathloss_gains,
    sample_channel,
    save_config,
)


def test_pathloss_formula():
    # alpha = 3 at 10 m: gain must be exactly 1e-3
    cfg = make_homogeneous_config(1, 1, pathloss_exponent=3.0)
    scen = generate_scenario(cfg, 0)
    scen = type(scen)(
        config=cfg,
        ap_positions=np.array([[0.0, 0.0]]),
        mu_positions=np.array([[10.0, 0.0]]),
        seed=0,
    )
    assert pathloss_gains(scen)[0, 0] == pytest.approx(1e-3, rel=1e-12)


def test_distance_floor():
    cfg = make_homogeneous_config(1, 1)
    scen = generate_scenario(cfg, 0)
    scen = type(scen)(
        config=cfg,
        ap_positions=np.array([[5.0, 5.0]]),
        mu_positions=np.array([[5.0, 5.0]]),
        seed=0,
    )
    assert link_distances(scen)[0, 0] == 1.0
    assert pathloss_gains(scen)[0, 0] == 1.0


def test_pathloss_monotone_in_distance():
    cfg = make_homogeneous_config(3, 1)
    scen = generate_scenario(cfg, 0)
    scen = type(scen)(
        config=cfg,
        ap_positions=np.array([[100.0, 0.0], [200.0, 0.0], [400.0, 0.0]]),
        mu_positions=np.array([[0.0, 0.0]]),
        seed=0,
    )
    g = pathloss_gains(scen)[0]
    assert g[0] > g[1] > g[2]


def test_fading_factor_unit_mean():
    # |h|^2 * d^alpha averaged over many draws approaches 1
    cfg = make_homogeneous_config(1, 1, antennas_per_ap=1)
    scen = generate_scenario(cfg, 42)
    base = pathloss_gains(scen)[0, 0]
    total = 0.0
    for k in range(2000):
        ch = sample_channel(scen, k)
        total += abs(ch.h[0, 0]) ** 2 / base
    assert total / 2000 == pytest.approx(1.0, abs=0.05)

    # many MUs against one AP gives the tight estimate cheaply
    big = make_homogeneous_config(1, 500, antennas_per_ap=1)
    bscen = generate_scenario(big, 3)
    gains = pathloss_gains(bscen)[:, 0]
    vals = []
    for k in range(200):
        ch = sample_channel(bscen, k)
        vals.append(np.abs(ch.h[:, 0]) ** 2 / gains)
    mean_big = np.mean(vals)  # 100k samples total
    assert mean_big == pytest.approx(1.0, abs=0.02)


def test_sampling_deterministic():
    cfg = make_homogeneous_config(3, 2)
    s1 = generate_scenario(cfg, 5)
    s2 = generate_scenario(cfg, 5)
    assert np.array_equal(s1.ap_positions, s2.ap_positions)
    assert np.array_equal(s1.mu_positions, s2.mu_positions)
    c1 = sample_channel(s1, 17)
    c2 = sample_channel(s2, 17)
    assert np.array_equal(c1.h, c2.h)
    assert np.array_equal(c1.g, c2.g)
    c3 = sample_channel(s1, 18)
    assert not np.array_equal(c1.h, c3.h)


def test_positions_inside_area():
    cfg = make_homogeneous_config(10, 20, area_side=100.0)
    scen = generate_scenario(cfg, 1)
    assert np.all(np.abs(scen.ap_positions) <= 50.0)
    assert np.all(np.abs(scen.mu_positions) <= 50.0)


def test_tdd_reciprocity_exact():
    cfg = make_homogeneous_config(3, 4)
    assert cfg.duplex_mode == TDD_RECIPROCAL
    ch = sample_channel(generate_scenario(cfg, 2), 3)
    assert np.array_equal(ch.g, np.conj(ch.h))


def test_fdd_draws_independent_uplink():
    cfg = make_homogeneous_config(3, 4, duplex_mode=FDD_INDEPENDENT)
    ch = sample_channel(generate_scenario(cfg, 2), 3)
    assert not np.allclose(ch.g, np.conj(ch.h))
    # magnitudes differ too: fresh fading, not just fresh phases
    assert not np.allclose(np.abs(ch.g), np.abs(ch.h))


def test_fading_shared_within_ap_block():
    cfg = make_homogeneous_config(3, 5, antennas_per_ap=4)
    ch = sample_channel(generate_scenario(cfg, 8), 9)
    mags = np.abs(ch.h)
    for sl in ch.ap_slices:
        block = mags[:, sl]
        assert np.allclose(block, block[:, :1])
        # phases are i.i.d. per antenna, so entries themselves differ
        assert not np.allclose(ch.h[:, sl], ch.h[:, sl][:, :1])


def test_heterogeneous_fixed_positions_and_powers():
    cfg = make_heterogeneous_config(6, 4)
    scen = generate_scenario(cfg, 11)
    assert np.array_equal(scen.ap_positions[:2], [[-750.0, 0.0], [750.0, 0.0]])
    assert cfg.ap_static_power == (50.0,) * 2 + (2.0,) * 4
    assert cfg.ap_tx_limit == (20.0,) * 2 + (1.0,) * 4
    # remaining APs are random and vary with the scenario seed
    other = generate_scenario(cfg, 12)
    assert np.array_equal(other.ap_positions[:2], scen.ap_positions[:2])
    assert not np.array_equal(other.ap_positions[2:], scen.ap_positions[2:])


def test_homogeneous_defaults():
    cfg = make_homogeneous_config(4, 3)
    assert cfg.antennas_per_ap == (2, 2, 2, 2)
    assert cfg.ap_static_power == (2.0,) * 4
    assert cfg.ap_tx_limit == (1.0,) * 4
    assert cfg.mu_tx_limit == (0.5,) * 3
    assert cfg.noise_power == 1e-8
    assert cfg.area_side == 3000.0
    assert cfg.ul_weight == 1.0
    assert cfg.qos_dl[0] == pytest.approx(db_to_linear(8.0))


def test_config_validation_errors():
    with pytest.raises(ValueError):
        make_homogeneous_config(0, 3)
    with pytest.raises(ValueError):
        make_homogeneous_config(3, 0)
    with pytest.raises(ValueError):
        make_homogeneous_config(3, 2, ap_static_power=-1.0)
    with pytest.raises(ValueError):
        make_homogeneous_config(3, 2, mu_tx_limit=0.0)
    with pytest.raises(ValueError):
        make_homogeneous_config(3, 2, duplex_mode="half-duplex")
    with pytest.raises(ValueError):
        make_homogeneous_config(3, 2, ul_weight=-0.5)
    with pytest.raises(ValueError):
        NetworkConfig(
            num_aps=1,
            num_mus=1,
            antennas_per_ap=(2,),
            ap_static_power=(1.0,),
            ap_tx_limit=(1.0,),
            mu_tx_limit=(0.5,),
            qos_dl=(1.0,),
            qos_ul=(1.0,),
            fixed_ap_positions=((0.0, 0.0), (1.0, 1.0)),
        )


def test_channel_blocks_must_partition():
    with pytest.raises(ValueError):
        ChannelRealization(
            h=np.ones((2, 4), dtype=complex),
            g=np.ones((2, 4), dtype=complex),
            antennas_per_ap=(2, 3),
            seed=0,
        )


def test_config_json_round_trip(tmp_path):
    cfg = make_heterogeneous_config(5, 3, qos_dl_db=6.0, qos_ul_db=12.0, ul_weight=2.0)
    path = tmp_path / "net.json"
    save_config(cfg, str(path))
    loaded = load_config(str(path))
    assert loaded == cfg
    # stored in dB on disk, linear in memory
    raw = json.loads(path.read_text())
    assert raw["qos_dl_db"][0] == pytest.approx(6.0)
    assert loaded.qos_dl[0] == pytest.approx(10.0 ** 0.6)
    assert loaded.qos_ul[0] == pytest.approx(10.0 ** 1.2)


def test_scenario_arrays_read_only():
    cfg = make_homogeneous_config(2, 2)
    scen = generate_scenario(cfg, 0)
    with pytest.raises(ValueError):
        scen.ap_positions[0, 0] = 99.0
    ch = sample_channel(scen, 1)
    with pytest.raises(ValueError):
        ch.h[0, 0] = 0.0
