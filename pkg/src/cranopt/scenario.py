"""Network layouts and fading channel realizations.

The simulation geometry is a square service area with N multi-antenna access
points (APs) and K single-antenna mobile users (MUs), all placed uniformly at
random unless an AP has a pinned position (high-power APs in the
heterogeneous setup sit at fixed coordinates).  Channels follow a simplified
model: distance-dependent attenuation d^-alpha times a unit-mean exponential
per-link fading factor, with i.i.d. uniform phases per antenna.  Under
TDD-reciprocal duplexing the uplink channel is the entrywise conjugate of the
downlink one; FDD-independent mode draws the uplink fresh.

Everything here is deterministic given (config, seed): the same inputs
reproduce positions and channels bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Tuple

import numpy as np

TDD_RECIPROCAL = "TDD-reciprocal"
FDD_INDEPENDENT = "FDD-independent"

# pathloss floor: distances are clamped to 1 m so coincident positions do
# not produce a singular gain
MIN_DISTANCE = 1.0


def db_to_linear(x_db) -> np.ndarray:
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x) -> np.ndarray:
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def _broadcast(value, n: int, name: str) -> Tuple[float, ...]:
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size == 1:
        arr = np.full(n, arr[0])
    if arr.size != n:
        raise ValueError(f"{name} must have length {n}, got {arr.size}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class NetworkConfig:
    """Static description of the network and the optimization targets.

    SINR targets are stored in linear scale; dB values from configuration
    files are converted exactly once at load time.  Power values are watts,
    distances meters.
    """

    num_aps: int
    num_mus: int
    antennas_per_ap: Tuple[int, ...]
    area_side: float = 3000.0
    pathloss_exponent: float = 3.0
    noise_power: float = 1e-8
    ap_static_power: Tuple[float, ...] = ()
    ap_tx_limit: Tuple[float, ...] = ()
    mu_tx_limit: Tuple[float, ...] = ()
    qos_dl: Tuple[float, ...] = ()
    qos_ul: Tuple[float, ...] = ()
    ul_weight: float = 1.0
    duplex_mode: str = TDD_RECIPROCAL
    fixed_ap_positions: Tuple[Tuple[float, float], ...] = ()
    p_olt: float = 0.0  # reporting constant, not optimized

    def __post_init__(self):
        n, k = self.num_aps, self.num_mus
        if n < 1:
            raise ValueError("need at least one AP")
        if k < 1:
            raise ValueError("need at least one MU")
        ants = tuple(int(m) for m in np.atleast_1d(self.antennas_per_ap))
        if len(ants) == 1 and n > 1:
            ants = ants * n
        if len(ants) != n or any(m < 1 for m in ants):
            raise ValueError("antennas_per_ap must be positive, one per AP")
        object.__setattr__(self, "antennas_per_ap", ants)
        object.__setattr__(
            self, "ap_static_power", _broadcast(self.ap_static_power, n, "ap_static_power")
        )
        object.__setattr__(
            self, "ap_tx_limit", _broadcast(self.ap_tx_limit, n, "ap_tx_limit")
        )
        object.__setattr__(
            self, "mu_tx_limit", _broadcast(self.mu_tx_limit, k, "mu_tx_limit")
        )
        object.__setattr__(self, "qos_dl", _broadcast(self.qos_dl, k, "qos_dl"))
        object.__setattr__(self, "qos_ul", _broadcast(self.qos_ul, k, "qos_ul"))
        for name in ("ap_static_power", "ap_tx_limit", "mu_tx_limit", "qos_dl", "qos_ul"):
            if any(v <= 0.0 for v in getattr(self, name)):
                raise ValueError(f"{name} entries must be strictly positive")
        if self.area_side <= 0 or self.pathloss_exponent <= 0 or self.noise_power <= 0:
            raise ValueError("area_side, pathloss_exponent, noise_power must be positive")
        if self.ul_weight < 0:
            raise ValueError("ul_weight must be nonnegative")
        if self.duplex_mode not in (TDD_RECIPROCAL, FDD_INDEPENDENT):
            raise ValueError(f"unknown duplex_mode {self.duplex_mode!r}")
        fixed = tuple(
            (float(x), float(y)) for x, y in self.fixed_ap_positions
        )
        if len(fixed) > n:
            raise ValueError("more fixed AP positions than APs")
        object.__setattr__(self, "fixed_ap_positions", fixed)

    @property
    def total_antennas(self) -> int:
        return sum(self.antennas_per_ap)

    @property
    def ap_slices(self) -> Tuple[slice, ...]:
        """Antenna index ranges of each AP within a stacked length-M vector."""
        out = []
        start = 0
        for m in self.antennas_per_ap:
            out.append(slice(start, start + m))
            start += m
        return tuple(out)

    def to_json_dict(self) -> dict:
        return {
            "num_aps": self.num_aps,
            "num_mus": self.num_mus,
            "antennas_per_ap": list(self.antennas_per_ap),
            "area_side": self.area_side,
            "pathloss_exponent": self.pathloss_exponent,
            "noise_power": self.noise_power,
            "ap_static_power": list(self.ap_static_power),
            "ap_tx_limit": list(self.ap_tx_limit),
            "mu_tx_limit": list(self.mu_tx_limit),
            "qos_dl_db": linear_to_db(self.qos_dl).tolist(),
            "qos_ul_db": linear_to_db(self.qos_ul).tolist(),
            "ul_weight": self.ul_weight,
            "duplex_mode": self.duplex_mode,
            "fixed_ap_positions": [list(p) for p in self.fixed_ap_positions],
            "p_olt": self.p_olt,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "NetworkConfig":
        d = dict(d)
        # SINR targets live in dB in config files, linear in memory
        d["qos_dl"] = db_to_linear(d.pop("qos_dl_db"))
        d["qos_ul"] = db_to_linear(d.pop("qos_ul_db"))
        d["antennas_per_ap"] = tuple(d["antennas_per_ap"])
        d["fixed_ap_positions"] = tuple(
            tuple(p) for p in d.get("fixed_ap_positions", [])
        )
        for name in ("ap_static_power", "ap_tx_limit", "mu_tx_limit"):
            d[name] = tuple(d[name])
        return NetworkConfig(**d)


def make_homogeneous_config(
    num_aps: int,
    num_mus: int,
    qos_dl_db: float = 8.0,
    qos_ul_db: float = 8.0,
    ul_weight: float = 1.0,
    antennas_per_ap: int = 2,
    ap_static_power: float = 2.0,
    ap_tx_limit: float = 1.0,
    mu_tx_limit: float = 0.5,
    **kwargs,
) -> NetworkConfig:
    """All-identical APs: 2 W static, 1 W transmit budget by default."""
    return NetworkConfig(
        num_aps=num_aps,
        num_mus=num_mus,
        antennas_per_ap=(antennas_per_ap,) * num_aps,
        ap_static_power=(ap_static_power,) * num_aps,
        ap_tx_limit=(ap_tx_limit,) * num_aps,
        mu_tx_limit=(mu_tx_limit,) * num_mus,
        qos_dl=tuple(np.full(num_mus, db_to_linear(qos_dl_db))),
        qos_ul=tuple(np.full(num_mus, db_to_linear(qos_ul_db))),
        ul_weight=ul_weight,
        **kwargs,
    )


def make_heterogeneous_config(
    num_aps: int,
    num_mus: int,
    qos_dl_db: float = 8.0,
    qos_ul_db: float = 8.0,
    ul_weight: float = 1.0,
    antennas_per_ap: int = 2,
    hap_static_power: float = 50.0,
    hap_tx_limit: float = 20.0,
    lap_static_power: float = 2.0,
    lap_tx_limit: float = 1.0,
    mu_tx_limit: float = 0.5,
    **kwargs,
) -> NetworkConfig:
    """Two high-power APs pinned at (-750, 0) and (750, 0), rest low-power."""
    if num_aps < 2:
        raise ValueError("heterogeneous setup needs at least the two HAPs")
    n_hap = 2
    static = (hap_static_power,) * n_hap + (lap_static_power,) * (num_aps - n_hap)
    txlim = (hap_tx_limit,) * n_hap + (lap_tx_limit,) * (num_aps - n_hap)
    return NetworkConfig(
        num_aps=num_aps,
        num_mus=num_mus,
        antennas_per_ap=(antennas_per_ap,) * num_aps,
        ap_static_power=static,
        ap_tx_limit=txlim,
        mu_tx_limit=(mu_tx_limit,) * num_mus,
        qos_dl=tuple(np.full(num_mus, db_to_linear(qos_dl_db))),
        qos_ul=tuple(np.full(num_mus, db_to_linear(qos_ul_db))),
        ul_weight=ul_weight,
        fixed_ap_positions=((-750.0, 0.0), (750.0, 0.0)),
        **kwargs,
    )


@dataclass(frozen=True)
class Scenario:
    """A placed network: configuration plus AP/MU coordinates."""

    config: NetworkConfig
    ap_positions: np.ndarray  # (N, 2) meters
    mu_positions: np.ndarray  # (K, 2) meters
    seed: int

    def __post_init__(self):
        ap = np.array(self.ap_positions, dtype=float)
        mu = np.array(self.mu_positions, dtype=float)
        if ap.shape != (self.config.num_aps, 2):
            raise ValueError("ap_positions shape mismatch")
        if mu.shape != (self.config.num_mus, 2):
            raise ValueError("mu_positions shape mismatch")
        half = self.config.area_side / 2.0
        if np.abs(np.concatenate([ap, mu])).max() > half + 1e-9:
            raise ValueError("positions outside the service area")
        ap.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "ap_positions", ap)
        object.__setattr__(self, "mu_positions", mu)


@dataclass(frozen=True)
class ChannelRealization:
    """One fading draw: DL vectors h_i and UL vectors g_i, stacked over APs.

    h[i] is the length-M downlink channel of MU i (M = total antennas),
    partitioned into per-AP blocks by ``antennas_per_ap``; g[i] is the uplink
    counterpart.  Under TDD reciprocity g = conj(h) exactly.
    """

    h: np.ndarray  # (K, M) complex
    g: np.ndarray  # (K, M) complex
    antennas_per_ap: Tuple[int, ...]
    seed: int

    def __post_init__(self):
        h = np.array(self.h, dtype=complex)
        g = np.array(self.g, dtype=complex)
        if h.shape != g.shape or h.ndim != 2:
            raise ValueError("h and g must be (K, M) arrays of equal shape")
        if sum(self.antennas_per_ap) != h.shape[1]:
            raise ValueError("antenna blocks do not partition the channel vectors")
        h.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g", g)
        object.__setattr__(
            self, "antennas_per_ap", tuple(int(m) for m in self.antennas_per_ap)
        )

    @property
    def num_mus(self) -> int:
        return self.h.shape[0]

    @property
    def ap_slices(self) -> Tuple[slice, ...]:
        out = []
        start = 0
        for m in self.antennas_per_ap:
            out.append(slice(start, start + m))
            start += m
        return tuple(out)


def generate_scenario(config: NetworkConfig, seed: int) -> Scenario:
    """Place APs and MUs uniformly in the square; fixed AP positions first."""
    rng = np.random.default_rng(seed)
    half = config.area_side / 2.0
    n_fixed = len(config.fixed_ap_positions)
    ap = np.empty((config.num_aps, 2))
    if n_fixed:
        ap[:n_fixed] = np.asarray(config.fixed_ap_positions, dtype=float)
    if config.num_aps > n_fixed:
        ap[n_fixed:] = rng.uniform(-half, half, size=(config.num_aps - n_fixed, 2))
    mu = rng.uniform(-half, half, size=(config.num_mus, 2))
    return Scenario(config=config, ap_positions=ap, mu_positions=mu, seed=int(seed))


def link_distances(scenario: Scenario) -> np.ndarray:
    """(K, N) MU-AP distances in meters, clamped at the 1 m floor."""
    diff = scenario.mu_positions[:, None, :] - scenario.ap_positions[None, :, :]
    return np.maximum(np.linalg.norm(diff, axis=2), MIN_DISTANCE)


def pathloss_gains(scenario: Scenario) -> np.ndarray:
    """(K, N) distance-based power gains d^-alpha (unit fading)."""
    return link_distances(scenario) ** (-scenario.config.pathloss_exponent)


def sample_channel(scenario: Scenario, seed: int) -> ChannelRealization:
    """Draw one channel realization.

    Per MU-AP link the power gain is d^-alpha times an Exp(1) factor shared
    by that AP's antennas; each antenna entry gets an independent uniform
    phase.  TDD-reciprocal mode sets g = conj(h); FDD-independent redraws
    the uplink fading and phases from the same stream.
    """
    cfg = scenario.config
    K, N, M = cfg.num_mus, cfg.num_aps, cfg.total_antennas
    rng = np.random.default_rng(seed)
    gains = pathloss_gains(scenario)

    def draw():
        fading = rng.exponential(1.0, size=(K, N))
        amp = np.sqrt(gains * fading)  # per-link amplitude
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(K, M))
        ch = np.exp(1j * phases)
        for n, sl in enumerate(cfg.ap_slices):
            ch[:, sl] *= amp[:, n][:, None]
        return ch

    h = draw()
    if cfg.duplex_mode == TDD_RECIPROCAL:
        g = np.conj(h)
    else:
        g = draw()
    return ChannelRealization(
        h=h, g=g, antennas_per_ap=cfg.antennas_per_ap, seed=int(seed)
    )


def load_config(path: str) -> NetworkConfig:
    with open(path) as f:
        return NetworkConfig.from_json_dict(json.load(f))


def save_config(config: NetworkConfig, path: str) -> None:
    with open(path, "w") as f:
        json.dump(config.to_json_dict(), f, indent=2)
