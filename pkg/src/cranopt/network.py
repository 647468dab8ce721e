"""Cloud-RAN topologies, channel realizations, power accounting."""

from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np

from .rng import complex_normal, stream


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclasses.dataclass(frozen=True)
class ChannelModel:
    """Path loss ``intercept + slope*log10(d_km)`` dB, log-normal shadowing, Rayleigh fading."""

    pathloss_intercept_db: float = 128.1
    pathloss_slope_db: float = 37.6
    shadowing_std_db: float = 8.0
    min_distance_m: float = 10.0

    def large_scale(self, dist_m: np.ndarray, shadow_db: np.ndarray) -> np.ndarray:
        d_km = np.maximum(dist_m, self.min_distance_m) / 1000.0
        loss_db = self.pathloss_intercept_db + self.pathloss_slope_db * np.log10(d_km) - shadow_db
        return 10.0 ** (-loss_db / 10.0)


@dataclasses.dataclass(frozen=True)
class Topology:
    rrh_positions: np.ndarray  # (L, 2) meters
    user_positions: np.ndarray  # (K, 2) meters
    antennas: tuple[int, ...]

    @property
    def L(self) -> int:
        return len(self.rrh_positions)

    @property
    def K(self) -> int:
        return len(self.user_positions)

    @property
    def N(self) -> int:
        return int(sum(self.antennas))

    def distances(self) -> np.ndarray:
        diff = self.user_positions[:, None, :] - self.rrh_positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)


def antenna_groups(antennas: Sequence[int]) -> list[np.ndarray]:
    """Row indices of the aggregate beamformer belonging to each RRH."""
    offs = np.concatenate(([0], np.cumsum(antennas)))
    return [np.arange(offs[l], offs[l + 1]) for l in range(len(antennas))]


def generate_topology(seed: int, L: int, K: int, region_half_width: float = 1000.0, antennas=1) -> Topology:
    if L < 1 or K < 0:
        raise ValueError("need at least one RRH")
    rng = stream(seed, "topology")
    rrh = rng.uniform(-region_half_width, region_half_width, size=(L, 2))
    users = rng.uniform(-region_half_width, region_half_width, size=(K, 2))
    ant = tuple([int(antennas)] * L) if np.isscalar(antennas) else tuple(int(a) for a in antennas)
    return Topology(rrh, users, ant)


def sample_large_scale(topo: Topology, seed: int, model: ChannelModel = ChannelModel()) -> np.ndarray:
    shadow = stream(seed, "shadowing").normal(0.0, model.shadowing_std_db, size=(topo.K, topo.L))
    return model.large_scale(topo.distances(), shadow)


def expand_gains(g: np.ndarray, antennas: Sequence[int]) -> np.ndarray:
    """Per-RRH gains ``(K, L)`` -> per-antenna variances ``(K, N)``."""
    return np.repeat(g, antennas, axis=1)


def sample_channel(topo: Topology, seed: int, model: ChannelModel = ChannelModel(), draw: int = 0):
    """Return ``(H, g)``; ``H[k]`` is user k's aggregate channel across all RRH antennas."""
    g = sample_large_scale(topo, seed, model)
    var = expand_gains(g, topo.antennas)
    H = complex_normal(stream(seed, "small_scale", draw), var.shape, var)
    return H, g


@dataclasses.dataclass(frozen=True)
class PowerModel:
    fronthaul_w: np.ndarray  # P^c_l
    drain_efficiency: np.ndarray  # eta_l
    p_max_w: np.ndarray  # per-RRH transmit cap


@dataclasses.dataclass(frozen=True)
class NetworkInstance:
    topology: Topology
    power: PowerModel
    gamma: np.ndarray  # linear SINR targets
    noise_w: np.ndarray  # sigma_k^2
    H: np.ndarray  # (K, N) complex
    g: np.ndarray  # (K, L)

    def __post_init__(self):
        if np.any(self.power.fronthaul_w < 0) or np.any(self.power.p_max_w <= 0):
            raise ValueError("power model values out of range")
        if np.any(self.noise_w <= 0) or np.any(self.gamma < 0):
            raise ValueError("QoS values out of range")
        if self.H.shape != (self.topology.K, self.topology.N):
            raise ValueError("channel shape does not match topology")

    @property
    def L(self) -> int:
        return self.topology.L

    @property
    def K(self) -> int:
        return self.topology.K

    @property
    def N(self) -> int:
        return self.topology.N

    @property
    def groups(self) -> list[np.ndarray]:
        return antenna_groups(self.topology.antennas)

    def with_gamma(self, gamma) -> "NetworkInstance":
        gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (self.K,)).copy()
        return dataclasses.replace(self, gamma=gamma)

    def with_power(self, **kw) -> "NetworkInstance":
        return dataclasses.replace(self, power=dataclasses.replace(self.power, **kw))

    def to_dict(self) -> dict:
        return {
            "rrh_positions": self.topology.rrh_positions.tolist(),
            "user_positions": self.topology.user_positions.tolist(),
            "antennas": list(self.topology.antennas),
            "fronthaul_w": self.power.fronthaul_w.tolist(),
            "drain_efficiency": self.power.drain_efficiency.tolist(),
            "p_max_w": self.power.p_max_w.tolist(),
            "gamma": self.gamma.tolist(),
            "noise_w": self.noise_w.tolist(),
            "H_re": self.H.real.tolist(),
            "H_im": self.H.imag.tolist(),
            "g": self.g.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkInstance":
        topo = Topology(np.array(d["rrh_positions"], float), np.array(d["user_positions"], float), tuple(d["antennas"]))
        power = PowerModel(np.array(d["fronthaul_w"], float), np.array(d["drain_efficiency"], float), np.array(d["p_max_w"], float))
        H = np.array(d["H_re"], float) + 1j * np.array(d["H_im"], float)
        return cls(topo, power, np.array(d["gamma"], float), np.array(d["noise_w"], float), H.reshape(topo.K, topo.N), np.array(d["g"], float).reshape(topo.K, topo.L))


DEFAULT_NOISE_DBM = -102.0


def make_instance(
    seed: int,
    L: int,
    K: int,
    antennas=1,
    gamma_db=0.0,
    fronthaul_w: Optional[Sequence[float]] = None,
    p_max_w=1.0,
    drain_efficiency=1.0,
    noise_dbm: float = DEFAULT_NOISE_DBM,
    region_half_width: float = 1000.0,
    model: ChannelModel = ChannelModel(),
) -> NetworkInstance:
    """One random network; fronthaul power defaults to ``(5 + l)`` W for ``l = 1..L``."""
    topo = generate_topology(seed, L, K, region_half_width, antennas)
    H, g = sample_channel(topo, seed, model)
    pc = np.arange(1, L + 1) + 5.0 if fronthaul_w is None else np.asarray(fronthaul_w, float)
    power = PowerModel(
        pc,
        np.broadcast_to(np.asarray(drain_efficiency, float), (L,)).copy(),
        np.broadcast_to(np.asarray(p_max_w, float), (L,)).copy(),
    )
    gamma = np.broadcast_to(db_to_linear(gamma_db), (K,)).copy()
    noise = np.full(K, dbm_to_watt(noise_dbm))
    return NetworkInstance(topo, power, gamma, noise, H, g)


def with_snr(inst: NetworkInstance, snr_db: float) -> NetworkInstance:
    """Set every per-RRH cap so that ``P^max * mean(g) / sigma^2`` equals ``snr_db``."""
    p = db_to_linear(snr_db) * float(np.mean(inst.noise_w)) / float(np.mean(inst.g))
    return inst.with_power(p_max_w=np.full(inst.L, p))


def evaluate_sinr(H: np.ndarray, V: np.ndarray, noise_w) -> np.ndarray:
    """``|h_k^H v_k|^2 / (sum_{j != k} |h_k^H v_j|^2 + sigma_k^2)`` per user."""
    P = np.abs(H.conj() @ V) ** 2
    signal = np.diag(P).copy()
    interference = P.sum(axis=1) - signal
    return signal / (interference + np.asarray(noise_w))


def group_norms(V: np.ndarray, antennas: Sequence[int]) -> np.ndarray:
    return np.array([np.linalg.norm(V[idx]) for idx in antenna_groups(antennas)])


def transmit_power(V: np.ndarray, antennas: Sequence[int], drain_efficiency) -> float:
    return float(np.sum(group_norms(V, antennas) ** 2 / np.asarray(drain_efficiency)))


def network_power(V: np.ndarray, active_set, power: PowerModel, antennas: Sequence[int], atol: float = 0.0) -> float:
    """Transmit power of the active RRHs (scaled by 1/eta) plus their fronthaul power."""
    active = sorted(set(int(l) for l in active_set))
    norms = group_norms(V, antennas)
    inactive = np.setdiff1d(np.arange(len(antennas)), active)
    if inactive.size and np.any(norms[inactive] > atol):
        raise ValueError("beamformer has nonzero coefficients on an inactive RRH")
    if not active:
        return 0.0
    idx = np.asarray(active)
    return float(np.sum(norms[idx] ** 2 / power.drain_efficiency[idx]) + np.sum(power.fronthaul_w[idx]))
