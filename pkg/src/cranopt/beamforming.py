"""Coordinated beamforming: power minimization, group sparse RRH selection, max-min SINR."""

from __future__ import annotations

import dataclasses
import functools
import itertools
import logging
import math
from typing import Optional, Sequence

import numpy as np

from .network import NetworkInstance, antenna_groups, evaluate_sinr, group_norms, network_power
from .solver import SolverSettings, SolveOutcome, Status, solve
from .stuffing import (
    BeamformingData,
    Dims,
    Family,
    FixedDirectionData,
    StuffingTemplate,
    build_template,
    stuff,
    unembed,
)

log = logging.getLogger(__name__)


class InfeasibleError(RuntimeError):
    """The QoS targets cannot be met (solver returned an infeasibility certificate)."""


def default_solver_settings() -> SolverSettings:
    # 1e-6 keeps the SINR of returned beamformers within 1e-3 of the target.
    return SolverSettings(eps_primal=1e-6, eps_dual=1e-6, eps_gap=1e-6, max_iters=20000)


@dataclasses.dataclass
class GsbfSettings:
    solver: SolverSettings = dataclasses.field(default_factory=default_solver_settings)
    probe_solver: Optional[SolverSettings] = None  # feasibility probes; defaults to ``solver``
    weight_exponent: float = 0.5  # omega_l = (P^c_l / eta_l) ** weight_exponent
    # theta_l = (P^c_l / eta_l) ** order_exponent * kappa_l ** gain_exponent * ||v_l||;
    # the defaults give theta_l = omega_l * ||v_l||.
    order_exponent: float = 0.5
    gain_exponent: float = 0.0

    @property
    def probe(self) -> SolverSettings:
        return self.probe_solver or self.solver


@functools.lru_cache(maxsize=256)
def template_for(family: Family, antennas: tuple[int, ...], K: int, M: int = 1) -> StuffingTemplate:
    return build_template(family, Dims(antennas, K, M))


@dataclasses.dataclass
class PowerMinResult:
    status: Status
    active: tuple[int, ...]
    V: Optional[np.ndarray] = None
    transmit_power_w: float = math.nan
    network_power_w: float = math.nan
    outcome: Optional[SolveOutcome] = None

    @property
    def feasible(self) -> bool:
        return self.status is Status.OPTIMAL

    @property
    def infeasible(self) -> bool:
        return self.status is Status.PRIMAL_INFEASIBLE


def align_phases(H: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Rotate each column so that ``h_k^H v_k`` is real and nonnegative."""
    d = np.einsum("kn,nk->k", H.conj(), V)
    rot = np.ones_like(d)
    nz = np.abs(d) > 0
    rot[nz] = np.abs(d[nz]) / d[nz]
    return V * rot[None, :]


def _scatter(inst: NetworkInstance, active: Sequence[int], V_active: np.ndarray) -> np.ndarray:
    V = np.zeros((inst.N, inst.K), dtype=complex)
    if active:
        rows = np.concatenate([inst.groups[l] for l in active])
        V[rows] = V_active
    return V


def _active_dims(inst: NetworkInstance, active: Sequence[int]) -> tuple[int, ...]:
    return tuple(inst.topology.antennas[l] for l in active)


def powermin(
    inst: NetworkInstance,
    active: Optional[Sequence[int]] = None,
    settings: Optional[SolverSettings] = None,
    warm: Optional[SolveOutcome] = None,
) -> PowerMinResult:
    """Minimize transmit power over the active RRHs subject to SINR targets and caps."""
    active = tuple(range(inst.L)) if active is None else tuple(sorted(set(active)))
    if not active:
        raise ValueError("active set must be nonempty")
    settings = settings or default_solver_settings()
    if warm is not None:
        settings = dataclasses.replace(settings, warm_start=warm)
    tmpl = template_for(Family.POWER_MIN, _active_dims(inst, active), inst.K)
    prog = stuff(tmpl, BeamformingData.from_instance(inst, active))
    out = solve(prog, settings)
    if out.status is not Status.OPTIMAL:
        return PowerMinResult(out.status, active, outcome=out)
    n_act = sum(_active_dims(inst, active))
    V = align_phases(inst.H, _scatter(inst, active, unembed(out.x[1:], n_act, inst.K)))
    eta = inst.power.drain_efficiency
    tx = float(np.sum(group_norms(V, inst.topology.antennas)[list(active)] ** 2 / eta[list(active)]))
    npow = network_power(V, active, inst.power, inst.topology.antennas)
    return PowerMinResult(out.status, active, V, tx, npow, out)


def feasible(inst: NetworkInstance, active: Sequence[int], settings: Optional[SolverSettings] = None,
             gamma=None, warm: Optional[SolveOutcome] = None):
    """Feasibility probe; returns ``(status, V or None, outcome)``."""
    active = tuple(sorted(set(active)))
    settings = settings or default_solver_settings()
    if warm is not None:
        settings = dataclasses.replace(settings, warm_start=warm)
    tmpl = template_for(Family.FEASIBILITY, _active_dims(inst, active), inst.K)
    gamma = None if gamma is None else np.broadcast_to(np.asarray(gamma, float), (inst.K,)).copy()
    out = solve(stuff(tmpl, BeamformingData.from_instance(inst, active, gamma=gamma)), settings)
    V = None
    if out.status is Status.OPTIMAL:
        V = align_phases(inst.H, _scatter(inst, active, unembed(out.x, sum(_active_dims(inst, active)), inst.K)))
    return out.status, V, out


# --- group sparse beamforming -----------------------------------------------


def gsbf_weights(inst: NetworkInstance, exponent: float = 0.5) -> np.ndarray:
    return (inst.power.fronthaul_w / inst.power.drain_efficiency) ** exponent


def gsbf_stage1(inst: NetworkInstance, settings: Optional[GsbfSettings] = None):
    """Weighted l1/l2 (group norm) minimization; returns ``(V, group_norms)``."""
    settings = settings or GsbfSettings()
    w = gsbf_weights(inst, settings.weight_exponent)
    if inst.K == 0:
        return np.zeros((inst.N, 0), complex), np.zeros(inst.L)
    tmpl = template_for(Family.GROUP_SPARSE, inst.topology.antennas, inst.K)
    out = solve(stuff(tmpl, BeamformingData.from_instance(inst, weights=w)), settings.solver)
    if out.status is Status.PRIMAL_INFEASIBLE:
        raise InfeasibleError("QoS targets infeasible even with all RRHs active")
    if out.status is not Status.OPTIMAL:
        log.warning("stage-1 solve ended with %s; using last iterate", out.status.value)
    V = unembed(out.x[inst.L:], inst.N, inst.K)
    return V, group_norms(V, inst.topology.antennas)


def switch_off_priority(inst: NetworkInstance, norms: np.ndarray, settings: Optional[GsbfSettings] = None) -> np.ndarray:
    """Ordering ``theta``; the RRH with the smallest value is switched off first.

    ``kappa_l`` is the total channel gain from RRH ``l`` to all users.
    """
    settings = settings or GsbfSettings()
    kappa = np.array([np.sum(np.abs(inst.H[:, idx]) ** 2) for idx in inst.groups])
    cost = inst.power.fronthaul_w / inst.power.drain_efficiency
    return cost ** settings.order_exponent * kappa ** settings.gain_exponent * norms


@dataclasses.dataclass
class SelectionResult:
    active: tuple[int, ...]
    probes: int
    indeterminate: int
    probe_log: list  # (active set, status)


def gsbf_select(inst: NetworkInstance, theta: np.ndarray, settings: Optional[GsbfSettings] = None) -> SelectionResult:
    """Bisect on how many of the lowest-``theta`` RRHs can be switched off.

    Feasibility is monotone along the nested family ``S_J = all minus the J
    lowest``, so the largest feasible ``J`` is found with O(log L) probes.
    """
    settings = settings or GsbfSettings()
    order = [int(i) for i in np.argsort(np.asarray(theta), kind="stable")]
    probe_log = []
    indeterminate = 0

    def active_for(J):
        return tuple(sorted(order[J:]))

    def probe(J) -> bool:
        nonlocal indeterminate
        st, _, _ = feasible(inst, active_for(J), settings.probe)
        probe_log.append((active_for(J), st.value))
        if st not in (Status.OPTIMAL, Status.PRIMAL_INFEASIBLE):
            indeterminate += 1
            log.warning("indeterminate feasibility probe treated as infeasible: %s", active_for(J))
        return st is Status.OPTIMAL

    if inst.K == 0:
        return SelectionResult(active_for(inst.L - 1), 0, 0, probe_log)
    if not probe(0):
        raise InfeasibleError("QoS targets infeasible with all RRHs active")
    lo, hi = 0, inst.L  # S_lo feasible; S_L is empty, hence infeasible for K >= 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if probe(mid):
            lo = mid
        else:
            hi = mid
    return SelectionResult(active_for(lo), len(probe_log), indeterminate, probe_log)


@dataclasses.dataclass
class GsbfResult:
    active_set: tuple[int, ...]
    V_final: np.ndarray
    network_power_w: float
    transmit_power_w: float
    stage1_group_norms: np.ndarray
    ordering: np.ndarray  # theta
    feasibility_probe_count: int
    indeterminate_probes: int = 0


def gsbf(inst: NetworkInstance, settings: Optional[GsbfSettings] = None) -> GsbfResult:
    """Three-stage group sparse beamforming for network power minimization."""
    settings = settings or GsbfSettings()
    V1, norms = gsbf_stage1(inst, settings)
    theta = switch_off_priority(inst, norms, settings)
    sel = gsbf_select(inst, theta, settings)
    if inst.K == 0:
        V = np.zeros((inst.N, 0), complex)
        return GsbfResult(sel.active, V, 0.0, 0.0, norms, theta, 0)
    order = [int(i) for i in np.argsort(theta, kind="stable")]
    J = inst.L - len(sel.active)
    while True:
        active = tuple(sorted(order[J:]))
        res = powermin(inst, active, settings.solver)
        if res.feasible or J == 0:
            break
        log.warning("stage-3 solve on %s ended with %s; re-adding an RRH", active, res.status.value)
        J -= 1
    if not res.feasible:
        raise InfeasibleError(f"stage-3 power minimization failed: {res.status.value}")
    return GsbfResult(res.active, res.V, res.network_power_w, res.transmit_power_w, norms, theta,
                      sel.probes, sel.indeterminate)


def exhaustive_oracle(inst: NetworkInstance, settings: Optional[SolverSettings] = None, max_L: int = 12) -> PowerMinResult:
    """Minimum network power over all nonempty active sets.

    Two exact prunings keep the enumeration cheap: sets whose fronthaul power
    alone reaches the incumbent cannot win, and subsets of a certified
    infeasible set are infeasible.
    """
    if inst.L > max_L:
        raise ValueError(f"exhaustive search refused for L={inst.L} > {max_L}")
    settings = settings or default_solver_settings()
    pc = inst.power.fronthaul_w
    subsets = [s for r in range(1, inst.L + 1) for s in itertools.combinations(range(inst.L), r)]
    subsets.sort(key=lambda s: (float(sum(pc[list(s)])), s))
    best: Optional[PowerMinResult] = None
    infeasible_sets: list[frozenset] = []
    for s in subsets:
        if best is not None and float(sum(pc[list(s)])) >= best.network_power_w:
            break
        fs = frozenset(s)
        if any(fs <= bad for bad in infeasible_sets):
            continue
        res = powermin(inst, s, settings)
        if res.infeasible:
            infeasible_sets.append(fs)
        elif res.feasible and (best is None or res.network_power_w < best.network_power_w):
            best = res
    if best is None:
        raise InfeasibleError("no active set supports the QoS targets")
    return best


# --- max-min SINR ------------------------------------------------------------


@dataclasses.dataclass
class MaxMinResult:
    gamma: float
    V: np.ndarray
    probes: int
    expansions: int

    @property
    def rate(self) -> float:
        return float(np.log2(1.0 + self.gamma))


def gamma_upper_bound(inst: NetworkInstance) -> float:
    """``min_k ||h_k||^2 * sum_l P_l / sigma_k^2`` bounds any common SINR target.

    Each term bounds user ``k`` alone without interference; a common target
    must be met by every user, hence the minimum.
    """
    return float(np.min(np.sum(np.abs(inst.H) ** 2, axis=1) * inst.power.p_max_w.sum() / inst.noise_w))


def _bisect(probe, hi: float, tol: float, ceiling: float):
    """Largest feasible target in ``[0, hi]``; ``probe(g) -> V or None``.

    Stops once ``hi - lo <= tol * max(1, lo)``: absolute below unit SINR,
    relative above it.
    """
    lo, best, probes, expansions = 0.0, None, 0, 0
    while True:
        probes += 1
        V = probe(hi)
        if V is None or hi >= ceiling:
            if V is not None:
                lo, best = hi, V
            break
        lo, best = hi, V
        hi *= 2.0
        expansions += 1
    while hi - lo > tol * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        probes += 1
        V = probe(mid)
        if V is not None:
            lo, best = mid, V
        else:
            hi = mid
    return lo, best, probes, expansions


def _maxmin_result(inst: NetworkInstance, g: float, V, probes: int, expansions: int) -> MaxMinResult:
    # Report what the returned beamformer achieves; it can sit a solver tolerance below the probed target.
    if V is None:
        return MaxMinResult(0.0, np.zeros((inst.N, inst.K), complex), probes, expansions)
    return MaxMinResult(min(g, min_sinr(inst, V)), V, probes, expansions)


def maxmin_rate(inst: NetworkInstance, tol: float = 1e-3, settings: Optional[SolverSettings] = None,
                ceiling: float = 1e12) -> MaxMinResult:
    """Bisection on a common SINR target using feasibility probes under per-RRH caps."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    settings = settings or default_solver_settings()
    active = tuple(range(inst.L))
    last = {"out": None}

    def probe(g):
        st, V, out = feasible(inst, active, settings, gamma=g, warm=last["out"])
        if st is Status.OPTIMAL:
            last["out"] = out
            return V
        return None

    hi = gamma_upper_bound(inst)
    g, V, probes, exp = _bisect(probe, hi, tol, ceiling)
    return _maxmin_result(inst, g, V, probes, exp)


def beam_directions(H: np.ndarray, kind: str) -> np.ndarray:
    """Unit-norm columns: MRT ``h_k/||h_k||`` or zero-forcing nulling directions."""
    kind = kind.upper()
    G = H.conj()  # G @ v_j gives h_k^H v_j
    if kind == "MRT":
        D = H.T.copy()
    elif kind == "ZF":
        K, N = H.shape
        if N < K:
            raise ValueError(f"zero-forcing needs N >= K (N={N}, K={K})")
        D = np.linalg.pinv(G)
    else:
        raise ValueError(f"unknown direction type {kind!r}")
    norms = np.linalg.norm(D, axis=0)
    return D / np.where(norms > 0, norms, 1.0)


def fixed_direction_maxmin(inst: NetworkInstance, directions: str = "MRT", tol: float = 1e-3,
                           settings: Optional[SolverSettings] = None, ceiling: float = 1e12) -> MaxMinResult:
    """Max-min SINR with pre-fixed beam directions; only per-user powers are optimized."""
    settings = settings or default_solver_settings()
    D = beam_directions(inst.H, directions)
    sig = np.sqrt(inst.noise_w)
    coupling = np.abs(inst.H.conj() @ D) / sig[:, None]
    dir_norms = np.stack([np.linalg.norm(D[idx], axis=0) for idx in inst.groups], axis=1)
    tmpl = template_for(Family.MAXMIN_PROBE, tuple(inst.topology.antennas), inst.K)
    last = {"out": None}

    def probe(g):
        data = FixedDirectionData(coupling, dir_norms, np.ones(inst.K), np.full(inst.K, g), inst.power.p_max_w.copy())
        out = solve(stuff(tmpl, data), dataclasses.replace(settings, warm_start=last["out"]))
        if out.status is Status.OPTIMAL:
            last["out"] = out
            return D * np.maximum(out.x, 0.0)[None, :]
        return None

    # interference-free bound: user k alone at the largest power its direction allows under every cap
    with np.errstate(divide="ignore"):
        p_max = np.min(np.sqrt(inst.power.p_max_w)[None, :] / dir_norms, axis=1)
    hi = float(np.min((np.diag(coupling) * p_max) ** 2))
    g, V, probes, exp = _bisect(probe, hi, tol, ceiling)
    return _maxmin_result(inst, g, V, probes, exp)


def min_sinr(inst: NetworkInstance, V: np.ndarray) -> float:
    return float(evaluate_sinr(inst.H, V, inst.noise_w).min()) if inst.K else math.inf
