"""CSI acquisition: relevant-link selection, regularized channel estimation, scenario beamforming."""

from __future__ import annotations

import dataclasses
import logging
import math
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import stats

from .cones import ConeSpec
from .network import NetworkInstance, evaluate_sinr, expand_gains, group_norms
from .rng import complex_normal, stream
from .solver import ConeProgram, SolverSettings, Status, solve
from .stuffing import BeamformingData, Family, unembed

log = logging.getLogger(__name__)


def select_relevant_links(g: np.ndarray, budget: int) -> np.ndarray:
    """Indices of the ``budget`` largest large-scale coefficients, ties to the lower index."""
    g = np.asarray(g, dtype=float).ravel()
    if not 0 <= budget <= g.size:
        raise ValueError(f"budget {budget} outside [0, {g.size}]")
    order = np.lexsort((np.arange(g.size), -g))
    return np.sort(order[:budget])


# --- Gauss-Markov fading -----------------------------------------------------


@dataclasses.dataclass(frozen=True)
class FadingProcess:
    eta: float  # temporal correlation in [0, 1)
    g: np.ndarray  # per-coefficient variances
    length: int = 10

    def __post_init__(self):
        if not 0 <= self.eta < 1:
            raise ValueError("temporal correlation must lie in [0, 1)")

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """``(length, d)`` trajectory, stationary with marginal ``CN(0, diag(g))``."""
        d = len(self.g)
        h = np.empty((self.length, d), dtype=complex)
        h[0] = complex_normal(rng, d, self.g)
        innov = math.sqrt(1 - self.eta ** 2)
        for i in range(1, self.length):
            h[i] = self.eta * h[i - 1] + innov * complex_normal(rng, d, self.g)
        return h


def sparse_profile(d: int, rng: np.random.Generator, strong_fraction: float = 0.2, weak_level: float = 1e-2) -> np.ndarray:
    """Large-scale profile with ``1 - strong_fraction`` of the entries at most ``weak_level`` of the max."""
    g = weak_level * rng.uniform(0.01, 1.0, size=d)
    strong = rng.choice(d, size=max(1, int(round(strong_fraction * d))), replace=False)
    g[strong] = rng.uniform(0.2, 1.0, size=strong.size)
    g[strong[0]] = 1.0
    return g


@dataclasses.dataclass
class TrainingObservation:
    X: np.ndarray  # (m, d) complex pilots
    y: np.ndarray  # (m,)
    noise_var: float


def observe(h: np.ndarray, m: int, noise_var: float, rng: np.random.Generator) -> TrainingObservation:
    d = h.shape[0]
    X = complex_normal(rng, (m, d), 1.0 / m)
    y = X @ h + complex_normal(rng, m, noise_var)
    return TrainingObservation(X, y, noise_var)


# --- regularized estimation --------------------------------------------------


def soft_threshold(z: np.ndarray, thresh) -> np.ndarray:
    """Complex soft-threshold: shrink magnitudes by ``thresh``, keep phases."""
    mag = np.abs(z)
    shrunk = np.maximum(mag - np.asarray(thresh), 0.0)
    return np.where(mag > 0, z * (shrunk / np.where(mag > 0, mag, 1.0)), 0.0)


def estimation_objective(h, y, X, anchor, lam1, lam2, w) -> float:
    r = y - X @ h
    return float(0.5 * np.vdot(r, r).real + lam1 * np.sum(w * np.abs(h)) + lam2 * np.vdot(h - anchor, h - anchor).real)


@dataclasses.dataclass
class EstimateResult:
    h: np.ndarray
    iterations: int
    converged: bool
    objective: float


def estimate_block(
    y: np.ndarray,
    X: np.ndarray,
    h_prev: Optional[np.ndarray],
    lam1: float,
    lam2: float,
    w: np.ndarray,
    eta: float = 1.0,
    tol: float = 1e-8,
    max_iters: int = 5000,
    h0: Optional[np.ndarray] = None,
) -> EstimateResult:
    """Minimize ``0.5||y - Xh||^2 + lam1 sum_j w_j|h_j| + lam2 ||h - eta h_prev||^2`` by FISTA.

    Uses adaptive restart (objective increase resets the momentum), so the
    sequence of restart-point objectives never increases.
    """
    if lam1 < 0 or lam2 < 0:
        raise ValueError("regularization weights must be nonnegative")
    w = np.asarray(w, dtype=float)
    d = X.shape[1]
    anchor = np.zeros(d, complex) if h_prev is None else eta * np.asarray(h_prev)
    lip = np.linalg.norm(X, 2) ** 2 + 2 * lam2
    if lip == 0:
        return EstimateResult(anchor.copy(), 0, True, estimation_objective(anchor, y, X, anchor, lam1, lam2, w))
    step = 1.0 / lip
    Xh = X.conj().T
    h = np.zeros(d, complex) if h0 is None else np.array(h0, complex)
    z = h.copy()
    t = 1.0
    f_prev = estimation_objective(h, y, X, anchor, lam1, lam2, w)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        grad = Xh @ (X @ z - y) + 2 * lam2 * (z - anchor)
        h_new = soft_threshold(z - step * grad, step * lam1 * w)
        f_new = estimation_objective(h_new, y, X, anchor, lam1, lam2, w)
        if f_new > f_prev:
            # restart from the last iterate with a plain proximal step
            z = h
            t = 1.0
            grad = Xh @ (X @ z - y) + 2 * lam2 * (z - anchor)
            h_new = soft_threshold(z - step * grad, step * lam1 * w)
            f_new = estimation_objective(h_new, y, X, anchor, lam1, lam2, w)
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        z = h_new + ((t - 1) / t_new) * (h_new - h)
        change = np.linalg.norm(h_new - h) / max(np.linalg.norm(h_new), 1e-300)
        h, t, f_prev = h_new, t_new, f_new
        if change <= tol:
            converged = True
            break
    if not converged:
        log.warning("estimate_block: no convergence after %d iterations", max_iters)
    return EstimateResult(h, it, converged, f_prev)


def estimation_cone_program(y, X, anchor, lam1, lam2, w):
    """Same estimation problem as a second-order cone program (cross-check path).

    Variables ``(Re h, Im h, s, u, q_1..q_d)``; ``s >= ||y - Xh||^2`` and
    ``u >= ||h - anchor||^2`` as rotated cones, ``q_j >= |h_j|``. Objective
    ``0.5 s + lam2 u + lam1 sum w_j q_j``.
    """
    m, d = X.shape
    Xr = np.block([[X.real, -X.imag], [X.imag, X.real]])  # real map of h -> Xh
    yr = np.concatenate([y.real, y.imag])
    ar = np.concatenate([anchor.real, anchor.imag])
    n = 2 * d + 2 + d
    S, U = 2 * d, 2 * d + 1
    blocks_A, blocks_b, soc = [], [], []

    # ||(2r, s-1)|| <= s+1 encodes ||r||^2 <= s.
    def rotated(res_map, res_const, var):
        k = res_map.shape[0]
        A = sp.lil_matrix((k + 2, n))
        b = np.zeros(k + 2)
        A[0, var] = -1.0
        b[0] = 1.0
        A[1:k + 1, :2 * d] = 2.0 * res_map
        b[1:k + 1] = 2.0 * res_const
        A[k + 1, var] = -1.0
        b[k + 1] = -1.0
        blocks_A.append(A.tocsr())
        blocks_b.append(b)
        soc.append(k + 2)

    # row value mu = b - A nu must equal the cone coordinates
    rotated(Xr, yr, S)  # 2(y - Xh) -> -(2X) h + 2y
    rotated(-np.eye(2 * d), -ar, U)  # mu = -2*(-h) ... gives 2(h - anchor)
    for j in range(d):
        A = sp.lil_matrix((3, n))
        A[0, 2 * d + 2 + j] = -1.0
        A[1, j] = -1.0
        A[2, d + j] = -1.0
        blocks_A.append(A.tocsr())
        blocks_b.append(np.zeros(3))
        soc.append(3)
    A = sp.vstack(blocks_A).tocsc()
    b = np.concatenate(blocks_b)
    c = np.zeros(n)
    c[S] = 0.5
    c[U] = lam2
    c[2 * d + 2:] = lam1 * np.asarray(w, float)
    return ConeProgram(A, b, c, ConeSpec(soc=tuple(soc)))


def estimate_block_cone(y, X, h_prev, lam1, lam2, w, eta=1.0, settings: Optional[SolverSettings] = None):
    d = X.shape[1]
    anchor = np.zeros(d, complex) if h_prev is None else eta * np.asarray(h_prev)
    settings = settings or SolverSettings(eps_primal=1e-9, eps_dual=1e-9, eps_gap=1e-9, max_iters=200000)
    out = solve(estimation_cone_program(y, X, anchor, lam1, lam2, w), settings)
    h = out.x[:d] + 1j * out.x[d:2 * d]
    return h, out


def least_squares(y: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares estimate (pseudo-inverse)."""
    return np.linalg.pinv(X) @ y


def link_weights(g: np.ndarray, floor_ratio: float = 1e-6) -> np.ndarray:
    g = np.asarray(g, float)
    return 1.0 / np.maximum(g, floor_ratio * g.max())


# --- estimation experiment ---------------------------------------------------


REGIMES = ("ls", "spatial", "spatial_temporal")


@dataclasses.dataclass
class EstimationConfig:
    d: int = 100
    m: int = 50
    eta: float = 0.99
    length: int = 10
    snr_db: float = 20.0
    lam1_grid: Sequence[float] = (0.003, 0.01, 0.03, 0.1, 0.3, 1.0)
    lam2_grid: Sequence[float] = (0.03, 0.1, 0.3, 1.0, 3.0)
    tuning_seeds: int = 3
    strong_fraction: float = 0.2


def _trajectory(seed: int, cfg: EstimationConfig):
    g = sparse_profile(cfg.d, stream(seed, "chanest", "profile"), cfg.strong_fraction)
    proc = FadingProcess(cfg.eta, g, cfg.length)
    H = proc.sample(stream(seed, "chanest", "process"))
    noise_var = float(g.sum()) / 10 ** (cfg.snr_db / 10)
    rng = stream(seed, "chanest", "pilots")
    obs = [observe(H[i], cfg.m, noise_var, rng) for i in range(cfg.length)]
    return g, H, obs


def _estimate_trajectory(regime: str, g, obs, cfg: EstimationConfig, lam1: float, lam2: float) -> np.ndarray:
    w = link_weights(g)
    est = np.zeros((len(obs), cfg.d), complex)
    prev = None
    for i, ob in enumerate(obs):
        if regime == "ls":
            h = least_squares(ob.y, ob.X)
        elif regime == "spatial":
            h = estimate_block(ob.y, ob.X, None, lam1, 0.0, w).h
        else:
            h = estimate_block(ob.y, ob.X, prev, lam1, lam2 if prev is not None else 0.0, w, eta=cfg.eta).h
        est[i] = h
        prev = h
    return est


def _mse(est, H) -> float:
    # blocks 2..length
    return float(np.mean(np.sum(np.abs(est[1:] - H[1:]) ** 2, axis=1)))


def tune_lambdas(cfg: EstimationConfig, seed_base: int = 10_000) -> dict:
    """Grid search on dedicated tuning trajectories (disjoint from evaluation seeds)."""
    trajs = [_trajectory(seed_base + s, cfg) for s in range(cfg.tuning_seeds)]
    best = {"ls": (0.0, 0.0)}
    scores = {}
    for lam1 in cfg.lam1_grid:
        scores[lam1] = np.mean([_mse(_estimate_trajectory("spatial", g, ob, cfg, lam1, 0.0), H) for g, H, ob in trajs])
    best["spatial"] = (min(scores, key=scores.get), 0.0)
    scores = {}
    for lam1 in cfg.lam1_grid:
        for lam2 in cfg.lam2_grid:
            scores[(lam1, lam2)] = np.mean(
                [_mse(_estimate_trajectory("spatial_temporal", g, ob, cfg, lam1, lam2), H) for g, H, ob in trajs]
            )
    best["spatial_temporal"] = min(scores, key=scores.get)
    return best


def run_estimation_experiment(cfg: EstimationConfig, seeds: Sequence[int], lambdas: Optional[dict] = None) -> list[dict]:
    """Per-seed MSE (averaged over blocks 2..length) for the three regimes."""
    lambdas = lambdas or tune_lambdas(cfg)
    rows = []
    for seed in seeds:
        g, H, obs = _trajectory(seed, cfg)
        row = {"seed": seed}
        for regime in REGIMES:
            lam1, lam2 = lambdas[regime]
            row[f"mse_{regime}"] = _mse(_estimate_trajectory(regime, g, obs, cfg, lam1, lam2), H)
        row["energy"] = float(np.mean(np.sum(np.abs(H[1:]) ** 2, axis=1)))
        rows.append(row)
    return rows


# --- scenario-based stochastic coordinated beamforming ----------------------


@dataclasses.dataclass
class MixedCsi:
    """Instantaneous estimates on ``relevant`` links, statistics elsewhere.

    Link index ``j = k * N + a`` addresses user ``k``'s channel from antenna ``a``.
    """

    relevant: np.ndarray
    estimate: np.ndarray  # (K, N); only relevant entries used
    error_var: np.ndarray  # (K, N)
    g: np.ndarray  # (K, N) statistical variances

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        K, N = self.g.shape
        mean = np.zeros((K, N), complex)
        var = self.g.copy()
        mask = np.zeros(K * N, bool)
        mask[self.relevant] = True
        mask = mask.reshape(K, N)
        mean[mask] = self.estimate[mask]
        var[mask] = self.error_var[mask]
        return mean[None] + complex_normal(rng, (count, K, N), var[None])


def mixed_csi_from_instance(inst: NetworkInstance, budget: int, error_fraction: float, seed: int) -> MixedCsi:
    """Train the ``budget`` strongest links; estimate error variance ``error_fraction * g``."""
    gvar = expand_gains(inst.g, inst.topology.antennas)
    rel = select_relevant_links(gvar, budget)
    err = error_fraction * gvar
    est = inst.H + complex_normal(stream(seed, "scb", "training"), inst.H.shape, err)
    return MixedCsi(rel, est, err, gvar)


def scenario_count(n_vars: int, eps: float, beta: float = 0.01) -> int:
    """Smallest M with ``sum_{i<n} C(M,i) eps^i (1-eps)^(M-i) <= beta`` (Campi-Garatti)."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    lo, hi = n_vars, max(n_vars, 1)
    while stats.binom.cdf(n_vars - 1, hi, eps) > beta:
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if stats.binom.cdf(n_vars - 1, mid, eps) > beta:
            lo = mid
        else:
            hi = mid
    return hi


@dataclasses.dataclass
class ScenarioResult:
    status: Status
    V: Optional[np.ndarray]
    transmit_power_w: float
    empirical_outage: float
    M: int
    max_sample_violation: float


def _scenario_data(inst: NetworkInstance, samples: np.ndarray) -> BeamformingData:
    return BeamformingData.from_instance(inst, H=samples)


def scenario_scb(
    mixed: MixedCsi,
    M: int,
    inst: NetworkInstance,
    eps: float = 0.1,
    seed: int = 0,
    n_eval: int = 10_000,
    settings: Optional[SolverSettings] = None,
    pool: Optional[int] = None,
) -> ScenarioResult:
    """Minimize transmit power subject to SINR constraints on ``M`` sampled channels.

    With ``pool`` set, the scenarios are the first ``M`` of a fixed draw of
    ``max(pool, M)`` samples, so runs with growing ``M`` see nested constraint sets.
    """
    from .beamforming import default_solver_settings, template_for

    if M < 1 or not 0 < eps < 1:
        raise ValueError("need M >= 1 and eps in (0, 1)")
    settings = settings or default_solver_settings()
    samples = mixed.sample(stream(seed, "scb", "scenarios"), max(M, pool or 0))[:M]
    tmpl = template_for(Family.SCENARIO, tuple(inst.topology.antennas), inst.K, M)
    out = solve(stuff_scenario(tmpl, inst, samples), settings)
    if out.status is not Status.OPTIMAL:
        return ScenarioResult(out.status, None, math.nan, math.nan, M, math.nan)
    V = unembed(out.x[1:], inst.N, inst.K)
    viol = max(float(np.max(inst.gamma - evaluate_sinr(Hs, V, inst.noise_w))) for Hs in samples)
    fresh = mixed.sample(stream(seed, "scb", "evaluation"), n_eval)
    outage = empirical_outage(fresh, V, inst.gamma, inst.noise_w)
    tx = float(np.sum(group_norms(V, inst.topology.antennas) ** 2 / inst.power.drain_efficiency))
    return ScenarioResult(out.status, V, tx, outage, M, viol)


def stuff_scenario(tmpl, inst, samples):
    from .stuffing import stuff

    return stuff(tmpl, _scenario_data(inst, samples))


def empirical_outage(samples: np.ndarray, V: np.ndarray, gamma, noise_w, rtol: float = 1e-4) -> float:
    """Fraction of channel draws on which any user misses its SINR target.

    A shortfall within ``rtol`` of the target counts as met, so a draw equal to a
    scenario the solver satisfied to its tolerance is not an outage.
    """
    P = np.abs(np.einsum("skn,nj->skj", samples.conj(), V)) ** 2
    sig = np.einsum("skk->sk", P)
    sinr = sig / (P.sum(axis=2) - sig + np.asarray(noise_w)[None])
    return float(np.mean(np.any(sinr < np.asarray(gamma)[None] * (1 - rtol), axis=1)))
