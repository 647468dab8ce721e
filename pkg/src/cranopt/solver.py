"""ADMM on the homogeneous self-dual embedding of a standard cone program.

Solves::

    minimize    c^T x
    subject to  A x + s = b,   s in K

and its dual ``maximize -b^T y  s.t.  A^T y + c = 0, y in K*``. The embedding
either converges to a scaled primal-dual optimal pair (tau > 0) or to a
certificate of primal or dual infeasibility (tau -> 0, kappa > 0).
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import logging
from typing import Optional

import numpy as np
import qdldl
import scipy.sparse as sp

from .cones import ConeSpec, cone_violation, project_cone_inplace

log = logging.getLogger(__name__)

_REG = 1e-8  # static regularization of the quasi-definite diagonal


class FactorizationError(RuntimeError):
    pass


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    MAX_ITERS = "MaxItersReached"


@dataclasses.dataclass
class ConeProgram:
    """Problem data ``(A, b, c, K)``; A is stored column-compressed."""

    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    cone: ConeSpec

    def __post_init__(self):
        if not sp.issparse(self.A):
            self.A = sp.csc_matrix(np.atleast_2d(np.asarray(self.A, dtype=float)))
        elif self.A.format != "csc":
            self.A = self.A.tocsc()
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.c = np.asarray(self.c, dtype=float).ravel()
        m, n = self.A.shape
        if self.b.shape[0] != m or self.c.shape[0] != n:
            raise ValueError(f"inconsistent data: A is {m}x{n}, len(b)={len(self.b)}, len(c)={len(self.c)}")
        if self.cone.total_dim != m:
            raise ValueError(f"cone dimension {self.cone.total_dim} != number of rows {m}")
        if not (np.all(np.isfinite(self.A.data)) and np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.c))):
            raise ValueError("problem data contains non-finite values")

    @functools.cached_property
    def AT(self) -> sp.csr_matrix:
        return self.A.T.tocsr()

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


@dataclasses.dataclass
class SolverSettings:
    max_iters: int = 10000
    eps_primal: float = 1e-4
    eps_dual: float = 1e-4
    eps_gap: float = 1e-4
    # Relative certificate tolerance ||A^T y||_inf <= eps_infeas * ||y||_inf; None means eps_primal.
    eps_infeas: Optional[float] = None
    alpha: float = 1.5
    equilibrate: bool = True
    scale: float = 1.0
    warm_start: Optional["SolveOutcome"] = None
    record_history: bool = False
    check_interval: int = 5  # iterations between termination checks

    def __post_init__(self):
        if min(self.eps_primal, self.eps_dual, self.eps_gap, self.infeas_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.alpha < 2:
            raise ValueError("over-relaxation must lie in (0, 2)")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.check_interval < 1:
            raise ValueError("check_interval must be positive")

    @property
    def infeas_tol(self) -> float:
        return self.eps_primal if self.eps_infeas is None else self.eps_infeas


@dataclasses.dataclass
class Residuals:
    primal: float
    dual: float
    gap: float

    def worst(self) -> float:
        return max(self.primal, self.dual, self.gap)


@dataclasses.dataclass
class SolveOutcome:
    status: Status
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    objective: float
    residuals: Residuals
    iterations: int
    certificate: Optional[np.ndarray] = None
    history: Optional[list[float]] = None

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


# --- linear system -----------------------------------------------------------


class LinearSystemCache:
    """Applies ``(I + Q)^{-1}`` for the embedding's skew-symmetric ``Q``.

    The ``(x, y)`` block ``[[I, A^T], [-A, I]]`` is solved through the symmetric
    quasi-definite matrix ``[[I, A^T], [A, -I]]`` (sign flip on the y rows);
    the rank-one ``(c, b)`` border is removed by a Sherman-Morrison style
    correction using the pre-solved ``g = M^{-1} h``.
    """

    def __init__(self, A: sp.csc_matrix, b: np.ndarray, c: np.ndarray):
        m, n = A.shape
        self.m, self.n = m, n
        self._A = A
        self._AT = A.T.tocsc()
        # qdldl reads the upper triangle only.
        kkt = sp.bmat(
            [[sp.identity(n) * (1 + _REG), self._AT], [None, -sp.identity(m) * (1 + _REG)]], format="csc"
        )
        try:
            self._ldl = qdldl.Solver(kkt)
        except Exception as exc:  # qdldl raises plain ValueError on a zero pivot
            raise FactorizationError(str(exc)) from exc
        # Unregularized block operator, used for the refinement residual.
        self._M = sp.bmat([[sp.identity(n), self._AT], [-A, sp.identity(m)]], format="csr")
        self._sign = np.concatenate([np.ones(n), -np.ones(m)])
        self.h = np.concatenate([c, b])
        self.g = self._solve_block(self.h)
        self.denom = 1.0 + float(self.h @ self.g)
        if not np.all(np.isfinite(self.g)) or self.denom <= 0:
            raise FactorizationError("quasi-definite factorization is numerically singular")

    def _apply_block(self, z: np.ndarray) -> np.ndarray:
        return self._M @ z

    def _solve_block(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``M z = rhs`` with one step of iterative refinement."""
        z = self._ldl.solve(rhs * self._sign)
        z += self._ldl.solve((rhs - self._M @ z) * self._sign)
        return z

    def solve(self, w: np.ndarray) -> np.ndarray:
        z = self._solve_block(w[:-1])
        tau = (w[-1] + self.h @ z) / self.denom
        z -= tau * self.g
        return np.append(z, tau)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Multiply by ``I + Q`` (used to verify the inverse)."""
        z, tau = u[:-1], u[-1]
        top = self._apply_block(z) + tau * self.h
        return np.append(top, tau - self.h @ z)


def factorize(prog: ConeProgram) -> LinearSystemCache:
    return LinearSystemCache(prog.A, prog.b, prog.c)


# --- equilibration -----------------------------------------------------------


@dataclasses.dataclass
class Equilibration:
    program: ConeProgram
    row_scale: np.ndarray  # D
    col_scale: np.ndarray  # E
    rhs_scale: float
    cost_scale: float

    def unscale_program(self) -> ConeProgram:
        D, E = self.row_scale, self.col_scale
        A = sp.diags(1.0 / D) @ self.program.A @ sp.diags(1.0 / E)
        return ConeProgram(
            A.tocsc(), self.program.b / D / self.rhs_scale, self.program.c / E / self.cost_scale, self.program.cone
        )

    # scaled iterate -> original space; scalar factors cancel in certificates
    def x(self, xs):
        return self.col_scale * xs / self.rhs_scale

    def y(self, ys):
        return self.row_scale * ys / self.cost_scale

    def s(self, ss):
        return ss / self.row_scale / self.rhs_scale

    def to_scaled(self, x, y, s):
        return (x / self.col_scale * self.rhs_scale, y / self.row_scale * self.cost_scale, s * self.row_scale * self.rhs_scale)


def _block_shared(norms: np.ndarray, cone: ConeSpec) -> np.ndarray:
    """Replace per-row norms inside each SOC block by the block maximum."""
    if not cone.soc:
        return norms
    out = norms.copy()
    ids = cone.block_ids
    mask = ids >= 0
    blk_max = np.zeros(len(cone.soc))
    np.maximum.at(blk_max, ids[mask], norms[mask])
    out[mask] = blk_max[ids[mask]]
    return out


def _inf_norms(A: sp.csc_matrix, axis: int) -> np.ndarray:
    return np.asarray(abs(A).max(axis=axis).todense()).ravel()


def equilibrate(prog: ConeProgram, sweeps: int = 10, scale: float = 1.0) -> Equilibration:
    """Ruiz infinity-norm equilibration followed by scalar normalization of b and c."""
    m, n = prog.A.shape
    D = np.ones(m)
    E = np.ones(n)
    A = prog.A.copy()
    for _ in range(sweeps):
        if A.nnz == 0:
            break
        r = _block_shared(_inf_norms(A, 1), prog.cone)
        r = np.where(r > 0, r, 1.0)
        dr = 1.0 / np.sqrt(r)
        A = sp.diags(dr) @ A
        D *= dr
        col = _inf_norms(A, 0)
        col = np.where(col > 0, col, 1.0)
        dc = 1.0 / np.sqrt(col)
        A = A @ sp.diags(dc)
        E *= dc
    A = A.tocsc()
    b = D * prog.b
    c = E * prog.c
    nb, nc = np.linalg.norm(b), np.linalg.norm(c)
    rhs_scale = scale * (float(np.clip(1.0 / nb, 1e-4, 1e4)) if nb > 0 else 1.0)
    cost_scale = scale * (float(np.clip(1.0 / nc, 1e-4, 1e4)) if nc > 0 else 1.0)
    scaled = ConeProgram(A, b * rhs_scale, c * cost_scale, prog.cone)
    return Equilibration(scaled, D, E, rhs_scale, cost_scale)


def _identity_equilibration(prog: ConeProgram) -> Equilibration:
    return Equilibration(prog, np.ones(prog.m), np.ones(prog.n), 1.0, 1.0)


# --- termination -------------------------------------------------------------


@dataclasses.dataclass
class Iterate:
    """Unnormalized embedding iterate mapped back to the original data space."""

    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    tau: float
    kappa: float


def residuals(prog: ConeProgram, x, y, s) -> Residuals:
    cx, by = float(prog.c @ x), float(prog.b @ y)
    rp = np.linalg.norm(prog.A @ x + s - prog.b) / (1 + np.linalg.norm(prog.b))
    rd = np.linalg.norm(prog.AT @ y + prog.c) / (1 + np.linalg.norm(prog.c))
    gap = abs(cx + by) / (1 + abs(cx) + abs(by))
    return Residuals(float(rp), float(rd), float(gap))


def primal_certificate(prog: ConeProgram, y: np.ndarray, tol: float) -> Optional[np.ndarray]:
    """Return ``y`` normalized to ``b^T y = -1`` if it proves primal infeasibility."""
    by = float(prog.b @ y)
    if not by < 0:
        return None
    y = y / -by
    ny = np.abs(y).max()
    if np.abs(prog.AT @ y).max() <= tol * ny and cone_violation(y, prog.cone, dual=True) <= tol * ny:
        return y
    return None


def dual_certificate(prog: ConeProgram, x: np.ndarray, s: np.ndarray, tol: float) -> Optional[np.ndarray]:
    """Return ``x`` normalized to ``c^T x = -1`` if it proves dual infeasibility."""
    cx = float(prog.c @ x)
    if not cx < 0:
        return None
    x, s = x / -cx, s / -cx
    nx = np.abs(x).max()
    if np.abs(prog.A @ x + s).max() <= tol * nx and cone_violation(s, prog.cone) <= tol * nx:
        return x
    return None


def check_termination(it: Iterate, prog: ConeProgram, settings: SolverSettings):
    """Classify an iterate; returns ``(status or None, residuals, certificate)``."""
    res = Residuals(np.inf, np.inf, np.inf)
    if it.tau > 0:
        res = residuals(prog, it.x / it.tau, it.y / it.tau, it.s / it.tau)
        if res.primal <= settings.eps_primal and res.dual <= settings.eps_dual and res.gap <= settings.eps_gap:
            return Status.OPTIMAL, res, None
    if it.tau <= 1e-9 * max(it.kappa, 1.0) or it.kappa > it.tau:
        cert = primal_certificate(prog, it.y, settings.infeas_tol)
        if cert is not None:
            return Status.PRIMAL_INFEASIBLE, res, cert
        cert = dual_certificate(prog, it.x, it.s, settings.infeas_tol)
        if cert is not None:
            return Status.DUAL_INFEASIBLE, res, cert
    return None, res, None


# --- main loop ---------------------------------------------------------------


@dataclasses.dataclass
class Workspace:
    """Equilibration plus factorization, reusable across solves of one program."""

    program: ConeProgram
    scaling: Equilibration
    cache: LinearSystemCache


def prepare(prog: ConeProgram, settings: Optional[SolverSettings] = None) -> Workspace:
    settings = settings or SolverSettings()
    scaling = equilibrate(prog, scale=settings.scale) if settings.equilibrate else _identity_equilibration(prog)
    return Workspace(prog, scaling, factorize(scaling.program))


def _initial_point(ws: Workspace, settings: SolverSettings):
    n, m = ws.program.n, ws.program.m
    u = np.zeros(n + m + 1)
    v = np.zeros(n + m + 1)
    u[-1] = v[-1] = 1.0
    warm = settings.warm_start
    if warm is not None and warm.status is Status.OPTIMAL and len(warm.x) == n and len(warm.y) == m:
        xs, ys, ss = ws.scaling.to_scaled(warm.x, warm.y, warm.s)
        u[:n], u[n:-1] = xs, ys
        v[n:-1] = ss
        v[-1] = 0.0
    return u, v


def solve(prog: ConeProgram, settings: Optional[SolverSettings] = None, workspace: Optional[Workspace] = None) -> SolveOutcome:
    settings = settings or SolverSettings()
    ws = workspace if workspace is not None else prepare(prog, settings)
    if ws.program is not prog:
        raise ValueError("workspace was prepared for a different program")
    sc = ws.scaling
    sprog = sc.program
    n, m = prog.n, prog.m
    cone = prog.cone
    alpha = settings.alpha
    u, v = _initial_point(ws, settings)
    history = [] if settings.record_history else None

    status, res, cert = None, Residuals(np.inf, np.inf, np.inf), None
    it = 0
    while True:
        if it % settings.check_interval == 0 or it >= settings.max_iters:
            it_state = Iterate(sc.x(u[:n]), sc.y(u[n:-1]), sc.s(v[n:-1]), float(u[-1]), float(v[-1]))
            status, res, cert = check_termination(it_state, prog, settings)
            if history is not None:
                history.append(res.worst())
            if status is not None or it >= settings.max_iters:
                break
        ut = ws.cache.solve(u + v)
        ut = alpha * ut + (1 - alpha) * u
        u_new = ut - v
        project_cone_inplace(u_new[n:-1], cone, dual=True)
        u_new[-1] = max(u_new[-1], 0.0)
        v += u_new - ut
        u = u_new
        it += 1
        if not np.isfinite(u[-1]):
            raise FactorizationError("iterates diverged")

    tau = it_state.tau
    if status is None:
        status = Status.MAX_ITERS
    if status in (Status.OPTIMAL, Status.MAX_ITERS) and tau > 0:
        x, y, s = it_state.x / tau, it_state.y / tau, it_state.s / tau
    else:
        x, y, s = it_state.x, it_state.y, it_state.s
    if status is Status.PRIMAL_INFEASIBLE:
        objective = np.inf
    elif status is Status.DUAL_INFEASIBLE:
        objective = -np.inf
    else:
        objective = float(prog.c @ x)
    log.debug("solve: %s after %d iterations (res %s)", status.value, it, res)
    return SolveOutcome(status, x, y, s, objective, res, it, cert, history)
