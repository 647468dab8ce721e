"""Random cone programs with a known primal-dual optimal pair."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .cones import ConeSpec, project_cone
from .solver import ConeProgram


def random_cone(rng: np.random.Generator, m: int, n_soc: int, zero: int = 0) -> ConeSpec:
    """Split ``m`` rows into ``zero`` equalities, some nonneg rows and ``n_soc`` SOC blocks."""
    rest = m - zero
    soc_total = rest * 2 // 3
    cuts = np.sort(rng.choice(np.arange(1, soc_total), size=n_soc - 1, replace=False)) if n_soc > 1 else []
    sizes = np.diff(np.concatenate(([0], cuts, [soc_total]))).astype(int)
    return ConeSpec(zero=zero, nonneg=rest - soc_total, soc=tuple(sizes))


def random_feasible_socp(rng: np.random.Generator, n: int = 30, m: int = 60, n_soc: int = 5, density: float = 0.3):
    """Return ``(program, x_opt, y_opt, s_opt)`` built from a complementary pair.

    ``s = P_K(z)`` and ``y = P_K*(-z)`` are complementary by the Moreau identity,
    so ``b = A x + s`` and ``c = -A^T y`` make ``(x, y, s)`` optimal.
    """
    cone = random_cone(rng, m, n_soc, zero=max(1, m // 20))
    A = sp.random(m, n, density=density, random_state=rng, data_rvs=rng.standard_normal, format="csc")
    A = (A + sp.eye(m, n, format="csc")).tocsc()  # guarantees full column rank
    x = rng.standard_normal(n)
    z = rng.standard_normal(m)
    s = project_cone(z, cone)
    y = s - z
    b = A @ x + s
    c = -(A.T @ y)
    return ConeProgram(A, b, c, cone), x, y, s
