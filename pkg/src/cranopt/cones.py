"""Symmetric cones of the standard form and their Euclidean projections.

The cone is the Cartesian product ``{0}^z x R_+^l x SOC(q_1) x ... x SOC(q_p)``
laid out in that order. Each second-order cone block stores its scalar ``t``
first, followed by the vector part ``z``.
"""

from __future__ import annotations

import dataclasses
import functools

import numpy as np


@dataclasses.dataclass(frozen=True)
class ConeSpec:
    zero: int = 0
    nonneg: int = 0
    soc: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "soc", tuple(int(q) for q in self.soc))
        if self.zero < 0 or self.nonneg < 0:
            raise ValueError("cone dimensions must be nonnegative")
        if any(q < 1 for q in self.soc):
            raise ValueError("second-order cone blocks need dimension >= 1")

    @property
    def total_dim(self) -> int:
        return self.zero + self.nonneg + sum(self.soc)

    @functools.cached_property
    def soc_offsets(self) -> np.ndarray:
        """Start index of every SOC block within the full vector."""
        sizes = np.asarray(self.soc, dtype=np.int64)
        starts = np.cumsum(sizes) - sizes
        return self.zero + self.nonneg + starts

    @functools.cached_property
    def soc_groups(self) -> list[np.ndarray]:
        # Blocks of equal size are projected together as rows of a 2-D gather.
        groups: dict[int, list[int]] = {}
        for q, off in zip(self.soc, self.soc_offsets):
            groups.setdefault(q, []).append(int(off))
        return [np.asarray(offs)[:, None] + np.arange(q)[None, :] for q, offs in sorted(groups.items())]

    @functools.cached_property
    def block_ids(self) -> np.ndarray:
        """Label per coordinate: -1 for zero/nonneg rows, else the SOC block index."""
        ids = np.full(self.total_dim, -1, dtype=np.int64)
        for i, (q, off) in enumerate(zip(self.soc, self.soc_offsets)):
            ids[off:off + q] = i
        return ids

    def to_dict(self) -> dict:
        return {"zero": self.zero, "nonneg": self.nonneg, "soc": list(self.soc)}

    @classmethod
    def from_dict(cls, d: dict) -> "ConeSpec":
        return cls(zero=int(d.get("zero", 0)), nonneg=int(d.get("nonneg", 0)), soc=tuple(d.get("soc", ())))


def _check_dim(x: np.ndarray, spec: ConeSpec) -> None:
    if x.ndim != 1 or x.shape[0] != spec.total_dim:
        raise ValueError(f"vector of length {x.shape} does not match cone dimension {spec.total_dim}")


def _project_soc_batch(blk: np.ndarray) -> np.ndarray:
    t = blk[:, 0]
    z = blk[:, 1:]
    nz = np.sqrt(np.einsum("ij,ij->i", z, z))
    a = 0.5 * (nz + t)
    inside = nz <= t
    polar = nz <= -t
    # Ray case: ((nz + t) / 2) * (1, z / nz); the inside and polar cases keep or zero the block.
    t_new = np.where(inside, t, np.where(polar, 0.0, a))
    z_scale = np.where(inside, 1.0, np.where(polar, 0.0, a / np.where(nz > 0, nz, 1.0)))
    out = np.empty_like(blk)
    out[:, 0] = t_new
    np.multiply(z, z_scale[:, None], out=out[:, 1:])
    return out


def project_cone_inplace(x: np.ndarray, spec: ConeSpec, dual: bool = False) -> np.ndarray:
    """Overwrite ``x`` with its projection onto the cone (or its dual) and return it."""
    _check_dim(x, spec)
    if not dual:
        x[: spec.zero] = 0.0
    lo = spec.zero
    hi = lo + spec.nonneg
    np.maximum(x[lo:hi], 0.0, out=x[lo:hi])
    for idx in spec.soc_groups:
        x[idx] = _project_soc_batch(x[idx])
    return x


def project_cone(x: np.ndarray, spec: ConeSpec) -> np.ndarray:
    return project_cone_inplace(np.array(x, dtype=float), spec)


def project_dual_cone(x: np.ndarray, spec: ConeSpec) -> np.ndarray:
    """Projection onto the dual cone; the zero block's dual is the free space."""
    return project_cone_inplace(np.array(x, dtype=float), spec, dual=True)


def cone_violation(x: np.ndarray, spec: ConeSpec, dual: bool = False) -> float:
    """Largest amount by which ``x`` fails cone membership (0 when inside)."""
    x = np.asarray(x, dtype=float)
    _check_dim(x, spec)
    worst = 0.0
    if not dual and spec.zero:
        worst = max(worst, float(np.abs(x[: spec.zero]).max()))
    lo, hi = spec.zero, spec.zero + spec.nonneg
    if hi > lo:
        worst = max(worst, float(np.maximum(-x[lo:hi], 0.0).max()))
    for idx in spec.soc_groups:
        blk = x[idx]
        gap = np.linalg.norm(blk[:, 1:], axis=1) - blk[:, 0]
        worst = max(worst, float(np.maximum(gap, 0.0).max()))
    return worst


def in_cone(x: np.ndarray, spec: ConeSpec, tol: float = 1e-12, dual: bool = False) -> bool:
    return cone_violation(x, spec, dual=dual) <= tol
