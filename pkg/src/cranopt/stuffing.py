"""Canonicalization of the beamforming problem families into standard cone form.

A :class:`StuffingTemplate` fixes the sparsity pattern of ``A`` and the
positions every instance datum lands in. :func:`stuff` then only evaluates a
flat parameter vector and scatters it through the slot map.
:func:`canonicalize_reference` builds the same program entry by entry from
scratch; the two must agree bit for bit.

Variable layout for the beamformer families: ``(t-block; Re vec(V); Im vec(V))``
with ``vec(V) = (v_1; ...; v_K)``. Cone rows follow the order SINR blocks, per-RRH
cap blocks, epigraph block(s).
"""

from __future__ import annotations

import dataclasses
import enum
import math
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .cones import ConeSpec
from .network import NetworkInstance, antenna_groups
from .solver import ConeProgram


class Family(str, enum.Enum):
    POWER_MIN = "PowerMin"
    GROUP_SPARSE = "GroupSparseStage1"
    FEASIBILITY = "FeasibilityCheck"
    SCENARIO = "ScenarioScb"
    MAXMIN_PROBE = "MaxMinProbe"


@dataclasses.dataclass(frozen=True)
class Dims:
    antennas: tuple[int, ...]
    K: int
    M: int = 1  # channel samples (ScenarioScb only)

    def __post_init__(self):
        object.__setattr__(self, "antennas", tuple(int(a) for a in self.antennas))
        if not self.antennas or min(self.antennas) < 1 or self.K < 0 or self.M < 1:
            raise ValueError(f"invalid dimensions {self}")

    @property
    def L(self) -> int:
        return len(self.antennas)

    @property
    def N(self) -> int:
        return sum(self.antennas)


# --- complex <-> real embedding ---------------------------------------------


def embed(V: np.ndarray) -> np.ndarray:
    """Complex ``N x K`` beamformer -> ``(Re vec V; Im vec V)``."""
    v = np.asarray(V).T.ravel()
    return np.concatenate([v.real, v.imag])


def unembed(x: np.ndarray, N: int, K: int) -> np.ndarray:
    nk = N * K
    v = x[:nk] + 1j * x[nk:2 * nk]
    return v.reshape(K, N).T


def embed_functionals(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Real row vectors giving ``Re(h^H v)`` and ``Im(h^H v)`` on the embedded ``v``."""
    return np.concatenate([h.real, h.imag]), np.concatenate([-h.imag, h.real])


# --- instance data -----------------------------------------------------------


@dataclasses.dataclass
class BeamformingData:
    """Numbers stuffed into the beamformer families (noise-normalized by default)."""

    H: np.ndarray  # (K, N) or (M, K, N) complex
    sigma: np.ndarray  # (K,) noise amplitude
    gamma: np.ndarray  # (K,)
    p_max: np.ndarray  # (L,)
    eta: np.ndarray  # (L,)
    weights: np.ndarray  # (L,)

    @property
    def samples(self) -> np.ndarray:
        return self.H if self.H.ndim == 3 else self.H[None]

    @classmethod
    def from_instance(
        cls,
        inst: NetworkInstance,
        active: Optional[Sequence[int]] = None,
        weights: Optional[np.ndarray] = None,
        H: Optional[np.ndarray] = None,
        gamma: Optional[np.ndarray] = None,
    ) -> "BeamformingData":
        """Restrict to ``active`` RRHs and divide each user's channel by its noise amplitude."""
        active = list(range(inst.L)) if active is None else sorted(active)
        groups = inst.groups
        cols = np.concatenate([groups[l] for l in active]) if active else np.zeros(0, int)
        H = inst.H if H is None else H
        sig = np.sqrt(inst.noise_w)
        Hn = H[..., cols] / sig[:, None]
        w = np.ones(inst.L) if weights is None else np.asarray(weights, float)
        return cls(
            Hn,
            np.ones(inst.K),
            inst.gamma.copy() if gamma is None else np.asarray(gamma, float),
            inst.power.p_max_w[active].copy(),
            inst.power.drain_efficiency[active].copy(),
            w[active].copy(),
        )


@dataclasses.dataclass
class FixedDirectionData:
    """Reduced power-allocation program over fixed unit beam directions."""

    coupling: np.ndarray  # (K, K) |h_k^H d_j| (noise-normalized)
    dir_norms: np.ndarray  # (K, L) ||d_{k,l}||
    sigma: np.ndarray
    gamma: np.ndarray
    p_max: np.ndarray


# --- parameter layouts -------------------------------------------------------


def _segments(family: Family, dims: Dims) -> list[tuple[str, tuple[int, ...]]]:
    K, N, L, M = dims.K, dims.N, dims.L, dims.M
    if family is Family.MAXMIN_PROBE:
        return [("sig", (K,)), ("coup", (K, K)), ("dnorm", (K, L)), ("sigma", (K,)), ("sqrt_pmax", (L,))]
    segs = [
        ("sig_r", (M, K, N)),
        ("sig_i", (M, K, N)),
        ("h_r", (M, K, N)),
        ("h_i", (M, K, N)),
        ("sigma", (K,)),
        ("sqrt_pmax", (L,)),
    ]
    if family in (Family.POWER_MIN, Family.SCENARIO):
        segs.append(("inv_sqrt_eta", (L,)))
    if family is Family.GROUP_SPARSE:
        segs.append(("omega", (L,)))
    return segs


def _layout(family: Family, dims: Dims) -> dict[str, tuple[int, tuple[int, ...]]]:
    out, off = {}, 0
    for name, shape in _segments(family, dims):
        out[name] = (off, shape)
        off += int(np.prod(shape))
    return out


def _check_data(family: Family, dims: Dims, data) -> None:
    if family is Family.MAXMIN_PROBE:
        if not isinstance(data, FixedDirectionData) or data.coupling.shape != (dims.K, dims.K) or data.dir_norms.shape != (dims.K, dims.L):
            raise ValueError("fixed-direction data does not match template dimensions")
        return
    if not isinstance(data, BeamformingData):
        raise ValueError("beamforming data required")
    if data.samples.shape != (dims.M, dims.K, dims.N):
        raise ValueError(f"channel shape {data.H.shape} does not match dims {dims}")
    if family is not Family.SCENARIO and data.H.ndim == 3 and dims.M != 1:
        raise ValueError("sampled channels only valid for ScenarioScb")
    for name, arr, size in (("sigma", data.sigma, dims.K), ("gamma", data.gamma, dims.K), ("p_max", data.p_max, dims.L),
                            ("eta", data.eta, dims.L), ("weights", data.weights, dims.L)):
        if np.shape(arr) != (size,):
            raise ValueError(f"{name} has shape {np.shape(arr)}, expected ({size},)")


def instance_params(family: Family, dims: Dims, data) -> np.ndarray:
    """Flat parameter vector; every value the template scatters comes from here."""
    _check_data(family, dims, data)
    if family is Family.MAXMIN_PROBE:
        sig = np.diag(data.coupling) / np.sqrt(data.gamma)
        parts = [sig, data.coupling, data.dir_norms, data.sigma, np.sqrt(data.p_max)]
    else:
        H = data.samples
        rg = np.sqrt(data.gamma)[None, :, None]
        parts = [H.real / rg, H.imag / rg, H.real, H.imag, data.sigma, np.sqrt(data.p_max)]
        if family in (Family.POWER_MIN, Family.SCENARIO):
            parts.append(1.0 / np.sqrt(data.eta))
        if family is Family.GROUP_SPARSE:
            parts.append(data.weights)
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


# --- structure ---------------------------------------------------------------


def _n_epi(family: Family, dims: Dims) -> int:
    return {Family.POWER_MIN: 1, Family.SCENARIO: 1, Family.GROUP_SPARSE: dims.L, Family.FEASIBILITY: 0}[family]


def program_shape(family: Family, dims: Dims) -> tuple[int, int, ConeSpec]:
    K, L, N, M = dims.K, dims.L, dims.N, dims.M
    if family is Family.MAXMIN_PROBE:
        soc = [K + 1] * K + [1 + K] * L
        return sum(soc), K, ConeSpec(soc=tuple(soc))
    T = _n_epi(family, dims)
    nsinr = M if family is Family.SCENARIO else 1
    soc = [2 * K] * (nsinr * K) + [1 + 2 * a * K for a in dims.antennas]
    if family in (Family.POWER_MIN, Family.SCENARIO):
        soc.append(1 + 2 * N * K)
    elif family is Family.GROUP_SPARSE:
        soc += [1 + 2 * a * K for a in dims.antennas]
    return sum(soc), T + 2 * N * K, ConeSpec(soc=tuple(soc))


class _Entries:
    """Accumulates (row, col, source) chunks; source < 0 marks a constant."""

    def __init__(self):
        self.rows, self.cols, self.src, self.mult = [], [], [], []

    def add(self, rows, cols, src, mult):
        rows, cols, src, mult = np.broadcast_arrays(*(np.asarray(a) for a in (rows, cols, src, mult)))
        self.rows.append(rows.ravel().astype(np.int64))
        self.cols.append(cols.ravel().astype(np.int64))
        self.src.append(src.ravel().astype(np.int64))
        self.mult.append(mult.ravel().astype(float))

    def arrays(self):
        if not self.rows:
            e = np.zeros(0, np.int64)
            return e, e, e, np.zeros(0)
        return tuple(np.concatenate(x) for x in (self.rows, self.cols, self.src, self.mult))


@dataclasses.dataclass(frozen=True)
class _Slots:
    """Destinations in one emitted array: constants plus (position, param, multiplier)."""

    const: np.ndarray
    pos: np.ndarray
    src: np.ndarray
    mult: np.ndarray

    @classmethod
    def from_entries(cls, size: int, pos, src, mult) -> "_Slots":
        const = np.zeros(size)
        fixed = src < 0
        const[pos[fixed]] = mult[fixed]
        return cls(const, pos[~fixed], src[~fixed], mult[~fixed])

    def emit(self, params: np.ndarray) -> np.ndarray:
        out = self.const.copy()
        out[self.pos] = self.mult * params[self.src]
        return out


@dataclasses.dataclass(frozen=True)
class StuffingTemplate:
    family: Family
    dims: Dims
    shape: tuple[int, int]
    cone: ConeSpec
    indptr: np.ndarray
    indices: np.ndarray
    a_slots: _Slots
    b_slots: _Slots
    c_slots: _Slots
    layout: dict

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def slot_map(self) -> dict[int, list[tuple[str, int, float]]]:
        """Parameter index -> list of ``(array, position, multiplier)`` destinations."""
        out: dict[int, list] = {}
        for name, sl in (("A", self.a_slots), ("b", self.b_slots), ("c", self.c_slots)):
            for p, s, mu in zip(sl.pos, sl.src, sl.mult):
                out.setdefault(int(s), []).append((name, int(p), float(mu)))
        return out


def _beam_entries(family: Family, dims: Dims, lay: dict):
    K, N, L, M = dims.K, dims.N, dims.L, dims.M
    T = _n_epi(family, dims)
    NK = N * K
    A, b, c = _Entries(), _Entries(), _Entries()

    def re_idx(k, a):
        return T + k * N + a

    def im_idx(k, a):
        return T + NK + k * N + a

    def par(name, *idx):
        off, shape = lay[name]
        return off + np.ravel_multi_index(tuple(np.asarray(i) for i in idx), shape)

    nsinr = M if family is Family.SCENARIO else 1
    a_ = np.arange(N)
    # SINR blocks: rows (m, k) at base 2K*(m*K + k)
    if K:
        m_, k_ = np.meshgrid(np.arange(nsinr), np.arange(K), indexing="ij")
        base = (2 * K * (m_ * K + k_))[..., None]
        mk, kk = m_[..., None], k_[..., None]
        A.add(base, re_idx(kk, a_), par("sig_r", mk, kk, a_), -1.0)
        A.add(base, im_idx(kk, a_), par("sig_i", mk, kk, a_), -1.0)
        b.add(base[..., 0] + 2 * K - 1, 0, par("sigma", k_), 1.0)
        if K > 1:
            p_ = np.arange(K - 1)
            m4, k4, p4, a4 = np.meshgrid(np.arange(nsinr), np.arange(K), p_, a_, indexing="ij")
            j4 = np.where(p4 < k4, p4, p4 + 1)
            row_re = 2 * K * (m4 * K + k4) + 1 + 2 * p4
            hr, hi = par("h_r", m4, k4, a4), par("h_i", m4, k4, a4)
            A.add(row_re, re_idx(j4, a4), hr, -1.0)
            A.add(row_re, im_idx(j4, a4), hi, -1.0)
            A.add(row_re + 1, im_idx(j4, a4), hr, -1.0)
            A.add(row_re + 1, re_idx(j4, a4), hi, 1.0)
    row = 2 * K * K * nsinr

    groups = antenna_groups(dims.antennas)

    def group_rows(l, start):
        # rows (k, a, part) for the entries of RRH l, interleaving Re/Im
        k2, a2 = np.meshgrid(np.arange(K), groups[l], indexing="ij")
        k2, a2 = k2.ravel(), a2.ravel()
        r = start + 1 + 2 * np.arange(len(k2))
        return r, k2, a2

    for l in range(L):
        b.add(row, 0, par("sqrt_pmax", l), 1.0)
        r, k2, a2 = group_rows(l, row)
        A.add(r, re_idx(k2, a2), -1, -1.0)
        A.add(r + 1, im_idx(k2, a2), -1, -1.0)
        row += 1 + 2 * len(groups[l]) * K

    if family in (Family.POWER_MIN, Family.SCENARIO):
        A.add(row, 0, -1, -1.0)
        c.add(0, 0, -1, 1.0)
        start = row
        for l in range(L):
            r, k2, a2 = group_rows(l, start)
            A.add(r, re_idx(k2, a2), par("inv_sqrt_eta", l), -1.0)
            A.add(r + 1, im_idx(k2, a2), par("inv_sqrt_eta", l), -1.0)
            start = r[-1] + 1 if len(r) else start
    elif family is Family.GROUP_SPARSE:
        for l in range(L):
            A.add(row, l, -1, -1.0)
            c.add(l, 0, par("omega", l), 1.0)
            r, k2, a2 = group_rows(l, row)
            A.add(r, re_idx(k2, a2), -1, -1.0)
            A.add(r + 1, im_idx(k2, a2), -1, -1.0)
            row += 1 + 2 * len(groups[l]) * K
    return A, b, c


def _probe_entries(dims: Dims, lay: dict):
    K, L = dims.K, dims.L
    A, b, c = _Entries(), _Entries(), _Entries()

    def par(name, *idx):
        off, shape = lay[name]
        return off + np.ravel_multi_index(tuple(np.asarray(i) for i in idx), shape)

    k_ = np.arange(K)
    base = (K + 1) * k_
    A.add(base, k_, par("sig", k_), -1.0)
    if K > 1:
        k2, p2 = np.meshgrid(k_, np.arange(K - 1), indexing="ij")
        j2 = np.where(p2 < k2, p2, p2 + 1)
        A.add(base[:, None] + 1 + p2, j2, par("coup", k2, j2), -1.0)
    b.add(base + K, 0, par("sigma", k_), 1.0)
    row = (K + 1) * K
    for l in range(L):
        b.add(row, 0, par("sqrt_pmax", l), 1.0)
        A.add(row + 1 + k_, k_, par("dnorm", k_, l), -1.0)
        row += 1 + K
    return A, b, c


def build_template(family, dims: Dims) -> StuffingTemplate:
    try:
        family = Family(family)
    except ValueError:
        raise ValueError(f"unsupported problem family {family!r}") from None
    lay = _layout(family, dims)
    m, n, cone = program_shape(family, dims)
    if family is Family.MAXMIN_PROBE:
        A, b, c = _probe_entries(dims, lay)
    else:
        A, b, c = _beam_entries(family, dims, lay)
    rows, cols, src, mult = A.arrays()
    order = np.lexsort((rows, cols))
    indices = rows[order]
    indptr = np.concatenate(([0], np.cumsum(np.bincount(cols, minlength=n)))).astype(np.int64)
    pos = np.empty_like(order)
    pos[order] = np.arange(len(order))
    a_slots = _Slots.from_entries(len(order), pos, src, mult)
    br, _, bs, bm = b.arrays()
    cr, _, cs, cm = c.arrays()
    return StuffingTemplate(
        family, dims, (m, n), cone, indptr, indices.astype(np.int32), a_slots,
        _Slots.from_entries(m, br, bs, bm), _Slots.from_entries(n, cr, cs, cm), lay,
    )


def stuff(template: StuffingTemplate, data) -> ConeProgram:
    """Copy instance numbers into the pre-stored structure."""
    params = instance_params(template.family, template.dims, data)
    A = sp.csc_matrix((template.a_slots.emit(params), template.indices, template.indptr), shape=template.shape)
    return ConeProgram(A, template.b_slots.emit(params), template.c_slots.emit(params), template.cone)


# --- from-scratch reference --------------------------------------------------


def canonicalize_reference(family, dims: Dims, data) -> ConeProgram:
    """Entry-by-entry canonicalization with fresh structure (oracle and timing baseline)."""
    family = Family(family)
    _check_data(family, dims, data)
    m, n, cone = program_shape(family, dims)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    b = [0.0] * m
    c = [0.0] * n

    def put(r, col, v):
        rows.append(r)
        cols.append(col)
        vals.append(v)

    K, N, L = dims.K, dims.N, dims.L
    if family is Family.MAXMIN_PROBE:
        row = 0
        for k in range(K):
            put(row, k, -(float(data.coupling[k, k]) / math.sqrt(float(data.gamma[k]))))
            for j in range(K):
                if j != k:
                    row += 1
                    put(row, j, -float(data.coupling[k, j]))
            row += 1
            b[row] = float(data.sigma[k])
            row += 1
        for l in range(L):
            b[row] = math.sqrt(float(data.p_max[l]))
            for k in range(K):
                put(row + 1 + k, k, -float(data.dir_norms[k, l]))
            row += 1 + K
    else:
        T = _n_epi(family, dims)
        NK = N * K
        samples = data.samples
        nsinr = dims.M if family is Family.SCENARIO else 1
        row = 0
        for s in range(nsinr):
            H = samples[s]
            for k in range(K):
                rg = math.sqrt(float(data.gamma[k]))
                for a in range(N):
                    put(row, T + k * N + a, -(float(H[k, a].real) / rg))
                    put(row, T + NK + k * N + a, -(float(H[k, a].imag) / rg))
                row += 1
                for j in range(K):
                    if j == k:
                        continue
                    for a in range(N):
                        hr, hi = float(H[k, a].real), float(H[k, a].imag)
                        put(row, T + j * N + a, -hr)
                        put(row, T + NK + j * N + a, -hi)
                        put(row + 1, T + NK + j * N + a, -hr)
                        put(row + 1, T + j * N + a, hi)
                    row += 2
                b[row] = float(data.sigma[k])
                row += 1
        groups = antenna_groups(dims.antennas)

        def group_block(start, l, coef):
            r = start + 1
            for k in range(K):
                for a in groups[l]:
                    put(r, T + k * N + int(a), coef)
                    put(r + 1, T + NK + k * N + int(a), coef)
                    r += 2
            return r

        for l in range(L):
            b[row] = math.sqrt(float(data.p_max[l]))
            row = group_block(row, l, -1.0)
        if family in (Family.POWER_MIN, Family.SCENARIO):
            put(row, 0, -1.0)
            c[0] = 1.0
            r = row
            for l in range(L):
                coef = -(1.0 / math.sqrt(float(data.eta[l])))
                r = group_block(r, l, coef) - 1
        elif family is Family.GROUP_SPARSE:
            for l in range(L):
                put(row, l, -1.0)
                c[l] = float(data.weights[l])
                row = group_block(row, l, -1.0)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(m, n)).tocsc()
    A.sort_indices()
    return ConeProgram(A, np.array(b), np.array(c), cone)
