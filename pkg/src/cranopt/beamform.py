"""Beamforming subproblems on top of the cone solver.

Evaluation helpers (DL/UL SINR), uplink power control by fixed-point
iteration, and builders for every SOCP this package optimizes: plain
min-power beamforming, the group-sparse penalized joint problem with and
without power budgets, and the active/sleep relaxation with per-AP on/off
variables.

Complex beamformers are lifted to real variables by stacking real and
imaginary parts per MU.  SINR constraints use the phase-rotation freedom of
each beamformer to pin the useful inner product to the real axis, which
turns the quadratic SINR inequality into a second-order cone

    || [ a_i^H w_1, ..., a_i^H w_K, sigma ] ||
        <= sqrt(1 + 1/gamma_i) * Re(a_i^H w_i),

written with channels divided by sigma so all rows are O(1).  The uplink
side is handled in a virtual-DL form: with effective channels
c_i = conj(g_i) the UL SINR is an ordinary Hermitian form, and minimizing
the UL sum power equals minimizing the virtual-DL sum power with the same
targets (uplink-downlink duality).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .conic import (
    NONNEG,
    OPTIMAL,
    SOC,
    ConeProgram,
    ConeSolution,
    SolverTolerances,
    solve,
)
from .scenario import ChannelRealization

PENALTY_L12 = "l12"
PENALTY_L1INF = "l1inf"

# fixed-point power control: relative-change stopping rule and the blow-up
# level at which the targets are declared unreachable
FIXED_POINT_TOL = 1e-10
MAX_FIXED_POINT_ITERS = 200_000


@dataclass(frozen=True)
class ActiveSet:
    """Subset of AP indices (0-based) currently switched on."""

    indices: Tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted({int(n) for n in self.indices}))
        if not idx:
            raise ValueError("active set must be nonempty")
        if idx[0] < 0:
            raise ValueError("AP indices are 0-based and nonnegative")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def all_aps(cls, num_aps: int) -> "ActiveSet":
        return cls(tuple(range(num_aps)))

    def antenna_mask(self, antennas_per_ap: Sequence[int]) -> np.ndarray:
        """Boolean mask over the stacked antenna axis."""
        n = len(antennas_per_ap)
        if self.indices[-1] >= n:
            raise ValueError("active set references an AP outside the network")
        mask = np.zeros(sum(antennas_per_ap), dtype=bool)
        start = 0
        for ap, m in enumerate(antennas_per_ap):
            if ap in self:
                mask[start : start + m] = True
            start += m
        return mask

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, n):
        return n in self.indices


@dataclass(frozen=True)
class BeamformingSolution:
    """Beamformers and powers for one association: w_dl/w_vdl/v_ul are
    (K, M) with per-AP blocks, p_ul is (K,) watts."""

    w_dl: np.ndarray
    w_vdl: np.ndarray
    v_ul: np.ndarray
    p_ul: np.ndarray

    def __post_init__(self):
        w_dl = np.array(self.w_dl, dtype=complex)
        w_vdl = np.array(self.w_vdl, dtype=complex)
        v_ul = np.array(self.v_ul, dtype=complex)
        p_ul = np.array(self.p_ul, dtype=float).ravel()
        if not (w_dl.shape == w_vdl.shape == v_ul.shape) or w_dl.ndim != 2:
            raise ValueError("beamformer arrays must share one (K, M) shape")
        if p_ul.shape != (w_dl.shape[0],):
            raise ValueError("p_ul must have one entry per MU")
        if not np.all(np.isfinite(p_ul)) or np.any(p_ul < 0):
            raise ValueError("p_ul entries must be finite and nonnegative")
        for arr in (w_dl, w_vdl, v_ul, p_ul):
            arr.setflags(write=False)
        object.__setattr__(self, "w_dl", w_dl)
        object.__setattr__(self, "w_vdl", w_vdl)
        object.__setattr__(self, "v_ul", v_ul)
        object.__setattr__(self, "p_ul", p_ul)

    @classmethod
    def empty(cls, num_mus: int, num_antennas: int) -> "BeamformingSolution":
        z = np.zeros((num_mus, num_antennas), dtype=complex)
        return cls(w_dl=z, w_vdl=z, v_ul=z, p_ul=np.zeros(num_mus))


@dataclass(frozen=True)
class ObjectiveBreakdown:
    """Weighted sum-power split into its three terms (watts)."""

    ap_static: float
    dl_transmit: float
    ul_transmit: float  # raw sum of MU powers, before weighting
    ul_weight: float

    @property
    def mu_term(self) -> float:
        return self.ul_weight * self.ul_transmit

    @property
    def total(self) -> float:
        return self.ap_static + self.dl_transmit + self.mu_term


@dataclass(frozen=True)
class FixedPointResult:
    feasible: bool
    p_ul: Optional[np.ndarray]
    v_ul: Optional[np.ndarray]
    iterations: int


@dataclass(frozen=True)
class MinPowerResult:
    feasible: bool
    w: Optional[np.ndarray]  # (K, M), zeros outside the active set
    sum_power: float
    solution: ConeSolution


@dataclass(frozen=True)
class FeasibilityReport:
    dl_feasible: bool
    ul_feasible: bool
    violating_mus: Tuple[int, ...]
    w_dl: Optional[np.ndarray]
    p_ul: Optional[np.ndarray]
    v_ul: Optional[np.ndarray]

    @property
    def feasible(self) -> bool:
        return self.dl_feasible and self.ul_feasible


def _as_targets(value, k: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size == 1:
        arr = np.full(k, arr[0])
    if arr.size != k:
        raise ValueError(f"{name} must be scalar or length {k}")
    if np.any(arr <= 0):
        raise ValueError(f"{name} must be strictly positive")
    return arr


def dl_sinr(channels: ChannelRealization, w_dl, noise_power: float) -> np.ndarray:
    """Per-MU downlink SINR |h_i^H w_i|^2 / (sum_{j!=i}|h_i^H w_j|^2 + sigma^2)."""
    w = np.asarray(w_dl, dtype=complex)
    A = channels.h.conj() @ w.T  # A[i, j] = h_i^H w_j
    pw = np.abs(A) ** 2
    sig = np.diag(pw).copy()
    interference = pw.sum(axis=1) - sig
    return sig / (interference + noise_power)


def ul_sinr(channels: ChannelRealization, v_ul, p_ul, noise_power: float) -> np.ndarray:
    """Per-MU uplink SINR with receive filters v_i applied as v_i^T g_j.

    Zero filters give SINR 0; scaling any v_i leaves its SINR unchanged.
    """
    v = np.asarray(v_ul, dtype=complex)
    p = np.asarray(p_ul, dtype=float).ravel()
    if np.any(p < 0):
        raise ValueError("p_ul must be nonnegative")
    B = v @ channels.g.T  # B[i, j] = v_i^T g_j
    pw = np.abs(B) ** 2 * p[None, :]
    sig = np.diag(pw).copy()
    interference = pw.sum(axis=1) - sig
    den = interference + noise_power * np.sum(np.abs(v) ** 2, axis=1)
    return np.where(den > 0, sig / np.where(den > 0, den, 1.0), 0.0)


def ul_effective_channels(channels: ChannelRealization) -> np.ndarray:
    """Channels c_i = conj(g_i) that turn v^T g into the Hermitian form v^H c."""
    return np.conj(channels.g)


def restrict_channels(channels: ChannelRealization, active: ActiveSet) -> ChannelRealization:
    """Channel realization with only the active APs' antenna blocks."""
    mask = active.antenna_mask(channels.antennas_per_ap)
    blocks = tuple(channels.antennas_per_ap[n] for n in active)
    return ChannelRealization(
        h=channels.h[:, mask],
        g=channels.g[:, mask],
        antennas_per_ap=blocks,
        seed=channels.seed,
    )


def scatter_blocks(w_reduced: np.ndarray, antennas_per_ap: Sequence[int], active: ActiveSet) -> np.ndarray:
    """Embed beamformers on the active antennas back into the full layout."""
    mask = active.antenna_mask(antennas_per_ap)
    out = np.zeros((w_reduced.shape[0], mask.size), dtype=complex)
    out[:, mask] = w_reduced
    return out


def group_norms(w_dl, w_vdl, antennas_per_ap, penalty: str = PENALTY_L12) -> np.ndarray:
    """Per-AP size of the joint (DL, virtual-DL) beamformer group.

    l12 returns the Euclidean norm of the stacked block, l1inf the largest
    entry magnitude; both are the quantities the group penalties bound.
    """
    w_dl = np.asarray(w_dl)
    w_vdl = np.asarray(w_vdl)
    out = np.zeros(len(antennas_per_ap))
    start = 0
    for n, m in enumerate(antennas_per_ap):
        sl = slice(start, start + m)
        if penalty == PENALTY_L12:
            out[n] = np.sqrt(
                np.sum(np.abs(w_dl[:, sl]) ** 2) + np.sum(np.abs(w_vdl[:, sl]) ** 2)
            )
        elif penalty == PENALTY_L1INF:
            out[n] = max(np.abs(w_dl[:, sl]).max(), np.abs(w_vdl[:, sl]).max())
        else:
            raise ValueError(f"unknown penalty {penalty!r}")
        start += m
    return out


# ---------------------------------------------------------------------------
# uplink power control


def ul_fixed_point_power(
    channels: ChannelRealization,
    qos_ul,
    noise_power: float,
    active: ActiveSet,
    tol: float = FIXED_POINT_TOL,
    divergence_guard: Optional[float] = None,
) -> FixedPointResult:
    """Minimum UL powers meeting the targets with MMSE receive filters.

    Standard fixed-point iteration from p = 0: the power vector increases
    monotonically to the component-wise minimal solution when the targets
    are feasible for the active antennas, and grows without bound otherwise
    (caught by the divergence guard).
    """
    K = channels.num_mus
    gam = _as_targets(qos_ul, K, "qos_ul")
    mask = active.antenna_mask(channels.antennas_per_ap)
    C = np.conj(channels.g)[:, mask]  # effective Hermitian-form channels
    Ma = C.shape[1]
    if divergence_guard is None:
        divergence_guard = 1e6 * 0.5 * K
    eye = noise_power * np.eye(Ma, dtype=complex)
    p = np.zeros(K)
    # from p = 0 the iterates increase monotonically, so for feasible targets
    # the increments eventually decay geometrically; increments that fail to
    # shrink over a long window certify divergence (spectral radius >= 1)
    window = 1024
    prev_inc = None
    for it in range(1, MAX_FIXED_POINT_ITERS + 1):
        R = eye + (C.T * p) @ C.conj()
        U = np.linalg.solve(R, C.T)  # column i: R^{-1} c_i
        q = np.real(np.sum(C.conj().T * U, axis=0))
        # Sherman-Morrison removes user i's own term from R
        p_new = gam * (1.0 - p * q) / q
        if not np.all(np.isfinite(p_new)) or p_new.sum() > divergence_guard:
            return FixedPointResult(False, None, None, it)
        delta = np.max(np.abs(p_new - p) / np.maximum(p_new, 1e-300))
        inc = p_new.sum() - p.sum()
        p = p_new
        if delta < tol:
            norms = np.linalg.norm(U, axis=0)
            v = scatter_blocks(
                (U / norms).T, channels.antennas_per_ap, active
            )
            return FixedPointResult(True, p, v, it)
        if it % window == 0:
            if prev_inc is not None and inc > (1.0 - 1e-3) * prev_inc:
                return FixedPointResult(False, None, None, it)
            prev_inc = inc
    return FixedPointResult(False, None, None, MAX_FIXED_POINT_ITERS)


def ul_powers_for_filters(
    channels: ChannelRealization, v_ul, qos_ul, noise_power: float
) -> Optional[np.ndarray]:
    """Minimal powers meeting the UL targets with the receive filters frozen.

    Solves the K x K linear system in which every SINR constraint holds with
    equality; returns None when the filters cannot support the targets (the
    system has no nonnegative solution).
    """
    v = np.asarray(v_ul, dtype=complex)
    K = channels.num_mus
    gam = _as_targets(qos_ul, K, "qos_ul")
    B = np.abs(v @ channels.g.T) ** 2  # B[i, j] = |v_i^T g_j|^2
    diag = np.diag(B).copy()
    if np.any(diag <= 0):
        return None
    A = -B
    A[np.diag_indices(K)] = diag / gam
    rhs = noise_power * np.sum(np.abs(v) ** 2, axis=1)
    try:
        p = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(p)) or np.any(p < -1e-9 * max(1.0, np.max(np.abs(p)))):
        return None
    return np.maximum(p, 0.0)


# ---------------------------------------------------------------------------
# cone program assembly

# Real lifting: each MU's beamformer occupies 2*Mk consecutive columns,
# first the Mk real parts then the Mk imaginary parts.


class _RowBuilder:
    """Accumulates cone rows as affine expressions e(x) = const + coef.x,
    which in G x + s = h form means h_row = const, G_row = -coef."""

    def __init__(self, num_vars: int):
        self.n = num_vars
        self._rows: List[np.ndarray] = []
        self._cols: List[np.ndarray] = []
        self._vals: List[np.ndarray] = []
        self._h: List[float] = []
        self._cones: List[Tuple[str, int]] = []

    @property
    def num_rows(self) -> int:
        return len(self._h)

    def add_row(self, const: float = 0.0, cols=(), vals=()):
        cols = np.asarray(cols, dtype=np.int64).ravel()
        if cols.size:
            vals = np.asarray(vals, dtype=float).ravel()
            self._rows.append(np.full(cols.size, len(self._h), dtype=np.int64))
            self._cols.append(cols)
            self._vals.append(-vals)
        self._h.append(float(const))

    def mark_soc(self, dim: int):
        self._cones.append((SOC, dim))

    def mark_nonneg(self, count: int):
        if count:
            self._cones.append((NONNEG, count))

    def build(self, c: np.ndarray, variables) -> ConeProgram:
        m = len(self._h)
        if self._rows:
            rows = np.concatenate(self._rows)
            cols = np.concatenate(self._cols)
            vals = np.concatenate(self._vals)
        else:
            rows = cols = vals = np.zeros(0)
        G = sp.csr_matrix((vals, (rows, cols)), shape=(m, self.n))
        return ConeProgram(
            c=c, G=G, h=np.array(self._h), cones=tuple(self._cones), variables=variables
        )


def _lift_cols(base: int, mu: int, mk: int) -> np.ndarray:
    return base + 2 * mk * mu + np.arange(2 * mk)


def _block_cols(base: int, mu: int, mk: int, sl: slice) -> np.ndarray:
    idx = np.arange(sl.start, sl.stop)
    return np.concatenate([base + 2 * mk * mu + idx, base + 2 * mk * mu + mk + idx])


def _herm_rows(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # a^H w over the [re; im] lifting: Re -> [ar, ai], Im -> [-ai, ar]
    re = np.concatenate([a.real, a.imag])
    im = np.concatenate([-a.imag, a.real])
    return re, im


def _add_sinr_cones(b: _RowBuilder, eff: np.ndarray, gammas: np.ndarray, base: int, noise_power: float):
    """One SOC per MU: targets met iff the scaled useful term dominates the
    stacked cross terms plus unit noise (channels pre-divided by sigma)."""
    K, mk = eff.shape
    scaled = eff / np.sqrt(noise_power)
    for i in range(K):
        re, im = _herm_rows(scaled[i])
        b.add_row(0.0, _lift_cols(base, i, mk), np.sqrt(1.0 + 1.0 / gammas[i]) * re)
        for j in range(K):
            cols = _lift_cols(base, j, mk)
            b.add_row(0.0, cols, re)
            b.add_row(0.0, cols, im)
        b.add_row(1.0)
        b.mark_soc(2 * K + 2)


def _add_const_norm_cone(b: _RowBuilder, bound: float, entry_cols: np.ndarray):
    # sum of squared entries <= bound, written as a plain norm cone
    b.add_row(np.sqrt(bound))
    for col in entry_cols:
        b.add_row(0.0, [col], [1.0])
    b.mark_soc(entry_cols.size + 1)


def _add_sq_bound_cone(b: _RowBuilder, bound_col: int, bound_coef: float, entry_cols: np.ndarray):
    # sum of squared entries <= bound_coef * x[bound_col], via
    # ||[2y, a-1]|| <= a+1  <=>  ||y||^2 <= a
    b.add_row(1.0, [bound_col], [bound_coef])
    for col in entry_cols:
        b.add_row(0.0, [col], [2.0])
    b.add_row(-1.0, [bound_col], [bound_coef])
    b.mark_soc(entry_cols.size + 2)


def _group_entry_cols(dl_base: int, vdl_base, K: int, mk: int, sl: slice) -> np.ndarray:
    # vdl_base None means the group covers only the DL half
    bases = (dl_base,) if vdl_base is None else (dl_base, vdl_base)
    return np.concatenate([_block_cols(base, i, mk, sl) for base in bases for i in range(K)])


def _add_group_cones(b, t_col, dl_base, vdl_base, K, mk, sl, penalty, scale=1.0):
    # the epigraph column carries scale * (group value): folding the penalty
    # weight into the cone keeps the objective coefficients at unit size,
    # which the reweighting loop needs (beta spans many orders of magnitude)
    if penalty == PENALTY_L12:
        b.add_row(0.0, [t_col], [1.0])
        cols = _group_entry_cols(dl_base, vdl_base, K, mk, sl)
        for col in cols:
            b.add_row(0.0, [col], [scale])
        b.mark_soc(cols.size + 1)
    elif penalty == PENALTY_L1INF:
        # t_n bounds every complex entry magnitude in the group
        bases = (dl_base,) if vdl_base is None else (dl_base, vdl_base)
        for base in bases:
            for i in range(K):
                for k in range(sl.start, sl.stop):
                    b.add_row(0.0, [t_col], [1.0])
                    b.add_row(0.0, [base + 2 * mk * i + k], [scale])
                    b.add_row(0.0, [base + 2 * mk * i + mk + k], [scale])
                    b.mark_soc(3)
    else:
        raise ValueError(f"unknown penalty {penalty!r}")


def _min_power_program(eff, gammas, noise_power, slices=None, per_ap_limits=None) -> ConeProgram:
    K, mk = eff.shape
    nw = 2 * K * mk
    s_col = nw
    c = np.zeros(nw + 1)
    c[s_col] = 1.0
    b = _RowBuilder(nw + 1)
    _add_sinr_cones(b, eff, gammas, 0, noise_power)
    if per_ap_limits is not None:
        for sl, lim in zip(slices, per_ap_limits):
            if np.isfinite(lim):
                cols = np.concatenate([_block_cols(0, i, mk, sl) for i in range(K)])
                _add_const_norm_cone(b, lim, cols)
    _add_sq_bound_cone(b, s_col, 1.0, np.arange(nw))
    return b.build(c, {"w": (0, nw), "s": (nw, nw + 1)})


def _unlift(segment: np.ndarray, K: int) -> np.ndarray:
    w = np.asarray(segment, dtype=float).reshape(K, 2, -1)
    return w[:, 0, :] + 1j * w[:, 1, :]


def _solve_min_power(
    eff, gammas, noise_power, antennas_per_ap, active, per_ap_limits, tolerances
) -> MinPowerResult:
    blocks = [antennas_per_ap[n] for n in active]
    slices = []
    start = 0
    for m in blocks:
        slices.append(slice(start, start + m))
        start += m
    limits = None
    if per_ap_limits is not None:
        limits = [np.asarray(per_ap_limits, dtype=float).ravel()[n] for n in active]
    prog = _min_power_program(eff, gammas, noise_power, slices, limits)
    sol = solve(prog, tolerances)
    if sol.status != OPTIMAL:
        return MinPowerResult(False, None, float("nan"), sol)
    a, bnd = prog.variables["w"]
    w = scatter_blocks(_unlift(sol.x[a:bnd], eff.shape[0]), antennas_per_ap, active)
    return MinPowerResult(True, w, float(np.sum(np.abs(w) ** 2)), sol)


def min_power_dl_beamforming(
    channels: ChannelRealization,
    qos_dl,
    noise_power: float,
    per_ap_limits=None,
    active: Optional[ActiveSet] = None,
    tolerances: Optional[SolverTolerances] = None,
) -> MinPowerResult:
    """Minimum sum-power DL beamformers meeting the SINR targets, with
    optional per-AP transmit budgets; infeasibility is propagated."""
    if active is None:
        active = ActiveSet.all_aps(len(channels.antennas_per_ap))
    K = channels.num_mus
    gam = _as_targets(qos_dl, K, "qos_dl")
    eff = channels.h[:, active.antenna_mask(channels.antennas_per_ap)]
    return _solve_min_power(
        eff, gam, noise_power, channels.antennas_per_ap, active, per_ap_limits, tolerances
    )


def virtual_dl_beamforming(
    channels: ChannelRealization,
    qos_ul,
    noise_power: float,
    active: Optional[ActiveSet] = None,
    tolerances: Optional[SolverTolerances] = None,
) -> MinPowerResult:
    """Virtual-DL min-power beamformers for the UL targets.

    By duality the optimal sum power equals the UL fixed-point sum power for
    the same channels and targets.
    """
    if active is None:
        active = ActiveSet.all_aps(len(channels.antennas_per_ap))
    K = channels.num_mus
    gam = _as_targets(qos_ul, K, "qos_ul")
    eff = ul_effective_channels(channels)[:, active.antenna_mask(channels.antennas_per_ap)]
    return _solve_min_power(
        eff, gam, noise_power, channels.antennas_per_ap, active, None, tolerances
    )


def _group_sparse_program(
    channels,
    qos_dl,
    qos_ul,
    noise_power,
    beta,
    ul_weight,
    penalty,
    dl_limits,
    ul_sum_limit,
    include_vdl=True,
) -> ConeProgram:
    K, M = channels.h.shape
    N = len(channels.antennas_per_ap)
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.size == 1:
        beta = np.full(N, beta[0])
    if beta.size != N or np.any(beta < 0):
        raise ValueError("beta must be nonnegative, one entry per AP")
    if ul_weight < 0:
        raise ValueError("ul_weight must be nonnegative")
    gam_dl = _as_targets(qos_dl, K, "qos_dl")
    gam_ul = _as_targets(qos_ul, K, "qos_ul") if include_vdl else None

    nw = 2 * K * M
    dl_base = 0
    vdl_base = nw if include_vdl else None
    # zero-weight groups carry no penalty, so their t_n (and cone) is dropped;
    # the group value is recomputed from the beamformers afterwards
    t_aps = [n for n in range(N) if beta[n] > 0]
    t_base = 2 * nw if include_vdl else nw
    s_dl = t_base + len(t_aps)
    price_vdl = include_vdl and ul_weight > 0
    s_vdl = s_dl + 1 if price_vdl else None
    n_vars = s_dl + (2 if price_vdl else 1)

    c = np.zeros(n_vars)
    # each kept epigraph column stores beta_n * t_n, so its objective
    # coefficient is 1 regardless of how extreme the reweighting gets
    c[t_base : t_base + len(t_aps)] = 1.0
    c[s_dl] = 1.0
    if price_vdl:
        c[s_vdl] = ul_weight

    b = _RowBuilder(n_vars)
    _add_sinr_cones(b, channels.h, gam_dl, dl_base, noise_power)
    if include_vdl:
        _add_sinr_cones(b, ul_effective_channels(channels), gam_ul, vdl_base, noise_power)
    for t_idx, n in enumerate(t_aps):
        _add_group_cones(
            b,
            t_base + t_idx,
            dl_base,
            vdl_base,
            K,
            M,
            channels.ap_slices[n],
            penalty,
            scale=float(beta[n]),
        )
    if dl_limits is not None:
        lims = np.asarray(dl_limits, dtype=float).ravel()
        if lims.size != N:
            raise ValueError("dl_limits must have one entry per AP")
        for n in range(N):
            if np.isfinite(lims[n]):
                cols = np.concatenate(
                    [_block_cols(dl_base, i, M, channels.ap_slices[n]) for i in range(K)]
                )
                _add_const_norm_cone(b, lims[n], cols)
    if include_vdl and ul_sum_limit is not None and np.isfinite(ul_sum_limit):
        _add_const_norm_cone(b, ul_sum_limit, nw + np.arange(nw))
    _add_sq_bound_cone(b, s_dl, 1.0, np.arange(nw))
    if price_vdl:
        _add_sq_bound_cone(b, s_vdl, 1.0, nw + np.arange(nw))

    variables = {
        "w_dl": (0, nw),
        # penalty contributions beta_n * t_n, one per kept group; recover the
        # raw group values with group_norms on the extracted beamformers
        "t": (t_base, t_base + len(t_aps)),
        "s_dl": (s_dl, s_dl + 1),
    }
    if include_vdl:
        variables["w_vdl"] = (nw, 2 * nw)
    if price_vdl:
        variables["s_vdl"] = (s_vdl, s_vdl + 1)
    return b.build(c, variables)


def build_p4(
    channels: ChannelRealization,
    qos_dl,
    qos_ul,
    noise_power: float,
    beta,
    ul_weight: float = 1.0,
    penalty: str = PENALTY_L12,
) -> ConeProgram:
    """Group-penalized joint problem without power budgets.

    Objective sum_n beta_n t_n + sum_i ||w_dl_i||^2 + ul_weight * sum_i
    ||w_vdl_i||^2 subject to both SINR cone families and the per-AP group
    cones tying t_n to the stacked (DL, virtual-DL) block of AP n.
    With beta = 0 the problem decomposes into the two independent min-power
    problems.
    """
    return _group_sparse_program(
        channels, qos_dl, qos_ul, noise_power, beta, ul_weight, penalty, None, None
    )


def build_p5(
    channels: ChannelRealization,
    qos_dl,
    qos_ul,
    noise_power: float,
    beta,
    dl_limits,
    ul_sum_limit: float,
    ul_weight: float = 1.0,
    penalty: str = PENALTY_L12,
) -> ConeProgram:
    """build_p4 plus per-AP DL power cones and the UL sum-power cone.

    Infinite limits are simply omitted, so +inf budgets reproduce build_p4.
    """
    return _group_sparse_program(
        channels,
        qos_dl,
        qos_ul,
        noise_power,
        beta,
        ul_weight,
        penalty,
        dl_limits,
        ul_sum_limit,
    )


def build_dl_group_sparse(
    channels: ChannelRealization,
    qos_dl,
    noise_power: float,
    beta,
    dl_limits,
    penalty: str = PENALTY_L12,
) -> ConeProgram:
    """Downlink-only counterpart of build_p5: the virtual-DL half is absent,
    so the group penalty acts on the DL blocks alone."""
    return _group_sparse_program(
        channels,
        qos_dl,
        1.0,
        noise_power,
        beta,
        0.0,
        penalty,
        dl_limits,
        None,
        include_vdl=False,
    )


def extract_joint_beamformers(
    program: ConeProgram, x: np.ndarray, num_mus: int
) -> Tuple[np.ndarray, np.ndarray]:
    """(w_dl, w_vdl) on the program's own antenna domain."""
    a, bnd = program.variables["w_dl"]
    w_dl = _unlift(x[a:bnd], num_mus)
    a, bnd = program.variables["w_vdl"]
    w_vdl = _unlift(x[a:bnd], num_mus)
    return w_dl, w_vdl


def extract_dl_beamformers(program: ConeProgram, x: np.ndarray, num_mus: int) -> np.ndarray:
    """w_dl on the program's own antenna domain."""
    a, bnd = program.variables["w_dl"]
    return _unlift(x[a:bnd], num_mus)


def _normalize_rho_fixed(rho_fixed, N):
    if rho_fixed is None:
        return [None] * N
    out = list(rho_fixed)
    if len(out) != N:
        raise ValueError("rho_fixed must have one entry per AP")
    for v in out:
        if v not in (0, 1, None):
            raise ValueError("rho_fixed entries must be 0, 1, or None")
    return out


def build_p6(
    channels: ChannelRealization,
    qos_dl,
    qos_ul,
    noise_power: float,
    ap_static_power,
    dl_limits,
    ul_sum_limit: float,
    ul_weight: float = 1.0,
    rho_fixed=None,
) -> ConeProgram:
    """Active/sleep relaxation with per-AP activity variables rho in [0, 1].

    Objective sum_n rho_n P_c,n + sum ||w_dl||^2 + ul_weight sum ||w_vdl||^2
    with the SINR cones, the UL sum-power cone, coupled per-AP cones
    sum_i ||w_dl_{i,n}||^2 <= rho_n P_dl_n and sum_i ||w_vdl_{i,n}||^2 <=
    rho_n * ul_sum_limit, plus sum rho >= 1 and the unit box.  APs fixed to
    rho = 0 are eliminated (their blocks are identically zero); APs fixed to
    rho = 1 get plain budget cones, and their static power is a constant the
    caller accounts for outside the program objective.
    """
    N = len(channels.antennas_per_ap)
    K = channels.num_mus
    statics = np.asarray(ap_static_power, dtype=float).ravel()
    lims = np.asarray(dl_limits, dtype=float).ravel()
    if statics.size != N or lims.size != N:
        raise ValueError("ap_static_power and dl_limits must have one entry per AP")
    rho_fixed = _normalize_rho_fixed(rho_fixed, N)
    kept = [n for n in range(N) if rho_fixed[n] != 0]
    if not kept:
        raise ValueError("all APs fixed to sleep")
    free = [n for n in kept if rho_fixed[n] is None]
    have_on = any(rho_fixed[n] == 1 for n in kept)
    if not free and not have_on:
        raise ValueError("no AP can be active")

    reduced = restrict_channels(channels, ActiveSet(tuple(kept)))
    mk = reduced.h.shape[1]
    gam_dl = _as_targets(qos_dl, K, "qos_dl")
    gam_ul = _as_targets(qos_ul, K, "qos_ul")

    nw = 2 * K * mk
    dl_base, vdl_base = 0, nw
    s_dl = 2 * nw
    price_vdl = ul_weight > 0
    s_vdl = s_dl + 1 if price_vdl else None
    rho_base = s_dl + (2 if price_vdl else 1)
    n_vars = rho_base + len(free)

    c = np.zeros(n_vars)
    c[s_dl] = 1.0
    if price_vdl:
        c[s_vdl] = ul_weight
    for f_idx, n in enumerate(free):
        c[rho_base + f_idx] = statics[n]

    b = _RowBuilder(n_vars)
    # box 0 <= rho <= 1, and sum rho >= 1 unless some AP is pinned on
    nonneg = 0
    for f_idx in range(len(free)):
        col = rho_base + f_idx
        b.add_row(0.0, [col], [1.0])
        b.add_row(1.0, [col], [-1.0])
        nonneg += 2
    if not have_on:
        cols = rho_base + np.arange(len(free))
        b.add_row(-1.0, cols, np.ones(len(free)))
        nonneg += 1
    b.mark_nonneg(nonneg)

    _add_sinr_cones(b, reduced.h, gam_dl, dl_base, noise_power)
    _add_sinr_cones(b, ul_effective_channels(reduced), gam_ul, vdl_base, noise_power)
    if np.isfinite(ul_sum_limit):
        _add_const_norm_cone(b, ul_sum_limit, nw + np.arange(nw))
    for r_idx, n in enumerate(kept):
        sl = reduced.ap_slices[r_idx]
        dl_cols = np.concatenate([_block_cols(dl_base, i, mk, sl) for i in range(K)])
        vdl_cols = np.concatenate([_block_cols(vdl_base, i, mk, sl) for i in range(K)])
        if rho_fixed[n] == 1:
            if np.isfinite(lims[n]):
                _add_const_norm_cone(b, lims[n], dl_cols)
            # the VDL block cone at rho = 1 is implied by the sum cone above
        else:
            f_idx = free.index(n)
            col = rho_base + f_idx
            if np.isfinite(lims[n]):
                _add_sq_bound_cone(b, col, lims[n], dl_cols)
            if np.isfinite(ul_sum_limit):
                _add_sq_bound_cone(b, col, ul_sum_limit, vdl_cols)
    _add_sq_bound_cone(b, s_dl, 1.0, np.arange(nw))
    if price_vdl:
        _add_sq_bound_cone(b, s_vdl, 1.0, nw + np.arange(nw))

    variables = {
        "w_dl": (0, nw),
        "w_vdl": (nw, 2 * nw),
        "s_dl": (s_dl, s_dl + 1),
        "rho": (rho_base, rho_base + len(free)),
    }
    if price_vdl:
        variables["s_vdl"] = (s_vdl, s_vdl + 1)
    return b.build(c, variables)


def extract_p6_solution(
    program: ConeProgram,
    x: np.ndarray,
    channels: ChannelRealization,
    rho_fixed=None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(w_dl, w_vdl, rho) on the full antenna/AP layout."""
    N = len(channels.antennas_per_ap)
    rho_fixed = _normalize_rho_fixed(rho_fixed, N)
    kept = [n for n in range(N) if rho_fixed[n] != 0]
    free = [n for n in kept if rho_fixed[n] is None]
    K = channels.num_mus
    w_dl_r, w_vdl_r = extract_joint_beamformers(program, x, K)
    act = ActiveSet(tuple(kept))
    w_dl = scatter_blocks(w_dl_r, channels.antennas_per_ap, act)
    w_vdl = scatter_blocks(w_vdl_r, channels.antennas_per_ap, act)
    rho = np.zeros(N)
    a, _ = program.variables["rho"]
    for f_idx, n in enumerate(free):
        rho[n] = x[a + f_idx]
    for n in kept:
        if rho_fixed[n] == 1:
            rho[n] = 1.0
    return w_dl, w_vdl, rho


# ---------------------------------------------------------------------------
# objective and feasibility


def weighted_total_power(
    solution: BeamformingSolution, active: ActiveSet, config
) -> ObjectiveBreakdown:
    """Three-term weighted sum power: static, DL transmit, weighted MU transmit.

    Rejects solutions whose beamformer blocks are nonzero outside the active
    set, since those would draw power from sleeping APs.
    """
    mask = active.antenna_mask(config.antennas_per_ap)
    for name in ("w_dl", "w_vdl", "v_ul"):
        arr = getattr(solution, name)
        if np.any(arr[:, ~mask] != 0):
            raise ValueError(f"{name} has nonzero entries outside the active set")
    ap_static = float(sum(config.ap_static_power[n] for n in active))
    dl_transmit = float(np.sum(np.abs(solution.w_dl) ** 2))
    ul_transmit = float(np.sum(solution.p_ul))
    return ObjectiveBreakdown(
        ap_static=ap_static,
        dl_transmit=dl_transmit,
        ul_transmit=ul_transmit,
        ul_weight=float(config.ul_weight),
    )


def check_joint_feasibility(
    channels: ChannelRealization,
    config,
    active: ActiveSet,
    tolerances: Optional[SolverTolerances] = None,
) -> FeasibilityReport:
    """DL and UL feasibility of an active set, with witnessing solutions.

    DL holds iff min-power beamforming under the per-AP budgets is solvable;
    UL holds iff the fixed point converges with every p_i within its budget
    (the fixed point is component-wise minimal, so the comparison is exact).
    """
    dl = min_power_dl_beamforming(
        channels,
        config.qos_dl,
        config.noise_power,
        per_ap_limits=config.ap_tx_limit,
        active=active,
        tolerances=tolerances,
    )
    fp = ul_fixed_point_power(
        channels,
        config.qos_ul,
        config.noise_power,
        active,
        divergence_guard=1e6 * sum(config.mu_tx_limit),
    )
    if fp.feasible:
        limits = np.asarray(config.mu_tx_limit, dtype=float)
        bad = np.nonzero(fp.p_ul > limits * (1.0 + 1e-9))[0]
        ul_ok = bad.size == 0
        violating = tuple(int(i) for i in bad)
    else:
        ul_ok = False
        violating = ()
    return FeasibilityReport(
        dl_feasible=dl.feasible,
        ul_feasible=ul_ok,
        violating_mus=violating,
        w_dl=dl.w,
        p_ul=fp.p_ul,
        v_ul=fp.v_ul,
    )
