"""Active-AP selection for joint downlink/uplink serving.

Two sparsity-driven selectors plus the baselines they are measured against:

* ``algorithm_gso``: reweighted group-penalty minimization. Solving the
  budgeted joint problem with per-AP group weights ``beta_n`` and refreshing
  ``beta_n = P_c,n / (t_n + eps)`` drives whole AP blocks to zero where the
  static power is not worth the transmit-power savings. A price-guided
  repair loop then re-activates APs until every MU transmit-power limit
  holds, which is guaranteed to finish because the all-active set is
  feasible by precondition.
* ``algorithm_rip``: backward elimination guided by the relaxed on/off
  variables rho_n. The AP with the smallest relaxed rho is put to sleep,
  the candidate set is re-scored with rho pinned to 0/1, and elimination
  stops as soon as the scored objective rises or any check fails.
* ``exhaustive_search`` (optimal reference), ``joint_processing`` (all APs
  on), signal-strength association (``apirss_select`` / ``muirss_select``),
  and a downlink-only variant of the group-penalty selector.

Every entry point returns an :class:`AssociationResult` whose ``feasible``
flag is backed by an independent re-evaluation of all SINR targets and
power limits on the returned solution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from .conic import OPTIMAL, SolverTolerances, solve
from .scenario import Scenario
from .beamform import (
    ActiveSet,
    BeamformingSolution,
    ChannelRealization,
    ObjectiveBreakdown,
    PENALTY_L12,
    PENALTY_L1INF,
    build_dl_group_sparse,
    build_p5,
    build_p6,
    check_joint_feasibility,
    dl_sinr,
    extract_dl_beamformers,
    extract_joint_beamformers,
    extract_p6_solution,
    group_norms,
    min_power_dl_beamforming,
    restrict_channels,
    scatter_blocks,
    ul_fixed_point_power,
    ul_powers_for_filters,
    ul_sinr,
    weighted_total_power,
)

# re-checks of a returned solution accept this much relative slack
VERIFY_TOL = 1e-6

# the iterative selectors solve many programs whose optima only steer the
# search; a slightly loose stop keeps them fast, the final solve runs tight
_SEARCH_TOL = SolverTolerances(feastol=1e-7, abstol=1e-7, reltol=1e-7)


@dataclass(frozen=True)
class GsoParams:
    """Knobs of the reweighted group-penalty selector.

    convergence_eta is a relative change threshold on the weights beta;
    sparsity_threshold is relative to the largest group norm when deciding
    which AP blocks count as switched off.
    """

    epsilon: float = 1e-6
    convergence_eta: float = 1e-3
    l_max: int = 30
    penalty: str = PENALTY_L12
    sparsity_threshold: float = 1e-4

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.convergence_eta <= 0:
            raise ValueError("convergence_eta must be positive")
        if self.l_max < 1:
            raise ValueError("l_max must be at least 1")
        if self.penalty not in (PENALTY_L12, PENALTY_L1INF):
            raise ValueError(f"unknown penalty {self.penalty!r}")
        if not 0 < self.sparsity_threshold < 1:
            raise ValueError("sparsity_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class PriceState:
    """Violating MUs and the per-AP prices computed from them."""

    violating: Tuple[int, ...]
    prices: Dict[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class AssociationResult:
    """Outcome of one selection run.

    solution and objective are None when no feasible operating point was
    produced; trace carries per-iteration records (JSON-serializable).
    """

    active: ActiveSet
    solution: Optional[BeamformingSolution]
    objective: Optional[ObjectiveBreakdown]
    feasible: bool
    trace: Tuple[dict, ...] = ()


def export_trace(result: AssociationResult, path) -> None:
    """Dump a result's iteration records to a JSON file."""
    payload = {
        "active": [int(n) for n in result.active],
        "feasible": bool(result.feasible),
        "trace": list(result.trace),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def reweight_betas(t_prev, ap_static_power, epsilon: float) -> np.ndarray:
    """Next group weights beta_n = P_c,n / (t_n + epsilon)."""
    t = np.asarray(t_prev, dtype=float).ravel()
    pc = np.asarray(ap_static_power, dtype=float).ravel()
    if t.size != pc.size:
        raise ValueError("t_prev and ap_static_power must have one entry per AP")
    if np.any(t < 0):
        raise ValueError("group norms must be nonnegative")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return pc / (t + epsilon)


def price_update(
    channels: ChannelRealization,
    p_tilde,
    ul_limits,
    ap_static_power,
    candidate: ActiveSet,
) -> Tuple[PriceState, int]:
    """Price the sleeping APs by how much they would relieve the violating MUs.

    theta_m = (1/P_c,m) * sum_{i in B} ((p_i - P_i,max)/P_i,max) * ||g_i,m||^2
    over the MUs B whose minimum UL power exceeds its limit. Returns the
    state plus the argmax AP, ties broken toward the lowest index.
    """
    K = channels.num_mus
    N = len(channels.antennas_per_ap)
    p = np.asarray(p_tilde, dtype=float).ravel()
    limits = np.asarray(ul_limits, dtype=float).ravel()
    if limits.size == 1:
        limits = np.full(K, limits[0])
    pc = np.asarray(ap_static_power, dtype=float).ravel()
    bad = np.nonzero(p > limits)[0]
    if bad.size == 0:
        raise ValueError("no MU exceeds its power limit, nothing to price")
    outside = [m for m in range(N) if m not in candidate]
    if not outside:
        raise ValueError("candidate set already contains every AP")
    weights = (p[bad] - limits[bad]) / limits[bad]
    prices: Dict[int, float] = {}
    for m in outside:
        sl = channels.ap_slices[m]
        gains = np.sum(np.abs(channels.g[bad, sl]) ** 2, axis=1)
        prices[m] = float(np.dot(weights, gains) / pc[m])
    chosen = min(outside, key=lambda m: (-prices[m], m))
    state = PriceState(violating=tuple(int(i) for i in bad), prices=prices)
    return state, chosen


def _ul_guard(config) -> float:
    return 1e6 * float(np.sum(config.mu_tx_limit))


def _precheck_record(report) -> dict:
    return {
        "phase": "precheck",
        "dl_feasible": bool(report.dl_feasible),
        "ul_feasible": bool(report.ul_feasible),
        "violating_mus": [int(i) for i in report.violating_mus],
    }


def _verify_solution(channels, config, solution: BeamformingSolution) -> Tuple[bool, dict]:
    """Independent re-check of every target and limit, with relative slack."""
    qos_dl = np.asarray(config.qos_dl, dtype=float)
    qos_ul = np.asarray(config.qos_ul, dtype=float)
    sinr_dl = dl_sinr(channels, solution.w_dl, config.noise_power)
    sinr_ul = ul_sinr(channels, solution.v_ul, solution.p_ul, config.noise_power)
    dl_ok = bool(np.all(sinr_dl >= qos_dl * (1.0 - VERIFY_TOL)))
    ul_ok = bool(np.all(sinr_ul >= qos_ul * (1.0 - VERIFY_TOL)))
    ap_power = np.array(
        [float(np.sum(np.abs(solution.w_dl[:, sl]) ** 2)) for sl in channels.ap_slices]
    )
    ap_limits = np.asarray(config.ap_tx_limit, dtype=float)
    mu_limits = np.asarray(config.mu_tx_limit, dtype=float)
    ap_ok = bool(np.all(ap_power <= ap_limits * (1.0 + VERIFY_TOL)))
    mu_ok = bool(np.all(solution.p_ul <= mu_limits * (1.0 + VERIFY_TOL)))
    record = {
        "phase": "verify",
        "dl_sinr_ok": dl_ok,
        "ul_sinr_ok": ul_ok,
        "ap_power_ok": ap_ok,
        "mu_power_ok": mu_ok,
    }
    return dl_ok and ul_ok and ap_ok and mu_ok, record


def _finalize(
    channels,
    config,
    active: ActiveSet,
    w_dl: np.ndarray,
    w_vdl: np.ndarray,
    v_ul: np.ndarray,
    p_ul: np.ndarray,
    trace: List[dict],
) -> AssociationResult:
    solution = BeamformingSolution(w_dl=w_dl, w_vdl=w_vdl, v_ul=v_ul, p_ul=p_ul)
    ok, record = _verify_solution(channels, config, solution)
    trace.append(record)
    objective = weighted_total_power(solution, active, config)
    return AssociationResult(active, solution, objective, ok, tuple(trace))


def _infeasible(active: ActiveSet, trace: List[dict]) -> AssociationResult:
    return AssociationResult(active, None, None, False, tuple(trace))


def _uplink_from_virtual(
    channels, config, w_vdl: np.ndarray, active: ActiveSet
) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Receive filters and powers for the returned solution.

    Reusing the virtual-DL beamformers as receive filters is exact when the
    virtual link is power-minimal (duality); with an unpriced virtual link
    (ul_weight = 0) or borderline numerics the filters can overshoot the
    per-MU limits, in which case the component-wise minimal fixed point is
    used instead.
    """
    mu_limits = np.asarray(config.mu_tx_limit, dtype=float)
    p = ul_powers_for_filters(channels, w_vdl, config.qos_ul, config.noise_power)
    if p is not None and np.all(p <= mu_limits * (1.0 + VERIFY_TOL)):
        return w_vdl, p
    fp = ul_fixed_point_power(
        channels, config.qos_ul, config.noise_power, active, divergence_guard=_ul_guard(config)
    )
    if fp.feasible and np.all(fp.p_ul <= mu_limits * (1.0 + VERIFY_TOL)):
        return fp.v_ul, fp.p_ul
    return None


def _reweight_candidate(
    channels, config, params: GsoParams, trace: List[dict], include_ul: bool
) -> Tuple[Set[int], np.ndarray]:
    """Reweighting loop; returns the surviving AP set and final group norms."""
    K = channels.num_mus
    N = len(channels.antennas_per_ap)
    pc = np.asarray(config.ap_static_power, dtype=float)
    ul_sum = float(np.sum(config.mu_tx_limit))

    def solve_weighted(beta):
        if include_ul:
            prog = build_p5(
                channels,
                config.qos_dl,
                config.qos_ul,
                config.noise_power,
                beta,
                config.ap_tx_limit,
                ul_sum,
                config.ul_weight,
                params.penalty,
            )
        else:
            prog = build_dl_group_sparse(
                channels,
                config.qos_dl,
                config.noise_power,
                beta,
                config.ap_tx_limit,
                params.penalty,
            )
        sol = solve(prog, _SEARCH_TOL)
        if sol.status != OPTIMAL:
            return None
        if include_ul:
            w_dl, w_vdl = extract_joint_beamformers(prog, sol.x, K)
        else:
            w_dl = extract_dl_beamformers(prog, sol.x, K)
            w_vdl = np.zeros_like(w_dl)
        return group_norms(w_dl, w_vdl, channels.antennas_per_ap, params.penalty)

    t = solve_weighted(np.zeros(N))
    if t is None:
        # unweighted solve failed numerically even though the all-active set
        # checked out; fall back to keeping every AP
        trace.append({"phase": "reweight", "event": "initial solve failed, keeping all APs"})
        return set(range(N)), np.ones(N)
    beta_prev = None
    for l in range(1, params.l_max + 1):
        beta = reweight_betas(t, pc, params.epsilon)
        t_new = solve_weighted(beta)
        if t_new is None:
            trace.append(
                {"phase": "reweight", "iteration": l, "event": "solver stalled, keeping previous iterate"}
            )
            break
        t = t_new
        trace.append(
            {"phase": "reweight", "iteration": l, "beta": beta.tolist(), "t": t.tolist()}
        )
        if beta_prev is not None:
            rel = float(np.max(np.abs(beta - beta_prev) / np.maximum(beta_prev, 1e-300)))
            if rel <= params.convergence_eta:
                break
        beta_prev = beta

    cutoff = params.sparsity_threshold * float(np.max(t))
    kept = set(int(n) for n in np.nonzero(t > cutoff)[0])
    if not kept:
        kept = {int(np.argmax(t))}
    trace.append({"phase": "threshold", "t": t.tolist(), "kept": sorted(kept)})
    return kept, np.asarray(t, dtype=float)


def _repair_uplink(channels, config, candidate: Set[int], trace: List[dict]) -> Set[int]:
    """Grow the candidate set until every MU power limit holds.

    Each round prices the sleeping APs by the violating MUs' channels and
    wakes the argmax; the set grows strictly, so with the all-active set
    feasible the loop always terminates.
    """
    N = len(channels.antennas_per_ap)
    mu_limits = np.asarray(config.mu_tx_limit, dtype=float)
    guard = _ul_guard(config)
    while len(candidate) < N:
        active = ActiveSet(tuple(sorted(candidate)))
        fp = ul_fixed_point_power(
            channels, config.qos_ul, config.noise_power, active, divergence_guard=guard
        )
        if fp.feasible:
            if np.all(fp.p_ul <= mu_limits):
                trace.append({"phase": "repair", "p_ul": fp.p_ul.tolist(), "violating": []})
                return candidate
            state, chosen = price_update(
                channels, fp.p_ul, mu_limits, config.ap_static_power, active
            )
            trace.append(
                {
                    "phase": "repair",
                    "violating": list(state.violating),
                    "prices": {str(m): v for m, v in state.prices.items()},
                    "added": chosen,
                }
            )
        else:
            # no finite powers hit the targets on this set; the usual prices
            # are undefined, so weight every MU equally and wake the AP with
            # the best aggregate uplink gain per watt of static power
            pc = np.asarray(config.ap_static_power, dtype=float)
            outside = [m for m in range(N) if m not in candidate]
            scores = {
                m: float(np.sum(np.abs(channels.g[:, channels.ap_slices[m]]) ** 2) / pc[m])
                for m in outside
            }
            chosen = min(outside, key=lambda m: (-scores[m], m))
            trace.append({"phase": "repair", "event": "uplink targets unreachable", "added": chosen})
        candidate.add(chosen)
    return candidate


def _solve_restricted(
    scenario: Scenario,
    channels,
    candidate: Set[int],
    params: GsoParams,
    trace: List[dict],
    include_ul: bool,
    restore_scores: np.ndarray,
) -> AssociationResult:
    """Final unweighted solve on the candidate set.

    If the thresholded set turns out marginally infeasible, pruned APs are
    restored in order of their final group norms until the solve succeeds
    (the all-active set is feasible, so this always terminates).
    """
    config = scenario.config
    K = channels.num_mus
    N = len(channels.antennas_per_ap)
    ul_sum = float(np.sum(config.mu_tx_limit))
    pruned = sorted(set(range(N)) - candidate, key=lambda n: (-restore_scores[n], n))
    while True:
        active = ActiveSet(tuple(sorted(candidate)))
        reduced = restrict_channels(channels, active)
        limits = [np.asarray(config.ap_tx_limit, dtype=float)[n] for n in active]
        if include_ul:
            prog = build_p5(
                reduced,
                config.qos_dl,
                config.qos_ul,
                config.noise_power,
                np.zeros(len(active)),
                limits,
                ul_sum,
                config.ul_weight,
                params.penalty,
            )
        else:
            prog = build_dl_group_sparse(
                reduced, config.qos_dl, config.noise_power, np.zeros(len(active)), limits, params.penalty
            )
        sol = solve(prog)
        if sol.status == OPTIMAL:
            break
        if pruned:
            back = pruned.pop(0)
            candidate.add(back)
            trace.append({"phase": "restore", "added": back, "status": sol.status})
            continue
        trace.append({"phase": "final", "status": sol.status})
        return _infeasible(active, trace)

    if include_ul:
        w_dl_r, w_vdl_r = extract_joint_beamformers(prog, sol.x, K)
    else:
        w_dl_r = extract_dl_beamformers(prog, sol.x, K)
        w_vdl_r = np.zeros_like(w_dl_r)
    w_dl = scatter_blocks(w_dl_r, channels.antennas_per_ap, active)
    w_vdl = scatter_blocks(w_vdl_r, channels.antennas_per_ap, active)

    if include_ul:
        uplink = _uplink_from_virtual(channels, config, w_vdl, active)
        if uplink is None:
            trace.append({"phase": "final", "status": "uplink power recovery failed"})
            return _infeasible(active, trace)
        v_ul, p_ul = uplink
    else:
        # selection ignored the uplink; evaluate it on the chosen set
        fp = ul_fixed_point_power(
            channels, config.qos_ul, config.noise_power, active, divergence_guard=_ul_guard(config)
        )
        if fp.feasible:
            v_ul, p_ul = fp.v_ul, fp.p_ul
        else:
            v_ul = np.zeros_like(w_dl)
            p_ul = np.zeros(K)
    return _finalize(channels, config, active, w_dl, w_vdl, v_ul, p_ul, trace)


def algorithm_gso(
    scenario: Scenario, channels: ChannelRealization, params: Optional[GsoParams] = None
) -> AssociationResult:
    """Group-penalty AP selection for the joint DL/UL problem.

    Stages: all-active feasibility check, reweighted group-penalty loop,
    thresholding, price-guided uplink repair, final unweighted solve on the
    active set with the uplink powers recovered from the virtual link.
    """
    params = params or GsoParams()
    config = scenario.config
    N = config.num_aps
    trace: List[dict] = []
    report = check_joint_feasibility(channels, config, ActiveSet.all_aps(N))
    trace.append(_precheck_record(report))
    if not report.feasible:
        return _infeasible(ActiveSet.all_aps(N), trace)
    candidate, t_final = _reweight_candidate(channels, config, params, trace, include_ul=True)
    candidate = _repair_uplink(channels, config, candidate, trace)
    return _solve_restricted(
        scenario, channels, candidate, params, trace, include_ul=True, restore_scores=t_final
    )


def algorithm_gso_dl_only(
    scenario: Scenario, channels: ChannelRealization, params: Optional[GsoParams] = None
) -> AssociationResult:
    """Group-penalty selection driven by the downlink alone.

    The virtual-DL half and the repair loop are removed; the uplink is only
    evaluated afterwards on whatever set the downlink picked, so results may
    come back infeasible where the joint selector would have repaired them.
    """
    params = params or GsoParams()
    config = scenario.config
    N = config.num_aps
    trace: List[dict] = []
    report = check_joint_feasibility(channels, config, ActiveSet.all_aps(N))
    trace.append(_precheck_record(report))
    if not report.dl_feasible:
        return _infeasible(ActiveSet.all_aps(N), trace)
    candidate, t_final = _reweight_candidate(channels, config, params, trace, include_ul=False)
    return _solve_restricted(
        scenario, channels, candidate, params, trace, include_ul=False, restore_scores=t_final
    )


def algorithm_rip(scenario: Scenario, channels: ChannelRealization) -> AssociationResult:
    """Backward elimination guided by the relaxed on/off variables.

    Each round solves the relaxation on the candidate set, sleeps the AP
    with the smallest rho, and scores the reduced set with rho pinned to
    0/1 (static power added for the pinned-on APs). Elimination stops when
    the score rises, the pinned problem is infeasible, or the reduced set
    cannot carry the uplink within the per-MU limits; the best visited set
    wins.
    """
    config = scenario.config
    N = config.num_aps
    K = channels.num_mus
    pc = np.asarray(config.ap_static_power, dtype=float)
    mu_limits = np.asarray(config.mu_tx_limit, dtype=float)
    ul_sum = float(np.sum(mu_limits))
    trace: List[dict] = []
    report = check_joint_feasibility(channels, config, ActiveSet.all_aps(N))
    trace.append(_precheck_record(report))
    if not report.feasible:
        return _infeasible(ActiveSet.all_aps(N), trace)

    def solve_p6(rho_fixed, tolerances):
        prog = build_p6(
            channels,
            config.qos_dl,
            config.qos_ul,
            config.noise_power,
            pc,
            config.ap_tx_limit,
            ul_sum,
            config.ul_weight,
            rho_fixed=rho_fixed,
        )
        return prog, solve(prog, tolerances)

    def canonical_rho(w_dl, w_vdl, candidate) -> np.ndarray:
        # The relaxed optimum is not unique in rho: whenever the activity
        # ratios sum to less than one, the sum constraint binds and the
        # surplus can sit on any cheapest-static-power AP without changing
        # the objective. The solver spreads it evenly, which drowns the
        # ranking, so rank on the canonical optimal point instead: every
        # rho at its coupling lower bound, surplus parked on the busiest
        # AP among the cheapest.
        dl_limits = np.asarray(config.ap_tx_limit, dtype=float)
        lower = np.zeros(N)
        for n, sl in enumerate(channels.ap_slices):
            dl_use = float(np.sum(np.abs(w_dl[:, sl]) ** 2))
            vdl_use = float(np.sum(np.abs(w_vdl[:, sl]) ** 2))
            lower[n] = max(dl_use / dl_limits[n], vdl_use / ul_sum)
        surplus = 1.0 - float(sum(lower[n] for n in candidate))
        if surplus > 0:
            cheapest = min(pc[n] for n in candidate)
            club = [n for n in candidate if pc[n] <= cheapest * (1.0 + 1e-12)]
            carrier = min(club, key=lambda n: (-lower[n], n))
            lower[carrier] += surplus
        return lower

    candidate: Set[int] = set(range(N))
    removed_order: List[int] = []
    best: Optional[Tuple[float, Tuple[int, ...]]] = None
    phi_prev = float("inf")
    for iteration in range(1, N + 1):
        rho_free = [None if n in candidate else 0 for n in range(N)]
        prog, sol = solve_p6(rho_free, _SEARCH_TOL)
        if sol.status != OPTIMAL:
            trace.append({"phase": "eliminate", "iteration": iteration, "event": f"relaxed solve {sol.status}"})
            break
        w_dl_rel, w_vdl_rel, rho = extract_p6_solution(prog, sol.x, channels, rho_free)
        rho_rank = canonical_rho(w_dl_rel, w_vdl_rel, candidate)
        if len(candidate) == 1:
            trace.append({"phase": "eliminate", "iteration": iteration, "rho": rho.tolist(), "event": "single AP left"})
            break
        weakest = min(candidate, key=lambda n: (rho_rank[n], n))
        candidate.discard(weakest)
        removed_order.append(weakest)
        record = {
            "phase": "eliminate",
            "iteration": iteration,
            "rho": rho.tolist(),
            "rho_ranked": rho_rank.tolist(),
            "removed": weakest,
        }
        fp = ul_fixed_point_power(
            channels,
            config.qos_ul,
            config.noise_power,
            ActiveSet(tuple(sorted(candidate))),
            divergence_guard=_ul_guard(config),
        )
        if not (fp.feasible and np.all(fp.p_ul <= mu_limits * (1.0 + 1e-9))):
            record["event"] = "uplink limits fail"
            trace.append(record)
            break
        rho_binary = [1 if n in candidate else 0 for n in range(N)]
        _, scored = solve_p6(rho_binary, _SEARCH_TOL)
        if scored.status != OPTIMAL:
            record["event"] = f"pinned solve {scored.status}"
            trace.append(record)
            break
        phi = float(scored.objective_value) + float(pc[sorted(candidate)].sum())
        record["phi"] = phi
        trace.append(record)
        if phi > phi_prev:
            break
        best = (phi, tuple(sorted(candidate)))
        phi_prev = phi

    chosen = set(best[1]) if best is not None else set(range(N))
    restore = [n for n in reversed(removed_order) if n not in chosen]
    while True:
        active = ActiveSet(tuple(sorted(chosen)))
        rho_binary = [1 if n in chosen else 0 for n in range(N)]
        prog, sol = solve_p6(rho_binary, None)
        if sol.status == OPTIMAL:
            break
        if restore:
            back = restore.pop(0)
            chosen.add(back)
            trace.append({"phase": "restore", "added": back, "status": sol.status})
            continue
        trace.append({"phase": "final", "status": sol.status})
        return _infeasible(active, trace)
    w_dl, w_vdl, _ = extract_p6_solution(prog, sol.x, channels, rho_binary)
    uplink = _uplink_from_virtual(channels, config, w_vdl, active)
    if uplink is None:
        trace.append({"phase": "final", "status": "uplink power recovery failed"})
        return _infeasible(active, trace)
    v_ul, p_ul = uplink
    return _finalize(channels, config, active, w_dl, w_vdl, v_ul, p_ul, trace)


def evaluate_active_set(
    scenario: Scenario, channels: ChannelRealization, active: ActiveSet
) -> AssociationResult:
    """Feasibility check plus the decoupled min-power solves on a fixed set."""
    config = scenario.config
    report = check_joint_feasibility(channels, config, active)
    trace = [_precheck_record(report)]
    if not report.feasible:
        return _infeasible(active, trace)
    w_vdl = np.zeros_like(report.w_dl)
    return _finalize(
        channels, config, active, report.w_dl, w_vdl, report.v_ul, report.p_ul, trace
    )


def exhaustive_search(
    scenario: Scenario, channels: ChannelRealization, max_aps: int = 10
) -> AssociationResult:
    """Optimal association by enumerating every nonempty AP subset.

    Each subset is scored by its static power plus the two decoupled
    minimum transmit powers; infeasible subsets are skipped. Exponential in
    the AP count, hence the cap.
    """
    config = scenario.config
    N = config.num_aps
    if N > max_aps:
        raise ValueError(f"{N} APs exceeds the exhaustive-search cap of {max_aps}")
    pc = np.asarray(config.ap_static_power, dtype=float)
    lam = float(config.ul_weight)
    trace: List[dict] = []
    best_total = float("inf")
    best: Optional[Tuple[ActiveSet, object]] = None
    for mask in range(1, 2**N):
        subset = tuple(n for n in range(N) if (mask >> n) & 1)
        active = ActiveSet(subset)
        report = check_joint_feasibility(channels, config, active)
        record = {"phase": "search", "subset": list(subset), "feasible": bool(report.feasible)}
        if report.feasible:
            total = (
                float(pc[list(subset)].sum())
                + float(np.sum(np.abs(report.w_dl) ** 2))
                + lam * float(np.sum(report.p_ul))
            )
            record["total"] = total
            if total < best_total:
                best_total = total
                best = (active, report)
        trace.append(record)
    if best is None:
        return _infeasible(ActiveSet.all_aps(N), trace)
    active, report = best
    w_vdl = np.zeros_like(report.w_dl)
    return _finalize(
        channels, config, active, report.w_dl, w_vdl, report.v_ul, report.p_ul, trace
    )


def joint_processing(scenario: Scenario, channels: ChannelRealization) -> AssociationResult:
    """All APs active; no selection, every static power is paid."""
    return evaluate_active_set(
        scenario, channels, ActiveSet.all_aps(scenario.config.num_aps)
    )


def apirss_select(
    scenario: Scenario, channels: ChannelRealization, ref_power=None
) -> ActiveSet:
    """Association by strongest received AP reference signal.

    Each AP broadcasts with its transmit budget (or the given ref_power)
    split across its antennas; every MU picks the AP it hears loudest and
    the active set is the union. Ties go to the lowest AP index.
    """
    config = scenario.config
    N = config.num_aps
    if ref_power is None:
        ref = np.asarray(config.ap_tx_limit, dtype=float)
    else:
        ref = np.asarray(ref_power, dtype=float).ravel()
        if ref.size == 1:
            ref = np.full(N, ref[0])
        if ref.size != N:
            raise ValueError("ref_power must have one entry per AP")
    antennas = np.asarray(config.antennas_per_ap, dtype=float)
    chosen = set()
    for i in range(channels.num_mus):
        received = np.array(
            [np.sum(np.abs(channels.h[i, sl]) ** 2) for sl in channels.ap_slices]
        )
        chosen.add(int(np.argmax(ref * received / antennas)))
    return ActiveSet(tuple(sorted(chosen)))


def muirss_select(scenario: Scenario, channels: ChannelRealization) -> ActiveSet:
    """Association by strongest MU reference signal heard at each AP."""
    chosen = set()
    for i in range(channels.num_mus):
        received = np.array(
            [np.sum(np.abs(channels.g[i, sl]) ** 2) for sl in channels.ap_slices]
        )
        chosen.add(int(np.argmax(received)))
    return ActiveSet(tuple(sorted(chosen)))
