"""Single-cell load minimization by majorize-minimize iterations.

The cell load sum_j d_j / log2(1 + SINR_j) is brought into difference-of-
convex form by auxiliary variables gamma (SINR lower bound) and beta
(interference-plus-noise upper bound); the coupling constraint
beta*gamma <= p |g + lam.phi|^2 is written as a difference of squares and
the concave pieces are linearized at the current iterate.  Each outer
iteration solves one convex subproblem, and the objective never
increases because the majorizer is tight at the expansion point.

Domains: the ideal disc relaxation optimizes directly; the unit-modulus
domain adds a fixed-weight penalty pushing |phi_q| to one, then snaps
exactly; the discrete domain rounds the unit-modulus solution to the
phase grid and keeps the result only when it beats the incumbent
configuration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .coupling import (
    CellContext,
    ctx_cell_load,
    ctx_interference,
    ctx_sinr,
    discrete_candidates,
    DemandUnservable,
)
from .cvxsub import assemble_p23, assemble_p25, interference_constraints, solve, SolverError
from .scenario import Domain

__all__ = [
    "MmState",
    "SingleCellResult",
    "exact_F",
    "majorized_F",
    "mm_single_cell",
    "mm_single_cell_d3",
    "round_to_discrete",
]

_EPS_DEFAULT = 1e-4
_MAX_ITER = 200
_AMPLITUDE_TOL = 1e-3
_PENALTY_WEIGHT = 20.0      # penalty scale in starting loads per element


@dataclass(frozen=True)
class MmState:
    """Iterate of the single-cell optimizer, reusable as a warm start.

    ``objective_trace`` records the accepted iterates' objective values;
    for penalized (unit-modulus) runs these are the penalized values
    (cell load plus the amplitude penalty), non-increasing either way.
    """

    phi: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    penalty: float = 0.0
    solver_t: float = 0.0


@dataclass(frozen=True)
class SingleCellResult:
    """Outcome of one single-cell optimization.

    ``phi`` and ``rho`` are the committed configuration and its exact
    load under the frozen context; ``state`` carries the continuous
    iterate for warm-starting the next pass (for the discrete domain
    that is the unit-modulus iterate, not the rounded one).
    """

    phi: np.ndarray
    rho: float
    state: MmState
    kkt: float
    converged: bool


def exact_F(ctx: CellContext, phi: np.ndarray, gamma: np.ndarray,
            beta: np.ndarray) -> np.ndarray:
    """Exact coupling gap 4*(beta*gamma - p|g + lam.phi|^2), per UE.

    Non-positive values certify that gamma understates the SINR achieved
    with interference-plus-noise beta.
    """
    phi = np.asarray(phi, dtype=complex)
    gain = ctx.ghat + (ctx.lam @ phi if ctx.num_phase else 0.0)
    return 4.0 * (np.asarray(beta) * np.asarray(gamma)
                  - ctx.p_own * np.abs(gain) ** 2)


def majorized_F(ctx: CellContext, point, phi: np.ndarray, gamma: np.ndarray,
                beta: np.ndarray) -> np.ndarray:
    """Convex majorizer of :func:`exact_F`, expanded at ``point``.

    ``point`` is the (phi, gamma, beta) triple of the expansion.  The
    majorizer matches the exact value at the expansion point and is an
    upper bound everywhere.
    """
    phi_t, gamma_t, beta_t = point
    phi_t = np.asarray(phi_t, dtype=complex)
    phi = np.asarray(phi, dtype=complex)
    gamma = np.asarray(gamma, dtype=float)
    beta = np.asarray(beta, dtype=float)
    p = ctx.p_own
    if ctx.num_phase:
        u = ctx.lam @ phi
        u_t = ctx.lam @ phi_t
    else:
        u = np.zeros(ctx.num_ues, dtype=complex)
        u_t = np.zeros(ctx.num_ues, dtype=complex)
    c = ctx.ghat + u_t
    delta = np.asarray(beta_t) - np.asarray(gamma_t)
    return ((beta + gamma) ** 2
            - 2.0 * delta * (beta - gamma)
            + delta ** 2
            - 8.0 * p * (np.conj(c) * u).real
            + 4.0 * p * np.abs(u_t) ** 2
            - 4.0 * p * np.abs(ctx.ghat) ** 2)


def round_to_discrete(phi: np.ndarray, n_phases: int) -> np.ndarray:
    """Round coefficients to the nearest N-phase grid point.

    Nearest is measured by chordal distance on the unit circle; exact
    ties resolve to the smaller grid index.  Magnitudes are discarded
    (the grid is unit modulus by definition).
    """
    if n_phases < 2:
        raise ValueError("the phase grid needs at least two points")
    phi = np.asarray(phi, dtype=complex)
    cands = discrete_candidates(n_phases)
    mag = np.abs(phi)
    unit = np.where(mag > 0.0, phi / np.where(mag > 0.0, mag, 1.0), -1.0 + 0.0j)
    theta = np.angle(unit)
    step = 2.0 * np.pi / n_phases
    kf = np.floor(theta / step).astype(int)
    k0 = np.mod(kf, n_phases)
    k1 = np.mod(kf + 1, n_phases)
    d0 = np.abs(cands[k0] - unit)
    d1 = np.abs(cands[k1] - unit)
    pick_k1 = d1 < d0
    tie = d1 == d0
    k = np.where(pick_k1, k1, k0)
    k = np.where(tie, np.minimum(k0, k1), k)
    return cands[k]


def _active_context(ctx: CellContext) -> tuple[CellContext, np.ndarray]:
    """Drop zero-demand UEs; they impose no constraints on the cell."""
    mask = ctx.demand > 0.0
    if np.all(mask):
        return ctx, mask
    sub = replace(
        ctx,
        ue_index=ctx.ue_index[mask],
        demand=ctx.demand[mask],
        ghat=ctx.ghat[mask],
        lam=ctx.lam[mask],
        ghat_int=ctx.ghat_int[:, mask],
        lam_int=ctx.lam_int[:, mask],
    )
    return sub, mask


def _load_from_gamma(ctx: CellContext, gamma: np.ndarray) -> float:
    return float(np.sum(ctx.demand / np.log2(1.0 + gamma)))


def _tight_point(ctx: CellContext, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exactly feasible (gamma, beta) at phi: the achieved SINR pair."""
    beta = ctx_interference(ctx, phi) + 1.0
    gamma = ctx_sinr(ctx, phi)
    return gamma, beta


def _usable_warm(ctx: CellContext, phi: np.ndarray, gamma: np.ndarray,
                 beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stored (gamma, beta) if still feasible under the current context.

    Other cells' updates change the frozen gains, so a stored pair can
    turn infeasible; it is then re-tightened to the achieved values.
    """
    if gamma.size != ctx.num_ues:
        return _tight_point(ctx, phi)
    beta_floor = ctx_interference(ctx, phi) + 1.0
    gap = exact_F(ctx, phi, gamma, beta)
    ok = np.all(beta >= beta_floor - 1e-12) and np.all(gap <= 1e-12) \
        and np.all(gamma > 0.0)
    if ok:
        return gamma.copy(), beta.copy()
    return _tight_point(ctx, phi)


def _penalized(ctx: CellContext, gamma: np.ndarray, phi: np.ndarray, C: float) -> float:
    val = _load_from_gamma(ctx, gamma)
    if C > 0.0:
        val += C * float(np.sum(1.0 - np.abs(phi) ** 2))
    return val


def _mm_loop(ctx: CellContext, phi: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
             C: float, eps: float, max_iter: int, kkt_tol: float,
             iblock, warm_t: float):
    """Inner MM loop at a fixed penalty weight.

    Returns the accepted iterate, its trace segment, the last KKT
    residual, the final barrier weight, and whether the eps test passed.
    """
    trace = [_penalized(ctx, gamma, phi, C)]
    kkt = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if C > 0.0:
            sp = assemble_p25(ctx, (phi, gamma, beta), C, interference=iblock)
        else:
            sp = assemble_p23(ctx, (phi, gamma, beta), interference=iblock)
        t0 = max(1.0, warm_t / 1e4) if warm_t else None
        # The expansion point is the previous solution: when it is still
        # strictly interior the solver starts there instead of at the
        # freshly shrunk x0.
        sol = solve(sp, tol=kkt_tol, t_init=t0, x_start=sp.expansion_x)
        if sol.status == "Infeasible":
            raise SolverError("subproblem lost strict feasibility")
        warm_t = sol.final_t
        kkt = sol.kkt_residual
        new_val = _penalized(ctx, sol.gamma, sol.phi, C)
        if new_val > trace[-1]:
            # Numerical floor: the majorizer guarantees descent, so an
            # increase means the step is below solver precision.  Keep
            # the incumbent.
            converged = True
            it -= 1
            break
        drop = trace[-1] - new_val
        trace.append(new_val)
        phi, gamma, beta = sol.phi, sol.gamma, sol.beta
        if drop <= eps:
            converged = True
            break
    return phi, gamma, beta, trace, kkt, warm_t, converged, it


def mm_single_cell(ctx: CellContext, domain: Domain, init=None,
                   eps: float = _EPS_DEFAULT, max_iter: int = _MAX_ITER,
                   kkt_tol: float = 1e-7) -> SingleCellResult:
    """Minimize one cell's load over its reflection coefficients.

    Parameters
    ----------
    ctx : CellContext
        Frozen cell (other cells' loads and phases fixed).
    domain : Domain
        ``ideal`` or ``unit``; use :func:`mm_single_cell_d3` for the
        discrete grid.
    init : MmState or ndarray, optional
        Warm-start state from a previous pass, or a bare coefficient
        vector.  Defaults to all coefficients at e^{i pi}.
    eps : float
        Stop when the objective drop falls to this value or below.
    max_iter : int
        Outer iteration cap; exceeding it raises a warning and returns
        the best iterate.
    kkt_tol : float
        Per-subproblem KKT residual target.

    Returns
    -------
    SingleCellResult
    """
    if domain.kind not in ("ideal", "unit"):
        raise ValueError("mm_single_cell handles the ideal and unit-modulus domains")
    work, mask = _active_context(ctx)
    qn = ctx.num_phase

    if isinstance(init, MmState):
        phi0 = np.asarray(init.phi, dtype=complex).copy()
    elif init is not None:
        phi0 = np.asarray(init, dtype=complex).reshape(-1).copy()
    else:
        phi0 = np.full(qn, np.exp(1j * np.pi))
    if phi0.shape[0] != qn:
        raise ValueError("initial phi length does not match the context")

    if work.num_ues == 0:
        state = MmState(phi=phi0, gamma=np.zeros(0), beta=np.zeros(0),
                        objective_trace=np.zeros(1), iterations=0, converged=True)
        return SingleCellResult(phi=phi0, rho=0.0, state=state, kkt=0.0, converged=True)

    if isinstance(init, MmState) and init.gamma.size == work.num_ues:
        gamma, beta = _usable_warm(work, phi0, init.gamma, init.beta)
    else:
        gamma, beta = _tight_point(work, phi0)
    if np.any(gamma <= 0.0):
        raise DemandUnservable("a served UE has no usable signal power")

    iblock = None
    if qn:
        n = 2 * qn + 2 * work.num_ues
        beta_idx = 2 * qn + work.num_ues + np.arange(work.num_ues)
        iblock = interference_constraints(work, n, beta_idx)

    warm_t = init.solver_t if isinstance(init, MmState) else 0.0

    if domain.kind == "ideal":
        phi, gamma, beta, trace, kkt, warm_t, converged, used = _mm_loop(
            work, phi0, gamma, beta, 0.0, eps, max_iter, kkt_tol, iblock, warm_t)
        if not converged:
            warnings.warn("single-cell MM hit the iteration cap", RuntimeWarning)
        rho = ctx_cell_load(ctx, phi)
        # Amplitude tie-break: the load surface is nearly flat in element
        # amplitudes close to the optimum, and full reflection is the
        # preferred representative.  Adopt the unit-amplitude version of
        # the solution when its exact load cost stays within the
        # convergence tolerance; combined with the incumbent guard below,
        # every committed configuration then carries unit amplitudes.
        if qn:
            mag = np.abs(phi)
            pushed = np.where(mag > 0.0, phi / np.where(mag > 0.0, mag, 1.0),
                              -1.0 + 0.0j)
            try:
                rho_pushed = ctx_cell_load(ctx, pushed)
            except DemandUnservable:
                rho_pushed = np.inf
            if rho_pushed <= rho + max(1e-3 * rho, eps):
                phi = pushed
                rho = rho_pushed
                gamma, beta = _tight_point(work, phi)
            else:
                # The block push costs real load, so some element is
                # genuinely shaping interference at reduced amplitude.
                # Snap the remaining flat elements one by one; each move
                # must not increase the exact load.
                changed = False
                for q in np.argsort(mag):
                    if mag[q] >= 1.0 - 1e-12:
                        continue
                    cand = phi.copy()
                    cand[q] = pushed[q]
                    try:
                        rho_cand = ctx_cell_load(ctx, cand)
                    except DemandUnservable:
                        continue
                    if rho_cand <= rho * (1.0 + 1e-12):
                        phi = cand
                        rho = rho_cand
                        changed = True
                if changed:
                    gamma, beta = _tight_point(work, phi)
        state = MmState(phi=phi, gamma=gamma, beta=beta,
                        objective_trace=np.asarray(trace), iterations=used,
                        converged=converged, solver_t=warm_t)
        # Never leave the cell worse than it started.
        rho_init = ctx_cell_load(ctx, phi0)
        if rho > rho_init:
            state = replace(state, phi=phi0,
                            objective_trace=np.append(state.objective_trace, rho_init))
            return SingleCellResult(phi=phi0, rho=rho_init, state=state,
                                    kkt=kkt, converged=converged)
        return SingleCellResult(phi=phi, rho=rho, state=state, kkt=kkt,
                                converged=converged)

    # Unit modulus: penalty continuation.  Stage zero runs the plain
    # relaxation (C = 0); the relaxed optimum typically sits on the
    # circle already, so the penalty stages are a short cleanup, doubled
    # while any amplitude still lags.
    trace_all = []
    stages = []
    total_iters = 0
    kkt = np.inf
    converged = True
    phi = phi0
    C = 0.0
    for stage in range(_MAX_PENALTY_STAGES + 1):
        stages.append(len(trace_all))
        phi, gamma, beta, seg, kkt, warm_t, ok, used = _mm_loop(
            work, phi, gamma, beta, C, eps, max_iter, kkt_tol, iblock, warm_t)
        trace_all.extend(seg)
        total_iters += used
        converged = converged and ok
        if np.max(np.abs(np.abs(phi) - 1.0), initial=0.0) <= _AMPLITUDE_TOL:
            break
        if stage == _MAX_PENALTY_STAGES:
            warnings.warn("unit-modulus penalty hit the stage cap", RuntimeWarning)
            converged = False
        elif C == 0.0:
            C = 10.0 * _load_from_gamma(work, gamma) / max(2 * qn, 1)
        else:
            C *= 2.0
    if not converged:
        warnings.warn("single-cell MM did not fully converge", RuntimeWarning)

    mag = np.abs(phi)
    phi_unit = np.where(mag > 0.0, phi / np.where(mag > 0.0, mag, 1.0), -1.0 + 0.0j)
    gamma_u, beta_u = _tight_point(work, phi_unit)
    state = MmState(phi=phi_unit, gamma=gamma_u, beta=beta_u,
                    objective_trace=np.asarray(trace_all), iterations=total_iters,
                    converged=converged, penalty=C, penalty_stages=tuple(stages),
                    solver_t=warm_t)
    rho = ctx_cell_load(ctx, phi_unit)
    rho_init = ctx_cell_load(ctx, phi0)
    if rho > rho_init:
        state = replace(state, phi=phi0, gamma=np.zeros(0), beta=np.zeros(0))
        return SingleCellResult(phi=phi0, rho=rho_init, state=state, kkt=kkt,
                                converged=converged)
    return SingleCellResult(phi=phi_unit, rho=rho, state=state, kkt=kkt,
                            converged=converged)


def mm_single_cell_d3(ctx: CellContext, n_phases: int, init=None,
                      phi_committed: np.ndarray | None = None,
                      eps: float = _EPS_DEFAULT, max_iter: int = _MAX_ITER,
                      kkt_tol: float = 1e-7) -> SingleCellResult:
    """Discrete-domain single-cell step: optimize, round, keep if better.

    Runs the unit-modulus optimizer (warm-started from ``init``), rounds
    to the N-phase grid, and commits the rounded configuration only when
    its exact load beats the incumbent ``phi_committed`` (defaulting to
    the grid point nearest e^{i pi}).  The returned ``state`` is the
    continuous iterate for the next warm start; ``phi``/``rho`` are the
    committed discrete configuration and its load.
    """
    qn = ctx.num_phase
    if phi_committed is None:
        phi_committed = round_to_discrete(np.full(qn, np.exp(1j * np.pi)), n_phases)
    else:
        phi_committed = np.asarray(phi_committed, dtype=complex).reshape(-1)

    res = mm_single_cell(ctx, Domain.unit_modulus(), init=init, eps=eps,
                         max_iter=max_iter, kkt_tol=kkt_tol)
    if qn == 0:
        return res

    phi_round = round_to_discrete(res.state.phi, n_phases)
    try:
        rho_round = ctx_cell_load(ctx, phi_round)
    except DemandUnservable:
        rho_round = np.inf
    rho_inc = ctx_cell_load(ctx, phi_committed)
    if rho_round <= rho_inc:
        return SingleCellResult(phi=phi_round, rho=rho_round, state=res.state,
                                kkt=res.kkt, converged=res.converged)
    return SingleCellResult(phi=phi_committed, rho=rho_inc, state=res.state,
                            kkt=res.kkt, converged=res.converged)
