"""Convex subproblem assembly and a purpose-built interior-point solver.

Each outer iteration of the single-cell optimizer produces one convex
program: the demand-rate objective sum_j d_j / log2(1 + c_j v_j) plus an
optional linear term, subject to constraints that all fit one canonical
shape

    g(x) = ||o + W x||^2 + q.x + r <= 0

in the real variable vector x.  Complex reflection coefficients are
lifted to real pairs, x = [Re(phi), Im(phi), aux...], which keeps the
whole solver real-valued.  The solver is a primal log-barrier method:
minimize t*f(x) - sum_i log(-g_i(x)) by damped Newton steps, increase t
tenfold, repeat until the duality gap bound m/t is negligible.  Barrier
multiplier estimates make the returned point's KKT residual checkable.

All quantities are noise-normalized (the context divides powers by the
noise power), so the implied noise term in interference bounds is 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.optimize import nnls

from .coupling import CellContext, ctx_interference

__all__ = [
    "QuadAffine",
    "ConvexSubproblem",
    "SubproblemSolution",
    "SolverError",
    "assemble_p23",
    "assemble_p25",
    "assemble_p31",
    "solve",
    "kkt_residual",
    "interference_constraints",
]

_LN2 = np.log(2.0)

# Barrier settings: the t schedule starts at 1 and multiplies by 10 until
# both the complementarity bound 1/t and the duality gap bound m/t are
# small enough for the requested KKT tolerance.
_T_FACTOR = 10.0
_GAP_ABS = 1e-6             # objective gap bound m/t at the final stage
_NEWTON_TOL = 1e-9          # stop a centering stage at decrement^2/2 below this
_SHRINK = 1.0 - 1e-12       # pull the start strictly inside the unit discs


class SolverError(Exception):
    """Subproblem assembly or solve failure."""


@dataclass(frozen=True)
class QuadAffine:
    """One constraint ||o + W x||^2 + q.x + r <= 0.

    ``W`` may have zero rows, leaving a plain affine constraint.  The
    form is convex for any data, which the solver relies on.
    """

    W: np.ndarray
    o: np.ndarray
    q: np.ndarray
    r: float
    tag: str = "generic"

    def value(self, x: np.ndarray) -> float:
        s = self.o + self.W @ x if self.W.shape[0] else self.o
        return float(s @ s + self.q @ x + self.r)

    def grad(self, x: np.ndarray) -> np.ndarray:
        if self.W.shape[0]:
            s = self.o + self.W @ x
            return 2.0 * (self.W.T @ s) + self.q
        return self.q.copy()


@dataclass(frozen=True)
class ConvexSubproblem:
    """Canonical instance handed to :func:`solve`.

    The variable layout is ``x = [Re(phi) (Q), Im(phi) (Q), aux]``; the
    rate variables (gamma, or the received-power variable of the
    decomposition subproblem) sit at ``rate_idx`` and enter the objective
    as d_j / log2(1 + rate_scale_j * x[rate_idx_j]).  ``beta_idx`` is
    empty when the subproblem has no interference variables.
    """

    n: int
    num_phase: int
    d: np.ndarray
    rate_scale: np.ndarray
    rate_idx: np.ndarray
    beta_idx: np.ndarray
    q_lin: np.ndarray
    constraints: tuple
    x0: np.ndarray
    expansion_x: np.ndarray | None = None
    kind: str = "custom"
    penalty: float = 0.0

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def phi_of(self, x: np.ndarray) -> np.ndarray:
        q = self.num_phase
        return x[:q] + 1j * x[q:2 * q]

    def objective(self, x: np.ndarray) -> float:
        v = x[self.rate_idx]
        val = np.sum(self.d * _LN2 / np.log1p(self.rate_scale * v))
        return float(val + self.q_lin @ x)

    def objective_grad(self, x: np.ndarray) -> np.ndarray:
        g = self.q_lin.copy()
        v = x[self.rate_idx]
        u = 1.0 + self.rate_scale * v
        L = np.log(u)
        g[self.rate_idx] += -self.d * _LN2 * self.rate_scale / (u * L * L)
        return g

    def objective_hess_diag(self, x: np.ndarray) -> np.ndarray:
        """Diagonal Hessian entries; the objective is separable."""
        h = np.zeros(self.n)
        v = x[self.rate_idx]
        u = 1.0 + self.rate_scale * v
        L = np.log(u)
        h[self.rate_idx] = self.d * _LN2 * self.rate_scale ** 2 / (u * u * L * L) * (1.0 + 2.0 / L)
        return h

    def in_domain(self, x: np.ndarray) -> bool:
        return bool(np.all(x[self.rate_idx] > 0.0))

    def constraint_values(self, x: np.ndarray) -> np.ndarray:
        return np.array([c.value(x) for c in self.constraints])


@dataclass(frozen=True)
class SubproblemSolution:
    """Solver output.

    ``gamma`` holds the rate variables (for the decomposition subproblem
    that is the noise-normalized received power) and ``beta`` the
    interference variables when present.
    """

    phi: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    objective_value: float
    kkt_residual: float
    status: str
    x: np.ndarray
    newton_steps: int = 0
    final_t: float = 1.0


def _lift_rows(v: np.ndarray, n: int, offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Real rows for Re and Im of a complex row vector acting on phi.

    With x = [Re(phi), Im(phi), ...] and complex row v, Re(v.phi) is
    [Re v, -Im v].x and Im(v.phi) is [Im v, Re v].x.
    """
    q = v.shape[-1]
    re = np.zeros(n)
    im = np.zeros(n)
    re[offset:offset + q] = v.real
    re[offset + q:offset + 2 * q] = -v.imag
    im[offset:offset + q] = v.imag
    im[offset + q:offset + 2 * q] = v.real
    return re, im


def interference_constraints(ctx: CellContext, n: int, beta_idx: np.ndarray) -> list[QuadAffine]:
    """One interference bound per UE: sum_k w_k |g_kt + lam_kt.phi|^2 + 1 <= beta_t.

    Interferers with zero weight drop out.  The rows only touch the phi
    block, so their Gram matrices are reusable across outer iterations.
    """
    q = ctx.num_phase
    out = []
    active = np.flatnonzero(ctx.w_int > 0.0)
    for t in range(ctx.num_ues):
        rows = []
        offs = []
        for k in active:
            sw = np.sqrt(ctx.w_int[k])
            re, im = _lift_rows(ctx.lam_int[k, t], n)
            z = ctx.ghat_int[k, t]
            rows += [sw * re, sw * im]
            offs += [sw * z.real, sw * z.imag]
        qv = np.zeros(n)
        qv[beta_idx[t]] = -1.0
        if rows and q:
            W = np.array(rows)
            o = np.array(offs)
            out.append(QuadAffine(W, o, qv, 1.0, tag="interference"))
        else:
            # No controllable part: fold the fixed power into the constant.
            const = float(np.sum(ctx.w_int * np.abs(ctx.ghat_int[:, t]) ** 2))
            out.append(QuadAffine(np.zeros((0, n)), np.zeros(0), qv, 1.0 + const,
                                  tag="interference"))
    return out


def _disc_constraints(num_phase: int, n: int) -> list[QuadAffine]:
    out = []
    for j in range(num_phase):
        W = np.zeros((2, n))
        W[0, j] = 1.0
        W[1, num_phase + j] = 1.0
        out.append(QuadAffine(W, np.zeros(2), np.zeros(n), -1.0, tag="disc"))
    return out


def _majorizer_pieces(ctx: CellContext, t: int, phi_t: np.ndarray,
                      gamma_t: float, beta_t: float, n: int,
                      gamma_pos: int, beta_pos: int) -> QuadAffine:
    """The linearized SINR constraint of one UE around the expansion point.

    The exact form 4*(beta*gamma - p|g + lam.phi|^2) <= 0 is written as
    (beta+gamma)^2 - (beta-gamma)^2 - 4p|g + lam.phi|^2; the two concave
    pieces are replaced by tangents at the expansion point, leaving the
    convex square plus affine terms.  The square is stored with the
    expansion offset folded in, (gamma + beta + delta)^2 - 4*delta*beta
    - 4p*S(phi): near the feasible band that row evaluates at the scale
    of beta instead of gamma, which keeps the constraint resolvable in
    floating point when the SINR is many orders of magnitude above the
    interference (the expanded form loses the entire feasible band to
    cancellation noise there).
    """
    p = ctx.p_own
    lam = ctx.lam[t]
    g = ctx.ghat[t]
    u_t = lam @ phi_t if ctx.num_phase else 0.0
    c = g + u_t
    delta = beta_t - gamma_t

    W = np.zeros((1, n))
    W[0, gamma_pos] = 1.0
    W[0, beta_pos] = 1.0

    qv = np.zeros(n)
    if ctx.num_phase:
        a = np.conj(c) * lam
        qv[:ctx.num_phase] = -8.0 * p * a.real
        qv[ctx.num_phase:2 * ctx.num_phase] = 8.0 * p * a.imag
    qv[beta_pos] += -4.0 * delta

    r = 4.0 * p * abs(u_t) ** 2 - 4.0 * p * abs(g) ** 2
    return QuadAffine(W, np.array([delta]), qv, float(r), tag="majorized")


def _linearized_signal(ctx: CellContext, phi: np.ndarray,
                       phi_t: np.ndarray) -> np.ndarray:
    """Per-UE linearized signal power p*S(phi) of the majorized constraint.

    S(phi) = 2 Re{(ghat + u_t)* u} - |u_t|^2 + |ghat|^2 with u = lam phi;
    at phi = phi_t it reduces to the exact signal power |ghat + u_t|^2.
    """
    if ctx.num_phase:
        u = ctx.lam @ phi
        u_t = ctx.lam @ phi_t
    else:
        u = np.zeros(ctx.num_ues, dtype=complex)
        u_t = np.zeros(ctx.num_ues, dtype=complex)
    c = ctx.ghat + u_t
    s_lin = 2.0 * (np.conj(c) * u).real - np.abs(u_t) ** 2 + np.abs(ctx.ghat) ** 2
    return ctx.p_own * s_lin


def _gamma_upper(delta: np.ndarray, beta: np.ndarray,
                 s_sig: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Feasible-gamma interval of the majorized constraint at (phi, beta).

    The constraint is a parabola in gamma; solving it gives
    gamma_max = -(beta + delta) + 2 sqrt(delta*beta + s_sig) with s_sig
    the linearized signal power times p, and the feasible interval is
    (gamma_max - width, gamma_max) with width twice the square root.
    Returns (gamma_max, width); entries with an empty interval carry
    gamma_max = -1.
    """
    inner = delta * beta + s_sig
    bad = inner <= 0.0
    root = np.sqrt(np.where(bad, 0.0, inner))
    gmax = -(beta + delta) + 2.0 * root
    width = 4.0 * root
    gmax[bad] = -1.0
    width[bad] = 0.0
    return gmax, width


def _pack(num_phase: int, n: int, phi: np.ndarray, *aux: np.ndarray) -> np.ndarray:
    x = np.zeros(n)
    x[:num_phase] = phi.real
    x[num_phase:2 * num_phase] = phi.imag
    pos = 2 * num_phase
    for a in aux:
        x[pos:pos + len(a)] = a
        pos += len(a)
    return x


def _check_expansion(ctx: CellContext, point) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    phi_t, gamma_t, beta_t = point
    phi_t = np.asarray(phi_t, dtype=complex).reshape(-1)
    gamma_t = np.asarray(gamma_t, dtype=float).reshape(-1)
    beta_t = np.asarray(beta_t, dtype=float).reshape(-1)
    if phi_t.shape[0] != ctx.num_phase:
        raise SolverError("expansion phi length does not match the context")
    if np.any(gamma_t <= 0.0):
        raise SolverError("expansion gamma must be positive")
    if np.any(beta_t <= 1.0 - 1e-9):
        raise SolverError("expansion beta must exceed the noise floor")
    return phi_t, gamma_t, beta_t


def assemble_p23(ctx: CellContext, point,
                 interference: list[QuadAffine] | None = None) -> ConvexSubproblem:
    """Assemble the majorized single-cell subproblem over the unit disc.

    Parameters
    ----------
    ctx : CellContext
        Frozen cell with noise-normalized powers.
    point : tuple
        Expansion point (phi, gamma, beta); gamma must be positive and
        beta above the noise floor (1 in normalized units).
    interference : list, optional
        Prebuilt interference constraints from
        :func:`interference_constraints`, reusable across outer
        iterations since they do not depend on the expansion point.

    Returns
    -------
    ConvexSubproblem
    """
    phi_t, gamma_t, beta_t = _check_expansion(ctx, point)
    qn = ctx.num_phase
    T = ctx.num_ues
    n = 2 * qn + 2 * T
    rate_idx = 2 * qn + np.arange(T)
    beta_idx = 2 * qn + T + np.arange(T)

    cons = list(interference) if interference is not None else \
        interference_constraints(ctx, n, beta_idx)
    for t in range(T):
        cons.append(_majorizer_pieces(ctx, t, phi_t, gamma_t[t], beta_t[t],
                                      n, rate_idx[t], beta_idx[t]))
    cons.extend(_disc_constraints(qn, n))

    phi0 = phi_t * _SHRINK
    # The majorized row admits a gamma interval only while
    # delta*beta + s_sig > 0, i.e. beta < s_sig / (gamma_t - beta_t) when
    # the expansion SINR exceeds its beta.  For a tight high-SINR row that
    # window is only ~beta/gamma in relative width, so the strictness
    # margin added to beta must be clipped against it instead of being a
    # fixed relative bump.
    floor = ctx_interference(ctx, phi0) + 1.0
    s_sig = _linearized_signal(ctx, phi0, phi_t)
    delta = beta_t - gamma_t
    with np.errstate(divide="ignore"):
        beta_hi = np.where(delta < 0.0, s_sig / np.maximum(-delta, 1e-300), np.inf)
    base = np.maximum(beta_t, floor)
    room = beta_hi - base
    if np.any(room <= 0.0):
        raise SolverError("no strictly feasible start (linearized signal vanished)")
    beta0 = base + np.minimum(0.25 * room, 1e-9 * base)
    gmax, gwidth = _gamma_upper(delta, beta0, s_sig)
    if np.any(gmax <= 0.0):
        raise SolverError("no strictly feasible start (linearized signal vanished)")
    # Midpoint of the positive part of the feasible interval: a margin
    # proportional to gamma itself can overshoot the whole band when the
    # parabola is narrow relative to a large SINR.
    gamma0 = 0.5 * (np.maximum(gmax - gwidth, 0.0) + gmax)

    return ConvexSubproblem(
        n=n,
        num_phase=qn,
        d=ctx.demand.copy(),
        rate_scale=np.ones(T),
        rate_idx=rate_idx,
        beta_idx=beta_idx,
        q_lin=np.zeros(n),
        constraints=tuple(cons),
        x0=_pack(qn, n, phi0, gamma0, beta0),
        expansion_x=_pack(qn, n, phi_t, gamma_t, beta_t),
        kind="p23",
    )


def assemble_p25(ctx: CellContext, point, C: float,
                 interference: list[QuadAffine] | None = None) -> ConvexSubproblem:
    """P2.3 plus the linearized unit-modulus penalty -2C sum Re(phi_t* phi).

    With C = 0 the instance is identical to :func:`assemble_p23`.  The
    constant C*(|phi_t|^2 + 1) dropped from the penalty does not move the
    minimizer and is excluded from the objective value.
    """
    if C < 0:
        raise SolverError("penalty weight must be non-negative")
    sp = assemble_p23(ctx, point, interference)
    if C == 0.0:
        return replace(sp, kind="p25")
    phi_t = np.asarray(point[0], dtype=complex).reshape(-1)
    q_lin = sp.q_lin.copy()
    q_lin[:sp.num_phase] = -2.0 * C * phi_t.real
    q_lin[sp.num_phase:2 * sp.num_phase] = -2.0 * C * phi_t.imag
    return replace(sp, q_lin=q_lin, kind="p25", penalty=C)


def assemble_p31(ctx: CellContext, point, interference_mode: str,
                 phi_frozen: np.ndarray | None = None,
                 phi_start: np.ndarray | None = None) -> ConvexSubproblem:
    """Assemble the decomposition subproblem with fixed interference.

    The received power is replaced by the variable y_t bounded above by
    the first-order expansion of a_t^2 + b_t^2 at ``point = (a, b)``.
    Interference takes the mode's fixed value: ``Zero`` uses none,
    ``WorstCase`` evaluates the context's interferer weights at
    ``phi_frozen`` (all coefficients e^{i pi} when omitted).  Internally
    y is scaled to noise units, which keeps the Newton system well
    conditioned; the returned rate variable is that scaled power.

    ``phi_start`` seeds the strictly feasible starting point; pass the
    coefficients that produced ``point`` so the start sits where the
    linearized power is known positive.
    """
    if interference_mode not in ("Zero", "WorstCase"):
        raise SolverError(f"unknown interference mode {interference_mode!r}")
    a_t, b_t = point
    a_t = np.asarray(a_t, dtype=float).reshape(-1)
    b_t = np.asarray(b_t, dtype=float).reshape(-1)
    qn = ctx.num_phase
    T = ctx.num_ues
    if a_t.shape[0] != T or b_t.shape[0] != T:
        raise SolverError("expansion (a, b) length does not match the context")
    n = 2 * qn + T
    rate_idx = 2 * qn + np.arange(T)

    if interference_mode == "Zero":
        upsilon = np.zeros(T)
    else:
        if phi_frozen is None:
            phi_frozen = np.full(qn, np.exp(1j * np.pi))
        upsilon = ctx_interference(ctx, np.asarray(phi_frozen, dtype=complex))

    # Work in noise units: y' = p |a + i b|^2 is the normalized received
    # power, so the rate term is d / log2(1 + y' / (upsilon + 1)).
    amp = np.sqrt(ctx.p_own)
    a_s = amp * a_t
    b_s = amp * b_t
    g_s = amp * ctx.ghat
    lam_s = amp * ctx.lam if qn else ctx.lam

    cons = []
    for t in range(T):
        if qn:
            re, im = _lift_rows(lam_s[t], n)
        else:
            re = np.zeros(n)
            im = np.zeros(n)
        qv = -2.0 * a_s[t] * re - 2.0 * b_s[t] * im
        qv[rate_idx[t]] += 1.0
        r = (a_s[t] ** 2 + b_s[t] ** 2
             - 2.0 * a_s[t] * g_s[t].real - 2.0 * b_s[t] * g_s[t].imag)
        cons.append(QuadAffine(np.zeros((0, n)), np.zeros(0), qv, float(r),
                               tag="power_bound"))
    cons.extend(_disc_constraints(qn, n))

    if phi_start is None:
        phi0 = np.zeros(qn, dtype=complex)
    else:
        phi0 = np.asarray(phi_start, dtype=complex).reshape(-1) * _SHRINK
    gain0 = g_s + (lam_s @ phi0 if qn else 0.0)
    bound0 = (a_s ** 2 + b_s ** 2
              + 2.0 * a_s * (gain0.real - a_s) + 2.0 * b_s * (gain0.imag - b_s))
    if np.any(bound0 <= 0.0):
        raise SolverError("no strictly feasible start for the power bound")
    y0 = bound0 * (1.0 - 1e-6)

    sp = ConvexSubproblem(
        n=n,
        num_phase=qn,
        d=ctx.demand.copy(),
        rate_scale=1.0 / (upsilon + 1.0),
        rate_idx=rate_idx,
        beta_idx=np.zeros(0, dtype=int),
        q_lin=np.zeros(n),
        constraints=tuple(cons),
        x0=_pack(qn, n, phi0, y0),
        expansion_x=None,
        kind="p31",
    )
    return sp


# ---------------------------------------------------------------------------
# solver internals


class _Compiled:
    """Per-solve constraint bookkeeping with structure-aware Hessians."""

    def __init__(self, sp: ConvexSubproblem):
        self.sp = sp
        n = sp.n
        self.disc_re = []
        self.disc_im = []
        generic = []
        for con in sp.constraints:
            if con.tag == "disc":
                self.disc_re.append(np.flatnonzero(con.W[0])[0])
                self.disc_im.append(np.flatnonzero(con.W[1])[0])
            else:
                generic.append(con)
        self.disc_re = np.array(self.disc_re, dtype=int)
        self.disc_im = np.array(self.disc_im, dtype=int)
        self.generic = generic
        self.num_disc = len(self.disc_re)

        # Stack the non-disc rows for value and gradient evaluation, and
        # precompute the Gram matrix of each row-bearing constraint for
        # the Hessian.  Affine constraints (zero W rows) stay out of the
        # stack; reduceat segments are built over row-bearing ones only.
        rows = []
        offsets = []
        bounds = [0]
        grams = []
        rowful = []
        for i, con in enumerate(generic):
            k = con.W.shape[0]
            if k:
                rows.append(con.W)
                offsets.append(con.o)
                grams.append(con.W.T @ con.W)
                rowful.append(i)
                bounds.append(bounds[-1] + k)
        self.Wstack = np.vstack(rows) if rows else np.zeros((0, n))
        self.ostack = np.concatenate(offsets) if offsets else np.zeros(0)
        self.seg_starts = np.array(bounds[:-1], dtype=int)
        self.rowful = np.array(rowful, dtype=int)
        self.Qmat = np.array([c.q for c in generic]) if generic else np.zeros((0, n))
        self.rvec = np.array([c.r for c in generic])
        gram_tensor = np.array(grams) if grams else np.zeros((0, n, n))
        self.gram_flat = gram_tensor.reshape(len(grams), -1) if grams else None

    @property
    def num_constraints(self) -> int:
        return len(self.generic) + self.num_disc

    def values(self, x: np.ndarray):
        """Constraint values split as (generic array, disc array)."""
        s = self.ostack + self.Wstack @ x
        if len(self.generic):
            gen = self.Qmat @ x + self.rvec
            if self.rowful.size:
                gen[self.rowful] += np.add.reduceat(s * s, self.seg_starts)
        else:
            gen = np.zeros(0)
        if self.num_disc:
            disc = x[self.disc_re] ** 2 + x[self.disc_im] ** 2 - 1.0
        else:
            disc = np.zeros(0)
        return gen, disc, s

    def barrier_grad_hess(self, x: np.ndarray, gen: np.ndarray, disc: np.ndarray,
                          s: np.ndarray):
        """Gradient and Hessian of -sum log(-g) at a strictly feasible x."""
        n = self.sp.n
        grad = np.zeros(n)
        H = np.zeros((n, n))

        if len(self.generic):
            inv = 1.0 / (-gen)
            # gradient rows of the generic constraints
            Gm = self.Qmat.copy()
            if self.rowful.size:
                ws = self.Wstack * s[:, None]
                Gm[self.rowful] += 2.0 * np.add.reduceat(ws, self.seg_starts, axis=0)
            grad += Gm.T @ inv
            A = Gm * inv[:, None]
            H += A.T @ A
            if self.rowful.size:
                scale = 2.0 * inv[self.rowful]
                H += (scale @ self.gram_flat).reshape(n, n)

        if self.num_disc:
            # Each disc constraint owns a distinct (re, im) index pair, so
            # fancy-index accumulation is safe.
            invd = 1.0 / (-disc)
            xr = x[self.disc_re]
            xi = x[self.disc_im]
            grad[self.disc_re] += 2.0 * xr * invd
            grad[self.disc_im] += 2.0 * xi * invd
            w2 = invd * invd
            H[self.disc_re, self.disc_re] += 4.0 * xr * xr * w2 + 2.0 * invd
            H[self.disc_im, self.disc_im] += 4.0 * xi * xi * w2 + 2.0 * invd
            cross = 4.0 * xr * xi * w2
            H[self.disc_re, self.disc_im] += cross
            H[self.disc_im, self.disc_re] += cross
        return grad, H


def _strictly_feasible(comp: _Compiled, x: np.ndarray) -> bool:
    if not comp.sp.in_domain(x):
        return False
    gen, disc, _ = comp.values(x)
    return bool((gen.size == 0 or np.max(gen) < 0.0)
                and (disc.size == 0 or np.max(disc) < 0.0))


def solve(sp: ConvexSubproblem, tol: float = 1e-7, max_newton: int = 20_000,
          t_init: float | None = None,
          x_start: np.ndarray | None = None) -> SubproblemSolution:
    """Minimize the subproblem objective by a primal log-barrier method.

    Parameters
    ----------
    sp : ConvexSubproblem
        Must carry a strictly feasible ``x0`` (the assembly routines
        construct one from the expansion point).
    tol : float
        KKT residual target; the default 1e-7 matches the outer loop's
        needs.
    max_newton : int
        Global damped-Newton step budget across all barrier stages.
    t_init : float, optional
        Starting barrier weight; pass the previous solve's ``final_t``
        scaled down to warm-start consecutive outer iterations.
    x_start : ndarray, optional
        Preferred starting point, typically the previous solution.  Used
        only when strictly feasible; otherwise ``sp.x0`` takes over.

    Returns
    -------
    SubproblemSolution
        With status ``Optimal`` when the KKT residual met ``tol``,
        ``MaxIter`` if the step budget ran out, ``Infeasible`` when no
        strictly feasible start was available.
    """
    comp = _Compiled(sp)
    x = None
    if x_start is not None:
        cand = np.asarray(x_start, dtype=float).copy()
        if cand.shape == (sp.n,) and _strictly_feasible(comp, cand):
            x = cand
    if x is None:
        x = np.asarray(sp.x0, dtype=float).copy()
        if not _strictly_feasible(comp, x):
            return SubproblemSolution(
                phi=sp.phi_of(x), gamma=x[sp.rate_idx], beta=x[sp.beta_idx],
                objective_value=np.inf, kkt_residual=np.inf, status="Infeasible",
                x=x, newton_steps=0, final_t=0.0,
            )

    m = comp.num_constraints
    t = float(t_init) if t_init else 1.0
    t_end = max(3.0 / tol, m / _GAP_ABS)
    steps = 0
    hit_cap = False

    def psi_value(xv: np.ndarray, tv: float) -> float:
        gen, disc, _ = comp.values(xv)
        if (gen.size and np.max(gen) >= 0.0) or (disc.size and np.max(disc) >= 0.0):
            return np.inf
        if not sp.in_domain(xv):
            return np.inf
        barrier = -np.sum(np.log(-gen)) - np.sum(np.log(-disc))
        return tv * sp.objective(xv) + barrier

    while True:
        # centering stage at fixed t; intermediate stages center loosely,
        # only the last one needs the tight Newton decrement
        final_stage = m == 0 or t >= t_end
        stage_tol = _NEWTON_TOL if final_stage else 1e-4
        for _ in range(40):
            if steps >= max_newton:
                hit_cap = True
                break
            gen, disc, s = comp.values(x)
            bgrad, H = comp.barrier_grad_hess(x, gen, disc, s)
            grad = t * sp.objective_grad(x) + bgrad
            hdiag = np.einsum("ii->i", H)
            hdiag += t * sp.objective_hess_diag(x)

            # Jacobi-scaled Cholesky keeps deep-barrier stages solvable.
            dscale = 1.0 / np.sqrt(np.maximum(hdiag, 1e-300))
            Hs = H * dscale[:, None] * dscale[None, :]
            jitter = 0.0
            while True:
                try:
                    cf = cho_factor(Hs, lower=True, check_finite=False)
                    break
                except LinAlgError:
                    jitter = max(jitter * 100.0, 1e-12)
                    if jitter > 1e-3:
                        raise SolverError("Newton system not positive definite")
                    Hs = H * dscale[:, None] * dscale[None, :]
                    Hs.flat[::sp.n + 1] += jitter
            step = -dscale * cho_solve(cf, dscale * grad, check_finite=False)
            decrement2 = float(-grad @ step)
            if decrement2 <= 2.0 * stage_tol:
                break
            lam = np.sqrt(max(decrement2, 0.0))
            steps += 1

            moved = False
            if lam >= 0.5:
                # Damped phase: backtrack on the barrier objective.  The
                # noise allowance keeps the test meaningful when t*f
                # dwarfs the achievable decrease.
                base = psi_value(x, t)
                slack = 32.0 * np.finfo(float).eps * abs(base)
                alpha = 1.0
                for _ in range(60):
                    cand = x + alpha * step
                    val = psi_value(cand, t)
                    if np.isfinite(val) and val <= base - 0.25 * alpha * decrement2 + slack:
                        x = cand
                        moved = True
                        break
                    alpha *= 0.5
                if not moved:
                    # Guaranteed damped step; only feasibility is checked.
                    alpha = 1.0 / (1.0 + lam)
                    for _ in range(60):
                        cand = x + alpha * step
                        if _strictly_feasible(comp, cand):
                            x = cand
                            moved = True
                            break
                        alpha *= 0.5
            else:
                # Quadratic phase: the full Newton step of a self-
                # concordant barrier decreases psi; verify feasibility
                # only, since psi differences sit below float noise here.
                alpha = 1.0
                for _ in range(60):
                    cand = x + alpha * step
                    if _strictly_feasible(comp, cand):
                        x = cand
                        moved = True
                        break
                    alpha *= 0.5
            if not moved:
                break  # numerical floor of the line search
        if hit_cap or final_stage:
            break
        t *= _T_FACTOR

    kkt = kkt_residual(sp, x)
    gen, disc, _ = comp.values(x)
    worst = max(
        float(np.max(gen, initial=-np.inf)),
        float(np.max(disc, initial=-np.inf)),
    )
    status = "Optimal"
    if hit_cap:
        status = "MaxIter"
    elif kkt > tol or worst > 1e-8:
        status = "MaxIter"
    return SubproblemSolution(
        phi=sp.phi_of(x),
        gamma=x[sp.rate_idx].copy(),
        beta=x[sp.beta_idx].copy(),
        objective_value=sp.objective(x),
        kkt_residual=kkt,
        status=status,
        x=x,
        newton_steps=steps,
        final_t=t,
    )


def kkt_residual(sp: ConvexSubproblem, candidate: np.ndarray) -> float:
    """KKT residual of a candidate point under non-negative multipliers.

    Estimates multipliers by non-negative least squares on the
    stationarity system, then reports the largest of the stationarity
    infinity norm, the primal violation, and the complementary
    slackness products.

    Parameters
    ----------
    sp : ConvexSubproblem
    candidate : ndarray
        Point in the objective domain (positive rate variables).

    Returns
    -------
    float
    """
    x = np.asarray(candidate, dtype=float)
    if not sp.in_domain(x):
        raise SolverError("candidate outside the objective domain")
    grad_f = sp.objective_grad(x)
    if sp.num_constraints == 0:
        return float(np.max(np.abs(grad_f)))
    G = np.array([c.grad(x) for c in sp.constraints])   # (m, n)
    vals = sp.constraint_values(x)
    lam, _ = nnls(G.T, -grad_f)
    stationarity = float(np.max(np.abs(grad_f + G.T @ lam)))
    primal = float(max(0.0, np.max(vals)))
    comp = float(np.max(lam * np.abs(vals))) if lam.size else 0.0
    return max(stationarity, primal, comp)
