"""Interference-coupled SINR, cell loads, and the load fixed point.

For fixed reflection coefficients the per-cell loads solve a fixed-point
system: the load a cell needs depends on every interferer's load, because
interference is scaled by how many resource blocks the interferer
actually occupies.  The load map is a standard interference function
(positive, monotone, scalable), so iterating it from zero converges
monotonically to the unique minimal fixed point whenever one exists.

The module also provides the frozen single-cell view (:class:`CellContext`)
used by the per-cell optimizer: everything outside one cell (its
interferers' loads and all other cells' phases) is absorbed into constants
so the cell's problem depends only on its own phase vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Domain, Scenario

__all__ = [
    "PhaseConfig",
    "CouplingReport",
    "CellContext",
    "CouplingError",
    "DemandUnservable",
    "NonConvergence",
    "sinr",
    "all_sinr",
    "cell_load",
    "fixed_point_loads",
    "freeze_cell",
    "single_cell_sinr",
    "ctx_sinr",
    "ctx_cell_load",
    "ctx_interference",
]


class CouplingError(Exception):
    """Base class for load-model failures."""


class DemandUnservable(CouplingError):
    """A UE with positive demand has exactly zero effective gain."""


class NonConvergence(CouplingError):
    """The fixed-point iteration did not reach the residual tolerance."""

    def __init__(self, message: str, loads: np.ndarray | None = None,
                 iterations: int = 0, residual: float = float("inf")):
        super().__init__(message)
        self.loads = loads
        self.iterations = iterations
        self.residual = residual


def discrete_candidates(n_phases: int) -> np.ndarray:
    """The N admissible coefficients exp(2i pi k / N), k = 0..N-1."""
    k = np.arange(n_phases)
    return np.exp(2j * np.pi * k / n_phases)


@dataclass(frozen=True)
class PhaseConfig:
    """Reflection coefficients of every element, tagged with their domain.

    Attributes
    ----------
    phi : ndarray
        Complex array of shape (L, M), one coefficient per element.
    domain : Domain
    """

    phi: np.ndarray
    domain: Domain

    def validate(self) -> None:
        """Raise ValueError unless every coefficient lies in the domain."""
        mag = np.abs(self.phi)
        if self.domain.kind == "ideal":
            if self.phi.size and np.max(mag) > 1.0 + 1e-9:
                raise ValueError("ideal-domain amplitude exceeds 1")
        elif self.domain.kind == "unit":
            if self.phi.size and np.max(np.abs(mag - 1.0)) > 1e-9:
                raise ValueError("unit-modulus coefficient off the circle")
        else:
            cand = discrete_candidates(self.domain.n_phases)
            if self.phi.size and not np.all(np.isin(self.phi, cand)):
                raise ValueError("discrete coefficient not on the phase grid")

    @classmethod
    def zero(cls, s: Scenario) -> "PhaseConfig":
        """All-zero amplitudes; the network behaves as if it had no RIS."""
        shape = (s.num_ris, s.elements_per_ris)
        return cls(np.zeros(shape, dtype=complex), Domain.ideal())

    @classmethod
    def uniform(cls, s: Scenario, domain: Domain) -> "PhaseConfig":
        """Common starting point: every coefficient at e^{i pi}.

        On discrete domains the starting coefficient is the grid point
        nearest to e^{i pi} so the configuration is domain-exact.
        """
        shape = (s.num_ris, s.elements_per_ris)
        if domain.kind == "discrete":
            cand = discrete_candidates(domain.n_phases)
            start = cand[np.argmin(np.abs(cand - np.exp(1j * np.pi)))]
        else:
            start = np.exp(1j * np.pi)
        return cls(np.full(shape, start, dtype=complex), domain)

    def replace_rows(self, rows: np.ndarray, values: np.ndarray) -> "PhaseConfig":
        """New config with the given RIS rows replaced."""
        phi = self.phi.copy()
        phi[rows] = values
        return PhaseConfig(phi, self.domain)


@dataclass(frozen=True)
class CouplingReport:
    """Result of one fixed-point solve.

    ``loads`` may exceed 1; that is reported through ``feasible`` rather
    than clamped, since the fixed point itself exists either way.
    """

    loads: np.ndarray           # (I,)
    per_ue_sinr: np.ndarray     # (J,)
    per_ue_load_share: np.ndarray  # (J,)
    iterations: int
    residual: float
    feasible: bool


def effective_gain(s: Scenario, p: PhaseConfig) -> np.ndarray:
    """Total BS-to-UE amplitude gains, direct plus reflected, shape (I, J)."""
    if s.num_ris == 0 or p.phi.size == 0:
        return s.direct_gain.copy()
    return s.direct_gain + np.einsum("ijlm,lm->ij", s.cascade, p.phi)


def _power_tables(s: Scenario, p: PhaseConfig):
    """Per-UE own power and per (cell, UE) interfering power, noise-normalized
    to nothing (raw watts)."""
    eff = effective_gain(s, p)
    pw = s.pathloss.tx_power_per_rb * np.abs(eff) ** 2   # (I, J)
    j = np.arange(s.num_ues)
    own = pw[s.serving_cell, j]                          # (J,)
    cross = pw.copy()
    cross[s.serving_cell, j] = 0.0                       # own cell never interferes
    return own, cross


def all_sinr(s: Scenario, p: PhaseConfig, loads: np.ndarray) -> np.ndarray:
    """SINR of every UE under the given interfering loads, shape (J,)."""
    own, cross = _power_tables(s, p)
    interf = loads @ cross                               # (J,)
    return own / (interf + s.pathloss.noise_power)


def sinr(s: Scenario, p: PhaseConfig, loads: np.ndarray, ue: int) -> float:
    """SINR of one UE.

    Parameters
    ----------
    s : Scenario
    p : PhaseConfig
    loads : ndarray
        Interfering load of every cell; the serving cell's entry is
        ignored because a cell does not interfere with itself.
    ue : int
        Global UE index.

    Returns
    -------
    float
        Received power over scaled interference plus noise; strictly
        positive unless the effective gain is exactly zero.
    """
    return float(all_sinr(s, p, np.asarray(loads, dtype=float))[ue])


def cell_load(s: Scenario, p: PhaseConfig, loads_other: np.ndarray, cell: int) -> float:
    """Resource share cell ``cell`` needs under the given interfering loads.

    Sums d_j / log2(1 + SINR_j) over the cell's UEs.  The cell's own
    entry of ``loads_other`` is irrelevant since own-cell power is never
    interference.

    Raises
    ------
    DemandUnservable
        If a UE with positive demand has exactly zero effective gain.
    """
    snr = all_sinr(s, p, np.asarray(loads_other, dtype=float))
    ues = s.cell_ues(cell)
    bad = (snr[ues] <= 0.0) & (s.demand[ues] > 0.0)
    if np.any(bad):
        raise DemandUnservable(
            f"zero effective gain for UE(s) {ues[bad].tolist()}"
        )
    d = s.demand[ues]
    pos = d > 0.0
    return float(np.sum(d[pos] / np.log2(1.0 + snr[ues][pos])))


_DIVERGENCE_CAP = 1e9


def fixed_point_loads(s: Scenario, p: PhaseConfig, tol: float = 1e-6,
                      max_iter: int = 10_000,
                      warm_start: np.ndarray | None = None) -> CouplingReport:
    """Solve the coupled load system for fixed phases.

    Iterates the load map simultaneously over all cells from the zero
    vector (or ``warm_start``) until the max-norm residual drops to
    ``tol``.  From the zero start the iterates increase monotonically to
    the minimal fixed point.

    Parameters
    ----------
    s : Scenario
    p : PhaseConfig
    tol : float
        Residual bound on max|rho - G(rho)|.
    max_iter : int
    warm_start : ndarray, optional
        Starting loads; must be element-wise below the fixed point to
        keep the monotone-convergence guarantee.

    Returns
    -------
    CouplingReport
        Fixed-point loads plus per-UE SINR and load shares.  Loads above
        1 are returned as-is with ``feasible`` False.

    Raises
    ------
    NonConvergence
        If the residual stays above ``tol`` after ``max_iter`` steps or
        the iterates blow up (no finite fixed point).
    DemandUnservable
        Propagated from the load map.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    own, cross = _power_tables(s, p)
    noise = s.pathloss.noise_power
    d = s.demand
    serving = s.serving_cell
    pos = d > 0.0

    rho = np.zeros(s.num_cells) if warm_start is None else np.array(warm_start, dtype=float)
    residual = np.inf
    for it in range(1, max_iter + 1):
        snr = own / (rho @ cross + noise)
        bad = (snr <= 0.0) & pos
        if np.any(bad):
            raise DemandUnservable(
                f"zero effective gain for UE(s) {np.flatnonzero(bad).tolist()}"
            )
        share = np.zeros(s.num_ues)
        share[pos] = d[pos] / np.log2(1.0 + snr[pos])
        new = np.zeros(s.num_cells)
        np.add.at(new, serving, share)
        residual = float(np.max(np.abs(new - rho)))
        if not np.all(np.isfinite(new)) or np.max(new) > _DIVERGENCE_CAP:
            raise NonConvergence(
                "load iteration diverged (no finite fixed point)",
                loads=new, iterations=it, residual=residual,
            )
        if residual <= tol:
            # snr and share belong to the returned map application, so the
            # per-cell loads are exactly the sums of their UEs' shares.
            return CouplingReport(
                loads=new,
                per_ue_sinr=snr,
                per_ue_load_share=share,
                iterations=it,
                residual=residual,
                feasible=bool(np.all(new <= 1.0)),
            )
        rho = new
    raise NonConvergence(
        f"residual {residual:.3e} above tol {tol:.3e} after {max_iter} iterations",
        loads=rho, iterations=max_iter, residual=residual,
    )


@dataclass(frozen=True)
class CellContext:
    """One cell's optimization view with everything else frozen.

    Powers are normalized by the noise power, so the implied noise term
    is exactly 1.  ``ghat`` absorbs the direct gain and the reflected
    contributions of every element the cell does not control; ``lam``
    holds the cascade rows of the Q elements it does control, flattened
    surface-major.

    Attributes
    ----------
    cell : int
    ue_index : ndarray
        Global indices of the T served UEs.
    demand : ndarray, shape (T,)
    p_own : float
        Serving-cell transmit power over noise power.
    ghat : ndarray, shape (T,)
        Known own-link gain per UE.
    lam : ndarray, shape (T, Q)
        Own-link cascade rows of the controlled elements.
    w_int : ndarray, shape (K,)
        Interferer weights P_k * rho_k / noise for the K other cells.
    ghat_int : ndarray, shape (K, T)
        Known interfering gains.
    lam_int : ndarray, shape (K, T, Q)
        Interfering cascade rows through the controlled elements.
    noise : float
        Original noise power in watts, kept for reporting.
    local_ris : ndarray
        Global indices of the controlled surfaces.
    elements_per_ris : int
    """

    cell: int
    ue_index: np.ndarray
    demand: np.ndarray
    p_own: float
    ghat: np.ndarray
    lam: np.ndarray
    w_int: np.ndarray
    ghat_int: np.ndarray
    lam_int: np.ndarray
    noise: float
    local_ris: np.ndarray
    elements_per_ris: int

    @property
    def num_ues(self) -> int:
        return self.demand.shape[0]

    @property
    def num_phase(self) -> int:
        """Q, the number of controlled elements."""
        return self.lam.shape[1]

    def phi_matrix(self, phi: np.ndarray) -> np.ndarray:
        """Reshape a flat local phase vector to (surfaces, elements)."""
        return np.asarray(phi).reshape(len(self.local_ris), self.elements_per_ris)


def freeze_cell(s: Scenario, p: PhaseConfig, loads: np.ndarray, cell: int) -> CellContext:
    """Build the frozen single-cell view of ``cell``.

    Parameters
    ----------
    s : Scenario
    p : PhaseConfig
        Current network-wide phases; the rows of other cells are folded
        into the context constants, the cell's own rows are dropped.
    loads : ndarray
        Current loads; only other cells' entries matter.
    cell : int

    Returns
    -------
    CellContext
    """
    loads = np.asarray(loads, dtype=float)
    noise = s.pathloss.noise_power
    ues = s.cell_ues(cell)
    local = s.cell_ris(cell)
    others = np.array([k for k in range(s.num_cells) if k != cell], dtype=int)

    if s.num_ris > 0:
        outside = np.setdiff1d(np.arange(s.num_ris), local)
        phi_out = p.phi[outside] if outside.size else np.zeros((0, s.elements_per_ris), dtype=complex)
        # known gain: direct link plus frozen outside reflections
        base = s.direct_gain[:, ues] + np.einsum(
            "ijlm,lm->ij", s.cascade[:, ues][:, :, outside, :], phi_out
        )
        lam_all = s.cascade[:, ues][:, :, local, :].reshape(
            s.num_cells, len(ues), local.size * s.elements_per_ris
        )
    else:
        base = s.direct_gain[:, ues].copy()
        lam_all = np.zeros((s.num_cells, len(ues), 0), dtype=complex)

    return CellContext(
        cell=cell,
        ue_index=ues,
        demand=s.demand[ues].copy(),
        p_own=s.pathloss.tx_power_per_rb / noise,
        ghat=base[cell],
        lam=lam_all[cell],
        w_int=s.pathloss.tx_power_per_rb * loads[others] / noise,
        ghat_int=base[others],
        lam_int=lam_all[others],
        noise=noise,
        local_ris=local,
        elements_per_ris=s.elements_per_ris,
    )


def ctx_interference(ctx: CellContext, phi: np.ndarray) -> np.ndarray:
    """Noise-normalized interference power per UE, noise term excluded."""
    if ctx.num_phase:
        cross = ctx.ghat_int + ctx.lam_int @ phi
    else:
        cross = ctx.ghat_int
    return ctx.w_int @ (np.abs(cross) ** 2)


def ctx_sinr(ctx: CellContext, phi: np.ndarray) -> np.ndarray:
    """SINR of every context UE at local phases ``phi``, shape (T,)."""
    phi = np.asarray(phi, dtype=complex)
    eff = ctx.ghat + (ctx.lam @ phi if ctx.num_phase else 0.0)
    return ctx.p_own * np.abs(eff) ** 2 / (ctx_interference(ctx, phi) + 1.0)


def single_cell_sinr(ctx: CellContext, phi_i: np.ndarray, ue: int) -> float:
    """SINR of the cell's ``ue``-th UE in the frozen view.

    Matches :func:`sinr` on the full scenario when ``phi_i`` is the value
    frozen into a full configuration.

    Parameters
    ----------
    ctx : CellContext
    phi_i : ndarray
        Flat vector of the Q controlled coefficients.
    ue : int
        Local UE index within the cell (0..T-1).
    """
    return float(ctx_sinr(ctx, phi_i)[ue])


def ctx_cell_load(ctx: CellContext, phi: np.ndarray) -> float:
    """Cell load at local phases ``phi`` under the frozen interference."""
    snr = ctx_sinr(ctx, phi)
    bad = (snr <= 0.0) & (ctx.demand > 0.0)
    if np.any(bad):
        raise DemandUnservable(
            f"zero effective gain for UE(s) {ctx.ue_index[bad].tolist()}"
        )
    pos = ctx.demand > 0.0
    return float(np.sum(ctx.demand[pos] / np.log2(1.0 + snr[pos])))
