"""Network instance generation: geometry, channels, demands.

A :class:`Scenario` is an immutable snapshot of one multi-cell network:
base station, RIS and UE positions, the complex channel gains of every
direct and reflected path, the precomputed cascade coefficients, and the
per-UE normalized demands.  Everything downstream (load coupling, the
single-cell optimizer, the benchmarks) consumes scenarios and never
re-rolls channels, so experiments are reproducible from (layout,
path-loss parameters, demand, seed) alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Layout",
    "PathLossParams",
    "Domain",
    "Scenario",
    "generate_scenario",
    "wraparound_distance",
    "cascade_row",
    "save_scenario",
    "load_scenario",
]

# Thermal noise density of -174 dBm/Hz expressed in watts. Demands are
# normalized spectral efficiencies, so no bandwidth factor is applied.
NOISE_DENSITY_WATTS = 10.0 ** ((-174.0 - 30.0) / 10.0)

_SCENARIO_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Layout:
    """Cell-grid geometry and array sizes.

    Attributes
    ----------
    num_cells : int
        Number of hexagonal cells.
    cell_radius : float
        Hexagon circumradius in meters.
    ris_per_cell : int
        Surfaces per cell; zero disables reflection entirely.
    elements_per_ris : int
        Reflecting elements per surface (M).
    ues_per_cell : int
        Users per cell.
    ris_bs_distance : float
        Radius of the ring the surfaces sit on, meters.
    wraparound : bool
        Mirror the 7-cell cluster so border cells see symmetric
        interference.
    """

    num_cells: int = 7
    cell_radius: float = 500.0
    ris_per_cell: int = 7
    elements_per_ris: int = 20
    ues_per_cell: int = 10
    ris_bs_distance: float = 250.0
    wraparound: bool = True

    def __post_init__(self):
        if self.num_cells < 1:
            raise ValueError("num_cells must be >= 1")
        if self.ris_per_cell < 0:
            raise ValueError("ris_per_cell must be >= 0")
        for name in ("elements_per_ris", "ues_per_cell"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.cell_radius <= 0:
            raise ValueError("cell_radius must be positive")
        if not self.ris_bs_distance < self.cell_radius:
            raise ValueError("ris_bs_distance must be smaller than cell_radius")
        if self.wraparound and self.num_cells != 7:
            raise ValueError("wraparound tiling is defined for 7-cell clusters")


@dataclass(frozen=True)
class PathLossParams:
    """Propagation exponents and radio constants.

    Attributes
    ----------
    alpha_cu, alpha_ci, alpha_iu : float
        Path-loss exponents of the BS-UE, BS-RIS and RIS-UE links.
    tx_power_per_rb : float
        Transmit power per resource block, watts.
    noise_power : float
        Receiver noise power, watts.
    """

    alpha_cu: float = 3.5
    alpha_ci: float = 2.2
    alpha_iu: float = 2.2
    tx_power_per_rb: float = 1.0
    noise_power: float = NOISE_DENSITY_WATTS

    def __post_init__(self):
        for name in ("alpha_cu", "alpha_ci", "alpha_iu"):
            a = getattr(self, name)
            if not 1.5 <= a <= 6.0:
                raise ValueError(f"{name} must lie in [1.5, 6]")
        if self.tx_power_per_rb <= 0 or self.noise_power <= 0:
            raise ValueError("powers must be positive")


@dataclass(frozen=True)
class Domain:
    """Feasible set of a single reflection coefficient.

    ``ideal`` allows any point of the closed unit disc, ``unit`` restricts
    to the unit circle, and ``discrete`` further restricts the phase to N
    uniformly spaced values with step 2*pi/N.
    """

    kind: str
    n_phases: int = 0

    _KINDS = ("ideal", "unit", "discrete")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "discrete" and self.n_phases < 2:
            raise ValueError("discrete domain needs n_phases >= 2")
        if self.kind != "discrete" and self.n_phases != 0:
            raise ValueError("n_phases only applies to the discrete domain")

    @classmethod
    def ideal(cls) -> "Domain":
        return cls("ideal")

    @classmethod
    def unit_modulus(cls) -> "Domain":
        return cls("unit")

    @classmethod
    def discrete(cls, n_phases: int) -> "Domain":
        return cls("discrete", n_phases)

    def phase_step(self) -> float:
        if self.kind != "discrete":
            raise ValueError("phase_step is defined for discrete domains only")
        return 2.0 * np.pi / self.n_phases

    def label(self) -> str:
        if self.kind == "ideal":
            return "D1"
        if self.kind == "unit":
            return "D2"
        return f"D3({self.n_phases})"


@dataclass(frozen=True)
class Scenario:
    """One immutable network realization.

    Cells are indexed by i, UEs globally by j, surfaces globally by l.
    ``direct_gain[i, j]`` is the BS i to UE j amplitude gain,
    ``bs_ris_gain[i, l]`` and ``ris_ue_gain[l, j]`` are the element-wise
    vectors of the two reflected hops, and ``cascade[i, j, l]`` is their
    element-wise product, so the reflected contribution of surface l is
    the inner product of ``cascade[i, j, l]`` with its phase vector.
    """

    layout: Layout
    pathloss: PathLossParams
    bs_pos: np.ndarray          # (I, 2)
    ris_pos: np.ndarray         # (L, 2)
    ue_pos: np.ndarray          # (J, 2)
    direct_gain: np.ndarray     # (I, J) complex
    bs_ris_gain: np.ndarray     # (I, L, M) complex
    ris_ue_gain: np.ndarray     # (L, J, M) complex
    cascade: np.ndarray         # (I, J, L, M) complex
    demand: np.ndarray          # (J,) normalized bit/s/Hz
    serving_cell: np.ndarray    # (J,) int
    ris_cell: np.ndarray        # (L,) int
    seed: int = 0
    min_bs_ue_distance: float = 10.0

    def __post_init__(self):
        if np.any(self.demand < 0):
            raise ValueError("demands must be non-negative")
        if len(self.serving_cell) != len(self.demand):
            raise ValueError("serving_cell and demand disagree on UE count")

    @property
    def num_cells(self) -> int:
        return self.direct_gain.shape[0]

    @property
    def num_ues(self) -> int:
        return self.direct_gain.shape[1]

    @property
    def num_ris(self) -> int:
        return self.ris_cell.shape[0]

    @property
    def elements_per_ris(self) -> int:
        return self.layout.elements_per_ris

    def cell_ues(self, cell: int) -> np.ndarray:
        """Global indices of the UEs served by ``cell``."""
        return np.flatnonzero(self.serving_cell == cell)

    def cell_ris(self, cell: int) -> np.ndarray:
        """Global indices of the surfaces controlled by ``cell``."""
        return np.flatnonzero(self.ris_cell == cell)


def _hex_centers(num_cells: int, radius: float) -> np.ndarray:
    """Cell centers on the hexagonal grid, center cell first.

    Neighbor spacing is sqrt(3) * radius with neighbors in the
    30 + 60k degree directions, which makes hexagons with vertices in
    the 60k degree directions tile the plane.
    """
    spacing = np.sqrt(3.0) * radius
    centers = [np.zeros(2)]
    ring = 1
    while len(centers) < num_cells:
        # Walk ring edges counter-clockwise starting east of the center.
        corner = ring * spacing * np.array(
            [np.cos(np.pi / 6.0), np.sin(np.pi / 6.0)]
        )
        pos = corner.copy()
        for side in range(6):
            ang = np.pi / 6.0 + (side + 2) * np.pi / 3.0
            step = spacing * np.array([np.cos(ang), np.sin(ang)])
            for _ in range(ring):
                centers.append(pos.copy())
                pos = pos + step
        ring += 1
    return np.array(centers[:num_cells])


def _cluster_offsets(radius: float) -> np.ndarray:
    """Mirror displacements of the 7-cell cluster, the zero offset first.

    The cluster repeats on a hexagonal super-lattice whose basis vector
    is 2*a1 + a2 in terms of the cell lattice basis, giving the six
    nearest mirror images at distance sqrt(7) times the cell spacing.
    """
    spacing = np.sqrt(3.0) * radius
    # Cell lattice basis matching _hex_centers (neighbors in the
    # 30 + 60k degree directions); the cluster translations must be
    # combinations of these, otherwise the images do not tile.
    a1 = spacing * np.array([np.sqrt(3.0) / 2.0, 0.5])
    a2 = spacing * np.array([0.0, 1.0])
    t1 = 2.0 * a1 + a2
    t2 = -a1 + 3.0 * a2
    offs = [np.zeros(2), t1, -t1, t2, -t2, t1 - t2, t2 - t1]
    return np.array(offs)


def wraparound_distance(a: np.ndarray, b: np.ndarray, layout: Layout) -> float:
    """Distance from ``a`` to the nearest mirror image of ``b``.

    Parameters
    ----------
    a, b : ndarray
        Planar positions, meters.
    layout : Layout
        Supplies the cell radius; when ``layout.wraparound`` is off the
        plain Euclidean distance is returned.

    Returns
    -------
    float
        Minimum distance over the seven cluster images of ``b``, never
        larger than the Euclidean distance.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not layout.wraparound:
        return float(np.hypot(*(a - b)))
    offs = _cluster_offsets(layout.cell_radius)
    d = a[None, :] - (b[None, :] + offs)
    return float(np.min(np.hypot(d[:, 0], d[:, 1])))


def _pairwise_distance(src: np.ndarray, dst: np.ndarray, layout: Layout) -> np.ndarray:
    """Wraparound-aware distance matrix between two position sets."""
    diff = src[:, None, :] - dst[None, :, :]
    if not layout.wraparound:
        return np.hypot(diff[..., 0], diff[..., 1])
    offs = _cluster_offsets(layout.cell_radius)
    d = diff[None, :, :, :] - offs[:, None, None, :]
    return np.min(np.hypot(d[..., 0], d[..., 1]), axis=0)


def _in_hexagon(points: np.ndarray, radius: float) -> np.ndarray:
    """Membership test for the hexagon with vertices at angles 60k deg."""
    x, y = points[..., 0], points[..., 1]
    h = np.sqrt(3.0) / 2.0 * radius
    ok = np.abs(y) <= h
    ok &= np.abs(np.sqrt(3.0) / 2.0 * x + 0.5 * y) <= h
    ok &= np.abs(np.sqrt(3.0) / 2.0 * x - 0.5 * y) <= h
    return ok


def _sample_hex(rng: np.random.Generator, radius: float, n: int,
                min_center_distance: float) -> np.ndarray:
    """Rejection-sample n points of the hexagon, keeping a center margin."""
    if min_center_distance >= radius:
        raise ValueError("minimum BS-UE distance leaves no room inside the cell")
    out = np.empty((n, 2))
    have = 0
    while have < n:
        cand = rng.uniform(
            [-radius, -np.sqrt(3.0) / 2.0 * radius],
            [radius, np.sqrt(3.0) / 2.0 * radius],
            size=(2 * (n - have) + 8, 2),
        )
        keep = _in_hexagon(cand, radius)
        keep &= np.hypot(cand[:, 0], cand[:, 1]) >= min_center_distance
        cand = cand[keep]
        take = min(len(cand), n - have)
        out[have:have + take] = cand[:take]
        have += take
    return out


def _complex_fading(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circularly symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _cascade_tensor(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Cascade tensor (I, J, L, M) as a plain broadcast product.

    A single complex multiplication per entry, so it matches the
    per-element product bit for bit (einsum may reassociate).
    """
    return g[:, None, :, :] * h.transpose(1, 0, 2)[None, :, :, :]


def cascade_row(g_il: np.ndarray, h_lj: np.ndarray) -> np.ndarray:
    """Cascade coefficients of one BS-RIS-UE path.

    Parameters
    ----------
    g_il : ndarray
        BS to RIS element gains, length M.
    h_lj : ndarray
        RIS element to UE gains, length M.

    Returns
    -------
    ndarray
        Element-wise product, so that ``cascade_row(g, h) @ phi`` equals
        ``g @ (diag(phi) @ h)`` for every phase vector ``phi``.
    """
    g_il = np.asarray(g_il)
    h_lj = np.asarray(h_lj)
    if g_il.shape != h_lj.shape:
        raise ValueError("gain vectors must have equal length")
    return g_il * h_lj


def generate_scenario(layout: Layout, pl: PathLossParams, demand,
                      seed: int, min_bs_ue_distance: float = 10.0) -> Scenario:
    """Draw one reproducible network realization.

    UE positions are uniform in each hexagonal cell (re-drawn while
    closer than ``min_bs_ue_distance`` to their BS), surfaces sit equally
    spaced on a ring around their BS, and each channel entry is
    ``distance**(-alpha)`` times an independent unit-variance circularly
    symmetric complex Gaussian factor.  Draw order is fixed: UE positions
    cell by cell, then direct gains, then BS-RIS gains, then RIS-UE
    gains, so identical inputs give bit-identical scenarios.

    Parameters
    ----------
    layout : Layout
    pl : PathLossParams
    demand : float or array_like
        Normalized demand, either one value for every UE or per UE.
    seed : int
        Seed of the dedicated random generator.
    min_bs_ue_distance : float
        Smallest admissible BS-UE distance, meters.

    Returns
    -------
    Scenario
    """
    rng = np.random.default_rng(seed)
    n_cells = layout.num_cells
    n_ue = n_cells * layout.ues_per_cell
    n_ris = n_cells * layout.ris_per_cell
    m = layout.elements_per_ris

    bs = _hex_centers(n_cells, layout.cell_radius)

    ue = np.empty((n_ue, 2))
    serving = np.empty(n_ue, dtype=int)
    for i in range(n_cells):
        lo = i * layout.ues_per_cell
        hi = lo + layout.ues_per_cell
        ue[lo:hi] = bs[i] + _sample_hex(
            rng, layout.cell_radius, layout.ues_per_cell, min_bs_ue_distance
        )
        serving[lo:hi] = i

    ris = np.empty((n_ris, 2))
    ris_cell = np.empty(n_ris, dtype=int)
    if layout.ris_per_cell > 0:
        ang = 2.0 * np.pi * np.arange(layout.ris_per_cell) / layout.ris_per_cell
        ring = layout.ris_bs_distance * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        for i in range(n_cells):
            lo = i * layout.ris_per_cell
            hi = lo + layout.ris_per_cell
            ris[lo:hi] = bs[i] + ring
            ris_cell[lo:hi] = i

    d_bs_ue = _pairwise_distance(bs, ue, layout)
    direct = d_bs_ue ** (-pl.alpha_cu) * _complex_fading(rng, (n_cells, n_ue))

    if n_ris > 0:
        d_bs_ris = _pairwise_distance(bs, ris, layout)
        d_ris_ue = _pairwise_distance(ris, ue, layout)
        g = d_bs_ris[:, :, None] ** (-pl.alpha_ci) * _complex_fading(rng, (n_cells, n_ris, m))
        h = d_ris_ue[:, :, None] ** (-pl.alpha_iu) * _complex_fading(rng, (n_ris, n_ue, m))
    else:
        g = np.zeros((n_cells, 0, m), dtype=complex)
        h = np.zeros((0, n_ue, m), dtype=complex)
    cascade = _cascade_tensor(g, h)

    d = np.broadcast_to(np.asarray(demand, dtype=float), (n_ue,)).copy()

    return Scenario(
        layout=layout,
        pathloss=pl,
        bs_pos=bs,
        ris_pos=ris,
        ue_pos=ue,
        direct_gain=direct,
        bs_ris_gain=g,
        ris_ue_gain=h,
        cascade=cascade,
        demand=d,
        serving_cell=serving,
        ris_cell=ris_cell,
        seed=seed,
        min_bs_ue_distance=min_bs_ue_distance,
    )


def _complex_to_list(a: np.ndarray) -> list:
    return [a.real.reshape(-1).tolist(), a.imag.reshape(-1).tolist(), list(a.shape)]


def _complex_from_list(v) -> np.ndarray:
    re, im, shape = v
    return (np.asarray(re) + 1j * np.asarray(im)).reshape(shape)


def save_scenario(s: Scenario, path: str) -> None:
    """Write a scenario to a self-describing JSON file.

    Constituent channels are stored; the cascade tensor is recomputed on
    load, which reproduces it exactly since each entry is one product.
    """
    doc = {
        "format": "risload-scenario",
        "version": _SCENARIO_FORMAT_VERSION,
        "seed": s.seed,
        "min_bs_ue_distance": s.min_bs_ue_distance,
        "layout": {
            "num_cells": s.layout.num_cells,
            "cell_radius": s.layout.cell_radius,
            "ris_per_cell": s.layout.ris_per_cell,
            "elements_per_ris": s.layout.elements_per_ris,
            "ues_per_cell": s.layout.ues_per_cell,
            "ris_bs_distance": s.layout.ris_bs_distance,
            "wraparound": s.layout.wraparound,
        },
        "pathloss": {
            "alpha_cu": s.pathloss.alpha_cu,
            "alpha_ci": s.pathloss.alpha_ci,
            "alpha_iu": s.pathloss.alpha_iu,
            "tx_power_per_rb": s.pathloss.tx_power_per_rb,
            "noise_power": s.pathloss.noise_power,
        },
        "bs_pos": s.bs_pos.tolist(),
        "ris_pos": s.ris_pos.tolist(),
        "ue_pos": s.ue_pos.tolist(),
        "direct_gain": _complex_to_list(s.direct_gain),
        "bs_ris_gain": _complex_to_list(s.bs_ris_gain),
        "ris_ue_gain": _complex_to_list(s.ris_ue_gain),
        "demand": s.demand.tolist(),
        "serving_cell": s.serving_cell.tolist(),
        "ris_cell": s.ris_cell.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_scenario(path: str) -> Scenario:
    """Read a scenario written by :func:`save_scenario`."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "risload-scenario":
        raise ValueError("not a scenario file")
    if doc.get("version") != _SCENARIO_FORMAT_VERSION:
        raise ValueError(f"unsupported scenario version {doc.get('version')}")
    layout = Layout(**doc["layout"])
    pl = PathLossParams(**doc["pathloss"])
    g = _complex_from_list(doc["bs_ris_gain"])
    h = _complex_from_list(doc["ris_ue_gain"])
    return Scenario(
        layout=layout,
        pathloss=pl,
        bs_pos=np.asarray(doc["bs_pos"], dtype=float).reshape(-1, 2),
        ris_pos=np.asarray(doc["ris_pos"], dtype=float).reshape(-1, 2),
        ue_pos=np.asarray(doc["ue_pos"], dtype=float).reshape(-1, 2),
        direct_gain=_complex_from_list(doc["direct_gain"]),
        bs_ris_gain=g,
        ris_ue_gain=h,
        cascade=_cascade_tensor(g, h),
        demand=np.asarray(doc["demand"], dtype=float),
        serving_cell=np.asarray(doc["serving_cell"], dtype=int),
        ris_cell=np.asarray(doc["ris_cell"], dtype=int),
        seed=doc["seed"],
        min_bs_ue_distance=doc["min_bs_ue_distance"],
    )
