"""Experiment engine: config files, seeded sweeps, CSV and plot data.

The harness runs a list of schemes over a sweep axis (demand, per-cell
element count, or RIS path-loss exponent), with every scheme consuming
the identical channel realization per (value, seed) cell.  Results go
into a :class:`ResultTable` that serializes to CSV deterministically;
per-figure series extraction produces plot-ready text files.

Demand values are normalized (load per rate unit); the conventional
megabit-per-second axis label of the demand sweep corresponds to
``Mbps = 20 * d`` and is reproduced in plot-data metadata only.
"""

from __future__ import annotations

import dataclasses
import math
import re
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import (
    BudgetExceeded,
    DecompositionMode,
    decomposition,
    global_opt_discrete,
    no_ris,
    random_phases,
)
from .coupling import DemandUnservable, NonConvergence
from .cvxsub import SolverError
from .ica import Solution, ica
from .mm import mm_single_cell, mm_single_cell_d3
from .scenario import Domain, Layout, PathLossParams, Scenario, generate_scenario

SCHEMA_VERSION = 1

_AXES = ("none", "demand", "elements", "alpha_ris")
_MBPS_PER_UNIT_DEMAND = 20.0

_SCHEME_RE = re.compile(
    r"^(?:NoRIS|Random|Decomp1|Decomp2|ICA-D1|ICA-D2"
    r"|ICA-D3\(([2-9]\d*)\)|GlobalD3\(([2-9]\d*)\))$"
)

# Exceptions a scheme may raise on a hard instance; they are recorded in
# the row and the sweep continues.  Anything else is a bug and propagates.
_ROW_ERRORS = (SolverError, NonConvergence, DemandUnservable, BudgetExceeded)


class ConfigError(Exception):
    """Malformed or inconsistent experiment configuration."""


class MissingSeries(Exception):
    """The table lacks the axis, schemes, or traces a figure needs."""


def _scheme_phases(token: str) -> int | None:
    """Phase count of a discrete scheme token, None for the others."""
    m = _SCHEME_RE.match(token)
    if m is None:
        raise ConfigError(f"unknown scheme {token!r}")
    for grp in m.groups():
        if grp is not None:
            return int(grp)
    return None


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one experiment run.

    Attributes
    ----------
    layout : Layout
        Base geometry; the elements sweep re-derives ``ris_per_cell``
        from the swept per-cell element total.
    pathloss : PathLossParams
        Base propagation constants; the alpha_ris sweep overrides the
        two RIS-side exponents together.
    demand : float
        Normalized per-UE demand used whenever the sweep axis is not
        demand.
    schemes : tuple of str
        Scheme tokens: NoRIS, Random, Decomp1, Decomp2, ICA-D1, ICA-D2,
        ICA-D3(N), GlobalD3(N).
    sweep_axis : str
        One of none, demand, elements, alpha_ris.
    sweep_values : tuple of float
        Strictly increasing; empty exactly when the axis is none.
    seeds : tuple of int
        Channel realization seeds, one scenario per (value, seed).
    eps : float
        Outer convergence tolerance.
    inner_tol : float
        KKT tolerance of the per-cell convex solver.
    min_bs_ue_distance : float
        Smallest admissible BS-UE distance in meters.
    """

    layout: Layout = Layout()
    pathloss: PathLossParams = PathLossParams()
    demand: float = 0.02
    schemes: tuple = ("NoRIS",)
    sweep_axis: str = "none"
    sweep_values: tuple = ()
    seeds: tuple = (0, 1, 2, 3, 4)
    eps: float = 1e-4
    inner_tol: float = 1e-7
    min_bs_ue_distance: float = 10.0

    def __post_init__(self):
        if not self.schemes:
            raise ConfigError("schemes must be non-empty")
        for token in self.schemes:
            _scheme_phases(token)
        if len(set(self.schemes)) != len(self.schemes):
            raise ConfigError("duplicate scheme")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seed")
        if self.sweep_axis not in _AXES:
            raise ConfigError(f"unknown sweep_axis {self.sweep_axis!r}")
        if self.sweep_axis == "none":
            if self.sweep_values:
                raise ConfigError("sweep_values given without a sweep axis")
        else:
            if not self.sweep_values:
                raise ConfigError("sweep axis set but sweep_values empty")
            if any(b <= a for a, b in zip(self.sweep_values,
                                          self.sweep_values[1:])):
                raise ConfigError("sweep_values must be strictly increasing")
        if self.demand <= 0:
            raise ConfigError("demand must be positive")
        if self.eps <= 0 or self.inner_tol <= 0:
            raise ConfigError("tolerances must be positive")
        for v in self.sweep_values:
            try:
                self.instantiate(v)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"sweep value {v!r}: {exc}") from None

    def values(self) -> tuple:
        """Effective sweep values; the baseline demand when axis is none."""
        if self.sweep_axis == "none":
            return (self.demand,)
        return self.sweep_values

    def instantiate(self, value: float):
        """Layout, path loss, and demand at one sweep value."""
        layout, pl, demand = self.layout, self.pathloss, self.demand
        if self.sweep_axis == "demand":
            demand = value
            if demand <= 0:
                raise ConfigError("demand values must be positive")
        elif self.sweep_axis == "elements":
            m = layout.elements_per_ris
            total = int(value)
            if total != value or total <= 0 or total % m:
                raise ConfigError(
                    f"per-cell element total must be a positive multiple "
                    f"of elements_per_ris = {m}")
            layout = dataclasses.replace(layout, ris_per_cell=total // m)
        elif self.sweep_axis == "alpha_ris":
            pl = dataclasses.replace(self.pathloss, alpha_ci=value,
                                     alpha_iu=value)
        return layout, pl, demand

    def scenario(self, value: float, seed: int) -> Scenario:
        layout, pl, demand = self.instantiate(value)
        return generate_scenario(layout, pl, demand, seed,
                                 min_bs_ue_distance=self.min_bs_ue_distance)


_CONFIG_KEYS = {
    "schema": int,
    "num_cells": int,
    "cell_radius": float,
    "ris_per_cell": int,
    "elements_per_ris": int,
    "ues_per_cell": int,
    "ris_bs_distance": float,
    "wraparound": bool,
    "min_bs_ue_distance": float,
    "alpha_cu": float,
    "alpha_ris": float,
    "tx_power_per_rb": float,
    "noise_power": float,
    "demand": float,
    "schemes": "list",
    "sweep_axis": str,
    "sweep_values": "floats",
    "seeds": "ints",
    "eps": float,
    "inner_tol": float,
}


def _parse_scalar(key: str, kind, raw: str):
    if kind is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if kind is str:
        return raw
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(
            f"{key}: expected {kind.__name__}, got {raw!r}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` experiment configuration text.

    Lines are ``key = value`` with ``#`` comments; list values are
    comma-separated.  A ``schema`` key equal to the supported version is
    required, and unknown keys are errors.
    """
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        kind = _CONFIG_KEYS[key]
        items = [p.strip() for p in raw.split(",")] if raw else []
        if kind == "list":
            seen[key] = tuple(p for p in items if p)
        elif kind == "floats":
            seen[key] = tuple(_parse_scalar(key, float, p) for p in items if p)
        elif kind == "ints":
            seen[key] = tuple(_parse_scalar(key, int, p) for p in items if p)
        else:
            seen[key] = _parse_scalar(key, kind, raw)
    if seen.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"config must declare schema = {SCHEMA_VERSION}")

    layout_kw = {k: seen[k] for k in ("num_cells", "cell_radius",
                                      "ris_per_cell", "elements_per_ris",
                                      "ues_per_cell", "ris_bs_distance",
                                      "wraparound") if k in seen}
    pl_kw = {k: seen[k] for k in ("alpha_cu", "tx_power_per_rb",
                                  "noise_power") if k in seen}
    if "alpha_ris" in seen:
        pl_kw["alpha_ci"] = pl_kw["alpha_iu"] = seen["alpha_ris"]
    cfg_kw = {k: seen[k] for k in ("demand", "schemes", "sweep_axis",
                                   "sweep_values", "seeds", "eps",
                                   "inner_tol", "min_bs_ue_distance")
              if k in seen}
    try:
        return ExperimentConfig(layout=Layout(**layout_kw),
                                pathloss=PathLossParams(**pl_kw), **cfg_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def read_config(path: str) -> ExperimentConfig:
    """Parse an experiment configuration file."""
    with open(path) as fh:
        return parse_config(fh.read())


@dataclass(frozen=True)
class ResultRow:
    """One (scheme, sweep value, seed) measurement."""

    scheme: str
    value: float
    seed: int
    total_load: float
    feasible: bool
    sweeps: int
    wall_time: float
    error: str = ""


@dataclass
class ResultTable:
    """Sample rows plus residual traces of one experiment.

    Aggregates (mean and standard deviation over the clean seeds of each
    scheme/value group) are recomputed from the rows on demand, never
    stored.  Traces live only in memory; CSV round trips drop them.
    """

    axis: str
    rows: tuple = ()
    traces: dict = field(default_factory=dict)

    def sorted_rows(self) -> list:
        return sorted(self.rows, key=lambda r: (r.scheme, r.value, r.seed))

    def aggregates(self) -> list:
        """Per (scheme, value): (n, mean/std rows over error-free seeds)."""
        groups = {}
        for r in self.sorted_rows():
            if not r.error:
                groups.setdefault((r.scheme, r.value), []).append(r)
        out = []
        for (scheme, value), rs in sorted(groups.items()):
            loads = np.array([r.total_load for r in rs])
            sweeps = np.array([r.sweeps for r in rs], dtype=float)
            walls = np.array([r.wall_time for r in rs])
            out.append((scheme, value, len(rs),
                        ResultRow(scheme, value, -1, loads.mean(),
                                  all(r.feasible for r in rs),
                                  int(round(sweeps.mean())), walls.mean()),
                        ResultRow(scheme, value, -1, loads.std(),
                                  False, int(round(sweeps.std())),
                                  walls.std())))
        return out


def _inner_for(kkt_tol: float):
    def inner(ctx, domain, init, phi_committed, eps):
        if domain.kind == "discrete":
            return mm_single_cell_d3(ctx, domain.n_phases, init=init,
                                     phi_committed=phi_committed, eps=eps,
                                     kkt_tol=kkt_tol)
        return mm_single_cell(ctx, domain, init=init, eps=eps,
                              kkt_tol=kkt_tol)
    return inner


def _run_scheme(token: str, s: Scenario, seed: int,
                cfg: ExperimentConfig) -> Solution:
    n = _scheme_phases(token)
    if token == "NoRIS":
        return no_ris(s)
    if token == "Random":
        return random_phases(s, seed)
    if token == "Decomp1":
        return decomposition(s, DecompositionMode.zero(), eps=cfg.eps,
                             kkt_tol=cfg.inner_tol)
    if token == "Decomp2":
        return decomposition(s, DecompositionMode.worst_case(), eps=cfg.eps,
                             kkt_tol=cfg.inner_tol)
    if token.startswith("GlobalD3"):
        return global_opt_discrete(s, n, eps=cfg.eps)
    domain = {"ICA-D1": Domain.ideal(), "ICA-D2": Domain.unit_modulus()}.get(
        token, Domain.discrete(n) if n else None)
    return ica(s, domain, eps=cfg.eps, inner=_inner_for(cfg.inner_tol))


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    """Run every scheme over the sweep grid and seed list.

    All schemes at one (value, seed) cell consume the identical channel
    realization.  A numerical failure in one scheme is recorded in its
    row (NaN load, the exception text in the error column) and the sweep
    continues; programming errors propagate.
    """
    rows = []
    traces = {}
    for value in cfg.values():
        for seed in cfg.seeds:
            s = cfg.scenario(value, seed)
            for token in cfg.schemes:
                start = time.perf_counter()
                try:
                    sol = _run_scheme(token, s, seed, cfg)
                except _ROW_ERRORS as exc:
                    wall = time.perf_counter() - start
                    rows.append(ResultRow(token, value, seed, math.nan,
                                          False, 0, wall,
                                          f"{type(exc).__name__}: {exc}"))
                    continue
                wall = time.perf_counter() - start
                rows.append(ResultRow(token, value, seed,
                                      float(sol.total_load),
                                      bool(sol.feasible), int(sol.sweeps),
                                      wall))
                if sol.residual_trace:
                    traces[(token, value, seed)] = tuple(sol.residual_trace)
    return ResultTable(axis=cfg.sweep_axis, rows=tuple(rows), traces=traces)


def _fmt(x: float) -> str:
    return "%.9g" % x


def _axis_column(axis: str) -> str:
    return "value" if axis == "none" else axis


def emit_csv(table: ResultTable, path: str) -> None:
    """Write the table as deterministic CSV.

    Header, then sample rows sorted by (scheme, value, seed), then the
    aggregate rows (kind mean / std per scheme and value, seed column
    holding the number of aggregated seeds).  Floats carry 9 significant
    digits; a second emit of a parsed file is byte-identical.  Wall-time
    fields vary between runs and are informational only.
    """
    col = _axis_column(table.axis)
    lines = [f"scheme,{col},seed,total_load,feasible,sweeps,wall_time,"
             "error,kind"]
    for r in table.sorted_rows():
        err = r.error.replace(",", ";").replace("\n", " ")
        lines.append(f"{r.scheme},{_fmt(r.value)},{r.seed},"
                     f"{_fmt(r.total_load)},{int(r.feasible)},{r.sweeps},"
                     f"{_fmt(r.wall_time)},{err},sample")
    for scheme, value, n, mean, std in table.aggregates():
        for kind, r in (("mean", mean), ("std", std)):
            lines.append(f"{scheme},{_fmt(value)},{n},{_fmt(r.total_load)},"
                         f"{int(r.feasible)},{r.sweeps},{_fmt(r.wall_time)},"
                         f",{kind}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_csv(path: str) -> ResultTable:
    """Read a CSV written by :func:`emit_csv`.

    Aggregate rows are dropped (they are recomputable); traces are not
    stored in CSV, so the parsed table cannot feed the residual figure.
    """
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines:
        raise ConfigError("empty result file")
    header = lines[0].split(",")
    if len(header) != 9 or header[0] != "scheme" or header[-1] != "kind":
        raise ConfigError("not a result table")
    col = header[1]
    axis = "none" if col == "value" else col
    if axis not in _AXES:
        raise ConfigError(f"unknown axis column {col!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 9:
            raise ConfigError(f"line {lineno}: expected 9 fields")
        if parts[8] != "sample":
            continue
        rows.append(ResultRow(parts[0], float(parts[1]), int(parts[2]),
                              float(parts[3]), bool(int(parts[4])),
                              int(parts[5]), float(parts[6]), parts[7]))
    return ResultTable(axis=axis, rows=tuple(rows))


_FIGURE_AXES = {"fig1": "demand", "fig2": "elements", "fig3": "alpha_ris"}

_FIGURE_LABELS = {
    "fig1": "total load vs normalized demand"
            f" (conventional axis: Mbps = {_MBPS_PER_UNIT_DEMAND:g} * x)",
    "fig2": "total load vs per-cell reflection element count",
    "fig3": "total load vs RIS path-loss exponent",
    "fig5": "load-vector max-norm residual vs sweep",
}


def emit_plot_data(table: ResultTable, figure: str, path: str) -> None:
    """Write per-scheme series for one figure as columnar text.

    The load figures (fig1, fig2, fig3) need the matching sweep axis and
    emit ``x mean std`` per scheme over the error-free seeds.  The
    residual figure (fig5) needs in-memory traces and emits one series
    per traced run with ``sweep residual`` columns, keeping only
    positive residuals so the series is log-scale ready.
    """
    if figure not in _FIGURE_LABELS:
        raise MissingSeries(f"unknown figure {figure!r}")
    lines = [f"# figure: {figure}", f"# {_FIGURE_LABELS[figure]}"]
    if figure == "fig5":
        if not table.traces:
            raise MissingSeries("table carries no residual traces")
        lines.append("# columns: sweep residual")
        for (scheme, value, seed) in sorted(table.traces):
            lines.append("")
            lines.append(f"# series: {scheme} value={_fmt(value)} "
                         f"seed={seed}")
            for k, res in enumerate(table.traces[(scheme, value, seed)],
                                    start=1):
                if res > 0:
                    lines.append(f"{k} {_fmt(res)}")
    else:
        want = _FIGURE_AXES[figure]
        if table.axis != want:
            raise MissingSeries(
                f"{figure} needs a {want} sweep, table axis is {table.axis}")
        aggs = table.aggregates()
        if not aggs:
            raise MissingSeries("table has no error-free rows")
        lines.append("# columns: x mean std")
        for scheme in sorted({a[0] for a in aggs}):
            lines.append("")
            lines.append(f"# series: {scheme}")
            for a_scheme, value, _, mean, std in aggs:
                if a_scheme == scheme:
                    lines.append(f"{_fmt(value)} {_fmt(mean.total_load)} "
                                 f"{_fmt(std.total_load)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
