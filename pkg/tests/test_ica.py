"""Tests for the multi-cell sweep framework."""

import numpy as np
import pytest

from risload.coupling import PhaseConfig, fixed_point_loads
from risload.ica import default_inner, ica, initialize, sweep_once
from risload.mm import MmState
from risload.scenario import Domain, Layout, PathLossParams, generate_scenario

from conftest import toy_scenario

LAYOUT3 = Layout(num_cells=3, cell_radius=400.0, ris_per_cell=1,
                 elements_per_ris=4, ues_per_cell=2, ris_bs_distance=200.0,
                 wraparound=False)
PL = PathLossParams()


def generated(seed=3, demand=0.02, layout=LAYOUT3):
    return generate_scenario(layout, PL, demand, seed=seed)


def ris_toy(seed=0, n_cells=2, m=2, demand=0.25, strength=0.55):
    """Two cells, one UE and one local RIS each, O(1) SINR."""
    rng = np.random.default_rng(seed)

    def cn(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    direct = np.eye(n_cells) * 1.2 + 0.45 * np.abs(cn(n_cells, n_cells))
    bs_ris = strength * cn(n_cells, n_cells, m)
    ris_ue = strength * cn(n_cells, n_cells, m)
    return toy_scenario(direct, bs_ris=bs_ris, ris_ue=ris_ue, demand=demand,
                        serving=list(range(n_cells)),
                        ris_cell=list(range(n_cells)), noise=0.1)


def counting_inner(counter, checks=None):
    def inner(ctx, domain, init, phi_committed, eps):
        counter.append(ctx.cell)
        if checks is not None:
            checks(ctx, init, phi_committed)
        return default_inner(ctx, domain, init, phi_committed, eps)

    return inner


def test_single_cell_sweeps_once_per_inner_call():
    layout = Layout(num_cells=1, cell_radius=400.0, ris_per_cell=1,
                    elements_per_ris=3, ues_per_cell=2, ris_bs_distance=200.0,
                    wraparound=False)
    s = generate_scenario(layout, PL, 0.02, seed=1)
    calls = []

    def checks(ctx, init, phi_committed):
        assert isinstance(init, MmState)
        assert phi_committed.shape == (s.elements_per_ris,)

    sol = ica(s, Domain.ideal(), eps=1e-8, inner=counting_inner(calls, checks))
    assert sol.converged
    assert sol.scheme == "ICA-D1"
    # one cell means exactly one inner call per sweep
    assert len(calls) == sol.sweeps
    assert calls == [0] * sol.sweeps
    assert len(sol.residual_trace) == sol.sweeps
    # an isolated cell faces no coupling, so the second sweep is a no-op
    assert sol.sweeps == 2
    assert sol.residual_trace[-1] <= 1e-8
    assert sol.feasible == bool(np.all(sol.loads <= 1.0))


def test_sweep_on_converged_state_is_stable():
    s = ris_toy()
    domain = Domain.ideal()
    state = initialize(s, PhaseConfig.uniform(s, domain))
    for _ in range(60):
        state = sweep_once(state, s, domain, 1e-6)
        if state.residual_trace[-1] <= 1e-10:
            break
    assert state.residual_trace[-1] <= 1e-10
    again = sweep_once(state, s, domain, 1e-6)
    np.testing.assert_allclose(again.loads, state.loads, rtol=0, atol=1e-9)


def test_manual_sweeps_monotone_and_traced():
    s = generated()
    domain = Domain.ideal()
    state = initialize(s, PhaseConfig.uniform(s, domain))
    prev = state.loads.copy()
    first = True
    for _ in range(30):
        nxt = sweep_once(state, s, domain, 1e-5)
        if first:
            # the opening sweep can only improve every cell
            assert np.all(nxt.loads <= prev + 1e-12)
            first = False
        assert nxt.loads.sum() <= prev.sum() + 1e-12
        assert nxt.residual_trace[-1] == pytest.approx(
            np.max(np.abs(nxt.loads - prev)), abs=1e-15)
        prev = nxt.loads.copy()
        state = nxt
        if state.residual_trace[-1] <= 1e-5:
            break
    assert state.residual_trace[-1] <= 1e-5


def test_driver_matches_manual_sweeps():
    s = generated(seed=5)
    domain = Domain.ideal()
    sol = ica(s, domain, eps=1e-4)
    state = initialize(s, PhaseConfig.uniform(s, domain))
    for _ in range(sol.sweeps):
        state = sweep_once(state, s, domain, 1e-4)
    assert sol.residual_trace == state.residual_trace
    report = fixed_point_loads(s, state.phases, tol=1e-8,
                               warm_start=state.loads)
    np.testing.assert_allclose(sol.loads, report.loads, rtol=0, atol=1e-12)
    assert sol.total_load == pytest.approx(report.loads.sum(), rel=1e-12)


def test_zero_cascade_reduces_to_no_ris():
    direct = np.array([[1.0, 0.5], [0.55, 1.1]])
    m = 2
    bs_ris = np.zeros((2, 2, m), dtype=complex)
    ris_ue = np.zeros((2, 2, m), dtype=complex)
    s = toy_scenario(direct, bs_ris=bs_ris, ris_ue=ris_ue, demand=0.2,
                     serving=[0, 1], ris_cell=[0, 1], noise=0.1)
    sol = ica(s, Domain.ideal(), eps=1e-6)
    baseline = fixed_point_loads(s, PhaseConfig.zero(s), tol=1e-10)
    np.testing.assert_allclose(sol.loads, baseline.loads, rtol=1e-8)
    # phases are powerless, so the first sweep already stands still
    assert sol.sweeps == 1
    assert sol.converged


def test_zero_demand_gives_zero_loads():
    s = ris_toy(demand=0.0)
    sol = ica(s, Domain.ideal(), eps=1e-6)
    np.testing.assert_allclose(sol.loads, 0.0, atol=1e-15)
    assert sol.feasible
    assert sol.converged


def test_scheme_labels():
    s = ris_toy()
    assert ica(s, Domain.ideal(), eps=1e-4).scheme == "ICA-D1"
    assert ica(s, Domain.unit_modulus(), eps=1e-4).scheme == "ICA-D2"
    assert ica(s, Domain.discrete(2), eps=1e-4).scheme == "ICA-D3(2)"


def test_discrete_solution_stays_on_grid():
    s = ris_toy(seed=2)
    sol = ica(s, Domain.discrete(4), eps=1e-5)
    sol.phases.validate()
    assert sol.phases.domain == Domain.discrete(4)
    np.testing.assert_allclose(np.abs(sol.phases.phi), 1.0, atol=1e-12)


def test_jacobi_mode_agrees_with_gauss_seidel():
    s = ris_toy(seed=4)
    gs = ica(s, Domain.ideal(), eps=1e-6)
    jac = ica(s, Domain.ideal(), eps=1e-6, mode="jacobi")
    assert jac.converged
    baseline = fixed_point_loads(s, PhaseConfig.zero(s), tol=1e-10).loads.sum()
    assert gs.total_load <= baseline + 1e-12
    assert jac.total_load <= baseline + 1e-12
    # the modes may settle in different local optima, but not far apart
    assert jac.total_load == pytest.approx(gs.total_load, rel=0.25)


def test_sweep_rejects_unknown_mode():
    s = ris_toy()
    state = initialize(s, PhaseConfig.uniform(s, Domain.ideal()))
    with pytest.raises(ValueError, match="mode"):
        sweep_once(state, s, Domain.ideal(), mode="chaotic")


def test_driver_rejects_nonpositive_eps():
    s = ris_toy()
    with pytest.raises(ValueError, match="eps"):
        ica(s, Domain.ideal(), eps=0.0)


def test_sweep_cap_returns_unconverged_best_effort():
    s = generated(seed=7)
    sol = ica(s, Domain.ideal(), eps=1e-12, max_sweeps=2)
    assert not sol.converged
    assert sol.sweeps == 2
    assert sol.total_load == pytest.approx(sol.loads.sum(), rel=1e-12)
    baseline = fixed_point_loads(s, PhaseConfig.zero(s), tol=1e-10).loads.sum()
    assert sol.total_load <= baseline + 1e-9


def test_inner_exception_names_the_cell():
    s = ris_toy()

    def broken(ctx, domain, init, phi_committed, eps):
        if ctx.cell == 1:
            raise RuntimeError("boom")
        return default_inner(ctx, domain, init, phi_committed, eps)

    with pytest.raises(RuntimeError, match="cell 1"):
        ica(s, Domain.ideal(), eps=1e-4, inner=broken)
