"""Single-cell majorize-minimize optimizer tests."""

import numpy as np
import pytest

from risload.coupling import ctx_cell_load, ctx_sinr, discrete_candidates
from risload.mm import (
    exact_F,
    majorized_F,
    mm_single_cell,
    mm_single_cell_d3,
    round_to_discrete,
)
from risload.scenario import Domain

from conftest import random_cell_context, tight_expansion


def test_majorizer_tangent_and_dominating():
    rng = np.random.default_rng(2)
    for _ in range(10):
        ctx = random_cell_context(rng)
        point = tight_expansion(ctx, rng)
        at_point = majorized_F(ctx, point, *point)
        exact_at = exact_F(ctx, *point)
        assert np.all(np.abs(at_point - exact_at)
                      <= 1e-9 * np.maximum(1.0, np.abs(exact_at)))
        for _ in range(100):
            raw = rng.normal(size=ctx.num_phase) + 1j * rng.normal(size=ctx.num_phase)
            phi = raw / np.maximum(np.abs(raw), 1.0)
            gamma = rng.uniform(0.05, 3.0, ctx.num_ues) * point[1]
            beta = point[2] * rng.uniform(1.0, 3.0, ctx.num_ues)
            gap = majorized_F(ctx, point, phi, gamma, beta) \
                - exact_F(ctx, phi, gamma, beta)
            assert np.all(gap >= -1e-9 * np.maximum(1.0, np.abs(gap)))


def test_round_to_discrete_pins():
    # Quarter grid: 1, i, -1, -i.  Magnitudes are discarded.
    got = round_to_discrete(np.array([0.3 * np.exp(0.1j)]), 4)
    assert np.allclose(got, [1.0 + 0.0j], atol=1e-12)
    got = round_to_discrete(np.array([5.0 * np.exp(1j * (np.pi / 2 + 0.2))]), 4)
    assert np.allclose(got, [1j], atol=1e-12)
    # Just off the midpoint the nearer candidate wins on either side.
    eps = 1e-9
    lo = np.array([np.exp(1j * (np.pi / 4 - eps))])
    hi = np.array([np.exp(1j * (np.pi / 4 + eps))])
    assert np.allclose(round_to_discrete(lo, 4), [1.0 + 0.0j], atol=1e-12)
    assert np.allclose(round_to_discrete(hi, 4),
                       [np.exp(1j * np.pi / 2)], atol=1e-12)
    # Zero coefficients take the half-circle point by convention.
    assert np.allclose(round_to_discrete(np.array([0.0j]), 2),
                       [np.exp(1j * np.pi)], atol=1e-12)
    grid = discrete_candidates(8)
    assert np.allclose(round_to_discrete(grid * 0.77, 8), grid, atol=1e-12)


def test_single_element_alignment():
    rng = np.random.default_rng(3)
    ctx = random_cell_context(rng, n_ue=1, n_other=0, n_ris=1, m=1,
                              ris_strength=0.6)
    res = mm_single_cell(ctx, Domain.ideal(), eps=1e-8)
    g, lam = ctx.ghat[0], ctx.lam[0, 0]
    best = abs(g) + abs(lam)
    want_rho = ctx.demand[0] / np.log2(1.0 + ctx.p_own * best ** 2)
    assert res.converged
    assert np.isclose(res.rho, want_rho, rtol=1e-6)
    assert np.isclose(abs(res.phi[0]), 1.0, atol=1e-9)
    want_phase = np.angle(g) - np.angle(lam)
    got = np.angle(res.phi[0])
    assert abs(np.exp(1j * got) - np.exp(1j * want_phase)) < 1e-3


def test_trace_monotone_and_converges():
    rng = np.random.default_rng(5)
    for _ in range(8):
        ctx = random_cell_context(rng, n_ue=3, n_ris=2, m=2)
        res = mm_single_cell(ctx, Domain.ideal())
        trace = np.asarray(res.state.objective_trace)
        assert res.converged
        assert res.state.iterations <= 50
        drops = np.diff(trace)
        assert np.all(drops <= 1e-9 * np.maximum(1.0, trace[:-1]))
        assert res.rho <= trace[0] + 1e-12
        assert res.kkt <= 1e-6


def test_no_elements_single_pass():
    rng = np.random.default_rng(7)
    ctx = random_cell_context(rng, n_ris=0, m=1)
    res = mm_single_cell(ctx, Domain.ideal())
    assert res.converged
    assert res.phi.size == 0
    assert np.isclose(res.rho, ctx_cell_load(ctx, np.zeros(0, complex)),
                      rtol=1e-12)
    assert res.state.iterations <= 1


def test_warm_restart_no_regression():
    rng = np.random.default_rng(11)
    ctx = random_cell_context(rng, n_ue=2, n_ris=2, m=2)
    first = mm_single_cell(ctx, Domain.ideal(), eps=1e-6)
    again = mm_single_cell(ctx, Domain.ideal(), init=first.state, eps=1e-6)
    assert again.rho <= first.rho + 1e-6 * max(1.0, first.rho)
    assert again.state.iterations <= first.state.iterations


def test_improves_on_uniform_start():
    rng = np.random.default_rng(13)
    ctx = random_cell_context(rng, n_ue=2, n_ris=2, m=2)
    rho0 = ctx_cell_load(ctx, np.full(ctx.num_phase, np.exp(1j * np.pi)))
    res = mm_single_cell(ctx, Domain.ideal())
    assert res.rho <= rho0 + 1e-12


def test_unit_modulus_amplitudes_exact():
    rng = np.random.default_rng(17)
    for _ in range(5):
        ctx = random_cell_context(rng, n_ue=2, n_ris=2, m=2)
        res = mm_single_cell(ctx, Domain.unit_modulus())
        assert res.phi.size == ctx.num_phase
        assert np.allclose(np.abs(res.phi), 1.0, atol=1e-12)
        trace = np.asarray(res.state.objective_trace)
        assert np.all(np.diff(trace) <= 1e-9 * np.maximum(1.0, trace[:-1]))


def test_unit_close_to_ideal_when_interference_free():
    rng = np.random.default_rng(19)
    ctx = random_cell_context(rng, n_ue=2, n_other=0, n_ris=2, m=2)
    ideal = mm_single_cell(ctx, Domain.ideal())
    unit = mm_single_cell(ctx, Domain.unit_modulus())
    assert np.min(np.abs(ideal.phi)) >= 1.0 - 1e-9
    assert unit.rho <= ideal.rho * 1.01 + 1e-9


def test_discrete_commit_rule():
    rng = np.random.default_rng(23)
    cands = discrete_candidates(4)
    for _ in range(5):
        ctx = random_cell_context(rng, n_ue=2, n_ris=2, m=2)
        committed = np.full(ctx.num_phase, cands[1])
        res = mm_single_cell_d3(ctx, 4, phi_committed=committed)
        dist = np.abs(res.phi[:, None] - cands[None, :]).min(axis=1)
        assert np.all(dist <= 1e-12)
        assert res.rho <= ctx_cell_load(ctx, committed) + 1e-12
        assert np.isclose(res.rho, ctx_cell_load(ctx, res.phi), rtol=1e-12)


def test_discrete_default_commit_is_grid_uniform():
    rng = np.random.default_rng(29)
    ctx = random_cell_context(rng, n_ue=2, n_ris=1, m=2)
    base = round_to_discrete(np.full(ctx.num_phase, np.exp(1j * np.pi)), 2)
    res = mm_single_cell_d3(ctx, 2)
    assert res.rho <= ctx_cell_load(ctx, base) + 1e-12


def test_rejects_discrete_domain_in_continuous_entry():
    rng = np.random.default_rng(31)
    ctx = random_cell_context(rng)
    with pytest.raises(ValueError):
        mm_single_cell(ctx, Domain.discrete(4))


def test_zero_demand_ues_are_ignored():
    rng = np.random.default_rng(37)
    ctx = random_cell_context(rng, n_ue=3)
    demand = ctx.demand.copy()
    demand[1] = 0.0
    import dataclasses
    ctx0 = dataclasses.replace(ctx, demand=demand)
    res = mm_single_cell(ctx0, Domain.ideal())
    direct = ctx_cell_load(ctx0, res.phi)
    assert np.isclose(res.rho, direct, rtol=1e-12)
    assert res.converged
