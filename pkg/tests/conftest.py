"""Shared builders for hand-crafted toy networks used across the suite."""

import sys

import numpy as np
import pytest

from risload.coupling import CellContext, ctx_interference, ctx_sinr
from risload.scenario import Layout, PathLossParams, Scenario, _cascade_tensor


def random_cell_context(rng, n_ue=2, n_other=2, n_ris=2, m=2, p_own=None,
                        ris_strength=0.3, demand=(0.05, 0.3)):
    """Draw a moderate-scale frozen cell for solver-level tests.

    Powers are noise-normalized; the default scale keeps SINR within a
    few orders of one so absolute float tolerances stay meaningful.
    """
    if p_own is None:
        p_own = float(rng.uniform(0.5, 5.0))
    q = n_ris * m

    def cn(*shape):
        return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2)

    return CellContext(
        cell=0,
        ue_index=np.arange(n_ue),
        demand=rng.uniform(*demand, size=n_ue),
        p_own=p_own,
        ghat=cn(n_ue),
        lam=ris_strength * cn(n_ue, q),
        w_int=p_own * rng.uniform(0.0, 0.4, size=n_other),
        ghat_int=0.5 * cn(n_other, n_ue),
        lam_int=0.5 * ris_strength * cn(n_other, n_ue, q),
        noise=1.0,
        local_ris=np.arange(n_ris),
        elements_per_ris=m,
    )


def tight_expansion(ctx, rng=None, phi=None):
    """Expansion point with gamma at the SINR and beta on the floor."""
    q = ctx.num_phase
    if phi is None:
        if rng is None:
            phi = np.full(q, np.exp(1j * np.pi))
        else:
            raw = rng.normal(size=q) + 1j * rng.normal(size=q)
            phi = raw / np.maximum(np.abs(raw), 1.0) * rng.uniform(
                0.3, 1.0, size=q)
    phi = np.asarray(phi, dtype=complex)
    return phi, ctx_sinr(ctx, phi), ctx_interference(ctx, phi) + 1.0


def toy_scenario(direct, bs_ris=None, ris_ue=None, demand=1.0, serving=None,
                 ris_cell=None, tx_power=1.0, noise=0.1):
    """Build a Scenario straight from gain arrays, skipping generation.

    Positions are placeholders; only the gains, demands and powers enter
    the load model.  ``direct`` has shape (I, J); the reflected arrays
    default to a RIS-free network.
    """
    direct = np.asarray(direct, dtype=complex)
    n_cells, n_ue = direct.shape
    if bs_ris is None:
        m = 1
        bs_ris = np.zeros((n_cells, 0, m), dtype=complex)
        ris_ue = np.zeros((0, n_ue, m), dtype=complex)
        ris_cell = np.zeros(0, dtype=int)
    else:
        bs_ris = np.asarray(bs_ris, dtype=complex)
        ris_ue = np.asarray(ris_ue, dtype=complex)
        ris_cell = np.asarray(ris_cell, dtype=int)
        m = bs_ris.shape[2]
    if serving is None:
        per = n_ue // n_cells
        serving = np.repeat(np.arange(n_cells), per)
    serving = np.asarray(serving, dtype=int)
    n_ris = bs_ris.shape[1]
    layout = Layout(
        num_cells=n_cells,
        cell_radius=500.0,
        ris_per_cell=max(1, -(-n_ris // n_cells)) if n_ris else 0,
        elements_per_ris=m,
        ues_per_cell=max(1, n_ue // n_cells),
        ris_bs_distance=250.0,
        wraparound=False,
    )
    pl = PathLossParams(tx_power_per_rb=tx_power, noise_power=noise)
    return Scenario(
        layout=layout,
        pathloss=pl,
        bs_pos=np.zeros((n_cells, 2)),
        ris_pos=np.zeros((n_ris, 2)),
        ue_pos=np.zeros((n_ue, 2)),
        direct_gain=direct,
        bs_ris_gain=bs_ris,
        ris_ue_gain=ris_ue,
        cascade=_cascade_tensor(bs_ris, ris_ue),
        demand=np.broadcast_to(np.asarray(demand, dtype=float), (n_ue,)).copy(),
        serving_cell=serving,
        ris_cell=ris_cell,
        seed=0,
    )


@pytest.fixture
def symmetric_two_cell():
    """Two cells, one UE each, mirror-image gains.

    Own power 1, cross power 0.5, noise 0.1, demand 0.2 per UE, so both
    loads solve rho = 0.2 / log2(1 + 1 / (0.5 rho + 0.1)).
    """
    g = np.array([[1.0, np.sqrt(0.5)],
                  [np.sqrt(0.5), 1.0]])
    return toy_scenario(g, demand=0.2, serving=[0, 1], noise=0.1)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdict lines after the test summary."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
