import json

import numpy as np
import pytest

from risload.scenario import (
    Domain,
    Layout,
    PathLossParams,
    cascade_row,
    generate_scenario,
    load_scenario,
    save_scenario,
    wraparound_distance,
)


SMALL = Layout(num_cells=3, cell_radius=400.0, ris_per_cell=2,
               elements_per_ris=4, ues_per_cell=3, ris_bs_distance=150.0,
               wraparound=False)
PL = PathLossParams()


def rotate(v, angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def mirror_offsets(radius):
    # Independent construction: neighbor cells sit in the 30 + 60k degree
    # directions at spacing sqrt(3) * radius, so the cluster translation
    # is twice the 30-degree basis vector plus the 90-degree one (the
    # i=2, j=1 reuse pattern, length sqrt(7) times the spacing); its five
    # rotations by 60 degrees complete the neighbor set.
    spacing = np.sqrt(3.0) * radius
    t1 = spacing * (2.0 * np.array([np.cos(np.pi / 6.0), np.sin(np.pi / 6.0)])
                    + np.array([0.0, 1.0]))
    return [np.zeros(2)] + [rotate(t1, k * np.pi / 3.0) for k in range(6)]


class TestLayoutValidation:
    def test_defaults_valid(self):
        Layout()

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            Layout(num_cells=0)
        with pytest.raises(ValueError):
            Layout(ris_per_cell=-1)
        with pytest.raises(ValueError):
            Layout(elements_per_ris=0)

    def test_rejects_ris_ring_outside_cell(self):
        with pytest.raises(ValueError):
            Layout(ris_bs_distance=600.0)

    def test_wraparound_needs_seven_cells(self):
        with pytest.raises(ValueError):
            Layout(num_cells=3)
        Layout(num_cells=3, wraparound=False)

    def test_pathloss_bounds(self):
        with pytest.raises(ValueError):
            PathLossParams(alpha_cu=1.0)
        with pytest.raises(ValueError):
            PathLossParams(noise_power=0.0)


class TestDomain:
    def test_kinds(self):
        assert Domain.ideal().label() == "D1"
        assert Domain.unit_modulus().label() == "D2"
        assert Domain.discrete(4).label() == "D3(4)"
        assert Domain.discrete(8).phase_step() == pytest.approx(np.pi / 4)

    def test_rejects_bad_discrete(self):
        with pytest.raises(ValueError):
            Domain.discrete(1)
        with pytest.raises(ValueError):
            Domain("nope")


class TestGeneration:
    def test_deterministic(self):
        a = generate_scenario(SMALL, PL, 0.3, seed=7)
        b = generate_scenario(SMALL, PL, 0.3, seed=7)
        for name in ("bs_pos", "ue_pos", "ris_pos", "direct_gain",
                     "bs_ris_gain", "ris_ue_gain", "cascade", "demand"):
            assert np.array_equal(getattr(a, name), getattr(b, name)), name

    def test_seed_changes_channels(self):
        a = generate_scenario(SMALL, PL, 0.3, seed=1)
        b = generate_scenario(SMALL, PL, 0.3, seed=2)
        assert not np.array_equal(a.direct_gain, b.direct_gain)

    def test_no_ris_degenerate(self):
        layout = Layout(num_cells=3, cell_radius=400.0, ris_per_cell=0,
                        elements_per_ris=4, ues_per_cell=2,
                        ris_bs_distance=150.0, wraparound=False)
        s = generate_scenario(layout, PL, 0.3, seed=0)
        assert s.bs_ris_gain.shape == (3, 0, 4)
        assert s.ris_ue_gain.shape == (0, 6, 4)
        assert s.cascade.shape == (3, 6, 0, 4)

    def test_default_network_shape(self):
        s = generate_scenario(Layout(), PL, 0.4, seed=0)
        assert s.cascade.shape == (7, 70, 49, 20)
        per_cell_elements = s.layout.ris_per_cell * s.layout.elements_per_ris
        assert per_cell_elements == 140
        assert np.array_equal(np.sort(s.cell_ris(3)), np.arange(21, 28))

    def test_cascade_is_elementwise_product(self):
        s = generate_scenario(SMALL, PL, 0.3, seed=3)
        rng = np.random.default_rng(0)
        for _ in range(50):
            i = rng.integers(s.num_cells)
            j = rng.integers(s.num_ues)
            l = rng.integers(s.num_ris)
            expect = s.bs_ris_gain[i, l] * s.ris_ue_gain[l, j]
            assert np.array_equal(s.cascade[i, j, l], expect)

    def test_ue_positions_inside_cell(self):
        s = generate_scenario(SMALL, PL, 0.3, seed=11, min_bs_ue_distance=25.0)
        for j in range(s.num_ues):
            d = np.hypot(*(s.ue_pos[j] - s.bs_pos[s.serving_cell[j]]))
            assert 25.0 <= d <= SMALL.cell_radius + 1e-9

    def test_min_distance_unsatisfiable(self):
        with pytest.raises(ValueError):
            generate_scenario(SMALL, PL, 0.3, seed=0, min_bs_ue_distance=500.0)

    def test_ris_on_ring(self):
        s = generate_scenario(SMALL, PL, 0.3, seed=5)
        for l in range(s.num_ris):
            d = np.hypot(*(s.ris_pos[l] - s.bs_pos[s.ris_cell[l]]))
            assert d == pytest.approx(SMALL.ris_bs_distance)

    def test_per_ue_demand(self):
        d = np.linspace(0.1, 0.9, 9)
        s = generate_scenario(SMALL, PL, d, seed=0)
        assert np.array_equal(s.demand, d)

    def test_fading_unit_mean_square(self):
        # Strip the deterministic distance factor off each reflected-link
        # entry; what remains should have unit mean square power.
        s = generate_scenario(Layout(), PL, 0.4, seed=42)
        dist = np.empty((s.num_ris, s.num_ues))
        for l in range(s.num_ris):
            for j in range(s.num_ues):
                dist[l, j] = wraparound_distance(s.ris_pos[l], s.ue_pos[j], s.layout)
        fading = s.ris_ue_gain / dist[:, :, None] ** (-PL.alpha_iu)
        assert fading.size >= 10_000
        assert np.mean(np.abs(fading) ** 2) == pytest.approx(1.0, rel=0.05)


class TestWraparound:
    LAYOUT = Layout()

    def test_identity(self):
        p = np.array([12.0, -40.0])
        assert wraparound_distance(p, p, self.LAYOUT) == 0.0

    def test_matches_bruteforce_mirrors(self):
        rng = np.random.default_rng(3)
        offs = mirror_offsets(self.LAYOUT.cell_radius)
        for _ in range(200):
            a = rng.uniform(-1500, 1500, 2)
            b = rng.uniform(-1500, 1500, 2)
            expect = min(np.hypot(*(a - b - o)) for o in offs)
            assert wraparound_distance(a, b, self.LAYOUT) == pytest.approx(expect, rel=1e-12)

    def test_far_edge_shorter_than_euclidean(self):
        s = generate_scenario(self.LAYOUT, PL, 0.4, seed=0)
        a, b = s.bs_pos[1], s.bs_pos[4]   # opposite outer cells
        wrapped = wraparound_distance(a, b, self.LAYOUT)
        assert wrapped < np.hypot(*(a - b))

    def test_images_tile_cell_lattice(self):
        # The mirrored copies of the 7 cell centers must reproduce a patch
        # of the underlying hexagonal lattice: every nearest-neighbor
        # distance among the 49 image points equals the cell spacing.
        s = generate_scenario(self.LAYOUT, PL, 0.4, seed=0)
        offs = np.array(mirror_offsets(self.LAYOUT.cell_radius))
        pts = (s.bs_pos[None, :, :] + offs[:, None, :]).reshape(-1, 2)
        gap = pts[:, None, :] - pts[None, :, :]
        dist = np.hypot(gap[..., 0], gap[..., 1])
        np.fill_diagonal(dist, np.inf)
        spacing = np.sqrt(3.0) * self.LAYOUT.cell_radius
        assert dist.min(axis=1) == pytest.approx(np.full(49, spacing), rel=1e-9)

    def test_disabled_is_euclidean(self):
        layout = Layout(num_cells=3, wraparound=False)
        a = np.array([900.0, 0.0])
        b = np.array([-900.0, 10.0])
        assert wraparound_distance(a, b, layout) == pytest.approx(np.hypot(*(a - b)))


class TestCascadeRow:
    def test_real(self):
        assert np.array_equal(cascade_row([1.0, 2.0], [3.0, 4.0]), [3.0, 8.0])

    def test_imaginary(self):
        out = cascade_row([1j], [1j])
        assert np.array_equal(out, [-1.0 + 0j])

    def test_matches_diagonal_product(self):
        rng = np.random.default_rng(9)
        g = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        h = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        phi = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        lhs = cascade_row(g, h) @ phi
        rhs = g @ np.diag(phi) @ h
        assert lhs == pytest.approx(rhs, rel=1e-12)
        ones = np.ones(6, dtype=complex)
        assert cascade_row(g, h) @ ones == pytest.approx(g @ h, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cascade_row([1.0], [1.0, 2.0])


class TestSerialization:
    def test_round_trip(self, tmp_path):
        s = generate_scenario(SMALL, PL, 0.3, seed=21)
        path = tmp_path / "scn.json"
        save_scenario(s, str(path))
        t = load_scenario(str(path))
        for name in ("bs_pos", "ris_pos", "ue_pos", "direct_gain",
                     "bs_ris_gain", "ris_ue_gain", "cascade", "demand",
                     "serving_cell", "ris_cell"):
            assert np.array_equal(getattr(s, name), getattr(t, name)), name
        assert t.layout == s.layout
        assert t.pathloss == s.pathloss
        assert t.seed == s.seed

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"format": "something-else"}))
        with pytest.raises(ValueError):
            load_scenario(str(path))
