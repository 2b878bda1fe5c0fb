import numpy as np
import pytest

from pshchain import (AXIS_COUPLING, AXIS_GAIN, AccidentallyZeroElement, ChainSpec,
                      EPRecord, NoEP3InBox, NoEPInBracket, NormalizedPoint,
                      SweepGrid, build_hamiltonian, build_parity, classify_crossings,
                      find_ep2, find_ep3, find_ep3_candidates, gain_generator,
                      locate_ep2_records, locate_reality_boundary, predict_gamma_cr,
                      project_two_level, solve_modes, spectrum_with_indices, sweep,
                      triple_pairing, verify_selection_rule)

ZETA2 = np.diag([1.0, -1.0]).astype(complex)


def toy_solver(gap, w, zeta=ZETA2):
    """Two-level family [[gap/2, p*w], [-p*conj(w), -gap/2]]; boundary at p = gap/(2|w|)."""

    def solve(p):
        h = np.array([[gap / 2, p * w], [-p * np.conj(w), -gap / 2]], dtype=complex)
        return spectrum_with_indices(h, zeta)

    return solve


def gain_grid(n, j_tilde, stop, points):
    return SweepGrid(axis=AXIS_GAIN, fixed_value=j_tilde,
                     points=tuple(np.linspace(0.0, stop, points)), n=n)


def coupling_grid(n, gamma_tilde, points=401, start=-1.0, stop=1.0):
    return SweepGrid(axis=AXIS_COUPLING, fixed_value=gamma_tilde,
                     points=tuple(np.linspace(start, stop, points)), n=n)


class TestRealityBoundary:
    def test_two_level_critical_gain(self):
        res = locate_reality_boundary(toy_solver(0.2, 1.0), 0.05, 0.2, (0, 1),
                                      tol=1e-10)
        assert abs(res["location"] - 0.1) <= 1e-10
        assert res["width"] <= 1e-10
        assert set(res["real_side_z2"]) == {-1, 1}

    def test_same_index_pair_has_no_boundary(self):
        # Hermitian two-level family: indices (+1, +1) with the identity
        # metric, eigenvalues stay real for every parameter value
        def solve(p):
            h = np.array([[0.1, p], [p, -0.1]], dtype=complex)
            return spectrum_with_indices(h, np.eye(2, dtype=complex))

        with pytest.raises(NoEPInBracket):
            locate_reality_boundary(solve, 0.05, 0.4, (0, 1), tol=1e-10)

    def test_wrong_orientation_detected(self):
        with pytest.raises(NoEPInBracket):
            locate_reality_boundary(toy_solver(0.2, 1.0), 0.2, 0.3, (0, 1))


class TestSweep:
    def test_gain_free_line_is_real(self):
        tracks = sweep(coupling_grid(4, 0.0, points=81))
        assert len(tracks) == 16
        for tr in tracks:
            assert np.max(np.abs(tr.eigenvalues.imag)) < 1e-9
            assert np.all(tr.partner == -1)
            assert np.all(tr.z2 != 0)

    def test_conjugate_ribbons_appear(self):
        tracks = sweep(coupling_grid(4, 0.21, points=161))
        paired = sum(int(np.any(tr.partner >= 0)) for tr in tracks)
        assert paired >= 4
        for tr in tracks:
            for p in np.flatnonzero(tr.partner >= 0):
                q = tracks[tr.partner[p]]
                assert q.partner[p] == tr.level_id
                assert abs(tr.eigenvalues[p] - np.conj(q.eigenvalues[p])) < 1e-8

    def test_track_count_conserved_and_columns_partition(self):
        tracks = sweep(gain_grid(2, 1 / np.sqrt(2), 1.2, 61))
        cols = np.array([tr.columns for tr in tracks])
        for p in range(cols.shape[1]):
            assert sorted(cols[:, p]) == [0, 1, 2, 3]

    def test_two_level_square_root_shape_near_closure(self):
        # the merging pair follows eps ~ sqrt(g_cr - g) just below the boundary
        n, jt = 2, 1 / np.sqrt(2)
        tracks = sweep(gain_grid(n, jt, 0.4, 81))
        recs, _ = locate_ep2_records(tracks, tol=1e-12)
        (rec,) = recs
        g_cr = rec.location[AXIS_GAIN]
        a, b = rec.levels
        grid = gain_grid(n, jt, 0.4, 81)
        solve = grid.solver()

        def splitting(g):
            sp = solve(g)
            vals = sorted(lv.eigenvalue.real for lv in sp.levels)
            return vals[3] - vals[2] if {a, b} == {2, 3} else vals[1] - vals[0]

        d1, d2 = 1e-4, 5e-5
        s1, s2 = splitting(g_cr - d1), splitting(g_cr - d2)
        assert np.isclose(s1 / s2, np.sqrt(d1 / d2), rtol=0.02)

    def test_workers_bitwise_identical(self):
        grid = coupling_grid(4, 0.21, points=101, start=-0.8, stop=0.8)
        t1 = sweep(grid, workers=1)
        t2 = sweep(grid, workers=2)
        for a, b in zip(t1, t2):
            assert np.array_equal(a.eigenvalues, b.eigenvalues)
            assert np.array_equal(a.z2, b.z2)
            assert np.array_equal(a.indicator, b.indicator)
            assert np.array_equal(a.partner, b.partner)


class TestFindEp2:
    def test_matches_prediction_on_small_chain(self):
        n, jt = 2, 1 / np.sqrt(2)
        tracks = sweep(gain_grid(n, jt, 0.4, 41))
        recs, skipped = locate_ep2_records(tracks, tol=1e-10)
        assert not skipped
        (rec,) = recs
        assert rec.order == 2
        assert set(rec.indices) == {-1, 1}
        pred = predict_gamma_cr(NormalizedPoint(jt, 0.0).chain(n), rec.levels)
        assert abs(rec.location[AXIS_GAIN] - pred) / pred < 0.25  # pair not isolated

    def test_indicators_positive_then_vanish_at_the_boundary(self):
        # on the real side both indicators stay positive, and they sink to
        # zero as the bracket around the boundary tightens
        solve = toy_solver(0.2, 1.0)
        inds = []
        for tol in (1e-2, 1e-4, 1e-6, 1e-8):
            res = locate_reality_boundary(solve, 0.05, 0.2, (0, 1), tol=tol)
            assert all(i > 0 for i in res["real_side_indicator"])
            inds.append(max(res["real_side_indicator"]))
        assert all(a >= b for a, b in zip(inds, inds[1:]))
        assert inds[-1] < 1e-3

    def test_indicator_vanishes_on_chain_pair(self):
        n, jt = 2, 1 / np.sqrt(2)
        tracks = sweep(gain_grid(n, jt, 0.4, 41))
        (rec,), _ = locate_ep2_records(tracks, tol=1e-10)
        grid = gain_grid(n, jt, 0.4, 41)
        i_real = int(np.searchsorted(grid.points, rec.location[AXIS_GAIN])) - 1
        a, b = rec.levels
        near = [tracks[a].indicator[i_real], tracks[b].indicator[i_real]]
        far = [tracks[a].indicator[0], tracks[b].indicator[0]]
        assert min(far) > max(near) > 0

    def test_no_transition_raises(self):
        tracks = sweep(gain_grid(4, 0.3, 0.05, 11))
        grid = tracks[0].grid
        with pytest.raises(NoEPInBracket):
            find_ep2(tracks[0], tracks[2], (grid.points[0], grid.points[-1]))

    def test_bracket_must_hit_grid_points(self):
        tracks = sweep(gain_grid(4, 0.3, 0.05, 11))
        with pytest.raises(ValueError):
            find_ep2(tracks[0], tracks[1], (0.0123, 0.0456))


@pytest.fixture(scope="module")
def crossings():
    tracks = sweep(coupling_grid(4, 0.0, points=801))
    return classify_crossings(tracks)


class TestClassifyCrossings:
    def test_locations_match_free_fermion_crossings(self, crossings):
        # independent check: at each reported coupling the closed-form
        # spectrum must contain an (almost) exactly degenerate pair
        from pshchain import full_spectrum

        interior = [c for c in crossings
                    if c.kind in ("same", "opposite") and 0.05 < abs(c.location) < 0.99]
        assert len(interior) >= 6
        for c in interior:
            jt = c.location
            states = full_spectrum(4, jt, float(np.sqrt(1 - jt ** 2)))
            min_gap = np.min(np.diff([s.energy for s in states]))
            assert min_gap < 1e-7
            assert c.gap < 1e-8

    def test_mirror_symmetry(self, crossings):
        interior = sorted(c.location for c in crossings
                          if c.kind in ("same", "opposite") and 0.05 < abs(c.location) < 0.99)
        assert np.allclose(interior, sorted(-x for x in interior), atol=1e-6)

    def test_kinds_present(self, crossings):
        kinds = {c.kind for c in crossings}
        assert "same" in kinds and "opposite" in kinds

    def test_requires_gain_free_coupling_sweep(self):
        tracks = sweep(gain_grid(2, 0.5, 0.2, 11))
        with pytest.raises(ValueError):
            classify_crossings(tracks)


class TestProjectTwoLevel:
    def test_same_index_pair_hermitian(self):
        # project the gained Hamiltonian onto two same-index levels of the
        # gain-free chain; the block must come out Hermitian
        n, jt = 4, -0.95
        spec0 = NormalizedPoint(jt, 0.0).chain(n)
        h0 = build_hamiltonian(spec0)
        sp = spectrum_with_indices(h0, build_parity(n))
        v = gain_generator(spec0)
        same = [(a, b) for a in range(6) for b in range(a + 1, 6)
                if sp.levels[a].z2_index == sp.levels[b].z2_index]
        a, b = same[0]
        m = project_two_level(h0 + 0.01 * v, sp.levels[a], sp.levels[b])
        assert np.allclose(m, m.conj().T, atol=1e-10)

    def test_opposite_index_pair_pseudo_hermitian(self):
        n, jt = 4, -0.95
        spec0 = NormalizedPoint(jt, 0.0).chain(n)
        h0 = build_hamiltonian(spec0)
        sp = spectrum_with_indices(h0, build_parity(n))
        v = gain_generator(spec0)
        m = project_two_level(h0 + 0.01 * v, sp.levels[0], sp.levels[1])
        assert sp.levels[0].z2_index * sp.levels[1].z2_index == -1
        eta = np.diag([1.0, -1.0])
        assert np.allclose(eta @ m, m.conj().T @ eta, atol=1e-10)

    def test_diagonal_gap_matches_free_fermion_splitting(self):
        n, jt = 4, -0.95
        spec0 = NormalizedPoint(jt, 0.0).chain(n)
        h0 = build_hamiltonian(spec0)
        sp = spectrum_with_indices(h0, build_parity(n))
        m = project_two_level(h0, sp.levels[0], sp.levels[1])
        eps0 = solve_modes(n, jt, spec0.delta)[0].energy
        assert abs((m[1, 1] - m[0, 0]).real - eps0) < 1e-8
        assert abs(m[0, 1]) < 1e-10 and abs(m[1, 0]) < 1e-10

    def test_requires_defined_indices(self):
        from pshchain import IndexIllDefined
        sp = spectrum_with_indices(
            build_hamiltonian(NormalizedPoint(-0.9, 0.3).chain(4)), build_parity(4))
        complex_levels = [lv for lv in sp.levels if lv.z2_index is None]
        with pytest.raises(IndexIllDefined):
            project_two_level(np.eye(16), complex_levels[0], complex_levels[1])


class TestPredictGammaCr:
    def test_ferromagnetic_ground_pair_not_applicable(self):
        spec = NormalizedPoint(0.95, 0.0).chain(4)
        with pytest.raises(AccidentallyZeroElement):
            predict_gamma_cr(spec, (0, 1))

    def test_antiferromagnetic_ground_pair(self):
        spec = NormalizedPoint(-0.95, 0.0).chain(4)
        pred = predict_gamma_cr(spec, (0, 1))
        assert 0 < pred < 0.01

    def test_linear_in_gap(self):
        # at fixed couplings the prediction is the pair gap over 2|w|;
        # scaling the gap by hand scales the prediction exactly
        jt = -0.95
        delta = float(np.sqrt(1 - jt ** 2))
        spec = ChainSpec.staggered(4, delta, jt, 0.0)
        pred = predict_gamma_cr(spec, (0, 1))
        sp = spectrum_with_indices(build_hamiltonian(spec), build_parity(4))
        gap = (sp.levels[1].eigenvalue - sp.levels[0].eigenvalue).real
        v = gain_generator(spec)
        w = np.vdot(sp.levels[1].left, v @ sp.levels[0].right)
        assert np.isclose(pred, gap / (2 * abs(w)), rtol=1e-12)

    def test_requires_gain_free_start(self):
        with pytest.raises(ValueError):
            predict_gamma_cr(NormalizedPoint(-0.9, 0.1).chain(4), (0, 1))

    def test_excited_band_pair_strong_coupling(self):
        # ferromagnet, first excited band: almost-degenerate pairs have
        # opposite indices and merge at the predicted gain (within 5%)
        n, jt = 4, 0.95
        spec = NormalizedPoint(jt, 0.0).chain(n)
        sp = spectrum_with_indices(build_hamiltonian(spec), build_parity(n))
        assert sp.levels[2].z2_index * sp.levels[3].z2_index == -1
        gap = (sp.levels[3].eigenvalue - sp.levels[2].eigenvalue).real
        eps0 = solve_modes(n, jt, spec.delta)[0].energy
        assert np.isclose(gap, eps0, atol=1e-8)
        pred = predict_gamma_cr(spec, (2, 3))
        grid = gain_grid(n, jt, 4 * pred, 41)
        recs, _ = locate_ep2_records(sweep(grid), tol=1e-10)
        mine = [r for r in recs if set(r.levels) == {2, 3}]
        assert len(mine) == 1
        det = mine[0].location[AXIS_GAIN]
        assert abs(det - pred) / det < 0.05


class TestVerifySelectionRule:
    def test_empty(self):
        assert verify_selection_rule([]) == []

    def test_synthetic_violation(self):
        good = EPRecord(order=2, location={"j_tilde": 0.1, "gamma_tilde": 0.2},
                        levels=(0, 1), indices=(1, -1), residual=0.0, bracket_width=0.0)
        bad = EPRecord(order=2, location={"j_tilde": 0.1, "gamma_tilde": 0.2},
                       levels=(0, 1), indices=(1, 1), residual=0.0, bracket_width=0.0)
        bad3 = EPRecord(order=3, location={"j_tilde": 0.1, "gamma_tilde": 0.2},
                        levels=(0, 1, 2), indices=(1, 1, -1), residual=0.0,
                        bracket_width=0.0)
        report = verify_selection_rule([good, bad, bad3])
        assert len(report) == 2
        assert "equal indices" in report[0]["reason"]
        assert "staggered" in report[1]["reason"]

    def test_undefined_index_flagged(self):
        rec = EPRecord(order=2, location={"j_tilde": 0.0, "gamma_tilde": 0.0},
                       levels=(0, 1), indices=(0, 1), residual=0.0, bracket_width=0.0)
        assert verify_selection_rule([rec])[0]["reason"] == "undefined index"


@pytest.fixture(scope="module")
def record():
    return find_ep3(4, (-0.78, -0.75), (0.35, 0.45), (3, 4, 7))


class TestFindEp3:
    def test_staggered_signature(self, record):
        assert record.order == 3
        s = record.indices[0]
        assert record.indices == (s, -s, s)
        assert verify_selection_rule([record]) == []

    def test_location_inside_box(self, record):
        assert 0.35 <= record.location[AXIS_GAIN] <= 0.45
        assert -0.78 <= record.location[AXIS_COUPLING] <= -0.74

    def test_middle_level_switches_partners(self, record):
        js = record.location[AXIS_COUPLING]
        gs = record.location[AXIS_GAIN]
        left = triple_pairing(4, js - 2e-3, gs + 2e-3, (3, 4, 7))
        right = triple_pairing(4, js + 2e-3, gs + 2e-3, (3, 4, 7))
        assert {left.kind, right.kind} == {"low-mid", "mid-up"}

    def test_empty_box_raises(self):
        with pytest.raises(NoEP3InBox):
            find_ep3(4, (-0.2, -0.1), (0.35, 0.45), (3, 4, 7), samples=31)

    def test_candidates_scan_finds_the_triple(self):
        cands = find_ep3_candidates(4, (-0.9, -0.6), (0.35, 0.45), probes=11,
                                    g_steps=96)
        assert any(c["triple"] == (3, 4, 7) for c in cands)


def test_ep_records_roundtrip():
    rec = EPRecord(order=2, location={"j_tilde": -0.25, "gamma_tilde": 0.4},
                   levels=(3, 5), indices=(-1, 1), residual=1e-5, bracket_width=1e-9)
    assert EPRecord.from_dict(rec.to_dict()) == rec
