from dataclasses import replace

import numpy as np
import pytest

from ponlut.burstline import (BaselineUnresolved, BurstPlan, LinkChain, LutMissing, RxMode,
                              SweepGrid, build_lut, burst_bits, grid_onu, min_preamble,
                              run_burst, sampled_pulse, sweep, timing_truth)
from ponlut.channel import OnuProfile
from ponlut.dspcore import ParameterError
from ponlut.lutstore import lookup_phase

HD_FEC = 3.8e-3
CHAIN = LinkChain()


@pytest.fixture(scope="module")
def onu():
    return grid_onu("NRZ", 20, -27)


@pytest.fixture(scope="module")
def store(onu):
    return build_lut([onu], CHAIN)


class TestRunBurst:
    def test_repeatable(self, onu, store):
        plan = BurstPlan(onu, 300, 10_000, seed=4)
        assert run_burst(plan, "NoLut", store) == run_burst(plan, "NoLut", store)

    def test_seed_changes_realization(self, onu):
        a = run_burst(BurstPlan(onu, 0, 10_000, seed=1), RxMode.NoLut)
        b = run_burst(BurstPlan(onu, 0, 10_000, seed=2), RxMode.NoLut)
        assert a != b

    def test_full_lut_locks_immediately(self, onu, store):
        r = run_burst(BurstPlan(onu, 0, 10_000), RxMode.FullLut, store)
        assert r.lock_index == CHAIN.cdr.lock_window
        assert r.ber < 1e-3
        assert r.bits == 10_000

    def test_cold_receiver_without_preamble_fails(self, onu):
        r = run_burst(BurstPlan(onu, 0, 10_000), RxMode.NoLut)
        assert r.ber > 2 * HD_FEC
        assert r.lock_index > CHAIN.cdr.lock_window

    def test_cold_receiver_with_long_preamble_recovers(self, onu):
        r = run_burst(BurstPlan(onu, 5000, 10_000), RxMode.NoLut)
        assert r.ber < 1e-3

    def test_pam4_counts_two_bits_per_symbol(self):
        onu = grid_onu("PAM4", 20, -21)
        r = run_burst(BurstPlan(onu, 0, 10_000), RxMode.FullLut, build_lut([onu]))
        assert r.bits == 20_000 and r.ber < 1e-3

    @pytest.mark.parametrize("mode", [RxMode.TapsLut, RxMode.FullLut])
    def test_missing_entry(self, onu, mode):
        with pytest.raises(LutMissing):
            run_burst(BurstPlan(onu, 0, 10_000), mode)
        with pytest.raises(LutMissing):
            run_burst(BurstPlan(replace(onu, onu_id="stranger"), 0, 10_000), mode,
                      build_lut([onu]))

    def test_distance_has_no_effect_for_fixed_id(self, onu, store):
        far = replace(onu, distance_km=60.0)
        for mode in RxMode:
            plan = BurstPlan(onu, 100, 10_000)
            assert run_burst(plan, mode, store) == run_burst(replace(plan, onu=far), mode, store)

    def test_guard_must_cover_equalizer(self, onu):
        with pytest.raises(ParameterError):
            run_burst(BurstPlan(onu, 0, 10_000, guard=4), RxMode.NoLut)


class TestPlanAndModes:
    @pytest.mark.parametrize("kw", [dict(preamble_len=-1), dict(payload_len=9999), dict(guard=1)])
    def test_plan_validation(self, kw):
        args = dict(onu=OnuProfile("a"), preamble_len=0)
        args.update(kw)
        with pytest.raises(ParameterError):
            BurstPlan(**args)

    @pytest.mark.parametrize("text", ["nolut", "NoLut", "NOLUT"])
    def test_mode_parse(self, text):
        assert RxMode.parse(text) is RxMode.NoLut

    def test_bad_mode(self):
        with pytest.raises(ParameterError):
            RxMode.parse("SomeLut")

    def test_bits_depend_on_seed_only(self):
        np.testing.assert_array_equal(burst_bits(3, 500), burst_bits(3, 500))
        assert not np.array_equal(burst_bits(3, 500), burst_bits(4, 500))

    def test_sampled_pulse_peaks_at_cursor(self):
        p = sampled_pulse(CHAIN)
        assert p.coefficients[p.center_index] == 1.0
        assert np.all(np.abs(np.delete(p.coefficients, p.center_index)) < 1.0)


class TestLutBuild:
    def test_phase_entry_matches_timing_truth(self):
        onus = [grid_onu(f, 20, r) for f, r in [("NRZ", -27), ("NRZ", -22), ("PAM4", -21)]]
        store = build_lut(onus, CHAIN)
        for o in onus:
            d = (lookup_phase(store, o.onu_id) - timing_truth(o, CHAIN)) % 1.0
            assert min(d, 1 - d) < 0.02

    def test_entries_per_onu(self):
        onus = [grid_onu("NRZ", 20, -27), grid_onu("PAM4", 20, -21)]
        store = build_lut(onus, CHAIN)
        assert len(store.phase_entries) == 2 and len(store.taps_entries) == 2


class TestSweep:
    def test_single_cell_equals_direct_run(self, store, onu):
        grid = SweepGrid(("NRZ",), (20.0,), (-27.0,), (0,), (RxMode.FullLut,), (3,), 10_000)
        (row,) = sweep(grid, CHAIN, store)
        assert row.result == run_burst(BurstPlan(onu, 0, 10_000, seed=3), RxMode.FullLut, store)

    def test_axis_order_does_not_matter(self):
        a = SweepGrid(("NRZ",), (0.0, 20.0), (-27.0, -26.0), (0, 500), ("NoLut",), (1, 2), 10_000)
        b = SweepGrid(("NRZ",), (20.0, 0.0), (-26.0, -27.0), (500, 0), ("NoLut",), (2, 1), 10_000)
        assert sweep(a, CHAIN) == sweep(b, CHAIN)

    def test_parallel_matches_serial(self):
        g = SweepGrid(("NRZ",), (20.0,), (-27.0,), (0, 500), ("NoLut",), (1, 2), 10_000)
        assert sweep(g, CHAIN, jobs=2) == sweep(g, CHAIN)

    def test_empty_axis(self):
        with pytest.raises(ParameterError):
            SweepGrid(seeds=())


class TestMinPreamble:
    def test_unresolved_baseline(self):
        onu = grid_onu("NRZ", 20, -20)
        with pytest.raises(BaselineUnresolved, match="increase payload"):
            min_preamble(BurstPlan(onu, 0, 10_000), RxMode.FullLut, build_lut([onu]))

    def test_full_lut_needs_no_preamble(self):
        onu = grid_onu("NRZ", 20, -28.5)
        res = min_preamble(BurstPlan(onu, 0, 20_000), RxMode.FullLut, build_lut([onu]))
        assert res.length == 0
        assert res.ber_at_length <= res.target_ber

    def test_needs_five_seeds(self, onu):
        with pytest.raises(ParameterError):
            min_preamble(BurstPlan(onu, 0, 10_000), RxMode.NoLut, seeds=(1, 2))
