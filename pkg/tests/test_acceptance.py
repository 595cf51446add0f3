"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line; the lines are also collected in the
"acceptance criteria" section of the pytest terminal summary. The Monte-Carlo
criteria (5 to 8) are marked slow but are part of the default run.
"""
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import norm

from ponlut.burstline import (BurstPlan, LinkChain, RxMode, SweepGrid, build_lut, grid_onu,
                              min_preamble, run_burst, sweep)
from ponlut.cdr import CdrConfig, CdrTrace, detect_lock
from ponlut.channel import (PhaseModelParams, discrete_response_db, fit_composite_filter,
                            phase_offset_ui)
from ponlut.cli import main
from ponlut.dspcore import FirTaps, Waveform, farrow_interp, prbs15, rrc_taps
from ponlut.equalizer import EqConfig, lms_equalize, wiener_taps
from ponlut.lutstore import LutStore, PhaseLutEntry, TapsLutEntry, dumps, loads
from ponlut.txdsp import NRZ, PAM4, TapSet

CHAIN = LinkChain()
# operating points with payload BER around 1e-4 to 1e-3 (near the FEC threshold)
PARITY_POINTS = {"NRZ": (-28.5, -28.0), "PAM4": (-23.5, -23.0)}


def two_proportion_p(e1, n1, e2, n2) -> float:
    pooled = (e1 + e2) / (n1 + n2)
    if pooled in (0.0, 1.0):
        return 1.0
    z = (e1 / n1 - e2 / n2) / np.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    return float(2 * norm.sf(abs(z)))


def sliding_lock_oracle(err, window, thresh):
    for n in range(window, len(err) + 1):
        if all(e < thresh for e in err[n - window:n]):
            return n
    return None


def test_phase_model_exactness(verdict):
    p = PhaseModelParams(alpha=0.33, v=2e8, baud=50e9)
    got = phase_offset_ui(-20.0, -23.3, p)
    zero = phase_offset_ui(-20.0, -20.0, p)
    ok = abs(got - 2.5e6) <= 1e-9 * 2.5e6 and zero == 0.0
    verdict(1, "ROP-to-phase model exact", ok, f"3.3 dB -> {got!r} UI, 0 dB -> {zero!r}")


def test_lock_criterion_fidelity(verdict):
    cfg = CdrConfig()
    n = np.arange(3000)
    traces = {"constant-0": np.zeros(3000), "constant-0.05": np.full(3000, 0.05),
              "exp-decay": 0.3 * np.exp(-n / 400.0)}
    rng = np.random.default_rng(2)
    for i in range(5):
        traces[f"noisy-{i}"] = np.abs(rng.normal(0, 0.03, 3000)) * np.linspace(1.5, 0.7, 3000)
    mismatched = []
    for name, err in traces.items():
        truth = 0.7
        trace = CdrTrace(np.mod(truth + err, 1.0), np.zeros(len(err)))
        got = detect_lock(trace, truth, cfg)
        want = sliding_lock_oracle(list(err), cfg.lock_window, cfg.lock_thresh_ui)
        if got != want:
            mismatched.append(f"{name}: {got} != {want}")
    verdict(2, "lock detector equals sliding-window oracle", not mismatched,
            "; ".join(mismatched) or f"{len(traces)} traces")


def test_lms_matches_wiener(verdict):
    # FFE and DFE regressors on neighbouring symbols are nearly collinear, so the
    # slowest LMS mode needs a moderate step and a long run to settle
    n_ffe, n_dfe, mu, n_train, snr_db = 15, 3, 5e-3, 100_000, 20.0
    worst = 0.0
    for i in range(50):
        rng = np.random.default_rng(1000 + i)
        h = np.r_[1.0, rng.uniform(-0.4, 0.4, 2)]
        s = rng.choice(NRZ.level_array, n_train)
        nv = NRZ.symbol_energy * np.sum(h * h) / 10 ** (snr_db / 10)
        x = np.convolve(s, h)[:n_train] + np.sqrt(nv) * rng.standard_normal(n_train)
        cfg = EqConfig(n_ffe, n_dfe, mu, mu, train_len=n_train)
        _, tr = lms_equalize(x, cfg, None, s, NRZ)
        w = wiener_taps(FirTaps(h, 0), nv / NRZ.symbol_energy, n_ffe, n_dfe, cfg.center)
        dev = max(np.max(np.abs(tr.final_taps.ffe - w.ffe)), np.max(np.abs(tr.final_taps.dfe - w.dfe)))
        worst = max(worst, dev)
    verdict(3, "LMS taps within 0.05 of Wiener on 50 channels", worst < 0.05,
            f"worst inf-norm {worst:.4f}")


def test_channel_fit(verdict):
    taps = fit_composite_filter(3.8e9, 18.7e9, 200e9)
    db = discrete_response_db(taps, 200e9, [3.8e9, 18.7e9])
    ok = abs(db[0] + 3) <= 0.1 and abs(db[1] + 10) <= 0.1
    verdict(4, "composite filter corners", ok, f"{db[0]:.3f} dB, {db[1]:.3f} dB")


@pytest.mark.slow
def test_zero_preamble_parity(verdict):
    payload, bursts = 100_000, {"NRZ": 10, "PAM4": 5}  # 1e6 payload bits per cell
    cells = []
    for fmt, rops in PARITY_POINTS.items():
        onus = [grid_onu(fmt, 20, r) for r in rops]
        store = build_lut(onus, CHAIN)
        for onu in onus:
            tally = {}
            for mode, pre in ((RxMode.FullLut, 0), (RxMode.NoLut, 5000)):
                e = b = 0
                for seed in range(1, bursts[fmt] + 1):
                    r = run_burst(BurstPlan(onu, pre, payload, seed=seed), mode, store, CHAIN)
                    e, b = e + r.errors, b + r.bits
                tally[mode] = (e, b)
            (e1, b1), (e2, b2) = tally[RxMode.FullLut], tally[RxMode.NoLut]
            p = two_proportion_p(e1, b1, e2, b2)
            cells.append((fmt, onu.rop_dbm, e1 / b1, e2 / b2, b1, b2, p))
    ok = all(p > 0.05 and min(b1, b2) >= 1_000_000 for *_, b1, b2, p in cells)
    detail = "; ".join(f"{f} {r} dBm: {a:.2e} vs {c:.2e} p={p:.2f}" for f, r, a, c, _, _, p in cells)
    verdict(5, "FullLut at preamble 0 matches NoLut at preamble 5000", ok, detail)


@pytest.mark.slow
def test_preamble_ordering(verdict):
    # matched margin: both operating points sit near BER 3e-4 with a long preamble
    points = {"NRZ": PARITY_POINTS["NRZ"][0], "PAM4": PARITY_POINTS["PAM4"][0]}
    lengths = {}
    for fmt, rop in points.items():
        onu = grid_onu(fmt, 20, rop)
        store = build_lut([onu], CHAIN)
        for mode in RxMode:
            res = min_preamble(BurstPlan(onu, 0, 100_000), mode, store, CHAIN, resolution=50)
            lengths[fmt, mode] = res.length
    no, taps, full = RxMode.NoLut, RxMode.TapsLut, RxMode.FullLut
    # PAM4 relies on its receiver equalizer, so stored taps must shorten the preamble
    # there; NRZ arrives nearly equalized by the transmitter and may tie
    ok = (lengths["PAM4", no] > lengths["PAM4", taps] >= lengths["PAM4", full] == 0
          and lengths["NRZ", no] >= lengths["NRZ", taps] >= lengths["NRZ", full] == 0
          and lengths["PAM4", no] > lengths["NRZ", no])
    detail = ", ".join(f"{f} {m.value}={v}" for (f, m), v in lengths.items())
    verdict(6, "minimum preamble ordering", ok, detail)


@pytest.mark.slow
def test_lock_time_trends(verdict):
    # below the AGC knee the loop gain, and so lock time, follows ROP; above it the
    # level is normalized and lock time is flat
    rops, seeds, payload = (-32.0, -31.0, -30.0, -29.0), range(1, 31), 20_000
    window = CHAIN.cdr.lock_window
    onus = [grid_onu("NRZ", 20, r) for r in rops]
    store = build_lut(onus, CHAIN, train_len=30_000)
    cold, warm, at_window = [], [], 0
    for onu in onus:
        locks, full = [], []
        for seed in seeds:
            plan = BurstPlan(onu, 0, payload, seed=seed)
            r = run_burst(plan, RxMode.NoLut, store, CHAIN)
            locks.append(np.inf if r.lock_index is None else r.lock_index)
            f = run_burst(plan, RxMode.FullLut, store, CHAIN).lock_index
            full.append(np.inf if f is None else f)
        cold.append(float(np.median(locks)))
        warm.append(float(np.median(full)))
        at_window += sum(x == window for x in full)
    ok = all(a >= b for a, b in zip(cold, cold[1:])) and all(m == window for m in warm)
    share = at_window / (len(rops) * len(seeds))
    verdict(7, "median lock time falls with ROP; FullLut median lock at the window", ok,
            f"NoLut medians {cold}, FullLut medians {warm}, "
            f"{share:.0%} of FullLut bursts at {window}, {len(seeds)} seeds per point")


@pytest.mark.slow
def test_ber_monotone_in_rop(verdict):
    rops = {"NRZ": (-30.0, -29.0, -28.0, -27.0), "PAM4": (-25.0, -24.0, -23.0, -22.0)}
    distances = (5.0, 20.0)
    failures, summary = [], []
    for fmt, rop_axis in rops.items():
        grid = SweepGrid((fmt,), distances, rop_axis, (0,), (RxMode.FullLut,), tuple(range(1, 6)),
                         100_000)
        store = build_lut(grid.onus(), CHAIN)
        rows = sweep(grid, CHAIN, store, jobs=4)
        for d in distances:
            med = [float(np.median([r.result.ber for r in rows
                                    if r.distance_km == d and r.rop_dbm == rop]))
                   for rop in rop_axis]
            summary.append(f"{fmt} {d:g} km: " + " ".join(f"{m:.1e}" for m in med))
            if any(a < b for a, b in zip(med, med[1:])):
                failures.append(f"{fmt} {d:g} km")
    # distance is not an input to the link: equal ids and ROP give identical bursts
    near, far = grid_onu("NRZ", 20, -28), replace(grid_onu("NRZ", 20, -28), distance_km=60.0)
    same = run_burst(BurstPlan(near, 0, 20_000), RxMode.NoLut, None, CHAIN) == \
        run_burst(BurstPlan(far, 0, 20_000), RxMode.NoLut, None, CHAIN)
    verdict(8, "median BER non-increasing in ROP, distance-free", not failures and same,
            "; ".join(summary))


def test_determinism(verdict, tmp_path):
    cfg = tmp_path / "det.ini"
    cfg.write_text("[grid]\nformats = NRZ, PAM4\nrops_dbm = -22, -21\nmodes = NoLut, TapsLut, "
                   "FullLut\npreambles = 0, 500\nseeds = 1, 2\npayload_len = 10000\n"
                   "[lut]\ntrain_len = 10000\n"
                   "[min_preamble]\nrop_dbm = -28.5\npayload_len = 20000\nresolution = 500\n")
    outputs = []
    for run in range(2):
        lut, csv, mp = (tmp_path / f"{name}{run}" for name in ("lut", "csv", "mp"))
        codes = [main(["build-lut", "--config", str(cfg), "--seed", "7", "--out", str(lut)]),
                 main(["sweep", "--kind", "ber-vs-preamble", "--config", str(cfg), "--seed", "7",
                       "--lut", str(lut), "--out", str(csv), "--jobs", str(1 + 2 * run)]),
                 main(["min-preamble", "--config", str(cfg), "--seed", "7", "--mode", "TapsLut",
                       "--out", str(mp)])]
        outputs.append((codes, lut.read_bytes(), csv.read_bytes(), mp.read_bytes()))
    ok = outputs[0] == outputs[1] and outputs[0][0] == [0, 0, 0]
    verdict(9, "repeated CLI runs are byte-identical", ok,
            f"exit codes {outputs[0][0]}, {len(outputs[0][2])} CSV bytes")


def test_unit_properties(verdict):
    failures = []
    bits = prbs15(1, 2 * 32767)
    if not (np.array_equal(bits[:32767], bits[32767:]) and bits[:32767].sum() == 16384):
        failures.append("prbs15")
    h = rrc_taps(0.1, 4).coefficients
    rc = np.convolve(h, h)
    c = len(rc) // 2
    peaks = rc[c % 4::4]
    isi = np.max(np.abs(np.delete(peaks, c // 4))) / peaks[c // 4]
    if isi >= 1e-3:
        failures.append(f"rrc isi {isi:.1e}")
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = np.polynomial.Polynomial(rng.uniform(-3, 3, 4))
        mu, base = rng.uniform(0, 1), int(rng.integers(1, 6))
        if abs(farrow_interp(Waveform(p(np.arange(10.0)), 1.0), base, mu) - p(base + mu)) > 1e-9:
            failures.append("farrow")
            break
    if any(sum(x != y for x, y in zip(a, b)) != 1 for a, b in zip(PAM4.labels, PAM4.labels[1:])):
        failures.append("gray")
    store = LutStore()
    for i in range(20):
        store.put_phase(PhaseLutEntry(f"onu{i}", float(rng.uniform()), i))
        store.put_taps(TapsLutEntry(f"onu{i}", "PAM4" if i % 2 else "NRZ",
                                    TapSet(rng.normal(size=7), 3, rng.normal(size=2)), i))
    if loads(dumps(store)) != store:
        failures.append("lut round trip")
    verdict(10, "unit properties (PRBS, RRC, Farrow, Gray, LUT file)", not failures,
            ", ".join(failures) or f"rrc isi {isi:.1e}")
