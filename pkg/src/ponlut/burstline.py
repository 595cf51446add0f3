"""End-to-end burst simulation: transmit, link, OLT receive chain, error counting."""
from __future__ import annotations

import enum
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .cdr import CdrConfig, cdr_run, detect_lock, loop_equilibrium, settle_index
from .channel import ChannelConfig, OnuProfile, PhaseModelParams, apply_link, onu_delay_ui
from .dspcore import FirTaps, ParameterError, Waveform, fir_same, prbs15, resample, rrc_taps
from .equalizer import DEFAULT_SIZE, DEFAULT_STEP, EqConfig, lms_equalize
from .lutstore import LutStore, build_entry, lookup_phase, lookup_taps
from .txdsp import (ModFormat, SymbolSeq, TapSet, demap_indices, design_preemphasis, get_format,
                    map_symbols, pre_emphasize, shape)

MIN_PAYLOAD = 10_000
TRUTH_SYMBOLS = 4096


class LutMissing(LookupError):
    """A LUT mode was requested for an ONU the store has no entry for."""


class BaselineUnresolved(RuntimeError):
    pass


class RxMode(enum.Enum):
    NoLut = "NoLut"
    TapsLut = "TapsLut"
    FullLut = "FullLut"

    @classmethod
    def parse(cls, text: str | "RxMode") -> "RxMode":
        if isinstance(text, RxMode):
            return text
        for m in cls:
            if m.value.lower() == str(text).lower():
                return m
        raise ParameterError(f"unknown receiver mode {text!r}")


@dataclass(frozen=True)
class EqSettings:
    n_ffe: int
    n_dfe: int
    mu: float


def _default_eq(fmt: str) -> EqSettings:
    return EqSettings(*DEFAULT_SIZE[fmt], DEFAULT_STEP[fmt])


@dataclass(frozen=True)
class LinkChain:
    """Everything between the bit source and the decisions, except the ONU itself.

    The transmitter precoder is an MMSE FFE/DFE designed for the sampled
    pulse of the shaping filter and link; ``preemph_noise_var`` regularizes it
    so the feedback precoder stays inside ``clip``.
    """

    baud: float = 50e9
    tx_sps: int = 4
    rolloff: float = 0.1
    rrc_span: int = 64
    preemph: bool = True
    preemph_noise_var: float = 0.3
    preemph_nrz: tuple[int, int] = (5, 1)
    preemph_pam4: tuple[int, int] = (9, 3)
    clip: float = 1.2
    scope_rate: float | None = 80e9
    # receiver gain saturates at the level that normalizes this ROP (None: unlimited)
    agc_knee_dbm: float | None = -29.0
    ref_rop_dbm: float = -20.0
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    phase: PhaseModelParams = field(default_factory=PhaseModelParams)
    cdr: CdrConfig = field(default_factory=CdrConfig)
    eq_nrz: EqSettings = field(default_factory=lambda: _default_eq("NRZ"))
    eq_pam4: EqSettings = field(default_factory=lambda: _default_eq("PAM4"))
    eq_adapt_payload: bool = True

    def __post_init__(self):
        if self.phase.baud != self.baud:
            raise ParameterError("phase model baud differs from the link baud")
        if self.clip <= 0 or self.preemph_noise_var < 0:
            raise ParameterError("need clip > 0 and a nonnegative precoder noise variance")

    @property
    def tx_rate(self) -> float:
        return self.baud * self.tx_sps

    def eq_settings(self, fmt: ModFormat | str) -> EqSettings:
        return self.eq_nrz if get_format(fmt).name == "NRZ" else self.eq_pam4

    def eq_config(self, fmt: ModFormat | str, train_len: int, warm: bool) -> EqConfig:
        e = self.eq_settings(fmt)
        return EqConfig(e.n_ffe, e.n_dfe, e.mu, e.mu, train_len=train_len,
                        mode="warm_start" if warm else "cold_start",
                        adapt_payload=self.eq_adapt_payload)

    def preemph_size(self, fmt: ModFormat | str) -> tuple[int, int]:
        return self.preemph_nrz if get_format(fmt).name == "NRZ" else self.preemph_pam4


@dataclass(frozen=True)
class BurstPlan:
    onu: OnuProfile
    preamble_len: int
    payload_len: int = 100_000
    guard: int = 64
    seed: int = 1

    def __post_init__(self):
        if self.preamble_len < 0:
            raise ParameterError("preamble length must be nonnegative")
        if self.payload_len < MIN_PAYLOAD:
            raise ParameterError(f"payload must be at least {MIN_PAYLOAD} symbols")
        if self.guard < 2:
            raise ParameterError("guard must be at least 2 symbols")


@dataclass(frozen=True)
class BurstResult:
    ber: float
    errors: int
    bits: int
    lock_index: int | None
    eq_converged: bool
    mode: RxMode

    def __post_init__(self):
        if self.bits <= 0:
            raise ParameterError("a burst result needs compared bits")


def burst_bits(seed: int, n_bits: int) -> np.ndarray:
    """PRBS15 bits for a burst; the register start is derived from ``seed``."""
    return prbs15(1 + (int(seed) * 2654435761) % 32767, n_bits)


def sampled_pulse(chain: LinkChain, span: int = 28) -> FirTaps:
    """Symbol-spaced response of shaping filter plus link, sampled on its peak."""
    return _sampled_pulse(*_pulse_key(chain), span)


def _pulse_key(chain: LinkChain) -> tuple:
    c = chain.channel
    return (c.ideal, c.f3db, c.f10db, c.slow_weight, chain.tx_sps, chain.baud, chain.rolloff,
            chain.rrc_span)


@lru_cache(maxsize=32)
def _sampled_pulse(ideal, f3db, f10db, weight, sps, baud, rolloff, rrc_span, span) -> FirTaps:
    ch = ChannelConfig(f3db=f3db, f10db=f10db, slow_weight=weight, ideal=ideal)
    fs = baud * sps
    n = 2 * span * sps
    imp = np.zeros(n)
    imp[n // 2] = 1.0
    y = fir_same(Waveform(imp, fs), rrc_taps(rolloff, sps, rrc_span)).samples
    taps = ch.filter_taps(fs)
    if taps is not None:
        y = fir_same(Waveform(y, fs), taps).samples
    pk = int(np.argmax(y))
    h = y[pk % sps::sps]
    c = pk // sps
    lo = max(c - 3, 0)
    h = h[lo:c + span]
    return FirTaps(h / h[c - lo], c - lo)


def preemphasis_taps(fmt: ModFormat | str, chain: LinkChain) -> TapSet | None:
    if not chain.preemph:
        return None
    return _preemph(chain.preemph_noise_var, chain.preemph_size(fmt), _pulse_key(chain))


@lru_cache(maxsize=32)
def _preemph(noise_var: float, size: tuple[int, int], pulse_key: tuple) -> TapSet:
    return design_preemphasis(_sampled_pulse(*pulse_key, 28), noise_var, *size)


def transmit(s: SymbolSeq, chain: LinkChain, guard: int) -> Waveform:
    """Pre-emphasize, pad with ``guard`` zero symbols each side and shape."""
    pe = preemphasis_taps(s.format, chain)
    x = pre_emphasize(s, pe, chain.clip).symbols if pe is not None else s.symbols
    full = np.concatenate([np.zeros(guard), x, np.zeros(guard)])
    return shape(SymbolSeq(full, s.format, s.baud), chain.tx_sps, chain.rolloff, chain.rrc_span)


def _digitize(w: Waveform, chain: LinkChain) -> Waveform:
    if chain.scope_rate is not None:
        w = resample(w, chain.scope_rate)
    return resample(w, 2 * chain.baud)


def receive(w: Waveform, chain: LinkChain, fmt: ModFormat, guard: int, n_symbols: int) -> Waveform:
    """Digitize at the scope rate, resample to 2 samples/symbol and apply AGC.

    The AGC sets the mean power over the burst body (guards excluded) to the
    format's symbol energy, but its gain cannot exceed the value that does so
    for a noiseless burst at ``chain.agc_knee_dbm``. Below that power the
    level, and with it the timing-loop gain, falls with ROP.
    """
    w = _digitize(w, chain)
    x = w.samples
    body = x[2 * guard:2 * (guard + n_symbols)]
    rms = float(np.sqrt(np.mean(body * body))) if len(body) else 0.0
    if rms == 0.0:
        raise ParameterError("received burst has no signal")
    gain = np.sqrt(fmt.symbol_energy) / rms
    if chain.agc_knee_dbm is not None:
        gain = min(gain, agc_max_gain(fmt, chain))
    return Waveform(x * gain, w.sample_rate)


def agc_max_gain(fmt: ModFormat | str, chain: LinkChain) -> float:
    return _agc_max_gain(get_format(fmt).name, _noiseless(chain))


@lru_cache(maxsize=32)
def _agc_max_gain(fmt_name: str, chain: LinkChain) -> float:
    fmt = get_format(fmt_name)
    guard = 64
    s = map_symbols(burst_bits(7, TRUTH_SYMBOLS * fmt.bits_per_symbol), fmt, chain.baud)
    onu = OnuProfile("agc-ref", fmt, 0.0, chain.agc_knee_dbm)
    y = apply_link(transmit(s, chain, guard), onu, chain.ref_rop_dbm, chain.channel,
                   chain.phase, noise=False)
    body = _digitize(y, chain).samples[2 * guard:2 * (guard + TRUTH_SYMBOLS)]
    return float(np.sqrt(fmt.symbol_energy / np.mean(body * body)))


def timing_truth(onu: OnuProfile, chain: LinkChain) -> float:
    """Stable CDR phase for this ONU on the noiseless link, in UI.

    Unwrapped so that the strobe at ``2 * (guard + k + truth)`` samples symbol k.
    """
    return _timing_truth(onu.format.name, float(onu.rop_dbm), _noiseless(chain))


def _noiseless(chain: LinkChain) -> LinkChain:
    return replace(chain, channel=replace(chain.channel, rng_seed=0))


@lru_cache(maxsize=256)
def _timing_truth(fmt_name: str, rop_dbm: float, chain: LinkChain) -> float:
    fmt = get_format(fmt_name)
    guard = 64

    def null(onu):
        s = map_symbols(burst_bits(7, TRUTH_SYMBOLS * fmt.bits_per_symbol), fmt, chain.baud)
        y = apply_link(transmit(s, chain, guard), onu, chain.ref_rop_dbm, chain.channel,
                       chain.phase, noise=False)
        z = receive(y, chain, fmt, guard, TRUTH_SYMBOLS)
        return loop_equilibrium(z, chain.cdr, guard + 16, TRUTH_SYMBOLS - 32, fmt.symbol_energy)

    ref = OnuProfile("truth-ref", fmt, 0.0, chain.ref_rop_dbm)
    base = null(ref) if rop_dbm != chain.ref_rop_dbm else None
    onu = OnuProfile("truth", fmt, 0.0, rop_dbm)
    t = null(onu)
    if base is None:
        return t
    expected = base + onu_delay_ui(onu, chain.ref_rop_dbm, chain.phase)
    return t + float(np.rint(expected - t))


def _initial_state(plan: BurstPlan, mode: RxMode, store: LutStore | None, chain: LinkChain,
                   truth: float) -> tuple[float, TapSet | None]:
    onu = plan.onu
    taps = None
    if mode is not RxMode.NoLut:
        taps = None if store is None else lookup_taps(store, onu.onu_id, onu.format)
        if taps is None:
            raise LutMissing(f"no {onu.format.name} taps entry for ONU {onu.onu_id}")
    if mode is RxMode.FullLut:
        phase = None if store is None else lookup_phase(store, onu.onu_id)
        if phase is None:
            raise LutMissing(f"no phase entry for ONU {onu.onu_id}")
    else:
        # worst case: half a symbol away from the stable point
        phase = (truth + 0.5) % 1.0
    return phase, taps


def run_burst(plan: BurstPlan, mode: RxMode | str, store: LutStore | None = None,
              chain: LinkChain = LinkChain()) -> BurstResult:
    """Simulate one upstream burst and count payload bit errors."""
    mode = RxMode.parse(mode)
    onu = plan.onu
    fmt = onu.format
    eq_set = chain.eq_settings(fmt)
    if plan.guard < eq_set.n_ffe:
        raise ParameterError("guard must cover the equalizer span")
    truth = timing_truth(onu, chain)
    phase0, taps0 = _initial_state(plan, mode, store, chain, truth)

    n = plan.preamble_len + plan.payload_len
    bps = fmt.bits_per_symbol
    bits = burst_bits(plan.seed, n * bps)
    s = map_symbols(bits, fmt, chain.baud)
    y = apply_link(transmit(s, chain, plan.guard), onu, chain.ref_rop_dbm, chain.channel,
                   chain.phase, burst_index=plan.seed)
    z = receive(y, chain, fmt, plan.guard, n)

    # two spare strobes in the trailing guard so a positive timing offset still covers the last symbol
    strobes, trace = cdr_run(z, chain.cdr, phase0, fmt.symbol_energy, plan.guard, n + 2)
    lock = detect_lock(trace, truth % 1.0, chain.cdr)

    # per-strobe symbol index, robust to cycle slips
    idx = np.arange(len(strobes)) + trace.symbol_offset(truth)
    valid = (idx >= 0) & (idx < n)
    ref = np.zeros(len(strobes))
    ref[valid] = s.symbols[idx[valid]]
    # the equalizer starts adapting once the receiver sees its timing loop settle
    settled = settle_index(trace, chain.cdr)
    eq_cfg = chain.eq_config(fmt, plan.preamble_len, warm=taps0 is not None)
    _, eq_trace = lms_equalize(strobes, eq_cfg, taps0, ref, fmt,
                               adapt_from=len(strobes) if settled is None else settled)

    rx = demap_indices(eq_trace.level_index, fmt).reshape(-1, bps)
    tx = bits.reshape(-1, bps)
    payload = valid & (idx >= plan.preamble_len)
    errors = int(np.count_nonzero(rx[payload] != tx[idx[payload]]))
    n_bits = int(np.count_nonzero(payload)) * bps
    if n_bits == 0:
        raise ParameterError("no payload bits compared")
    return BurstResult(errors / n_bits, errors, n_bits, lock, eq_trace.converged, mode)


def build_lut(onus, chain: LinkChain = LinkChain(), train_len: int = 20_000, guard: int = 64,
              seed: int = 1, store: LutStore | None = None) -> LutStore:
    """Train phase and taps entries for each ONU from one known burst apiece."""
    store = LutStore() if store is None else store
    for counter, onu in enumerate(onus):
        fmt = onu.format
        s = map_symbols(burst_bits(seed + counter, train_len * fmt.bits_per_symbol), fmt, chain.baud)
        y = apply_link(transmit(s, chain, guard), onu, chain.ref_rop_dbm, chain.channel,
                       chain.phase, burst_index=-(seed + counter + 1))
        z = receive(y, chain, fmt, guard, train_len)
        phase_e, taps_e = build_entry(z, onu, chain.cdr, chain.eq_config(fmt, train_len, False),
                                      s, start_symbol=guard, measured_at=counter)
        store.put_phase(phase_e)
        store.put_taps(taps_e)
    return store


@dataclass(frozen=True)
class PreambleSearch:
    length: int
    baseline_ber: float
    target_ber: float
    ber_at_length: float
    evaluations: tuple[tuple[int, float], ...]


def pooled_ber(template: BurstPlan, preamble_len: int, mode: RxMode, store, chain,
               seeds) -> tuple[int, int]:
    errors = bits = 0
    for sd in seeds:
        r = run_burst(replace(template, preamble_len=preamble_len, seed=sd), mode, store, chain)
        errors += r.errors
        bits += r.bits
    return errors, bits


def min_preamble(template: BurstPlan, mode: RxMode | str, store: LutStore | None = None,
                 chain: LinkChain = LinkChain(), ratio: float = 1.25,
                 seeds=(1, 2, 3, 4, 5), baseline_len: int = 8000,
                 resolution: int = 100,
                 baseline_mode: RxMode | str = RxMode.NoLut) -> PreambleSearch:
    """Shortest preamble whose pooled BER is within ``ratio`` of a long-preamble baseline.

    The baseline is the conventional receiver (``baseline_mode``, no LUT by
    default) with a ``baseline_len`` preamble under the same conditions, so all
    modes are measured against one reference. BER is pooled over ``seeds`` at every length and assumed non-increasing in
    preamble length, which lets a bisection on a ``resolution`` grid find the
    smallest passing length.
    """
    mode = RxMode.parse(mode)
    seeds = tuple(seeds)
    if len(seeds) < 5:
        raise ParameterError("need at least 5 seeds per point")
    if ratio < 1:
        raise ParameterError("ratio must be at least 1")
    if baseline_len < resolution:
        raise ParameterError("baseline preamble shorter than the search resolution")
    e, b = pooled_ber(template, baseline_len, RxMode.parse(baseline_mode), store, chain, seeds)
    if e == 0:
        raise BaselineUnresolved(
            f"baseline unresolved; increase payload (0 errors in {b} bits)")
    baseline = e / b
    target = ratio * baseline
    evals = [(baseline_len, baseline)]

    def ber_at(length):
        e, b = pooled_ber(template, length, mode, store, chain, seeds)
        evals.append((length, e / b))
        return e / b

    ber0 = ber_at(0)
    if ber0 <= target:
        return PreambleSearch(0, baseline, target, ber0, tuple(evals))
    lo, hi, ber_hi = 0, baseline_len, baseline
    while hi - lo > resolution:
        mid = lo + max(resolution, ((hi - lo) // 2) // resolution * resolution)
        if mid >= hi:
            break
        ber = ber_at(mid)
        if ber <= target:
            hi, ber_hi = mid, ber
        else:
            lo = mid
    return PreambleSearch(hi, baseline, target, ber_hi, tuple(evals))


@dataclass(frozen=True)
class SweepGrid:
    formats: tuple[str, ...] = ("NRZ",)
    distances_km: tuple[float, ...] = (20.0,)
    rops_dbm: tuple[float, ...] = (-28.0,)
    preambles: tuple[int, ...] = (0,)
    modes: tuple[RxMode, ...] = (RxMode.FullLut,)
    seeds: tuple[int, ...] = (1,)
    payload_len: int = 100_000
    guard: int = 64

    def __post_init__(self):
        object.__setattr__(self, "formats", tuple(get_format(f).name for f in self.formats))
        object.__setattr__(self, "modes", tuple(RxMode.parse(m) for m in self.modes))
        for name in ("formats", "distances_km", "rops_dbm", "preambles", "modes", "seeds"):
            if len(getattr(self, name)) == 0:
                raise ParameterError(f"sweep axis {name} is empty")

    def onus(self) -> list[OnuProfile]:
        """One ONU per (format, distance, ROP) cell, in canonical order."""
        return [grid_onu(f, d, r) for f, d, r in
                itertools.product(sorted(set(self.formats)), sorted(set(self.distances_km)),
                                  sorted(set(self.rops_dbm)))]

    def needs_lut(self) -> bool:
        return any(m is not RxMode.NoLut for m in self.modes)


def grid_onu(fmt: str, distance_km: float, rop_dbm: float) -> OnuProfile:
    fmt = get_format(fmt)
    return OnuProfile(f"{fmt.name}@{float(distance_km)!r}km@{float(rop_dbm)!r}dBm", fmt,
                      float(distance_km), float(rop_dbm))


@dataclass(frozen=True)
class SweepRow:
    format: str
    mode: RxMode
    distance_km: float
    rop_dbm: float
    preamble_len: int
    seed: int
    result: BurstResult

    def sort_key(self):
        return (self.format, self.mode.value, self.distance_km, self.rop_dbm,
                self.preamble_len, self.seed)


_MODE_ORDER = {m: i for i, m in enumerate(RxMode)}


def _run_cell(args) -> SweepRow:
    fmt, mode, dist, rop, pre, seed, grid, store, chain = args
    plan = BurstPlan(grid_onu(fmt, dist, rop), pre, grid.payload_len, grid.guard, seed)
    return SweepRow(fmt, mode, dist, rop, pre, seed, run_burst(plan, mode, store, chain))


def sweep(grid: SweepGrid, chain: LinkChain = LinkChain(), store: LutStore | None = None,
          jobs: int = 1) -> list[SweepRow]:
    """Run every cell of the grid; rows come back sorted on the condition columns."""
    cells = [(f, m, float(d), float(r), int(p), int(s), grid, store, chain)
             for f, m, d, r, p, s in itertools.product(
                 sorted(set(grid.formats)), sorted(set(grid.modes), key=_MODE_ORDER.get),
                 sorted(set(grid.distances_km)), sorted(set(grid.rops_dbm)),
                 sorted(set(grid.preambles)), sorted(set(grid.seeds)))]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    return sorted(rows, key=SweepRow.sort_key)
