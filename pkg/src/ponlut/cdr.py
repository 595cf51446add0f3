"""Feedback CDR: Gardner detector, PI loop filter, phase accumulator, cubic interpolator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .dspcore import ParameterError, Waveform, lagrange_weights


class InputTooShort(ValueError):
    pass


@dataclass(frozen=True)
class CdrConfig:
    sps: int = 2
    kp: float = 8e-3
    ki: float = 6e-5
    lock_window: int = 200
    lock_thresh_ui: float = 0.04
    max_symbols: int | None = None

    def __post_init__(self):
        if self.sps != 2:
            raise ParameterError("the Gardner loop runs at exactly 2 samples/symbol")
        if not self.kp > 0 or self.ki < 0:
            raise ParameterError("need kp > 0 and ki >= 0")
        if not 0 < self.lock_thresh_ui < 0.5:
            raise ParameterError("lock threshold must lie in (0, 0.5) UI")
        if self.lock_window < 1:
            raise ParameterError("lock window must be at least one symbol")


@dataclass
class CdrTrace:
    phase_ui: np.ndarray
    ted_error: np.ndarray
    slips: np.ndarray | None = None
    lock_index: int | None = None

    def __len__(self) -> int:
        return len(self.phase_ui)

    def unwrapped_phase(self) -> np.ndarray:
        """Phase in UI including whole-symbol carries (strobe n sits at 2*(start + n + this))."""
        slips = np.zeros(len(self.phase_ui)) if self.slips is None else self.slips
        return self.phase_ui + slips

    def symbol_offset(self, truth_phase_ui: float) -> np.ndarray:
        """Per strobe, how many symbols the strobe is ahead of its index."""
        return np.rint(self.unwrapped_phase() - truth_phase_ui).astype(np.int64)


def phase_error_ui(phase: np.ndarray, ref: float) -> np.ndarray:
    """Wrapped distance between phases, in [0, 0.5]."""
    d = np.mod(np.asarray(phase) - ref, 1.0)
    return np.minimum(d, 1.0 - d)


def cdr_run(w: Waveform, cfg: CdrConfig, initial_phase_ui: float,
            symbol_energy: float = 1.0, start_symbol: int = 1,
            n_symbols: int | None = None) -> tuple[np.ndarray, CdrTrace]:
    """Recover one strobe per symbol from a 2-samples/symbol waveform.

    The first strobe is placed at sample ``2 * (start_symbol + initial_phase_ui)``.
    Returns the strobe samples and the per-symbol trace.
    """
    x = np.ascontiguousarray(w.samples, dtype=np.float64)
    if len(x) < 4 * cfg.sps:
        raise InputTooShort(f"need at least {4 * cfg.sps} samples, got {len(x)}")
    if not 0.0 <= initial_phase_ui < 1.0:
        raise ParameterError("initial phase must lie in [0, 1)")
    if start_symbol < 1:
        raise ParameterError("start_symbol must leave one symbol of history")
    if n_symbols is None:
        n_symbols = len(x) // 2 - start_symbol
    if cfg.max_symbols is not None:
        n_symbols = min(n_symbols, cfg.max_symbols)
    strobes, phases, errors, slips, _ = kernels.gardner_loop(
        x, int(start_symbol), int(max(n_symbols, 0)), float(initial_phase_ui),
        cfg.kp, cfg.ki, 1.0 / symbol_energy)
    return strobes, CdrTrace(phases, errors, slips)


def detect_lock(trace: CdrTrace, truth_phase_ui: float | None, cfg: CdrConfig) -> int | None:
    """Symbols consumed when ``lock_window`` consecutive phase errors first fall below threshold.

    Without ground truth the reference is the circular mean of the last window.
    """
    phase = np.asarray(trace.phase_ui)
    if len(phase) == 0:
        raise ParameterError("empty CDR trace")
    if truth_phase_ui is None:
        tail = phase[-cfg.lock_window:]
        ref = float(np.angle(np.mean(np.exp(2j * np.pi * tail))) / (2 * np.pi)) % 1.0
    else:
        ref = truth_phase_ui
    good = phase_error_ui(phase, ref) < cfg.lock_thresh_ui
    # run length of consecutive good symbols ending at each index
    bad_idx = np.nonzero(~good)[0]
    idx = np.arange(len(good))
    last_bad = np.full(len(good), -1)
    if len(bad_idx):
        last_bad[bad_idx] = bad_idx
        last_bad = np.maximum.accumulate(last_bad)
    run = idx - last_bad
    hits = np.nonzero(run >= cfg.lock_window)[0]
    lock = int(hits[0]) + 1 if len(hits) else None
    trace.lock_index = lock
    return lock


def lock_time_symbols(w: Waveform, cfg: CdrConfig, initial_phase_ui: float,
                      truth_phase_ui: float, symbol_energy: float = 1.0,
                      start_symbol: int = 1) -> int:
    """Lock index against ground truth, or ``max_symbols`` (or trace length) if never."""
    _, trace = cdr_run(w, cfg, initial_phase_ui, symbol_energy, start_symbol)
    lock = detect_lock(trace, truth_phase_ui, cfg)
    if lock is None:
        return cfg.max_symbols if cfg.max_symbols is not None else len(trace)
    return lock


def _interp_at(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    base = np.floor(t).astype(np.int64)
    mu = t - base
    c = lagrange_weights(mu)
    return c[0] * x[base - 1] + c[1] * x[base] + c[2] * x[base + 1] + c[3] * x[base + 2]


def gardner_scurve(w: Waveform, phase_ui, start_symbol: int, n_symbols: int,
                   symbol_energy: float = 1.0) -> np.ndarray:
    """Open-loop mean Gardner output at fixed sampling phases (the detector S-curve)."""
    x = np.asarray(w.samples, dtype=np.float64)
    k = np.arange(start_symbol, start_symbol + n_symbols)
    out = []
    for ph in np.atleast_1d(phase_ui):
        t = 2.0 * (k + ph)
        y = _interp_at(x, t)
        yp = _interp_at(x, t - 2.0)
        mid = _interp_at(x, t - 1.0)
        out.append(np.mean(mid * (y - yp)) / symbol_energy)
    return np.asarray(out)


def ted_null(w: Waveform, start_symbol: int, n_symbols: int, symbol_energy: float = 1.0,
             grid: int = 64) -> float:
    """Stable equilibrium phase of the loop: the rising zero crossing of the S-curve."""
    # one extra step on each side so a null at the wrap point is bracketed
    phases = (np.arange(grid + 3) - 1) / grid
    s = gardner_scurve(w, phases, start_symbol, n_symbols, symbol_energy)
    rising = np.nonzero((s[:-1] < 0) & (s[1:] >= 0))[0]
    if len(rising) == 0:
        raise ParameterError("timing detector S-curve has no stable zero crossing")
    slopes = s[rising + 1] - s[rising]
    i = int(rising[np.argmax(slopes)])

    def f(ph):
        return float(gardner_scurve(w, [ph], start_symbol, n_symbols, symbol_energy)[0])

    return float(brentq(f, phases[i], phases[i + 1], xtol=1e-10)) % 1.0


def loop_equilibrium(w: Waveform, cfg: CdrConfig, start_symbol: int, n_symbols: int,
                     symbol_energy: float = 1.0) -> float:
    """Mean phase the closed loop settles to, unwrapped relative to the S-curve null.

    The loop updates its phase between strobes, so each error term sees the
    previous step. That shifts the settled phase away from the open-loop null
    by an amount proportional to the loop gain, which matters when the
    S-curve is shallow (small rolloff).
    """
    null = ted_null(w, start_symbol, n_symbols, symbol_energy)
    _, trace = cdr_run(w, cfg, null, symbol_energy, start_symbol, n_symbols)
    settled = trace.unwrapped_phase()[len(trace) // 2:]
    return float(np.mean(settled))


def settle_index(trace: CdrTrace, cfg: CdrConfig) -> int | None:
    """Causal lock indicator a receiver can evaluate on its own phase.

    Symbols consumed when the phase over the last ``lock_window`` symbols
    first spans less than ``2 * lock_thresh_ui`` peak to peak, i.e. when some
    phase exists that every symbol in the window is within threshold of.
    """
    u = trace.unwrapped_phase()
    w = cfg.lock_window
    if len(u) < w:
        return None
    win = np.lib.stride_tricks.sliding_window_view(u, w)
    ok = np.nonzero(np.ptp(win, axis=1) < 2 * cfg.lock_thresh_ui)[0]
    return int(ok[0]) + w if len(ok) else None
