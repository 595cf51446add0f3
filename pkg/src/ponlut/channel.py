"""Upstream link model: per-ONU delay, received power, bandwidth limit and noise."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import butter, sosfilt

from .dspcore import FirTaps, ParameterError, Waveform, fir_same, fractional_delay
from .txdsp import ModFormat, NRZ


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhaseModelParams:
    alpha: float = 0.33  # dB/km at 1310 nm
    v: float = 2e8  # m/s
    baud: float = 50e9

    def __post_init__(self):
        if not (self.alpha > 0 and self.v > 0 and self.baud > 0):
            raise ParameterError("alpha, v and baud must be positive")


def phase_offset_ui(rop0: float, ropi: float, p: PhaseModelParams = PhaseModelParams()) -> float:
    """Delay of ONU i relative to ONU 0 in unit intervals.

    The power difference is read as a fiber length (|dROP| / alpha km), and the
    propagation time over that length is expressed in symbol periods.
    """
    km = abs(rop0 - ropi) / p.alpha
    return km * 1000.0 / p.v * p.baud


@dataclass(frozen=True)
class OnuProfile:
    onu_id: str
    format: ModFormat = NRZ
    distance_km: float = 0.0
    rop_dbm: float = -20.0

    def __post_init__(self):
        if self.distance_km < 0:
            raise ParameterError("distance must be nonnegative")
        if any(c.isspace() for c in str(self.onu_id)) or not str(self.onu_id):
            raise ParameterError("onu_id must be a nonempty token without whitespace")


@dataclass(frozen=True)
class NoiseModel:
    """Receiver noise referred to the electrical signal after the link filter.

    ``sigma_thermal`` is the per-sample standard deviation of the signal-independent
    term; with the preamplifier on, ``beat_coeff`` adds variance proportional to
    optical power. The noise is Gaussian, band-limited to ``bandwidth_hz`` by a
    4th-order Butterworth (None keeps it white); variances refer to the filtered noise.
    """

    sigma_thermal: float = 0.055
    beat_coeff: float = 1e-4
    rop_ref_dbm: float = -29.0
    preamp_gain_db: float = 12.0
    bandwidth_hz: float | None = 20e9

    def __post_init__(self):
        if min(self.sigma_thermal, self.beat_coeff, self.preamp_gain_db) < 0:
            raise ParameterError("noise parameters must be nonnegative")
        if self.bandwidth_hz is not None and not self.bandwidth_hz > 0:
            raise ParameterError("noise bandwidth must be positive")


@dataclass(frozen=True)
class CompositeFilter:
    """Weighted parallel sum of two one-pole low-pass sections, unit DC gain."""

    weight: float
    f_slow: float
    f_fast: float

    def response(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        return (self.weight / (1 + 1j * f / self.f_slow)
                + (1 - self.weight) / (1 + 1j * f / self.f_fast))

    def response_db(self, f) -> np.ndarray:
        return 20 * np.log10(np.abs(self.response(f)))

    def taps(self, sample_rate: float, n_fft: int = 8192, precursor: int = 64,
             tail_tol: float = 1e-10) -> FirTaps:
        """Frequency-sampled FIR realization, causal part plus a short pre-ringing."""
        f = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
        h = np.fft.irfft(self.response(f), n_fft)
        # keep until the slow pole has decayed to tail_tol
        n_causal = int(np.ceil(-np.log(tail_tol) * sample_rate / (2 * np.pi * min(self.f_slow, self.f_fast))))
        h = np.roll(h, precursor)[:precursor + n_causal]
        return FirTaps(h, precursor)


def fit_composite_params(f3db: float, f10db: float, weight: float = 0.6) -> CompositeFilter:
    """Solve for the two pole frequencies that place -3 dB and -10 dB where measured."""
    if not 0 < f3db < f10db:
        raise ParameterError("need 0 < f3db < f10db")

    def residual(logf):
        filt = CompositeFilter(weight, *np.exp(logf))
        return filt.response_db([f3db, f10db]) - np.array([-3.0, -10.0])

    start = np.log([0.75 * f3db, 0.7 * f10db])
    sol = least_squares(residual, start, xtol=1e-14, ftol=1e-14, gtol=1e-14)
    f_slow, f_fast = sorted(np.exp(sol.x))
    best = float(np.max(np.abs(sol.fun)))
    if best > 1e-6:
        raise FitError(f"two-pole fit did not converge (best residual {best:.3g} dB)")
    return CompositeFilter(weight, float(f_slow), float(f_fast))


@lru_cache(maxsize=16)
def fit_composite_filter(f3db: float, f10db: float, sample_rate: float,
                         weight: float = 0.6) -> FirTaps:
    """Discrete filter meeting the -3 dB / -10 dB bandwidths within 0.1 dB."""
    if not f10db < sample_rate / 2:
        raise ParameterError("f10db must lie below Nyquist")
    filt = fit_composite_params(f3db, f10db, weight)
    taps = filt.taps(sample_rate)
    got = discrete_response_db(taps, sample_rate, [0.0, f3db, f10db])
    err = np.abs(got - np.array([0.0, -3.0, -10.0]))
    if err[1] > 0.1 or err[2] > 0.1:
        raise FitError(f"discrete filter misses targets by {err.max():.3g} dB")
    return taps


def discrete_response_db(taps: FirTaps, sample_rate: float, f) -> np.ndarray:
    """Magnitude response in dB of FIR ``taps`` at frequencies ``f`` (Hz)."""
    f = np.atleast_1d(np.asarray(f, dtype=np.float64))
    n = np.arange(len(taps)) - taps.center_index
    H = np.exp(-2j * np.pi * np.outer(f / sample_rate, n)) @ taps.coefficients
    return 20 * np.log10(np.abs(H))


@dataclass(frozen=True)
class ChannelConfig:
    f3db: float = 3.8e9
    f10db: float = 18.7e9
    slow_weight: float = 0.6
    preamp: bool = True
    noise: NoiseModel = field(default_factory=NoiseModel)
    rng_seed: int = 0
    ideal: bool = False  # all-pass instead of the fitted response

    def __post_init__(self):
        if not self.ideal and not self.f3db < self.f10db:
            raise ParameterError("f3db must be below f10db")

    def filter_taps(self, sample_rate: float) -> FirTaps | None:
        if self.ideal:
            return None
        return fit_composite_filter(self.f3db, self.f10db, sample_rate, self.slow_weight)

    def amplitude(self, rop_dbm: float) -> float:
        """Electrical gain applied to the transmitted waveform.

        Direct detection: amplitude follows optical power, so 1 dB of ROP is 2 dB
        of electrical power. Unity at ``rop_ref_dbm`` with the preamplifier on.
        """
        gain = 0.0 if self.preamp else -self.noise.preamp_gain_db
        return 10 ** ((rop_dbm + gain - self.noise.rop_ref_dbm) / 10)

    def noise_sigma(self, rop_dbm: float) -> float:
        var = self.noise.sigma_thermal ** 2
        if self.preamp:
            var += self.noise.beat_coeff * 10 ** ((rop_dbm - self.noise.rop_ref_dbm) / 10)
        return float(np.sqrt(var))


@lru_cache(maxsize=16)
def _noise_shaper(bandwidth_hz: float, sample_rate: float):
    sos = butter(4, bandwidth_hz, fs=sample_rate, output="sos")
    imp = np.zeros(1 << 14)
    imp[0] = 1.0
    gain = float(np.sqrt(np.sum(sosfilt(sos, imp) ** 2)))
    return sos, gain


def receiver_noise(n: int, sigma: float, sample_rate: float, bandwidth_hz: float | None,
                   rng: np.random.Generator) -> np.ndarray:
    w = rng.standard_normal(n)
    if bandwidth_hz is None or bandwidth_hz >= sample_rate / 2:
        return sigma * w
    sos, gain = _noise_shaper(float(bandwidth_hz), float(sample_rate))
    return (sigma / gain) * sosfilt(sos, w)


def link_rng(rng_seed: int, onu_id: str, burst_index: int) -> np.random.Generator:
    key = zlib.crc32(str(onu_id).encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(rng_seed) & 0xFFFFFFFF, key,
                                                         int(burst_index) & 0xFFFFFFFF]))


def onu_delay_ui(onu: OnuProfile, ref_onu_rop: float, p: PhaseModelParams) -> float:
    """Fractional part of the ONU's delay; whole symbols are absorbed by burst scheduling."""
    return phase_offset_ui(ref_onu_rop, onu.rop_dbm, p) % 1.0


def apply_link(w: Waveform, onu: OnuProfile, ref_onu_rop: float, cfg: ChannelConfig,
               p: PhaseModelParams = PhaseModelParams(), burst_index: int = 0,
               noise: bool = True) -> Waveform:
    """Delay, scale, filter and add receiver noise to a transmitted waveform."""
    sps = w.sample_rate / p.baud
    if sps < 2:
        raise ParameterError("link input needs at least 2 samples per symbol")
    x = fractional_delay(w.samples, onu_delay_ui(onu, ref_onu_rop, p) * sps)
    # fixed gain relative to the transmitter's own level keeps the link linear
    x = x * cfg.amplitude(onu.rop_dbm)
    taps = cfg.filter_taps(w.sample_rate)
    if taps is not None:
        x = fir_same(Waveform(x, w.sample_rate), taps).samples
    sigma = cfg.noise_sigma(onu.rop_dbm) if noise else 0.0
    if sigma > 0:
        rng = link_rng(cfg.rng_seed, onu.onu_id, burst_index)
        x = x + receiver_noise(len(x), sigma, w.sample_rate, cfg.noise.bandwidth_hz, rng)
    return Waveform(x, w.sample_rate)


def launch_rop(distance_km: float, launch_dbm: float, fixed_loss_db: float,
               alpha: float = 0.33) -> float:
    """Received power for an ONU under the common-launch-power assumption."""
    return launch_dbm - fixed_loss_db - alpha * distance_km
