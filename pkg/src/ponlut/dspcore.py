"""Signal containers and the numeric building blocks shared by every stage."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import signal as sps

from . import kernels


class ParameterError(ValueError):
    """An argument is outside the domain the operation accepts."""


class BoundaryError(IndexError):
    """Interpolation support reaches outside the sampled record."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if not self.sample_rate > 0:
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class FirTaps:
    coefficients: np.ndarray
    center_index: int = 0

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coefficients, dtype=np.float64))
        if c.ndim != 1 or len(c) == 0:
            raise ParameterError("FIR taps must be a nonempty vector")
        if not np.all(np.isfinite(c)):
            raise ParameterError("FIR taps must be finite")
        if not 0 <= self.center_index < len(c):
            raise ParameterError(f"center_index {self.center_index} outside 0..{len(c) - 1}")
        object.__setattr__(self, "coefficients", c)

    def __len__(self) -> int:
        return len(self.coefficients)


def prbs15(seed: int, n: int) -> np.ndarray:
    """PRBS15 bits (x^15 + x^14 + 1, Fibonacci LFSR, MSB out first).

    The register is loaded with ``seed``; the first output bit is its MSB.
    """
    seed = int(seed)
    if seed & 0x7FFF == 0:
        raise ParameterError("degenerate LFSR seed")
    if n < 0:
        raise ParameterError("bit count must be nonnegative")
    return kernels.prbs15_bits(seed & 0x7FFF, int(n))


def _rrc_value(t: np.ndarray, rolloff: float) -> np.ndarray:
    """Unnormalized RRC impulse response at ``t`` (in symbol periods)."""
    b = rolloff
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    at_zero = np.isclose(t, 0.0, atol=1e-12)
    if b > 0:
        at_sing = np.isclose(np.abs(t), 1.0 / (4.0 * b), atol=1e-12)
    else:
        at_sing = np.zeros_like(at_zero)
    regular = ~(at_zero | at_sing)
    tr = t[regular]
    num = np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))
    den = np.pi * tr * (1 - (4 * b * tr) ** 2)
    out[regular] = num / den
    out[at_zero] = 1 - b + 4 * b / np.pi
    if b > 0:
        q = np.pi / (4 * b)
        out[at_sing] = b / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(q) + (1 - 2 / np.pi) * np.cos(q))
    return out


def rrc_taps(rolloff: float, sps: int, span: int = 64) -> FirTaps:
    """Unit-energy root-raised-cosine taps spanning ``span`` symbols."""
    if not 0.0 <= rolloff <= 1.0:
        raise ParameterError(f"rolloff must lie in [0, 1], got {rolloff}")
    if sps < 2:
        raise ParameterError("need at least 2 samples per symbol")
    if span < 8 or span % 2:
        raise ParameterError("span must be even and >= 8")
    n = span * sps + 1
    t = (np.arange(n) - n // 2) / sps
    h = _rrc_value(t, rolloff)
    h /= np.sqrt(np.sum(h * h))
    return FirTaps(h, n // 2)


def fir_same(w: Waveform, taps: FirTaps) -> Waveform:
    """Filter with zero padding; output[i] lines up with input[i] at the center tap."""
    if not isinstance(taps, FirTaps):
        taps = FirTaps(np.asarray(taps))
    x = w.samples
    h = taps.coefficients
    n = len(x)
    if n == 0:
        return Waveform(x.copy(), w.sample_rate)
    if len(h) * n > 4_000_000:
        full = sps.oaconvolve(x, h)
    else:
        full = np.convolve(x, h)
    c = taps.center_index
    return Waveform(full[c:c + n], w.sample_rate)


def lagrange_weights(mu: float) -> tuple[float, float, float, float]:
    """Cubic Lagrange weights for knots at -1, 0, 1, 2 evaluated at ``mu``."""
    return (
        -mu * (mu - 1.0) * (mu - 2.0) / 6.0,
        (mu + 1.0) * (mu - 1.0) * (mu - 2.0) / 2.0,
        -(mu + 1.0) * mu * (mu - 2.0) / 2.0,
        (mu + 1.0) * mu * (mu - 1.0) / 6.0,
    )


def farrow_interp(w: Waveform, base_index: int, mu: float) -> float:
    """Cubic Lagrange interpolation at fractional position ``base_index + mu``."""
    x = w.samples
    if base_index - 1 < 0 or base_index + 2 >= len(x):
        raise BoundaryError(
            f"cubic support {base_index - 1}..{base_index + 2} outside 0..{len(x) - 1}"
        )
    c = lagrange_weights(float(mu))
    return float(c[0] * x[base_index - 1] + c[1] * x[base_index]
                 + c[2] * x[base_index + 1] + c[3] * x[base_index + 2])


def fractional_delay(x: np.ndarray, delay: float) -> np.ndarray:
    """Delay a sampled record by ``delay`` samples (integer shift + cubic interpolation).

    Samples whose cubic support leaves the record are taken from a zero-padded copy.
    """
    x = np.asarray(x, dtype=np.float64)
    k = int(np.floor(delay))
    frac = delay - k
    # y[i] = x(i - delay) = x((i - k - 1) + (1 - frac)) when frac > 0
    if frac == 0.0:
        base, mu = -k, 0.0
    else:
        base, mu = -k - 1, 1.0 - frac
    pad = abs(base) + 3
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad)])
    idx = np.arange(len(x)) + base + pad
    c = lagrange_weights(mu)
    return c[0] * xp[idx - 1] + c[1] * xp[idx] + c[2] * xp[idx + 1] + c[3] * xp[idx + 2]


@lru_cache(maxsize=32)
def _resample_prototype(up: int, down: int, half_len: int = 16, atten_db: float = 80.0) -> np.ndarray:
    beta = sps.kaiser_beta(atten_db)
    rate = max(up, down)
    h = sps.firwin(2 * half_len * rate + 1, 1.0 / rate, window=("kaiser", beta))
    h.setflags(write=False)
    return h


def resample(w: Waveform, new_rate: float, max_denominator: int = 1000) -> Waveform:
    """Polyphase resampling with an 80 dB Kaiser-windowed sinc prototype.

    The rate ratio is approximated by a fraction with denominator at most
    ``max_denominator``. Sample 0 of the output lines up with sample 0 of the input.
    """
    if not new_rate > 0:
        raise ParameterError(f"new_rate must be positive, got {new_rate}")
    ratio = Fraction(new_rate / w.sample_rate).limit_denominator(max_denominator)
    up, down = ratio.numerator, ratio.denominator
    if up == down:
        return Waveform(w.samples.copy(), new_rate)
    h = _resample_prototype(up, down)
    y = sps.resample_poly(w.samples, up, down, window=h)
    return Waveform(y, new_rate)


def count_errors(tx: np.ndarray, rx: np.ndarray, skip: int = 0) -> tuple[int, int]:
    """Positional bit mismatches after dropping the first ``skip`` bits of each."""
    tx = np.asarray(tx)
    rx = np.asarray(rx)
    n = min(len(tx), len(rx)) - skip
    if skip < 0 or n <= 0:
        raise ParameterError("no bits compared")
    errors = int(np.count_nonzero(tx[skip:skip + n] != rx[skip:skip + n]))
    return errors, n
