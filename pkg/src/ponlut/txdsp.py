"""ONU transmitter: symbol mapping, pre-emphasis and pulse shaping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dspcore import FirTaps, ParameterError, Waveform, fir_same, rrc_taps


class FramingError(ValueError):
    pass


@dataclass(frozen=True)
class ModFormat:
    name: str
    bits_per_symbol: int
    levels: tuple[float, ...]
    # bit groups in level order (Gray coded for PAM4)
    labels: tuple[tuple[int, ...], ...]

    @property
    def level_array(self) -> np.ndarray:
        return np.asarray(self.levels)

    @property
    def spacing(self) -> float:
        return self.levels[1] - self.levels[0]

    @property
    def symbol_energy(self) -> float:
        return float(np.mean(np.square(self.levels)))


NRZ = ModFormat("NRZ", 1, (-1.0, 1.0), ((0,), (1,)))
PAM4 = ModFormat("PAM4", 2, (-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0), ((0, 0), (0, 1), (1, 1), (1, 0)))
FORMATS = {"NRZ": NRZ, "PAM4": PAM4}


def get_format(name: str | ModFormat) -> ModFormat:
    if isinstance(name, ModFormat):
        return name
    try:
        return FORMATS[name.upper()]
    except KeyError:
        raise ParameterError(f"unknown modulation format {name!r}") from None


@dataclass(frozen=True)
class SymbolSeq:
    symbols: np.ndarray
    format: ModFormat
    baud: float

    def __post_init__(self):
        if not self.baud > 0:
            raise ParameterError("baud must be positive")
        object.__setattr__(self, "symbols", np.asarray(self.symbols, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass
class TapSet:
    ffe: np.ndarray
    ffe_center: int
    dfe: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.ffe = np.atleast_1d(np.asarray(self.ffe, dtype=np.float64)).copy()
        self.dfe = np.atleast_1d(np.asarray(self.dfe, dtype=np.float64)).copy()
        if len(self.ffe) == 0:
            raise ParameterError("FFE must have at least one tap")
        if not 0 <= self.ffe_center < len(self.ffe):
            raise ParameterError("ffe_center outside the FFE")
        if not (np.all(np.isfinite(self.ffe)) and np.all(np.isfinite(self.dfe))):
            raise ParameterError("taps must be finite")

    @classmethod
    def identity(cls, n_ffe: int, n_dfe: int = 0, center: int | None = None) -> "TapSet":
        center = n_ffe // 2 if center is None else center
        ffe = np.zeros(n_ffe)
        ffe[center] = 1.0
        return cls(ffe, center, np.zeros(n_dfe))

    def copy(self) -> "TapSet":
        return TapSet(self.ffe.copy(), self.ffe_center, self.dfe.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, TapSet):
            return NotImplemented
        return (self.ffe_center == other.ffe_center
                and np.array_equal(self.ffe, other.ffe)
                and np.array_equal(self.dfe, other.dfe))


def map_symbols(bits: np.ndarray, fmt: ModFormat | str, baud: float = 50e9) -> SymbolSeq:
    fmt = get_format(fmt)
    bits = np.asarray(bits, dtype=np.int64)
    if len(bits) % fmt.bits_per_symbol:
        raise FramingError(f"{len(bits)} bits do not fill whole {fmt.name} symbols")
    if fmt.bits_per_symbol == 1:
        return SymbolSeq(fmt.level_array[bits], fmt, baud)
    groups = bits.reshape(-1, 2)
    code = groups[:, 0] * 2 + groups[:, 1]
    # label (b0, b1) -> level index
    lookup = np.empty(4, dtype=np.int64)
    for idx, (b0, b1) in enumerate(fmt.labels):
        lookup[b0 * 2 + b1] = idx
    return SymbolSeq(fmt.level_array[lookup[code]], fmt, baud)


def level_indices(values: np.ndarray, fmt: ModFormat) -> np.ndarray:
    """Nearest-level index per value; exact midpoints go to the lower level."""
    lv = fmt.level_array
    thresholds = 0.5 * (lv[1:] + lv[:-1])
    return np.searchsorted(thresholds, np.asarray(values, dtype=np.float64), side="left")


def demap_indices(indices: np.ndarray, fmt: ModFormat) -> np.ndarray:
    labels = np.asarray(fmt.labels, dtype=np.uint8)
    return labels[np.asarray(indices, dtype=np.int64)].reshape(-1)


def demap_symbols(values: np.ndarray, fmt: ModFormat | str) -> np.ndarray:
    fmt = get_format(fmt)
    return demap_indices(level_indices(values, fmt), fmt)


def design_preemphasis(channel: FirTaps, noise_var: float, n_ffe: int, n_dfe: int,
                       ffe_center: int | None = None) -> TapSet:
    """MMSE FFE/DFE for a symbol-spaced channel, for use as a transmit precoder."""
    from .equalizer import wiener_taps

    return wiener_taps(channel, noise_var, n_ffe, n_dfe, ffe_center)


def pre_emphasize(s: SymbolSeq, taps: TapSet, clip: float) -> SymbolSeq:
    """Transmit FFE followed by clipped linear feedback precoding."""
    if not clip > 0:
        raise ParameterError("clip must be positive")
    x = s.symbols
    u = fir_same(Waveform(x, s.baud), FirTaps(taps.ffe, taps.ffe_center)).samples
    out = kernels.feedback_precode(np.ascontiguousarray(u), np.ascontiguousarray(taps.dfe), float(clip))
    return SymbolSeq(out, s.format, s.baud)


def shape(s: SymbolSeq, sps: int = 4, rolloff: float = 0.1, span: int = 64) -> Waveform:
    """Zero-stuff to ``sps`` samples/symbol and RRC filter.

    Symbol k lands on sample ``k * sps``.
    """
    if int(sps) != sps or sps < 2:
        raise ParameterError("sps must be an integer >= 2")
    sps = int(sps)
    up = np.zeros(len(s) * sps)
    up[::sps] = s.symbols
    return fir_same(Waveform(up, s.baud * sps), rrc_taps(rolloff, sps, span))
