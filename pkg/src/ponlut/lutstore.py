"""Per-ONU phase and equalizer-tap lookup tables: training, retrieval and persistence."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .cdr import CdrConfig, cdr_run, detect_lock
from .channel import OnuProfile
from .dspcore import ParameterError, Waveform
from .equalizer import EqConfig, lms_equalize
from .txdsp import SymbolSeq, TapSet, get_format

FILE_VERSION = "v1"
MAGIC = "PONLUT"


class TrainingError(RuntimeError):
    pass


class LutFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class LutVersionError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseLutEntry:
    onu_id: str
    phase_ui: float
    measured_at: int = 0

    def __post_init__(self):
        _check_id(self.onu_id)
        if not 0.0 <= self.phase_ui < 1.0:
            raise ParameterError(f"phase {self.phase_ui} outside [0, 1)")


@dataclass(frozen=True)
class TapsLutEntry:
    onu_id: str
    format: str
    taps: TapSet
    measured_at: int = 0

    def __post_init__(self):
        _check_id(self.onu_id)
        object.__setattr__(self, "format", get_format(self.format).name)


def _check_id(onu_id: str) -> None:
    if not isinstance(onu_id, str) or not onu_id or any(c.isspace() for c in onu_id):
        raise ParameterError(f"bad ONU id {onu_id!r}")


@dataclass
class LutStore:
    """Phase entries keyed by ONU, tap entries keyed by (ONU, format).

    Inserting under an existing key replaces the old entry.
    """

    phase_entries: dict[str, PhaseLutEntry] = field(default_factory=dict)
    taps_entries: dict[tuple[str, str], TapsLutEntry] = field(default_factory=dict)
    version: str = FILE_VERSION

    def put_phase(self, entry: PhaseLutEntry) -> None:
        self.phase_entries[entry.onu_id] = entry

    def put_taps(self, entry: TapsLutEntry) -> None:
        self.taps_entries[(entry.onu_id, entry.format)] = entry

    def __len__(self) -> int:
        return len(self.phase_entries) + len(self.taps_entries)


def lookup_phase(store: LutStore, onu_id: str) -> float | None:
    entry = store.phase_entries.get(onu_id)
    return None if entry is None else entry.phase_ui


def lookup_taps(store: LutStore, onu_id: str, fmt) -> TapSet | None:
    entry = store.taps_entries.get((onu_id, get_format(fmt).name))
    return None if entry is None else entry.taps.copy()


def _circular_mean(phase: np.ndarray) -> float:
    return float(np.angle(np.mean(np.exp(2j * np.pi * phase))) / (2 * np.pi)) % 1.0


def _align_reference(strobes: np.ndarray, symbols: np.ndarray, base: np.ndarray,
                     search: int = 4) -> int:
    """Integer shift d maximizing the correlation of strobes with symbols[base + d]."""
    best, best_d = -np.inf, 0
    for d in range(-search, search + 1):
        idx = base + d
        ok = (idx >= 0) & (idx < len(symbols))
        if ok.sum() < 16:
            continue
        c = abs(float(np.mean(strobes[ok] * symbols[idx[ok]])))
        if c > best:
            best, best_d = c, d
    return best_d


def build_entry(waveform: Waveform, onu: OnuProfile, cdr_cfg: CdrConfig, eq_cfg: EqConfig,
                reference: SymbolSeq, start_symbol: int = 1, measured_at: int = 0,
                initial_phase_ui: float = 0.0) -> tuple[PhaseLutEntry, TapsLutEntry]:
    """Train the LUT entries for one ONU from a known training burst.

    ``waveform`` is the 2-samples/symbol receiver signal whose first training
    symbol sits at symbol slot ``start_symbol``. The CDR starts cold and its lock
    is judged against its own settled phase (no ground truth). The symbol
    alignment of the equalizer reference is found by correlating against the
    known sequence, then the equalizer trains on the locked part of the burst.
    """
    fmt = onu.format
    ref = np.asarray(reference.symbols, dtype=np.float64)
    n = len(ref)
    strobes, trace = cdr_run(waveform, cdr_cfg, initial_phase_ui, fmt.symbol_energy,
                             start_symbol, n)
    lock = detect_lock(trace, None, cdr_cfg)
    if lock is None or len(trace) - lock < cdr_cfg.lock_window:
        raise TrainingError(f"phase training failed for {onu.onu_id}: CDR did not lock")
    settled = trace.phase_ui[max(lock, len(trace) // 2):]
    phase = _circular_mean(settled)

    base = np.arange(len(strobes)) + np.rint(trace.unwrapped_phase() - phase).astype(np.int64)
    tail = slice(lock, None)
    d = _align_reference(strobes[tail], ref, base[tail])
    idx = base[tail] + d
    ok = (idx >= 0) & (idx < n)
    x = strobes[tail][ok]
    r = ref[idx[ok]]
    cfg = EqConfig(eq_cfg.n_ffe, eq_cfg.n_dfe, eq_cfg.mu_ffe, eq_cfg.mu_dfe,
                   train_len=len(x), mode="cold_start", adapt_payload=True,
                   ffe_center=eq_cfg.ffe_center, tail=eq_cfg.tail)
    _, eq_trace = lms_equalize(x, cfg, None, r, fmt)
    if not eq_trace.converged:
        raise TrainingError(f"taps training failed for {onu.onu_id}: equalizer did not converge")
    return (PhaseLutEntry(onu.onu_id, phase, measured_at),
            TapsLutEntry(onu.onu_id, fmt.name, eq_trace.final_taps, measured_at))


def _num(x: float) -> str:
    return repr(float(x))


def _vec(v: np.ndarray) -> str:
    return ",".join(_num(x) for x in v)


def dumps(store: LutStore) -> str:
    lines = [f"{MAGIC} {FILE_VERSION}"]
    for onu_id in sorted(store.phase_entries):
        e = store.phase_entries[onu_id]
        lines.append(f"phase {e.onu_id} {_num(e.phase_ui)} at={e.measured_at}")
    for key in sorted(store.taps_entries):
        e = store.taps_entries[key]
        lines.append(f"taps {e.onu_id} {e.format} ffe={_vec(e.taps.ffe)} dfe={_vec(e.taps.dfe)}"
                     f" center={e.taps.ffe_center} at={e.measured_at}")
    return "\n".join(lines) + "\n"


def save(store: LutStore, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(store))


def _parse_vec(text: str, lineno: int) -> np.ndarray:
    if text == "":
        return np.zeros(0)
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise LutFormatError(lineno, f"bad number list {text!r}") from None


def _options(tokens: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep or key in out:
            raise LutFormatError(lineno, f"expected unique key=value, got {tok!r}")
        out[key] = val
    return out


def _int(text: str, lineno: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise LutFormatError(lineno, f"bad {what} {text!r}") from None


def loads(text: str) -> LutStore:
    lines = text.splitlines()
    if not lines:
        raise LutFormatError(1, "empty file, expected header")
    head = lines[0].split()
    if len(head) != 2 or head[0] != MAGIC:
        raise LutFormatError(1, f"expected '{MAGIC} {FILE_VERSION}' header")
    if head[1] != FILE_VERSION:
        raise LutVersionError(f"unsupported LUT version {head[1]!r} (expected {FILE_VERSION})")
    store = LutStore()
    for lineno, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        try:
            if tok[0] == "phase" and len(tok) >= 3:
                opts = _options(tok[3:], lineno)
                try:
                    phase = float(tok[2])
                except ValueError:
                    raise LutFormatError(lineno, f"bad phase {tok[2]!r}") from None
                store.put_phase(PhaseLutEntry(tok[1], phase, _int(opts.pop("at", "0"), lineno, "at")))
            elif tok[0] == "taps" and len(tok) >= 5:
                opts = _options(tok[3:], lineno)
                if "ffe" not in opts or "dfe" not in opts:
                    raise LutFormatError(lineno, "taps line needs ffe= and dfe=")
                ffe = _parse_vec(opts.pop("ffe"), lineno)
                dfe = _parse_vec(opts.pop("dfe"), lineno)
                center = _int(opts.pop("center", str(len(ffe) // 2)), lineno, "center")
                at = _int(opts.pop("at", "0"), lineno, "at")
                store.put_taps(TapsLutEntry(tok[1], tok[2], TapSet(ffe, center, dfe), at))
            else:
                raise LutFormatError(lineno, f"unrecognized record {line.strip()!r}")
            if opts:
                raise LutFormatError(lineno, f"unknown fields {sorted(opts)}")
        except ParameterError as exc:
            raise LutFormatError(lineno, str(exc)) from None
    return store


def load(path: str | os.PathLike) -> LutStore:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
