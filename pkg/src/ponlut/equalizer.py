"""Symbol-spaced FFE/DFE: LMS adaptation, warm start and the MMSE oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dspcore import FirTaps, ParameterError
from .txdsp import ModFormat, SymbolSeq, TapSet, demap_indices, get_format

# converged when the tail MSE is below this fraction of the squared level spacing
CONVERGENCE_FRACTION = {"NRZ": 0.1, "PAM4": 0.05}
DEFAULT_STEP = {"NRZ": 2e-3, "PAM4": 1e-3}
DEFAULT_SIZE = {"NRZ": (15, 3), "PAM4": (31, 3)}


class EqualizerDesignError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class EqConfig:
    n_ffe: int
    n_dfe: int
    mu_ffe: float
    mu_dfe: float
    train_len: int = 0
    mode: str = "cold_start"
    adapt_payload: bool = True
    ffe_center: int | None = None
    tail: int = 200

    def __post_init__(self):
        if self.n_ffe < 1 or self.n_dfe < 0:
            raise ParameterError("need n_ffe >= 1 and n_dfe >= 0")
        if not (self.mu_ffe > 0 and self.mu_dfe > 0):
            raise ParameterError("step sizes must be positive")
        if self.mode not in ("cold_start", "warm_start"):
            raise ParameterError(f"unknown equalizer mode {self.mode!r}")

    @property
    def center(self) -> int:
        return self.n_ffe // 2 if self.ffe_center is None else self.ffe_center

    @classmethod
    def for_format(cls, fmt: ModFormat | str, **overrides) -> "EqConfig":
        fmt = get_format(fmt)
        n_ffe, n_dfe = DEFAULT_SIZE[fmt.name]
        mu = DEFAULT_STEP[fmt.name]
        kw = dict(n_ffe=n_ffe, n_dfe=n_dfe, mu_ffe=mu, mu_dfe=mu)
        kw.update(overrides)
        return cls(**kw)

    def cold_taps(self) -> TapSet:
        return TapSet.identity(self.n_ffe, self.n_dfe, self.center)


@dataclass
class EqTrace:
    mse_per_symbol: np.ndarray
    final_taps: TapSet
    converged: bool
    soft: np.ndarray | None = None
    level_index: np.ndarray | None = None


def lms_equalize(samples: np.ndarray, cfg: EqConfig, init: TapSet | None,
                 reference: SymbolSeq | np.ndarray | None, fmt: ModFormat | str,
                 adapt_from: int = 0):
    """Run the FFE/DFE over symbol-rate samples.

    Training uses ``reference`` for the first ``cfg.train_len`` symbols, then
    decisions. Taps stay fixed before symbol ``adapt_from`` (e.g. until the
    timing loop has settled). Returns ``(decisions, trace)`` where decisions is
    a SymbolSeq of decided levels.
    """
    fmt = get_format(fmt)
    taps = cfg.cold_taps() if init is None else init.copy()
    if len(taps.ffe) != cfg.n_ffe or len(taps.dfe) != cfg.n_dfe:
        raise ParameterError(
            f"init taps {len(taps.ffe)}FFE/{len(taps.dfe)}DFE do not match "
            f"config {cfg.n_ffe}FFE/{cfg.n_dfe}DFE")
    if taps.ffe_center != cfg.center:
        raise ParameterError("init FFE center differs from config")
    x = np.ascontiguousarray(samples, dtype=np.float64)
    ref = np.zeros(0) if reference is None else getattr(reference, "symbols", reference)
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    train = min(cfg.train_len, len(x))
    if len(ref) < train:
        raise ParameterError("reference shorter than the training length")
    if len(ref) == 0:
        ref = np.zeros(1)
    soft, idx, sqerr = kernels.lms_ffe_dfe(
        x, taps.ffe, cfg.center, taps.dfe, ref, train, np.asarray(fmt.levels),
        cfg.mu_ffe, cfg.mu_dfe, cfg.adapt_payload, int(max(adapt_from, 0)))
    tail = sqerr[-cfg.tail:] if len(sqerr) else sqerr
    limit = CONVERGENCE_FRACTION[fmt.name] * fmt.spacing ** 2
    converged = bool(len(tail) >= min(cfg.tail, len(sqerr)) and len(tail) and tail.mean() < limit)
    decisions = SymbolSeq(fmt.level_array[idx], fmt, 1.0)
    return decisions, EqTrace(sqerr, taps, converged, soft, idx)


def decide(value: float, fmt: ModFormat | str) -> tuple[float, np.ndarray]:
    """Nearest level (ties to the lower level) and its bit label."""
    fmt = get_format(fmt)
    lv = fmt.levels
    k = 0
    while k < len(lv) - 1 and value > 0.5 * (lv[k] + lv[k + 1]):
        k += 1
    return lv[k], demap_indices(np.array([k]), fmt)


def _regression_matrix(h: np.ndarray, hc: int, n_ffe: int, fc: int):
    """Map symbol offsets to FFE inputs.

    FFE input k is x[n + fc - k] and x[n] = sum_i h[i] s[n - i + hc], so input
    k collects s[n + d] with d = fc - k - i + hc. Returns (A, d_min) with
    A[k, d - d_min] the coefficient of s[n + d].
    """
    L = len(h)
    d_max = fc + hc
    d_min = fc - (n_ffe - 1) - (L - 1) + hc
    A = np.zeros((n_ffe, d_max - d_min + 1))
    for k in range(n_ffe):
        for i in range(L):
            d = fc - k - i + hc
            A[k, d - d_min] += h[i]
    return A, d_min


def wiener_taps(channel: FirTaps, noise_var: float, n_ffe: int, n_dfe: int,
                ffe_center: int | None = None) -> TapSet:
    """Finite-length MMSE FFE/DFE by direct solution of the joint normal equations.

    Symbols are taken as white with unit power; ``noise_var`` is the additive
    noise variance on the same scale. Past decisions fed to the DFE are assumed
    correct. Rank-deficient but consistent systems (e.g. a noiseless channel
    whose post-cursor is covered by both an FFE tap and a DFE tap) resolve to
    the minimum-norm solution.
    """
    if not isinstance(channel, FirTaps):
        channel = FirTaps(np.asarray(channel))
    if n_ffe < 1 or n_dfe < 0:
        raise ParameterError("need n_ffe >= 1 and n_dfe >= 0")
    if noise_var < 0:
        raise ParameterError("noise variance must be nonnegative")
    fc = n_ffe // 2 if ffe_center is None else ffe_center
    A, d_min = _regression_matrix(channel.coefficients, channel.center_index, n_ffe, fc)
    n_sym = A.shape[1]
    # DFE regressor j is -s[n - 1 - j]
    B = np.zeros((n_dfe, n_sym))
    for j in range(n_dfe):
        d = -1 - j
        if d >= d_min:
            B[j, d - d_min] = -1.0
        else:
            n_sym += 1
            B = np.pad(B, ((0, 0), (0, 1)))
            A = np.pad(A, ((0, 0), (0, 1)))
            B[j, -1] = -1.0
    M = np.vstack([A, B])
    R = M @ M.T
    R[:n_ffe, :n_ffe] += noise_var * np.eye(n_ffe)
    target = np.zeros(M.shape[1])
    target[0 - d_min] = 1.0
    p = M @ target
    theta, *_ = np.linalg.lstsq(R, p, rcond=None)
    resid = np.linalg.norm(R @ theta - p)
    if not np.all(np.isfinite(theta)) or resid > 1e-8 * max(1.0, np.linalg.norm(p)):
        cond = np.linalg.cond(R)
        raise EqualizerDesignError(
            f"normal equations are singular and inconsistent (cond={cond:.3g}, residual={resid:.3g})")
    return TapSet(theta[:n_ffe], fc, theta[n_ffe:])


def wiener_mse(channel: FirTaps, noise_var: float, taps: TapSet) -> float:
    """Mean-square error of ``taps`` on ``channel`` under the Wiener model."""
    A, d_min = _regression_matrix(channel.coefficients, channel.center_index,
                                  len(taps.ffe), taps.ffe_center)
    g = taps.ffe @ A
    for j, b in enumerate(taps.dfe):
        d = -1 - j
        if d >= d_min:
            g[d - d_min] -= b
    g[0 - d_min] -= 1.0
    extra = sum(b * b for j, b in enumerate(taps.dfe) if -1 - j < d_min)
    return float(g @ g + extra + noise_var * taps.ffe @ taps.ffe)
