"""Envelope and phase-shift features of received symbol windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..signal_core import IqWaveform, autocorrelation, phase_shift_series
from ..zigbee_phy import SAMPLES_PER_SYMBOL

N_HIST_BINS = 32
HIST_EDGES = np.linspace(-np.pi, np.pi, N_HIST_BINS + 1)
MIN_LAG = 2
MAX_LAG = 128
#: Candidate envelope periods in samples at 4 MHz (0.5 us and 1 us); each is
#: scored over all its multiples from MIN_LAG up to MAX_LAG.
CANDIDATE_PERIODS = (2, 4)
IDEAL_SHIFT = np.pi / 4


@dataclass(frozen=True, eq=False)
class FeatureVector:
    rssi_mean: float
    rssi_var_norm: float  # variance / mean**2
    rssi_periodicity: float  # best comb score over CANDIDATE_PERIODS
    rssi_period_lag: int  # period of that score in samples, 0 when undefined
    phase_dev_var: float  # variance of each shift's distance to the nearest +-pi/4
    phase_hist: np.ndarray  # N_HIST_BINS, sums to 1

    def to_dict(self) -> dict:
        return {
            "rssi_mean": self.rssi_mean,
            "rssi_var_norm": self.rssi_var_norm,
            "rssi_periodicity": self.rssi_periodicity,
            "rssi_period_lag": self.rssi_period_lag,
            "phase_dev_var": self.phase_dev_var,
            "phase_hist": [float(v) for v in self.phase_hist],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureVector":
        return cls(
            float(d["rssi_mean"]),
            float(d["rssi_var_norm"]),
            float(d["rssi_periodicity"]),
            int(d["rssi_period_lag"]),
            float(d["phase_dev_var"]),
            np.asarray(d["phase_hist"], dtype=float),
        )


def phase_deviation(shifts: np.ndarray) -> np.ndarray:
    """Distance of each shift from the nearer of +pi/4 and -pi/4."""
    return shifts - np.where(shifts >= 0, IDEAL_SHIFT, -IDEAL_SHIFT)


def phase_histogram(shifts: np.ndarray) -> np.ndarray:
    counts, _ = np.histogram(shifts, bins=HIST_EDGES)
    total = counts.sum()
    if total == 0:
        return np.full(N_HIST_BINS, 1.0 / N_HIST_BINS)
    return counts / total


def comb_periodicity(acf: np.ndarray) -> tuple[float, int]:
    """Best mean autocorrelation over the multiples of a candidate period.

    ``acf[i]`` holds lag ``i + 1``. Averaging a period's multiples keeps a
    single noisy lag from posing as structure. Returns ``(0.0, 0)`` when no
    candidate fits.
    """
    best, best_p = -np.inf, 0
    for p in CANDIDATE_PERIODS:
        lags = np.arange(p, acf.size + 1, p)
        if lags.size == 0:
            break
        score = float(acf[lags - 1].mean())
        if score > best:
            best, best_p = score, p
    return (0.0, 0) if best_p == 0 else (best, best_p)


def _waveform(rx) -> IqWaveform:
    return rx.waveform if hasattr(rx, "waveform") else rx


def symbol_windows(rx, symbols, offset: int = 0) -> list[np.ndarray]:
    s = _waveform(rx).samples
    out = []
    for k in symbols:
        lo = offset + int(k) * SAMPLES_PER_SYMBOL
        if lo < 0 or lo + SAMPLES_PER_SYMBOL > s.size:
            raise IndexError(f"symbol {k} lies outside the waveform")
        out.append(s[lo : lo + SAMPLES_PER_SYMBOL])
    return out


def features_from_windows(windows: list[np.ndarray]) -> FeatureVector:
    """Features over concatenated windows; phase shifts never cross a seam."""
    if not windows:
        raise ValueError("no symbol windows to extract features from")
    samples = np.concatenate(windows)
    rssi = samples.real**2 + samples.imag**2
    mean = float(rssi.mean())
    var_norm = float(rssi.var() / mean**2) if mean > 0 else 0.0

    max_lag = min(MAX_LAG, rssi.size // 2)
    periodicity, lag = 0.0, 0
    if max_lag >= MIN_LAG:
        acf = autocorrelation(rssi, max_lag)
        if not acf.degenerate:
            periodicity, lag = comb_periodicity(acf.values)

    shifts = np.concatenate([phase_shift_series(w) for w in windows])
    dev = phase_deviation(shifts)
    return FeatureVector(mean, var_norm, periodicity, lag, float(dev.var()), phase_histogram(shifts))


def extract_features(rx, sym_range, offset: int = 0) -> FeatureVector:
    """Features of the given symbol windows of an aligned received waveform.

    ``sym_range`` is any iterable of symbol indices (a ``range`` for a
    contiguous block); ``offset`` is the frame start in samples.
    """
    symbols = list(sym_range)
    if not symbols:
        raise ValueError("empty symbol range")
    return features_from_windows(symbol_windows(rx, symbols, offset))
