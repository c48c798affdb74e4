"""Retransmission combining over interference-flagged symbol windows.

Retransmitted copies carry the same victim signal but independent
interference and noise, so the per-sample mean of aligned copies keeps the
victim and shrinks everything else. Only flagged windows are combined; the
rest of the combined frame is taken from the first usable copy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .. import zigbee_phy
from ..interferers import InterfererKind
from ..signal_core import IqWaveform
from ..zigbee_phy import SAMPLES_PER_SYMBOL, NoFrameFound
from .detection import Cause

#: Mean pairwise correlation of flagged windows above which copies are
#: reported as sharing the same interference.
CORRELATED_THRESHOLD = 0.9


class FiltrationError(ValueError):
    pass


def combine_windows(windows) -> np.ndarray:
    """Element-wise arithmetic mean of equally long complex windows."""
    stack = np.asarray([np.asarray(w, dtype=complex) for w in windows])
    if stack.ndim != 2 or stack.shape[0] == 0:
        raise ValueError("need one or more equally long windows")
    return stack.mean(axis=0)


def _waveform(rx) -> IqWaveform:
    return rx.waveform if hasattr(rx, "waveform") else rx


def _aligned_copies(copies) -> tuple[list, list]:
    aligned, kept = [], []
    for i, rx in enumerate(copies):
        wf = _waveform(rx)
        try:
            off = zigbee_phy.align_preamble(wf)
        except NoFrameFound:
            warnings.warn(f"copy {i}: no frame found, dropped from combining", stacklevel=3)
            continue
        aligned.append(wf.samples[off:])
        kept.append(i)
    return aligned, kept


def _derotate(aligned: list) -> list:
    """Rotate every copy onto the first copy's carrier phase using the preamble."""
    n = zigbee_phy._SYNC_SYMBOLS * SAMPLES_PER_SYMBOL
    ref = aligned[0][:n]
    return [a * np.exp(-1j * np.angle(np.vdot(ref, a[:n]))) for a in aligned]


def pairwise_correlation(windows) -> float:
    """Mean normalized cross-correlation magnitude over all copy pairs."""
    w = [np.asarray(x) for x in windows]
    vals = []
    for i in range(len(w)):
        for j in range(i + 1, len(w)):
            den = np.linalg.norm(w[i]) * np.linalg.norm(w[j])
            vals.append(abs(np.vdot(w[i], w[j])) / den if den > 0 else 0.0)
    return float(np.mean(vals)) if vals else 0.0


@dataclass(frozen=True)
class SymbolRecovery:
    index: int
    pre_hamming: tuple  # per kept copy
    post_hamming: int
    post_symbol: int
    recovered: bool

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "pre_hamming": list(self.pre_hamming),
            "post_hamming": self.post_hamming,
            "post_symbol": self.post_symbol,
            "recovered": self.recovered,
        }


@dataclass(frozen=True, eq=False)
class FiltrationResult:
    decode: zigbee_phy.FrameDecode
    combined: IqWaveform  # aligned, frame start at sample 0
    symbols: tuple  # SymbolRecovery per combined window
    kept_copies: tuple
    correlated_interference: bool
    mean_correlation: float

    @property
    def recovered(self) -> int:
        return sum(s.recovered for s in self.symbols)

    @property
    def unrecovered(self) -> int:
        return len(self.symbols) - self.recovered

    def to_dict(self) -> dict:
        return {
            "kept_copies": list(self.kept_copies),
            "combined_symbols": [s.index for s in self.symbols],
            "recovered": self.recovered,
            "unrecovered": self.unrecovered,
            "fcs_ok": self.decode.fcs_ok,
            "correlated_interference": self.correlated_interference,
            "mean_correlation": self.mean_correlation,
            "symbols": [s.to_dict() for s in self.symbols],
        }


def select_windows(detections, mode: str = "cti", interference_class=None, target_classes=None) -> list[int]:
    """Union of the symbol indices to combine across copies.

    ``mode="cti"`` takes Cti-labeled symbols, and only when the classified
    source is in ``target_classes`` (default: 802.11g, the case averaging is
    known to help); ``mode="corrupted"`` takes every corrupted symbol.
    """
    if mode not in ("cti", "corrupted"):
        raise ValueError(f"unknown filtration mode {mode!r}")
    if mode == "cti":
        targets = {InterfererKind.WIFI11G} if target_classes is None else {InterfererKind(t) for t in target_classes}
        if interference_class is not None:
            label = getattr(interference_class, "label", interference_class)
            if InterfererKind(label) not in targets:
                return []
    picked = set()
    for det in detections:
        for v in det.verdicts:
            if (mode == "cti" and v.cause is Cause.CTI) or (mode == "corrupted" and v.corrupted):
                picked.add(v.index)
    return sorted(picked)


def filtrate(
    copies,
    detections,
    mode: str = "cti",
    interference_class=None,
    target_classes=None,
    hamming_threshold: int = 1,
    derotate: bool = False,
) -> FiltrationResult:
    """Average aligned copies over flagged windows and re-decode.

    ``detections`` holds one :class:`Detection` per copy. Copies whose
    preamble cannot be found are dropped with a warning; fewer than two
    usable copies is an error. A combined symbol counts as recovered when
    its Hamming distance no longer exceeds ``hamming_threshold``.
    """
    copies = list(copies)
    detections = list(detections)
    if len(copies) < 2:
        raise FiltrationError("filtration needs at least 2 copies of the frame")
    if len(detections) != len(copies):
        raise FiltrationError("need one detection per copy")
    aligned, kept = _aligned_copies(copies)
    if len(aligned) < 2:
        raise FiltrationError(f"only {len(aligned)} copy aligned; at least 2 are required")
    if derotate:
        aligned = _derotate(aligned)
    n = min(a.size for a in aligned)
    aligned = [a[:n] for a in aligned]
    n_sym = (n - 1) // SAMPLES_PER_SYMBOL

    kept_dets = [detections[i] for i in kept]
    windows = [k for k in select_windows(kept_dets, mode, interference_class, target_classes) if k < n_sym]

    combined = aligned[0].copy()
    flagged = []
    for k in windows:
        sl = slice(k * SAMPLES_PER_SYMBOL, (k + 1) * SAMPLES_PER_SYMBOL + 1)
        flagged.append([a[sl] for a in aligned])
        combined[sl] = combine_windows(a[sl] for a in aligned)
    combined_wf = IqWaveform(combined, _waveform(copies[kept[0]]).sample_rate_hz)
    decode = zigbee_phy.decode_aligned(combined_wf)

    corr = float(np.mean([pairwise_correlation(ws) for ws in flagged])) if flagged else 0.0
    report = []
    for k in windows:
        pre = tuple(int(d.frame.decodes[k].hamming) if k < len(d.frame.decodes) else -1 for d in kept_dets)
        post = decode.decodes[k]
        report.append(SymbolRecovery(k, pre, int(post.hamming), int(post.symbol), post.hamming <= hamming_threshold))
    return FiltrationResult(decode, combined_wf, tuple(report), tuple(kept), corr > CORRELATED_THRESHOLD, corr)
