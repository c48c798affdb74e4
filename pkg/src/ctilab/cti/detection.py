"""Corrupted-symbol flagging and sync-error / interference separation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .. import zigbee_phy
from ..zigbee_phy import SymbolDecode
from .features import FeatureVector, features_from_windows, symbol_windows


class Cause(str, enum.Enum):
    CLEAN = "clean"
    SYNC_ERROR = "sync_error"
    CTI = "cti"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class DetectionConfig:
    hamming_threshold: int = 2
    randomness_threshold: float = 0.1
    window_symbols: int = 1
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 1 <= self.hamming_threshold <= 32:
            raise ValueError("hamming_threshold must lie in [1, 32]")
        if not self.randomness_threshold > 0:
            raise ValueError("randomness_threshold must be positive")
        if self.window_symbols < 1:
            raise ValueError("window_symbols must be >= 1")

    def to_dict(self) -> dict:
        return {
            "hamming_threshold": self.hamming_threshold,
            "randomness_threshold": self.randomness_threshold,
            "window_symbols": self.window_symbols,
        }

    @classmethod
    def from_dict(cls, d: dict, provenance: dict | None = None) -> "DetectionConfig":
        return cls(
            int(d["hamming_threshold"]),
            float(d["randomness_threshold"]),
            int(d.get("window_symbols", 1)),
            provenance or {},
        )


@dataclass(frozen=True, eq=False)
class SymbolVerdict:
    index: int
    decode: SymbolDecode
    corrupted: bool
    cause: Cause
    features: FeatureVector

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "symbol": self.decode.symbol,
            "hamming": self.decode.hamming,
            "runner_up_gap": self.decode.runner_up_gap,
            "corrupted": self.corrupted,
            "cause": self.cause.value,
            "features": self.features.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class Detection:
    """Verdicts for one reception plus the decode they were derived from."""

    verdicts: list
    frame: zigbee_phy.FrameDecode

    @property
    def offset(self) -> int:
        return self.frame.offset

    def indices(self, *causes: Cause) -> list[int]:
        return [v.index for v in self.verdicts if v.cause in causes]


def _window_range(k: int, n: int, width: int) -> range:
    lo = max(0, k - (width - 1) // 2)
    hi = min(n, lo + width)
    return range(max(0, hi - width), hi)


def classify_cause(corrupted: bool, features: FeatureVector, cfg: DetectionConfig) -> Cause:
    if not corrupted:
        return Cause.CLEAN
    if not (features.rssi_mean > 0 and np.isfinite(features.phase_dev_var)):
        return Cause.UNKNOWN
    return Cause.CTI if features.phase_dev_var > cfg.randomness_threshold else Cause.SYNC_ERROR


def detect_frame(rx, cfg: DetectionConfig) -> Detection:
    """Align, decode and judge every complete symbol of a reception.

    Raises :class:`~ctilab.zigbee_phy.NoFrameFound` when alignment fails.
    """
    wf = rx.waveform if hasattr(rx, "waveform") else rx
    frame = zigbee_phy.decode_frame(wf)
    n = len(frame.decodes)
    per_symbol = [features_from_windows(symbol_windows(wf, [k], frame.offset)) for k in range(n)]
    verdicts = []
    for k, dec in enumerate(frame.decodes):
        if cfg.window_symbols == 1:
            feats = per_symbol[k]
        else:
            feats = features_from_windows(
                symbol_windows(wf, _window_range(k, n, cfg.window_symbols), frame.offset)
            )
        corrupted = dec.hamming > cfg.hamming_threshold
        verdicts.append(SymbolVerdict(k, dec, corrupted, classify_cause(corrupted, feats, cfg), feats))
    return Detection(verdicts, frame)


def apply_config(detection: Detection, cfg: DetectionConfig) -> Detection:
    """Re-judge an existing detection under new thresholds, reusing its features.

    Only single-symbol feature windows can be reused this way.
    """
    if cfg.window_symbols != 1:
        raise ValueError("apply_config needs window_symbols == 1")
    verdicts = []
    for v in detection.verdicts:
        corrupted = v.decode.hamming > cfg.hamming_threshold
        verdicts.append(SymbolVerdict(v.index, v.decode, corrupted, classify_cause(corrupted, v.features, cfg), v.features))
    return Detection(verdicts, detection.frame)


def detect(rx, cfg: DetectionConfig) -> list[SymbolVerdict]:
    """Per-symbol verdicts: corruption from the Hamming threshold, cause from phase-shift randomness."""
    return detect_frame(rx, cfg).verdicts


@dataclass(frozen=True)
class Section:
    start: int
    end: int  # inclusive
    corrupted: bool

    @property
    def kind(self) -> str:
        return "corrupted" if self.corrupted else "correct"

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end, "kind": self.kind}


def partition_packet(verdicts) -> list[Section]:
    """Split a packet into maximal runs of correct and corrupted symbols."""
    flags = [v.corrupted if hasattr(v, "corrupted") else bool(v) for v in verdicts]
    if not flags:
        raise ValueError("cannot partition an empty packet")
    sections = []
    start = 0
    for k in range(1, len(flags) + 1):
        if k == len(flags) or flags[k] != flags[start]:
            sections.append(Section(start, k - 1, flags[start]))
            start = k
    return sections
