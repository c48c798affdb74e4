"""Randomized trial scenes shared by calibration and the experiment harness.

A trial is fully determined by ``(kind, sir_db, snr_db, seed, template)``:
the seed drives one PCG64 stream that draws the victim payload, the overlap
length, the interferer's center offset and carrier phase, and the scene's
own interferer and noise seeds, in that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import channel, zigbee_phy
from .interferers import InterfererKind

#: Default interferer center offsets (Hz); one is drawn per trial.
DEFAULT_CENTER_OFFSETS = {
    InterfererKind.WIFI11B: (2e6,),
    InterfererKind.WIFI11G: (2e6,),
    InterfererKind.BLUETOOTH: (-1e6, 0.0, 1e6),
    InterfererKind.ZIGBEE: (0.0,),
    InterfererKind.NONE: (0.0,),
}


def _offsets_default() -> dict:
    return dict(DEFAULT_CENTER_OFFSETS)


@dataclass(frozen=True, eq=False)
class SceneTemplate:
    """Geometry shared by every trial of an experiment cell."""

    payload_bytes: int = 24
    start_symbol: int = 16
    overlap_symbols: tuple = (8, 24)  # inclusive range of overlapped symbols
    timing_offset_chips: float = 0.0
    drift_ppm: tuple = (0.0,)  # magnitude choices; the sign is drawn per trial
    wifi11b_mode: str = "dbpsk"
    center_offsets_hz: dict = field(default_factory=_offsets_default)
    retransmissions: int = 1

    def __post_init__(self):
        lo, hi = (int(v) for v in self.overlap_symbols)
        object.__setattr__(self, "overlap_symbols", (lo, hi))
        object.__setattr__(self, "drift_ppm", tuple(float(v) for v in self.drift_ppm))
        offsets = dict(DEFAULT_CENTER_OFFSETS)
        offsets.update({InterfererKind(k): tuple(float(x) for x in v) for k, v in self.center_offsets_hz.items()})
        object.__setattr__(self, "center_offsets_hz", offsets)
        if not 0 <= self.payload_bytes <= zigbee_phy.MAX_PAYLOAD:
            raise ValueError("payload_bytes out of range")
        if not 1 <= lo <= hi:
            raise ValueError("overlap_symbols must satisfy 1 <= lo <= hi")
        if self.start_symbol < 0:
            raise ValueError("start_symbol must be >= 0")
        if not -0.5 <= self.timing_offset_chips <= 0.5:
            raise ValueError("timing_offset_chips must lie in [-0.5, 0.5]")
        if self.retransmissions < 1:
            raise ValueError("retransmissions must be >= 1")
        if not self.drift_ppm:
            raise ValueError("drift_ppm needs at least one choice")

    def to_dict(self) -> dict:
        return {
            "payload_bytes": self.payload_bytes,
            "start_symbol": self.start_symbol,
            "overlap_symbols": list(self.overlap_symbols),
            "timing_offset_chips": self.timing_offset_chips,
            "drift_ppm": list(self.drift_ppm),
            "wifi11b_mode": self.wifi11b_mode,
            "center_offsets_hz": {k.value: list(v) for k, v in self.center_offsets_hz.items()},
            "retransmissions": self.retransmissions,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneTemplate":
        known = cls().to_dict()
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown scene_template fields: {sorted(unknown)}")
        merged = {**known, **d}
        merged["overlap_symbols"] = tuple(merged["overlap_symbols"])
        merged["drift_ppm"] = tuple(merged["drift_ppm"])
        return cls(**merged)


def trial_scene(kind, sir_db: float, snr_db: float, seed: int, template: SceneTemplate = SceneTemplate()):
    """Draw one randomized collision scene."""
    kind = InterfererKind(kind)
    rng = np.random.default_rng(int(seed))
    payload = rng.integers(0, 256, template.payload_bytes, dtype=np.uint8).tobytes()
    frame = zigbee_phy.build_frame(payload)
    lo, hi = template.overlap_symbols
    n_overlap = int(rng.integers(lo, hi + 1))
    n_overlap = max(1, min(n_overlap, frame.n_symbols - template.start_symbol))
    offset = float(rng.choice(template.center_offsets_hz[kind]))
    phase = float(rng.uniform(0.0, 2 * np.pi))
    drift = float(rng.choice(template.drift_ppm)) * (1.0 if rng.integers(0, 2) else -1.0)
    scene_seed = int(rng.integers(0, 2**63))
    scene = channel.overlap_scene(
        frame,
        kind,
        template.start_symbol,
        n_overlap,
        sir_db=sir_db,
        snr_db=snr_db,
        seed=scene_seed,
        center_offset_hz=offset,
        interferer_phase=phase,
        timing_offset_chips=template.timing_offset_chips,
        sampling_drift_ppm=drift,
    )
    if kind is InterfererKind.WIFI11B and template.wifi11b_mode != "dbpsk":
        scene = replace(scene, interferer=replace(scene.interferer, mode=template.wifi11b_mode))
    return scene
