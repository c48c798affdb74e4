"""Air collision and victim receive chain.

``mix`` renders ``Y = h_z*Z + h_x*X + W`` at 22 MHz, runs the victim's 2 MHz
low-pass, and samples the result at 4 MHz with the scene's sampling-phase
error and clock drift. Every stage is linear in the air signal.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import zigbee_phy
from .interferers import InterfererKind, InterfererSpec, generate
from .signal_core import (
    LPF_TAPS,
    RX_CUTOFF_HZ,
    RX_RATE_HZ,
    SIM_RATE_HZ,
    IqWaveform,
    NoiseSpec,
    awgn_samples,
    frequency_shift,
    low_pass_filter,
    lowpass_taps,
    resample_at,
)

SCHEMA_VERSION = 1
GUARD = 64  # 22 MHz samples of silence around the victim frame


class Truth(str, enum.Enum):
    CLEAN = "clean"
    SYNC_ERROR_ONLY = "sync_error_only"
    CTI_OVERLAP = "cti_overlap"


@dataclass(frozen=True)
class CollisionScene:
    victim_frame: zigbee_phy.ZigbeeFrame
    interferer: InterfererSpec
    h_z: complex = 1.0
    h_x: complex = 0.0
    interferer_delay_s: float = 0.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    timing_offset_chips: float = 0.0
    sampling_drift_ppm: float = 0.0

    def __post_init__(self):
        if not -0.5 <= self.timing_offset_chips <= 0.5:
            raise ValueError("timing_offset_chips must lie in [-0.5, 0.5]")
        if self.interferer_delay_s < 0:
            raise ValueError("interferer_delay_s must be >= 0")
        for name in ("h_z", "h_x"):
            v = complex(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    @property
    def sir_db(self) -> float:
        """Gain ratio ``20*log10(|h_z|/|h_x|)``; +inf without interference."""
        if self.h_x == 0 or self.interferer.kind is InterfererKind.NONE:
            return float("inf")
        return 20 * np.log10(abs(self.h_z) / abs(self.h_x))

    # JSON ------------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "victim_payload_hex": self.victim_frame.payload.hex(),
            "h_z": [self.h_z.real, self.h_z.imag],
            "h_x": [self.h_x.real, self.h_x.imag],
            "interferer": {
                "kind": self.interferer.kind.value,
                "duration_s": self.interferer.duration_s,
                "payload_seed": int(self.interferer.payload_seed),
                "center_offset_hz": self.interferer.center_offset_hz,
                "mode": self.interferer.mode,
            },
            "interferer_delay_s": self.interferer_delay_s,
            "noise": {
                "variance_per_component": self.noise.variance_per_component,
                "seed": int(self.noise.seed),
            },
            "timing_offset_chips": self.timing_offset_chips,
            "sampling_drift_ppm": self.sampling_drift_ppm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CollisionScene":
        """Build a scene from its JSON form; raises ``SceneError`` naming the bad field."""
        return _scene_from_dict(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


class SceneError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _get(d, key, path, types=None):
    if not isinstance(d, dict) or key not in d:
        raise SceneError(path + key, "missing")
    v = d[key]
    if types is not None and (not isinstance(v, types) or isinstance(v, bool)):
        raise SceneError(path + key, f"expected {types}, got {type(v).__name__}")
    return v


def _complex(d, key):
    v = _get(d, key, "")
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v):
        return complex(v[0], v[1])
    raise SceneError(key, "expected a number or a [re, im] pair")


def _scene_from_dict(d: dict) -> CollisionScene:
    num = (int, float)
    payload_hex = _get(d, "victim_payload_hex", "", str)
    try:
        payload = bytes.fromhex(payload_hex)
    except ValueError as exc:
        raise SceneError("victim_payload_hex", str(exc)) from None
    try:
        frame = zigbee_phy.build_frame(payload)
    except ValueError as exc:
        raise SceneError("victim_payload_hex", str(exc)) from None
    it = _get(d, "interferer", "", dict)
    kind_name = _get(it, "kind", "interferer.", str)
    try:
        kind = InterfererKind(kind_name)
    except ValueError:
        raise SceneError("interferer.kind", f"unknown kind {kind_name!r}") from None
    duration = float(_get(it, "duration_s", "interferer.", num))
    payload_seed = int(_get(it, "payload_seed", "interferer.", int))
    try:
        spec = InterfererSpec(
            kind=kind,
            duration_s=duration,
            payload_seed=payload_seed,
            center_offset_hz=float(it.get("center_offset_hz", 0.0)),
            mode=it.get("mode", "dbpsk"),
        )
    except ValueError as exc:
        raise SceneError("interferer", str(exc)) from None
    nz = _get(d, "noise", "", dict)
    variance = float(_get(nz, "variance_per_component", "noise.", num))
    noise_seed = int(_get(nz, "seed", "noise.", int))
    try:
        noise = NoiseSpec(variance, noise_seed)
    except ValueError as exc:
        raise SceneError("noise", str(exc)) from None
    h_z, h_x = _complex(d, "h_z"), _complex(d, "h_x")
    delay = float(_get(d, "interferer_delay_s", "", num))
    try:
        return CollisionScene(
            victim_frame=frame,
            interferer=spec,
            h_z=h_z,
            h_x=h_x,
            interferer_delay_s=delay,
            noise=noise,
            timing_offset_chips=float(d.get("timing_offset_chips", 0.0)),
            sampling_drift_ppm=float(d.get("sampling_drift_ppm", 0.0)),
        )
    except ValueError as exc:
        raise SceneError("scene", str(exc)) from None


@dataclass(frozen=True, eq=False)
class ReceivedBaseband:
    waveform: IqWaveform
    truth: tuple  # one Truth per victim symbol
    interferer_kind: InterfererKind = InterfererKind.NONE
    symbols: np.ndarray | None = None  # transmitted victim symbols, for scoring

    @property
    def n_symbols(self) -> int:
        return len(self.truth)

    def truth_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "interferer_kind": self.interferer_kind.value,
            "sample_rate_hz": self.waveform.sample_rate_hz,
            "n_samples": len(self.waveform),
            "truth": [t.value for t in self.truth],
        }


# --- the receive chain ------------------------------------------------------


def sample_times(n: int, timing_offset_chips: float, drift_ppm: float) -> np.ndarray:
    """Receiver sampling instants (s), frame start at t=0."""
    nominal = np.arange(n) / RX_RATE_HZ
    return nominal + timing_offset_chips * zigbee_phy.CHIP_PERIOD_S + drift_ppm * 1e-6 * nominal


def _placed_interferer(scene: CollisionScene, n_buf: int) -> np.ndarray:
    x = generate(scene.interferer)
    out = np.zeros(n_buf, dtype=complex)
    if len(x) == 0 or scene.h_x == 0:
        return out
    x = frequency_shift(x, scene.interferer.center_offset_hz).samples
    start = GUARD + int(round(scene.interferer_delay_s * SIM_RATE_HZ))
    stop = min(n_buf, start + x.size)
    if start < stop:
        out[start:stop] = scene.h_x * x[: stop - start]
    return out


def air_components(scene: CollisionScene) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Victim, interferer and noise parts of the 22 MHz air buffer."""
    z = zigbee_phy.modulate(scene.victim_frame, SIM_RATE_HZ).samples
    n_buf = z.size + 2 * GUARD
    victim = np.zeros(n_buf, dtype=complex)
    victim[GUARD : GUARD + z.size] = scene.h_z * z
    interferer = _placed_interferer(scene, n_buf)
    noise = np.zeros(n_buf, dtype=complex)
    if scene.noise.variance_per_component > 0:
        noise = awgn_samples(n_buf, scene.noise)
    return victim, interferer, noise


def receive_chain(air: np.ndarray, n_out: int, timing_offset_chips=0.0, drift_ppm=0.0) -> IqWaveform:
    """Victim low-pass at 22 MHz, then fractional resampling to 4 MHz."""
    filtered = low_pass_filter(IqWaveform(air, SIM_RATE_HZ), RX_CUTOFF_HZ)
    t = sample_times(n_out, timing_offset_chips, drift_ppm) + GUARD / SIM_RATE_HZ
    return resample_at(filtered, t, RX_RATE_HZ)


def _truth_labels(scene: CollisionScene, interferer: np.ndarray, n_sym: int) -> tuple:
    spsym = zigbee_phy.SAMPLES_PER_SYMBOL
    t = sample_times(n_sym * spsym + 1, scene.timing_offset_chips, scene.sampling_drift_ppm)
    active = np.abs(interferer) > 0
    csum = np.concatenate([[0], np.cumsum(active)])
    labels = []
    for k in range(n_sym):
        t0, t1 = t[k * spsym], t[(k + 1) * spsym - 1]
        # air samples inside the window's time span [t0, t1]
        lo = max(0, int(np.ceil(t0 * SIM_RATE_HZ - 1e-9)) + GUARD)
        hi = min(active.size, int(np.floor(t1 * SIM_RATE_HZ + 1e-9)) + GUARD + 1)
        if hi > lo and csum[hi] - csum[lo] > 0:
            labels.append(Truth.CTI_OVERLAP)
        elif scene.timing_offset_chips != 0 or scene.sampling_drift_ppm != 0:
            labels.append(Truth.SYNC_ERROR_ONLY)
        else:
            labels.append(Truth.CLEAN)
    return tuple(labels)


def mix(scene: CollisionScene) -> ReceivedBaseband:
    victim, interferer, noise = air_components(scene)
    n_out = scene.victim_frame.n_symbols * zigbee_phy.SAMPLES_PER_SYMBOL + zigbee_phy.SAMPLES_PER_CHIP
    rx = receive_chain(victim + interferer + noise, n_out, scene.timing_offset_chips, scene.sampling_drift_ppm)
    truth = _truth_labels(scene, interferer, scene.victim_frame.n_symbols)
    kind = scene.interferer.kind if scene.h_x != 0 else InterfererKind.NONE
    return ReceivedBaseband(rx, truth, kind, scene.victim_frame.symbols())


# --- power bookkeeping ------------------------------------------------------


@lru_cache(maxsize=64)
def inband_power_gain(kind: InterfererKind, center_offset_hz: float = 0.0) -> float:
    """Fraction of a unit-power interferer's power that survives the victim filter.

    Measured once on a long fixed-seed rendering; used to express SIR in the
    receiver's band rather than over each interferer's full bandwidth.
    """
    kind = InterfererKind(kind)
    if kind is InterfererKind.NONE:
        return 0.0
    x = generate(InterfererSpec(kind, duration_s=4e-3, payload_seed=0x5EED))
    x = frequency_shift(x, center_offset_hz)
    y = low_pass_filter(x, RX_CUTOFF_HZ).samples[LPF_TAPS:-LPF_TAPS]
    return float(np.mean(np.abs(y) ** 2))


def noise_power_gain() -> float:
    """Power gain of the victim filter for white noise (sum of squared taps)."""
    return float(np.sum(lowpass_taps(RX_CUTOFF_HZ, SIM_RATE_HZ) ** 2))


def victim_power_gain() -> float:
    return inband_power_gain(InterfererKind.ZIGBEE, 0.0)


def interferer_gain(kind, sir_db: float, center_offset_hz: float = 0.0, h_z: complex = 1.0) -> float:
    """``|h_x|`` giving in-band SIR ``sir_db`` after the victim's filter."""
    p_z = abs(h_z) ** 2 * victim_power_gain()
    return float(np.sqrt(p_z / (10 ** (sir_db / 10)) / inband_power_gain(kind, center_offset_hz)))


def noise_variance(snr_db: float, h_z: complex = 1.0) -> float:
    """Per-component pre-filter variance giving in-band SNR ``snr_db``."""
    p_z = abs(h_z) ** 2 * victim_power_gain()
    return float(p_z / (10 ** (snr_db / 10)) / noise_power_gain() / 2)


# --- scene helpers ----------------------------------------------------------


def overlap_scene(
    frame: zigbee_phy.ZigbeeFrame,
    kind,
    start_symbol: int,
    n_symbols: int | None = None,
    sir_db: float = 0.0,
    snr_db: float | None = 15.0,
    seed: int = 0,
    center_offset_hz: float = 0.0,
    h_z: complex = 1.0,
    interferer_phase: float = 0.0,
    **extra,
) -> CollisionScene:
    """Scene whose interferer covers victim symbols ``start_symbol`` onward.

    With ``n_symbols`` None the interference runs to the end of the frame,
    the correct-head / corrupted-tail packet shape.
    """
    kind = InterfererKind(kind)
    if n_symbols is None:
        n_symbols = frame.n_symbols - start_symbol
    seeds = np.random.SeedSequence(int(seed)).generate_state(2, np.uint64)
    if kind is InterfererKind.NONE:
        h_x = 0.0
    else:
        h_x = interferer_gain(kind, sir_db, center_offset_hz, h_z) * np.exp(1j * interferer_phase)
    var = 0.0 if snr_db is None else noise_variance(snr_db, h_z)
    return CollisionScene(
        victim_frame=frame,
        interferer=InterfererSpec(
            kind,
            duration_s=max(n_symbols, 1) * zigbee_phy.SYMBOL_PERIOD_S,
            payload_seed=int(seeds[0]),
            center_offset_hz=center_offset_hz,
        ),
        h_z=h_z,
        h_x=h_x,
        interferer_delay_s=start_symbol * zigbee_phy.SYMBOL_PERIOD_S,
        noise=NoiseSpec(var, int(seeds[1])),
        **extra,
    )


@dataclass(frozen=True)
class RetransmissionRule:
    """How retransmitted copies differ from the first transmission.

    Copy 0 always reuses the scene unchanged. Later copies draw seeds from
    ``SeedSequence([payload_seed, noise_seed, copy_index])``.
    """

    delay_jitter_s: float = 0.0
    reseed_interferer: bool = True
    reseed_noise: bool = True


def make_retransmissions(scene: CollisionScene, k: int, rule: RetransmissionRule = RetransmissionRule()) -> list:
    if k < 1:
        raise ValueError("need at least one copy")
    return [mix(s) for s in retransmission_scenes(scene, k, rule)]


def retransmission_scenes(scene: CollisionScene, k: int, rule: RetransmissionRule = RetransmissionRule()) -> list:
    scenes = [scene]
    for i in range(1, k):
        ss = np.random.SeedSequence([int(scene.interferer.payload_seed), int(scene.noise.seed), i])
        pay_seed, noise_seed, jitter_seed = (int(v) for v in ss.generate_state(3, np.uint64))
        spec = scene.interferer
        if rule.reseed_interferer:
            spec = replace(spec, payload_seed=pay_seed)
        noise = scene.noise
        if rule.reseed_noise:
            noise = replace(noise, seed=noise_seed)
        delay = scene.interferer_delay_s
        if rule.delay_jitter_s > 0:
            jitter = np.random.default_rng(jitter_seed).uniform(-rule.delay_jitter_s, rule.delay_jitter_s)
            delay = max(0.0, delay + jitter)
        scenes.append(replace(scene, interferer=spec, noise=noise, interferer_delay_s=delay))
    return scenes
