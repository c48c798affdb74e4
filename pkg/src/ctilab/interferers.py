"""Baseband generators for the interference sources, all at 22 MHz.

Every generator is a deterministic function of its :class:`InterfererSpec`
and emits unit mean power, so scene gains alone set the signal-to-interference
ratio. Generators emit whole symbols covering ``duration_s``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from . import zigbee_phy
from .signal_core import SIM_RATE_HZ, IqWaveform


class InterfererKind(str, enum.Enum):
    WIFI11B = "wifi11b"
    WIFI11G = "wifi11g"
    BLUETOOTH = "bluetooth"
    ZIGBEE = "zigbee"
    NONE = "none"


#: Fixed order used for tie-breaks and confusion-matrix layout.
CLASS_ORDER = (
    InterfererKind.WIFI11B,
    InterfererKind.WIFI11G,
    InterfererKind.BLUETOOTH,
    InterfererKind.ZIGBEE,
)


@dataclass(frozen=True)
class InterfererSpec:
    kind: InterfererKind
    duration_s: float = 1e-3
    payload_seed: int = 0
    center_offset_hz: float = 0.0
    mode: str = "dbpsk"  # 802.11b only: "dbpsk" (1 Mbit/s) or "dqpsk" (2 Mbit/s)

    def __post_init__(self):
        object.__setattr__(self, "kind", InterfererKind(self.kind))
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if not 0 <= int(self.payload_seed) < 2**64:
            raise ValueError("payload_seed must fit in 64 unsigned bits")
        if self.mode not in ("dbpsk", "dqpsk"):
            raise ValueError(f"unknown 802.11b mode {self.mode!r}")


def _require(spec: InterfererSpec, kind: InterfererKind):
    if spec.kind is not kind:
        raise ValueError(f"generator for {kind.value} called with kind {spec.kind.value}")


def _rng(spec: InterfererSpec) -> np.random.Generator:
    return np.random.default_rng(int(spec.payload_seed))


def _n_symbols(duration_s: float, symbol_s: float) -> int:
    return max(1, int(np.ceil(duration_s / symbol_s - 1e-9)))


# --- 802.11b ----------------------------------------------------------------

BARKER = np.array([1, -1, 1, 1, -1, 1, 1, 1, -1, -1, -1], dtype=float)
DSSS_CHIP_RATE_HZ = 11e6
DSSS_SYMBOL_S = 1e-6
_DQPSK_PHASE = {(0, 0): 0.0, (0, 1): np.pi / 2, (1, 1): np.pi, (1, 0): 3 * np.pi / 2}


def gen_wifi11b(spec: InterfererSpec) -> IqWaveform:
    """Barker-spread DBPSK (or DQPSK) with rectangular chips, 2 samples/chip."""
    _require(spec, InterfererKind.WIFI11B)
    rng = _rng(spec)
    n_sym = _n_symbols(spec.duration_s, DSSS_SYMBOL_S)
    if spec.mode == "dbpsk":
        bits = rng.integers(0, 2, n_sym)
        steps = np.pi * bits
    else:
        bits = rng.integers(0, 2, (n_sym, 2))
        steps = np.array([_DQPSK_PHASE[(int(a), int(b))] for a, b in bits])
    symbols = np.exp(1j * np.cumsum(steps))
    spc = int(SIM_RATE_HZ / DSSS_CHIP_RATE_HZ)
    chips = np.repeat(BARKER, spc)
    return IqWaveform(np.outer(symbols, chips).reshape(-1), SIM_RATE_HZ)


# --- 802.11g ----------------------------------------------------------------

OFDM_NFFT = 64
OFDM_CP = 16
OFDM_RATE_HZ = 20e6
OFDM_SYMBOL_S = (OFDM_NFFT + OFDM_CP) / OFDM_RATE_HZ
PILOT_CARRIERS = np.array([-21, -7, 7, 21])
PILOT_VALUES = np.array([1.0, 1.0, 1.0, -1.0])
DATA_CARRIERS = np.array([k for k in range(-26, 27) if k != 0 and k not in (-21, -7, 7, 21)])


def ofdm_grid(rng: np.random.Generator) -> np.ndarray:
    """One symbol's 64 subcarrier values in FFT order: QPSK data, BPSK pilots, nulls elsewhere."""
    grid = np.zeros(OFDM_NFFT, dtype=complex)
    qpsk = (2 * rng.integers(0, 2, (DATA_CARRIERS.size, 2)) - 1) @ np.array([1, 1j]) / np.sqrt(2)
    grid[DATA_CARRIERS % OFDM_NFFT] = qpsk
    polarity = 1.0 if rng.integers(0, 2) else -1.0
    grid[PILOT_CARRIERS % OFDM_NFFT] = polarity * PILOT_VALUES
    return grid


def ofdm_symbol(grid: np.ndarray) -> np.ndarray:
    """Inverse transform plus cyclic prefix (80 samples at 20 MHz)."""
    body = np.fft.ifft(grid) * OFDM_NFFT / np.sqrt(DATA_CARRIERS.size + PILOT_CARRIERS.size)
    return np.concatenate([body[-OFDM_CP:], body])


def gen_wifi11g(spec: InterfererSpec) -> IqWaveform:
    """OFDM symbols at 20 MHz, resampled 11/10 to the 22 MHz lab rate."""
    _require(spec, InterfererKind.WIFI11G)
    rng = _rng(spec)
    n_sym = _n_symbols(spec.duration_s, OFDM_SYMBOL_S)
    base = np.concatenate([ofdm_symbol(ofdm_grid(rng)) for _ in range(n_sym)])
    up = sps.resample_poly(base, 11, 10)
    up = up / np.sqrt(np.mean(np.abs(up) ** 2))
    return IqWaveform(up, SIM_RATE_HZ)


# --- Bluetooth --------------------------------------------------------------

BT_SYMBOL_RATE_HZ = 1e6
BT_BT = 0.5
BT_MOD_INDEX = 0.32


def gaussian_pulse(bt: float, sps_: int, span: int = 3) -> np.ndarray:
    t = np.arange(-span * sps_ / 2, span * sps_ / 2 + 1) / sps_
    sigma = np.sqrt(np.log(2)) / (2 * np.pi * bt)
    g = np.exp(-(t**2) / (2 * sigma**2))
    return g / g.sum()


def gen_bluetooth(spec: InterfererSpec) -> IqWaveform:
    """GFSK, BT=0.5, modulation index 0.32, one 1 MHz channel (no hopping)."""
    _require(spec, InterfererKind.BLUETOOTH)
    rng = _rng(spec)
    n_sym = _n_symbols(spec.duration_s, 1 / BT_SYMBOL_RATE_HZ)
    sps_ = int(SIM_RATE_HZ / BT_SYMBOL_RATE_HZ)
    nrz = np.repeat(2.0 * rng.integers(0, 2, n_sym) - 1.0, sps_)
    freq = np.convolve(nrz, gaussian_pulse(BT_BT, sps_), mode="same")
    # peak deviation h/2 * symbol rate; per-sample phase step pi*h*freq/sps
    phase = np.cumsum(np.pi * BT_MOD_INDEX * freq / sps_)
    return IqWaveform(np.exp(1j * phase), SIM_RATE_HZ)


# --- ZigBee -----------------------------------------------------------------


def gen_zigbee_interferer(spec: InterfererSpec) -> IqWaveform:
    """Back-to-back 802.15.4 frames with random payloads, rendered at 22 MHz."""
    _require(spec, InterfererKind.ZIGBEE)
    rng = _rng(spec)
    n_sym = _n_symbols(spec.duration_s, zigbee_phy.SYMBOL_PERIOD_S)
    symbols = []
    total = 0
    while total < n_sym:
        remaining = n_sym - total
        payload_len = int(np.clip((remaining + 1) // 2 - 8, 0, zigbee_phy.MAX_PAYLOAD))
        frame = zigbee_phy.build_frame(rng.integers(0, 256, payload_len, dtype=np.uint8).tobytes())
        symbols.append(frame.symbols())
        total += frame.n_symbols
    syms = np.concatenate(symbols)[:n_sym]
    chips = zigbee_phy.PN_TABLE.sequences[syms].reshape(-1)
    w = zigbee_phy.modulate_chips(chips, SIM_RATE_HZ)
    n_out = int(round(n_sym * zigbee_phy.SYMBOL_PERIOD_S * SIM_RATE_HZ))
    return w.slice(0, n_out)


GENERATORS = {
    InterfererKind.WIFI11B: gen_wifi11b,
    InterfererKind.WIFI11G: gen_wifi11g,
    InterfererKind.BLUETOOTH: gen_bluetooth,
    InterfererKind.ZIGBEE: gen_zigbee_interferer,
}


def generate(spec: InterfererSpec) -> IqWaveform:
    if spec.kind is InterfererKind.NONE:
        return IqWaveform(np.zeros(0), SIM_RATE_HZ)
    return GENERATORS[spec.kind](spec)
