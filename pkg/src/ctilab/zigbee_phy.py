"""IEEE 802.15.4 (2.4 GHz O-QPSK) victim transceiver.

Chip/phase convention, shared by the modulator and the demodulator:

* chip value 1 maps to amplitude +1, chip 0 to -1;
* chip ``k`` is a half-sine pulse ``sin(pi*t / (2*Tc))`` on ``[k*Tc, (k+2)*Tc)``,
  on I when ``k`` is even and on Q when ``k`` is odd (so Q lags I by one chip
  period, half a pulse);
* the pulse of chip ``k`` peaks at ``(k+1)*Tc``, where the baseband phase is
  0 / pi (I chips) or +pi/2 / -pi/2 (Q chips) for chip 1 / chip 0.

Between peaks the phase moves linearly by +-pi/2 per chip period, i.e. by
+-pi/4 per sample at the 4 MHz receiver rate. The receiver never tracks the
carrier phase: it reads each chip period's rotation direction and compares
those decisions with :data:`RX_TABLE`, the PN table mapped through
:func:`rotation_chips`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import correlate

from .signal_core import RX_RATE_HZ, IqWaveform, phase_shift_series

CHIP_RATE_HZ = 2e6
CHIP_PERIOD_S = 1 / CHIP_RATE_HZ
CHIPS_PER_SYMBOL = 32
SAMPLES_PER_CHIP = int(RX_RATE_HZ / CHIP_RATE_HZ)
SAMPLES_PER_SYMBOL = CHIPS_PER_SYMBOL * SAMPLES_PER_CHIP
SYMBOL_PERIOD_S = CHIPS_PER_SYMBOL * CHIP_PERIOD_S

PREAMBLE_SYMBOLS = 8
SFD = 0xA7
HEADER_SYMBOLS = PREAMBLE_SYMBOLS + 2 + 2  # preamble, SFD, PHR
MAX_PAYLOAD = 125

# Symbol-to-chip map of the 2.4 GHz O-QPSK PHY, chip c0 first.
_PN_STRINGS = (
    "11011001110000110101001000101110",
    "11101101100111000011010100100010",
    "00101110110110011100001101010010",
    "00100010111011011001110000110101",
    "01010010001011101101100111000011",
    "00110101001000101110110110011100",
    "11000011010100100010111011011001",
    "10011100001101010010001011101101",
    "10001100100101100000011101111011",
    "10111000110010010110000001110111",
    "01111011100011001001011000000111",
    "01110111101110001100100101100000",
    "00000111011110111000110010010110",
    "01100000011101111011100011001001",
    "10010110000001110111101110001100",
    "11001001011000000111011110111000",
)


class NoFrameFound(Exception):
    """Preamble correlation never reached the detection floor."""


@dataclass(frozen=True, eq=False)
class PnTable:
    """Sixteen 32-chip benchmark sequences.

    ``mask`` marks the chip positions that count towards Hamming distance;
    ``d_min`` is the smallest pairwise distance, found by exhaustive pairing.
    """

    sequences: np.ndarray  # (16, 32) uint8
    mask: np.ndarray  # (32,) bool
    d_min: int

    @classmethod
    def from_sequences(cls, seqs, mask=None) -> "PnTable":
        seqs = np.array(seqs, dtype=np.uint8)
        if seqs.shape != (16, CHIPS_PER_SYMBOL):
            raise AssertionError(f"PN table has shape {seqs.shape}")
        mask = np.ones(CHIPS_PER_SYMBOL, bool) if mask is None else np.asarray(mask, bool)
        dists = ((seqs[:, None, :] != seqs[None, :, :]) & mask).sum(axis=2)
        d_min = int(dists[~np.eye(16, dtype=bool)].min())
        if d_min < 1:
            raise AssertionError("PN table has indistinguishable sequences")
        seqs.flags.writeable = False
        mask.flags.writeable = False
        return cls(seqs, mask, d_min)

    @classmethod
    def standard(cls) -> "PnTable":
        return cls.from_sequences([[int(c) for c in s] for s in _PN_STRINGS])

    def __getitem__(self, symbol: int) -> np.ndarray:
        return self.sequences[symbol]


PN_TABLE = PnTable.standard()


def rotation_chips(chips) -> np.ndarray:
    """Map transmitted chips to the phase-rotation chips a receiver observes.

    During chip period ``k`` the phase turns by ``(-1)**(k+1) * a_k * a_{k-1} * pi/2``
    (``a = 2*chip - 1``); a positive turn reads as 1. The first chip has no
    predecessor and maps to 0.
    """
    a = 2 * np.asarray(chips, dtype=int) - 1
    k = np.arange(a.shape[-1])
    sign = np.where(k % 2 == 1, 1, -1)
    turn = np.zeros_like(a)
    turn[..., 1:] = sign[1:] * a[..., 1:] * a[..., :-1]
    return (turn > 0).astype(np.uint8)


def _rx_table() -> PnTable:
    # chip 0's turn depends on the previous symbol, so it is left out of distances
    mask = np.ones(CHIPS_PER_SYMBOL, bool)
    mask[0] = False
    return PnTable.from_sequences(rotation_chips(PN_TABLE.sequences), mask)


#: The PN table as seen through phase-shift chip decisions.
RX_TABLE = _rx_table()


# --- frame check sequence ---------------------------------------------------


def _crc_table() -> np.ndarray:
    table = np.zeros(256, dtype=np.uint16)
    for b in range(256):
        reg = b
        for _ in range(8):
            reg = (reg >> 1) ^ 0x8408 if reg & 1 else reg >> 1
        table[b] = reg
    return table


_CRC_TABLE = _crc_table()


def crc16(data: bytes) -> int:
    """802.15.4 FCS: CRC-16 over x^16+x^12+x^5+1, LSB-first, initial value 0."""
    reg = 0
    for b in data:
        reg = (reg >> 8) ^ int(_CRC_TABLE[(reg ^ b) & 0xFF])
    return reg


@dataclass(frozen=True)
class ZigbeeFrame:
    payload: bytes
    fcs: int

    @property
    def length_byte(self) -> int:
        return len(self.payload) + 2

    def to_bytes(self) -> bytes:
        """Every transmitted byte: preamble, SFD, PHR, payload, FCS (LSB first)."""
        return (
            bytes(PREAMBLE_SYMBOLS // 2)
            + bytes([SFD, self.length_byte])
            + self.payload
            + self.fcs.to_bytes(2, "little")
        )

    def symbols(self) -> np.ndarray:
        return bytes_to_symbols(self.to_bytes())

    def chips(self) -> np.ndarray:
        return PN_TABLE.sequences[self.symbols()].reshape(-1)

    @property
    def n_symbols(self) -> int:
        return 2 * (6 + self.length_byte)

    def to_hex(self) -> str:
        return self.payload.hex()


def build_frame(payload: bytes) -> ZigbeeFrame:
    payload = bytes(payload)
    if len(payload) > MAX_PAYLOAD:
        raise ValueError(f"payload of {len(payload)} bytes exceeds the {MAX_PAYLOAD}-byte limit")
    return ZigbeeFrame(payload, crc16(payload))


def verify_fcs(frame: ZigbeeFrame) -> bool:
    return crc16(frame.payload) == frame.fcs


def bytes_to_symbols(data: bytes) -> np.ndarray:
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    out = np.empty(2 * arr.size, dtype=np.uint8)
    out[0::2] = arr & 0x0F
    out[1::2] = arr >> 4
    return out


def symbols_to_bytes(symbols) -> bytes:
    s = np.asarray(symbols, dtype=np.uint8)
    n = s.size // 2
    return bytes((s[0 : 2 * n : 2] | (s[1 : 2 * n : 2] << 4)).tolist())


# --- modulation -------------------------------------------------------------


def modulate_chips(chips, sample_rate_hz: float = RX_RATE_HZ) -> IqWaveform:
    """Half-sine O-QPSK waveform for a chip stream, evaluated at any rate.

    The pulses are evaluated analytically, so a 22 MHz rendering is the ideal
    interpolation of the 4 MHz one. Length covers ``(n_chips + 1)`` chip
    periods, the extra period being the tail of the last (delayed) pulse.
    """
    c = 2.0 * np.asarray(chips, dtype=float) - 1.0
    n_chips = c.size
    if n_chips == 0:
        return IqWaveform(np.zeros(0), sample_rate_hz)
    n_samples = int(np.ceil((n_chips + 1) * CHIP_PERIOD_S * sample_rate_hz - 1e-9))
    # position in chip periods; integer arithmetic keeps 4 MHz sampling exact
    pos = np.arange(n_samples) * (CHIP_RATE_HZ / sample_rate_hz)
    k = np.floor(pos + 1e-12).astype(np.int64)
    theta = (pos - k) * (np.pi / 2)
    rising = np.where(k < n_chips, c[np.clip(k, 0, n_chips - 1)], 0.0) * np.sin(theta)
    falling = np.where(
        (k >= 1) & (k - 1 < n_chips), c[np.clip(k - 1, 0, n_chips - 1)], 0.0
    ) * np.cos(theta)
    even = (k % 2) == 0
    i = np.where(even, rising, falling)
    q = np.where(even, falling, rising)
    return IqWaveform(i + 1j * q, sample_rate_hz)


def modulate(frame: ZigbeeFrame, sample_rate_hz: float = RX_RATE_HZ) -> IqWaveform:
    """64 samples per symbol at 4 MHz plus a 2-sample pulse tail."""
    return modulate_chips(frame.chips(), sample_rate_hz)


# --- demodulation -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChipDecision:
    chips: np.ndarray  # 32 x {0,1}
    soft_quality: np.ndarray  # 32 x [0,1]

    def __post_init__(self):
        if np.shape(self.chips) != (CHIPS_PER_SYMBOL,):
            raise ValueError(f"expected {CHIPS_PER_SYMBOL} chips, got {np.shape(self.chips)}")


@dataclass(frozen=True)
class SymbolDecode:
    symbol: int
    hamming: int
    runner_up_gap: int


def chip_phase_shifts(w: IqWaveform) -> np.ndarray:
    """Total phase rotation across every complete chip period of ``w``.

    Chip period ``K`` spans samples ``2K .. 2K+2``, so its rotation is the sum
    of two consecutive phase shifts (ideally +-pi/2).
    """
    s = w.samples
    n_chips = (s.size - 1) // SAMPLES_PER_CHIP
    if n_chips <= 0:
        return np.zeros(0)
    ps = phase_shift_series(s)
    return ps[0 : 2 * n_chips : 2] + ps[1 : 2 * n_chips : 2]


def decide_chips(rotation: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Positive rotation -> chip 1, negative -> chip 0, with |rotation|/(pi/2) as quality."""
    return (rotation > 0).astype(np.uint8), np.clip(np.abs(rotation) / (np.pi / 2), 0.0, 1.0)


def demodulate_chips(w: IqWaveform, symbol_index: int) -> ChipDecision:
    """Phase-shift chip decisions for one symbol window of an aligned waveform.

    The chips are in the phase-rotation domain; compare them against
    :data:`RX_TABLE`, the PN table as a phase-shift receiver sees it.
    """
    if w.sample_rate_hz != RX_RATE_HZ:
        raise ValueError(f"demodulator runs at {RX_RATE_HZ} Hz, got {w.sample_rate_hz}")
    n_sym = available_symbols(w)
    if not 0 <= symbol_index < n_sym:
        raise IndexError(f"symbol window {symbol_index} outside 0..{n_sym - 1}")
    lo = symbol_index * SAMPLES_PER_SYMBOL
    window = w.samples[lo : lo + SAMPLES_PER_SYMBOL + 1]
    chips, soft = decide_chips(chip_phase_shifts(IqWaveform(window, w.sample_rate_hz)))
    return ChipDecision(chips, soft)


def available_symbols(w: IqWaveform) -> int:
    # the last chip period ends on the first sample of the next window
    return max(0, (len(w) - 1) // SAMPLES_PER_SYMBOL)


def decode_symbol(c: ChipDecision | np.ndarray, table: PnTable = PN_TABLE) -> SymbolDecode:
    chips = c.chips if isinstance(c, ChipDecision) else np.asarray(c)
    dists = np.count_nonzero((table.sequences != chips[None, :]) & table.mask, axis=1)
    best = int(np.argmin(dists))
    ordered = np.sort(dists)
    return SymbolDecode(best, int(dists[best]), int(ordered[1] - ordered[0]))


def decode_chip_matrix(chips: np.ndarray, table: PnTable = PN_TABLE) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized nearest-PN decode of an ``(n, 32)`` chip matrix."""
    dists = np.count_nonzero((chips[:, None, :] != table.sequences[None, :, :]) & table.mask, axis=2)
    best = np.argmin(dists, axis=1)
    ordered = np.sort(dists, axis=1)
    return best, ordered[:, 0], ordered[:, 1] - ordered[:, 0]


# --- synchronization --------------------------------------------------------

_SYNC_SYMBOLS = PREAMBLE_SYMBOLS + 2
_SYNC_TEMPLATE = modulate_chips(
    PN_TABLE.sequences[np.concatenate([np.zeros(PREAMBLE_SYMBOLS, int), [SFD & 0xF, SFD >> 4]])].reshape(-1)
).samples[: _SYNC_SYMBOLS * SAMPLES_PER_SYMBOL]

ALIGN_SEARCH = 1000
ALIGN_FLOOR = 0.3


def preamble_correlation(w: IqWaveform, search: int = ALIGN_SEARCH) -> np.ndarray:
    """Normalized |cross-correlation| against preamble+SFD for each start offset."""
    tpl = _SYNC_TEMPLATE
    L = tpl.size
    s = w.samples
    n_off = min(search + 1, s.size - L + 1)
    if n_off <= 0:
        return np.zeros(0)
    seg = s[: n_off + L - 1]
    raw = np.abs(correlate(seg, tpl, mode="valid", method="fft"))
    energy = np.concatenate([[0.0], np.cumsum(np.abs(seg) ** 2)])
    local = energy[L : L + n_off] - energy[:n_off]
    denom = np.sqrt(np.maximum(local, 1e-30) * np.sum(np.abs(tpl) ** 2))
    return raw[:n_off] / denom


def align_preamble(w: IqWaveform, floor: float = ALIGN_FLOOR) -> int:
    corr = preamble_correlation(w)
    if corr.size == 0 or corr.max() < floor:
        peak = 0.0 if corr.size == 0 else float(corr.max())
        raise NoFrameFound(f"preamble correlation peak {peak:.3f} below floor {floor}")
    return int(np.argmax(corr))


@dataclass(frozen=True, eq=False)
class FrameDecode:
    offset: int
    decodes: list
    chips: np.ndarray  # (n_symbols, 32)
    soft_quality: np.ndarray  # (n_symbols, 32)
    symbols: np.ndarray
    length_byte: int | None
    payload: bytes | None
    fcs_ok: bool
    aligned: IqWaveform = field(repr=False)

    @property
    def hamming(self) -> np.ndarray:
        return np.array([d.hamming for d in self.decodes], dtype=int)


def decode_aligned(aligned: IqWaveform, offset: int = 0) -> FrameDecode:
    """Decode every complete symbol window of a waveform starting at the frame."""
    n_sym = available_symbols(aligned)
    chips, soft = decide_chips(chip_phase_shifts(aligned)[: n_sym * CHIPS_PER_SYMBOL])
    chips = chips.reshape(n_sym, CHIPS_PER_SYMBOL)
    soft = soft.reshape(n_sym, CHIPS_PER_SYMBOL)
    best, ham, gap = decode_chip_matrix(chips, RX_TABLE)
    decodes = [SymbolDecode(int(b), int(h), int(g)) for b, h, g in zip(best, ham, gap)]

    length_byte = payload = None
    fcs_ok = False
    if n_sym >= HEADER_SYMBOLS:
        raw = symbols_to_bytes(best)
        length_byte = raw[HEADER_SYMBOLS // 2 - 1] & 0x7F
        end = HEADER_SYMBOLS // 2 + length_byte
        if 2 <= length_byte and end <= len(raw):
            body = raw[HEADER_SYMBOLS // 2 : end]
            payload = body[:-2]
            sfd_ok = raw[PREAMBLE_SYMBOLS // 2] == SFD
            fcs_ok = sfd_ok and crc16(payload) == int.from_bytes(body[-2:], "little")
    return FrameDecode(offset, decodes, chips, soft, best.astype(np.uint8), length_byte, payload, fcs_ok, aligned)


def decode_frame(w: IqWaveform) -> FrameDecode:
    """Align on the preamble, decode all symbols, and check the FCS.

    Raises :class:`NoFrameFound` when alignment fails.
    """
    if w.sample_rate_hz != RX_RATE_HZ:
        raise ValueError(f"decoder runs at {RX_RATE_HZ} Hz, got {w.sample_rate_hz}")
    offset = align_preamble(w)
    return decode_aligned(w.slice(offset, len(w)), offset)
