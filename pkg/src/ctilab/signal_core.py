"""Complex-baseband containers and the DSP primitives shared by the lab.

A waveform is a read-only ``complex128`` numpy array plus its sample rate.
Each element is one I/Q sample (real part I, imaginary part Q), scaled so a
unit-power signal has mean ``|s|**2 == 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import signal as sps
from scipy.interpolate import CubicSpline

#: Rate every air-side waveform is synthesized and mixed at.
SIM_RATE_HZ = 22e6
#: Receiver rate after decimation: 2 samples per 802.15.4 chip.
RX_RATE_HZ = 4e6
#: Receive low-pass cutoff (victim channel is 2 MHz wide either side of DC).
RX_CUTOFF_HZ = 2e6
#: Low-pass design length (odd, so the group delay is an integer).
LPF_TAPS = 63


class RateMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class IqWaveform:
    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        arr = np.array(self.samples, dtype=np.complex128).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("waveform contains non-finite samples")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def mean_power(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.mean(np.abs(self.samples) ** 2))

    def with_samples(self, samples) -> "IqWaveform":
        return IqWaveform(samples, self.sample_rate_hz)

    def slice(self, start: int, stop: int) -> "IqWaveform":
        return IqWaveform(self.samples[start:stop], self.sample_rate_hz)

    def equals(self, other: "IqWaveform") -> bool:
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and np.array_equal(self.samples, other.samples)
        )


@dataclass(frozen=True)
class NoiseSpec:
    """Complex AWGN description.

    ``variance_per_component`` applies to I and Q separately, so the complex
    noise power is twice that. Samples come from numpy's PCG64 generator
    seeded with ``seed``; for ``n`` samples it draws ``2n`` standard normals
    as an ``(n, 2)`` array, column 0 feeding I and column 1 feeding Q.
    """

    variance_per_component: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.variance_per_component >= 0:
            raise ValueError("variance_per_component must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


def add_waveforms(a: IqWaveform, b: IqWaveform) -> IqWaveform:
    """Element-wise sum; the shorter input is zero-padded at its tail."""
    if a.sample_rate_hz != b.sample_rate_hz:
        raise RateMismatchError(
            f"cannot add waveforms at {a.sample_rate_hz} Hz and {b.sample_rate_hz} Hz"
        )
    n = max(len(a), len(b))
    out = np.zeros(n, dtype=np.complex128)
    out[: len(a)] += a.samples
    out[: len(b)] += b.samples
    return IqWaveform(out, a.sample_rate_hz)


def scale(w: IqWaveform, gain: complex) -> IqWaveform:
    gain = complex(gain)
    if not np.isfinite(gain):
        raise ValueError(f"gain must be finite, got {gain}")
    return w.with_samples(w.samples * gain)


def add_awgn(w: IqWaveform, noise: NoiseSpec) -> IqWaveform:
    if noise.variance_per_component == 0:
        return w
    return w.with_samples(w.samples + awgn_samples(len(w), noise))


def awgn_samples(n: int, noise: NoiseSpec) -> np.ndarray:
    rng = np.random.default_rng(int(noise.seed))
    draws = rng.standard_normal((n, 2))
    sigma = np.sqrt(noise.variance_per_component)
    return sigma * (draws[:, 0] + 1j * draws[:, 1])


def frequency_shift(w: IqWaveform, offset_hz: float) -> IqWaveform:
    if abs(offset_hz) >= w.sample_rate_hz / 2:
        raise ValueError(
            f"offset {offset_hz} Hz is beyond Nyquist for {w.sample_rate_hz} Hz sampling"
        )
    if offset_hz == 0:
        return w
    n = np.arange(len(w))
    return w.with_samples(w.samples * np.exp(2j * np.pi * offset_hz * n / w.sample_rate_hz))


def lowpass_taps(cutoff_hz: float, sample_rate_hz: float, numtaps: int = LPF_TAPS) -> np.ndarray:
    """Hamming-windowed sinc with unity DC gain."""
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise ValueError(
            f"cutoff {cutoff_hz} Hz must lie in (0, {sample_rate_hz / 2}) Hz"
        )
    return sps.firwin(numtaps, cutoff_hz, window="hamming", fs=sample_rate_hz)


def low_pass_filter(w: IqWaveform, cutoff_hz: float, numtaps: int = LPF_TAPS) -> IqWaveform:
    """Linear-phase FIR low-pass with the group delay removed.

    Output sample ``n`` lines up with input sample ``n``; the input is treated
    as zero outside its support.
    """
    taps = lowpass_taps(cutoff_hz, w.sample_rate_hz, numtaps)
    if len(w) == 0:
        return w
    delay = (numtaps - 1) // 2
    full = np.convolve(w.samples, taps)
    return w.with_samples(full[delay : delay + len(w)])


def rssi_series(w: IqWaveform) -> np.ndarray:
    """Per-sample linear power ``i**2 + q**2``."""
    s = w.samples
    return s.real**2 + s.imag**2


def phase_shift_series(w: IqWaveform | np.ndarray) -> np.ndarray:
    """Angle between consecutive samples, in (-pi, pi]."""
    s = w.samples if isinstance(w, IqWaveform) else np.asarray(w)
    if s.size < 2:
        raise ValueError("phase shifts need at least two samples")
    ang = np.angle(s[1:] * np.conj(s[:-1]))
    ang[ang <= -np.pi] = np.pi
    return ang


class Autocorrelation(NamedTuple):
    values: np.ndarray  # lags 1..max_lag
    degenerate: bool  # input had zero variance


def autocorrelation(x, max_lag: int) -> Autocorrelation:
    """Biased, mean-removed autocorrelation normalized by the lag-0 value."""
    x = np.asarray(x, dtype=float)
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if x.size < 2 * max_lag:
        raise ValueError(f"need at least {2 * max_lag} samples for max_lag={max_lag}, got {x.size}")
    d = x - x.mean()
    energy = float(np.dot(d, d))
    if energy <= 1e-12 * max(1.0, float(np.dot(x, x))):
        return Autocorrelation(np.zeros(max_lag), True)
    n = d.size
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(d, nfft)
    acf = np.fft.irfft(spec * np.conj(spec), nfft)[1 : max_lag + 1]
    return Autocorrelation(np.clip(acf / energy, -1.0, 1.0), False)


def resample_at(w: IqWaveform, times_s: np.ndarray, out_rate_hz: float) -> IqWaveform:
    """Evaluate ``w`` at arbitrary instants by cubic-spline interpolation.

    Instants outside the waveform's support read as zero. The map from input
    samples to output samples is linear, so superposition holds.
    """
    pad = 4
    padded = np.concatenate([np.zeros(pad), w.samples, np.zeros(pad)])
    grid = (np.arange(padded.size) - pad) / w.sample_rate_hz
    spline = CubicSpline(grid, padded, bc_type="natural")
    t = np.asarray(times_s, dtype=float)
    out = spline(t)
    out[(t < grid[0]) | (t > grid[-1])] = 0
    return IqWaveform(out, out_rate_hz)


# --- iq32 files -------------------------------------------------------------


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_iq32(path, w: IqWaveform, description: str = "") -> Path:
    """Write interleaved little-endian float32 I/Q plus a JSON sidecar."""
    path = Path(path)
    inter = np.empty(2 * len(w), dtype="<f4")
    inter[0::2] = w.samples.real
    inter[1::2] = w.samples.imag
    path.write_bytes(inter.tobytes())
    meta = {"sample_rate_hz": w.sample_rate_hz, "description": description}
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_iq32(path) -> tuple[IqWaveform, str]:
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size % 2:
        raise ValueError(f"{path}: odd number of float32 values, not interleaved I/Q")
    samples = raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
    return IqWaveform(samples, float(meta["sample_rate_hz"])), meta.get("description", "")
