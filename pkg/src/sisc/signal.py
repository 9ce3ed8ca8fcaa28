"""Signal containers, 1-D convolution, padded DFTs, excerpting and spectrograms.

The forward DFT is unnormalized (``numpy.fft.fft``), so for any vector ``a``
zero-padded to length ``p`` the Parseval constant is ``p``::

    ||dft_padded(a, p)||^2 == p * ||a||^2
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve
from scipy.signal.windows import tukey

from . import _accel
from .errors import FormatError, InvalidArgument, SymmetryViolation

# convolutions with both operands longer than this go through the FFT
DIRECT_CONV_MAX = 64

SIGNAL_MAGIC = b"SISG"
SIGNAL_VERSION = 1


@dataclass(frozen=True)
class Signal:
    """A real, possibly multichannel, fixed-rate 1-D sequence.

    ``samples`` has shape ``(F, p)``; a 1-D array is promoted to one channel.
    The stored array is a read-only copy.
    """

    samples: np.ndarray
    sample_rate_hz: float = 1.0
    id: str = ""

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidArgument(f"signal samples must be (F, p) with F, p >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgument("signal samples must be finite")
        if not self.sample_rate_hz > 0:
            raise InvalidArgument("sample rate must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    def with_samples(self, samples, id: str | None = None) -> "Signal":
        return Signal(samples, self.sample_rate_hz, self.id if id is None else id)


def as_samples(x) -> np.ndarray:
    """Return ``x`` (Signal or array) as a float64 ``(F, p)`` array."""
    if isinstance(x, Signal):
        return x.samples
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InvalidArgument(f"expected a 1-D or (F, p) array, got shape {arr.shape}")
    return arr


# --------------------------------------------------------------------------
# convolution and transforms
# --------------------------------------------------------------------------


def conv1d(f, g) -> np.ndarray:
    """Full linear convolution, ``len(f) + len(g) - 1`` samples.

    ``h[t] = sum_tau f[tau] g[t - tau]``. Short operands use direct
    summation, long ones an FFT product.
    """
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f.ndim != 1 or g.ndim != 1:
        raise InvalidArgument("conv1d expects 1-D vectors")
    if f.size == 0 or g.size == 0:
        raise InvalidArgument("conv1d operands must be nonempty")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
        raise InvalidArgument("conv1d operands must be finite")
    if min(f.size, g.size) > DIRECT_CONV_MAX:
        return fftconvolve(f, g)
    return _accel.direct_conv(f, g)


def conv1d_channels(f, g) -> np.ndarray:
    """Channelwise :func:`conv1d` of two ``(F, *)`` arrays."""
    f = np.atleast_2d(f)
    g = np.atleast_2d(g)
    if f.shape[0] != g.shape[0]:
        raise InvalidArgument("channel counts differ")
    return np.stack([conv1d(a, b) for a, b in zip(f, g)])


def dft_padded(a, p: int) -> np.ndarray:
    """Unnormalized DFT of ``a`` after zero-padding it to length ``p``."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] > p:
        raise InvalidArgument(f"cannot pad length {a.shape[-1]} to shorter length {p}")
    return np.fft.fft(a, n=p, axis=-1)


def is_conjugate_symmetric(ahat, rtol: float = 1e-9) -> bool:
    ahat = np.asarray(ahat)
    mirrored = np.conj(np.roll(ahat[..., ::-1], 1, axis=-1))
    scale = max(np.max(np.abs(ahat), initial=0.0), 1e-300)
    return bool(np.max(np.abs(ahat - mirrored), initial=0.0) <= rtol * scale)


def idft_real(ahat, rtol: float = 1e-9) -> np.ndarray:
    """Inverse of :func:`dft_padded` for spectra of real signals."""
    ahat = np.asarray(ahat, dtype=np.complex128)
    if not is_conjugate_symmetric(ahat, rtol):
        raise SymmetryViolation("spectrum is not conjugate-symmetric")
    return np.fft.ifft(ahat, axis=-1).real


# --------------------------------------------------------------------------
# excerpting
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TaperWindow:
    """Flat-topped window with Hann-shaped ramps over ``taper_fraction`` of each end."""

    shape: str = "hann_taper"
    taper_fraction: float = 0.1

    def __post_init__(self):
        if self.shape != "hann_taper":
            raise InvalidArgument(f"unknown taper shape {self.shape!r}")
        if not 0.0 < self.taper_fraction <= 0.5:
            raise InvalidArgument("taper_fraction must lie in (0, 0.5]")

    def values(self, length: int) -> np.ndarray:
        return tukey(length, alpha=2.0 * self.taper_fraction, sym=True)


def excerpt(x: Signal, excerpt_len: int, taper: TaperWindow | None | bool = None,
            hop: int | None = None) -> list[Signal]:
    """Cut ``x`` into tapered excerpts of ``excerpt_len`` samples.

    Non-overlapping by default (``hop = excerpt_len``); a trailing partial
    slice is dropped. A signal shorter than one excerpt yields ``[]``.
    ``taper=None`` applies the default window and ``taper=False`` none at all.
    """
    if excerpt_len < 1:
        raise InvalidArgument("excerpt_len must be >= 1")
    hop = excerpt_len if hop is None else hop
    if hop < 1:
        raise InvalidArgument("hop must be >= 1")
    if taper is None or taper is True:
        taper = TaperWindow()
    data = as_samples(x)
    p = data.shape[1]
    if excerpt_len > p:
        return []
    win = taper.values(excerpt_len) if taper is not False else 1.0
    rate = x.sample_rate_hz if isinstance(x, Signal) else 1.0
    base_id = x.id if isinstance(x, Signal) else ""
    out = []
    for k, start in enumerate(range(0, p - excerpt_len + 1, hop)):
        piece = data[:, start:start + excerpt_len] * win
        out.append(Signal(piece, rate, f"{base_id}#{k}"))
    return out


# --------------------------------------------------------------------------
# spectrograms
# --------------------------------------------------------------------------


def make_freq_grid(lo_hz: float, hi_hz: float, count: int, spacing: str = "linear") -> np.ndarray:
    """Evenly spaced frequencies, on a linear or logarithmic axis."""
    if spacing == "linear":
        return np.linspace(lo_hz, hi_hz, count)
    if spacing == "log":
        return np.geomspace(lo_hz, hi_hz, count)
    raise InvalidArgument(f"unknown spacing {spacing!r}")


def spectrogram(waveform: Signal, window_len: int, overlap_fraction: float,
                freq_grid: Sequence[float], scale: str = "linear") -> Signal:
    """Short-time magnitude spectrum evaluated directly at ``freq_grid``.

    Frames use a symmetric Hamming window. The result has one channel per
    requested frequency and one sample per frame; ``scale='log'`` returns
    ``log(magnitude + 1e-10)``.
    """
    data = as_samples(waveform)
    if data.shape[0] != 1:
        raise InvalidArgument("spectrogram expects a single-channel waveform")
    if window_len < 2:
        raise InvalidArgument("window_len must be >= 2")
    if not 0.0 <= overlap_fraction < 1.0:
        raise InvalidArgument("overlap_fraction must lie in [0, 1)")
    if scale not in ("linear", "log"):
        raise InvalidArgument(f"unknown scale {scale!r}")
    fs = waveform.sample_rate_hz if isinstance(waveform, Signal) else 1.0
    freqs = np.asarray(freq_grid, dtype=np.float64)
    if freqs.ndim != 1 or freqs.size == 0:
        raise InvalidArgument("freq_grid must be a nonempty 1-D list")
    if np.any(np.diff(freqs) <= 0):
        raise InvalidArgument("freq_grid must be strictly increasing")
    if freqs[0] < 0 or freqs[-1] > fs / 2:
        raise InvalidArgument("freq_grid must lie in [0, Nyquist]")
    x = data[0]
    if x.size < window_len:
        raise InvalidArgument("waveform shorter than one analysis window")
    hop = max(1, int(round(window_len * (1.0 - overlap_fraction))))
    frames = np.lib.stride_tricks.sliding_window_view(x, window_len)[::hop]
    frames = frames * np.hamming(window_len)
    n = np.arange(window_len)
    basis = np.exp(-2j * np.pi * np.outer(freqs, n) / fs)  # (nfreq, L)
    mag = np.abs(basis @ frames.T)  # (nfreq, frames)
    if scale == "log":
        mag = np.log(mag + 1e-10)
    return Signal(mag, fs / hop, waveform.id if isinstance(waveform, Signal) else "")


# --------------------------------------------------------------------------
# I/O
# --------------------------------------------------------------------------


def read_wav(path) -> Signal:
    """Read a mono PCM WAV file (16-bit integer or 32-bit float)."""
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise FormatError("only mono WAV files are supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"unsupported WAV sample type {data.dtype}")
    return Signal(samples, float(rate), Path(path).stem)


def write_wav(path, signal: Signal, dtype: str = "float32") -> None:
    data = as_samples(signal)
    if data.shape[0] != 1:
        raise InvalidArgument("only mono WAV output is supported")
    x = data[0]
    if dtype == "int16":
        out = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    elif dtype == "float32":
        out = x.astype("<f4")
    else:
        raise InvalidArgument(f"unsupported WAV dtype {dtype!r}")
    wavfile.write(str(path), int(round(signal.sample_rate_hz)), out)


def save_signal(path, signal: Signal) -> None:
    """Write the flat ``SISG`` binary layout (little-endian, channel-major)."""
    data = as_samples(signal)
    nf, p = data.shape
    with open(path, "wb") as fh:
        fh.write(SIGNAL_MAGIC)
        fh.write(struct.pack("<IIId", SIGNAL_VERSION, nf, p, signal.sample_rate_hz))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_signal(path) -> Signal:
    raw = Path(path).read_bytes()
    head = struct.calcsize("<IIId")
    if raw[:4] != SIGNAL_MAGIC or len(raw) < 4 + head:
        raise FormatError(f"{path}: not a SISG signal file")
    version, nf, p, rate = struct.unpack("<IIId", raw[4:4 + head])
    if version != SIGNAL_VERSION:
        raise FormatError(f"{path}: unsupported SISG version {version}")
    body = raw[4 + head:]
    if len(body) != 8 * nf * p:
        raise FormatError(f"{path}: truncated SISG payload")
    data = np.frombuffer(body, dtype="<f8").reshape(nf, p)
    return Signal(data, rate, Path(path).stem)
