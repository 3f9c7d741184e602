"""Audio buffers, WAV I/O, resampling, STFT and log-Mel features.

Amplitudes are stored as float64 internally regardless of file bit depth
so downstream gradient checks stay meaningful.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import upfirdn

from .errors import FormatError

__all__ = [
    "SampleBuffer",
    "FrameLayout",
    "MelSpectrogram",
    "read_wav",
    "write_wav",
    "resample",
    "stft",
    "mel_filterbank",
    "mel_spectrogram",
    "MelTransform",
]


@dataclass
class SampleBuffer:
    """Mono audio: a float64 sample vector plus its sample rate.

    Amplitudes are nominally in [-1, 1]; nothing enforces the range until
    the signal is written to disk.
    """

    samples: np.ndarray
    rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")
        if self.rate != int(self.rate) or int(self.rate) <= 0:
            raise ValueError("rate must be a positive integer")
        self.rate = int(self.rate)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.rate


@dataclass(frozen=True)
class FrameLayout:
    """Slot/frame geometry for piecewise-constant all-pole modelling.

    slot_len consecutive samples share one coefficient set; n_slots slots
    make one frame; order is the number of predictor taps.
    """

    slot_len: int = 46
    n_slots: int = 120
    order: int = 11

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.n_slots < 1:
            raise ValueError("n_slots must be >= 1")
        if self.slot_len < self.order:
            raise ValueError("slot_len must be >= order")

    @property
    def frame_len(self) -> int:
        return self.slot_len * self.n_slots


@dataclass
class MelSpectrogram:
    """Log-Mel energies (frames x n_mels) with the analysis parameters."""

    data: np.ndarray
    rate: int
    win_s: float
    hop_s: float
    fft_size: int
    floor: float = 1e-10


# ---------------------------------------------------------------------------
# WAV I/O


def read_wav(path) -> SampleBuffer:
    """Read a RIFF/WAVE file (PCM16 or IEEE float32, mono preferred).

    Stereo content triggers a warning and only the first channel is kept.
    16-bit samples are scaled by 2^-15.  Corrupt or truncated content
    raises FormatError; a missing path raises the underlying OSError.
    """
    try:
        rate, data = wavfile.read(path)
    except OSError:
        raise
    except Exception as exc:
        raise FormatError(f"cannot parse WAV file {path}: {exc}") from exc
    if data.ndim == 2:
        warnings.warn("stereo file: taking first channel only")
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"unsupported sample format {data.dtype} in {path}")
    return SampleBuffer(samples, int(rate))


def write_wav(path, buf: SampleBuffer, bit_depth: str = "16") -> None:
    """Write a SampleBuffer as PCM16 ("16") or IEEE float32 ("32f").

    Samples outside [-1, 1] are clipped with a warning.  PCM16 scaling is
    round(x * 32768) clipped to the int16 range, so read_wav(write_wav(x))
    is within one quantization step (1/2^15) of x.
    """
    if bit_depth not in ("16", "32f"):
        raise ValueError("bit_depth must be '16' or '32f'")
    x = buf.samples
    if x.size and np.max(np.abs(x)) > 1.0:
        warnings.warn("samples outside [-1, 1] clipped on write")
        x = np.clip(x, -1.0, 1.0)
    if bit_depth == "16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(path, buf.rate, data)


# ---------------------------------------------------------------------------
# Resampling


def _resample_filter(up: int, down: int) -> np.ndarray:
    """Kaiser windowed-sinc lowpass for a rational up/down converter.

    64 taps per phase, beta = 8.  Each polyphase branch is normalized to
    unit sum so constant inputs pass through at unit gain.
    """
    max_rate = max(up, down)
    n_taps = 64 * max_rate + 1
    cutoff = 0.5 / max_rate  # cycles/sample on the up-rate grid
    n = np.arange(n_taps) - (n_taps - 1) // 2
    h = 2.0 * cutoff * np.sinc(2.0 * cutoff * n) * np.kaiser(n_taps, 8.0)
    for phase in range(up):
        h[phase::up] /= h[phase::up].sum()
    return h


def _resample_core(x: np.ndarray, up: int, down: int) -> np.ndarray:
    """Polyphase resample implementing y[m] = sum_k h[m*down + s - k*up] x[k].

    s is the filter center, so output sample m sits at input time
    m*down/up and duration is preserved within one sample.
    """
    h = _resample_filter(up, down)
    s = (len(h) - 1) // 2
    n_out = int(round(len(x) * up / down))
    # Left-pad so the centered output grid lands on upfirdn's native grid.
    p = (-s * pow(up, -1, down)) % down
    t = (s + p * up) // down
    w = upfirdn(h, np.concatenate([np.zeros(p), x]), up, down)
    y = w[t : t + n_out]
    if y.size < n_out:
        y = np.pad(y, (0, n_out - y.size))
    return y


def _resample_core_adjoint(g: np.ndarray, n_in: int, up: int, down: int) -> np.ndarray:
    """Transpose of _resample_core as a linear map, for gradient flow.

    Intended for the small-ratio (2:1, 1:2) paths the enhancer uses;
    cost grows with filter length for exotic ratios.
    """
    h = _resample_filter(up, down)
    s = (len(h) - 1) // 2
    dx = np.zeros(n_in)
    base = np.arange(g.size) * down + s
    for j in range(len(h)):
        num = base - j
        ok = num % up == 0
        k = num[ok] // up
        sel = (k >= 0) & (k < n_in)
        np.add.at(dx, k[sel], h[j] * g[ok][sel])
    return dx


def resample(buf: SampleBuffer, target_rate: int) -> SampleBuffer:
    """Resample to target_rate with a Kaiser windowed-sinc polyphase filter.

    The rate ratio must be rational (always true for integer rates); 2:1
    and 1:2 are the paths the rest of the package relies on.
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == buf.rate:
        return SampleBuffer(buf.samples.copy(), buf.rate)
    g = math.gcd(target_rate, buf.rate)
    up, down = target_rate // g, buf.rate // g
    return SampleBuffer(_resample_core(buf.samples, up, down), target_rate)


# ---------------------------------------------------------------------------
# STFT


def _window(kind: str, n: int) -> np.ndarray:
    # periodic Hann so hop-aligned analysis does not favor frame edges
    if kind == "hann":
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    if kind == "rect":
        return np.ones(n)
    raise ValueError(f"unknown window {kind!r}")


def _frame_signal(x: np.ndarray, win_len: int, hop: int) -> np.ndarray:
    n_frames = (x.size - win_len) // hop + 1
    return np.lib.stride_tricks.sliding_window_view(x, win_len)[:: hop][:n_frames]


def stft(buf: SampleBuffer, fft_size: int = 2048, win_len=None, hop=None,
         window: str = "hann") -> np.ndarray:
    """Short-time Fourier transform, (n_frames, fft_size//2 + 1) complex.

    Frames start at multiples of hop with no signal padding, so
    n_frames = floor((n - win_len)/hop) + 1; each windowed frame is
    zero-padded at its end to fft_size before the real FFT.  A buffer
    shorter than one window yields an empty (0, bins) array.
    """
    if win_len is None:
        win_len = fft_size
    if hop is None:
        hop = win_len // 2
    if win_len > fft_size:
        raise ValueError("win_len must be <= fft_size")
    if not 1 <= hop <= win_len:
        raise ValueError("hop must be in [1, win_len]")
    x = buf.samples
    if x.size < win_len:
        return np.zeros((0, fft_size // 2 + 1), dtype=np.complex128)
    frames = _frame_signal(x, win_len, hop)
    return np.fft.rfft(frames * _window(window, win_len), n=fft_size, axis=1)


# ---------------------------------------------------------------------------
# Mel


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(rate: int, fft_size: int, n_mels: int = 80,
                   fmin: float = 0.0, fmax=None) -> np.ndarray:
    """Triangular HTK-mel filterbank (n_mels, fft_size//2 + 1), peak 1.

    Centers are equally spaced on the 2595*log10(1 + f/700) scale between
    fmin and fmax; adjacent triangles cross at half height.
    """
    if fmax is None:
        fmax = rate / 2.0
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * rate / fft_size
    fb = np.zeros((n_mels, freqs.size))
    for i in range(n_mels):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        rise = (freqs - lo) / max(center - lo, 1e-12)
        fall = (hi - freqs) / max(hi - center, 1e-12)
        fb[i] = np.clip(np.minimum(rise, fall), 0.0, 1.0)
    return fb


class MelTransform:
    """Log-Mel analysis chain with a hand-derived adjoint.

    forward() computes log(power-mel + floor) frames; vjp() maps a
    gradient on that array back to the input samples.  The chain is
    reflect-pad -> frame -> Hann window -> rFFT -> |.|^2 -> filterbank
    -> log, every stage of which is differentiated exactly.
    """

    def __init__(self, rate: int, n_mels: int = 80, fft_size: int = 2048,
                 win_s: float = 0.05, hop_s: float = 0.0125,
                 fmin: float = 0.0, fmax=None, floor: float = 1e-10):
        self.rate = int(rate)
        self.n_mels = n_mels
        self.fft_size = fft_size
        self.win_s = win_s
        self.hop_s = hop_s
        self.floor = floor
        self.win_len = int(round(win_s * rate))
        self.hop = max(1, int(round(hop_s * rate)))
        if self.win_len > fft_size:
            raise ValueError("window longer than fft_size")
        if self.win_len < 2:
            raise ValueError("window must cover at least 2 samples")
        self.pad = self.win_len // 2
        self.window = _window("hann", self.win_len)
        self.fb = mel_filterbank(rate, fft_size, n_mels, fmin, fmax)

    def forward(self, x: np.ndarray):
        """Return (logmel, cache); cache feeds vjp()."""
        if x.size <= self.pad:
            raise ValueError("buffer too short for reflect padding")
        padded = np.pad(x, self.pad, mode="reflect")
        frames = _frame_signal(padded, self.win_len, self.hop)
        spec = np.fft.rfft(frames * self.window, n=self.fft_size, axis=1)
        melp = (spec.real ** 2 + spec.imag ** 2) @ self.fb.T
        logm = np.log(melp + self.floor)
        return logm, (x.size, spec, melp)

    def vjp(self, cache, grad: np.ndarray) -> np.ndarray:
        """Backpropagate d(loss)/d(logmel) to d(loss)/d(samples)."""
        n, spec, melp = cache
        dpow = (grad / (melp + self.floor)) @ self.fb
        dspec = 2.0 * dpow * spec
        # rFFT adjoint: interior bins appear twice in the Hermitian
        # extension, so halve them before reusing irfft.
        half = dspec.copy()
        if self.fft_size % 2 == 0:
            half[:, 1:-1] *= 0.5
        else:
            half[:, 1:] *= 0.5
        dframes = np.fft.irfft(half, n=self.fft_size, axis=1) * self.fft_size
        dframes = dframes[:, : self.win_len] * self.window
        dpadded = np.zeros(n + 2 * self.pad)
        for i in range(dframes.shape[0]):
            start = i * self.hop
            dpadded[start : start + self.win_len] += dframes[i]
        return self._pad_adjoint(dpadded, n)

    def _pad_adjoint(self, dpadded: np.ndarray, n: int) -> np.ndarray:
        pad = self.pad
        dx = dpadded[pad : pad + n].copy()
        if pad:
            dx[1 : pad + 1] += dpadded[:pad][::-1]
            dx[n - 1 - pad : n - 1] += dpadded[pad + n :][::-1]
        return dx


def mel_spectrogram(buf: SampleBuffer, n_mels: int = 80, fft_size: int = 2048,
                    win_s: float = 0.05, hop_s: float = 0.0125,
                    fmin: float = 0.0, fmax=None,
                    floor: float = 1e-10) -> MelSpectrogram:
    """80-channel log-Mel spectrogram (50 ms window / 12.5 ms hop defaults).

    The window and hop are specified in seconds so other rates scale; the
    signal is reflect-padded by half a window so frame centers align with
    the hop grid.  Silence maps to log(floor) in every cell.
    """
    xform = MelTransform(buf.rate, n_mels, fft_size, win_s, hop_s, fmin, fmax, floor)
    data, _ = xform.forward(buf.samples)
    return MelSpectrogram(data, buf.rate, win_s, hop_s, fft_size, floor)
