"""Transmission-loss channel simulation.

A partition is modeled by a sampled sound-transmission-loss curve (mass
law, optionally flattened above half the critical frequency), realized
as a linear-phase FIR by frequency sampling, plus pink background noise
mixed at an exact SNR.  Distorted/clean pair construction for corpus
building lives here too.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .audio import SampleBuffer
from .errors import EmptyUtteranceError, ManifestError

__all__ = [
    "StlCurve",
    "FirChannel",
    "CHANNEL_PRESETS",
    "mass_law_stl",
    "sharp_plateau_stl",
    "channel_preset",
    "design_fir",
    "pink_noise",
    "mix_at_snr",
    "trim_silence",
    "make_pair",
    "read_manifest",
    "write_manifest",
]

# mass-law reference offset: loss_db = 20 log10(f * surface_density) - 47
MASS_LAW_OFFSET_DB = 47.0


@dataclass
class StlCurve:
    """Sampled sound-transmission-loss curve: loss_db over an ascending
    frequency grid in (0, Nyquist].  Between points the loss is taken
    linear in (log f, dB); beyond the ends it holds the edge values."""

    grid: np.ndarray
    loss_db: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.loss_db = np.asarray(self.loss_db, dtype=np.float64)
        if self.grid.ndim != 1 or self.grid.shape != self.loss_db.shape:
            raise ValueError("grid and loss_db must be matching 1-D arrays")
        if self.grid.size < 1 or self.grid[0] <= 0.0 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be ascending and strictly positive")
        if not np.all(np.isfinite(self.loss_db)) or np.any(self.loss_db < 0):
            raise ValueError("loss must be finite and >= 0")

    def loss_at(self, freq_hz) -> np.ndarray:
        f = np.maximum(np.asarray(freq_hz, dtype=np.float64), self.grid[0])
        return np.interp(np.log(np.minimum(f, self.grid[-1])),
                         np.log(self.grid), self.loss_db)


def _mass_law_db(freq_hz, surface_density: float) -> np.ndarray:
    f = np.asarray(freq_hz, dtype=np.float64)
    with np.errstate(divide="ignore"):
        raw = 20.0 * np.log10(f * surface_density) - MASS_LAW_OFFSET_DB
    return np.maximum(0.0, np.where(f > 0.0, raw, 0.0))


def mass_law_stl(surface_density: float, grid) -> StlCurve:
    """Field-incidence mass law, clamped at 0 dB:
    loss(f) = max(0, 20 log10(f * surface_density) - 47)."""
    if surface_density <= 0:
        raise ValueError("surface density must be positive")
    grid = np.asarray(grid, dtype=np.float64)
    return StlCurve(grid, _mass_law_db(grid, surface_density),
                    name=f"mass_law_{surface_density:g}")


def sharp_plateau_stl(surface_density: float, grid,
                      critical_hz: float = 360.0) -> StlCurve:
    """Mass law with the loss frozen above half the critical frequency,
    mimicking the flattening of stiff panels near coincidence."""
    grid = np.asarray(grid, dtype=np.float64)
    eff = np.minimum(grid, critical_hz / 2.0)
    return StlCurve(grid, _mass_law_db(eff, surface_density),
                    name=f"sharp_plateau_{surface_density:g}")


CHANNEL_PRESETS = ("concrete_5cm", "sharp_plateau", "identity")


def channel_preset(name: str, rate: int, n_points: int = 96) -> StlCurve:
    """Named STL curves on a log grid from 100 Hz to Nyquist.

    concrete_5cm: 5 cm concrete slab mass law (115 kg/m^2, ~54 dB at
    1 kHz).  sharp_plateau: the same slab flattened above 180 Hz.
    identity: 0 dB everywhere (pass-through channel).  The 100 Hz floor
    keeps the grid trackable by a 513-tap design; below it the realized
    loss levels off, which is harmless for speech content.
    """
    grid = np.geomspace(100.0, rate / 2.0, n_points)
    if name == "concrete_5cm":
        curve = mass_law_stl(115.0, grid)
    elif name == "sharp_plateau":
        curve = sharp_plateau_stl(115.0, grid, critical_hz=360.0)
    elif name == "identity":
        curve = StlCurve(grid, np.zeros_like(grid))
    else:
        raise ValueError(f"unknown channel preset {name!r}; "
                         f"choose from {CHANNEL_PRESETS}")
    curve.name = name
    return curve


@dataclass
class FirChannel:
    """Linear-phase FIR realization of an StlCurve at a fixed rate."""

    taps: np.ndarray
    rate: int
    curve: StlCurve = None

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.float64)

    @property
    def delay(self) -> int:
        return (self.taps.size - 1) // 2

    def apply(self, buf: SampleBuffer) -> SampleBuffer:
        """Filter and re-align so output sample k matches input sample k."""
        if buf.rate != self.rate:
            raise ValueError("buffer rate does not match channel design rate")
        y = np.convolve(buf.samples, self.taps)
        d = self.delay
        return SampleBuffer(y[d : d + len(buf)], self.rate)

    def response_db(self, freq_hz) -> np.ndarray:
        """Achieved magnitude response in dB at the given frequencies."""
        f = np.atleast_1d(np.asarray(freq_hz, dtype=np.float64))
        n = np.arange(self.taps.size)
        ph = np.exp(-2j * np.pi * np.outer(f / self.rate, n))
        mag = np.abs(ph @ self.taps)
        return 20.0 * np.log10(np.maximum(mag, 1e-300))


def design_fir(curve: StlCurve, n_taps: int, rate: int) -> FirChannel:
    """Realize an attenuation curve as a symmetric (linear-phase) FIR.

    Frequency sampling on a dense rFFT grid (curve interpolated in dB
    over log frequency) with a linear-phase term, truncation to n_taps,
    and a Hann window.  The realized magnitude is checked against the
    curve at its own grid points wherever the loss is at most 60 dB;
    beyond-tolerance fits only warn, reporting the worst deviation.
    """
    if n_taps < 63 or n_taps % 2 == 0:
        raise ValueError("n_taps must be odd and >= 63")
    if curve.grid[-1] > rate / 2.0 + 1e-9:
        raise ValueError("curve grid exceeds Nyquist for this rate")
    n_fft = 1
    while n_fft < 8 * n_taps:
        n_fft *= 2
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / rate)
    mag = 10.0 ** (-curve.loss_at(freqs) / 20.0)
    delay = (n_taps - 1) / 2.0
    spec = mag * np.exp(-2j * np.pi * freqs * delay / rate)
    h = np.fft.irfft(spec, n_fft)[:n_taps] * np.hanning(n_taps)
    chan = FirChannel(taps=h, rate=rate, curve=curve)

    check = curve.grid[curve.loss_db <= 60.0]
    if check.size:
        dev = np.abs(chan.response_db(check) + curve.loss_at(check))
        if dev.max() > 1.0:
            warnings.warn(
                f"FIR deviates up to {dev.max():.2f} dB from the target "
                "curve; consider more taps", RuntimeWarning)
    return chan


def pink_noise(n: int, seed: int, rate: int = 22050) -> SampleBuffer:
    """Pink (1/f) noise by the row-summing trick: row k redraws a
    Gaussian every 2^k samples (16 rows).  Zero mean, unit variance;
    octave slope -3 dB give or take a dB across the speech band."""
    if n < 2:
        raise ValueError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    out = np.zeros(n)
    for k in range(16):
        step = 1 << k
        m = -(-n // step)
        out += np.repeat(rng.standard_normal(m), step)[:n]
    out -= out.mean()
    sd = out.std()
    return SampleBuffer(out / sd if sd > 0 else out, rate)


def mix_at_snr(signal: SampleBuffer, noise: SampleBuffer, snr_db: float) -> SampleBuffer:
    """Add noise scaled so the ratio of mean powers hits snr_db exactly.

    snr_db = inf is the no-noise sentinel.  Silent signal, or silent
    noise with finite SNR, cannot define a ratio and raises.
    """
    if np.isinf(snr_db) and snr_db > 0:
        return SampleBuffer(signal.samples.copy(), signal.rate)
    x = signal.samples
    w = noise.samples
    if w.size != x.size or noise.rate != signal.rate:
        raise ValueError("noise must match the signal in length and rate")
    p_sig = float(x @ x) / x.size
    p_noise = float(w @ w) / w.size
    if p_sig <= 0.0 or p_noise <= 0.0:
        raise ValueError("SNR undefined for silent signal or noise")
    gain = np.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0)))
    return SampleBuffer(x + gain * w, signal.rate)


def trim_silence(buf: SampleBuffer, win_s: float = 0.030,
                 drop_db: float = 40.0) -> SampleBuffer:
    """Cut leading/trailing windows more than drop_db below the loudest
    window (mean power per 30 ms window)."""
    x = buf.samples
    win = max(1, int(round(win_s * buf.rate)))
    n_win = x.size // win
    if n_win == 0:
        raise EmptyUtteranceError("utterance shorter than one VAD window")
    pw = np.array([float(x[i * win : (i + 1) * win] @ x[i * win : (i + 1) * win])
                   for i in range(n_win)]) / win
    peak = pw.max()
    if peak <= 0.0:
        raise EmptyUtteranceError("utterance is silent")
    keep = np.flatnonzero(pw > peak * 10.0 ** (-drop_db / 10.0))
    lo = int(keep[0]) * win
    hi = min(x.size, (int(keep[-1]) + 1) * win)
    return SampleBuffer(x[lo:hi].copy(), buf.rate)


def make_pair(clean: SampleBuffer, channel: FirChannel, snr_db: float,
              seed: int):
    """Build one training pair: (distorted, clean_aligned).

    The clean utterance is silence-trimmed, pushed through the channel
    with group-delay compensation (so the pair is sample-aligned), then
    mixed with pink noise at the exact SNR.  Both outputs share length
    and rate.
    """
    trimmed = trim_silence(clean)
    through = channel.apply(trimmed)
    if np.isinf(snr_db) and snr_db > 0:
        return through, trimmed
    noise = pink_noise(len(through), seed, rate=through.rate)
    return mix_at_snr(through, noise, snr_db), trimmed


# ---------------------------------------------------------------------------
# Corpus manifest (JSON lines)

_MANIFEST_KEYS = ("id", "clean_path", "distorted_path", "snr_db",
                  "channel_preset", "seed")


def read_manifest(path) -> list:
    """Parse a JSONL manifest; every record must carry the full key set."""
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            missing = [k for k in _MANIFEST_KEYS if k not in rec]
            if missing:
                raise ManifestError(
                    f"{path}:{lineno}: missing keys {missing}")
            entries.append(rec)
    return entries


def write_manifest(path, entries) -> None:
    with open(path, "w") as fh:
        for rec in entries:
            fh.write(json.dumps({k: rec[k] for k in _MANIFEST_KEYS}) + "\n")
