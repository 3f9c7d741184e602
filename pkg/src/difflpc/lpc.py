"""Classical linear-prediction analysis and synthesis.

Analysis is frame-based: each frame splits into short slots, every slot
gets its own autocorrelation-method predictor (with left context from
the running signal so the excitation is continuous), and the residual is
exact by construction.  Synthesis reuses the same recursion kernel as
the differentiable waveform block, so analyze -> synthesize is an
identity to rounding error.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .audio import FrameLayout, SampleBuffer, resample
from .blocks import _ar_recursion, lp2poles
from .errors import DegenerateFrameError, InsufficientSignalError

__all__ = [
    "LpcFrame",
    "FormantTrack",
    "PitchTrack",
    "autocorrelation",
    "levinson_durbin",
    "lpc_analyze",
    "lpc_synthesize",
    "burg_formants",
    "track_pitch",
]

# Gaussian lag taper: slightly widens spectral peaks so the normal
# equations stay well conditioned on near-degenerate slots.
LAG_TAPER_BASE = 1.0001


@dataclass
class LpcFrame:
    """One analysis frame: per-slot coefficients plus exact residual."""

    coeffs: np.ndarray          # (order, n_slots)
    excitation: np.ndarray      # (slot_len * n_slots,)
    layout: FrameLayout
    rate: int
    gain: float = 1.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        self.excitation = np.asarray(self.excitation, dtype=np.float64)
        lay = self.layout
        if self.coeffs.shape != (lay.order, lay.n_slots):
            raise ValueError("coeffs must be (order, n_slots)")
        if self.excitation.size != lay.frame_len:
            raise ValueError("excitation must cover the whole frame")


def autocorrelation(frame: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased autocorrelation r[0..max_lag] (no 1/N, no mean removal)."""
    x = np.asarray(frame, dtype=np.float64)
    if not 0 <= max_lag < x.size:
        raise ValueError("max_lag must lie in [0, len(frame))")
    full = np.correlate(x, x, mode="full")
    return full[x.size - 1 : x.size + max_lag]


def levinson_durbin(r: np.ndarray, order: int):
    """Solve the Toeplitz normal equations by Levinson recursion.

    Returns (a, reflection, err): predictor coefficients such that
    x[n] ~ sum_p a[p-1] x[n-p], the reflection coefficients, and the
    final prediction error power.  r[0] <= 0 raises; a singular
    intermediate step truncates at the last stable order with a warning.
    """
    r = np.asarray(r, dtype=np.float64)
    if order < 1 or r.size < order + 1:
        raise ValueError("need autocorrelation up to lag `order`")
    if r[0] <= 0.0 or not np.isfinite(r[0]):
        raise DegenerateFrameError("zero-lag autocorrelation must be positive")
    a = np.zeros(order)
    refl = np.zeros(order)
    err = float(r[0])
    for i in range(order):
        acc = r[i + 1] - (a[:i] @ r[i:0:-1] if i else 0.0)
        k = acc / err
        new_err = err * (1.0 - k * k)
        if not np.isfinite(k) or new_err <= 0.0:
            warnings.warn(
                f"singular Levinson step at order {i + 1}; truncating predictor",
                RuntimeWarning)
            a[i:] = 0.0
            break
        a[:i] = a[:i] - k * a[:i][::-1]
        a[i] = k
        refl[i] = k
        err = new_err
    return a, refl, err


def _slot_coeffs(x: np.ndarray, n_slots_total: int, layout: FrameLayout) -> np.ndarray:
    """Per-slot predictors over the whole utterance, (order, total slots).

    Each slot is analyzed on its own samples plus `order` samples of left
    context (zeros before the utterance start), Hann tapered, with a
    Gaussian lag taper on the autocorrelation.  Slots of pure silence get
    zero coefficients.
    """
    m, order = layout.slot_len, layout.order
    win = np.hanning(m + order)
    lags = np.arange(order + 1)
    lag_taper = LAG_TAPER_BASE ** (-(lags * lags))
    xpad = np.concatenate([np.zeros(order), x])
    coeffs = np.zeros((order, n_slots_total))
    for s in range(n_slots_total):
        seg = xpad[s * m : s * m + m + order] * win
        if not np.any(seg):
            continue
        r = autocorrelation(seg, order) * lag_taper
        if r[0] <= 0.0:
            continue
        a, _, _ = levinson_durbin(r, order)
        coeffs[:, s] = a
    return coeffs


def lpc_analyze(buf: SampleBuffer, layout: FrameLayout) -> list:
    """Split a buffer into frames of per-slot predictors plus residuals.

    Trailing samples short of a whole frame are dropped.  The residual
    uses the true running history (continuous across slot and frame
    boundaries, zeros before the start), so synthesis reproduces the
    input exactly.
    """
    x = np.asarray(buf.samples, dtype=np.float64)
    frame_len = layout.frame_len
    n_frames = x.size // frame_len
    if n_frames < 1:
        raise InsufficientSignalError(
            f"need at least {frame_len} samples, got {x.size}")
    n = n_frames * frame_len
    x = x[:n]
    total_slots = n_frames * layout.n_slots
    coeffs = _slot_coeffs(x, total_slots, layout)

    # exact residual: z[k] = x[k] - sum_p a_p(slot(k)) x[k-p]
    order, m = layout.order, layout.slot_len
    xpad = np.concatenate([np.zeros(order), x])
    z = x.copy()
    arep = np.repeat(coeffs, m, axis=1)
    for p in range(1, order + 1):
        z -= arep[p - 1] * xpad[order - p : order - p + n]

    frames = []
    for f in range(n_frames):
        s0 = f * layout.n_slots
        frames.append(LpcFrame(
            coeffs=coeffs[:, s0 : s0 + layout.n_slots],
            excitation=z[f * frame_len : (f + 1) * frame_len],
            layout=layout,
            rate=buf.rate,
        ))
    return frames


def lpc_synthesize(frames, state=None) -> SampleBuffer:
    """Run the all-pole recursion on analysis frames.

    Accepts one LpcFrame or a sequence sharing layout and rate.  state
    optionally carries the last `order` output samples from preceding
    audio; by default synthesis starts from silence, matching analysis.
    """
    if isinstance(frames, LpcFrame):
        frames = [frames]
    frames = list(frames)
    if not frames:
        raise ValueError("no frames to synthesize")
    layout, rate = frames[0].layout, frames[0].rate
    for fr in frames[1:]:
        if fr.layout != layout or fr.rate != rate:
            raise ValueError("frames must share layout and rate")
    coeffs = np.concatenate([fr.coeffs for fr in frames], axis=1)
    z = np.concatenate([fr.gain * fr.excitation for fr in frames])
    x = _ar_recursion(coeffs, z, layout.slot_len, state=state)
    return SampleBuffer(x, rate)


# ---------------------------------------------------------------------------
# Formant and pitch tracking


@dataclass
class FormantTrack:
    """Per-frame formants as (frequency_hz, bandwidth_hz) pairs.

    formants[i] is a list sorted by frequency; None marks a frame the
    estimator skipped (degenerate input), as opposed to an empty list
    (nothing passed the bandwidth/frequency gates).
    """

    times: np.ndarray
    formants: list
    rate: int

    def to_csv(self, path):
        width = max((len(f) for f in self.formants if f is not None), default=0)
        cols = ",".join(f"f{i + 1},b{i + 1}" for i in range(width))
        lines = ["frame_time_s" + ("," + cols if cols else "")]
        for t, row in zip(self.times, self.formants):
            cells = [f"{t:.6f}"]
            pairs = row if row else []
            for i in range(width):
                if i < len(pairs):
                    cells.append(f"{pairs[i][0]:.2f}")
                    cells.append(f"{pairs[i][1]:.2f}")
                else:
                    cells.extend(["", ""])
            lines.append(",".join(cells))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass
class PitchTrack:
    """Per-frame fundamental frequency; NaN marks unvoiced frames."""

    times: np.ndarray
    f0: np.ndarray
    rate: int

    def to_csv(self, path):
        lines = ["frame_time_s,f0"]
        for t, f in zip(self.times, self.f0):
            lines.append(f"{t:.6f}," + ("NA" if np.isnan(f) else f"{f:.2f}"))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _burg(x: np.ndarray, order: int):
    """Burg-method predictor coefficients, or None on a degenerate frame.

    Reflection coefficients are bounded by 1 in magnitude by construction
    (Cauchy-Schwarz), so the resulting filter is minimum phase.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size <= order:
        return None
    f = x[1:].copy()
    b = x[:-1].copy()
    a = np.array([1.0])
    for _ in range(order):
        den = f @ f + b @ b
        if den <= 0.0 or not np.isfinite(den):
            return None
        k = -2.0 * (f @ b) / den
        a = np.concatenate([a, [0.0]]) + k * np.concatenate([[0.0], a[::-1]])
        f, b = f[1:] + k * b[1:], b[:-1] + k * f[:-1]
    return -a[1:]


def burg_formants(buf: SampleBuffer, order=None, frame_s: float = 0.025,
                  hop_s: float = 0.010, bw_max: float = 400.0,
                  f_margin: float = 50.0, pre_emphasis: float = 0.8,
                  analysis_rate: int = 11025) -> FormantTrack:
    """Track formants as resonances of a Burg all-pole fit per frame.

    The signal is downsampled to analysis_rate when it is higher (F1/F2
    live well below 5 kHz; spending model order on the top octave only
    hurts) and pre-emphasized to flatten the voiced spectral tilt, the
    usual front end for all-pole formant work.  Default model order is
    2 + rate/1000 rounded, e.g. 13 at 11025 Hz.  Pole angles map to
    frequencies f = angle * rate / (2 pi) and radii to bandwidths
    bw = -rate/pi * ln|r|; only resonances with positive frequency inside
    (f_margin, rate/2 - f_margin) and bandwidth under bw_max survive.
    """
    if analysis_rate and analysis_rate < buf.rate:
        buf = resample(buf, analysis_rate)
    rate = buf.rate
    if order is None:
        order = 2 + int(round(rate / 1000.0))
    frame_len = int(round(frame_s * rate))
    hop = max(1, int(round(hop_s * rate)))
    x = buf.samples
    if pre_emphasis:
        x = np.concatenate(([x[0]], x[1:] - pre_emphasis * x[:-1]))
    n_frames = max(0, (x.size - frame_len) // hop + 1)
    times = np.empty(n_frames)
    formants = []
    for i in range(n_frames):
        lo = i * hop
        times[i] = (lo + frame_len / 2.0) / rate
        a = _burg(x[lo : lo + frame_len], order)
        if a is None:
            formants.append(None)
            continue
        roots = lp2poles(a)
        found = []
        for r in roots:
            ang = np.angle(r)
            if ang <= 0.0:
                continue
            freq = ang * rate / (2.0 * np.pi)
            bw = -rate / np.pi * np.log(max(abs(r), 1e-300))
            if f_margin < freq < rate / 2.0 - f_margin and 0.0 < bw < bw_max:
                found.append((float(freq), float(bw)))
        found.sort(key=lambda fb: fb[0])
        formants.append(found)
    return FormantTrack(times=times, formants=formants, rate=rate)


def track_pitch(buf: SampleBuffer, f_min: float = 70.0, f_max: float = 400.0,
                frame_s: float = 0.040, hop_s: float = 0.010,
                threshold: float = 0.45) -> PitchTrack:
    """Autocorrelation pitch tracker with parabolic lag refinement.

    A frame is voiced when its bias-corrected normalized autocorrelation
    peak inside the lag range [rate/f_max, rate/f_min] exceeds the
    threshold; voiced estimates stay within [f_min, f_max].
    """
    if not 0.0 < f_min < f_max:
        raise ValueError("need 0 < f_min < f_max")
    rate = buf.rate
    frame_len = int(round(frame_s * rate))
    hop = max(1, int(round(hop_s * rate)))
    lag_min = max(2, int(np.floor(rate / f_max)))
    lag_max = int(np.ceil(rate / f_min))
    if lag_max >= frame_len:
        raise ValueError("frame too short for the requested f_min")
    x = buf.samples
    n_frames = max(0, (x.size - frame_len) // hop + 1)
    times = np.empty(n_frames)
    f0 = np.full(n_frames, np.nan)
    for i in range(n_frames):
        lo = i * hop
        times[i] = (lo + frame_len / 2.0) / rate
        seg = x[lo : lo + frame_len]
        seg = seg - seg.mean()
        r = autocorrelation(seg, lag_max)
        if r[0] <= 0.0:
            continue
        bias = frame_len / (frame_len - np.arange(lag_max + 1.0))
        norm = r / r[0] * bias
        window = norm[lag_min : lag_max + 1]
        vmax = window.max()
        if vmax <= threshold:
            continue
        # earliest local peak within 10% of the global max; guards against
        # period doubling (the bias factor favors longer lags)
        tau = lag_min + int(np.argmax(window))
        for j in range(lag_min, lag_max + 1):
            if norm[j] < 0.9 * vmax:
                continue
            right = norm[j + 1] if j < lag_max else -np.inf
            if norm[j - 1] <= norm[j] and norm[j] >= right:
                tau = j
                break
        tau_hat = float(tau)
        if lag_min < tau < lag_max:
            y0, y1, y2 = norm[tau - 1], norm[tau], norm[tau + 1]
            den = y0 - 2.0 * y1 + y2
            if den < 0.0:
                tau_hat += 0.5 * (y0 - y2) / den
        tau_hat = float(np.clip(tau_hat, rate / f_max, rate / f_min))
        f0[i] = rate / tau_hat
    return PitchTrack(times=times, f0=f0, rate=rate)
