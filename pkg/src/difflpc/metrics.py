"""Evaluation metrics for enhancement quality.

The intelligibility score follows the standard short-time objective
measure: 10 kHz working rate, silence removal by frame energy, 15
one-third-octave bands from 150 Hz, 384 ms correlation segments with
clipped level equalization.  Alongside it: log-spectral distance,
formant-error histograms, and a pole-matching distance.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .audio import FrameLayout, SampleBuffer, resample
from .blocks import lp2poles
from .errors import InsufficientSignalError
from .lpc import burg_formants, lpc_analyze

__all__ = [
    "stoi",
    "log_spectral_distance",
    "FormantErrorStats",
    "formant_error_stats",
    "PoleCompareStats",
    "pole_compare",
    "EvalReport",
    "evaluate_pair",
]

STOI_RATE = 10000
STOI_FRAME = 256
STOI_HOP = 128
STOI_FFT = 512
STOI_N_BANDS = 15
STOI_BAND_BASE_HZ = 150.0
STOI_SEG_FRAMES = 30
STOI_DYN_RANGE_DB = 40.0
STOI_CLIP_DB = -15.0


def _sym_hann(n: int) -> np.ndarray:
    # symmetric Hann without the zero endpoints
    k = np.arange(1, n + 1)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / (n + 1)))


def _frame_matrix(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    n_frames = (x.size - frame) // hop + 1
    if n_frames <= 0:
        return np.zeros((0, frame))
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def _remove_silent_frames(x: np.ndarray, y: np.ndarray):
    """Drop frames of x more than the dynamic range below its loudest
    frame, compacting the survivors by windowed overlap-add.  The mask
    comes from x (the clean reference) and is applied to both."""
    w = _sym_hann(STOI_FRAME)
    xf = _frame_matrix(x, STOI_FRAME, STOI_HOP) * w
    yf = _frame_matrix(y, STOI_FRAME, STOI_HOP) * w
    if xf.shape[0] == 0:
        raise InsufficientSignalError("signal shorter than one analysis frame")
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + 1e-300)
    keep = np.flatnonzero(energy > energy.max() - STOI_DYN_RANGE_DB)
    out_len = (keep.size - 1) * STOI_HOP + STOI_FRAME
    xs = np.zeros(out_len)
    ys = np.zeros(out_len)
    for j, src in enumerate(keep):
        lo = j * STOI_HOP
        xs[lo : lo + STOI_FRAME] += xf[src]
        ys[lo : lo + STOI_FRAME] += yf[src]
    return xs, ys


def _third_octave_matrix():
    freqs = np.linspace(0.0, STOI_RATE / 2.0, STOI_FFT // 2 + 1)
    centers = STOI_BAND_BASE_HZ * 2.0 ** (np.arange(STOI_N_BANDS) / 3.0)
    h = np.zeros((STOI_N_BANDS, freqs.size))
    for b, cf in enumerate(centers):
        lo = np.argmin((freqs - cf * 2.0 ** (-1.0 / 6.0)) ** 2)
        hi = np.argmin((freqs - cf * 2.0 ** (1.0 / 6.0)) ** 2)
        h[b, lo:hi] = 1.0
    return h


def _band_amplitudes(x: np.ndarray) -> np.ndarray:
    """(n_bands, n_frames) one-third-octave magnitudes of a 10 kHz signal."""
    w = _sym_hann(STOI_FRAME)
    frames = _frame_matrix(x, STOI_FRAME, STOI_HOP) * w
    spec = np.fft.rfft(frames, n=STOI_FFT, axis=1)
    power = (spec.real ** 2 + spec.imag ** 2).T
    return np.sqrt(_third_octave_matrix() @ power)


def stoi(clean: SampleBuffer, degraded: SampleBuffer) -> float:
    """Short-time objective intelligibility of `degraded` against `clean`.

    Both signals are brought to 10 kHz (and truncated to the common
    length); silent stretches of the clean signal are removed from both.
    The score is the mean over bands and 30-frame segments of the
    correlation between clean band envelopes and level-equalized,
    clipped degraded envelopes.  Roughly 0..1, higher is better.
    """
    x = resample(clean, STOI_RATE).samples
    y = resample(degraded, STOI_RATE).samples
    n = min(x.size, y.size)
    x, y = _remove_silent_frames(x[:n], y[:n])
    xb = _band_amplitudes(x)
    yb = _band_amplitudes(y)
    n_frames = xb.shape[1]
    if n_frames < STOI_SEG_FRAMES:
        raise InsufficientSignalError(
            f"only {n_frames} frames after silence removal; "
            f"need {STOI_SEG_FRAMES}")
    clip_gain = 10.0 ** (-STOI_CLIP_DB / 20.0)
    total = 0.0
    count = 0
    for m in range(STOI_SEG_FRAMES, n_frames + 1):
        xs = xb[:, m - STOI_SEG_FRAMES : m]
        ys = yb[:, m - STOI_SEG_FRAMES : m]
        alpha = np.sqrt(np.sum(xs ** 2, axis=1) /
                        np.maximum(np.sum(ys ** 2, axis=1), 1e-300))
        yp = np.minimum(ys * alpha[:, None], xs * (1.0 + clip_gain))
        xc = xs - xs.mean(axis=1, keepdims=True)
        yc = yp - yp.mean(axis=1, keepdims=True)
        denom = np.linalg.norm(xc, axis=1) * np.linalg.norm(yc, axis=1)
        num = np.sum(xc * yc, axis=1)
        ok = denom > 0.0
        total += float(np.sum(num[ok] / denom[ok]))
        count += STOI_N_BANDS
    return total / count


def log_spectral_distance(ref: SampleBuffer, test: SampleBuffer,
                          win_s: float = 0.025, hop_s: float = 0.010,
                          fft_size: int = 1024, floor: float = 1e-8) -> float:
    """RMS distance in dB between short-time power spectra.

    One RMS over all frames and bins of the dB power ratio.  Magnitudes
    are floored before the log so silence stays finite.  Identical
    signals score exactly 0; a global gain of 0.5 scores ~6.02 dB.
    """
    if ref.rate != test.rate:
        raise ValueError("rates must match for spectral distance")
    rate = ref.rate
    win = min(int(round(win_s * rate)), fft_size)
    hop = max(1, int(round(hop_s * rate)))
    n = min(len(ref), len(test))
    w = np.hanning(win)
    fx = _frame_matrix(ref.samples[:n], win, hop) * w
    fy = _frame_matrix(test.samples[:n], win, hop) * w
    if fx.shape[0] == 0:
        raise InsufficientSignalError("signal shorter than one analysis frame")
    mx = np.maximum(np.abs(np.fft.rfft(fx, n=fft_size, axis=1)), floor)
    my = np.maximum(np.abs(np.fft.rfft(fy, n=fft_size, axis=1)), floor)
    d = 10.0 * np.log10((mx / my) ** 2)
    return float(np.sqrt(np.mean(d * d)))


# ---------------------------------------------------------------------------
# Formant and pole comparisons


@dataclass
class FormantErrorStats:
    """Histogram of per-frame frequency errors for one formant index."""

    errors: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    peak_offset_hz: float        # center of the fullest bin; NaN when empty
    mean_hz: float
    median_hz: float
    n: int


def formant_error_stats(ref, test, n_formants: int = 2, bin_hz: float = 50.0,
                        limit_hz: float = 1000.0) -> dict:
    """Per-formant error histograms between two formant tracks.

    Frames pair up by index; a frame contributes only when both tracks
    carry at least n_formants resonances, so every histogram draws on
    the same confidently-analyzed frames.  Errors are test minus ref,
    binned at bin_hz with bin centers on -limit_hz..limit_hz (so zero
    error falls in a bin centered at 0).  Keys are "f1", "f2"...
    """
    edges = np.arange(-limit_hz - bin_hz / 2.0, limit_hz + bin_hz, bin_hz)
    per_formant = [[] for _ in range(n_formants)]
    for rrow, trow in zip(ref.formants, test.formants):
        if rrow is None or trow is None:
            continue
        if len(rrow) < n_formants or len(trow) < n_formants:
            continue
        for j in range(n_formants):
            per_formant[j].append(trow[j][0] - rrow[j][0])
    out = {}
    for j in range(n_formants):
        errors = np.asarray(per_formant[j], dtype=np.float64)
        counts, _ = np.histogram(errors, bins=edges)
        if errors.size and counts.sum():
            peak = 0.5 * (edges[np.argmax(counts)] + edges[np.argmax(counts) + 1])
        else:
            peak = np.nan
        out[f"f{j + 1}"] = FormantErrorStats(
            errors=errors, bin_edges=edges, counts=counts,
            peak_offset_hz=float(peak),
            mean_hz=float(np.mean(errors)) if errors.size else np.nan,
            median_hz=float(np.median(errors)) if errors.size else np.nan,
            n=int(errors.size))
    return out


def _match_poles(pr: np.ndarray, pt: np.ndarray):
    """Greedy closest-first pairing of two equal-size pole sets.

    Returns ((order, 2) complex pairs in match order, mean distance).
    Each pole is used once; the globally closest remaining pair wins.
    """
    order = pr.size
    dist = np.abs(pr[:, None] - pt[None, :])
    used_r = np.zeros(order, dtype=bool)
    used_t = np.zeros(order, dtype=bool)
    pairs = np.empty((order, 2), dtype=np.complex128)
    acc = 0.0
    for k in range(order):
        masked = np.where(used_r[:, None] | used_t[None, :], np.inf, dist)
        i, j = np.unravel_index(np.argmin(masked), masked.shape)
        pairs[k, 0] = pr[i]
        pairs[k, 1] = pt[j]
        acc += masked[i, j]
        used_r[i] = True
        used_t[j] = True
    return pairs, acc / order


def _slot_coeff_matrix(buf: SampleBuffer, layout: FrameLayout) -> np.ndarray:
    frames = lpc_analyze(buf, layout)
    return np.concatenate([fr.coeffs for fr in frames], axis=1)


@dataclass
class PoleCompareStats:
    slots: np.ndarray            # slot indices compared
    pairs: list                  # per slot: (order, 2) complex (ref, test)
    per_slot: np.ndarray         # mean matched pole distance per slot
    mean: float


def pole_compare(reference: SampleBuffer, test: SampleBuffer,
                 slot_indices=None, layout: FrameLayout = None) -> PoleCompareStats:
    """Match predictor roots of two aligned signals slot by slot.

    Both signals are analyzed with the same layout at their shared rate
    (truncated to the common whole-frame length).  Per requested slot
    the ref/test root sets are paired closest-first, each root used
    once; the slot score is the mean paired distance in the z-plane.
    slot_indices None compares every slot.
    """
    layout = layout or FrameLayout()
    if reference.rate != test.rate:
        raise ValueError("rates must match for pole comparison")
    n = min(len(reference), len(test))
    a_r = _slot_coeff_matrix(SampleBuffer(reference.samples[:n], reference.rate), layout)
    a_t = _slot_coeff_matrix(SampleBuffer(test.samples[:n], test.rate), layout)
    total = a_r.shape[1]
    if slot_indices is None:
        slots = np.arange(total)
    else:
        slots = np.asarray(slot_indices, dtype=np.intp)
        if slots.size and (slots.min() < 0 or slots.max() >= total):
            raise ValueError(f"slot index out of range 0..{total - 1}")
    pairs = []
    per_slot = np.empty(slots.size)
    for k, s in enumerate(slots):
        matched, dist = _match_poles(lp2poles(a_r[:, s]), lp2poles(a_t[:, s]))
        pairs.append(matched)
        per_slot[k] = dist
    mean = float(per_slot.mean()) if per_slot.size else float("nan")
    return PoleCompareStats(slots=slots, pairs=pairs, per_slot=per_slot, mean=mean)


@dataclass
class EvalReport:
    """All quality metrics of one signal against its clean reference."""

    stoi: float
    lsd_db: float
    formant_diff: dict           # "f1", "f2" -> FormantErrorStats
    pole_stats: PoleCompareStats

    def summary(self) -> dict:
        """Flat scalar view, one row per compared pair."""
        out = {"stoi": self.stoi, "lsd_db": self.lsd_db}
        for key, st in self.formant_diff.items():
            out[f"{key}_peak_offset_hz"] = st.peak_offset_hz
            out[f"{key}_mean_hz"] = st.mean_hz
        out["pole_distance"] = self.pole_stats.mean
        return out

    def to_dict(self) -> dict:
        hist = {}
        for key, st in self.formant_diff.items():
            hist[key] = {
                "bin_edges_hz": st.bin_edges.tolist(),
                "counts": st.counts.tolist(),
                "peak_offset_hz": st.peak_offset_hz,
                "mean_hz": st.mean_hz,
                "median_hz": st.median_hz,
                "n": st.n,
            }
        pole_pairs = [[[p[0].real, p[0].imag, p[1].real, p[1].imag]
                       for p in slot_pairs]
                      for slot_pairs in self.pole_stats.pairs]
        return _jsonify({
            "stoi": self.stoi,
            "lsd_db": self.lsd_db,
            "formant_diff": hist,
            "pole_pairs": {
                "slots": self.pole_stats.slots.tolist(),
                "per_slot_distance": self.pole_stats.per_slot.tolist(),
                "mean_distance": self.pole_stats.mean,
                "pairs_re_im": pole_pairs,
            },
        })

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    def write_histogram_csv(self, path, formant: str = "f1") -> None:
        st = self.formant_diff[formant]
        centers = 0.5 * (st.bin_edges[:-1] + st.bin_edges[1:])
        lines = ["bin_center_hz,count"]
        lines += [f"{c:g},{int(n)}" for c, n in zip(centers, st.counts)]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _unit_rms(buf: SampleBuffer) -> SampleBuffer:
    r = float(np.sqrt(np.mean(buf.samples ** 2)))
    return buf if r == 0.0 else SampleBuffer(buf.samples / r, buf.rate)


def evaluate_pair(clean: SampleBuffer, test: SampleBuffer,
                  layout: FrameLayout = None,
                  work_rate: int = 11025) -> EvalReport:
    """Build the full evaluation report for one clean/test pair.

    The test signal is resampled to the reference rate and both are
    truncated to the common length.  Formant errors come from Burg
    tracks at the native rate; pole matching runs on work-rate
    predictor coefficients.  The LSD entry is level-equalized (both
    signals scaled to unit RMS first): everything else in the report is
    level-free already, and a raw LSD would mostly restate the gain
    difference.  Use log_spectral_distance directly when the level
    offset is the point.
    """
    layout = layout or FrameLayout()
    if test.rate != clean.rate:
        test = resample(test, clean.rate)
    n = min(len(clean), len(test))
    clean = SampleBuffer(clean.samples[:n], clean.rate)
    test = SampleBuffer(test.samples[:n], test.rate)

    score = stoi(clean, test)
    lsd = log_spectral_distance(_unit_rms(clean), _unit_rms(test))
    fstats = formant_error_stats(burg_formants(clean), burg_formants(test))
    poles = pole_compare(resample(clean, work_rate), resample(test, work_rate),
                         layout=layout)
    return EvalReport(stoi=score, lsd_db=lsd, formant_diff=fstats,
                      pole_stats=poles)


def _jsonify(v):
    if isinstance(v, dict):
        return {k: _jsonify(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonify(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float) and math.isnan(v):
        return None
    return v
