"""Classical LPC layer walkthrough: analyze a synthetic vowel into
per-slot predictors, resynthesize it exactly, and pull out formant and
pitch tracks.

Run from the repository root:  python3 demos/01_analysis_roundtrip.py
"""

import numpy as np
from scipy.signal import lfilter

from difflpc import (FrameLayout, SampleBuffer, burg_formants, lpc_analyze,
                     lpc_synthesize, track_pitch)

RATE = 22050


def make_vowel(dur=1.5, f0=120.0, formants=((660.0, 90.0), (1720.0, 120.0)),
               seed=0):
    """Impulse-train excitation through cascaded two-pole resonators."""
    rng = np.random.default_rng(seed)
    n = int(dur * RATE)
    exc = np.zeros(n)
    exc[:: int(RATE / f0)] = 1.0
    exc += 0.02 * rng.standard_normal(n)
    a = np.array([1.0])
    for f, bw in formants:
        r = np.exp(-np.pi * bw / RATE)
        w = 2 * np.pi * f / RATE
        a = np.convolve(a, [1.0, -2 * r * np.cos(w), r * r])
    x = lfilter([1.0], a, exc)
    return SampleBuffer(0.3 * x / np.max(np.abs(x)), RATE)


buf = make_vowel()
print(f"input: {buf.duration:.2f} s at {buf.rate} Hz")

# --- frame it into per-slot predictors ------------------------------------
layout = FrameLayout()          # 46-sample slots, 120 per frame, order 11
frames = lpc_analyze(buf, layout)
print(f"layout: slot_len={layout.slot_len}, n_slots={layout.n_slots}, "
      f"order={layout.order} -> {len(frames)} frame(s)")

coeffs = frames[0].coeffs
print(f"frame 0 coefficient matrix: {coeffs.shape} "
      f"(order x slots), |a| max {np.abs(coeffs).max():.3f}")

# the excitation is the exact prediction residual, so synthesis is an
# identity up to float rounding
out = lpc_synthesize(frames)
n = len(out)
err = np.linalg.norm(out.samples - buf.samples[:n]) / np.linalg.norm(buf.samples[:n])
print(f"round-trip relative RMS error: {err:.3e}")

# --- resonance and pitch readout -------------------------------------------
track = burg_formants(buf)
voiced = [row for row in track.formants if row and len(row) >= 2]
f1 = np.median([row[0][0] for row in voiced])
f2 = np.median([row[1][0] for row in voiced])
print(f"formant medians over {len(voiced)} frames: "
      f"F1 {f1:.0f} Hz, F2 {f2:.0f} Hz (true 660 / 1720)")

pitch = track_pitch(buf)
f0 = pitch.f0[~np.isnan(pitch.f0)]
print(f"pitch: {f0.size} voiced frames, median {np.median(f0):.1f} Hz (true 120)")
