"""Shared material for the demo scripts: a synthetic vowel sequence with
known formants, so every demo can check itself against ground truth."""

import numpy as np
from scipy.signal import lfilter

from difflpc import SampleBuffer

# (center Hz, bandwidth Hz) per formant, one pair per vowel
VOWELS = (
    ((730.0, 90.0), (1090.0, 110.0)),
    ((270.0, 60.0), (2290.0, 140.0)),
    ((660.0, 90.0), (1720.0, 120.0)),
    ((300.0, 60.0), (870.0, 100.0)),
)


def make_vowel_sequence(rate=22050, seg_s=0.8, f0=120.0, seed=0,
                        vowels=VOWELS) -> SampleBuffer:
    rng = np.random.default_rng(seed)
    n = int(seg_s * rate)
    t = np.arange(n * len(vowels)) / rate
    inst = f0 * (1.0 + 0.03 * np.sin(2 * np.pi * 0.8 * t))  # mild vibrato
    phase = np.cumsum(inst) / rate
    ramp = int(0.005 * rate)
    env = np.ones(n)
    env[:ramp] = np.sin(np.linspace(0, np.pi / 2, ramp)) ** 2
    env[-ramp:] = env[:ramp][::-1]
    parts = []
    for i, formants in enumerate(vowels):
        exc = np.zeros(n)
        seg_phase = phase[i * n : (i + 1) * n]
        exc[np.flatnonzero(np.diff(np.floor(seg_phase)) > 0)] = 1.0
        exc += 0.02 * rng.standard_normal(n)
        a = np.array([1.0])
        for f, bw in formants:
            r = np.exp(-np.pi * bw / rate)
            w = 2 * np.pi * f / rate
            a = np.convolve(a, [1.0, -2 * r * np.cos(w), r * r])
        parts.append(env * lfilter([1.0], a, exc))
    x = np.concatenate(parts)
    return SampleBuffer(0.3 * x / np.max(np.abs(x)), rate)
