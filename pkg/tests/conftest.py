"""Shared fixtures: synthetic vowel material and the one expensive
end-to-end enhancement run, computed once per session."""

import time

import numpy as np
import pytest
from scipy.signal import lfilter

from difflpc import (EnhanceConfig, SampleBuffer, channel_preset, design_fir,
                     enhance_fit, make_pair)

# Peterson/Barney-ish (center Hz, bandwidth Hz) pairs for four vowels
VOWELS = (
    ((730.0, 90.0), (1090.0, 110.0)),
    ((270.0, 60.0), (2290.0, 140.0)),
    ((660.0, 90.0), (1720.0, 120.0)),
    ((300.0, 60.0), (870.0, 100.0)),
)


def _vowel_segment(f0_phase, formants, n, rate, rng):
    exc = np.zeros(n)
    exc[np.flatnonzero(np.diff(np.floor(f0_phase)) > 0)] = 1.0
    exc += 0.02 * rng.standard_normal(n)
    a = np.array([1.0])
    for f, bw in formants:
        r = np.exp(-np.pi * bw / rate)
        w = 2 * np.pi * f / rate
        a = np.convolve(a, [1.0, -2 * r * np.cos(w), r * r])
    return lfilter([1.0], a, exc)


def make_vowel_sequence(rate=22050, seg_s=0.8, f0=120.0, seed=0,
                        vowels=VOWELS) -> SampleBuffer:
    """Impulse-train-excited two-formant vowels, concatenated with short
    cosine ramps; mild vibrato keeps the pitch from being a lab tone."""
    rng = np.random.default_rng(seed)
    n = int(seg_s * rate)
    t = np.arange(n * len(vowels)) / rate
    inst = f0 * (1.0 + 0.03 * np.sin(2 * np.pi * 0.8 * t))
    phase = np.cumsum(inst) / rate
    ramp = int(0.005 * rate)
    env = np.ones(n)
    env[:ramp] = np.sin(np.linspace(0, np.pi / 2, ramp)) ** 2
    env[-ramp:] = env[:ramp][::-1]
    parts = [env * _vowel_segment(phase[i * n : (i + 1) * n], v, n, rate, rng)
             for i, v in enumerate(vowels)]
    x = np.concatenate(parts)
    return SampleBuffer(0.3 * x / np.max(np.abs(x)), rate)


@pytest.fixture(scope="session")
def vowel_sequence():
    return make_vowel_sequence


@pytest.fixture(scope="session")
def concrete_channel():
    return design_fir(channel_preset("concrete_5cm", 22050), 513, 22050)


@pytest.fixture(scope="session")
def scenario(concrete_channel):
    """The pinned end-to-end case: 3.2 s vowel sequence through the
    concrete preset at 0 dB SNR, noise seed 42."""
    clean = make_vowel_sequence()
    distorted, aligned = make_pair(clean, concrete_channel, 0.0, seed=42)
    return {"clean": aligned, "distorted": distorted}


@pytest.fixture(scope="session")
def scenario_fit(scenario):
    """Full 500-iteration fit on the pinned scenario (the slow part of
    the suite, shared by every consumer)."""
    start = time.perf_counter()
    result = enhance_fit(scenario["distorted"], scenario["clean"],
                         EnhanceConfig())
    elapsed = time.perf_counter() - start
    return {"result": result, "enhanced": result.enhanced,
            "fit_seconds": elapsed, **scenario}
