"""Classical linear-prediction layer: recursion solver, round trips,
formant and pitch trackers."""

import numpy as np
import pytest
from scipy.linalg import solve_toeplitz
from scipy.signal import lfilter

from difflpc import (
    DegenerateFrameError,
    FrameLayout,
    InsufficientSignalError,
    SampleBuffer,
    autocorrelation,
    burg_formants,
    levinson_durbin,
    lpc_analyze,
    lpc_synthesize,
    track_pitch,
)
from difflpc.lpc import LpcFrame, _slot_coeffs


def _speechlike(n, rate, seed=0):
    # two fixed resonances over a pulse train; enough structure for the
    # predictor to bite
    rng = np.random.default_rng(seed)
    exc = np.zeros(n)
    exc[:: rate // 120] = 1.0
    exc += 0.02 * rng.standard_normal(n)
    a = np.convolve(
        [1.0, -2 * 0.97 * np.cos(2 * np.pi * 500 / rate), 0.97 ** 2],
        [1.0, -2 * 0.95 * np.cos(2 * np.pi * 1500 / rate), 0.95 ** 2])
    x = lfilter([1.0], a, exc)
    return SampleBuffer(0.3 * x / np.max(np.abs(x)), rate)


# ---------------------------------------------------------------------------
# autocorrelation and Levinson


def test_autocorrelation_values():
    x = np.array([1.0, 2.0, 3.0])
    r = autocorrelation(x, 2)
    assert r == pytest.approx([14.0, 8.0, 3.0])


def test_autocorrelation_lag_bounds():
    with pytest.raises(ValueError):
        autocorrelation(np.ones(4), 4)
    with pytest.raises(ValueError):
        autocorrelation(np.ones(4), -1)


def test_levinson_matches_toeplitz_solve():
    rng = np.random.default_rng(20)
    worst = 0.0
    for _ in range(40):
        order = int(rng.integers(1, 21))
        x = rng.normal(size=400)
        r = autocorrelation(x, order)
        a, _, err = levinson_durbin(r, order)
        ref = solve_toeplitz((r[:order], r[:order]), r[1 : order + 1])
        dev = np.max(np.abs(a - ref)) / max(1.0, np.max(np.abs(ref)))
        worst = max(worst, dev)
        assert err > 0.0
    assert worst < 1e-8, f"levinson deviates from direct solve by {worst:.3e}"


def test_levinson_reflection_bounded():
    rng = np.random.default_rng(21)
    x = rng.normal(size=600)
    _, refl, _ = levinson_durbin(autocorrelation(x, 12), 12)
    assert np.all(np.abs(refl) < 1.0)


def test_levinson_rejects_degenerate():
    with pytest.raises(DegenerateFrameError):
        levinson_durbin(np.zeros(5), 4)
    with pytest.raises(ValueError):
        levinson_durbin(np.ones(3), 0)
    with pytest.raises(ValueError):
        levinson_durbin(np.ones(3), 5)


def test_levinson_singular_truncates_with_warning():
    # perfectly correlated sequence: the first step already predicts
    # exactly, later orders are singular
    r = np.array([1.0, 1.0, 1.0, 1.0])
    with pytest.warns(RuntimeWarning):
        a, _, _ = levinson_durbin(r, 3)
    assert np.all(np.isfinite(a))


# ---------------------------------------------------------------------------
# analysis / synthesis round trip


def test_roundtrip_exact():
    layout = FrameLayout()
    buf = _speechlike(2 * layout.frame_len, 22050)
    frames = lpc_analyze(buf, layout)
    assert len(frames) == 2
    out = lpc_synthesize(frames)
    err = np.linalg.norm(out.samples - buf.samples) / np.linalg.norm(buf.samples)
    assert err < 1e-10, f"round trip error {err:.3e}"


def test_roundtrip_small_layout():
    layout = FrameLayout(slot_len=8, n_slots=5, order=4)
    rng = np.random.default_rng(22)
    buf = SampleBuffer(rng.normal(size=3 * layout.frame_len), 8000)
    out = lpc_synthesize(lpc_analyze(buf, layout))
    assert np.max(np.abs(out.samples - buf.samples)) < 1e-10


def test_trailing_samples_dropped():
    layout = FrameLayout(slot_len=8, n_slots=4, order=3)
    buf = SampleBuffer(np.random.default_rng(23).normal(size=layout.frame_len + 7), 8000)
    frames = lpc_analyze(buf, layout)
    assert len(frames) == 1
    assert len(lpc_synthesize(frames)) == layout.frame_len


def test_analyze_needs_one_frame():
    layout = FrameLayout(slot_len=8, n_slots=4, order=3)
    with pytest.raises(InsufficientSignalError):
        lpc_analyze(SampleBuffer(np.ones(layout.frame_len - 1), 8000), layout)


def test_silence_gives_zero_coeffs():
    layout = FrameLayout(slot_len=8, n_slots=4, order=3)
    frames = lpc_analyze(SampleBuffer(np.zeros(layout.frame_len), 8000), layout)
    assert np.all(frames[0].coeffs == 0.0)
    assert np.all(lpc_synthesize(frames).samples == 0.0)


def test_gain_scales_linearly():
    layout = FrameLayout(slot_len=8, n_slots=4, order=3)
    buf = _speechlike(layout.frame_len, 8000, seed=1)
    fr = lpc_analyze(buf, layout)[0]
    base = lpc_synthesize(fr).samples
    fr.gain = 2.0
    assert np.allclose(lpc_synthesize(fr).samples, 2.0 * base)


def test_synthesize_rejects_mixed_frames():
    lay_a = FrameLayout(slot_len=8, n_slots=4, order=3)
    lay_b = FrameLayout(slot_len=8, n_slots=5, order=3)
    fa = LpcFrame(np.zeros((3, 4)), np.zeros(32), lay_a, 8000)
    fb = LpcFrame(np.zeros((3, 5)), np.zeros(40), lay_b, 8000)
    with pytest.raises(ValueError):
        lpc_synthesize([fa, fb])
    with pytest.raises(ValueError):
        lpc_synthesize([])


def test_frame_validation():
    lay = FrameLayout(slot_len=8, n_slots=4, order=3)
    with pytest.raises(ValueError):
        LpcFrame(np.zeros((4, 4)), np.zeros(32), lay, 8000)
    with pytest.raises(ValueError):
        LpcFrame(np.zeros((3, 4)), np.zeros(31), lay, 8000)


def test_slot_coeffs_scale_invariant():
    layout = FrameLayout(slot_len=16, n_slots=6, order=5)
    x = _speechlike(layout.frame_len, 8000, seed=2).samples
    c1 = _slot_coeffs(x, layout.n_slots, layout)
    # power-of-two scaling cancels exactly; general scaling up to rounding
    assert np.max(np.abs(c1 - _slot_coeffs(2.0 * x, layout.n_slots, layout))) < 1e-14
    assert np.max(np.abs(c1 - _slot_coeffs(1000.0 * x, layout.n_slots, layout))) < 1e-9


# ---------------------------------------------------------------------------
# formant tracking


def test_formants_two_pole_construction():
    # resonators at 500 and 1500 Hz; medians must land within 50 Hz
    rng = np.random.default_rng(3)
    exc = rng.standard_normal(22050)
    a = np.convolve(
        [1.0, -2 * 0.97 * np.cos(2 * np.pi * 500 / 22050), 0.97 ** 2],
        [1.0, -2 * 0.95 * np.cos(2 * np.pi * 1500 / 22050), 0.95 ** 2])
    sig = SampleBuffer(lfilter([1.0], a, exc), 22050)
    track = burg_formants(sig)
    f1 = [f[0][0] for f in track.formants if f and len(f) >= 2]
    f2 = [f[1][0] for f in track.formants if f and len(f) >= 2]
    assert len(f1) > 20
    assert np.median(f1) == pytest.approx(500.0, abs=50.0)
    assert np.median(f2) == pytest.approx(1500.0, abs=50.0)


def test_formants_pure_sine():
    t = np.arange(22050) / 22050.0
    sine = SampleBuffer(np.sin(2 * np.pi * 1000.0 * t), 22050)
    track = burg_formants(sine)
    freqs = [f[0][0] for f in track.formants if f]
    assert len(freqs) > 20
    assert np.median(freqs) == pytest.approx(1000.0, abs=20.0)


def test_formants_white_noise_mostly_empty():
    # flat spectrum: the bandwidth gate rejects most candidate roots
    rng = np.random.default_rng(3)
    rng.standard_normal(22050)  # align with the two-pole draw stream
    noise = SampleBuffer(rng.standard_normal(22050), 22050)
    track = burg_formants(noise)
    n_empty = sum(1 for f in track.formants if not f)
    assert n_empty > len(track.formants) // 2


def test_formant_track_csv(tmp_path):
    track = burg_formants(_speechlike(22050, 22050, seed=4))
    path = tmp_path / "formants.csv"
    track.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0].startswith("frame_time_s,f1,b1")
    assert len(lines) == len(track.formants) + 1
    # every data row parses: time plus blank-padded float cells
    for ln in lines[1:]:
        cells = ln.split(",")
        float(cells[0])
        for c in cells[1:]:
            assert c == "" or float(c) >= 0.0


# ---------------------------------------------------------------------------
# pitch tracking


def test_pitch_sawtooth():
    rate = 22050
    t = np.arange(rate) / rate
    saw = SampleBuffer(2.0 * ((200.0 * t) % 1.0) - 1.0, rate)
    track = track_pitch(saw)
    voiced = track.f0[~np.isnan(track.f0)]
    assert voiced.size > 50
    assert np.median(voiced) == pytest.approx(200.0, abs=5.0)


def test_pitch_silence_unvoiced():
    track = track_pitch(SampleBuffer(np.zeros(22050), 22050))
    assert np.all(np.isnan(track.f0))


def test_pitch_validation():
    buf = SampleBuffer(np.ones(22050), 22050)
    with pytest.raises(ValueError):
        track_pitch(buf, f_min=400.0, f_max=70.0)
    with pytest.raises(ValueError):
        track_pitch(buf, f_min=10.0, frame_s=0.02)


def test_pitch_csv(tmp_path):
    rate = 22050
    t = np.arange(rate) / rate
    sig = np.sin(2 * np.pi * 150.0 * t)
    sig[: rate // 4] = 0.0
    track = track_pitch(SampleBuffer(sig, rate))
    path = tmp_path / "pitch.csv"
    track.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "frame_time_s,f0"
    assert any(ln.endswith(",NA") for ln in lines[1:])
    assert any(not ln.endswith(",NA") for ln in lines[1:])
