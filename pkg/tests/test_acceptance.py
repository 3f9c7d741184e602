"""Acceptance gate: ten behavioral criteria, one pass/fail line each.

Run with -s to see every line; each test also asserts, so a plain run
fails loudly on any miss.
"""

import time

import numpy as np
from scipy.linalg import solve_toeplitz
from scipy.signal import lfilter

from difflpc import (
    EPS_STAB,
    EnhanceConfig,
    FrameLayout,
    SampleBuffer,
    autocorrelation,
    dense_oracle,
    evaluate_pair,
    grad_check,
    levinson_durbin,
    lp2wav,
    lpc_analyze,
    lpc_synthesize,
    make_pair,
    mix_at_snr,
    pink_noise,
    poles2lp,
    poles_from_params,
    stoi,
)
from difflpc.blocks import PoleParams, _random_stable_coeffs

from conftest import make_vowel_sequence
from stoi_reference import stoi_reference


def _verdict(num, label, ok, detail):
    line = f"[{num:>2}] {label}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------


def test_criterion_01_synthesis_matches_dense_oracle():
    rng = np.random.default_rng(100)
    layouts = (FrameLayout(slot_len=3, n_slots=4, order=3),
               FrameLayout(slot_len=16, n_slots=8, order=5))
    start = time.perf_counter()
    worst = 0.0
    for layout in layouts:
        for _ in range(100):
            coeffs = _random_stable_coeffs(rng, layout)
            z = rng.normal(size=layout.frame_len)
            fast = lp2wav(coeffs, z, layout)
            _, _, dense = dense_oracle(coeffs, z, layout)
            err = np.linalg.norm(fast - dense) / max(np.linalg.norm(dense), 1e-300)
            worst = max(worst, err)
    elapsed = time.perf_counter() - start
    _verdict(1, "recursion equals dense triangular solve",
             worst < 1e-10 and elapsed < 5.0,
             f"worst rel RMS {worst:.3e} <= 1e-10, {elapsed:.2f} s < 5 s")


def test_criterion_02_gradient_checks():
    start = time.perf_counter()
    errs = {op: max(grad_check(op, eps=1e-6, seed=s) for s in (0, 1, 2))
            for op in ("poles2lp", "lp2wav", "composed")}
    elapsed = time.perf_counter() - start
    tol = {"poles2lp": 1e-5, "lp2wav": 1e-5, "composed": 1e-4}
    ok = all(errs[op] < tol[op] for op in errs) and elapsed < 30.0
    detail = ", ".join(f"{op} {errs[op]:.2e} < {tol[op]:g}" for op in errs)
    _verdict(2, "analytic gradients match finite differences",
             ok, f"{detail}, {elapsed:.1f} s < 30 s")


def test_criterion_03_stability_of_random_draws():
    rng = np.random.default_rng(101)
    layout = FrameLayout(slot_len=12, n_slots=12, order=11)
    n_frames = 10
    total_slots = n_frames * layout.n_slots
    failures = 0
    worst_radius = 0.0
    for _ in range(1000):
        params = PoleParams(
            rng.normal(0.0, 3.0, (total_slots, layout.order)),
            rng.uniform(-np.pi, np.pi, (total_slots, layout.order)))
        pole_set = poles_from_params(params, "conjugate")
        radius = float(np.max(np.abs(pole_set.poles)))
        worst_radius = max(worst_radius, radius)
        coeffs = poles2lp(pole_set).lp_matrix()
        z = rng.normal(size=total_slots * layout.slot_len)
        try:
            x = lp2wav(coeffs, z, layout)
            ok = radius <= 1.0 - EPS_STAB and np.all(np.isfinite(x))
        except Exception:
            ok = False
        failures += not ok
    _verdict(3, "1000 random parameter draws stay stable",
             failures == 0,
             f"0 required, {failures} failed, max |pole| {worst_radius:.6f} <= 0.999")


def test_criterion_04_expansion_matches_symbolic():
    rng = np.random.default_rng(102)
    worst_coeff = 0.0
    worst_imag = 0.0
    for _ in range(100):
        order = int(rng.integers(1, 12))
        params = PoleParams(rng.normal(0.0, 1.5, (3, order)),
                            rng.uniform(-np.pi, np.pi, (3, order)))
        pole_set = poles_from_params(params, "conjugate")
        coeffs = poles2lp(pole_set).coeffs
        worst_imag = max(worst_imag, float(np.max(np.abs(coeffs.imag))))
        for s in range(3):
            ref = -np.poly(pole_set.poles[s])[1:]
            dev = np.max(np.abs(coeffs[s].real - ref)) / max(1.0, np.max(np.abs(ref)))
            worst_coeff = max(worst_coeff, dev)
    _verdict(4, "pole product expansion equals polynomial oracle",
             worst_coeff < 1e-10 and worst_imag < 1e-12,
             f"coeff dev {worst_coeff:.3e} <= 1e-10, imag {worst_imag:.3e} <= 1e-12")


def test_criterion_05_lpc_round_trip():
    layout = FrameLayout()
    rng = np.random.default_rng(103)
    speech = make_vowel_sequence()
    noise = SampleBuffer(
        lfilter([0.25], [1.0, -0.75], rng.standard_normal(3 * layout.frame_len)),
        22050)
    worst = 0.0
    for buf in (speech, noise):
        out = lpc_synthesize(lpc_analyze(buf, layout))
        n = len(out)
        err = (np.linalg.norm(out.samples - buf.samples[:n])
               / np.linalg.norm(buf.samples[:n]))
        worst = max(worst, err)
    _verdict(5, "analysis/synthesis reconstructs the input",
             worst < 1e-10, f"worst rel RMS {worst:.3e} <= 1e-10")


def test_criterion_06_levinson_equals_dense_solve():
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(100):
        order = int(rng.integers(1, 21))
        x = rng.normal(size=512)
        r = autocorrelation(x, order)
        a, _, _ = levinson_durbin(r, order)
        ref = solve_toeplitz((r[:order], r[:order]), r[1 : order + 1])
        worst = max(worst, float(np.max(np.abs(a - ref))))
    _verdict(6, "Levinson recursion equals dense Toeplitz solve",
             worst < 1e-8, f"max coefficient deviation {worst:.3e} <= 1e-8")


def test_criterion_07_channel_realism(concrete_channel):
    curve = concrete_channel.curve
    probe_dev = max(
        abs(-float(concrete_channel.response_db(f)[0]) - float(curve.loss_at(f)))
        for f in (250.0, 1000.0, 4000.0))

    x = np.concatenate([pink_noise(1 << 16, seed=s).samples for s in range(4)])
    spec = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(x.size, d=1.0 / 22050)
    band_db = []
    for c in (250.0, 500.0, 1000.0, 2000.0, 4000.0):
        sel = (freqs >= c / np.sqrt(2)) & (freqs < c * np.sqrt(2))
        band_db.append(10.0 * np.log10(spec[sel].mean()))
    slopes = np.diff(band_db)
    slope_ok = bool(np.all(np.abs(slopes + 3.0) <= 1.0))

    rng = np.random.default_rng(105)
    sig = SampleBuffer(rng.normal(size=40000), 22050)
    noise = pink_noise(40000, seed=9)
    snr_dev = 0.0
    for snr in (-3.0, 0.0, 3.0, 10.0):
        mixed = mix_at_snr(sig, noise, snr)
        added = mixed.samples - sig.samples
        got = 10.0 * np.log10(np.mean(sig.samples ** 2) / np.mean(added ** 2))
        snr_dev = max(snr_dev, abs(got - snr))

    _verdict(7, "transmission channel is physically plausible",
             probe_dev <= 1.0 and slope_ok and snr_dev <= 1e-3,
             f"probe dev {probe_dev:.3f} dB <= 1, octave slopes "
             f"{np.round(slopes, 2).tolist()} in -3+-1, SNR dev {snr_dev:.2e} dB")


def test_criterion_08_end_to_end_enhancement(scenario_fit):
    cfg = EnhanceConfig()
    assert (cfg.n_iters, cfg.wave_weight, cfg.lp_weight, cfg.lr) == (500, 1.0, 0.3, 1e-3)
    clean = scenario_fit["clean"]
    assert clean.duration >= 3.0

    rep_d = evaluate_pair(clean, scenario_fit["distorted"])
    rep_e = evaluate_pair(clean, scenario_fit["enhanced"])
    peak_d = rep_d.formant_diff["f1"].peak_offset_hz
    peak_e = rep_e.formant_diff["f1"].peak_offset_hz

    stoi_ok = rep_e.stoi > rep_d.stoi
    peak_ok = abs(peak_e) < abs(peak_d)
    pole_ok = rep_e.pole_stats.mean < rep_d.pole_stats.mean
    time_ok = scenario_fit["fit_seconds"] < 600.0
    _verdict(8, "fit improves intelligibility, formants, poles",
             stoi_ok and peak_ok and pole_ok and time_ok,
             f"stoi {rep_d.stoi:.4f} -> {rep_e.stoi:.4f}, "
             f"F1 peak {peak_d:+.0f} -> {peak_e:+.0f} Hz, "
             f"pole dist {rep_d.pole_stats.mean:.4f} -> {rep_e.pole_stats.mean:.4f}, "
             f"{scenario_fit['fit_seconds']:.0f} s < 600 s")


def test_criterion_09_distortion_trend_over_snr(concrete_channel):
    clean = make_vowel_sequence()
    scores = []
    for snr in (3.0, 0.0, -3.0):
        distorted, aligned = make_pair(clean, concrete_channel, snr, seed=42)
        scores.append(stoi(aligned, distorted))
    ok = scores[0] > scores[1] > scores[2]
    _verdict(9, "distorted intelligibility falls with SNR",
             ok, "stoi " + " > ".join(f"{s:.4f}" for s in scores))


def test_criterion_10_stoi_agrees_with_reference(concrete_channel):
    rng = np.random.default_rng(106)
    base_a = make_vowel_sequence(seed=0)
    base_b = make_vowel_sequence(seed=3)
    pairs = []
    for base in (base_a, base_b):
        n = len(base)
        white = SampleBuffer(rng.standard_normal(n), base.rate)
        for snr in (10.0, 0.0):
            pairs.append((base, mix_at_snr(base, white, snr)))
        pairs.append((base, mix_at_snr(base, pink_noise(n, seed=50), 2.0)))
        pairs.append((base, SampleBuffer(
            lfilter([0.4], [1.0, -0.6], base.samples), base.rate)))
    distorted, aligned = make_pair(base_a, concrete_channel, 0.0, seed=7)
    pairs.append((aligned, distorted))
    clipped = SampleBuffer(np.clip(base_b.samples, -0.03, 0.03), base_b.rate)
    pairs.append((base_b, clipped))
    assert len(pairs) == 10

    worst = 0.0
    for clean, deg in pairs:
        ours = stoi(clean, deg)
        ref = stoi_reference(clean.samples, clean.rate, deg.samples, deg.rate)
        worst = max(worst, abs(ours - ref))
    _verdict(10, "intelligibility score matches independent implementation",
             worst < 0.01, f"max |deviation| {worst:.5f} < 0.01 over 10 pairs")
