"""Differentiable block tests: dual-route oracles and adjoint identities."""

import numpy as np
import pytest

from difflpc import (
    EPS_STAB,
    FrameLayout,
    InstabilityError,
    PoleParams,
    dense_oracle,
    grad_check,
    lp2poles,
    lp2wav,
    lp2wav_vjp,
    params_from_poles,
    poles2lp,
    poles_from_params,
)
from difflpc.blocks import _random_stable_coeffs


def _rand_params(rng, n_slots, order):
    return PoleParams(rng.normal(0.0, 1.5, (n_slots, order)),
                      rng.uniform(-np.pi, np.pi, (n_slots, order)))


def _match_dist(a, b):
    """Worst pairing distance between two root multisets (greedy nearest);
    immune to the ordering ambiguity of conjugate pairs."""
    pool = list(b)
    worst = 0.0
    for z in a:
        d = [abs(z - w) for w in pool]
        i = int(np.argmin(d))
        worst = max(worst, d[i])
        pool.pop(i)
    return worst


# ---------------------------------------------------------------------------
# parameter validation


def test_pole_params_shape_mismatch():
    with pytest.raises(ValueError):
        PoleParams(np.zeros((2, 3)), np.zeros((2, 4)))


def test_pole_params_must_be_2d():
    with pytest.raises(ValueError):
        PoleParams(np.zeros(3), np.zeros(3))


def test_pole_params_must_be_finite():
    bad = np.zeros((2, 3))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        PoleParams(bad, np.zeros((2, 3)))


def test_pairing_mode_rejected():
    p = PoleParams(np.zeros((1, 2)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        poles_from_params(p, "paired")


# ---------------------------------------------------------------------------
# parameterization


def test_radius_strictly_inside_margin():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = _rand_params(rng, 4, 7)
        for mode in ("conjugate", "free"):
            poles = poles_from_params(p, mode).poles
            assert np.all(np.abs(poles) <= 1.0 - EPS_STAB)


def test_conjugate_mode_pairs_and_real_pole():
    rng = np.random.default_rng(4)
    p = _rand_params(rng, 3, 5)
    poles = poles_from_params(p, "conjugate").poles
    # columns 0/1 and 2/3 are conjugate pairs, column 4 is real
    assert np.allclose(poles[:, 0], np.conj(poles[:, 1]))
    assert np.allclose(poles[:, 2], np.conj(poles[:, 3]))
    assert np.all(poles[:, 4].imag == 0.0)


def test_free_mode_roundtrip_exact():
    rng = np.random.default_rng(5)
    p = _rand_params(rng, 6, 8)
    poles = poles_from_params(p, "free").poles
    back = poles_from_params(params_from_poles(poles, "free"), "free").poles
    assert np.max(np.abs(back - poles)) < 1e-9


def test_conjugate_roundtrip_on_paired_sets():
    # sets that genuinely consist of pairs (+ real pole) survive the
    # conjugate re-encoding up to ordering
    rng = np.random.default_rng(6)
    for _ in range(20):
        p = _rand_params(rng, 2, 7)
        poles = poles_from_params(p, "conjugate").poles
        back = poles_from_params(params_from_poles(poles, "conjugate"),
                                 "conjugate").poles
        assert _match_dist(poles.ravel(), back.ravel()) < 1e-8


# ---------------------------------------------------------------------------
# pole -> coefficient expansion


def test_poles2lp_matches_numpy_poly():
    # independent route: numpy's root-to-coefficient expansion
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        order = int(rng.integers(1, 12))
        p = _rand_params(rng, 2, order)
        pole_set = poles_from_params(p, "free")
        poles = pole_set.poles
        coeffs = poles2lp(pole_set).coeffs
        for s in range(poles.shape[0]):
            ref = np.poly(poles[s])          # [1, c_1..c_P]
            a_ref = -ref[1:]
            err = np.max(np.abs(coeffs[s] - a_ref)) / max(1.0, np.max(np.abs(a_ref)))
            worst = max(worst, err)
    assert worst < 1e-10, f"poles2lp deviates from np.poly by {worst:.3e}"


def test_conjugate_coefficients_are_real():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        order = int(rng.integers(1, 12))
        p = _rand_params(rng, 3, order)
        coeffs = poles2lp(poles_from_params(p, "conjugate")).coeffs
        worst = max(worst, float(np.max(np.abs(coeffs.imag))))
    assert worst < 1e-12


def test_lp_matrix_orientation():
    p = PoleParams(np.zeros((4, 3)), np.zeros((4, 3)))
    mat = poles2lp(poles_from_params(p, "conjugate")).lp_matrix()
    assert mat.shape == (3, 4)
    assert mat.dtype == np.float64


# ---------------------------------------------------------------------------
# coefficient -> pole inverse


def test_lp2poles_quadratic():
    # z^2 - 1.27279 z + 0.81: conjugate pair at radius 0.9
    roots = lp2poles(np.array([1.27279, -0.81]))
    roots = roots[np.argsort(roots.imag)]
    assert roots[1] == pytest.approx(0.636395 + 0.6363972j, abs=1e-6)
    assert abs(roots[0]) == pytest.approx(0.9, abs=1e-9)


def test_lp2poles_reflects_unstable_root():
    # single pole at 1.25 is outside the margin; reflected magnitude is
    # (1 - EPS_STAB)^2 / 1.25
    roots = lp2poles(np.array([1.25]))
    assert roots.shape == (1,)
    assert roots[0].real == pytest.approx(0.7984008, abs=1e-7)
    assert roots[0].imag == 0.0


def test_lp2poles_matches_numpy_roots():
    rng = np.random.default_rng(9)
    layout = FrameLayout(slot_len=12, n_slots=5, order=9)
    for _ in range(25):
        a = _random_stable_coeffs(rng, layout)[:, 0]
        ref = np.roots(np.concatenate([[1.0], -a]))
        assert _match_dist(lp2poles(a), ref) < 1e-9


def test_expansion_roundtrip():
    rng = np.random.default_rng(10)
    for _ in range(30):
        order = int(rng.integers(1, 12))
        p = _rand_params(rng, 1, order)
        pole_set = poles_from_params(p, "conjugate")
        poles = pole_set.poles[0]
        a = poles2lp(pole_set).coeffs[0].real
        assert _match_dist(lp2poles(a), poles) < 1e-8


# ---------------------------------------------------------------------------
# synthesis vs dense oracle


def test_lp2wav_matches_dense_oracle():
    rng = np.random.default_rng(11)
    layout = FrameLayout(slot_len=5, n_slots=8, order=4)
    worst = 0.0
    for _ in range(25):
        coeffs = _random_stable_coeffs(rng, layout)
        z = rng.normal(size=layout.frame_len)
        fast = lp2wav(coeffs, z, layout)
        _, _, dense = dense_oracle(coeffs, z, layout)
        err = np.linalg.norm(fast - dense) / np.linalg.norm(dense)
        worst = max(worst, err)
    assert worst < 1e-10, f"recursion deviates from dense solve by {worst:.3e}"


def test_dense_oracle_size_guard():
    layout = FrameLayout(slot_len=64, n_slots=10, order=4)
    with pytest.raises(ValueError):
        dense_oracle(np.zeros((4, 10)), np.zeros(640), layout)


def test_lp2wav_shape_guards():
    layout = FrameLayout(slot_len=6, n_slots=2, order=3)
    with pytest.raises(ValueError):
        lp2wav(np.zeros((4, 2)), np.zeros(12), layout)
    with pytest.raises(ValueError):
        lp2wav(np.zeros((3, 2)), np.zeros(13), layout)


def test_lp2wav_raises_on_blowup():
    # pole at 10: overflow to inf within a few hundred samples
    layout = FrameLayout(slot_len=46, n_slots=8, order=1)
    coeffs = np.full((1, 8), 10.0)
    z = np.zeros(layout.frame_len)
    z[0] = 1.0
    with pytest.raises(InstabilityError):
        lp2wav(coeffs, z, layout)


# ---------------------------------------------------------------------------
# adjoints


def test_lp2wav_vjp_excitation_adjoint_dense():
    # d_z must equal V^T g where V is the materialized inverse
    rng = np.random.default_rng(12)
    layout = FrameLayout(slot_len=5, n_slots=6, order=3)
    for _ in range(10):
        coeffs = _random_stable_coeffs(rng, layout)
        z = rng.normal(size=layout.frame_len)
        x = lp2wav(coeffs, z, layout)
        g = rng.normal(size=x.size)
        _, d_z = lp2wav_vjp(coeffs, z, layout, x, g)
        _, v, _ = dense_oracle(coeffs, z, layout)
        ref = v[1:, 1:].T @ g
        assert np.max(np.abs(d_z - ref)) < 1e-12


def test_lp2wav_vjp_coeff_adjoint_fd():
    rng = np.random.default_rng(13)
    layout = FrameLayout(slot_len=6, n_slots=4, order=3)
    coeffs = _random_stable_coeffs(rng, layout)
    z = rng.normal(size=layout.frame_len)
    w = rng.normal(size=layout.frame_len)
    x = lp2wav(coeffs, z, layout)
    d_a, _ = lp2wav_vjp(coeffs, z, layout, x, w)
    eps = 1e-6
    for _ in range(20):
        p = int(rng.integers(layout.order))
        s = int(rng.integers(layout.n_slots))
        cp = coeffs.copy()
        cp[p, s] += eps
        up = w @ lp2wav(cp, z, layout)
        cp[p, s] -= 2 * eps
        dn = w @ lp2wav(cp, z, layout)
        num = (up - dn) / (2 * eps)
        assert abs(d_a[p, s] - num) / max(1.0, abs(num)) < 1e-6


def test_grad_check_poles2lp():
    for seed in (0, 1, 2):
        err = grad_check("poles2lp", seed=seed)
        assert err < 1e-5, f"seed {seed}: {err:.3e}"


def test_grad_check_poles2lp_free():
    err = grad_check("poles2lp", seed=0, pairing="free")
    assert err < 1e-5


def test_grad_check_lp2wav():
    for seed in (0, 1, 2):
        err = grad_check("lp2wav", seed=seed)
        assert err < 1e-5, f"seed {seed}: {err:.3e}"


def test_grad_check_composed():
    for seed in (0, 1, 2):
        err = grad_check("composed", seed=seed)
        assert err < 1e-4, f"seed {seed}: {err:.3e}"


def test_grad_check_unknown_op():
    with pytest.raises(ValueError):
        grad_check("lp2mel")


# ---------------------------------------------------------------------------
# stability property


def test_random_draws_always_stable():
    # any parameter draw must yield bounded synthesis; smaller sibling of
    # the full acceptance sweep
    rng = np.random.default_rng(14)
    layout = FrameLayout(slot_len=46, n_slots=10, order=11)
    for _ in range(200):
        p = PoleParams(rng.normal(0.0, 3.0, (layout.n_slots, layout.order)),
                       rng.uniform(-np.pi, np.pi, (layout.n_slots, layout.order)))
        poles = poles_from_params(p, "conjugate")
        assert np.max(np.abs(poles.poles)) <= 1.0 - EPS_STAB
        coeffs = poles2lp(poles).lp_matrix()
        z = rng.normal(size=layout.frame_len)
        x = lp2wav(coeffs, z, layout)
        assert np.all(np.isfinite(x))
