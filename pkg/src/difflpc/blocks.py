"""Differentiable all-pole blocks with exact adjoints.

Two maps form the core: a pole-to-coefficient expansion (iterated
convolution of monomial factors, complex arithmetic carried explicitly)
and a coefficient-plus-excitation-to-waveform synthesis that solves a
unit-triangular banded system by time recursion instead of materializing
its inverse.  Every map ships a hand-derived vector-Jacobian product and
a dense oracle or finite-difference checker to prove it.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.signal import lfilter

from .audio import FrameLayout
from .errors import InstabilityError, RootFindingError

__all__ = [
    "EPS_STAB",
    "PoleParams",
    "PoleSet",
    "ComplexCoeffs",
    "poles_from_params",
    "params_from_poles",
    "poles2lp",
    "poles2lp_grad",
    "lp2wav",
    "lp2wav_vjp",
    "dense_oracle",
    "lp2poles",
    "grad_check",
]

# Stability margin: pole radii are kept strictly below 1 - EPS_STAB so the
# triangular solve stays well conditioned at any frame length.
EPS_STAB = 1e-3


@dataclass
class PoleParams:
    """Unconstrained per-slot pole parameters, both (n_slots, order).

    radius_raw maps through a scaled sigmoid to the pole radius; angle is
    used directly (radians).  In conjugate pairing mode only the first
    ceil(order/2) columns drive poles; the rest are inert.
    """

    radius_raw: np.ndarray
    angle: np.ndarray

    def __post_init__(self):
        self.radius_raw = np.asarray(self.radius_raw, dtype=np.float64)
        self.angle = np.asarray(self.angle, dtype=np.float64)
        if self.radius_raw.shape != self.angle.shape or self.radius_raw.ndim != 2:
            raise ValueError("radius_raw and angle must share a 2-D shape")
        if not (np.all(np.isfinite(self.radius_raw)) and np.all(np.isfinite(self.angle))):
            raise ValueError("pole parameters must be finite")

    @property
    def shape(self):
        return self.radius_raw.shape


@dataclass
class PoleSet:
    """Complex poles, (n_slots, order), every radius < 1 - EPS_STAB."""

    poles: np.ndarray

    def __post_init__(self):
        self.poles = np.asarray(self.poles, dtype=np.complex128)
        if self.poles.ndim != 2:
            raise ValueError("poles must be 2-D (n_slots, order)")
        if not np.all(np.isfinite(self.poles)):
            raise ValueError("poles must be finite")


@dataclass
class ComplexCoeffs:
    """Complex predictor coefficients (n_slots, order) from the expansion.

    The real part is the usable coefficient matrix; with conjugate-paired
    poles the imaginary part vanishes to rounding error.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)

    def lp_matrix(self) -> np.ndarray:
        """Real coefficient matrix transposed to (order, n_slots)."""
        return np.ascontiguousarray(self.coeffs.real.T)


# ---------------------------------------------------------------------------
# Pole parameterization


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def poles_from_params(params: PoleParams, pairing: str = "conjugate") -> PoleSet:
    """Map unconstrained parameters to strictly stable poles.

    radius = (1 - EPS_STAB) * sigmoid(radius_raw), so |pole| < 1 always
    and the map is differentiable everywhere.  "conjugate" builds
    floor(order/2) conjugate pairs from the leading parameter columns
    plus, for odd order, one real pole radius*cos(angle); coefficients
    then come out exactly real.  "free" places every pole independently.
    """
    if pairing not in ("conjugate", "free"):
        raise ValueError("pairing must be 'conjugate' or 'free'")
    radius = (1.0 - EPS_STAB) * _sigmoid(params.radius_raw)
    n_slots, order = params.shape
    if pairing == "free":
        return PoleSet(radius * np.exp(1j * params.angle))
    poles = np.zeros((n_slots, order), dtype=np.complex128)
    half = order // 2
    rep = radius[:, :half] * np.exp(1j * params.angle[:, :half])
    poles[:, 0 : 2 * half : 2] = rep
    poles[:, 1 : 2 * half : 2] = np.conj(rep)
    if order % 2:
        poles[:, order - 1] = radius[:, half] * np.cos(params.angle[:, half])
    return PoleSet(poles)


def _poles_from_params_vjp(params: PoleParams, pairing: str,
                           grad_poles: np.ndarray):
    """Pull a complex cotangent on the poles back to (radius_raw, angle).

    grad_poles uses the convention g = dL/dRe + i*dL/dIm per pole.
    """
    sig = _sigmoid(params.radius_raw)
    radius = (1.0 - EPS_STAB) * sig
    dradius_draw = (1.0 - EPS_STAB) * sig * (1.0 - sig)
    n_slots, order = params.shape
    d_rad = np.zeros((n_slots, order))
    d_ang = np.zeros((n_slots, order))
    if pairing == "free":
        rot = np.exp(-1j * params.angle)
        d_rad = (grad_poles * rot).real
        d_ang = radius * (grad_poles * rot).imag
    else:
        half = order // 2
        th = params.angle[:, :half]
        g1 = grad_poles[:, 0 : 2 * half : 2] * np.exp(-1j * th)
        g2 = grad_poles[:, 1 : 2 * half : 2] * np.exp(1j * th)
        d_rad[:, :half] = g1.real + g2.real
        d_ang[:, :half] = radius[:, :half] * (g1.imag - g2.imag)
        if order % 2:
            g = grad_poles[:, order - 1].real
            rho = radius[:, half]
            d_rad[:, half] = g * np.cos(params.angle[:, half])
            d_ang[:, half] = -g * rho * np.sin(params.angle[:, half])
    return d_rad * dradius_draw, d_ang


def params_from_poles(poles: np.ndarray, pairing: str = "conjugate") -> PoleParams:
    """Invert poles_from_params for optimizer initialization.

    Exact for "free" pairing.  For "conjugate", complex roots (taken with
    positive imaginary part) fill the pair columns; surplus real roots are
    folded two at a time into an approximate pair of matching magnitude,
    since a polar conjugate pair cannot represent two distinct real roots.
    """
    poles = np.atleast_2d(np.asarray(poles, dtype=np.complex128))
    n_slots, order = poles.shape
    lim = 1.0 - EPS_STAB

    def raw_of(rad):
        u = np.clip(np.asarray(rad, dtype=np.float64) / lim, 1e-9, 1.0 - 1e-9)
        return np.log(u / (1.0 - u))

    if pairing == "free":
        return PoleParams(raw_of(np.abs(poles)), np.angle(poles))
    if pairing != "conjugate":
        raise ValueError("pairing must be 'conjugate' or 'free'")

    half = order // 2
    radius_raw = np.zeros((n_slots, order))
    angle = np.zeros((n_slots, order))
    for s in range(n_slots):
        row = poles[s]
        reps = sorted(row[row.imag > 1e-9], key=lambda z: abs(np.angle(z)))
        reals = sorted(row[np.abs(row.imag) <= 1e-9].real, key=abs, reverse=True)
        reals = list(reals)
        while len(reps) < half and len(reals) >= 2:
            r1, r2 = reals.pop(0), reals.pop(0)
            rho = np.sqrt(abs(r1 * r2))
            if r1 * r2 < 0:
                theta = np.pi / 2
            else:
                theta = 0.0 if r1 + r2 >= 0 else np.pi
            reps.append(rho * np.exp(1j * theta))
        reps = sorted(reps, key=lambda z: abs(np.angle(z)))
        for i, rep in enumerate(reps[:half]):
            radius_raw[s, i] = raw_of(abs(rep))
            angle[s, i] = np.angle(rep)
        if order % 2:
            r = reals[0] if reals else 0.0
            radius_raw[s, half] = raw_of(abs(r))
            angle[s, half] = 0.0 if r >= 0 else np.pi
    return PoleParams(radius_raw, angle)


# ---------------------------------------------------------------------------
# Pole -> coefficient expansion


def _expand_steps(poles: np.ndarray):
    """Iterated monomial convolution; returns every intermediate stage.

    Stage i multiplies the running polynomial by (z - r_i), i.e. the
    length-2 convolution with [1, -r_i], carried in complex arithmetic
    (equivalently the four-real-convolution split).
    """
    n_slots, order = poles.shape
    c = np.zeros((n_slots, order + 1), dtype=np.complex128)
    c[:, 0] = 1.0
    stages = [c]
    for i in range(order):
        nxt = c.copy()
        nxt[:, 1 : i + 2] -= poles[:, i : i + 1] * c[:, 0 : i + 1]
        stages.append(nxt)
        c = nxt
    return stages


def poles2lp(pole_set: PoleSet) -> ComplexCoeffs:
    """Expand per-slot poles into complex predictor coefficients.

    The monic product prod_i (z - r_i) = z^P + c_1 z^(P-1) + ... + c_P is
    built by iterated convolution; predictor coefficients are a_p = -c_p
    (the leading 1 is dropped).  Stability of the result is inherited
    from the poles by construction.
    """
    stages = _expand_steps(pole_set.poles)
    return ComplexCoeffs(-stages[-1][:, 1:])


def _poles2lp_vjp(pole_set: PoleSet, grad_coeffs: np.ndarray) -> np.ndarray:
    """Adjoint of the expansion: complex cotangent on coefficients ->
    complex cotangent on poles (g = dL/dRe + i*dL/dIm convention)."""
    poles = pole_set.poles
    n_slots, order = poles.shape
    stages = _expand_steps(poles)
    gc = np.zeros((n_slots, order + 1), dtype=np.complex128)
    gc[:, 1:] = -np.asarray(grad_coeffs, dtype=np.complex128)
    gp = np.zeros((n_slots, order), dtype=np.complex128)
    for i in reversed(range(order)):
        prev = stages[i]
        # stage rule: nxt[j] = prev[j] - r_i * prev[j-1]
        gp[:, i] = np.sum(gc[:, 1 : i + 2] * np.conj(-prev[:, 0 : i + 1]), axis=1)
        gc[:, 0 : i + 1] += gc[:, 1 : i + 2] * np.conj(-poles[:, i : i + 1])
    return gp


def poles2lp_grad(params: PoleParams, grad_real: np.ndarray,
                  grad_imag: np.ndarray, pairing: str = "conjugate"):
    """Full adjoint params -> coefficients: given the gradient of a loss
    w.r.t. the real and imaginary coefficient parts, return the gradients
    w.r.t. (radius_raw, angle)."""
    pole_set = poles_from_params(params, pairing)
    g = np.asarray(grad_real, dtype=np.float64) + 1j * np.asarray(grad_imag, dtype=np.float64)
    gp = _poles2lp_vjp(pole_set, g)
    return _poles_from_params_vjp(params, pairing, gp)


# ---------------------------------------------------------------------------
# Coefficient + excitation -> waveform (banded triangular solve)


def _ar_state_zi(ar: np.ndarray, hist: np.ndarray) -> np.ndarray:
    """Direct-form-II-transposed initial state equivalent to an output
    history (hist newest-first) for the pure-AR filter [1, ar...]."""
    order = ar.size
    zi = np.empty(order)
    for m in range(order):
        zi[m] = -(ar[m:] @ hist[: order - m])
    return zi


def _ar_recursion(coeffs: np.ndarray, z: np.ndarray, slot_len: int,
                  state=None) -> np.ndarray:
    """x[k] = sum_p a_p(slot(k)) x[k-p] + z[k], slot-wise coefficients.

    state, when given, holds the last `order` output samples in time
    order; otherwise the recursion starts from silence.  Each slot runs
    as a constant-coefficient IIR continued from the rolling history.
    """
    order, n_slots = coeffs.shape
    n = slot_len * n_slots
    if z.size != n:
        raise ValueError("excitation length does not match slots")
    out = np.empty(order + n)
    out[:order] = 0.0 if state is None else state
    b = np.ones(1)
    for s in range(n_slots):
        lo = order + s * slot_len
        ar = -coeffs[:, s]
        if np.any(ar):
            hist = out[lo - order : lo][::-1]
            zi = _ar_state_zi(ar, hist)
            seg, _ = lfilter(b, np.concatenate(([1.0], ar)),
                             z[s * slot_len : (s + 1) * slot_len], zi=zi)
        else:
            seg = z[s * slot_len : (s + 1) * slot_len]
        out[lo : lo + slot_len] = seg
    x = out[order:]
    bad = ~np.isfinite(x)
    if bad.any():
        first = int(np.argmax(bad))
        raise InstabilityError(f"non-finite sample at index {first}", index=first)
    return x


def lp2wav(coeffs: np.ndarray, z: np.ndarray, layout: FrameLayout) -> np.ndarray:
    """Synthesize a waveform from per-slot coefficients and excitation.

    coeffs is (order, n_slots) — n_slots may span several frames — and z
    has n_slots*slot_len samples.  This computes the solution of the
    unit-triangular banded system (I - W^T) x = z by forward time
    recursion with zero initial state, at O(n*order) cost, identical to
    multiplying by the dense inverse (see dense_oracle).
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[0] != layout.order:
        raise ValueError("coeffs must be (order, n_slots)")
    return _ar_recursion(coeffs, z, layout.slot_len)


def lp2wav_vjp(coeffs: np.ndarray, z: np.ndarray, layout: FrameLayout,
               x: np.ndarray, grad: np.ndarray):
    """Adjoint of lp2wav: map g = dL/dx to (dL/dcoeffs, dL/dz).

    Solves the transposed system U^T q = g as a reverse-time recursion
    (the matrix-free form of dV = -V dU V): dL/dz = q and
    dL/da_p(slot) = sum_{k in slot} q[k] * x[k-p].
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    order, n_slots = coeffs.shape
    slot_len = layout.slot_len
    n = slot_len * n_slots
    g = np.asarray(grad, dtype=np.float64)
    if g.size != n or np.asarray(x).size != n:
        raise ValueError("gradient/waveform length mismatch")

    q = np.empty(n)
    b = np.ones(1)
    for s in reversed(range(n_slots)):
        lo, hi = s * slot_len, (s + 1) * slot_len
        ghat = g[lo:hi].copy()
        if s + 1 < n_slots:
            # couplings q[k] <- a_p(next slot) * q[k+p] for k near the slot
            # end; k+p always lands in slot s+1 because order <= slot_len
            a_next = coeffs[:, s + 1]
            for p in range(1, order + 1):
                if a_next[p - 1] != 0.0:
                    ghat[slot_len - p :] += a_next[p - 1] * q[hi : hi + p]
        ar = -coeffs[:, s]
        if np.any(ar):
            rev = lfilter(b, np.concatenate(([1.0], ar)), ghat[::-1])
            q[lo:hi] = rev[::-1]
        else:
            q[lo:hi] = ghat

    xpad = np.concatenate([np.zeros(order), np.asarray(x, dtype=np.float64)])
    d_coeffs = np.empty((order, n_slots))
    for p in range(1, order + 1):
        prod = q * xpad[order - p : order - p + n]
        d_coeffs[p - 1] = prod.reshape(n_slots, slot_len).sum(axis=1)
    return d_coeffs, q


def dense_oracle(coeffs: np.ndarray, z: np.ndarray, layout: FrameLayout):
    """Materialized reference for lp2wav at test scale.

    Builds the (n+1) x (n+1) strictly upper-triangular W whose column k
    holds the predictor weights of sample k on its min(order, k)
    predecessors (index 0 is the zero initial sample), then solves the
    unit lower-triangular I - W^T by substitution.  Returns (W, V, x)
    with x trimmed back to the n real samples.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    order, n_slots = coeffs.shape
    slot_len = layout.slot_len
    n = slot_len * n_slots
    if z.size != n:
        raise ValueError("excitation length does not match slots")
    if n + 1 > 512:
        raise ValueError("dense oracle restricted to n+1 <= 512")
    size = n + 1
    w = np.zeros((size, size))
    for j in range(1, size):
        slot = (j - 1) // slot_len
        for p in range(1, min(order, j) + 1):
            w[j - p, j] = coeffs[p - 1, slot]
    u = np.eye(size) - w.T
    v = solve_triangular(u, np.eye(size), lower=True, unit_diagonal=True)
    x_aug = v @ np.concatenate([[0.0], z])
    return w, v, x_aug[1:]


# ---------------------------------------------------------------------------
# Coefficient -> pole inverse map


def _aberth_roots(c: np.ndarray, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """All roots of the monic-led polynomial c[0] z^P + ... + c[P].

    Aberth-Ehrlich simultaneous iteration.  The residual is a relative
    backward error: max over roots of |p(z)| divided by sum |c_j||z|^j,
    the rounding scale of float evaluation, so tol near 1e-12 is always
    reachable.  Trailing zero coefficients are deflated to roots at the
    origin first.
    """
    c = np.asarray(c, dtype=np.complex128)
    n_zero = 0
    while c.size > 1 and c[-1] == 0.0:
        c = c[:-1]
        n_zero += 1
    degree = c.size - 1
    if degree == 0:
        return np.zeros(n_zero, dtype=np.complex128)
    if degree == 1:
        return np.concatenate([[-c[1] / c[0]], np.zeros(n_zero, dtype=np.complex128)])
    dpoly = c[:-1] * np.arange(degree, 0, -1)
    abs_c = np.abs(c)

    # start on a circle sized by the root-magnitude bound, detuned so no
    # two guesses coincide
    bound = 1.0 + float(np.max(np.abs(c[1:] / c[0])))
    r0 = min(bound, max(abs(c[-1] / c[0]) ** (1.0 / degree), 1e-3))
    ang = 2.0 * np.pi * (np.arange(degree) + 0.25) / degree + 0.4
    z = r0 * np.exp(1j * ang)

    residual = np.inf
    for _ in range(max_iter):
        pz = np.polyval(c, z)
        residual = float(np.max(np.abs(pz) / np.polyval(abs_c, np.abs(z))))
        if residual < tol:
            break
        dz = np.polyval(dpoly, z)
        dz = np.where(dz == 0.0, 1e-30, dz)
        w = pz / dz
        diff = z[:, None] - z[None, :]
        np.fill_diagonal(diff, np.inf)
        sums = np.sum(1.0 / diff, axis=1)
        denom = 1.0 - w * sums
        denom = np.where(np.abs(denom) < 1e-30, 1.0, denom)
        z = z - w / denom
    else:
        raise RootFindingError(
            f"root refinement stalled at residual {residual:.3e}", residual=residual)
    return np.concatenate([z, np.zeros(n_zero, dtype=np.complex128)])


def lp2poles(a: np.ndarray) -> np.ndarray:
    """Poles of the predictor z^P - a_1 z^(P-1) - ... - a_P (one slot).

    Any root outside the stability margin is reflected to
    (1 - EPS_STAB)^2 / conj(r), which inverts the magnitude about the
    margin while preserving the angle.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    c = np.concatenate([[1.0], -a])
    roots = _aberth_roots(c)
    lim = 1.0 - EPS_STAB
    mag = np.abs(roots)
    bad = mag > lim
    if bad.any():
        roots = roots.copy()
        roots[bad] = lim ** 2 / np.conj(roots[bad])
    return roots


# ---------------------------------------------------------------------------
# Finite-difference verification


def _random_stable_coeffs(rng, layout: FrameLayout, max_radius: float = 0.9) -> np.ndarray:
    """Coefficient matrix whose slot polynomials have radius <= max_radius."""
    n_slots, order = layout.n_slots, layout.order
    raw = np.log(max_radius / (1.0 - max_radius)) * np.ones((n_slots, order))
    params = PoleParams(
        np.minimum(rng.normal(-1.0, 1.0, (n_slots, order)), raw),
        rng.uniform(-np.pi, np.pi, (n_slots, order)),
    )
    return poles2lp(poles_from_params(params, "conjugate")).lp_matrix()


def grad_check(op_id: str, point=None, eps: float = 1e-6, seed: int = 0,
               pairing: str = "conjugate") -> float:
    """Compare analytic adjoints against central finite differences.

    op_id selects the block: "poles2lp", "lp2wav", or "composed" (the
    params -> poles -> coefficients -> waveform -> loss pipeline, with
    the full Mel/waveform/coefficient loss at a toy scale).  Returns the
    max over coordinates of |analytic - numeric| / max(1, |numeric|).
    """
    rng = np.random.default_rng(seed)

    if op_id == "poles2lp":
        params = point if point is not None else PoleParams(
            rng.normal(0.0, 1.0, (3, 4)), rng.uniform(-np.pi, np.pi, (3, 4)))
        w_re = rng.normal(size=params.shape)
        w_im = rng.normal(size=params.shape)

        def loss(p):
            c = poles2lp(poles_from_params(p, pairing)).coeffs
            return float(np.sum(w_re * c.real + w_im * c.imag))

        d_raw, d_ang = poles2lp_grad(params, w_re, w_im, pairing)
        return _fd_compare(loss, params, (d_raw, d_ang), eps)

    if op_id == "lp2wav":
        layout = FrameLayout(slot_len=4, n_slots=3, order=3)
        if point is None:
            coeffs = _random_stable_coeffs(rng, layout)
            z = rng.normal(size=layout.frame_len)
        else:
            coeffs, z, layout = point
        w = rng.normal(size=z.size)

        def loss_az(a_mat, z_vec):
            return float(w @ lp2wav(a_mat, z_vec, layout))

        x = lp2wav(coeffs, z, layout)
        d_a, d_z = lp2wav_vjp(coeffs, z, layout, x, w)
        worst = 0.0
        for arr, grads in ((coeffs, d_a), (z, d_z)):
            flat = arr.ravel()
            gflat = grads.ravel()
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + eps
                hi = loss_az(coeffs, z)
                flat[i] = keep - eps
                lo = loss_az(coeffs, z)
                flat[i] = keep
                num = (hi - lo) / (2.0 * eps)
                worst = max(worst, abs(gflat[i] - num) / max(1.0, abs(num)))
        return worst

    if op_id.startswith("composed"):
        # local import: the composite loss lives a layer above the blocks
        from .enhance import EnhanceConfig, composite_loss
        from .audio import SampleBuffer

        layout = FrameLayout(slot_len=6, n_slots=3, order=4)
        cfg = EnhanceConfig(layout=layout, pairing_mode=pairing,
                            mel_fft=32, mel_win_s=16 / 11025.0,
                            mel_hop_s=8 / 11025.0, n_mels=8)
        if point is None:
            params = PoleParams(rng.normal(0.0, 1.0, (3, 4)),
                                rng.uniform(-np.pi, np.pi, (3, 4)))
            z = 0.5 * rng.normal(size=layout.frame_len)
            clean = SampleBuffer(0.3 * rng.normal(size=2 * layout.frame_len), 22050)
        else:
            params, z, clean = point

        def loss(p):
            report, _ = composite_loss(p, z, clean, cfg)
            return report.total

        _, (d_raw, d_ang) = composite_loss(params, z, clean, cfg)
        return _fd_compare(loss, params, (d_raw, d_ang), eps)

    raise ValueError(f"unknown op_id {op_id!r}")


def _fd_compare(loss, params: PoleParams, grads, eps: float) -> float:
    """Central differences over every PoleParams coordinate."""
    worst = 0.0
    for arr, grad in ((params.radius_raw, grads[0]), (params.angle, grads[1])):
        flat = arr.ravel()
        gflat = np.asarray(grad).ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = loss(params)
            flat[i] = keep - eps
            lo = loss(params)
            flat[i] = keep
            num = (hi - lo) / (2.0 * eps)
            worst = max(worst, abs(gflat[i] - num) / max(1.0, abs(num)))
    return worst
