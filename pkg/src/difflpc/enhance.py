"""Analysis-by-synthesis enhancement.

The enhancer keeps the excitation extracted from the distorted signal
fixed and re-estimates per-slot pole parameters by gradient descent on a
composite objective: log-Mel distance at the output rate, waveform MSE
at the working rate, and a coefficient-domain pull toward the clean
predictors.  All gradients are exact (hand-derived adjoints end to end).
A small linear regressor that predicts pole parameters from distorted
analysis features, trained on the same loss, is included for batch use.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .audio import (FrameLayout, MelTransform, SampleBuffer, _resample_core,
                    _resample_core_adjoint, resample)
from .blocks import (PoleParams, _ar_recursion, lp2poles, lp2wav_vjp,
                     params_from_poles, poles2lp, poles2lp_grad,
                     poles_from_params)
from .errors import InstabilityError, InsufficientSignalError, ManifestError
from .lpc import _slot_coeffs, lpc_analyze

__all__ = [
    "EnhanceConfig",
    "LossReport",
    "CompositeTargets",
    "EnhanceResult",
    "RegressorModel",
    "prepare_targets",
    "composite_loss",
    "enhance_fit",
    "write_trace",
    "train_regressor",
    "apply_regressor",
    "save_regressor",
    "load_regressor",
]


@dataclass
class EnhanceConfig:
    """Knobs for the composite loss and the fitting loop."""

    layout: FrameLayout = field(default_factory=FrameLayout)
    work_rate: int = 11025
    target_rate: int = 22050
    wave_weight: float = 1.0     # weight of the waveform MSE term
    lp_weight: float = 0.3       # weight of the coefficient-distance term
    pairing_mode: str = "free"
    optimizer: str = "adam"      # "adam" or "sgd"
    n_iters: int = 500
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    n_mels: int = 80
    mel_fft: int = 2048
    mel_win_s: float = 0.050
    mel_hop_s: float = 0.0125
    # mel power floor, relative to a unit-RMS signal; keeps near-empty
    # bands (orders of magnitude below voiced energy) out of the log
    mel_floor: float = 1.0
    divergence_factor: float = 10.0
    divergence_patience: int = 50


@dataclass
class LossReport:
    """One evaluation of the composite objective, by component."""

    total: float
    mel: float
    wave: float
    lp: float


@dataclass
class CompositeTargets:
    """Clean-side quantities reused across loss evaluations."""

    clean_work: np.ndarray       # clean at work rate, length n
    logmel_clean: np.ndarray
    coeff_target: np.ndarray     # complex (n_slots, order)
    mel: MelTransform
    up: int                      # work -> target rate ratio
    down: int


def _rate_ratio(cfg: EnhanceConfig):
    g = math.gcd(cfg.target_rate, cfg.work_rate)
    return cfg.target_rate // g, cfg.work_rate // g


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def prepare_targets(clean: SampleBuffer, cfg: EnhanceConfig, n: int) -> CompositeTargets:
    """Precompute the clean references for a run over n work-rate samples.

    The reference is level-normalized to unit RMS, so losses live in a
    level-free domain; enhance_fit normalizes its excitation the same
    way.  Predictor targets are unaffected (LPC is scale-invariant).
    """
    layout = cfg.layout
    if n % layout.slot_len:
        raise ValueError("n must be a whole number of slots")
    clean_work = resample(clean, cfg.work_rate).samples
    if clean_work.size < n:
        raise InsufficientSignalError(
            f"clean reference covers {clean_work.size} work-rate samples, need {n}")
    clean_work = clean_work[:n]
    scale = _rms(clean_work)
    if scale == 0.0:
        raise InsufficientSignalError("clean reference is silent")
    clean_work = clean_work / scale
    up, down = _rate_ratio(cfg)
    mel = MelTransform(cfg.target_rate, n_mels=cfg.n_mels, fft_size=cfg.mel_fft,
                       win_s=cfg.mel_win_s, hop_s=cfg.mel_hop_s,
                       floor=cfg.mel_floor)
    # reference through the same upsampling path as the synthesis, so a
    # perfect work-rate reconstruction scores exactly zero
    logmel_clean, _ = mel.forward(_resample_core(clean_work, up, down))
    coeff_target = _slot_coeffs(clean_work, n // layout.slot_len, layout)
    return CompositeTargets(
        clean_work=clean_work,
        logmel_clean=logmel_clean,
        coeff_target=coeff_target.T.astype(np.complex128),
        mel=mel,
        up=up,
        down=down,
    )


def composite_loss(params: PoleParams, z: np.ndarray, clean: SampleBuffer,
                   cfg: EnhanceConfig, targets: CompositeTargets = None):
    """Evaluate the composite objective and its exact parameter gradient.

    Terms: log-Mel MSE of the upsampled synthesis against the clean
    reference, waveform MSE at the work rate, and the mean complex
    modulus of the coefficient error against the clean predictors.
    Returns (LossReport, (d_radius_raw, d_angle)).
    """
    z = np.asarray(z, dtype=np.float64)
    n_slots = params.shape[0]
    layout = cfg.layout
    n = n_slots * layout.slot_len
    if z.size != n:
        raise ValueError("excitation length does not match the parameter slots")
    if targets is None:
        targets = prepare_targets(clean, cfg, n)

    coeffs_c = poles2lp(poles_from_params(params, cfg.pairing_mode))
    a_mat = coeffs_c.lp_matrix()
    synth = _ar_recursion(a_mat, z, layout.slot_len)
    up_sig = _resample_core(synth, targets.up, targets.down)
    logmel, cache = targets.mel.forward(up_sig)

    dmel = logmel - targets.logmel_clean
    l_mel = float(np.mean(dmel * dmel)) if dmel.size else 0.0
    dwave = synth - targets.clean_work
    l_wave = float(dwave @ dwave) / n
    delta = coeffs_c.coeffs - targets.coeff_target
    absd = np.abs(delta)
    l_lp = float(np.mean(absd))
    total = l_mel + cfg.wave_weight * l_wave + cfg.lp_weight * l_lp
    if not np.isfinite(total):
        raise InstabilityError(
            f"non-finite loss (mel={l_mel}, wave={l_wave}, lp={l_lp})")

    # pull back through mel + resample, add the waveform term
    d_synth = cfg.wave_weight * (2.0 / n) * dwave
    if dmel.size:
        d_up = targets.mel.vjp(cache, (2.0 / dmel.size) * dmel)
        d_synth = d_synth + _resample_core_adjoint(d_up, n, targets.up, targets.down)
    d_a, _ = lp2wav_vjp(a_mat, z, FrameLayout(layout.slot_len, n_slots, layout.order),
                        synth, d_synth)

    # coefficient-distance term: d|w|/dw in the (dRe, dIm) convention
    safe = np.where(absd > 0.0, absd, 1.0)
    g_lp = (cfg.lp_weight / absd.size) * (delta / safe)
    g_lp[absd == 0.0] = 0.0
    g_re = d_a.T + g_lp.real
    g_im = g_lp.imag
    d_raw, d_ang = poles2lp_grad(params, g_re, g_im, cfg.pairing_mode)
    return LossReport(total=total, mel=l_mel, wave=l_wave, lp=l_lp), (d_raw, d_ang)


@dataclass
class EnhanceResult:
    enhanced: SampleBuffer       # at cfg.target_rate, from the best iterate
    params: PoleParams
    trace: list                  # LossReport per iteration, pre-update
    best_iter: int
    stopped_early: bool

    def __iter__(self):
        # unpacks as (enhanced, trace)
        return iter((self.enhanced, self.trace))


def _synthesize_at_target(params: PoleParams, z: np.ndarray,
                          cfg: EnhanceConfig, scale: float = 1.0) -> SampleBuffer:
    a_mat = poles2lp(poles_from_params(params, cfg.pairing_mode)).lp_matrix()
    synth = scale * _ar_recursion(a_mat, z, cfg.layout.slot_len)
    up, down = _rate_ratio(cfg)
    return SampleBuffer(_resample_core(synth, up, down), cfg.target_rate)


def enhance_fit(distorted: SampleBuffer, clean: SampleBuffer,
                cfg: EnhanceConfig = None, callback=None) -> EnhanceResult:
    """Fit pole parameters to a distorted utterance by gradient descent.

    The distorted signal is brought to the work rate, normalized to unit
    RMS (the domain of prepare_targets), and analyzed; its excitation
    stays fixed while Adam refines the pole parameters, initialized from
    the distorted predictors via root finding.  The returned waveform
    comes from the best-loss iterate, upsampled to the target rate and
    restored to the input's loudness.  Stops early when the loss has
    exceeded divergence_factor times the initial loss for
    divergence_patience consecutive iterations, or on an unstable
    iterate.
    """
    cfg = cfg or EnhanceConfig()
    if cfg.optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
    layout = cfg.layout
    work = resample(distorted, cfg.work_rate)
    level = _rms(work.samples)
    if level == 0.0:
        raise InsufficientSignalError("distorted input is silent")
    work = SampleBuffer(work.samples / level, work.rate)
    frames = lpc_analyze(work, layout)
    a_init = np.concatenate([fr.coeffs for fr in frames], axis=1)
    z = np.concatenate([fr.excitation for fr in frames])
    n_slots = a_init.shape[1]

    poles0 = np.stack([lp2poles(a_init[:, s]) for s in range(n_slots)])
    params = params_from_poles(poles0, cfg.pairing_mode)
    targets = prepare_targets(clean, cfg, z.size)

    state = [(np.zeros(params.shape), np.zeros(params.shape)),
             (np.zeros(params.shape), np.zeros(params.shape))]
    trace = []
    best_total = np.inf
    best_params = params
    best_iter = 0
    streak = 0
    stopped = False
    for t in range(1, cfg.n_iters + 1):
        try:
            report, grads = composite_loss(params, z, clean, cfg, targets)
        except InstabilityError:
            # free pairing can step outside the stable set; keep the best
            # iterate found so far instead of failing the whole fit
            stopped = True
            break
        trace.append(report)
        if report.total < best_total:
            best_total = report.total
            best_params = PoleParams(params.radius_raw.copy(), params.angle.copy())
            best_iter = t - 1
        if report.total > cfg.divergence_factor * trace[0].total:
            streak += 1
            if streak >= cfg.divergence_patience:
                stopped = True
                break
        else:
            streak = 0
        if callback is not None:
            callback(t - 1, report)

        new_arrays = []
        for (arr, grad), (m, v) in zip(
                ((params.radius_raw, grads[0]), (params.angle, grads[1])), state):
            if cfg.optimizer == "sgd":
                new_arrays.append(arr - cfg.lr * grad)
                continue
            m[:] = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
            v[:] = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
            mhat = m / (1.0 - cfg.beta1 ** t)
            vhat = v / (1.0 - cfg.beta2 ** t)
            new_arrays.append(arr - cfg.lr * mhat / (np.sqrt(vhat) + cfg.adam_eps))
        params = PoleParams(new_arrays[0], new_arrays[1])

    enhanced = _synthesize_at_target(best_params, z, cfg, scale=level)
    return EnhanceResult(enhanced=enhanced, params=best_params, trace=trace,
                         best_iter=best_iter, stopped_early=stopped)


def write_trace(path, trace) -> None:
    """Loss trace as CSV: iter,total,mel,wave,lp."""
    lines = ["iter,total,mel,wave,lp"]
    for i, rep in enumerate(trace):
        lines.append(f"{i},{rep.total:.10g},{rep.mel:.10g},"
                     f"{rep.wave:.10g},{rep.lp:.10g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Feature-driven regressor (batch alternative to per-utterance fitting)


@dataclass
class RegressorModel:
    """Linear map from per-slot analysis features to pole parameters.

    Features per slot: the distorted predictor coefficients, the log
    residual energy, and the previous slot's coefficients (zeros for the
    first slot) — 2*order + 1 numbers mapping to order radius_raw plus
    order angle outputs.
    """

    weights: np.ndarray          # (2*order, 2*order + 1)
    bias: np.ndarray             # (2*order,)
    order: int
    slot_len: int
    n_slots: int                 # slots per analysis frame
    work_rate: int
    target_rate: int
    pairing_mode: str

    def layout(self) -> FrameLayout:
        return FrameLayout(self.slot_len, self.n_slots, self.order)


def _slot_features(a_dist: np.ndarray, z: np.ndarray, slot_len: int) -> np.ndarray:
    """(n_slots, 2*order + 1) feature matrix; see RegressorModel."""
    order, n_slots = a_dist.shape
    energy = np.log(np.mean(z.reshape(n_slots, slot_len) ** 2, axis=1) + 1e-12)
    prev = np.concatenate([np.zeros((order, 1)), a_dist[:, :-1]], axis=1)
    return np.concatenate([a_dist.T, energy[:, None], prev.T], axis=1)


def _params_from_features(model: RegressorModel, feat: np.ndarray) -> PoleParams:
    out = feat @ model.weights.T + model.bias
    return PoleParams(out[:, : model.order], out[:, model.order :])


def _analyze_for_regressor(buf: SampleBuffer, cfg: EnhanceConfig):
    work = resample(buf, cfg.work_rate)
    level = _rms(work.samples)
    if level == 0.0:
        raise InsufficientSignalError("input is silent")
    work = SampleBuffer(work.samples / level, work.rate)
    frames = lpc_analyze(work, cfg.layout)
    a_dist = np.concatenate([fr.coeffs for fr in frames], axis=1)
    z = np.concatenate([fr.excitation for fr in frames])
    return a_dist, z, level


def init_regressor(cfg: EnhanceConfig, pairing_mode: str = "conjugate") -> RegressorModel:
    """Zero weights; biases put every pole at radius 0.9 with angles
    spread over (0, pi) so the initial prediction is a broad stable fan.

    The predictor keeps the paired parameterization whatever the fitting
    path uses: a model applied blind must be stable by construction.
    """
    order = cfg.layout.order
    n_out = 2 * order
    bias = np.zeros(n_out)
    target_sig = 0.9 / (1.0 - 1e-3)
    bias[:order] = np.log(target_sig / (1.0 - target_sig))
    half = order // 2
    for k in range(half):
        bias[order + k] = np.pi * (k + 1) / (half + 1)
    return RegressorModel(
        weights=np.zeros((n_out, n_out + 1)), bias=bias, order=order,
        slot_len=cfg.layout.slot_len, n_slots=cfg.layout.n_slots,
        work_rate=cfg.work_rate, target_rate=cfg.target_rate,
        pairing_mode=pairing_mode)


def train_regressor(manifest, cfg: EnhanceConfig = None, epochs: int = 5,
                    seed: int = 0, lr: float = 1e-3, callback=None):
    """Fit the linear regressor on a manifest of (clean, distorted) pairs.

    Adam on the same composite loss as enhance_fit, with the gradient
    chained through the feature map; pair order is reshuffled each epoch
    from the seed.  Returns (model, per-epoch mean loss).  manifest is a
    list of records with resolved paths (see read_manifest).
    """
    from .audio import read_wav

    cfg = cfg or EnhanceConfig()
    if len(manifest) < 2:
        raise ManifestError(f"need at least 2 pairs, got {len(manifest)}")
    model = init_regressor(cfg)
    cfg = replace(cfg, pairing_mode=model.pairing_mode)
    prepared = []
    for rec in manifest:
        if "distorted_path" not in rec or "clean_path" not in rec:
            raise ManifestError(f"record missing audio paths: {sorted(rec)}")
        distorted = read_wav(rec["distorted_path"])
        clean = read_wav(rec["clean_path"])
        a_dist, z, _ = _analyze_for_regressor(distorted, cfg)
        feat = _slot_features(a_dist, z, cfg.layout.slot_len)
        targets = prepare_targets(clean, cfg, z.size)
        prepared.append((feat, z, targets))

    rng = np.random.default_rng(seed)
    m_w = np.zeros_like(model.weights)
    v_w = np.zeros_like(model.weights)
    m_b = np.zeros_like(model.bias)
    v_b = np.zeros_like(model.bias)
    history = []
    step = 0
    for epoch in range(epochs):
        total = 0.0
        for idx in rng.permutation(len(prepared)):
            feat, z, targets = prepared[idx]
            params = _params_from_features(model, feat)
            report, (d_raw, d_ang) = composite_loss(params, z, None, cfg, targets)
            total += report.total
            d_out = np.concatenate([d_raw, d_ang], axis=1)
            g_w = d_out.T @ feat
            g_b = d_out.sum(axis=0)
            step += 1
            for g, m, v, arr in ((g_w, m_w, v_w, model.weights),
                                 (g_b, m_b, v_b, model.bias)):
                m[:] = cfg.beta1 * m + (1.0 - cfg.beta1) * g
                v[:] = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
                mhat = m / (1.0 - cfg.beta1 ** step)
                vhat = v / (1.0 - cfg.beta2 ** step)
                arr -= lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        history.append(total / len(prepared))
        if callback is not None:
            callback(epoch, history[-1])
    return model, history


def apply_regressor(model: RegressorModel, distorted: SampleBuffer) -> SampleBuffer:
    """One-shot enhancement: features -> pole parameters -> synthesis.

    Output is restored to the input's loudness.
    """
    cfg = EnhanceConfig(layout=model.layout(), work_rate=model.work_rate,
                        target_rate=model.target_rate,
                        pairing_mode=model.pairing_mode)
    a_dist, z, level = _analyze_for_regressor(distorted, cfg)
    feat = _slot_features(a_dist, z, model.slot_len)
    params = _params_from_features(model, feat)
    return _synthesize_at_target(params, z, cfg, scale=level)


def save_regressor(model: RegressorModel, path) -> None:
    doc = {
        "order": model.order,
        "slot_len": model.slot_len,
        "n_slots": model.n_slots,
        "work_rate": model.work_rate,
        "target_rate": model.target_rate,
        "pairing_mode": model.pairing_mode,
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_regressor(path) -> RegressorModel:
    with open(path) as fh:
        doc = json.load(fh)
    return RegressorModel(
        weights=np.asarray(doc["weights"], dtype=np.float64),
        bias=np.asarray(doc["bias"], dtype=np.float64),
        order=int(doc["order"]), slot_len=int(doc["slot_len"]),
        n_slots=int(doc["n_slots"]), work_rate=int(doc["work_rate"]),
        target_rate=int(doc["target_rate"]),
        pairing_mode=doc["pairing_mode"])
