"""Differentiable all-pole speech modelling and enhancement.

Layers, bottom up: `audio` (buffers, resampling, spectrograms), `lpc`
(classical analysis/synthesis, formants, pitch), `blocks` (the
differentiable pole/coefficient/waveform maps with exact adjoints),
`channel` (transmission-loss simulation), `enhance` (the composite-loss
fitter and regressor), `metrics` (evaluation), `cli` (command line).
"""

from .audio import (FrameLayout, MelSpectrogram, MelTransform, SampleBuffer,
                    mel_filterbank, mel_spectrogram, read_wav, resample, stft,
                    write_wav)
from .blocks import (EPS_STAB, ComplexCoeffs, PoleParams, PoleSet,
                     dense_oracle, grad_check, lp2poles, lp2wav, lp2wav_vjp,
                     params_from_poles, poles2lp, poles2lp_grad,
                     poles_from_params)
from .channel import (CHANNEL_PRESETS, FirChannel, StlCurve, channel_preset,
                      design_fir, make_pair, mass_law_stl, mix_at_snr,
                      pink_noise, read_manifest, sharp_plateau_stl,
                      trim_silence, write_manifest)
from .enhance import (CompositeTargets, EnhanceConfig, EnhanceResult,
                      LossReport, RegressorModel, apply_regressor,
                      composite_loss, enhance_fit, load_regressor,
                      prepare_targets, save_regressor, train_regressor,
                      write_trace)
from .errors import (DegenerateFrameError, DspError, EmptyUtteranceError,
                     FormatError, InstabilityError, InsufficientSignalError,
                     ManifestError, RootFindingError)
from .lpc import (FormantTrack, LpcFrame, PitchTrack, autocorrelation,
                  burg_formants, levinson_durbin, lpc_analyze, lpc_synthesize,
                  track_pitch)
from .metrics import (EvalReport, FormantErrorStats, PoleCompareStats,
                      evaluate_pair, formant_error_stats,
                      log_spectral_distance, pole_compare, stoi)

__version__ = "0.1.0"
