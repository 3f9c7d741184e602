"""Building the degraded side of a training pair: a wall as an FIR
filter, pink background noise, and exact-SNR mixing.

Run from the repository root:  python3 demos/03_channel_and_noise.py
"""

import numpy as np

from difflpc import (SampleBuffer, channel_preset, design_fir, make_pair,
                     mix_at_snr, pink_noise, stoi)

RATE = 22050

# --- a 5 cm concrete slab as a transmission-loss curve ----------------------
curve = channel_preset("concrete_5cm", RATE)
for f in (125.0, 250.0, 1000.0, 4000.0):
    print(f"mass-law loss at {f:6.0f} Hz: {float(curve.loss_at(f)):5.1f} dB")

# realize it as a 513-tap linear-phase FIR and verify the fit
chan = design_fir(curve, 513, RATE)
for f in (250.0, 1000.0, 4000.0):
    realized = -float(chan.response_db(f)[0])
    target = float(curve.loss_at(f))
    print(f"FIR at {f:6.0f} Hz: {realized:5.1f} dB (target {target:5.1f})")

# --- pink noise --------------------------------------------------------------
noise = pink_noise(1 << 16, seed=3)
spec = np.abs(np.fft.rfft(noise.samples)) ** 2
freqs = np.fft.rfftfreq(len(noise), d=1.0 / RATE)
bands = []
for c in (250.0, 500.0, 1000.0, 2000.0, 4000.0):
    sel = (freqs >= c / np.sqrt(2)) & (freqs < c * np.sqrt(2))
    bands.append(10.0 * np.log10(spec[sel].mean()))
print("octave-band slopes (dB/oct):",
      np.round(np.diff(bands), 2).tolist(), "(pink target -3)")

# --- exact SNR mixing --------------------------------------------------------
rng = np.random.default_rng(4)
sig = SampleBuffer(rng.normal(size=40000), RATE)
for snr in (10.0, 0.0, -3.0):
    mixed = mix_at_snr(sig, pink_noise(40000, seed=5), snr)
    added = mixed.samples - sig.samples
    got = 10.0 * np.log10(np.mean(sig.samples ** 2) / np.mean(added ** 2))
    print(f"requested {snr:+5.1f} dB SNR, achieved {got:+8.4f} dB")

# --- a full pair, and what the wall does to intelligibility ------------------
from demos_common import make_vowel_sequence  # noqa: E402

clean = make_vowel_sequence()
for snr in (3.0, 0.0, -3.0):
    distorted, aligned = make_pair(clean, chan, snr, seed=42)
    print(f"through concrete at {snr:+g} dB: "
          f"stoi {stoi(aligned, distorted):.4f}")
