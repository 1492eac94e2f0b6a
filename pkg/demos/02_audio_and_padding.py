"""Audio I/O, resampling, and repetitive batch padding.

Loads a WAV at one rate, resamples to the encoder rate, and shows how a
ragged batch becomes rectangular by cyclically repeating each signal instead
of zero-padding it.
"""

import tempfile
from pathlib import Path

import numpy as np

from mospred.audio import (
    Waveform,
    load_and_resample,
    repetitive_pad,
    strip_padding,
    write_wav,
)

work = Path(tempfile.mkdtemp(prefix="mospred_demo_"))

# a 440 Hz tone at 48 kHz on disk
t = np.arange(48000) / 48000
write_wav(work / "tone48k.wav", Waveform(samples=0.5 * np.sin(2 * np.pi * 440 * t), rate=48000))

wave = load_and_resample(work / "tone48k.wav", 16000)
print(f"loaded + resampled: {len(wave.samples)} samples at {wave.rate} Hz "
      f"({wave.duration:.3f} s)")

# the dominant frequency survives resampling
spectrum = np.abs(np.fft.rfft(wave.samples))
freqs = np.fft.rfftfreq(len(wave.samples), 1 / 16000)
print(f"dominant frequency after resampling: {freqs[np.argmax(spectrum)]:.1f} Hz")

# repetitive padding: pad by repeating the signal, not with zeros
short = Waveform(samples=np.array([0.1, 0.2, 0.3, 0.4, 0.5]), rate=16000)
longer = Waveform(samples=np.arange(8) / 10.0, rate=16000)
batch = repetitive_pad([short, longer])
print(f"\nbatch shape {batch.padded_samples.shape}, true lengths {batch.true_lengths}")
print(f"short row padded: {batch.padded_samples[0]}")
print("note the tail repeats the head — no artificial silence enters the batch")

restored = strip_padding(batch)
assert all(np.array_equal(a.samples, b.samples) for a, b in zip([short, longer], restored))
print("stripping the padding recovers the originals exactly")
