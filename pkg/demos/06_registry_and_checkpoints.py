"""Checkpoints and the digest-verified model registry.

A checkpoint is a single archive (config snapshot + float32 tensors) that
round-trips predictions exactly. A registry names checkpoints (name:tag ->
location + sha256); every load verifies the digest first, so a corrupted or
tampered file is refused.
"""

import tempfile
from pathlib import Path

import numpy as np

from mospred.audio import Waveform
from mospred.encoder import EncoderConfig
from mospred.errors import DigestMismatchError
from mospred.model import HeadConfig
from mospred.predictor import Predictor, build_predictor, sha256_file
from mospred.registry import RegistryEntry, registry_load, write_registry

work = Path(tempfile.mkdtemp(prefix="mospred_demo_"))
rng = np.random.default_rng(2)
wave = Waveform(samples=rng.uniform(-0.5, 0.5, 20000), rate=16000)

predictor = build_predictor(
    EncoderConfig(n_fft=512, hop=256, n_mels=32, channels=16, dim=16, seed=3),
    HeadConfig(hidden=64, clip_min=1.0, clip_max=5.0, seed=5),
)
before = predictor.predict_wave(wave).utterance_score

ckpt = work / "model.ckpt"
predictor.save(ckpt)
after = Predictor.from_checkpoint(ckpt).predict_wave(wave).utterance_score
print(f"prediction before save: {before}")
print(f"prediction after load:  {after}")
assert before == after

registry_path = work / "registry.json"
write_registry([RegistryEntry("demo-model", "v1", ckpt.name, sha256_file(ckpt))], registry_path)
print(f"\nregistry written: {registry_path.read_text()}")

loaded = registry_load(registry_path, "demo-model", "v1")
print(f"registry_load('demo-model', 'v1') predicts {loaded.predict_wave(wave).utterance_score}")

# flip one byte: the digest check refuses to load
raw = bytearray(ckpt.read_bytes())
raw[len(raw) // 2] ^= 0x01
ckpt.write_bytes(bytes(raw))
try:
    registry_load(registry_path, "demo-model", "v1")
except DigestMismatchError as err:
    print(f"\ntampered checkpoint rejected:\n{err}")
