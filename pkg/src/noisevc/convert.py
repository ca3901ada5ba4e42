"""Inference-time conversion and mel inversion.

Conversion cross-wires the two paths: content from the source utterance,
speaker vector from the target utterance, decode. Listening checks go
through iterative phase reconstruction (no neural vocoder): pseudo-invert
the mel filterbank to a linear magnitude spectrogram, then alternate
STFT/ISTFT projections to recover a consistent phase.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from noisevc.errors import ConfigError, ShapeError
from noisevc.features import (
    AudioClip,
    HOP,
    LOG_FLOOR,
    MelSpectrogram,
    TARGET_RATE,
    WINDOW,
    _hann_periodic,
    mel_filterbank,
    stft_complex,
)
from noisevc.model import NoiseVCModel, decode, encode_content, encode_speaker
from noisevc.trainer import model_from_checkpoint


@dataclass
class ConversionRequest:
    source_mel: MelSpectrogram
    target_mel: MelSpectrogram
    checkpoint: object            # path or loaded Checkpoint

    def __post_init__(self):
        if self.source_mel.n_frames < 2 or self.target_mel.n_frames < 2:
            raise ShapeError("conversion needs at least 2 frames on both sides")


def convert(req: ConversionRequest, model: NoiseVCModel | None = None) -> MelSpectrogram:
    """decode(content(source), speaker(target)); output length == source length."""
    if model is None:
        model = model_from_checkpoint(req.checkpoint)
    model.train(False)
    _, content = encode_content(req.source_mel, model)
    speaker = encode_speaker(req.target_mel, model, target_len=req.source_mel.n_frames)
    return decode(content, speaker, model)


def istft(spec: np.ndarray, window: int = WINDOW, hop: int = HOP) -> np.ndarray:
    """Overlap-add inverse of stft_complex with window-square normalization."""
    n_frames = spec.shape[1]
    win = _hann_periodic(window)
    frames = np.fft.irfft(spec.T, n=window, axis=1)
    out = np.zeros((n_frames - 1) * hop + window)
    wsum = np.zeros_like(out)
    for t in range(n_frames):
        lo = t * hop
        out[lo : lo + window] += frames[t] * win
        wsum[lo : lo + window] += win * win
    return out / np.maximum(wsum, 1e-8)


def griffin_lim(magnitude: np.ndarray, n_iters: int) -> np.ndarray:
    """Phase recovery by alternating projections; starts from zero phase."""
    x = istft(magnitude.astype(np.complex128))
    for _ in range(n_iters):
        z = stft_complex(x)
        phase = z / np.maximum(np.abs(z), 1e-12)
        x = istft(magnitude * phase)
    return x


def invert_mel(mel: MelSpectrogram, n_iters: int = 60) -> AudioClip:
    """Log-mel -> waveform via filterbank pseudo-inverse + phase recovery."""
    if n_iters < 1:
        raise ConfigError("n_iters must be >= 1")
    fb = mel_filterbank()
    mel_mag = np.exp(mel.values.astype(np.float64))
    # exact floor values denote silence, not energy
    mel_mag[mel.values <= np.float32(np.log(LOG_FLOOR))] = 0.0
    linear = np.maximum(np.linalg.pinv(fb) @ mel_mag, 0.0)
    wave = griffin_lim(linear, n_iters)
    peak = np.max(np.abs(wave))
    if peak > 1.0:
        wave = wave / peak
    return AudioClip(samples=wave, sample_rate=mel.sample_rate or TARGET_RATE)


def load_mel_or_wav(path: str | Path) -> MelSpectrogram:
    """CLI helper: accept either an NVCM mel tensor or a wav file."""
    from noisevc import nvcm
    from noisevc.features import load_and_resample, mel_spectrogram, trim_silence

    path = Path(path)
    if path.suffix == ".nvcm":
        return MelSpectrogram(values=nvcm.read_tensor(path))
    return mel_spectrogram(trim_silence(load_and_resample(path)))


def write_wav(path: str | Path, clip: AudioClip) -> None:
    from scipy.io import wavfile

    data = np.clip(clip.samples, -1.0, 1.0)
    wavfile.write(path, clip.sample_rate, (data * 32767).astype(np.int16))
