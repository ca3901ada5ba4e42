"""Audio ingestion and mel-spectrogram preprocessing.

Fixed front-end: 22050 Hz, 80 mel bins, 1024-sample windows, 128-sample hop
(5.805 ms), periodic Hann, natural-log magnitudes floored at log(1e-5).
No centered padding, so frame count is floor((N - window) / hop) + 1.
Silence trimming is RMS-based at -40 dB relative to peak over 1024-sample
blocks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from noisevc import nvcm
from noisevc.errors import (
    ConfigError,
    EmptyClipError,
    IngestionError,
    ShapeError,
    TooShortError,
)

TARGET_RATE = 22050
N_MELS = 80
WINDOW = 1024
HOP = 128
LOG_FLOOR = 1e-5
TRIM_DB = -40.0
TRIM_BLOCK = 1024


@dataclass
class AudioClip:
    samples: np.ndarray            # 1-D float in [-1, 1]
    sample_rate: int
    speaker_id: str = ""
    utterance_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ShapeError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise IngestionError("audio contains non-finite samples")


@dataclass
class MelSpectrogram:
    values: np.ndarray             # (80, T) log-mel
    hop_samples: int = HOP
    window_samples: int = WINDOW
    sample_rate: int = TARGET_RATE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[0] != N_MELS:
            raise ShapeError(f"mel must be ({N_MELS}, T), got {self.values.shape}")
        if self.values.shape[1] < 1:
            raise ShapeError("mel must have at least one frame")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("mel contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class ManifestEntry:
    utterance_id: str
    speaker_id: str
    mel_path: str
    n_frames: int
    split: str                     # "train" | "test"


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seen_speakers: list[str]
    unseen_speakers: list[str]

    def __post_init__(self):
        overlap = set(self.seen_speakers) & set(self.unseen_speakers)
        if overlap:
            raise ConfigError(f"speakers in both splits: {sorted(overlap)}")
        listed = {e.speaker_id for e in self.entries}
        covered = set(self.seen_speakers) | set(self.unseen_speakers)
        if not listed <= covered:
            raise ConfigError(f"speakers missing from split: {sorted(listed - covered)}")

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def validate_files(self) -> None:
        for e in self.entries:
            shape = nvcm.read_shape(e.mel_path)
            if len(shape) != 2 or shape[0] != N_MELS or shape[1] != e.n_frames:
                raise IngestionError(f"{e.mel_path}: shape {shape} contradicts manifest")


def _speakers_sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".speakers.json")


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    lines = []
    for e in manifest.entries:
        lines.append(
            json.dumps(
                {
                    "utterance_id": e.utterance_id,
                    "speaker_id": e.speaker_id,
                    "mel_path": e.mel_path,
                    "n_frames": e.n_frames,
                    "split": e.split,
                },
                sort_keys=True,
            )
        )
    path.write_text("\n".join(lines) + "\n")
    _speakers_sidecar(path).write_text(
        json.dumps(
            {"seen": manifest.seen_speakers, "unseen": manifest.unseen_speakers}, sort_keys=True
        )
        + "\n"
    )


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"manifest not found: {path}")
    entries = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        entries.append(
            ManifestEntry(
                utterance_id=rec["utterance_id"],
                speaker_id=rec["speaker_id"],
                mel_path=rec["mel_path"],
                n_frames=int(rec["n_frames"]),
                split=rec["split"],
            )
        )
    sidecar = _speakers_sidecar(path)
    if not sidecar.exists():
        raise IngestionError(f"speaker split sidecar not found: {sidecar}")
    split = json.loads(sidecar.read_text())
    return DatasetManifest(entries, list(split["seen"]), list(split["unseen"]))


# -- ingestion ------------------------------------------------------------------


def load_and_resample(path: str | Path, target_rate: int = TARGET_RATE) -> AudioClip:
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot decode audio file {path}: {exc}") from exc
    data = np.asarray(data)
    if data.size == 0:
        raise EmptyClipError(f"{path}: zero-length audio")
    if data.ndim == 2:
        data = data.mean(axis=1)
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max)
    else:
        data = data.astype(np.float64)
    if rate != target_rate:
        g = np.gcd(int(target_rate), int(rate))
        data = resample_poly(data, target_rate // g, rate // g)
    if data.size == 0:
        raise EmptyClipError(f"{path}: empty after resampling")
    peak = np.max(np.abs(data))
    if peak > 1.0:
        data = data / peak
    return AudioClip(
        samples=data,
        sample_rate=target_rate,
        speaker_id=path.parent.name,
        utterance_id=path.stem,
    )


def trim_silence(clip: AudioClip, threshold_db: float = TRIM_DB) -> AudioClip:
    """Drop leading/trailing regions whose block RMS sits below the
    peak-relative threshold; boundary blocks are refined to the first/last
    sample that reaches the threshold, so the cut lands within a fraction of
    a block of the true onset."""
    x = clip.samples
    if x.size == 0:
        raise EmptyClipError("cannot trim an empty clip")
    peak = np.max(np.abs(x))
    if peak == 0.0:
        raise EmptyClipError("entire clip below silence threshold")
    thr = peak * 10.0 ** (threshold_db / 20.0)
    n_blocks = int(np.ceil(x.size / TRIM_BLOCK))
    loud = [
        i
        for i in range(n_blocks)
        if np.sqrt(np.mean(x[i * TRIM_BLOCK : (i + 1) * TRIM_BLOCK] ** 2)) >= thr
    ]
    if not loud:
        raise EmptyClipError("entire clip below silence threshold")
    start = 0
    if loud[0] > 0:  # only refine on sides that actually had silent blocks
        first = x[loud[0] * TRIM_BLOCK : (loud[0] + 1) * TRIM_BLOCK]
        start = loud[0] * TRIM_BLOCK + int(np.argmax(np.abs(first) >= thr))
    end = x.size
    if loud[-1] < n_blocks - 1:
        last = x[loud[-1] * TRIM_BLOCK : (loud[-1] + 1) * TRIM_BLOCK]
        above = np.flatnonzero(np.abs(last) >= thr)
        end = loud[-1] * TRIM_BLOCK + int(above[-1]) + 1
    end = max(end, start + 1)
    return AudioClip(x[start:end], clip.sample_rate, clip.speaker_id, clip.utterance_id)


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def mel_hz_to_scale(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_scale_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int = N_MELS, n_fft: int = WINDOW, sample_rate: int = TARGET_RATE
) -> np.ndarray:
    """Triangular filters, 0 Hz to Nyquist, each normalized to unit area."""
    nyquist = sample_rate / 2.0
    edges_hz = mel_scale_to_hz(np.linspace(0.0, mel_hz_to_scale(nyquist), n_mels + 2))
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        lo, mid, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (bin_hz - lo) / (mid - lo)
        down = (hi - bin_hz) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
        area = fb[m].sum()
        if area > 0:
            fb[m] /= area
    return fb


_FILTERBANK: np.ndarray | None = None


def _filterbank() -> np.ndarray:
    global _FILTERBANK
    if _FILTERBANK is None:
        _FILTERBANK = mel_filterbank()
    return _FILTERBANK


def frame_count(n_samples: int, window: int = WINDOW, hop: int = HOP) -> int:
    return (n_samples - window) // hop + 1


def stft_complex(x: np.ndarray, window: int = WINDOW, hop: int = HOP) -> np.ndarray:
    """(n_fft/2+1, T) complex spectrogram, Hann window, no centered padding."""
    if x.size < window:
        raise TooShortError(f"signal of {x.size} samples is shorter than one window")
    t = frame_count(x.size, window, hop)
    idx = np.arange(window)[None, :] + hop * np.arange(t)[:, None]
    frames = x[idx] * _hann_periodic(window)[None, :]
    return np.fft.rfft(frames, axis=1).T


def stft_magnitude(x: np.ndarray, window: int = WINDOW, hop: int = HOP) -> np.ndarray:
    return np.abs(stft_complex(x, window, hop))


def mel_spectrogram(clip: AudioClip) -> MelSpectrogram:
    if clip.sample_rate != TARGET_RATE:
        raise ShapeError(f"expected {TARGET_RATE} Hz audio, got {clip.sample_rate}")
    mag = stft_magnitude(clip.samples)
    mel = _filterbank() @ mag
    logmel = np.log(np.maximum(mel, LOG_FLOOR))
    return MelSpectrogram(values=logmel.astype(np.float32))


# -- manifest construction -------------------------------------------------------


def split_speakers(speakers: list[str], n_unseen: int, seed: int) -> tuple[list[str], list[str]]:
    if n_unseen < 0 or len(speakers) < n_unseen + 1:
        raise ConfigError(
            f"need at least n_unseen+1={n_unseen + 1} speakers, found {len(speakers)}"
        )
    order = sorted(speakers)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(order))
    unseen = sorted(order[i] for i in perm[:n_unseen])
    seen = sorted(set(order) - set(unseen))
    return seen, unseen


def build_manifest(corpus_dir: str | Path, n_unseen: int, seed: int) -> DatasetManifest:
    """Scan a directory of <speaker>/<utterance>.nvcm mel files and split it.

    Unseen speakers are held out entirely (all their utterances land in the
    test list); for every seen speaker one deterministically-chosen utterance
    moves to the test list so probes have held-out seen-speaker data.
    """
    corpus_dir = Path(corpus_dir)
    by_speaker: dict[str, list[Path]] = {}
    for p in sorted(corpus_dir.glob("*/*.nvcm")):
        by_speaker.setdefault(p.parent.name, []).append(p)
    if not by_speaker:
        raise IngestionError(f"no <speaker>/<utterance>.nvcm files under {corpus_dir}")
    seen, unseen = split_speakers(list(by_speaker), n_unseen, seed)
    rng = np.random.default_rng(seed + 1)
    entries: list[ManifestEntry] = []
    for spk in sorted(by_speaker):
        files = sorted(by_speaker[spk])
        held_out = int(rng.integers(len(files))) if spk in seen else -1
        for i, path in enumerate(files):
            if spk in unseen or i == held_out:
                split = "test"
            else:
                split = "train"
            shape = nvcm.read_shape(path)
            if len(shape) != 2 or shape[0] != N_MELS:
                raise IngestionError(f"{path}: expected an (80, T) mel tensor, got {shape}")
            entries.append(
                ManifestEntry(
                    utterance_id=f"{spk}/{path.stem}",
                    speaker_id=spk,
                    mel_path=str(path),
                    n_frames=int(shape[1]),
                    split=split,
                )
            )
    return DatasetManifest(entries, seen, unseen)


def ingest_corpus(
    in_dir: str | Path, out_dir: str | Path, n_unseen: int, seed: int
) -> DatasetManifest:
    """Full front end: wavs under <speaker>/ subdirs -> trimmed mels + manifest."""
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    wavs = sorted(in_dir.glob("*/*.wav"))
    if not wavs:
        raise IngestionError(f"no <speaker>/<utterance>.wav files under {in_dir}")
    for wav in wavs:
        clip = trim_silence(load_and_resample(wav))
        mel = mel_spectrogram(clip)
        dest = out_dir / wav.parent.name / (wav.stem + ".nvcm")
        dest.parent.mkdir(parents=True, exist_ok=True)
        nvcm.write_tensor(dest, mel.values)
    manifest = build_manifest(out_dir, n_unseen, seed)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
