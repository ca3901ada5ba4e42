"""Synthetic factorized corpus with oracle content and speaker labels.

Each utterance is a sequence of content symbols (held for a few frames
each), rendered through a fixed 80-bin spectral template per symbol, then
deformed by speaker factors of exactly the two kinds the model claims to
remove: a time-invariant per-channel affine transform (gain + offset) and a
slow time-varying "pitch" bump that wanders inside a dedicated band of mel
bins. The bump track is a smoothed random walk, so it is unpredictable at
long horizons; its base position is speaker-specific, so it leaks speaker
identity into any representation that keeps it.

Content templates live in mel bins [0, 60); the pitch bump wanders in
[60, 80). Everything is deterministic given the spec seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from noisevc import nvcm
from noisevc.errors import ConfigError, IngestionError
from noisevc.features import (
    DatasetManifest,
    ManifestEntry,
    MelSpectrogram,
    N_MELS,
    save_manifest,
    split_speakers,
)

CONTENT_BINS = 60                      # templates occupy bins [0, CONTENT_BINS)
PITCH_BAND = (60, 80)                  # the wandering bump stays in this band
BASE_LEVEL = -4.0                      # resting log-mel level
TEMPLATE_AMP = 4.0                     # template peaks above base
TEMPLATE_MIN_SEP = 4.5                 # min pairwise L2 between templates
BUMP_AMP = 0.6                         # pitch-bump height in log-mel units
BUMP_WIDTH = 2.5                       # bump std in bins
GAIN_RANGE = (0.85, 1.15)              # per-channel speaker gain
OFFSET_RANGE = (-0.5, 0.5)             # per-channel speaker offset
WALK_STD = 0.6                         # per-frame pitch-walk step before smoothing
WALK_SMOOTH = 9                        # moving-average width for the walk
BASE_JITTER = 3.0                      # max |walk| excursion around the speaker base


@dataclass
class SyntheticSpec:
    n_speakers: int = 10
    n_content_symbols: int = 12
    utterance_len_frames: tuple[int, int] = (140, 220)
    symbol_dur_frames: tuple[int, int] = (4, 16)
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ConfigError("need at least 2 speakers")
        if self.n_content_symbols < 1:
            raise ConfigError("need at least 1 content symbol")
        for lo, hi in (self.utterance_len_frames, self.symbol_dur_frames):
            if lo < 1 or hi < lo:
                raise ConfigError("frame ranges must be non-empty and positive")


@dataclass
class SyntheticSample:
    mel: MelSpectrogram
    content_labels: np.ndarray     # (T,) int symbol ids
    speaker_id: int

    def __post_init__(self):
        self.content_labels = np.asarray(self.content_labels, dtype=np.int64)
        if self.content_labels.shape[0] != self.mel.n_frames:
            raise ConfigError("labels must cover every mel frame")


_TEMPLATE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def symbol_templates(spec: SyntheticSpec) -> np.ndarray:
    """(n_symbols, 80) spectral templates with guaranteed pairwise separation."""
    key = (spec.seed, spec.n_content_symbols)
    if key in _TEMPLATE_CACHE:
        return _TEMPLATE_CACHE[key]
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 101]))
    templates = np.zeros((spec.n_content_symbols, N_MELS))
    kernel = np.hanning(9)
    kernel /= kernel.sum()
    done = 0
    for _ in range(1000 * spec.n_content_symbols):
        raw = rng.uniform(0.0, 1.0, CONTENT_BINS)
        smooth = np.convolve(raw, kernel, mode="same")
        smooth -= smooth.min()
        peak = smooth.max()
        if peak <= 0:
            continue
        cand = np.zeros(N_MELS)
        cand[:CONTENT_BINS] = smooth / peak * TEMPLATE_AMP
        if all(
            np.linalg.norm(cand - templates[j]) >= TEMPLATE_MIN_SEP for j in range(done)
        ):
            templates[done] = cand
            done += 1
            if done == spec.n_content_symbols:
                _TEMPLATE_CACHE[key] = templates
                return templates
    raise ConfigError(
        "could not draw sufficiently separated templates; lower n_content_symbols"
    )


def speaker_params(spec: SyntheticSpec, speaker_id: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 202, speaker_id]))
    return {
        "gain": rng.uniform(*GAIN_RANGE, N_MELS),
        "offset": rng.uniform(*OFFSET_RANGE, N_MELS),
        "pitch_base": float(
            rng.uniform(PITCH_BAND[0] + BASE_JITTER + 1, PITCH_BAND[1] - BASE_JITTER - 2)
        ),
    }


def _pitch_track(base: float, t: int, rng: np.random.Generator) -> np.ndarray:
    steps = rng.normal(0.0, WALK_STD, t)
    walk = np.cumsum(steps)
    kernel = np.ones(WALK_SMOOTH) / WALK_SMOOTH
    walk = np.convolve(walk, kernel, mode="same")
    walk -= walk.mean()
    scale = np.max(np.abs(walk))
    if scale > 0:
        walk = walk / scale * BASE_JITTER
    return base + walk


def render_sample(
    spec: SyntheticSpec, speaker_id: int, rng: np.random.Generator
) -> SyntheticSample:
    """Draw a symbol sequence and render it as this speaker's mel."""
    if speaker_id >= spec.n_speakers:
        raise ConfigError(f"speaker_id {speaker_id} out of range")
    templates = symbol_templates(spec)
    params = speaker_params(spec, speaker_id)
    t_total = int(rng.integers(spec.utterance_len_frames[0], spec.utterance_len_frames[1] + 1))
    labels = np.empty(t_total, dtype=np.int64)
    pos = 0
    while pos < t_total:
        sym = int(rng.integers(spec.n_content_symbols))
        dur = int(rng.integers(spec.symbol_dur_frames[0], spec.symbol_dur_frames[1] + 1))
        labels[pos : pos + dur] = sym
        pos += dur
    track = _pitch_track(params["pitch_base"], t_total, rng)
    bins = np.arange(N_MELS, dtype=np.float64)
    content = BASE_LEVEL + templates[labels].T                       # (80, T)
    bump = BUMP_AMP * np.exp(-((bins[:, None] - track[None, :]) ** 2) / (2 * BUMP_WIDTH**2))
    lo, hi = PITCH_BAND
    band_mask = ((bins >= lo) & (bins < hi)).astype(np.float64)[:, None]
    mel = params["gain"][:, None] * (content + bump * band_mask) + params["offset"][:, None]
    return SyntheticSample(
        mel=MelSpectrogram(values=mel.astype(np.float32)),
        content_labels=labels,
        speaker_id=speaker_id,
    )


def utterance_rng(spec: SyntheticSpec, speaker_id: int, utt_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, 303, speaker_id, utt_index]))


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    Path(path).write_text("\n".join(str(int(v)) for v in labels) + "\n")


def read_labels(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"labels file not found: {path}")
    return np.array([int(line) for line in path.read_text().splitlines() if line.strip()])


def labels_path_for(mel_path: str | Path) -> Path:
    return Path(mel_path).with_suffix(".labels.txt")


def generate_corpus(
    spec: SyntheticSpec,
    utterances_per_speaker: int,
    out_dir: str | Path,
    unseen_fraction: float = 0.2,
) -> DatasetManifest:
    """Render the corpus to disk: mels, per-frame labels and a split manifest."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IngestionError(f"cannot create corpus dir {out_dir}: {exc}") from exc
    n_unseen = int(round(unseen_fraction * spec.n_speakers))
    speakers = [f"s{idx:03d}" for idx in range(spec.n_speakers)]
    seen, unseen = split_speakers(speakers, n_unseen, spec.seed)
    rng_split = np.random.default_rng(np.random.SeedSequence([spec.seed, 404]))
    entries: list[ManifestEntry] = []
    for sid, name in enumerate(speakers):
        held_out = int(rng_split.integers(utterances_per_speaker)) if name in seen else -1
        spk_dir = out_dir / name
        spk_dir.mkdir(exist_ok=True)
        for u in range(utterances_per_speaker):
            sample = render_sample(spec, sid, utterance_rng(spec, sid, u))
            mel_path = spk_dir / f"u{u:04d}.nvcm"
            nvcm.write_tensor(mel_path, sample.mel.values)
            write_labels(labels_path_for(mel_path), sample.content_labels)
            split = "test" if (name in unseen or u == held_out) else "train"
            entries.append(
                ManifestEntry(
                    utterance_id=f"{name}/u{u:04d}",
                    speaker_id=name,
                    mel_path=str(mel_path),
                    n_frames=sample.mel.n_frames,
                    split=split,
                )
            )
    manifest = DatasetManifest(entries, seen, unseen)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
