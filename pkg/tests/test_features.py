import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.io import wavfile

from noisevc import nvcm
from noisevc.errors import (
    ConfigError,
    EmptyClipError,
    IngestionError,
    ShapeError,
    TooShortError,
)
from noisevc.features import (
    AudioClip,
    HOP,
    LOG_FLOOR,
    WINDOW,
    build_manifest,
    frame_count,
    ingest_corpus,
    load_and_resample,
    load_manifest,
    mel_filterbank,
    mel_spectrogram,
    save_manifest,
    split_speakers,
    trim_silence,
)


def sine(freq, seconds, rate, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def write_wav(path, data, rate):
    wavfile.write(path, rate, (np.asarray(data) * 32767).astype(np.int16))


def dominant_freq(x, rate):
    spec = np.abs(np.fft.rfft(x))
    return np.argmax(spec) * rate / len(x)


class TestLoadAndResample:
    def test_downsample_48k_to_22050(self, tmp_path):
        path = tmp_path / "a.wav"
        write_wav(path, sine(440, 1.0, 48000), 48000)
        clip = load_and_resample(path, 22050)
        assert clip.sample_rate == 22050
        assert abs(clip.samples.size - 22050) <= 1

    def test_identity_rate_keeps_samples(self, tmp_path):
        path = tmp_path / "a.wav"
        data = sine(440, 0.5, 22050)
        write_wav(path, data, 22050)
        clip = load_and_resample(path, 22050)
        # unchanged up to int16 quantization (no resampling, peak <= 1)
        np.testing.assert_allclose(clip.samples, data, atol=1.0 / 32000)

    def test_resampled_sine_keeps_pitch(self, tmp_path):
        # FFT-peak oracle: 440 Hz at 44100 -> 22050 samples, peak still 440 Hz
        path = tmp_path / "a.wav"
        write_wav(path, sine(440, 1.0, 44100), 44100)
        clip = load_and_resample(path, 22050)
        assert clip.samples.size == 22050
        bin_hz = 22050 / clip.samples.size
        assert abs(dominant_freq(clip.samples, 22050) - 440) <= bin_hz

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"not audio")
        with pytest.raises(IngestionError) as err:
            load_and_resample(path)
        assert "bad.wav" in str(err.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            load_and_resample(tmp_path / "nope.wav")

    def test_zero_length(self, tmp_path):
        path = tmp_path / "empty.wav"
        wavfile.write(path, 22050, np.zeros(0, dtype=np.int16))
        with pytest.raises(EmptyClipError):
            load_and_resample(path)

    def test_peak_normalized(self, tmp_path):
        path = tmp_path / "loud.wav"
        wavfile.write(path, 22050, np.full(1000, 2.0, dtype=np.float32))
        clip = load_and_resample(path)
        assert np.max(np.abs(clip.samples)) <= 1.0


class TestTrimSilence:
    def test_leading_zeros_removed(self):
        clip = AudioClip(np.concatenate([np.zeros(11025), sine(440, 0.5, 22050)]), 22050)
        trimmed = trim_silence(clip, -40)
        assert trimmed.samples.size <= clip.samples.size - 11025 + 1024

    def test_no_silent_frames_unchanged(self):
        clip = AudioClip(sine(440, 0.5, 22050), 22050)
        trimmed = trim_silence(clip, -40)
        np.testing.assert_array_equal(trimmed.samples, clip.samples)

    def test_tone_duration_within_one_frame(self):
        tone = sine(440, 0.5, 22050)
        clip = AudioClip(
            np.concatenate([np.zeros(int(0.2 * 22050)), tone, np.zeros(int(0.3 * 22050))]),
            22050,
        )
        trimmed = trim_silence(clip, -40)
        assert abs(trimmed.samples.size - tone.size) <= 1024

    def test_all_silent(self):
        with pytest.raises(EmptyClipError):
            trim_silence(AudioClip(np.zeros(5000), 22050), -40)

    @given(
        seed=st.integers(0, 1000),
        lead=st.integers(0, 8000),
        trail=st.integers(0, 8000),
    )
    @settings(max_examples=25, deadline=None)
    def test_idempotent(self, seed, lead, trail):
        rng = np.random.default_rng(seed)
        body = rng.uniform(-0.8, 0.8, 9000)
        clip = AudioClip(np.concatenate([np.zeros(lead), body, np.zeros(trail)]), 22050)
        once = trim_silence(clip, -40)
        twice = trim_silence(once, -40)
        np.testing.assert_array_equal(once.samples, twice.samples)


class TestMelSpectrogram:
    def test_one_second_frame_count(self):
        clip = AudioClip(sine(440, 1.0, 22050), 22050)
        mel = mel_spectrogram(clip)
        assert mel.n_frames == (22050 - WINDOW) // HOP + 1 == 165
        assert mel.values.shape == (80, 165)

    def test_all_zero_clip_hits_log_floor(self):
        mel = mel_spectrogram(AudioClip(np.zeros(22050), 22050))
        np.testing.assert_array_equal(mel.values, np.float32(np.log(LOG_FLOOR)))

    def test_pure_tone_argmax_is_stationary(self):
        mel = mel_spectrogram(AudioClip(sine(1000, 1.0, 22050), 22050))
        argmax = np.argmax(mel.values, axis=0)
        assert np.all(argmax == argmax[0])

    def test_deterministic(self):
        clip = AudioClip(sine(333, 0.7, 22050), 22050)
        np.testing.assert_array_equal(
            mel_spectrogram(clip).values, mel_spectrogram(clip).values
        )

    def test_too_short(self):
        with pytest.raises(TooShortError):
            mel_spectrogram(AudioClip(np.ones(WINDOW - 1), 22050))

    def test_wrong_rate(self):
        with pytest.raises(ShapeError):
            mel_spectrogram(AudioClip(np.ones(48000), 48000))

    @given(n=st.integers(WINDOW, 60000))
    @settings(max_examples=20, deadline=None)
    def test_frame_count_formula(self, n):
        clip = AudioClip(np.random.default_rng(1).uniform(-0.5, 0.5, n), 22050)
        assert mel_spectrogram(clip).n_frames == frame_count(n)

    def test_filterbank_covers_every_filter(self):
        fb = mel_filterbank()
        assert fb.shape == (80, WINDOW // 2 + 1)
        assert np.all(fb.sum(axis=1) > 0)
        np.testing.assert_allclose(fb.sum(axis=1), 1.0, rtol=1e-9)


class TestNvcmFormat:
    def test_round_trip(self, tmp_path):
        arr = np.random.default_rng(0).normal(size=(80, 33)).astype(np.float32)
        path = tmp_path / "t.nvcm"
        nvcm.write_tensor(path, arr)
        np.testing.assert_array_equal(nvcm.read_tensor(path), arr)
        assert nvcm.read_shape(path) == (80, 33)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "t.nvcm"
        nvcm.write_tensor(path, np.zeros((2, 3), dtype=np.float32))
        blob = path.read_bytes()
        assert blob[:4] == b"NVCM"
        assert np.frombuffer(blob[4:20], dtype="<u4").tolist() == [1, 2, 2, 3]
        assert len(blob) == 20 + 4 * 6

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.nvcm"
        path.write_bytes(b"JUNKxxxx")
        with pytest.raises(IngestionError):
            nvcm.read_tensor(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.nvcm"
        nvcm.write_tensor(path, np.zeros((4, 4), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(IngestionError):
            nvcm.read_tensor(path)


def make_mel_corpus(root, speakers, utts_per):
    rng = np.random.default_rng(0)
    for s in range(speakers):
        d = root / f"spk{s:02d}"
        d.mkdir(parents=True)
        for u in range(utts_per):
            nvcm.write_tensor(d / f"u{u}.nvcm", rng.normal(size=(80, 20)).astype(np.float32))


class TestManifest:
    def test_split_counts(self, tmp_path):
        make_mel_corpus(tmp_path, 6, 3)
        manifest = build_manifest(tmp_path, n_unseen=2, seed=0)
        assert len(manifest.seen_speakers) == 4
        assert len(manifest.unseen_speakers) == 2
        assert len(manifest.entries) == 18
        # one held-out test utterance per seen speaker, all unseen in test
        test_seen = [
            e for e in manifest.split_entries("test") if e.speaker_id in manifest.seen_speakers
        ]
        assert len(test_seen) == 4
        unseen_train = [
            e for e in manifest.split_entries("train") if e.speaker_id in manifest.unseen_speakers
        ]
        assert unseen_train == []

    def test_zero_unseen_degenerate(self, tmp_path):
        make_mel_corpus(tmp_path, 3, 1)
        manifest = build_manifest(tmp_path, n_unseen=0, seed=0)
        assert manifest.unseen_speakers == []
        assert len(manifest.split_entries("test")) == 3

    def test_determinism_byte_identical(self, tmp_path):
        make_mel_corpus(tmp_path / "c", 5, 2)
        p1, p2 = tmp_path / "m1.jsonl", tmp_path / "m2.jsonl"
        save_manifest(build_manifest(tmp_path / "c", 1, seed=7), p1)
        save_manifest(build_manifest(tmp_path / "c", 1, seed=7), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_too_few_speakers(self, tmp_path):
        make_mel_corpus(tmp_path, 2, 1)
        with pytest.raises(ConfigError):
            build_manifest(tmp_path, n_unseen=2, seed=0)

    def test_round_trip(self, tmp_path):
        make_mel_corpus(tmp_path / "c", 4, 2)
        manifest = build_manifest(tmp_path / "c", 1, seed=0)
        save_manifest(manifest, tmp_path / "m.jsonl")
        loaded = load_manifest(tmp_path / "m.jsonl")
        assert loaded.seen_speakers == manifest.seen_speakers
        assert loaded.unseen_speakers == manifest.unseen_speakers
        assert [e.utterance_id for e in loaded.entries] == [
            e.utterance_id for e in manifest.entries
        ]
        loaded.validate_files()

    def test_record_fields(self, tmp_path):
        make_mel_corpus(tmp_path / "c", 3, 1)
        save_manifest(build_manifest(tmp_path / "c", 1, seed=0), tmp_path / "m.jsonl")
        rec = json.loads((tmp_path / "m.jsonl").read_text().splitlines()[0])
        assert set(rec) == {"utterance_id", "speaker_id", "mel_path", "n_frames", "split"}

    @given(
        n_speakers=st.integers(2, 12),
        n_unseen=st.integers(0, 5),
        seed=st.integers(0, 500),
    )
    @settings(max_examples=30, deadline=None)
    def test_split_disjoint_and_covering(self, n_speakers, n_unseen, seed):
        speakers = [f"s{i}" for i in range(n_speakers)]
        if n_unseen + 1 > n_speakers:
            with pytest.raises(ConfigError):
                split_speakers(speakers, n_unseen, seed)
            return
        seen, unseen = split_speakers(speakers, n_unseen, seed)
        assert set(seen) & set(unseen) == set()
        assert set(seen) | set(unseen) == set(speakers)
        assert len(unseen) == n_unseen


class TestIngestCorpus:
    def test_end_to_end(self, tmp_path):
        wavs = tmp_path / "wavs"
        for s in range(3):
            d = wavs / f"spk{s}"
            d.mkdir(parents=True)
            for u in range(2):
                data = np.concatenate([np.zeros(3000), sine(300 + 100 * s, 0.4, 22050)])
                write_wav(d / f"utt{u}.wav", data, 22050)
        manifest = ingest_corpus(wavs, tmp_path / "mels", n_unseen=1, seed=0)
        assert len(manifest.entries) == 6
        manifest.validate_files()
        reloaded = load_manifest(tmp_path / "mels" / "manifest.jsonl")
        assert len(reloaded.entries) == 6
