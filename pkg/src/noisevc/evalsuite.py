"""Probing protocol: how much speaker identity leaks into the content
embedding (lower = better disentanglement), how well the speaker embedding
classifies speakers (higher = better), plus L1 reconstruction and a 2-D
embedding map with a silhouette score standing in for "visible clusters".

All probes train on the frozen model under a fixed budget so numbers are
comparable across checkpoints; a parameter hash guards the freeze.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from noisevc import autograd as ag, nn, nvcm
from noisevc.autograd import Tensor
from noisevc.errors import ConfigError, DataError
from noisevc.features import DatasetManifest, load_manifest
from noisevc.model import NoiseVCModel
from noisevc.trainer import Checkpoint, model_from_checkpoint


@dataclass
class ProbeConfig:
    probe_kind: str = "conv3"          # "conv3" | "linear1"
    epochs: int = 20
    learning_rate: float = 1e-3
    seed: int = 0
    batch_size: int = 16
    crop_frames: int = 128
    hidden: int = 64

    def __post_init__(self):
        if self.probe_kind not in ("conv3", "linear1"):
            raise ConfigError(f"unknown probe kind {self.probe_kind!r}")
        if self.epochs < 1 or self.learning_rate <= 0:
            raise ConfigError("probe epochs and learning rate must be positive")


@dataclass
class DisentanglementReport:
    content_probe_speaker_acc: float
    speaker_probe_acc: float
    l1_reconstruction: float
    model_tag: str
    alpha: float | None

    def __post_init__(self):
        for v in (self.content_probe_speaker_acc, self.speaker_probe_acc):
            if not 0.0 <= v <= 100.0:
                raise ConfigError("accuracies must be percentages")
        if self.l1_reconstruction < 0:
            raise ConfigError("l1 must be non-negative")

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=1, sort_keys=True) + "\n")


class Conv3Probe(nn.Module):
    """3 conv layers -> global average -> linear head (utterance classifier)."""

    def __init__(self, d_in: int, hidden: int, n_classes: int, rng: np.random.Generator):
        self.convs = [
            nn.Conv1d(d_in, hidden, 5, rng),
            nn.Conv1d(hidden, hidden, 5, rng),
            nn.Conv1d(hidden, hidden, 5, rng),
        ]
        self.head = nn.Linear(hidden, n_classes, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for conv in self.convs:
            h = ag.leaky_relu(conv(h), 0.1)
        return self.head(h.mean(axis=1))

    def named_params(self):
        out = {}
        for i, conv in enumerate(self.convs):
            for k, p in conv.named_params().items():
                out[f"conv{i}.{k}"] = p
        out.update({f"head.{k}": p for k, p in self.head.named_params().items()})
        return out


class LinearProbe(nn.Module):
    def __init__(self, d_in: int, n_classes: int, rng: np.random.Generator):
        self.head = nn.Linear(d_in, n_classes, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.head(x)

    def named_params(self):
        return {f"head.{k}": p for k, p in self.head.named_params().items()}


class FrameProbe(nn.Module):
    """Conv + per-frame linear head: frame-wise classification over sequences."""

    def __init__(self, d_in: int, hidden: int, n_classes: int, rng: np.random.Generator):
        self.conv = nn.Conv1d(d_in, hidden, 5, rng)
        self.head = nn.Linear(hidden, n_classes, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.head(ag.leaky_relu(self.conv(x), 0.1))

    def named_params(self):
        out = {f"conv.{k}": p for k, p in self.conv.named_params().items()}
        out.update({f"head.{k}": p for k, p in self.head.named_params().items()})
        return out


def params_hash(model: NoiseVCModel) -> str:
    digest = hashlib.sha256()
    for name in sorted(model.named_params()):
        digest.update(name.encode())
        digest.update(model.named_params()[name].data.tobytes())
    for name in sorted(model.named_buffers()):
        digest.update(model.named_buffers()[name].tobytes())
    return digest.hexdigest()


# -- probe training loops ---------------------------------------------------------


def train_sequence_probe(
    probe: nn.Module,
    sequences: list[np.ndarray],
    labels: np.ndarray,
    cfg: ProbeConfig,
) -> nn.Module:
    """Utterance-level training on fixed-length random crops."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))
    opt = nn.Adam(probe.named_params(), lr=cfg.learning_rate)
    crop = min([cfg.crop_frames] + [s.shape[0] for s in sequences])
    n = len(sequences)
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xs = []
            for i in idx:
                start = int(rng.integers(0, sequences[i].shape[0] - crop + 1))
                xs.append(sequences[i][start : start + crop])
            logits = probe(Tensor(np.stack(xs)))
            loss = nn.cross_entropy(logits, labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return probe


def sequence_probe_accuracy(probe: nn.Module, sequences: list[np.ndarray], labels: np.ndarray) -> float:
    hits = 0
    for seq, label in zip(sequences, labels):
        logits = probe(Tensor(seq[None, :, :])).data[0]
        hits += int(np.argmax(logits) == label)
    return 100.0 * hits / len(sequences)


def train_vector_probe(
    probe: nn.Module, vectors: np.ndarray, labels: np.ndarray, cfg: ProbeConfig
) -> nn.Module:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 12]))
    opt = nn.Adam(probe.named_params(), lr=cfg.learning_rate)
    n = vectors.shape[0]
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss = nn.cross_entropy(probe(Tensor(vectors[idx])), labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return probe


def vector_probe_accuracy(probe: nn.Module, vectors: np.ndarray, labels: np.ndarray) -> float:
    logits = probe(Tensor(vectors)).data
    return 100.0 * float(np.mean(np.argmax(logits, axis=1) == labels))


def train_frame_probe(
    probe: FrameProbe,
    sequences: list[np.ndarray],
    frame_labels: list[np.ndarray],
    cfg: ProbeConfig,
) -> FrameProbe:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 13]))
    opt = nn.Adam(probe.named_params(), lr=cfg.learning_rate)
    crop = min([cfg.crop_frames] + [s.shape[0] for s in sequences])
    n = len(sequences)
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xs, ys = [], []
            for i in idx:
                start = int(rng.integers(0, sequences[i].shape[0] - crop + 1))
                xs.append(sequences[i][start : start + crop])
                ys.append(frame_labels[i][start : start + crop])
            logits = probe(Tensor(np.stack(xs)))
            loss = nn.cross_entropy(logits, np.stack(ys))
            opt.zero_grad()
            loss.backward()
            opt.step()
    return probe


def frame_probe_accuracy(probe: FrameProbe, seq: np.ndarray, labels: np.ndarray) -> float:
    logits = probe(Tensor(seq[None, :, :])).data[0]
    return 100.0 * float(np.mean(np.argmax(logits, axis=1) == labels))


# -- embedding extraction ----------------------------------------------------------


def _mel_btc(entry_path: str) -> Tensor:
    values = nvcm.read_tensor(entry_path)  # (80, T)
    return Tensor(np.ascontiguousarray(values.T[None, :, :], dtype=nn.DTYPE))


def content_sequences(model: NoiseVCModel, manifest: DatasetManifest, split: str):
    """Quantized content per utterance of the split, with seen-speaker labels."""
    speaker_index = {s: i for i, s in enumerate(manifest.seen_speakers)}
    seqs, labels = [], []
    for e in manifest.split_entries(split):
        if e.speaker_id not in speaker_index:
            continue
        _, emb = model.content_encoder(_mel_btc(e.mel_path))
        seqs.append(emb.straight_through.data[0].copy())
        labels.append(speaker_index[e.speaker_id])
    if not seqs:
        raise DataError(f"no {split} utterances from seen speakers in manifest")
    return seqs, np.array(labels)


def speaker_vectors(model: NoiseVCModel, manifest: DatasetManifest, split: str, speakers=None):
    """Speaker-encoder vectors per utterance, labeled by index into `speakers`."""
    speakers = manifest.seen_speakers if speakers is None else speakers
    speaker_index = {s: i for i, s in enumerate(speakers)}
    vecs, labels = [], []
    for e in manifest.split_entries(split):
        if e.speaker_id not in speaker_index:
            continue
        x = _mel_btc(e.mel_path)
        vec, _ = model.speaker_encoder(x, 1)
        vecs.append(vec.data[0].copy())
        labels.append(speaker_index[e.speaker_id])
    if not vecs:
        raise DataError(f"no {split} utterances for the requested speakers")
    return np.stack(vecs), np.array(labels)


# -- the four protocol operations --------------------------------------------------


def probe_content(checkpoint, manifest, cfg: ProbeConfig | None = None) -> float:
    """Speaker accuracy of a conv3 probe on frozen content embeddings (lower
    = less speaker leakage = better disentanglement)."""
    cfg = cfg or ProbeConfig(probe_kind="conv3")
    model = _as_model(checkpoint)
    manifest = _as_manifest(manifest)
    before = params_hash(model)
    train_seqs, train_labels = content_sequences(model, manifest, "train")
    test_seqs, test_labels = content_sequences(model, manifest, "test")
    probe = Conv3Probe(
        model.cfg.code_dim,
        cfg.hidden,
        len(manifest.seen_speakers),
        np.random.default_rng(np.random.SeedSequence([cfg.seed, 21])),
    )
    train_sequence_probe(probe, train_seqs, train_labels, cfg)
    acc = sequence_probe_accuracy(probe, test_seqs, test_labels)
    if params_hash(model) != before:
        raise DataError("probe training modified the frozen model")
    return acc


def probe_speaker(checkpoint, manifest, cfg: ProbeConfig | None = None) -> float:
    """Accuracy of a one-layer linear probe on speaker vectors (higher better)."""
    cfg = cfg or ProbeConfig(probe_kind="linear1")
    model = _as_model(checkpoint)
    manifest = _as_manifest(manifest)
    before = params_hash(model)
    train_vecs, train_labels = speaker_vectors(model, manifest, "train")
    test_vecs, test_labels = speaker_vectors(model, manifest, "test")
    probe = LinearProbe(
        model.cfg.code_dim,
        len(manifest.seen_speakers),
        np.random.default_rng(np.random.SeedSequence([cfg.seed, 22])),
    )
    train_vector_probe(probe, train_vecs, train_labels, cfg)
    acc = vector_probe_accuracy(probe, test_vecs, test_labels)
    if params_hash(model) != before:
        raise DataError("probe training modified the frozen model")
    return acc


def l1_reconstruction(checkpoint, manifest, split: str = "test") -> float:
    """Mean |x - x_hat| over the split, speaker input = original."""
    model = _as_model(checkpoint)
    manifest = _as_manifest(manifest)
    total, count = 0.0, 0
    for e in manifest.split_entries(split):
        x = _mel_btc(e.mel_path)
        res = model.forward_batch(x, x)
        total += float(np.abs(x.data - res["x_hat"].data).sum())
        count += x.data.size
    if count == 0:
        raise DataError(f"no {split} entries in manifest")
    return total / count


def export_embedding_map(
    checkpoint, manifest, out_path: str | Path, seed: int = 0
) -> dict:
    """2-D stochastic-neighbor map of unseen-speaker embeddings.

    Writes line-delimited {x, y, speaker_id} points plus a sidecar with
    per-speaker centroids and the silhouette score (None when undefined).
    """
    from sklearn.manifold import TSNE
    from sklearn.metrics import silhouette_score

    model = _as_model(checkpoint)
    manifest = _as_manifest(manifest)
    speakers = manifest.unseen_speakers
    if len(speakers) < 2:
        raise DataError("embedding map needs at least 2 unseen speakers")
    vecs, labels = speaker_vectors(model, manifest, "test", speakers=speakers)
    n = vecs.shape[0]
    if n < 3:
        raise DataError("embedding map needs at least 3 utterances")
    perplexity = min(30.0, max(2.0, (n - 1) / 3.0))
    points = TSNE(
        n_components=2, random_state=seed, perplexity=perplexity, init="pca"
    ).fit_transform(vecs.astype(np.float64))
    counts = np.bincount(labels, minlength=len(speakers))
    silhouette = None
    if len(speakers) >= 2 and np.all(counts[counts > 0] >= 2) and n > len(speakers):
        silhouette = float(silhouette_score(points, labels))
    out_path = Path(out_path)
    with open(out_path, "w") as fh:
        for (px, py), lab in zip(points, labels):
            fh.write(
                json.dumps({"x": float(px), "y": float(py), "speaker_id": speakers[lab]}) + "\n"
            )
    centroids = {
        speakers[lab]: [float(v) for v in points[labels == lab].mean(axis=0)]
        for lab in np.unique(labels)
    }
    meta = {"silhouette": silhouette, "centroids": centroids, "n_points": n}
    out_path.with_name(out_path.name + ".meta.json").write_text(
        json.dumps(meta, indent=1, sort_keys=True) + "\n"
    )
    return meta


def full_report(
    checkpoint, manifest, model_tag: str = "", cfg: ProbeConfig | None = None
) -> DisentanglementReport:
    ckpt = checkpoint
    alpha = None
    if not isinstance(ckpt, Checkpoint):
        from noisevc.trainer import load_checkpoint

        ckpt = load_checkpoint(ckpt)
    alpha = ckpt.config.get("policy", {}).get("alpha")
    return DisentanglementReport(
        content_probe_speaker_acc=probe_content(ckpt, manifest, cfg),
        speaker_probe_acc=probe_speaker(ckpt, manifest, _linear_cfg(cfg)),
        l1_reconstruction=l1_reconstruction(ckpt, manifest),
        model_tag=model_tag,
        alpha=alpha,
    )


def _linear_cfg(cfg: ProbeConfig | None) -> ProbeConfig:
    if cfg is None:
        return ProbeConfig(probe_kind="linear1")
    return ProbeConfig(
        probe_kind="linear1",
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        seed=cfg.seed,
        batch_size=cfg.batch_size,
        crop_frames=cfg.crop_frames,
        hidden=cfg.hidden,
    )


def _as_model(checkpoint) -> NoiseVCModel:
    if isinstance(checkpoint, NoiseVCModel):
        return checkpoint.train(False)
    return model_from_checkpoint(checkpoint)


def _as_manifest(manifest) -> DatasetManifest:
    if isinstance(manifest, DatasetManifest):
        return manifest
    return load_manifest(manifest)
