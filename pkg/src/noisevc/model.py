"""The full conversion network: content encoder, speaker encoder, decoder.

Content path: 5-layer leaky-ReLU conv stack (stride 1, same padding, no
pooling) -> instance norm -> vector quantization, with a contrastive
module reading the quantized sequence. Speaker path: 3-layer conv stack
whose output is time-averaged into a single vector and replicated. The
decoder consumes the concatenation of the straight-through content view
and the replicated speaker embedding through 5 residual batch-normalized
ReLU conv layers, a recurrent layer, and a linear projection back to 80
mel bins.

Two presets: "paper" (2048x512 codebook, 34 horizons, 20 negatives) and
"desk" (everything divided by 4: 256x64 codebook, 12 horizons, 8
negatives) sized so the evaluation protocol runs on one CPU core.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from noisevc import autograd as ag, nn
from noisevc.autograd import Tensor
from noisevc.errors import DegenerateInputError, ShapeError
from noisevc.features import MelSpectrogram, N_MELS
from noisevc.nn_blocks import Codebook, ContentEmbedding, CPCModule, instance_norm, quantize

LEAKY_SLOPE = 0.1
KERNEL = 5


@dataclass
class ModelConfig:
    codebook_size: int = 256
    code_dim: int = 64
    content_hidden: tuple[int, ...] = (128, 128, 128, 128)
    speaker_hidden: tuple[int, ...] = (64, 64)
    decoder_width: int = 128
    cpc_context_dim: int = 64
    cpc_horizon: int = 12
    cpc_negatives: int = 8
    use_cpc: bool = True

    @property
    def decoder_input_dim(self) -> int:
        return 2 * self.code_dim


DESK = ModelConfig()
PAPER = ModelConfig(
    codebook_size=2048,
    code_dim=512,
    content_hidden=(512, 512, 512, 512),
    speaker_hidden=(256, 256),
    decoder_width=512,
    cpc_context_dim=256,
    cpc_horizon=34,
    cpc_negatives=20,
)
PRESETS = {"desk": DESK, "paper": PAPER}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ShapeError(f"unknown model preset {name!r}")
    return replace(PRESETS[name], **overrides)


@dataclass
class SpeakerEmbedding:
    vector: np.ndarray          # (D,)
    replicated: Tensor          # (T, D) or (B, T, D); every row equals vector

    def __post_init__(self):
        self.vector = np.asarray(self.vector)


@dataclass
class ForwardResult:
    x_hat: MelSpectrogram
    content: ContentEmbedding
    speaker: SpeakerEmbedding
    context: Tensor | None


class ContentEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        dims = (N_MELS,) + cfg.content_hidden + (cfg.code_dim,)
        self.convs = [nn.Conv1d(dims[i], dims[i + 1], KERNEL, rng) for i in range(len(dims) - 1)]
        self.codebook = Codebook(cfg.codebook_size, cfg.code_dim, rng)
        self.cpc = CPCModule(
            cfg.code_dim, cfg.cpc_context_dim, cfg.cpc_horizon, cfg.cpc_negatives, rng
        )

    def conv_stack(self, x: Tensor) -> Tensor:
        h = x
        for conv in self.convs:
            h = ag.leaky_relu(conv(h), LEAKY_SLOPE)
        return h

    def __call__(self, x: Tensor) -> tuple[Tensor, ContentEmbedding]:
        """(B, T, 80) -> (normalized encoding, quantized content), both (B, T, D)."""
        if x.shape[-2] < 2:
            raise DegenerateInputError("content encoding needs at least 2 frames")
        e = instance_norm(self.conv_stack(x))
        return e, quantize(e, self.codebook)

    def named_params(self):
        out = {}
        for i, conv in enumerate(self.convs):
            for k, p in conv.named_params().items():
                out[f"conv{i}.{k}"] = p
        out.update({f"codebook.{k}": p for k, p in self.codebook.named_params().items()})
        out.update({f"cpc.{k}": p for k, p in self.cpc.named_params().items()})
        return out


class SpeakerEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        dims = (N_MELS,) + cfg.speaker_hidden + (cfg.code_dim,)
        self.convs = [nn.Conv1d(dims[i], dims[i + 1], KERNEL, rng) for i in range(len(dims) - 1)]

    def conv_stack(self, x: Tensor) -> Tensor:
        h = x
        for conv in self.convs:
            h = ag.leaky_relu(conv(h), LEAKY_SLOPE)
        return h

    def __call__(self, x: Tensor, target_len: int) -> tuple[Tensor, Tensor]:
        """(B, T, 80) -> (vector (B, D), replicated (B, target_len, D))."""
        vec = self.conv_stack(x).mean(axis=1)
        b, d = vec.shape
        replicated = vec.reshape(b, 1, d) + Tensor(np.zeros((b, target_len, d), dtype=vec.dtype))
        return vec, replicated

    def named_params(self):
        out = {}
        for i, conv in enumerate(self.convs):
            for k, p in conv.named_params().items():
                out[f"conv{i}.{k}"] = p
        return out


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        w = cfg.decoder_width
        self.input_dim = cfg.decoder_input_dim
        dims = (self.input_dim,) + (w,) * 5
        self.convs = [nn.Conv1d(dims[i], dims[i + 1], KERNEL, rng) for i in range(5)]
        self.norms = [nn.BatchNorm1d(w) for _ in range(5)]
        self.recurrent = nn.LSTM(w, w, rng)
        self.proj = nn.Linear(w, N_MELS, rng)

    def __call__(self, z: Tensor, training: bool) -> Tensor:
        if z.shape[-1] != self.input_dim:
            raise ShapeError(f"decoder expects width {self.input_dim}, got {z.shape[-1]}")
        h = z
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            out = ag.relu(norm(conv(h), training))
            h = out + h if i > 0 else out          # residual once widths match
        return self.proj(self.recurrent(h))

    def named_params(self):
        out = {}
        for i, conv in enumerate(self.convs):
            for k, p in conv.named_params().items():
                out[f"conv{i}.{k}"] = p
        for i, norm in enumerate(self.norms):
            for k, p in norm.named_params().items():
                out[f"norm{i}.{k}"] = p
        out.update({f"recurrent.{k}": p for k, p in self.recurrent.named_params().items()})
        out.update({f"proj.{k}": p for k, p in self.proj.named_params().items()})
        return out

    def named_buffers(self):
        out = {}
        for i, norm in enumerate(self.norms):
            for k, b in norm.named_buffers().items():
                out[f"norm{i}.{k}"] = b
        return out


class NoiseVCModel:
    """The assembled network. `training` gates batch-norm statistics."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        ss = np.random.SeedSequence([seed, 7001])
        r_content, r_speaker, r_decoder = (
            np.random.default_rng(s) for s in ss.spawn(3)
        )
        self.content_encoder = ContentEncoder(cfg, r_content)
        self.speaker_encoder = SpeakerEncoder(cfg, r_speaker)
        self.decoder = Decoder(cfg, r_decoder)
        self.training = True

    def train(self, flag: bool = True) -> "NoiseVCModel":
        self.training = flag
        return self

    def named_params(self) -> dict[str, Tensor]:
        return nn.merge_params(
            ("content_encoder", self.content_encoder),
            ("speaker_encoder", self.speaker_encoder),
            ("decoder", self.decoder),
        )

    def named_buffers(self) -> dict[str, np.ndarray]:
        return nn.merge_buffers(("decoder", self.decoder))

    def set_buffers(self, buffers: dict[str, np.ndarray]) -> None:
        for i, norm in enumerate(self.decoder.norms):
            norm.running_mean = np.asarray(
                buffers[f"decoder.norm{i}.running_mean"], dtype=nn.DTYPE
            ).reshape(norm.running_mean.shape)
            norm.running_var = np.asarray(
                buffers[f"decoder.norm{i}.running_var"], dtype=nn.DTYPE
            ).reshape(norm.running_var.shape)

    def decode_batch(self, content_st: Tensor, speaker_rep: Tensor) -> Tensor:
        if content_st.shape[:-1] != speaker_rep.shape[:-1]:
            raise ShapeError(
                f"content length {content_st.shape} vs speaker length {speaker_rep.shape}"
            )
        z = ag.concat([content_st, speaker_rep], axis=-1)
        return self.decoder(z, self.training)

    def forward_batch(self, x_content: Tensor, x_speaker: Tensor) -> dict:
        """Both inputs (B, T, 80); the content path always sees x_content."""
        if x_content.shape != x_speaker.shape:
            raise ShapeError("content and speaker inputs must share a shape")
        e, emb = self.content_encoder(x_content)
        t = x_content.shape[1]
        vec, rep = self.speaker_encoder(x_speaker, t)
        x_hat = self.decode_batch(emb.straight_through, rep)
        return {"e": e, "content": emb, "speaker_vec": vec, "speaker_rep": rep, "x_hat": x_hat}


# -- single-utterance surfaces ---------------------------------------------------


def _to_btc(mel: MelSpectrogram) -> Tensor:
    return Tensor(np.ascontiguousarray(mel.values.T[None, :, :], dtype=nn.DTYPE))


def encode_content(x: MelSpectrogram, model: NoiseVCModel) -> tuple[Tensor, ContentEmbedding]:
    """Mel -> (instance-normalized encoding (T, D), quantized content)."""
    e, emb = model.content_encoder(_to_btc(x))
    t, d = e.shape[1], e.shape[2]
    return (
        e.reshape(t, d),
        ContentEmbedding(
            quantized=emb.quantized.reshape(t, d),
            indices=emb.indices.reshape(t),
            straight_through=emb.straight_through.reshape(t, d),
        ),
    )


def encode_speaker(x: MelSpectrogram, model: NoiseVCModel, target_len: int) -> SpeakerEmbedding:
    vec, rep = model.speaker_encoder(_to_btc(x), target_len)
    return SpeakerEmbedding(vector=vec.data[0], replicated=rep.reshape(target_len, -1))


def decode(content: ContentEmbedding, speaker: SpeakerEmbedding, model: NoiseVCModel) -> MelSpectrogram:
    st = content.straight_through
    t, d = st.shape
    out = model.decode_batch(st.reshape(1, t, d), speaker.replicated.reshape(1, t, -1))
    return MelSpectrogram(values=out.data[0].T)


def forward(x_content: MelSpectrogram, x_speaker: MelSpectrogram, model: NoiseVCModel) -> ForwardResult:
    if x_content.n_frames != x_speaker.n_frames:
        raise ShapeError("content and speaker mels must have equal length")
    res = model.forward_batch(_to_btc(x_content), _to_btc(x_speaker))
    t = x_content.n_frames
    d = model.cfg.code_dim
    emb = res["content"]
    context = (
        model.content_encoder.cpc.context(emb.straight_through).reshape(
            t, model.cfg.cpc_context_dim
        )
        if model.cfg.use_cpc
        else None
    )
    return ForwardResult(
        x_hat=MelSpectrogram(values=res["x_hat"].data[0].T),
        content=ContentEmbedding(
            quantized=emb.quantized.reshape(t, d),
            indices=emb.indices.reshape(t),
            straight_through=emb.straight_through.reshape(t, d),
        ),
        speaker=SpeakerEmbedding(
            vector=res["speaker_vec"].data[0], replicated=res["speaker_rep"].reshape(t, d)
        ),
        context=context,
    )
