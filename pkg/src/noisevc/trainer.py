"""Training loop: VQ + contrastive objectives under the augmentation plan.

Each step samples fixed-length crops, always feeds originals to the content
path, and per example either the original or a noised copy to the speaker
path (the reconstruction target follows the speaker input). Checkpoints
capture parameters, optimizer state, and all RNG streams, so a resumed run
reproduces the uninterrupted metric log bit for bit on the same backend.

Checkpoint layout: checkpoint.json plus one flat NVCM tensor file per
parameter group (content_encoder, codebook, cpc, speaker_encoder, decoder,
buffers, opt_m, opt_v); the JSON manifest records how each flat file splits
back into named tensors.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from noisevc import nn, nvcm
from noisevc.augment import AugmentPolicy, Version, add_noise_array, plan_step
from noisevc.autograd import Tensor
from noisevc.errors import ConfigError, IngestionError, NumericalError
from noisevc.features import DatasetManifest, load_manifest
from noisevc.model import ModelConfig, NoiseVCModel, preset
from noisevc.nn_blocks import LossBundle, cpc_loss, vq_loss


@dataclass
class TrainConfig:
    batch_size: int = 4
    steps: int = 5000
    learning_rate: float = 1e-3
    beta: float = 0.25
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)
    preset: str = "desk"
    seed: int = 0
    checkpoint_every: int = 1000
    crop_frames: int = 128
    use_cpc: bool = True
    cpc_weight: float = 1.0
    cpc_same_utterance_only: bool = False
    model_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("batch_size", "steps", "checkpoint_every", "crop_frames"):
            if getattr(self, name) < (0 if name == "steps" else 1):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")


@dataclass
class Checkpoint:
    step: int
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    opt_m: dict[str, np.ndarray]
    opt_v: dict[str, np.ndarray]
    opt_t: int
    rng_states: dict
    config: dict


class _RngBundle:
    """Named RNG streams (data order, augmentation, negative sampling)."""

    STREAMS = ("data", "augment", "cpc")

    def __init__(self, config: TrainConfig):
        self.data = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
        self.augment = np.random.default_rng(
            np.random.SeedSequence([config.policy.rng_seed, 2])
        )
        self.cpc = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))

    def states(self) -> dict:
        return {name: getattr(self, name).bit_generator.state for name in self.STREAMS}

    def restore(self, states: dict) -> None:
        for name in self.STREAMS:
            getattr(self, name).bit_generator.state = states[name]


def model_config_from_train(config: TrainConfig) -> ModelConfig:
    overrides = {k: v for k, v in config.model_overrides.items()}
    overrides["use_cpc"] = config.use_cpc
    return preset(config.preset, **overrides)


def train_step(batch, model: NoiseVCModel, optimizer: nn.Adam, config: TrainConfig, rngs) -> LossBundle:
    """One optimizer update; returns the pre-update losses.

    batch: list of (original (T, 80), augmented (T, 80), speaker_id).
    """
    if not batch:
        raise ConfigError("empty batch")
    x_content = np.stack([item[0] for item in batch])
    target = np.empty_like(x_content)
    x_speaker = np.empty_like(x_content)
    for i, (orig, aug, _sid) in enumerate(batch):
        plan = plan_step(config.policy, rngs.augment)
        chosen = aug if plan.speaker_input is Version.AUGMENTED else orig
        x_speaker[i] = chosen
        target[i] = chosen
    res = model.forward_batch(Tensor(x_content), Tensor(x_speaker))
    rec_t, cb_t, commit_t = vq_loss(
        Tensor(target), res["x_hat"], res["e"], res["content"], beta=config.beta
    )
    total_t = rec_t + cb_t + commit_t
    if config.use_cpc:
        cpc_t = (
            cpc_loss(
                res["content"].straight_through,
                model.content_encoder.cpc,
                rngs.cpc,
                same_utterance_only=config.cpc_same_utterance_only,
            )
            * config.cpc_weight
        )
        total_t = total_t + cpc_t
        cpc_val = cpc_t.item()
    else:
        cpc_val = 0.0
    vals = {
        "reconstruction": rec_t.item(),
        "codebook": cb_t.item(),
        "commitment": commit_t.item(),
        "cpc": cpc_val,
    }
    for name, v in vals.items():
        if not np.isfinite(v):
            raise NumericalError(f"non-finite {name} loss")
    optimizer.zero_grad()
    total_t.backward()
    optimizer.step()
    return LossBundle(
        reconstruction=vals["reconstruction"],
        codebook_term=vals["codebook"],
        commitment_term=vals["commitment"],
        cpc=vals["cpc"],
        total=vals["reconstruction"] + vals["codebook"] + vals["commitment"] + vals["cpc"],
    )


def _load_train_arrays(manifest: DatasetManifest):
    entries = manifest.split_entries("train")
    if not entries:
        raise IngestionError("manifest has no train entries")
    mels, speakers = [], []
    for e in entries:
        if not Path(e.mel_path).exists():
            raise IngestionError(f"missing mel file: {e.mel_path}")
        values = nvcm.read_tensor(e.mel_path)  # (80, T)
        mels.append(np.ascontiguousarray(values.T))
        speakers.append(e.speaker_id)
    return mels, speakers


def fit(
    manifest: DatasetManifest | str | Path,
    config: TrainConfig,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
) -> tuple[Checkpoint, Path]:
    """Run config.steps optimizer steps; returns the final checkpoint and its path."""
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mels, speakers = _load_train_arrays(manifest)
    crop = min([config.crop_frames] + [m.shape[0] for m in mels])
    model = NoiseVCModel(model_config_from_train(config), seed=config.seed)
    if config.use_cpc and crop <= model.cfg.cpc_horizon:
        raise ConfigError(
            f"crop of {crop} frames cannot exceed the contrastive horizon {model.cfg.cpc_horizon}"
        )
    optimizer = nn.Adam(model.named_params(), lr=config.learning_rate)
    rngs = _RngBundle(config)
    start_step = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        apply_checkpoint(ckpt, model, optimizer)
        rngs.restore(ckpt.rng_states)
        start_step = ckpt.step
    snapshot = _config_snapshot(config, model.cfg, crop)
    metrics_path = out_dir / "metrics.jsonl"
    n = len(mels)
    with open(metrics_path, "a") as metrics:
        for step in range(start_step, config.steps):
            picks = rngs.data.integers(0, n, size=config.batch_size)
            batch = []
            for i in picks:
                t_i = mels[i].shape[0]
                start = int(rngs.data.integers(0, t_i - crop + 1))
                orig = mels[i][start : start + crop]
                aug = add_noise_array(orig, config.policy.sigma, rngs.augment)
                batch.append((orig, aug, speakers[i]))
            try:
                bundle = train_step(batch, model, optimizer, config, rngs)
            except NumericalError as exc:
                raise NumericalError(f"{exc} at step {step + 1}") from exc
            metrics.write(
                json.dumps(
                    {
                        "step": step + 1,
                        "rec": bundle.reconstruction,
                        "codebook": bundle.codebook_term,
                        "commit": bundle.commitment_term,
                        "cpc": bundle.cpc,
                        "total": bundle.total,
                    }
                )
                + "\n"
            )
            if (step + 1) % config.checkpoint_every == 0 and (step + 1) < config.steps:
                save_checkpoint(
                    _snapshot_checkpoint(model, optimizer, rngs, step + 1, snapshot),
                    out_dir / f"ckpt_{step + 1:06d}",
                )
    final = _snapshot_checkpoint(model, optimizer, rngs, config.steps, snapshot)
    final_path = out_dir / f"ckpt_{config.steps:06d}"
    save_checkpoint(final, final_path)
    return final, final_path


def _config_snapshot(config: TrainConfig, model_cfg: ModelConfig, crop: int) -> dict:
    snap = asdict(config)
    snap["policy"] = asdict(config.policy)
    snap["model"] = asdict(model_cfg)
    snap["model"]["content_hidden"] = list(model_cfg.content_hidden)
    snap["model"]["speaker_hidden"] = list(model_cfg.speaker_hidden)
    snap["effective_crop"] = crop
    return snap


def _snapshot_checkpoint(
    model: NoiseVCModel, optimizer: nn.Adam, rngs: _RngBundle, step: int, snapshot: dict
) -> Checkpoint:
    return Checkpoint(
        step=step,
        params={k: p.data.copy() for k, p in model.named_params().items()},
        buffers={k: b.copy() for k, b in model.named_buffers().items()},
        opt_m={k: v.copy() for k, v in optimizer.m.items()},
        opt_v={k: v.copy() for k, v in optimizer.v.items()},
        opt_t=optimizer.t,
        rng_states=rngs.states(),
        config=dict(snapshot),
    )


# -- checkpoint serialization ---------------------------------------------------

_GROUPS = ("content_encoder", "codebook", "cpc", "speaker_encoder", "decoder")


def _group_of(name: str) -> str:
    if name.startswith("content_encoder.codebook."):
        return "codebook"
    if name.startswith("content_encoder.cpc."):
        return "cpc"
    for g in ("content_encoder", "speaker_encoder", "decoder"):
        if name.startswith(g + "."):
            return g
    raise ConfigError(f"parameter {name} belongs to no checkpoint group")


def _write_group(dir_path: Path, group: str, tensors: dict[str, np.ndarray]) -> dict:
    names = sorted(tensors)
    index, offset = [], 0
    flat_parts = []
    for name in names:
        arr = np.asarray(tensors[name], dtype=np.float32)
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        flat_parts.append(arr.reshape(-1))
    flat = np.concatenate(flat_parts) if flat_parts else np.zeros(0, dtype=np.float32)
    nvcm.write_tensor(dir_path / f"{group}.nvcm", flat)
    return {"file": f"{group}.nvcm", "params": index}


def _read_group(dir_path: Path, spec: dict) -> dict[str, np.ndarray]:
    flat = nvcm.read_tensor(dir_path / spec["file"])
    out = {}
    for rec in spec["params"]:
        size = int(np.prod(rec["shape"])) if rec["shape"] else 1
        out[rec["name"]] = flat[rec["offset"] : rec["offset"] + size].reshape(rec["shape"])
    return out


def save_checkpoint(ckpt: Checkpoint, dir_path: str | Path) -> Path:
    """Atomic: writes to a temp dir, then renames into place."""
    dir_path = Path(dir_path)
    tmp = dir_path.with_name(dir_path.name + ".tmp")
    if tmp.exists():
        for f in tmp.iterdir():
            f.unlink()
        tmp.rmdir()
    tmp.mkdir(parents=True)
    groups: dict[str, dict[str, np.ndarray]] = {g: {} for g in _GROUPS}
    for name, arr in ckpt.params.items():
        groups[_group_of(name)][name] = arr
    groups["buffers"] = dict(ckpt.buffers)
    groups["opt_m"] = dict(ckpt.opt_m)
    groups["opt_v"] = dict(ckpt.opt_v)
    manifest = {
        "step": ckpt.step,
        "opt_t": ckpt.opt_t,
        "rng_states": ckpt.rng_states,
        "config": ckpt.config,
        "groups": {g: _write_group(tmp, g, tensors) for g, tensors in groups.items()},
    }
    (tmp / "checkpoint.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    if dir_path.exists():
        for f in dir_path.iterdir():
            f.unlink()
        dir_path.rmdir()
    tmp.rename(dir_path)
    return dir_path


def load_checkpoint(dir_path: str | Path) -> Checkpoint:
    dir_path = Path(dir_path)
    meta_path = dir_path / "checkpoint.json"
    if not meta_path.exists():
        raise IngestionError(f"no checkpoint.json under {dir_path}")
    meta = json.loads(meta_path.read_text())
    tensors = {g: _read_group(dir_path, spec) for g, spec in meta["groups"].items()}
    params = {}
    for g in _GROUPS:
        params.update(tensors.get(g, {}))
    return Checkpoint(
        step=int(meta["step"]),
        params=params,
        buffers=tensors.get("buffers", {}),
        opt_m=tensors.get("opt_m", {}),
        opt_v=tensors.get("opt_v", {}),
        opt_t=int(meta["opt_t"]),
        rng_states=meta["rng_states"],
        config=meta["config"],
    )


def apply_checkpoint(ckpt: Checkpoint, model: NoiseVCModel, optimizer: nn.Adam | None = None) -> None:
    named = model.named_params()
    missing = set(named) - set(ckpt.params)
    if missing:
        raise ConfigError(f"checkpoint missing parameters: {sorted(missing)[:5]}")
    for name, p in named.items():
        p.data = np.asarray(ckpt.params[name], dtype=p.dtype).reshape(p.shape)
    model.set_buffers(ckpt.buffers)
    if optimizer is not None:
        arrays = {f"m.{k}": v for k, v in ckpt.opt_m.items()}
        arrays.update({f"v.{k}": v for k, v in ckpt.opt_v.items()})
        optimizer.load_state_arrays(arrays, ckpt.opt_t)


def model_from_checkpoint(ckpt_or_path) -> NoiseVCModel:
    ckpt = ckpt_or_path if isinstance(ckpt_or_path, Checkpoint) else load_checkpoint(ckpt_or_path)
    mc = ckpt.config["model"]
    cfg = ModelConfig(
        codebook_size=mc["codebook_size"],
        code_dim=mc["code_dim"],
        content_hidden=tuple(mc["content_hidden"]),
        speaker_hidden=tuple(mc["speaker_hidden"]),
        decoder_width=mc["decoder_width"],
        cpc_context_dim=mc["cpc_context_dim"],
        cpc_horizon=mc["cpc_horizon"],
        cpc_negatives=mc["cpc_negatives"],
        use_cpc=mc["use_cpc"],
    )
    model = NoiseVCModel(cfg, seed=int(ckpt.config.get("seed", 0)))
    apply_checkpoint(ckpt, model)
    return model.train(False)


def read_metrics(path: str | Path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    return [json.loads(line) for line in lines if line.strip()]
