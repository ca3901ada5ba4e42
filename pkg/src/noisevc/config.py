"""Run configuration: a flat dotted-key schema with two named presets.

Config files are plain text, one `key = value` per line, '#' comments.
Overrides (`key=value` strings) apply last. Unknown keys, type mismatches,
and out-of-range values are ConfigErrors naming the key. The "paper" preset
pins the published constants (2048x512 codebook, horizon 34, 20 negatives,
beta 0.25, alpha 0.5); "desk" is the quarter-scale preset the acceptance
suite runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from noisevc.errors import ConfigError
from noisevc.augment import AugmentPolicy
from noisevc.trainer import TrainConfig
from noisevc.evalsuite import ProbeConfig

PRESET_NAMES = ("desk", "paper")


def _in_unit(v):
    return 0.0 <= v <= 1.0


def _nonneg(v):
    return v >= 0


def _positive(v):
    return v > 0


# key: (type, desk default, paper default, validator, doc)
SCHEMA: dict[str, tuple] = {
    "features.unseen": (int, 2, 20, _nonneg, "speakers held out entirely"),
    "features.seed": (int, 0, 0, None, "split seed"),
    "synth.speakers": (int, 10, 10, lambda v: v >= 2, "synthetic speakers"),
    "synth.utts": (int, 40, 40, _positive, "utterances per speaker"),
    "synth.symbols": (int, 12, 12, _positive, "content symbols"),
    "synth.seed": (int, 0, 0, None, "corpus seed"),
    "synth.unseen_fraction": (float, 0.2, 0.2, _in_unit, "unseen speaker fraction"),
    "model.codebook_size": (int, 256, 2048, _positive, "codes V"),
    "model.code_dim": (int, 64, 512, _positive, "code dimension D"),
    "model.cpc_horizon": (int, 12, 34, _positive, "prediction horizons K"),
    "model.cpc_negatives": (int, 8, 20, _positive, "negatives per horizon"),
    "model.use_cpc": (bool, True, True, None, "train the contrastive objective"),
    "augment.alpha": (float, 0.5, 0.5, _in_unit, "probability of the augmented pair"),
    "augment.sigma": (float, 0.1, 0.1, _nonneg, "noise std in log-mel units"),
    "augment.seed": (int, 0, 0, None, "augmentation rng seed"),
    "train.batch_size": (int, 4, 8, _positive, "sequences per step"),
    "train.steps": (int, 5000, 200000, _nonneg, "optimizer steps"),
    "train.learning_rate": (float, 1e-3, 1e-4, _positive, "adaptive-moment lr"),
    "train.beta": (float, 0.25, 0.25, _nonneg, "commitment weight"),
    "train.seed": (int, 0, 0, None, "training seed"),
    "train.checkpoint_every": (int, 1000, 10000, _positive, "steps between checkpoints"),
    "train.crop_frames": (int, 128, 128, _positive, "crop length"),
    "train.cpc_weight": (float, 1.0, 1.0, _nonneg, "contrastive loss weight"),
    "train.cpc_same_utterance_only": (bool, False, False, None, "negatives from same utterance"),
    "eval.epochs": (int, 20, 20, _positive, "probe epochs"),
    "eval.learning_rate": (float, 1e-3, 1e-3, _positive, "probe lr"),
    "eval.seed": (int, 0, 0, None, "probe seed"),
    "eval.tsne_seed": (int, 0, 0, None, "embedding map seed"),
}


@dataclass
class RunConfig:
    preset: str
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def dump(self) -> str:
        lines = [f"preset = {self.preset}"]
        lines += [f"{k} = {self.values[k]}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"


def _parse_value(key: str, raw, typ):
    if isinstance(raw, str):
        raw = raw.strip()
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        try:
            return typ(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from exc
    if typ is bool:
        if isinstance(raw, bool):
            return raw
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if typ is float and isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return float(raw)
    if typ is int:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
        return raw
    if not isinstance(raw, typ):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}")
    return raw


def _apply(values: dict, key: str, raw) -> None:
    if key == "preset":
        raise ConfigError("preset must be chosen up front, not overridden mid-file")
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    typ, _dd, _dp, validator, _doc = SCHEMA[key]
    value = _parse_value(key, raw, typ)
    if validator is not None and not validator(value):
        raise ConfigError(f"{key}: value {value!r} out of range")
    values[key] = value


def defaults(preset: str) -> dict:
    if preset not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {preset!r}; choose from {PRESET_NAMES}")
    col = 1 if preset == "desk" else 2
    return {k: spec[col] for k, spec in SCHEMA.items()}


def load_config(
    path: str | Path | None,
    overrides: list[str] | None = None,
    preset: str = "desk",
) -> RunConfig:
    """Defaults(preset) <- file <- overrides, validated against the schema."""
    file_preset = None
    pairs: list[tuple[str, str]] = []
    if path is not None:
        text = Path(path).read_text()
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key = value, got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key == "preset":
                if raw not in PRESET_NAMES:
                    raise ConfigError(f"unknown preset {raw!r}")
                file_preset = raw
            else:
                pairs.append((key, raw))
    if file_preset is not None:
        preset = file_preset
    values = defaults(preset)
    for key, raw in pairs:
        _apply(values, key, raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        _apply(values, key, raw)
    return RunConfig(preset=preset, values=values)


def train_config(rc: RunConfig) -> TrainConfig:
    return TrainConfig(
        batch_size=rc["train.batch_size"],
        steps=rc["train.steps"],
        learning_rate=rc["train.learning_rate"],
        beta=rc["train.beta"],
        policy=AugmentPolicy(
            alpha=rc["augment.alpha"],
            sigma=rc["augment.sigma"],
            rng_seed=rc["augment.seed"],
        ),
        preset=rc.preset,
        seed=rc["train.seed"],
        checkpoint_every=rc["train.checkpoint_every"],
        crop_frames=rc["train.crop_frames"],
        use_cpc=rc["model.use_cpc"],
        cpc_weight=rc["train.cpc_weight"],
        cpc_same_utterance_only=rc["train.cpc_same_utterance_only"],
        model_overrides={
            "codebook_size": rc["model.codebook_size"],
            "code_dim": rc["model.code_dim"],
            "cpc_horizon": rc["model.cpc_horizon"],
            "cpc_negatives": rc["model.cpc_negatives"],
        },
    )


def probe_config(rc: RunConfig, kind: str = "conv3") -> ProbeConfig:
    return ProbeConfig(
        probe_kind=kind,
        epochs=rc["eval.epochs"],
        learning_rate=rc["eval.learning_rate"],
        seed=rc["eval.seed"],
    )
