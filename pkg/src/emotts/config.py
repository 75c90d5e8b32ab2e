"""Single JSON run configuration covering audio, model, training, silence
trimming, and paths.  Every default is overridable; unknown keys are
rejected so typos fail loudly.  Cross-field consistency (mel count, linear
bin count) is enforced here rather than in each module.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .dsp import AudioConfig
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class VadConfig:
    frame_ms: float = 30.0
    threshold_db: float = -40.0
    pad_frames: int = 2


@dataclass
class PathsConfig:
    manifest: str = ""
    cache: str = ""
    ckpt_dir: str = ""
    out_dir: str = ""


_SECTIONS = {
    "audio": AudioConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "vad": VadConfig,
    "paths": PathsConfig,
}


def _build_section(cls, data: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(sorted(unknown))}")
    converted = {key: tuple(value) if isinstance(value, list) else value
                 for key, value in data.items()}
    return cls(**converted)


@dataclass
class RunConfig:
    seed: int = 0
    audio: AudioConfig = field(default_factory=AudioConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    vad: VadConfig = field(default_factory=VadConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> None:
        if self.model.n_mels != self.audio.n_mels:
            raise ConfigError(
                f"model.n_mels ({self.model.n_mels}) != audio.n_mels ({self.audio.n_mels})")
        if self.model.linear_bins != self.audio.bins:
            raise ConfigError(
                f"model.linear_bins ({self.model.linear_bins}) != audio n_fft//2+1 "
                f"({self.audio.bins})")

    def audio_snapshot(self) -> dict:
        return dict(vars(self.audio))

    def model_snapshot(self) -> dict:
        return {key: (list(value) if isinstance(value, tuple) else value)
                for key, value in vars(self.model).items()}

    def to_dict(self) -> dict:
        out = {"seed": self.seed}
        for section in _SECTIONS:
            out[section] = {key: (list(value) if isinstance(value, tuple) else value)
                            for key, value in vars(getattr(self, section)).items()}
        return out


def load_run_config(source) -> RunConfig:
    """Build a RunConfig from a JSON file path or an already-parsed dict.

    The model's mel count and linear bin count default to the audio
    section's values unless the model section pins them explicitly.
    """
    if isinstance(source, dict):
        data = dict(source)
    else:
        with open(source, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as err:
                raise ConfigError(f"{source}: invalid JSON ({err})") from None
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    sections = {}
    for section, cls in _SECTIONS.items():
        sections[section] = dict(data.get(section) or {})
    audio = _build_section(AudioConfig, sections["audio"], "audio")
    model_data = sections["model"]
    model_data.setdefault("n_mels", audio.n_mels)
    model_data.setdefault("linear_bins", audio.bins)
    cfg = RunConfig(
        seed=int(data.get("seed", 0)),
        audio=audio,
        model=_build_section(ModelConfig, model_data, "model"),
        train=_build_section(TrainConfig, sections["train"], "train"),
        vad=_build_section(VadConfig, sections["vad"], "vad"),
        paths=_build_section(PathsConfig, sections["paths"], "paths"),
    )
    cfg.validate()
    return cfg
