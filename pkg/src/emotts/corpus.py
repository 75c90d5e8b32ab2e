"""Data ingestion and the deterministic synthetic tone-language corpus.

A manifest is JSON-text lines of <id, text, emotion, wav_path>.  The
synthetic generator renders each character as a fixed-frequency tone whose
pitch and duration are scaled per emotion, giving a corpus whose
character-to-frame alignment is exactly computable.  Preprocessing turns
wavs into normalized mel/linear features in a single indexed binary cache.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .errors import EmoTtsError, FormatError, LabelError
from .model import EMOTIONS, MAX_TEXT_CHARS

CACHE_MAGIC = b"ETTC1\n"
MAX_UTTERANCE_SECONDS = 8.7

MANIFEST_FIELDS = ("id", "text", "emotion", "wav_path")


@dataclass
class ManifestEntry:
    id: str
    text: str
    emotion: str
    wav_path: str


def load_manifest(path) -> list[ManifestEntry]:
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({err})") from None
            if not isinstance(obj, dict) or set(obj) != set(MANIFEST_FIELDS):
                raise FormatError(
                    f"{path}:{lineno}: entry must have exactly the fields "
                    f"{', '.join(MANIFEST_FIELDS)}")
            if obj["emotion"] not in EMOTIONS:
                raise LabelError(
                    f"{path}:{lineno}: emotion {obj['emotion']!r} invalid; "
                    f"valid labels: {', '.join(EMOTIONS)}")
            if len(obj["text"]) > MAX_TEXT_CHARS:
                raise FormatError(
                    f"{path}:{lineno}: entry {obj['id']!r} text has {len(obj['text'])} "
                    f"characters, over the {MAX_TEXT_CHARS}-character cap")
            if obj["id"] in seen:
                raise FormatError(f"{path}:{lineno}: duplicate id {obj['id']!r}")
            seen.add(obj["id"])
            entries.append(ManifestEntry(**obj))
    return entries


def _default_pitch():
    return {"neutral": 1.00, "angry": 1.15, "fear": 1.10,
            "happy": 1.20, "sad": 0.90, "surprise": 1.25}


def _default_duration():
    return {"neutral": 1.00, "angry": 0.90, "fear": 1.05,
            "happy": 0.95, "sad": 1.15, "surprise": 0.85}


@dataclass
class SyntheticSpec:
    """Rendering rules for the tone-language corpus.

    The per-emotion multiplier tables are arbitrary defaults chosen to be
    audibly distinct, not measured ground truth.
    """

    alphabet: str = "abcdefghij"
    base_frequency: float = 200.0
    frequency_step: float = 50.0
    char_seconds: float = 0.1
    ramp_seconds: float = 0.01
    amplitude: float = 0.7
    pitch_mult: dict = field(default_factory=_default_pitch)
    duration_mult: dict = field(default_factory=_default_duration)

    def __post_init__(self):
        for table in (self.pitch_mult, self.duration_mult):
            if any(v <= 0 for v in table.values()):
                raise EmoTtsError("synthetic multipliers must be positive")

    def char_frequency(self, ch: str) -> float:
        return self.base_frequency + self.frequency_step * self.alphabet.index(ch)

    def utterance_seconds(self, text: str, emotion: str) -> float:
        return len(text) * self.char_seconds * self.duration_mult[emotion]


def render_utterance(text: str, emotion: str, spec: SyntheticSpec,
                     sample_rate: int = 16000) -> dsp.Waveform:
    """Concatenated per-character sine tones with raised-cosine on/off ramps."""
    if spec.utterance_seconds(text, emotion) > MAX_UTTERANCE_SECONDS:
        raise EmoTtsError(
            f"rendered utterance would exceed {MAX_UTTERANCE_SECONDS}s")
    char_samples = int(round(spec.char_seconds * spec.duration_mult[emotion] * sample_rate))
    ramp = min(int(round(spec.ramp_seconds * sample_rate)), char_samples // 2)
    envelope = np.ones(char_samples)
    if ramp > 0:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        envelope[:ramp] = fade
        envelope[char_samples - ramp:] = fade[::-1]
    pieces = []
    for ch in text:
        freq = spec.char_frequency(ch) * spec.pitch_mult[emotion]
        t = np.arange(char_samples) / sample_rate
        pieces.append(spec.amplitude * np.sin(2 * np.pi * freq * t) * envelope)
    return dsp.Waveform(np.concatenate(pieces), sample_rate)


def ground_truth_alignment(text: str, emotion: str, spec: SyntheticSpec,
                           audio_cfg: dsp.AudioConfig) -> np.ndarray:
    """Character index carried by each analysis frame of the rendered audio."""
    char_samples = int(round(spec.char_seconds * spec.duration_mult[emotion]
                             * audio_cfg.sample_rate))
    total = char_samples * len(text)
    n_frames = 1 + total // audio_cfg.hop_length
    centers = np.arange(n_frames) * audio_cfg.hop_length
    return np.minimum(centers // char_samples, len(text) - 1)


def generate_synthetic_corpus(n_utterances: int, spec: SyntheticSpec, seed: int,
                              out_dir, sample_rate: int = 16000) -> str:
    """Write n wavs plus a manifest; emotions cycle and each block of six
    utterances shares one text, so every emotion sees the same script.

    Deterministic: the same seed reproduces the corpus byte for byte.
    """
    if n_utterances < 1:
        raise EmoTtsError("need at least one utterance")
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest_path = out / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as f:
        block_text = None
        for i in range(n_utterances):
            if i % len(EMOTIONS) == 0:
                length = int(rng.integers(3, 13))
                block_text = "".join(rng.choice(list(spec.alphabet), size=length))
            emotion = EMOTIONS[i % len(EMOTIONS)]
            wav_name = f"u{i:04d}.wav"
            dsp.wav_write(out / wav_name, render_utterance(block_text, emotion, spec,
                                                           sample_rate))
            f.write(json.dumps({"id": f"u{i:04d}", "text": block_text,
                                "emotion": emotion, "wav_path": wav_name}) + "\n")
    return str(manifest_path)


# -- feature cache --------------------------------------------------------------


@dataclass
class CacheRecord:
    id: str
    char_ids: np.ndarray
    emotion_id: int
    mel: np.ndarray     # (frames, n_mels), normalized
    linear: np.ndarray  # (frames, bins), normalized


def write_cache(path, records: list[CacheRecord], audio_snapshot: dict) -> None:
    """Magic, one JSON index line, then raw little-endian float64 arrays."""
    index = []
    blob = bytearray()
    for record in records:
        mel_off = len(blob)
        blob.extend(np.ascontiguousarray(record.mel, dtype="<f8").tobytes())
        lin_off = len(blob)
        blob.extend(np.ascontiguousarray(record.linear, dtype="<f8").tobytes())
        index.append({
            "id": record.id,
            "char_ids": [int(c) for c in record.char_ids],
            "emotion_id": int(record.emotion_id),
            "mel_shape": list(record.mel.shape), "mel_offset": mel_off,
            "linear_shape": list(record.linear.shape), "linear_offset": lin_off,
        })
    meta = {"audio": audio_snapshot, "records": index}
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(json.dumps(meta, sort_keys=True).encode("utf-8") + b"\n")
        f.write(bytes(blob))


def read_cache(path) -> tuple[list[CacheRecord], dict]:
    with open(path, "rb") as f:
        magic = f.read(len(CACHE_MAGIC))
        if magic != CACHE_MAGIC:
            raise FormatError(f"{path}: bad cache magic {magic!r}")
        try:
            meta = json.loads(f.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise FormatError(f"{path}: unreadable cache index ({err})") from None
        blob = f.read()
    records = []
    for entry in meta["records"]:
        def pull(shape, offset):
            count = int(np.prod(shape, dtype=np.int64))
            if offset + 8 * count > len(blob):
                raise FormatError(f"{path}: truncated array for {entry['id']!r}")
            return np.frombuffer(blob, dtype="<f8", count=count,
                                 offset=offset).reshape(shape).astype(np.float64)

        records.append(CacheRecord(
            id=entry["id"],
            char_ids=np.asarray(entry["char_ids"], dtype=np.int64),
            emotion_id=entry["emotion_id"],
            mel=pull(entry["mel_shape"], entry["mel_offset"]),
            linear=pull(entry["linear_shape"], entry["linear_offset"]),
        ))
    return records, meta


def extract_features(wave: dsp.Waveform, audio_cfg: dsp.AudioConfig,
                     mel_bank: np.ndarray, vad_cfg=None) -> tuple[np.ndarray, np.ndarray]:
    """Pre-emphasis -> silence trim -> STFT -> normalized mel + linear features.

    Raises EmptyAudioError for all-silence input and EmoTtsError when the
    trimmed audio runs past the duration cap.
    """
    emphasized = dsp.preemphasize(wave, audio_cfg.preemphasis)
    if vad_cfg is None:
        trimmed = dsp.vad_trim(emphasized)
    else:
        trimmed = dsp.vad_trim(emphasized, vad_cfg.frame_ms, vad_cfg.threshold_db,
                               vad_cfg.pad_frames)
    if trimmed.seconds > MAX_UTTERANCE_SECONDS:
        raise EmoTtsError(
            f"trimmed audio of {trimmed.seconds:.2f}s exceeds the "
            f"{MAX_UTTERANCE_SECONDS}s cap")
    if len(trimmed) < audio_cfg.win_length:
        pad = audio_cfg.win_length - len(trimmed)
        trimmed = dsp.Waveform(np.pad(trimmed.samples, (0, pad)), trimmed.sample_rate)
    magnitudes, _ = dsp.stft(trimmed, audio_cfg)
    mel = magnitudes @ mel_bank.T
    return dsp.amp_to_db_norm(mel, audio_cfg), dsp.amp_to_db_norm(magnitudes, audio_cfg)


def preprocess_corpus(entries: list[ManifestEntry], run_cfg, cache_path,
                      manifest_dir, log=None) -> dict:
    """Build the feature cache for a manifest; returns a summary dict.

    Unreadable or all-silence wavs are skipped with a warning; zero usable
    entries is fatal.
    """
    from pathlib import Path
    log = log if log is not None else sys.stderr
    audio_cfg = run_cfg.audio
    mel_bank = dsp.mel_filterbank(audio_cfg)
    records = []
    warnings_list = []
    total_seconds = 0.0
    for entry in entries:
        wav_path = Path(manifest_dir) / entry.wav_path
        try:
            wave = dsp.wav_read(wav_path)
            mel, linear = extract_features(wave, audio_cfg, mel_bank, run_cfg.vad)
        except EmoTtsError as err:
            warnings_list.append(f"skipping {entry.id}: {err}")
            print(f"warning: skipping {entry.id}: {err}", file=log)
            continue
        records.append(CacheRecord(
            id=entry.id,
            char_ids=run_cfg.model.text_to_ids(entry.text),
            emotion_id=EMOTIONS.index(entry.emotion),
            mel=mel,
            linear=linear,
        ))
        total_seconds += mel.shape[0] * audio_cfg.hop_length / audio_cfg.sample_rate
    if not records:
        raise EmoTtsError("preprocessing produced zero usable utterances")
    write_cache(cache_path, records, run_cfg.audio_snapshot())
    return {"kept": len(records), "skipped": len(entries) - len(records),
            "hours": total_seconds / 3600.0, "warnings": warnings_list}
