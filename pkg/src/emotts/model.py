"""The full synthesizer: character encoder, emotion embedding, attention RNN
with context-vector feedback, residual two-layer decoder RNN, r-frame output
head, and the post-processing CBHG that maps mel frames to linear
spectrogram bins.

The attention RNN consumes the pre-net output concatenated with the previous
context vector and the emotion embedding; the first decoder RNN layer
receives the context concatenated with the emotion embedding.  Both
injections can be switched off (``feed_context``, ``inject_emotion_*``) to
reproduce the unmodified baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import dsp
from .attention import (MonotonicAttention, SoftAttention, initial_alignment,
                        monotonic_expected_alignment, monotonic_hard_step)
from .autodiff import SeedStream, Tensor
from .errors import ConfigError, ContractError, LabelError, VocabError
from .layers import CBHG, Dense, GRUCell, PreNet, uniform_init, zeros_row

EMOTIONS = ("neutral", "angry", "fear", "happy", "sad", "surprise")
MAX_TEXT_CHARS = 200
PAD_ID = 0


def emotion_id(label: str) -> int:
    try:
        return EMOTIONS.index(label)
    except ValueError:
        raise LabelError(f"unknown emotion {label!r}; valid labels: {', '.join(EMOTIONS)}") from None


@dataclass
class ModelConfig:
    vocab: str = "abcdefghij"
    char_embed_dim: int = 64
    encoder_prenet_dims: tuple = (64, 32)
    decoder_prenet_dims: tuple = (64, 32)
    encoder_cbhg_bank: int = 8
    encoder_cbhg_channels: int = 32
    encoder_highway_layers: int = 4
    encoder_dim: int = 32
    postnet_cbhg_bank: int = 4
    postnet_cbhg_channels: int = 16
    postnet_highway_layers: int = 2
    attention_dim: int = 64
    attention_rnn_dim: int = 64
    decoder_rnn_dim: int = 64
    decoder_layers: int = 2
    n_mels: int = 80
    linear_bins: int = 513
    r: int = 2
    n_emotions: int = 6
    emotion_embed_dim: int = 64
    emotion_dropout: float = 0.5
    attention_mode: str = "monotonic"
    attention_noise: float = 1.0
    max_decoder_steps: int = 200
    stop_threshold: float = 0.01
    stop_patience: int = 3
    inject_emotion_attn: bool = True
    inject_emotion_dec: bool = True
    feed_context: bool = True
    shared_emotion_embedding: bool = True
    cbhg_inner_residual: bool = True
    allow_nonpaper: bool = False

    def __post_init__(self):
        self.encoder_prenet_dims = tuple(self.encoder_prenet_dims)
        self.decoder_prenet_dims = tuple(self.decoder_prenet_dims)
        if self.r < 1:
            raise ConfigError("r must be >= 1")
        if not self.allow_nonpaper:
            pinned = {"n_emotions": (self.n_emotions, 6),
                      "emotion_embed_dim": (self.emotion_embed_dim, 64),
                      "emotion_dropout": (self.emotion_dropout, 0.5)}
            for name, (got, want) in pinned.items():
                if got != want:
                    raise ConfigError(
                        f"{name}={got} deviates from the pinned value {want}; "
                        "set allow_nonpaper to override")
        if self.decoder_layers != 2:
            raise ConfigError("decoder_layers is fixed at 2")
        if self.attention_mode not in ("soft", "monotonic"):
            raise ConfigError(f"attention_mode must be soft or monotonic, got "
                              f"{self.attention_mode!r}")
        if self.encoder_dim != self.encoder_prenet_dims[-1]:
            raise ConfigError("encoder_dim must equal the last encoder pre-net dim")
        if self.encoder_dim % 2 or self.n_mels % 2:
            raise ConfigError("encoder_dim and n_mels must be even (bi-GRU halves)")
        if not self.vocab or len(set(self.vocab)) != len(self.vocab):
            raise ConfigError("vocab must be a non-empty string of unique characters")
        if self.max_decoder_steps < 1 or self.stop_patience < 1:
            raise ConfigError("max_decoder_steps and stop_patience must be >= 1")

    @property
    def eos_id(self) -> int:
        return len(self.vocab) + 1

    @property
    def vocab_size(self) -> int:
        return len(self.vocab) + 2  # pad + characters + eos

    def text_to_ids(self, text: str) -> np.ndarray:
        if not text:
            raise ContractError("text must be non-empty")
        if len(text) > MAX_TEXT_CHARS:
            raise ContractError(
                f"text of {len(text)} characters exceeds the {MAX_TEXT_CHARS}-character cap")
        ids = np.empty(len(text) + 1, dtype=np.int64)
        for pos, ch in enumerate(text):
            idx = self.vocab.find(ch)
            if idx < 0:
                raise VocabError(f"character {ch!r} at position {pos} not in vocabulary")
            ids[pos] = idx + 1
        ids[-1] = self.eos_id
        return ids


@dataclass
class EncoderMemory:
    values: Tensor            # (enc_steps, encoder_dim)
    char_ids: np.ndarray

    @property
    def steps(self) -> int:
        return self.values.shape[0]


@dataclass
class DecodeResult:
    mel: Tensor               # (dec_steps * r, n_mels)
    alignment: np.ndarray     # (dec_steps, enc_steps)
    dec_steps: int
    truncated: bool = False


@dataclass
class SynthesisResult:
    waveform: dsp.Waveform
    mel: np.ndarray
    linear: np.ndarray
    alignment: np.ndarray
    dec_steps: int
    truncated: bool


class EmotionEmbedding:
    """One-hot emotion label -> dense projection, dropout while training."""

    def __init__(self, rng, n_emotions: int, dim: int, dropout: float):
        self.proj = Dense(rng, n_emotions, dim)
        self.dropout = dropout
        self.n_emotions = n_emotions

    def __call__(self, label_id: int, training: bool = False, seed=None) -> Tensor:
        if not 0 <= label_id < self.n_emotions:
            raise LabelError(f"emotion id {label_id} outside 0..{self.n_emotions - 1}; "
                             f"valid labels: {', '.join(EMOTIONS)}")
        onehot = np.zeros((1, self.n_emotions))
        onehot[0, label_id] = 1.0
        e = self.proj(Tensor(onehot))
        if training:
            e = ad.dropout(e, self.dropout, seed)
        return e

    def params(self, prefix: str):
        yield from self.proj.params(f"{prefix}.proj")


class TacotronModel:
    """Parameter set and step functions for the whole synthesizer.

    Construction order is fixed, so a seeded generator initializes the model
    deterministically.  One model instance belongs to one training run;
    inference on a frozen instance is pure and reusable.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.char_embedding = Tensor(
            uniform_init(rng, cfg.vocab_size, cfg.char_embed_dim,
                         (cfg.vocab_size, cfg.char_embed_dim)),
            requires_grad=True)
        self.encoder_prenet = PreNet(rng, cfg.char_embed_dim, cfg.encoder_prenet_dims)
        self.encoder_cbhg = CBHG(rng, cfg.encoder_dim, cfg.encoder_cbhg_bank,
                                 cfg.encoder_cbhg_channels, cfg.encoder_highway_layers,
                                 inner_residual=cfg.cbhg_inner_residual)

        self.emotion_attn = EmotionEmbedding(rng, cfg.n_emotions, cfg.emotion_embed_dim,
                                             cfg.emotion_dropout)
        self.emotion_dec = (self.emotion_attn if cfg.shared_emotion_embedding else
                            EmotionEmbedding(rng, cfg.n_emotions, cfg.emotion_embed_dim,
                                             cfg.emotion_dropout))

        attn_in = cfg.decoder_prenet_dims[-1]
        if cfg.feed_context:
            attn_in += cfg.encoder_dim
        if cfg.inject_emotion_attn:
            attn_in += cfg.emotion_embed_dim
        self.decoder_prenet = PreNet(rng, cfg.n_mels, cfg.decoder_prenet_dims)
        self.attn_input_proj = Dense(rng, attn_in, cfg.attention_rnn_dim)
        self.attn_gru = GRUCell(rng, cfg.attention_rnn_dim, cfg.attention_rnn_dim)

        if cfg.attention_mode == "soft":
            self.attention = SoftAttention(rng, cfg.attention_rnn_dim, cfg.encoder_dim,
                                           cfg.attention_dim)
        else:
            self.attention = MonotonicAttention(rng, cfg.attention_rnn_dim, cfg.encoder_dim,
                                                cfg.attention_dim,
                                                noise_scale=cfg.attention_noise)

        dec_in = cfg.encoder_dim
        if cfg.inject_emotion_dec:
            dec_in += cfg.emotion_embed_dim
        self.dec_input_proj = Dense(rng, dec_in, cfg.decoder_rnn_dim)
        self.dec_gru1 = GRUCell(rng, cfg.decoder_rnn_dim, cfg.decoder_rnn_dim)
        self.dec_gru2 = GRUCell(rng, cfg.decoder_rnn_dim, cfg.decoder_rnn_dim)
        self.frame_proj = Dense(rng, cfg.decoder_rnn_dim, cfg.r * cfg.n_mels)

        self.postnet_cbhg = CBHG(rng, cfg.n_mels, cfg.postnet_cbhg_bank,
                                 cfg.postnet_cbhg_channels, cfg.postnet_highway_layers,
                                 inner_residual=cfg.cbhg_inner_residual)
        self.linear_proj = Dense(rng, cfg.n_mels, cfg.linear_bins)

    # -- parameter registry ---------------------------------------------------

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = [("char_embedding", self.char_embedding)]
        out += list(self.encoder_prenet.params("encoder_prenet"))
        out += list(self.encoder_cbhg.params("encoder_cbhg"))
        out += list(self.emotion_attn.params("emotion_attn"))
        if self.emotion_dec is not self.emotion_attn:
            out += list(self.emotion_dec.params("emotion_dec"))
        out += list(self.decoder_prenet.params("decoder_prenet"))
        out += list(self.attn_input_proj.params("attn_input_proj"))
        out += list(self.attn_gru.params("attn_gru"))
        out += list(self.attention.params("attention"))
        out += list(self.dec_input_proj.params("dec_input_proj"))
        out += list(self.dec_gru1.params("dec_gru1"))
        out += list(self.dec_gru2.params("dec_gru2"))
        out += list(self.frame_proj.params("frame_proj"))
        out += list(self.postnet_cbhg.params("postnet_cbhg"))
        out += list(self.linear_proj.params("linear_proj"))
        return out

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.grad = None

    # -- forward pieces --------------------------------------------------------

    def embed_emotion(self, label, training: bool = False, seed=None) -> Tensor:
        label_id = emotion_id(label) if isinstance(label, str) else int(label)
        return self.emotion_attn(label_id, training=training, seed=seed)

    def encode_ids(self, char_ids: np.ndarray, training: bool = False, seeds=None) -> EncoderMemory:
        char_ids = np.asarray(char_ids, dtype=np.int64)
        embedded = ad.embedding_lookup(self.char_embedding, char_ids)
        hidden = self.encoder_prenet(embedded, training=training,
                                     seed=seeds.next() if training else None)
        return EncoderMemory(self.encoder_cbhg(hidden), char_ids)

    def encode_text(self, text: str, training: bool = False, seeds=None) -> EncoderMemory:
        return self.encode_ids(self.cfg.text_to_ids(text), training=training, seeds=seeds)

    def attention_rnn_step(self, prenet_out: Tensor, c_prev: Tensor, e: Tensor,
                           h_att_prev: Tensor) -> Tensor:
        parts = [prenet_out]
        if self.cfg.feed_context:
            parts.append(c_prev)
        if self.cfg.inject_emotion_attn:
            parts.append(e)
        u = ad.concat(parts, axis=-1) if len(parts) > 1 else parts[0]
        return self.attn_gru.step(self.attn_input_proj(u), h_att_prev)

    def decoder_rnn_step(self, c_t: Tensor, e: Tensor, h1_prev: Tensor, h2_prev: Tensor):
        if self.cfg.inject_emotion_dec:
            layer1_in = self.dec_input_proj(ad.concat([c_t, e], axis=-1))
        else:
            layer1_in = self.dec_input_proj(c_t)
        h1 = self.dec_gru1.step(layer1_in, h1_prev)
        out1 = layer1_in + h1
        h2 = self.dec_gru2.step(out1, h2_prev)
        return h1, h2, out1 + h2

    def frame_projection(self, h_top: Tensor) -> Tensor:
        return self.frame_proj(h_top).reshape(self.cfg.r, self.cfg.n_mels)

    def decode(self, memory: EncoderMemory, e_attn: Tensor, e_dec: Tensor,
               targets: np.ndarray | None = None, mode: str = "free",
               training: bool = False, seeds: SeedStream | None = None) -> DecodeResult:
        """Run the decoder loop.

        ``targets`` (frames, n_mels) are required in teacher/semi mode and
        must already be padded to a multiple of r.  In free mode decoding
        stops once ``stop_patience`` consecutive groups average below
        ``stop_threshold``, or is truncated at ``max_decoder_steps``.
        """
        cfg = self.cfg
        if mode not in ("teacher", "semi", "free"):
            raise ContractError(f"unknown decode mode {mode!r}")
        if mode != "free":
            if targets is None:
                raise ContractError(f"{mode} mode requires target frames")
            if targets.shape[0] % cfg.r or targets.ndim != 2 or targets.shape[1] != cfg.n_mels:
                raise ContractError(
                    f"targets {targets.shape} must be (multiple of r={cfg.r}, {cfg.n_mels})")
        monotonic = cfg.attention_mode == "monotonic"
        mem_proj = self.attention.project_memory(memory.values)

        h_att = zeros_row(cfg.attention_rnn_dim)
        c_prev = zeros_row(cfg.encoder_dim)
        h1 = zeros_row(cfg.decoder_rnn_dim)
        h2 = zeros_row(cfg.decoder_rnn_dim)
        alpha_prev = initial_alignment(memory.steps)
        hard_pos = 0
        input_frame = zeros_row(cfg.n_mels)  # GO frame
        n_groups = targets.shape[0] // cfg.r if targets is not None else cfg.max_decoder_steps

        frames_out: list[Tensor] = []
        align_rows: list[np.ndarray] = []
        quiet_groups = 0
        truncated = False
        step = 0
        while True:
            x = self.decoder_prenet(input_frame, training=training,
                                    seed=seeds.next() if training else None)
            h_att = self.attention_rnn_step(x, c_prev, e_attn, h_att)
            if not monotonic:
                alpha, context = self.attention.step(h_att, memory.values, mem_proj)
            elif mode != "free":
                probs = self.attention.select_probs(h_att, mem_proj, training=training,
                                                    seed=seeds.next() if training else None)
                alpha = monotonic_expected_alignment(probs, alpha_prev)
                alpha_prev = alpha
                context = alpha @ memory.values
            else:
                probs = self.attention.select_probs(h_att, mem_proj, training=False)
                hard_pos, row = monotonic_hard_step(probs.data[0], hard_pos)
                alpha = Tensor(row[None, :])
                context = alpha @ memory.values
            h1, h2, h_top = self.decoder_rnn_step(context, e_dec, h1, h2)
            frames = self.frame_projection(h_top)
            frames_out.append(frames)
            align_rows.append(alpha.data[0].copy())
            c_prev = context

            predicted_last = frames.data[-1:].copy()  # gradient stops here
            if mode == "teacher":
                next_input = targets[(step + 1) * cfg.r - 1:(step + 1) * cfg.r]
            elif mode == "semi":
                target_last = targets[(step + 1) * cfg.r - 1:(step + 1) * cfg.r]
                next_input = 0.5 * (target_last + predicted_last)
            else:
                next_input = predicted_last
            input_frame = Tensor(next_input)

            step += 1
            if mode != "free":
                if step >= n_groups:
                    break
            else:
                level = np.clip(frames.data, 0.0, 1.0).mean()
                quiet_groups = quiet_groups + 1 if level < cfg.stop_threshold else 0
                if quiet_groups >= cfg.stop_patience:
                    break
                if step >= cfg.max_decoder_steps:
                    truncated = True
                    break

        mel = ad.concat(frames_out, axis=0) if len(frames_out) > 1 else frames_out[0]
        return DecodeResult(mel, np.stack(align_rows), step, truncated)

    def postnet_linear(self, mel: Tensor) -> Tensor:
        return self.linear_proj(self.postnet_cbhg(mel))


def synthesize(model: TacotronModel, text: str, emotion: str,
               audio_cfg: dsp.AudioConfig) -> SynthesisResult:
    """Text + emotion label -> waveform, with every intermediate retained.

    Inference is deterministic: same text, emotion, and parameters give a
    bit-identical waveform.
    """
    memory = model.encode_text(text)
    e = model.embed_emotion(emotion)
    result = model.decode(memory, e, e, mode="free")
    linear = model.postnet_linear(result.mel)
    magnitudes = dsp.db_denorm(np.clip(linear.data, 0.0, 1.0), audio_cfg)
    wave, _ = dsp.griffin_lim(magnitudes, audio_cfg)
    wave = dsp.deemphasize(wave, audio_cfg.preemphasis)
    peak = np.abs(wave.samples).max()
    if peak > 1.0:
        wave = dsp.Waveform(wave.samples / peak, wave.sample_rate)
    return SynthesisResult(wave, result.mel.data, linear.data, result.alignment,
                           result.dec_steps, result.truncated)
