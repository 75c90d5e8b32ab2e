"""Audio front end and back end.

Pre-emphasis, Hann-window STFT/ISTFT with reflect padding, HTK-scale mel
filterbank, dB normalization, energy-based silence trimming, Griffin-Lim
phase reconstruction with a spectral-convergence trace, and 16-bit PCM WAV
I/O.  All operations are pure functions of their inputs and safe to call
concurrently.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, ContractError, DimensionError, EmptyAudioError, FormatError


@dataclass
class AudioConfig:
    sample_rate: int = 16000
    win_length: int = 800       # 50 ms
    hop_length: int = 200       # 12.5 ms
    n_fft: int = 1024
    n_mels: int = 80
    preemphasis: float = 0.97
    ref_level_db: float = 20.0
    min_level_db: float = -100.0
    gl_power: float = 1.2
    gl_iters: int = 30

    def __post_init__(self):
        if not (self.hop_length <= self.win_length <= self.n_fft):
            raise ConfigError(
                f"need hop <= win <= n_fft, got {self.hop_length}/{self.win_length}/{self.n_fft}")
        if self.n_mels >= self.n_fft // 2 + 1:
            raise ConfigError(f"n_mels {self.n_mels} too large for {self.bins} bins")
        if not (0.0 <= self.preemphasis < 1.0):
            raise ConfigError(f"preemphasis {self.preemphasis} outside [0, 1)")
        if self.min_level_db >= 0:
            raise ConfigError("min_level_db must be negative")
        if self.gl_iters < 0:
            raise ConfigError("gl_iters must be >= 0")

    @property
    def bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)

    def __len__(self):
        return len(self.samples)

    @property
    def seconds(self) -> float:
        return len(self.samples) / self.sample_rate


def preemphasize(w: Waveform, coeff: float) -> Waveform:
    """out[0] = w[0]; out[t] = w[t] - coeff * w[t-1]."""
    if len(w) == 0:
        raise ContractError("preemphasize: empty waveform")
    if not (0.0 <= coeff < 1.0):
        raise ContractError(f"preemphasize: coeff {coeff} outside [0, 1)")
    return Waveform(lfilter([1.0, -coeff], [1.0], w.samples), w.sample_rate)


def deemphasize(w: Waveform, coeff: float) -> Waveform:
    """Exact running-sum inverse of :func:`preemphasize`."""
    if len(w) == 0:
        raise ContractError("deemphasize: empty waveform")
    return Waveform(lfilter([1.0], [1.0, -coeff], w.samples), w.sample_rate)


def _hann(n: int) -> np.ndarray:
    # periodic Hann, standard for overlap-add analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _frame_signal(samples: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    """Slice an (already padded) signal into overlapping frames."""
    n_frames = 1 + (len(samples) - cfg.win_length) // cfg.hop_length
    idx = np.arange(cfg.win_length)[None, :] + cfg.hop_length * np.arange(n_frames)[:, None]
    return samples[idx]


def _signal_to_spectra(samples: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    frames = _frame_signal(samples, cfg) * _hann(cfg.win_length)
    return np.fft.rfft(frames, n=cfg.n_fft, axis=1)


def _spectra_to_signal(spectra: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    """Least-squares inverse: windowed overlap-add / summed squared window."""
    frames = np.fft.irfft(spectra, n=cfg.n_fft, axis=1)[:, :cfg.win_length]
    window = _hann(cfg.win_length)
    frames = frames * window
    n_frames = spectra.shape[0]
    length = cfg.win_length + (n_frames - 1) * cfg.hop_length
    out = np.zeros(length)
    norm = np.zeros(length)
    wsq = window * window
    for i in range(n_frames):
        start = i * cfg.hop_length
        out[start:start + cfg.win_length] += frames[i]
        norm[start:start + cfg.win_length] += wsq
    return out / np.maximum(norm, 1e-10)


def _pad_amounts(n_samples: int, cfg: AudioConfig) -> tuple[int, int, int]:
    """(left pad, right pad, frame count) so frames cover every sample."""
    n_frames = 1 + n_samples // cfg.hop_length
    span = cfg.win_length + (n_frames - 1) * cfg.hop_length
    left = cfg.win_length // 2
    right = max(0, span - n_samples - left)
    return left, right, n_frames


def stft(w: Waveform, cfg: AudioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude and phase, each (frames, n_fft//2 + 1), reflect-padded analysis."""
    if len(w) < cfg.win_length:
        raise ContractError(
            f"stft: signal of {len(w)} samples shorter than win_length {cfg.win_length}")
    left, right, _ = _pad_amounts(len(w), cfg)
    padded = np.pad(w.samples, (left, right), mode="reflect")
    spectra = _signal_to_spectra(padded, cfg)
    return np.abs(spectra), np.angle(spectra)


def istft(mag: np.ndarray, phase: np.ndarray, cfg: AudioConfig,
          length: int | None = None) -> Waveform:
    """Overlap-add inverse of :func:`stft`.

    Without ``length`` the output has the canonical (frames - 1) * hop
    samples; pass the original sample count to recover it exactly.
    """
    if mag.shape != phase.shape or mag.ndim != 2 or mag.shape[1] != cfg.bins:
        raise DimensionError(f"istft: mag {mag.shape} phase {phase.shape}, bins {cfg.bins}")
    signal = _spectra_to_signal(mag * np.exp(1j * phase), cfg)
    n_samples = (mag.shape[0] - 1) * cfg.hop_length if length is None else length
    left = cfg.win_length // 2
    out = signal[left:left + n_samples]
    if len(out) < n_samples:
        out = np.pad(out, (0, n_samples - len(out)))
    return Waveform(out, cfg.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(cfg: AudioConfig) -> np.ndarray:
    """(n_mels, bins) triangular filters with edges uniform on the mel scale."""
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2), cfg.n_mels + 2))
    bin_hz = np.linspace(0.0, cfg.sample_rate / 2, cfg.bins)
    bank = np.zeros((cfg.n_mels, cfg.bins))
    for m in range(cfg.n_mels):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (bin_hz - lo) / max(center - lo, 1e-12)
        down = (hi - bin_hz) / max(hi - center, 1e-12)
        bank[m] = np.maximum(0.0, np.minimum(up, down))
    if (bank.sum(axis=1) <= 0).any():
        raise ConfigError(
            f"mel_filterbank: {cfg.n_mels} filters collapse below FFT resolution")
    return bank


def amp_to_db_norm(mag: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    """Magnitudes -> dB relative to ref_level_db -> clipped [0, 1] range."""
    db = 20.0 * np.log10(np.maximum(1e-5, mag)) - cfg.ref_level_db
    return np.clip((db - cfg.min_level_db) / (-cfg.min_level_db), 0.0, 1.0)


def db_denorm(values: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    """Inverse of :func:`amp_to_db_norm` on the non-clipped band."""
    db = np.clip(values, 0.0, 1.0) * (-cfg.min_level_db) + cfg.min_level_db
    return 10.0 ** ((db + cfg.ref_level_db) / 20.0)


def griffin_lim(mag: np.ndarray, cfg: AudioConfig) -> tuple[Waveform, np.ndarray]:
    """Phase reconstruction by alternating projections.

    Magnitudes are sharpened by ``gl_power`` first; phase starts at zero for
    determinism.  Returns the waveform and the per-iteration spectral
    convergence ``||,|STFT(w_k)| - target||_F / ||target||_F`` (0th entry is
    the zero-phase starting point; all-zero targets report 0 by convention).
    """
    if mag.ndim != 2 or mag.shape[1] != cfg.bins:
        raise DimensionError(f"griffin_lim: magnitudes {mag.shape}, expected (*, {cfg.bins})")
    if (mag < 0).any():
        raise ContractError("griffin_lim: negative magnitudes")
    target = mag ** cfg.gl_power
    target_norm = np.linalg.norm(target)
    spectra = target.astype(np.complex128)  # zero phase
    sc = np.zeros(cfg.gl_iters + 1)
    signal = _spectra_to_signal(spectra, cfg)
    for k in range(cfg.gl_iters + 1):
        reproj = _signal_to_spectra(_pad_signal_for_frames(signal, target.shape[0], cfg), cfg)
        sc[k] = np.linalg.norm(np.abs(reproj) - target) / target_norm if target_norm > 0 else 0.0
        if k == cfg.gl_iters:
            break
        spectra = target * np.exp(1j * np.angle(reproj))
        signal = _spectra_to_signal(spectra, cfg)
    n_samples = (target.shape[0] - 1) * cfg.hop_length
    left = cfg.win_length // 2
    return Waveform(signal[left:left + n_samples], cfg.sample_rate), sc


def _pad_signal_for_frames(signal: np.ndarray, n_frames: int, cfg: AudioConfig) -> np.ndarray:
    # overlap-add output already spans every frame; guard length drift
    span = cfg.win_length + (n_frames - 1) * cfg.hop_length
    if len(signal) < span:
        signal = np.pad(signal, (0, span - len(signal)))
    return signal[:span]


def vad_trim(w: Waveform, frame_ms: float = 30.0, threshold_db: float = -40.0,
             pad_frames: int = 2) -> Waveform:
    """Trim leading/trailing frames quieter than peak RMS + threshold_db."""
    if frame_ms <= 0:
        raise ContractError("vad_trim: frame_ms must be positive")
    frame_len = max(1, int(round(w.sample_rate * frame_ms / 1000.0)))
    n_frames = max(1, int(np.ceil(len(w) / frame_len)))
    rms_db = np.full(n_frames, -np.inf)
    for i in range(n_frames):
        chunk = w.samples[i * frame_len:(i + 1) * frame_len]
        rms = np.sqrt(np.mean(chunk * chunk))
        if rms > 0:
            rms_db[i] = 20.0 * np.log10(rms)
    peak = rms_db.max()
    active = np.flatnonzero(rms_db > peak + threshold_db)
    if peak == -np.inf or active.size == 0:
        raise EmptyAudioError("vad_trim: no frames above threshold")
    start = max(0, (active[0] - pad_frames)) * frame_len
    stop = min(len(w), (active[-1] + 1 + pad_frames) * frame_len)
    return Waveform(w.samples[start:stop].copy(), w.sample_rate)


# -- WAV I/O (RIFF PCM16 mono little-endian) ----------------------------------


def wav_read(path) -> Waveform:
    """Read a PCM 16-bit RIFF/WAVE file; multi-channel input is averaged to mono."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[0:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file (header {blob[0:4]!r} {blob[8:12]!r})")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        chunk_id = blob[pos:pos + 4]
        chunk_size = struct.unpack("<I", blob[pos + 4:pos + 8])[0]
        body = blob[pos + 8:pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise FormatError(f"{path}: truncated fmt chunk ({len(body)} bytes)")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)
    if fmt is None or data is None:
        raise FormatError(f"{path}: missing {'fmt' if fmt is None else 'data'} chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1 or bits != 16:
        raise FormatError(f"{path}: unsupported codec (format {audio_format}, {bits}-bit); "
                          "need PCM 16-bit")
    raw = np.frombuffer(data[:len(data) - len(data) % (2 * channels)], dtype="<i2")
    if channels > 1:
        warnings.warn(f"{path}: averaging {channels} channels to mono")
        raw = raw.reshape(-1, channels).mean(axis=1)
    samples = np.asarray(raw, dtype=np.float64) / 32768.0
    return Waveform(samples, sample_rate)


def wav_write(path, w: Waveform) -> None:
    """Write PCM 16-bit mono with the canonical 44-byte header."""
    clipped = np.clip(w.samples, -1.0, 32767.0 / 32768.0)
    scaled = clipped * 32768.0
    quantized = (np.copysign(np.floor(np.abs(scaled) + 0.5), scaled)).astype("<i2")
    payload = quantized.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, w.sample_rate,
                                    w.sample_rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(payload))
    with open(path, "wb") as f:
        f.write(header + payload)
