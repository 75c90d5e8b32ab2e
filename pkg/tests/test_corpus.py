import json

import numpy as np
import pytest

from emotts import corpus, dsp
from emotts.config import load_run_config
from emotts.errors import EmoTtsError, EmptyAudioError, FormatError, LabelError


def write_manifest(path, lines):
    path.write_text("\n".join(json.dumps(obj) for obj in lines) + "\n", encoding="utf-8")


def entry(i="u1", text="abc", emotion="sad", wav="u1.wav"):
    return {"id": i, "text": text, "emotion": emotion, "wav_path": wav}


class TestLoadManifest:
    def test_single_entry(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [entry()])
        entries = corpus.load_manifest(path)
        assert len(entries) == 1
        assert entries[0].text == "abc" and entries[0].emotion == "sad"

    def test_order_preserved(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [entry(i=f"u{k}") for k in range(5)])
        assert [e.id for e in corpus.load_manifest(path)] == [f"u{k}" for k in range(5)]

    def test_invalid_emotion_lists_labels(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [entry(emotion="bored")])
        with pytest.raises(LabelError, match="neutral.*surprise"):
            corpus.load_manifest(path)

    def test_text_cap_cited(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [entry(text="a" * 201)])
        with pytest.raises(FormatError, match="200"):
            corpus.load_manifest(path)

    def test_parse_error_carries_line_number(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(json.dumps(entry()) + "\n{broken\n", encoding="utf-8")
        with pytest.raises(FormatError, match=":2:"):
            corpus.load_manifest(path)

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [entry(), entry()])
        with pytest.raises(FormatError, match="duplicate"):
            corpus.load_manifest(path)

    def test_exact_field_set_required(self, tmp_path):
        path = tmp_path / "m.jsonl"
        bad = entry()
        bad["extra"] = 1
        write_manifest(path, [bad])
        with pytest.raises(FormatError, match="exactly"):
            corpus.load_manifest(path)


class TestSyntheticCorpus:
    def test_same_seed_byte_identical(self, tmp_path):
        spec = corpus.SyntheticSpec()
        m1 = corpus.generate_synthetic_corpus(4, spec, seed=7, out_dir=tmp_path / "a")
        m2 = corpus.generate_synthetic_corpus(4, spec, seed=7, out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "manifest.jsonl").read_bytes() == \
               (tmp_path / "b" / "manifest.jsonl").read_bytes()
        for k in range(4):
            assert (tmp_path / "a" / f"u{k:04d}.wav").read_bytes() == \
                   (tmp_path / "b" / f"u{k:04d}.wav").read_bytes()
        assert m1.endswith("manifest.jsonl") and m2.endswith("manifest.jsonl")

    def test_single_char_neutral_tone_bin(self):
        spec = corpus.SyntheticSpec()
        wave = corpus.render_utterance("a", "neutral", spec)
        assert len(wave) == 1600  # 100 ms at 16 kHz
        cfg = dsp.AudioConfig()
        mag, _ = dsp.stft(wave, cfg)
        dominant = int(np.bincount(mag.argmax(axis=1)).argmax())
        assert dominant == round(200 * cfg.n_fft / cfg.sample_rate) == 13

    def test_happy_pitch_ratio(self):
        spec = corpus.SyntheticSpec()
        cfg = dsp.AudioConfig()
        bin_hz = cfg.sample_rate / cfg.n_fft

        def dominant_hz(emotion):
            wave = corpus.render_utterance("a", emotion, spec)
            mag, _ = dsp.stft(wave, cfg)
            return np.bincount(mag.argmax(axis=1)).argmax() * bin_hz

        ratio = dominant_hz("happy") / dominant_hz("neutral")
        assert abs(ratio - 1.20) <= bin_hz / 200.0

    def test_emotions_cycle_and_share_block_text(self, tmp_path):
        corpus.generate_synthetic_corpus(8, corpus.SyntheticSpec(), seed=3,
                                         out_dir=tmp_path)
        entries = corpus.load_manifest(tmp_path / "manifest.jsonl")
        assert [e.emotion for e in entries] == list(corpus.EMOTIONS) + ["neutral", "angry"]
        texts = {e.text for e in entries[:6]}
        assert len(texts) == 1  # one script for the whole emotion block

    def test_duration_multiplier_applied(self):
        spec = corpus.SyntheticSpec()
        slow = corpus.render_utterance("ab", "sad", spec)
        fast = corpus.render_utterance("ab", "surprise", spec)
        assert len(slow) == 2 * round(0.1 * 1.15 * 16000)
        assert len(fast) == 2 * round(0.1 * 0.85 * 16000)

    def test_overlong_utterance_rejected(self):
        spec = corpus.SyntheticSpec(char_seconds=1.0)
        with pytest.raises(EmoTtsError, match="8.7"):
            corpus.render_utterance("abcdefghij", "sad", spec)

    def test_ground_truth_alignment_monotone(self):
        spec = corpus.SyntheticSpec()
        cfg = dsp.AudioConfig()
        align = corpus.ground_truth_alignment("abcd", "neutral", spec, cfg)
        assert align[0] == 0 and align[-1] == 3
        assert np.all(np.diff(align) >= 0)
        # 100 ms per char, 12.5 ms hop: 8 frames per character
        assert int((align == 1).sum()) == 8


def tiny_run_config(tmp_path=None):
    return load_run_config({
        "seed": 5,
        "audio": {"sample_rate": 16000, "win_length": 400, "hop_length": 100,
                  "n_fft": 512, "n_mels": 20},
        "model": {"char_embed_dim": 8, "encoder_prenet_dims": [8, 8],
                  "decoder_prenet_dims": [8, 8], "encoder_cbhg_bank": 2,
                  "encoder_cbhg_channels": 4, "encoder_highway_layers": 1,
                  "encoder_dim": 8, "postnet_cbhg_bank": 2, "postnet_cbhg_channels": 4,
                  "postnet_highway_layers": 1, "attention_dim": 8,
                  "attention_rnn_dim": 8, "decoder_rnn_dim": 8, "emotion_embed_dim": 8,
                  "allow_nonpaper": True, "r": 2},
    })


class TestPreprocess:
    def test_features_and_cache_round_trip(self, tmp_path):
        corpus.generate_synthetic_corpus(3, corpus.SyntheticSpec(), seed=1,
                                         out_dir=tmp_path)
        entries = corpus.load_manifest(tmp_path / "manifest.jsonl")
        cfg = tiny_run_config()
        cache = tmp_path / "features.cache"
        summary = corpus.preprocess_corpus(entries, cfg, cache, tmp_path)
        assert summary["kept"] == 3 and summary["skipped"] == 0
        records, meta = corpus.read_cache(cache)
        assert [r.id for r in records] == [e.id for e in entries]
        assert records[0].mel.shape[1] == 20
        assert records[0].linear.shape[1] == 257
        assert meta["audio"]["n_mels"] == 20
        assert np.all(records[0].mel >= 0) and np.all(records[0].mel <= 1)

    def test_trimming_shrinks_padded_fixture(self, tmp_path):
        spec = corpus.SyntheticSpec()
        tone = corpus.render_utterance("abc", "neutral", spec)
        padded = dsp.Waveform(
            np.concatenate([np.zeros(8000), tone.samples, np.zeros(8000)]), 16000)
        wav_dir = tmp_path
        dsp.wav_write(wav_dir / "padded.wav", padded)
        write_manifest(wav_dir / "m.jsonl",
                       [entry(i="p", text="abc", emotion="neutral", wav="padded.wav")])
        cfg = tiny_run_config()
        cache = tmp_path / "c.cache"
        corpus.preprocess_corpus(corpus.load_manifest(wav_dir / "m.jsonl"), cfg,
                                 cache, wav_dir)
        records, _ = corpus.read_cache(cache)
        untrimmed_frames = 1 + len(padded) // cfg.audio.hop_length
        assert records[0].mel.shape[0] < untrimmed_frames - 100

    def test_overlong_and_silent_entries_skipped(self, tmp_path, capsys):
        sr = 16000
        long_wave = dsp.Waveform(
            0.4 * np.sin(2 * np.pi * 220 * np.arange(int(9.0 * sr)) / sr), sr)
        dsp.wav_write(tmp_path / "long.wav", long_wave)
        dsp.wav_write(tmp_path / "quiet.wav", dsp.Waveform(np.zeros(sr), sr))
        good = corpus.render_utterance("ab", "neutral", corpus.SyntheticSpec())
        dsp.wav_write(tmp_path / "good.wav", good)
        write_manifest(tmp_path / "m.jsonl", [
            entry(i="long", text="abcj", emotion="neutral", wav="long.wav"),
            entry(i="quiet", text="ab", emotion="happy", wav="quiet.wav"),
            entry(i="good", text="ab", emotion="neutral", wav="good.wav"),
        ])
        cfg = tiny_run_config()
        cache = tmp_path / "c.cache"
        summary = corpus.preprocess_corpus(
            corpus.load_manifest(tmp_path / "m.jsonl"), cfg, cache, tmp_path)
        assert summary["kept"] == 1 and summary["skipped"] == 2
        assert any("8.7" in w for w in summary["warnings"])

    def test_zero_usable_entries_fatal(self, tmp_path):
        dsp.wav_write(tmp_path / "z.wav", dsp.Waveform(np.zeros(16000), 16000))
        write_manifest(tmp_path / "m.jsonl", [entry(i="z", wav="z.wav", text="ab")])
        cfg = tiny_run_config()
        with pytest.raises(EmoTtsError, match="zero usable"):
            corpus.preprocess_corpus(corpus.load_manifest(tmp_path / "m.jsonl"),
                                     cfg, tmp_path / "c.cache", tmp_path)

    def test_idempotent_byte_identical(self, tmp_path):
        corpus.generate_synthetic_corpus(2, corpus.SyntheticSpec(), seed=2,
                                         out_dir=tmp_path)
        entries = corpus.load_manifest(tmp_path / "manifest.jsonl")
        cfg = tiny_run_config()
        c1, c2 = tmp_path / "1.cache", tmp_path / "2.cache"
        corpus.preprocess_corpus(entries, cfg, c1, tmp_path)
        corpus.preprocess_corpus(entries, cfg, c2, tmp_path)
        assert c1.read_bytes() == c2.read_bytes()

    def test_all_silence_raises_empty_audio(self):
        with pytest.raises(EmptyAudioError):
            dsp.vad_trim(dsp.Waveform(np.zeros(16000), 16000))
