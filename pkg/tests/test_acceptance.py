"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criterion 7 trains the full modification set and an ablated baseline through
the real CLI (two parallel subprocesses, ~8-10 minutes on 4 cores); the
emotion-conditioning checks reuse those artifacts.  Run with ``-v -s`` to
watch the lines appear.
"""

import json
import struct
import subprocess
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from conftest import brute_force_alignment, module_grad_check, tiny_config, zero_params
from emotts import attention as attn
from emotts import autodiff as ad
from emotts import corpus, dsp, layers, training
from emotts.alignment import analyze, emit_csv, emit_pgm
from emotts.autodiff import Tensor
from emotts.config import load_run_config
from emotts.model import TacotronModel, synthesize
from emotts.training import (AdamState, TrainConfig, compute_loss, fit,
                             load_checkpoint, save_checkpoint, semi_teacher_input)


@contextmanager
def criterion(number: int, description: str):
    try:
        yield
    except BaseException:
        print(f"\n[acceptance] criterion {number} ({description}): FAIL")
        raise
    print(f"\n[acceptance] criterion {number} ({description}): PASS")


# -- criterion 7/8 training fixture -------------------------------------------

ACCEPTANCE_RUN = {
    "seed": 123,
    "audio": {"n_mels": 40},
    "model": {"char_embed_dim": 32, "encoder_prenet_dims": [32, 32],
              "decoder_prenet_dims": [32, 32], "encoder_cbhg_bank": 4,
              "encoder_cbhg_channels": 8, "encoder_highway_layers": 2,
              "encoder_dim": 32, "postnet_cbhg_bank": 2, "postnet_cbhg_channels": 8,
              "postnet_highway_layers": 1, "attention_dim": 32,
              "attention_rnn_dim": 32, "decoder_rnn_dim": 32,
              "attention_mode": "monotonic", "r": 2, "max_decoder_steps": 200},
    "train": {"mode": "semi", "batch_size": 4, "max_steps": 2000, "seed": 123,
              "log_every": 50},
}


def cli(*args):
    return subprocess.run([sys.executable, "-m", "emotts.cli", *args],
                          capture_output=True, text=True)


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    corpus_dir = root / "corpus"
    started = time.time()
    assert cli("gen-corpus", "--n", "8", "--seed", "11",
               "--out", str(corpus_dir)).returncode == 0

    baseline_run = json.loads(json.dumps(ACCEPTANCE_RUN))
    baseline_run["model"].update({"attention_mode": "soft",
                                  "inject_emotion_attn": False,
                                  "inject_emotion_dec": False,
                                  "feed_context": False})
    baseline_run["train"]["mode"] = "teacher"
    (root / "run.json").write_text(json.dumps(ACCEPTANCE_RUN))
    (root / "base.json").write_text(json.dumps(baseline_run))

    cache = root / "features.cache"
    assert cli("preprocess", "--manifest", str(corpus_dir / "manifest.jsonl"),
               "--config", str(root / "run.json"), "--cache", str(cache)).returncode == 0

    procs = [subprocess.Popen(
        [sys.executable, "-m", "emotts.cli", "train",
         "--config", str(root / config), "--cache", str(cache),
         "--ckpt-dir", str(root / ckpt_dir), "--mode", mode, "--attention", attention])
        for config, ckpt_dir, mode, attention in
        (("run.json", "ckpt_main", "semi", "monotonic"),
         ("base.json", "ckpt_base", "teacher", "soft"))]
    for proc in procs:
        assert proc.wait() == 0, "training subprocess failed"
    elapsed = time.time() - started

    main_model, _, _, _ = load_checkpoint(root / "ckpt_main" / "ckpt_002000.etts")
    base_model, _, _, _ = load_checkpoint(root / "ckpt_base" / "ckpt_002000.etts")
    records, _ = corpus.read_cache(cache)
    entries = corpus.load_manifest(corpus_dir / "manifest.jsonl")
    return {"root": root, "elapsed": elapsed, "records": records,
            "entries": entries, "main": main_model, "base": base_model,
            "audio": load_run_config(ACCEPTANCE_RUN).audio}


def padded_targets(record, r):
    frames = -(-record.mel.shape[0] // r) * r
    mel = np.zeros((frames, record.mel.shape[1]))
    mel[:record.mel.shape[0]] = record.mel
    return mel


def teacher_alignment(model, record):
    memory = model.encode_ids(record.char_ids)
    e = model.embed_emotion(record.emotion_id)
    return model.decode(memory, e, e, targets=padded_targets(record, model.cfg.r),
                        mode="teacher")


def dominant_hz(wave: dsp.Waveform, audio_cfg) -> float:
    mag, _ = dsp.stft(wave, audio_cfg)
    return float(mag.mean(axis=0).argmax()) * audio_cfg.sample_rate / audio_cfg.n_fft


# -- criteria -------------------------------------------------------------------


def test_criterion_1_gradient_integrity():
    with criterion(1, "gradient integrity"):
        started = time.time()
        worst = 0.0
        for seed in (0, 1, 2):
            rng = np.random.default_rng(100 + seed)
            x = Tensor(rng.normal(size=(4, 8)))

            cell = layers.GRUCell(rng, 8, 8)
            row = Tensor(rng.normal(size=(1, 8)))
            hidden = Tensor(rng.normal(size=(1, 8)))
            err, _ = module_grad_check(cell, lambda: cell.step(row, hidden).sum())
            worst = max(worst, err)

            highway = layers.Highway(rng, 8)
            err, _ = module_grad_check(highway, lambda: highway(x).tanh().sum())
            worst = max(worst, err)

            bank = layers.Conv1dBank(rng, 8, 2, 4)
            err, _ = module_grad_check(bank, lambda: ad.maxpool1d(bank(x), 2).tanh().sum())
            worst = max(worst, err)

            cbhg = layers.CBHG(rng, 8, 2, 4, 2)
            err, _ = module_grad_check(cbhg, lambda: cbhg(x).tanh().mean(), sample=20,
                                       seed=seed)
            worst = max(worst, err)

            # full model: 4-character text, 6 target frames, both losses
            model = TacotronModel(tiny_config(), seed=seed)
            jitter = np.random.default_rng(400 + seed)
            for _, p in model.parameters():
                # zero-init biases put relu pre-activations of the all-zero GO
                # frame exactly on the kink; move off it (kink resampling)
                p.data = p.data + jitter.uniform(0.02, 0.1, p.data.shape) * \
                    np.where(jitter.random(p.data.shape) < 0.5, -1.0, 1.0)
            ids = model.cfg.text_to_ids("abcd")
            mel_target = np.random.default_rng(200 + seed).uniform(0, 1, (6, 6))
            lin_target = np.random.default_rng(300 + seed).uniform(0, 1, (6, 9))

            def full_loss():
                memory = model.encode_ids(ids)
                e = model.embed_emotion("happy")
                decoded = model.decode(memory, e, e, targets=mel_target, mode="teacher")
                linear = model.postnet_linear(decoded.mel)
                return compute_loss(decoded.mel, mel_target, linear, lin_target)

            err, name = module_grad_check(model, full_loss, params=model.parameters(),
                                          sample=4, seed=seed)
            assert err <= 1e-4, f"full model, parameter {name}: {err}"
            worst = max(worst, err)
        elapsed = time.time() - started
        print(f"max relative error {worst:.3e} in {elapsed:.1f}s")
        assert worst <= 1e-4
        assert elapsed < 60.0


def test_criterion_2_monotonic_oracle():
    with criterion(2, "monotonic attention matches path enumeration"):
        started = time.time()
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            for steps in range(1, 5):
                for n in range(1, 6):
                    p = rng.uniform(0, 1, size=(steps, n))
                    prev = attn.initial_alignment(n)
                    rows = []
                    for i in range(steps):
                        prev = attn.monotonic_expected_alignment(Tensor(p[i:i + 1]), prev)
                        rows.append(prev.data[0])
                    worst = max(worst, np.abs(np.stack(rows) - brute_force_alignment(p)).max())
        elapsed = time.time() - started
        assert worst <= 1e-10
        assert elapsed < 5.0


def test_criterion_3_attention_contracts():
    with criterion(3, "attention row-sum and monotonicity contracts"):
        rng = np.random.default_rng(33)
        soft = attn.SoftAttention(rng, 8, 8, 8)
        for _ in range(1000):
            memory = Tensor(rng.normal(size=(int(rng.integers(1, 12)), 8)) * 2)
            alpha, _ = soft.step(Tensor(rng.normal(size=(1, 8)) * 2), memory,
                                 soft.project_memory(memory))
            assert abs(alpha.data.sum() - 1.0) <= 1e-6

        for _ in range(1000):
            n = int(rng.integers(1, 12))
            prev = attn.initial_alignment(n)
            for _ in range(int(rng.integers(1, 5))):
                prev = attn.monotonic_expected_alignment(
                    Tensor(rng.uniform(0, 1, (1, n))), prev)
                assert prev.data.sum() <= 1 + 1e-6
                assert np.all(prev.data >= 0)

        for _ in range(1000):
            n = int(rng.integers(1, 12))
            pos = 0
            for _ in range(6):
                new_pos, _ = attn.monotonic_hard_step(rng.uniform(0, 1, n), pos)
                assert new_pos >= pos
                pos = new_pos


def test_criterion_4_bigru_residual_identity():
    with criterion(4, "zero-parameter bi-GRU residual is the identity"):
        rng = np.random.default_rng(4)
        block = layers.BiGruResidual(rng, 8)
        zero_params(block)
        x = Tensor(rng.normal(size=(7, 8)))
        assert np.abs(block(x).data - x.data).max() <= 1e-12

        net = layers.CBHG(rng, 8, 2, 4, 2)
        zero_params(net.bigru)
        y = Tensor(rng.normal(size=(5, 8)))
        staged = net.proj2(net.proj1(ad.maxpool1d(net.bank(y), 2))) + y
        for highway in net.highways:
            staged = highway(staged)
        assert np.abs(net(y).data - staged.data).max() <= 1e-12


def test_criterion_5_semi_teacher_semantics():
    with criterion(5, "semi-teacher-forced input semantics"):
        rng = np.random.default_rng(5)
        y, yhat = rng.normal(size=(2, 30, 6))
        assert np.array_equal(semi_teacher_input(y, yhat), (y + yhat) / 2.0)

        cfg = tiny_config()
        records = []
        from conftest import FakeRecord
        for i in range(2):
            records.append(FakeRecord(char_ids=cfg.text_to_ids("abc"),
                                      emotion_id=i,
                                      mel=np.zeros((8, cfg.n_mels)),
                                      linear=np.zeros((8, cfg.linear_bins))))
        losses = {}
        for mode in ("teacher", "semi"):
            model = TacotronModel(cfg, seed=5)
            for _, p in model.frame_proj.params("fp"):
                p.data = np.zeros_like(p.data)
            opt = AdamState(model.parameters())
            batch = training.pad_batch(records, cfg.r, cfg.n_mels)
            losses[mode], _ = training.train_step(
                model, batch, TrainConfig(mode=mode, lr=0.0, seed=55), opt, 1)
        assert abs(losses["teacher"] - losses["semi"]) <= 1e-12


def test_criterion_6_dsp_round_trips():
    with criterion(6, "STFT round trip and Griffin-Lim convergence"):
        started = time.time()
        cfg = dsp.AudioConfig()
        for seed in range(20):
            x = np.random.default_rng(seed).normal(size=16000) * 0.2
            mag, phase = dsp.stft(dsp.Waveform(x, 16000), cfg)
            y = dsp.istft(mag, phase, cfg, length=len(x)).samples
            snr = 10 * np.log10(np.sum(x ** 2) / np.sum((x - y) ** 2))
            assert snr >= 60.0

        t = np.arange(16000) / 16000
        tone3 = 0.3 * (np.sin(2 * np.pi * 220 * t) + np.sin(2 * np.pi * 440 * t)
                       + np.sin(2 * np.pi * 880 * t))
        mag, _ = dsp.stft(dsp.Waveform(tone3, 16000), dsp.AudioConfig(gl_iters=30))
        _, sc = dsp.griffin_lim(mag, dsp.AudioConfig(gl_iters=30))
        assert np.all(np.diff(sc) <= 1e-6)
        assert sc[-1] < 0.15
        elapsed = time.time() - started
        assert elapsed < 30.0


def test_criterion_7_end_to_end_reproduction(trained):
    with criterion(7, "end-to-end training reproduces the qualitative claims"):
        main, base = trained["main"], trained["base"]
        records = trained["records"]

        # (a) teacher-forced mel L1 on the training corpus
        total_err = 0.0
        total_count = 0
        for record in records:
            targets = padded_targets(record, main.cfg.r)
            decoded = teacher_alignment(main, record)
            total_err += np.abs(decoded.mel.data - targets).sum()
            total_count += targets.size
        mel_l1 = total_err / total_count
        print(f"teacher-forced mel L1: {mel_l1:.4f}")
        assert mel_l1 < 0.08

        # (b) clean, gap-free, diagonal teacher-forced alignments
        reports = [analyze(teacher_alignment(main, record).alignment)
                   for record in records]
        diagonalities = [r.diagonality for r in reports]
        print("diagonality per utterance:", [f"{d:.2f}" for d in diagonalities])
        assert sum(r.gap_count for r in reports) == 0
        assert min(diagonalities) >= 0.6

        # (c) free-running synthesis stops via the silence criterion
        entry = trained["entries"][0]
        result = synthesize(main, entry.text, entry.emotion, trained["audio"])
        print(f"free decode: {result.dec_steps} steps, truncated={result.truncated}")
        assert not result.truncated
        assert result.dec_steps < main.cfg.max_decoder_steps

        # (d) the ablated soft/teacher baseline decodes the long input worse
        probe_text = (entry.text * 12)[:12]
        main_free = main.decode(main.encode_text(probe_text),
                                main.embed_emotion("neutral"),
                                main.embed_emotion("neutral"), mode="free")
        base_free = base.decode(base.encode_text(probe_text),
                                base.embed_emotion("neutral"),
                                base.embed_emotion("neutral"), mode="free")
        main_report = analyze(main_free.alignment)
        base_report = analyze(base_free.alignment)
        print(f"12-char free decode: improved diagonality {main_report.diagonality:.3f} "
              f"gaps {main_report.gap_count}; baseline diagonality "
              f"{base_report.diagonality:.3f} gaps {base_report.gap_count}")
        assert (base_report.diagonality < main_report.diagonality
                or base_report.gap_count > 0)

        print(f"criterion-7 wall time {trained['elapsed'] / 60:.1f} min")
        assert trained["elapsed"] <= 15 * 60


def test_criterion_8_emotion_conditioning(trained):
    with criterion(8, "emotion conditioning shapes the output"):
        main = trained["main"]
        audio = trained["audio"]
        text = trained["entries"][0].text

        outputs = {emotion: synthesize(main, text, emotion, audio)
                   for emotion in ("sad", "neutral", "happy")}
        diff = np.abs(outputs["neutral"].mel.mean(axis=0)
                      - outputs["happy"].mel.mean(axis=0)).mean()
        mel_pair_diff = np.abs(
            np.mean(outputs["neutral"].mel) - np.mean(outputs["happy"].mel))
        per_emotion = {name: dominant_hz(result.waveform, audio)
                       for name, result in outputs.items()}
        print(f"dominant Hz: {per_emotion}; neutral-vs-happy mel diff {diff:.4f}")
        assert max(diff, mel_pair_diff) > 0.01

        ordering_hits = sum([
            per_emotion["sad"] < per_emotion["neutral"],
            per_emotion["neutral"] < per_emotion["happy"],
            per_emotion["sad"] < per_emotion["happy"],
        ])
        assert ordering_hits >= 2


def test_criterion_9_determinism_and_persistence(tmp_path):
    with criterion(9, "determinism and persistence"):
        # fixed-seed training twice -> identical loss logs
        import io
        cfg = tiny_config()
        logs = []
        for _ in range(2):
            rng = np.random.default_rng(9)
            records = []
            from conftest import FakeRecord
            for i in range(3):
                records.append(FakeRecord(
                    char_ids=cfg.text_to_ids("abcd"),
                    emotion_id=i,
                    mel=rng.uniform(0, 1, (10, cfg.n_mels)),
                    linear=rng.uniform(0, 1, (10, cfg.linear_bins))))
            model = TacotronModel(cfg, seed=99)
            opt = AdamState(model.parameters())
            log = io.StringIO()
            fit(model, records, TrainConfig(batch_size=2, max_steps=30, seed=7,
                                            log_every=5), opt, log_file=log)
            logs.append(log.getvalue())
        assert logs[0] == logs[1] and logs[0]

        # checkpoint round trip -> bit-identical forward pass
        path = tmp_path / "model.etts"
        save_checkpoint(path, model, opt, step=30)
        restored, _, _, _ = load_checkpoint(path)
        memory_a = model.encode_text("abcd")
        memory_b = restored.encode_text("abcd")
        e_a = model.embed_emotion("fear")
        e_b = restored.embed_emotion("fear")
        out_a = model.decode(memory_a, e_a, e_a, mode="free")
        out_b = restored.decode(memory_b, e_b, e_b, mode="free")
        assert np.array_equal(out_a.mel.data, out_b.mel.data)

        # golden byte fixtures for every emitter
        pgm_path = tmp_path / "g.pgm"
        emit_pgm(np.array([[1.0, 0.0], [0.0, 1.0]]), pgm_path)
        assert pgm_path.read_bytes() == b"P5\n2 2\n255\n" + bytes([255, 0, 0, 255])

        csv_path = tmp_path / "g.csv"
        emit_csv(np.array([[0.5, 0.25]]), csv_path)
        assert csv_path.read_bytes() == b"0.500000000,0.250000000\n"

        wav_path = tmp_path / "g.wav"
        dsp.wav_write(wav_path, dsp.Waveform(np.array([0.0, 0.5, -0.5, -1.0]), 8000))
        golden = (b"RIFF" + struct.pack("<I", 44) + b"WAVE"
                  + b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 8000, 16000, 2, 16)
                  + b"data" + struct.pack("<I", 8)
                  + struct.pack("<4h", 0, 16384, -16384, -32768))
        assert wav_path.read_bytes() == golden
