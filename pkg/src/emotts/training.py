"""Training harness: unmasked L1 loss on mel + linear targets, Adam with
global-norm gradient clipping, a step-decayed learning rate, the
semi-teacher-forced batch loop, and binary checkpoints.

Padding frames participate in the loss on purpose: the decoder learns to
emit the trailing silence it will need to stop at synthesis time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .alignment import analyze
from .autodiff import SeedStream, Tape, Tensor
from .errors import CheckpointError, ConfigError, ContractError, DimensionError, NumericError
from .model import PAD_ID, ModelConfig, TacotronModel

CHECKPOINT_MAGIC = b"ETTS1\n"


@dataclass
class TrainConfig:
    mode: str = "semi"                       # teacher | semi | free-eval
    lr: float = 1e-3
    lr_decay_steps: tuple = (1000, 3000)     # halve at each threshold
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_norm: float = 1.0
    batch_size: int = 4
    max_steps: int = 2000
    seed: int = 0
    w_mel: float = 0.5
    w_lin: float = 0.5
    log_every: int = 50

    def __post_init__(self):
        self.lr_decay_steps = tuple(self.lr_decay_steps)
        if self.mode not in ("teacher", "semi", "free-eval"):
            raise ConfigError(f"mode must be teacher, semi, or free-eval, got {self.mode!r}")
        if self.w_mel < 0 or self.w_lin < 0 or self.w_mel + self.w_lin <= 0:
            raise ConfigError("loss weights must be non-negative with a positive sum")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def learning_rate(cfg: TrainConfig, step: int) -> float:
    halvings = sum(1 for threshold in cfg.lr_decay_steps if step >= threshold)
    return cfg.lr * (0.5 ** halvings)


def semi_teacher_input(y_prev: np.ndarray, yhat_prev: np.ndarray) -> np.ndarray:
    """Decoder input for semi-teacher-forced training: 0.5 * (y + yhat), exactly."""
    if y_prev.shape != yhat_prev.shape:
        raise DimensionError(f"semi_teacher_input: {y_prev.shape} vs {yhat_prev.shape}")
    return 0.5 * (y_prev + yhat_prev)


def _l1(pred: Tensor, target: np.ndarray) -> Tensor:
    if pred.shape != target.shape:
        raise DimensionError(f"loss: prediction {pred.shape} vs target {target.shape}")
    return (pred - Tensor(target)).abs().mean()


def compute_loss(pred_mel: Tensor, target_mel: np.ndarray, pred_lin: Tensor,
                 target_lin: np.ndarray, w_mel: float = 0.5, w_lin: float = 0.5) -> Tensor:
    """w_mel * mean|mel error| + w_lin * mean|linear error| over ALL frames,
    padding included (no masking)."""
    return w_mel * _l1(pred_mel, target_mel) + w_lin * _l1(pred_lin, target_lin)


class AdamState:
    """First/second moment arrays mirroring the parameter registry."""

    def __init__(self, params):
        self.m = {name: np.zeros_like(p.data) for name, p in params}
        self.v = {name: np.zeros_like(p.data) for name, p in params}
        self.step = 0


def adam_step(params, opt: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, grad_clip_norm: float = 1.0) -> None:
    """One Adam update with bias correction after global-norm gradient clipping."""
    grads = []
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name!r} at optimizer step {opt.step}")
        grads.append((name, p, g))
    total = np.sqrt(sum(float((g * g).sum()) for _, _, g in grads))
    scale = grad_clip_norm / total if grad_clip_norm and total > grad_clip_norm else 1.0
    opt.step += 1
    bc1 = 1.0 - beta1 ** opt.step
    bc2 = 1.0 - beta2 ** opt.step
    for name, p, g in grads:
        g = g * scale
        m = opt.m[name] = beta1 * opt.m[name] + (1.0 - beta1) * g
        v = opt.v[name] = beta2 * opt.v[name] + (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def pad_batch(items, r: int, n_mels: int):
    """Pad texts with the pad id and features with silence frames to batch max.

    Frame counts are rounded up to a multiple of r; the padded silence value
    is 0.0, the normalized level of digital silence.
    """
    max_chars = max(len(item.char_ids) for item in items)
    max_frames = max(item.mel.shape[0] for item in items)
    max_frames = -(-max_frames // r) * r
    padded = []
    for item in items:
        ids = np.full(max_chars, PAD_ID, dtype=np.int64)
        ids[:len(item.char_ids)] = item.char_ids
        mel = np.zeros((max_frames, n_mels))
        mel[:item.mel.shape[0]] = item.mel
        lin = np.zeros((max_frames, item.linear.shape[1]))
        lin[:item.linear.shape[0]] = item.linear
        padded.append((ids, int(item.emotion_id), mel, lin))
    return padded


def train_step(model: TacotronModel, batch, cfg: TrainConfig, opt: AdamState,
               step: int):
    """One optimization step over a padded batch.

    Returns (loss value, first sample's alignment matrix).  Parameters are
    touched only through :func:`adam_step`.
    """
    if not batch:
        raise ContractError("train_step: empty batch")
    if cfg.mode not in ("teacher", "semi"):
        raise ContractError(f"train_step: mode {cfg.mode!r} does not update parameters")
    first_alignment = None
    with Tape() as tape:
        total = None
        for index, (char_ids, emotion, mel_target, lin_target) in enumerate(batch):
            seeds = SeedStream(cfg.seed, step, index)
            memory = model.encode_ids(char_ids, training=True, seeds=seeds)
            e = model.embed_emotion(emotion, training=True, seed=seeds.next())
            decoded = model.decode(memory, e, e, targets=mel_target, mode=cfg.mode,
                                   training=True, seeds=seeds)
            linear = model.postnet_linear(decoded.mel)
            loss = compute_loss(decoded.mel, mel_target, linear, lin_target,
                                cfg.w_mel, cfg.w_lin)
            total = loss if total is None else total + loss
            if index == 0:
                first_alignment = decoded.alignment
        total = (1.0 / len(batch)) * total
        ad.backward(tape, total)
    adam_step(model.parameters(), opt, learning_rate(cfg, step),
              cfg.beta1, cfg.beta2, cfg.eps, cfg.grad_clip_norm)
    model.zero_grad()
    return total.item(), first_alignment


def fit(model: TacotronModel, records, cfg: TrainConfig, opt: AdamState,
        start_step: int = 0, log_file=None, on_step=None) -> tuple[int, float]:
    """Run the training loop from ``start_step`` to ``cfg.max_steps``.

    ``records`` are cache records (char_ids, emotion_id, mel, linear).
    Appends ``step,loss,lr,sharpness,diagonality`` lines every ``log_every``
    steps.  Returns (final step, last loss).
    """
    if not records:
        raise ContractError("fit: no training records")
    last_loss = float("nan")
    step = start_step
    for step in range(start_step + 1, cfg.max_steps + 1):
        rng = np.random.default_rng([cfg.seed, step, 0xBA7C4])
        take = min(cfg.batch_size, len(records))
        chosen = rng.choice(len(records), size=take, replace=len(records) < cfg.batch_size)
        batch = pad_batch([records[i] for i in chosen], model.cfg.r, model.cfg.n_mels)
        last_loss, alignment = train_step(model, batch, cfg, opt, step)
        if log_file is not None and (step % cfg.log_every == 0 or step == cfg.max_steps):
            report = analyze(alignment)
            log_file.write(f"{step},{last_loss:.6f},{learning_rate(cfg, step):.6g},"
                           f"{report.sharpness:.6f},{report.diagonality:.6f}\n")
            log_file.flush()
        if on_step is not None:
            on_step(step, last_loss)
    return step, last_loss


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, model: TacotronModel, opt: AdamState, step: int,
                    extra_config: dict | None = None) -> None:
    """Magic, one JSON metadata line, then raw little-endian arrays.

    The registry lists every array (parameters, then Adam moments) with its
    shape and byte offset into the blob; the metadata snapshot is enough to
    rebuild the model.
    """
    params = model.parameters()
    registry = []
    blob = bytearray()
    arrays = [(f"param:{name}", p.data) for name, p in params]
    arrays += [(f"adam_m:{name}", opt.m[name]) for name, _ in params]
    arrays += [(f"adam_v:{name}", opt.v[name]) for name, _ in params]
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        registry.append({"name": name, "shape": list(arr.shape), "offset": len(blob)})
        blob.extend(raw)
    cfg_dict = {key: (list(value) if isinstance(value, tuple) else value)
                for key, value in vars(model.cfg).items()}
    meta = {
        "step": int(step),
        "opt_step": int(opt.step),
        "model_config": cfg_dict,
        "extra_config": extra_config or {},
        "arrays": registry,
    }
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(json.dumps(meta, sort_keys=True).encode("utf-8") + b"\n")
        f.write(bytes(blob))


def load_checkpoint(path, expect_model_config: dict | None = None):
    """Rebuild (model, optimizer state, step, metadata) from a checkpoint file."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        meta_line = f.readline()
        try:
            meta = json.loads(meta_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise CheckpointError(f"{path}: unreadable metadata ({err})") from None
        blob = f.read()
    cfg_dict = meta["model_config"]
    if expect_model_config is not None:
        for key, value in expect_model_config.items():
            stored = cfg_dict.get(key)
            stored_cmp = tuple(stored) if isinstance(stored, list) else stored
            value_cmp = tuple(value) if isinstance(value, (list, tuple)) else value
            if stored_cmp != value_cmp:
                raise CheckpointError(
                    f"{path}: config field {key!r} mismatch (checkpoint {stored!r}, "
                    f"expected {value!r})")
    model = TacotronModel(ModelConfig(**cfg_dict))
    params = dict(model.parameters())
    opt = AdamState(model.parameters())
    opt.step = int(meta["opt_step"])
    targets = {f"param:{name}": tensor for name, tensor in params.items()}
    targets.update({f"adam_m:{name}": opt.m[name] for name in params})
    targets.update({f"adam_v:{name}": opt.v[name] for name in params})
    seen = set()
    for entry in meta["arrays"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in targets:
            raise CheckpointError(f"{path}: unexpected array {name!r}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated blob for {name!r}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        target = targets[name]
        if isinstance(target, Tensor):
            if target.data.shape != shape:
                raise CheckpointError(
                    f"{path}: shape mismatch for {name!r} ({shape} vs {target.data.shape})")
            target.data = arr.astype(np.float64)
        else:
            if target.shape != shape:
                raise CheckpointError(
                    f"{path}: shape mismatch for {name!r} ({shape} vs {target.shape})")
            key = name.split(":", 1)[1]
            (opt.m if name.startswith("adam_m:") else opt.v)[key] = arr.astype(np.float64)
        seen.add(name)
    missing = set(targets) - seen
    if missing:
        raise CheckpointError(f"{path}: missing arrays {sorted(missing)[:3]}")
    return model, opt, int(meta["step"]), meta
