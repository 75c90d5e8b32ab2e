from dataclasses import dataclass

import numpy as np

from emotts import autodiff as ad
from emotts.model import ModelConfig


def tiny_config(**overrides) -> ModelConfig:
    """Desk-top-of-desk-scale model dims for fast tests."""
    base = dict(
        vocab="abcdefghij",
        char_embed_dim=8,
        encoder_prenet_dims=(8, 8),
        decoder_prenet_dims=(8, 8),
        encoder_cbhg_bank=2,
        encoder_cbhg_channels=4,
        encoder_highway_layers=2,
        encoder_dim=8,
        postnet_cbhg_bank=2,
        postnet_cbhg_channels=4,
        postnet_highway_layers=1,
        attention_dim=8,
        attention_rnn_dim=8,
        decoder_rnn_dim=8,
        n_mels=6,
        linear_bins=9,
        r=2,
        emotion_embed_dim=8,
        allow_nonpaper=True,
        max_decoder_steps=20,
    )
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class FakeRecord:
    char_ids: np.ndarray
    emotion_id: int
    mel: np.ndarray
    linear: np.ndarray


def brute_force_alignment(p: np.ndarray) -> np.ndarray:
    """Oracle: enumerate every monotonic scan path with its Bernoulli probability.

    The scanner starts each decoder step at the previously selected position
    (position 0 before the first step), flips a coin with probability p[i, j]
    to select position j, and otherwise moves right; scanning past the end
    discards the path's remaining mass.
    """
    steps, n = p.shape
    alpha = np.zeros((steps, n))

    def recurse(i, prev_pos, prob):
        if i == steps or prob == 0.0:
            return
        stay = prob
        for j in range(prev_pos, n):
            select = stay * p[i, j]
            alpha[i, j] += select
            recurse(i + 1, j, select)
            stay *= 1.0 - p[i, j]

    recurse(0, 0, 1.0)
    return alpha


def replace_tensor(root, old, new):
    """Swap one parameter tensor object in a layer tree; returns an undo callable.

    Walks attribute dicts and lists; numpy arrays and Tensors (slot-based)
    terminate the recursion naturally.
    """
    undos = []
    seen = set()

    def visit(obj):
        if id(obj) in seen:
            return
        seen.add(id(obj))
        if isinstance(obj, list):
            for i, item in enumerate(obj):
                if item is old:
                    obj[i] = new
                    undos.append(lambda o=obj, k=i: o.__setitem__(k, old))
                else:
                    visit(item)
        elif hasattr(obj, "__dict__"):
            for key, value in list(vars(obj).items()):
                if value is old:
                    setattr(obj, key, new)
                    undos.append(lambda o=obj, k=key: setattr(o, k, old))
                elif isinstance(value, list) or hasattr(value, "__dict__"):
                    visit(value)

    visit(root)
    assert undos, "tensor not found in module tree"

    def undo():
        for fn in undos:
            fn()

    return undo


def module_grad_check(module, build_loss, epsilon=1e-5, params=None, sample=None, seed=0):
    """Worst grad_check error over a module's parameters for a scalar loss."""
    worst = 0.0
    worst_name = None
    for name, param in (params if params is not None else module.params("m")):
        def f(x, p=param):
            undo = replace_tensor(module, p, x)
            try:
                return build_loss()
            finally:
                undo()

        err = ad.grad_check(f, ad.Tensor(param.data.copy()), epsilon, sample=sample, seed=seed)
        if err > worst:
            worst, worst_name = err, name
    return worst, worst_name


def zero_params(module, params=None):
    for _, param in (params if params is not None else module.params("m")):
        param.data = np.zeros_like(param.data)
