"""Finite-difference gradient suite over every differentiable building block.

Each case builds a tiny problem from a seed and reduces the op output to a
scalar through a fixed random projection, so no gradient coordinate is
structurally zero. Used by the ``gradcheck`` subcommand and the test suite.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .adaptation import Te2slModule
from .layers import lora_linear
from .model import AsrModel, ModelConfig, Projector
from .numerics import (
    Parameter,
    Tensor,
    attention,
    depthwise_conv1d,
    grad_check,
    layer_norm,
    matmul,
    softmax_cross_entropy,
    tsum,
)

TOLERANCE = 1e-5
LOSS_TOLERANCE = 1e-4  # full end-to-end loss

TINY_MODEL = ModelConfig(
    feat_dim=4,
    enc_dim=4,
    enc_heads=1,
    enc_kernel=3,
    stack=2,
    proj_hidden=6,
    d_model=8,
    lm_layers=1,
    lm_heads=2,
    lm_hidden=12,
    n_words=5,
    n_inst=1,
    lora_rank=2,
    lora_alpha=4.0,
)


def _param(rng, *shape, scale=1.0) -> Parameter:
    return Parameter(rng.normal(0.0, scale, size=shape))


def _project(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    w = Tensor(rng.normal(size=out.shape))
    return lambda y: tsum(y * w)


def _case(rng, build: Callable[[], Tensor], params) -> float:
    proj = _project(build(), rng)
    return grad_check(lambda: proj(build()), params, eps=1e-5)


def check_matmul(rng) -> float:
    a, b = _param(rng, 2, 3, 4), _param(rng, 4, 3)
    return _case(rng, lambda: matmul(a, b), [a, b])


def check_layer_norm(rng) -> float:
    x, g, b = _param(rng, 3, 5), _param(rng, 5), _param(rng, 5)
    return _case(rng, lambda: layer_norm(x, g, b), [x, g, b])


def check_attention(rng) -> float:
    q, k, v = _param(rng, 2, 4, 6), _param(rng, 2, 4, 6), _param(rng, 2, 4, 6)
    mask = np.tril(np.ones((4, 4), dtype=bool))
    return _case(rng, lambda: attention(q, k, v, heads=2, mask=mask), [q, k, v])


def check_depthwise_conv(rng) -> float:
    x, w = _param(rng, 2, 6, 3), _param(rng, 3, 3)
    return _case(rng, lambda: depthwise_conv1d(x, w), [x, w])


def check_projector(rng) -> float:
    proj = Projector(rng, 6, 5, 4)
    # shift pre-activations away from the ReLU kink
    proj.fc1.bias.data[:] = rng.choice([-1.0, 1.0], size=5) * 0.5
    x = _param(rng, 3, 6, scale=0.3)
    return _case(rng, lambda: proj(x), [x, *proj.parameters()])


def check_lora(rng) -> float:
    x, w, b = _param(rng, 3, 5), _param(rng, 5, 4), _param(rng, 4)
    a, bb = _param(rng, 2, 5), _param(rng, 4, 2)
    return _case(rng, lambda: lora_linear(x, w, b, a, bb, alpha=4.0), [x, w, a, bb])


def _identifiable(module) -> list[Parameter]:
    # the attention key bias shifts every score of a query equally, so
    # softmax cancels it and its true gradient is identically zero
    return [p for n, p in module.named_parameters() if not n.endswith("attn.k.bias")]


def check_te2sl(rng) -> float:
    module = Te2slModule(6, hidden=4, blocks=1, heads=2, kernel=3, seed=int(rng.integers(1 << 30)))
    x = _param(rng, 1, 5, 6)
    valid = np.ones((1, 5), dtype=bool)
    valid[0, 4] = False
    return _case(rng, lambda: module(x, valid), [x, *_identifiable(module)])


def check_full_loss(rng) -> float:
    cfg = TINY_MODEL
    model = AsrModel(cfg, seed=int(rng.integers(1 << 30)))
    for blk in model.blocks:
        for lin in (blk.attn.q, blk.attn.v):
            lin.lora_b.data[:] = rng.normal(0.0, 0.1, size=lin.lora_b.shape)
    prompt = _param(rng, 2, 3, cfg.d_model, scale=0.5)
    lens = np.array([3, 2])
    ys = [[3, 4, 5], [6]]
    params = [prompt] + [
        p for n, p in model.named_parameters() if n.startswith("blocks.") and not n.endswith("attn.k.bias")
    ]
    for p in params:
        p.set_trainable(True)
    return grad_check(lambda: model.loss(prompt, lens, ys), params, eps=1e-5)


def check_cross_entropy(rng) -> float:
    logits = _param(rng, 2, 3, 5)
    targets = rng.integers(0, 5, size=(2, 3))
    mask = np.array([[True, True, False], [True, False, True]])
    return grad_check(lambda: softmax_cross_entropy(logits, targets, mask), [logits], eps=1e-5)


CASES: dict[str, Callable[[np.random.Generator], float]] = {
    "matmul": check_matmul,
    "layer_norm": check_layer_norm,
    "attention": check_attention,
    "depthwise_conv": check_depthwise_conv,
    "cross_entropy": check_cross_entropy,
    "projector": check_projector,
    "lora": check_lora,
    "te2sl_module": check_te2sl,
    "full_loss": check_full_loss,
}


def tolerance(op: str) -> float:
    return LOSS_TOLERANCE if op == "full_loss" else TOLERANCE


def run_suite(seed: int) -> dict[str, float]:
    """Max relative error per op for one seed."""
    out = {}
    for i, (op, case) in enumerate(CASES.items()):
        out[op] = case(np.random.default_rng(np.random.SeedSequence([seed, 55, i])))
    return out
