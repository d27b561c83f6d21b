"""Small module system and the building blocks shared by the encoder, LM and TE2SL module."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .numerics import (
    ConfigError,
    Parameter,
    Tensor,
    attention,
    depthwise_conv1d,
    glu,
    layer_norm,
    matmul,
    relu,
    silu,
    transpose,
)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            p.name = name

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.set_trainable(flag)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.parameters()}
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing tensors: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: stored shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()
            p.zero_grad()


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """y = x @ W + b with W stored as [d_in, d_out]."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = Parameter(_uniform(rng, d_in, (d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


def lora_linear(x: Tensor, weight: Tensor, bias: Tensor | None, a: Tensor, b: Tensor, alpha: float) -> Tensor:
    """Base projection plus low-rank update: x W + bias + (alpha/r) (x A^T) B^T.

    ``a`` is [r, d_in] and ``b`` is [d_out, r].
    """
    r = a.shape[0]
    if b.shape[1] != r or a.shape[1] != weight.shape[0] or b.shape[0] != weight.shape[1]:
        from .numerics import ShapeError

        raise ShapeError(f"LoRA factors A {a.shape} / B {b.shape} do not fit base {weight.shape}")
    y = matmul(x, weight)
    if bias is not None:
        y = y + bias
    return y + matmul(matmul(x, transpose(a)), transpose(b)) * (alpha / r)


class LoRALinear(Linear):
    """Linear layer carrying a LoRA pair; B starts at zero so the adapter is inert."""

    def __init__(self, rng, d_in: int, d_out: int, rank: int, alpha: float):
        super().__init__(rng, d_in, d_out)
        if not 1 <= rank <= min(d_in, d_out):
            raise ConfigError(f"LoRA rank {rank} must lie in [1, {min(d_in, d_out)}]")
        self.rank = rank
        self.alpha = alpha
        self.lora_a = Parameter(rng.normal(0.0, 0.02, size=(rank, d_in)))
        self.lora_b = Parameter(np.zeros((d_out, rank)))

    def __call__(self, x: Tensor) -> Tensor:
        return lora_linear(x, self.weight, self.bias, self.lora_a, self.lora_b, self.alpha)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class FeedForward(Module):
    def __init__(self, rng, d: int, hidden: int):
        self.norm = LayerNorm(d)
        self.up = Linear(rng, d, hidden)
        self.down = Linear(rng, hidden, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(silu(self.up(self.norm(x))))


class SelfAttention(Module):
    """Multi-head self-attention; optional LoRA on the query and value projections."""

    def __init__(self, rng, d: int, heads: int, lora_rank: int = 0, lora_alpha: float = 16.0):
        if d % heads:
            raise ConfigError(f"width {d} is not divisible by {heads} heads")
        self.heads = heads
        if lora_rank:
            self.q = LoRALinear(rng, d, d, lora_rank, lora_alpha)
            self.v = LoRALinear(rng, d, d, lora_rank, lora_alpha)
        else:
            self.q = Linear(rng, d, d)
            self.v = Linear(rng, d, d)
        self.k = Linear(rng, d, d)
        self.o = Linear(rng, d, d)

    def __call__(self, x: Tensor, mask: np.ndarray | None, rope: Rotary | None = None) -> Tensor:
        q, k = self.q(x), self.k(x)
        if rope is not None:
            q, k = rope(q), rope(k)
        return self.o(attention(q, k, self.v(x), self.heads, mask))


class ConvModule(Module):
    """Pointwise -> GLU -> depthwise conv -> norm -> SiLU -> pointwise."""

    def __init__(self, rng, d: int, kernel: int):
        if kernel % 2 == 0:
            raise ConfigError(f"conv kernel width must be odd, got {kernel}")
        self.norm = LayerNorm(d)
        self.pw_in = Linear(rng, d, 2 * d)
        self.dw = Parameter(_uniform(rng, kernel, (kernel, d)))
        self.dw_norm = LayerNorm(d)
        self.pw_out = Linear(rng, d, d)

    def __call__(self, x: Tensor, valid: np.ndarray | None) -> Tensor:
        h = glu(self.pw_in(self.norm(x)))
        if valid is not None:
            # padded frames must not leak into valid ones through the kernel
            h = h * valid[..., None].astype(np.float64)
        h = depthwise_conv1d(h, self.dw)
        return self.pw_out(silu(self.dw_norm(h)))


class ConformerBlock(Module):
    """Half-step FFN, self-attention, convolution, half-step FFN, final norm."""

    def __init__(self, rng, d: int, heads: int, kernel: int, ffn_mult: int = 4):
        self.ff1 = FeedForward(rng, d, ffn_mult * d)
        self.attn_norm = LayerNorm(d)
        self.attn = SelfAttention(rng, d, heads)
        self.conv = ConvModule(rng, d, kernel)
        self.ff2 = FeedForward(rng, d, ffn_mult * d)
        self.out_norm = LayerNorm(d)

    def __call__(self, x: Tensor, valid: np.ndarray | None = None) -> Tensor:
        mask = None if valid is None else valid[..., None, None, :]
        x = x + self.ff1(x) * 0.5
        x = x + self.attn(self.attn_norm(x), mask)
        x = x + self.conv(x, valid)
        x = x + self.ff2(x) * 0.5
        return self.out_norm(x)


class DecoderBlock(Module):
    """Pre-norm causal transformer block."""

    def __init__(self, rng, d: int, heads: int, hidden: int, lora_rank: int, lora_alpha: float):
        self.attn_norm = LayerNorm(d)
        self.attn = SelfAttention(rng, d, heads, lora_rank, lora_alpha)
        self.ff = FeedForward(rng, d, hidden)

    def __call__(self, x: Tensor, mask: np.ndarray, rope: Rotary | None = None) -> Tensor:
        x = x + self.attn(self.attn_norm(x), mask, rope)
        return x + self.ff(x)


class Rotary:
    """Rotary position embedding for queries and keys, per head.

    Pairs (2j, 2j+1) inside each head rotate by ``t * base**(-2j/d_head)``.
    Written as ``x*cos + (x @ R)*sin`` with a constant signed permutation R so
    the ordinary matmul and multiply gradients apply.
    """

    def __init__(self, t: int, d: int, heads: int, base: float = 10000.0):
        dh = d // heads
        if d % heads or dh % 2:
            raise ConfigError(f"rotary positions need an even head width, got {d}/{heads}")
        freq = base ** (-2.0 * np.arange(dh // 2) / dh)
        angle = np.arange(t)[:, None] * freq[None, :]
        self.cos = np.tile(np.repeat(np.cos(angle), 2, axis=1), (1, heads))
        self.sin = np.tile(np.repeat(np.sin(angle), 2, axis=1), (1, heads))
        rot = np.zeros((d, d))
        for a in range(0, d, 2):
            rot[a + 1, a] = -1.0
            rot[a, a + 1] = 1.0
        self.rot = Tensor(rot)

    def __call__(self, x: Tensor) -> Tensor:
        t = x.shape[-2]
        return x * self.cos[:t] + matmul(x, self.rot) * self.sin[:t]


def sinusoidal_positions(t: int, d: int) -> np.ndarray:
    pos = np.arange(t)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    out = np.zeros((t, d))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


__all__ = [
    "ConformerBlock",
    "ConvModule",
    "DecoderBlock",
    "FeedForward",
    "LayerNorm",
    "Linear",
    "LoRALinear",
    "Module",
    "Rotary",
    "SelfAttention",
    "lora_linear",
    "relu",
    "sinusoidal_positions",
]
