"""Text-only adaptation strategies and the TE2SL refinement module.

Pseudo-audio prompts are built from transcription token embeddings:

* ``upsample_mask``: repeat each embedding for a random number of frames,
  then zero random time spans.
* ``te2sl``: same upsampling, then a Conformer refinement module trained to
  map upsampled embeddings onto real audio prompts (frame-wise MSE), then
  time masking.
* ``soft_prompt``: one learned prompt tensor shared by every sample.
* ``text_only_ft``: no prompt at all; ``none`` skips adaptation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .layers import ConformerBlock, Linear, Module
from .model import AsrModel, frame_stack, pad_batch
from .numerics import AdamW, ConfigError, NumericError, Parameter, ShapeError, Tensor, gather_rows, mse_loss

log = logging.getLogger(__name__)

KINDS = ("none", "text_only_ft", "soft_prompt", "upsample_mask", "te2sl")


@dataclass(frozen=True)
class MaskSpec:
    """Time masking: up to ``n_spans`` spans of width <= ``max_width`` rows,
    never more than ``ceil(max_frac * L')`` rows in total. ``max_width`` None
    means ``ceil(0.1 * L')``."""

    max_frac: float = 0.05
    n_spans: int = 2
    max_width: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.max_frac <= 1.0:
            raise ConfigError(f"mask fraction {self.max_frac} outside [0, 1]")
        if self.n_spans < 0 or (self.max_width is not None and self.max_width < 1):
            raise ConfigError("mask span count must be >= 0 and width >= 1")


@dataclass(frozen=True)
class Strategy:
    kind: str = "te2sl"
    mask: MaskSpec = field(default_factory=MaskSpec)
    d_min: int = 1
    d_max: int = 3
    soft_prompt_len: int = 8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown strategy {self.kind!r}; expected one of {', '.join(KINDS)}")
        if not 1 <= self.d_min <= self.d_max:
            raise ConfigError(f"duration bounds must satisfy 1 <= d_min <= d_max, got [{self.d_min}, {self.d_max}]")
        if self.soft_prompt_len < 1:
            raise ConfigError("soft prompt length must be >= 1")


# ---------------------------------------------------------------------------
# upsampling and masking


def deterministic_durations(n_tokens: int, n_frames: int) -> np.ndarray:
    """Largest-remainder split of ``n_frames`` over ``n_tokens`` (earlier tokens win ties)."""
    if n_frames < n_tokens:
        raise ValueError(f"cannot upsample {n_tokens} tokens into {n_frames} frames")
    if n_tokens == 0:
        return np.zeros(0, dtype=np.int64)
    base, rem = divmod(n_frames, n_tokens)
    durs = np.full(n_tokens, base, dtype=np.int64)
    durs[:rem] += 1
    return durs


def random_durations(n_tokens: int, d_min: int, d_max: int, rng: np.random.Generator) -> np.ndarray:
    if not 1 <= d_min <= d_max:
        raise ConfigError(f"duration bounds must satisfy 1 <= d_min <= d_max, got [{d_min}, {d_max}]")
    return rng.integers(d_min, d_max + 1, size=n_tokens).astype(np.int64)


def repeat_index(ids: Sequence[int], durations: np.ndarray) -> np.ndarray:
    return np.repeat(np.asarray(ids, dtype=np.int64), durations)


def upsample_deterministic(e: Tensor, n_frames: int) -> Tensor:
    durs = deterministic_durations(e.shape[0], n_frames)
    return gather_rows(e, repeat_index(np.arange(e.shape[0]), durs))


def upsample_random(e: Tensor, d_min: int, d_max: int, rng: np.random.Generator) -> Tensor:
    durs = random_durations(e.shape[0], d_min, d_max, rng)
    return gather_rows(e, repeat_index(np.arange(e.shape[0]), durs))


def time_mask_rows(length: int, spec: MaskSpec, rng: np.random.Generator) -> np.ndarray:
    """Boolean keep-mask over ``length`` rows (False = zeroed)."""
    keep = np.ones(length, dtype=bool)
    if length == 0 or spec.n_spans == 0 or spec.max_frac == 0:
        return keep
    budget = math.ceil(spec.max_frac * length)
    width = spec.max_width if spec.max_width is not None else math.ceil(0.1 * length)
    width = max(1, min(width, budget))
    for _ in range(spec.n_spans):
        start = int(rng.integers(0, length))
        w = int(rng.integers(1, width + 1))
        left = budget - int((~keep).sum())
        if left <= 0:
            break
        span = np.arange(start, min(start + w, length))
        fresh = span[keep[span]][:left]
        keep[fresh] = False
    return keep


def time_mask(e: Tensor, spec: MaskSpec, rng: np.random.Generator) -> Tensor:
    keep = time_mask_rows(e.shape[0], spec, rng)
    return e * keep[:, None].astype(np.float64)


# ---------------------------------------------------------------------------
# refinement module


class Te2slModule(Module):
    """Input linear D->h, Conformer blocks of width h, output linear h->D."""

    def __init__(self, d_model: int, hidden: int = 32, blocks: int = 2, heads: int = 4, kernel: int = 5, seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
        self.d_model = d_model
        self.inp = Linear(rng, d_model, hidden)
        self.blocks = [ConformerBlock(rng, hidden, heads, kernel) for _ in range(blocks)]
        self.out = Linear(rng, hidden, d_model)
        self.assign_names("te2sl.")

    def __call__(self, x: Tensor, valid: np.ndarray | None = None) -> Tensor:
        if x.shape[-1] != self.d_model:
            raise ShapeError(f"TE2SL module expects width {self.d_model}, got {x.shape[-1]}")
        h = self.inp(x)
        for blk in self.blocks:
            h = blk(h, valid)
        return self.out(h)


def te2sl_forward(module: Te2slModule, e_up: Tensor, valid: np.ndarray | None = None) -> Tensor:
    return module(e_up, valid)


@dataclass
class SoftPrompt:
    prompt: Parameter

    @classmethod
    def init(cls, length: int, d_model: int, seed: int = 0) -> "SoftPrompt":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 303]))
        return cls(Parameter(rng.normal(0.0, 0.1, size=(length, d_model)), name="soft_prompt"))


# ---------------------------------------------------------------------------
# pseudo prompts


def pseudo_prompt_batch(
    strategy: Strategy,
    transcripts: Sequence[Sequence[int]],
    model: AsrModel,
    te2sl: Te2slModule | None = None,
    soft_prompt: SoftPrompt | None = None,
    rngs: Sequence[np.random.Generator] | None = None,
    durations: Sequence[np.ndarray] | None = None,
    mask: bool = True,
):
    """Prompt tensor and lengths for a batch, or (None, None) for prompt-free strategies.

    ``transcripts`` hold model token ids. ``durations`` overrides random upsampling.
    """
    kind = strategy.kind
    if kind in ("none", "text_only_ft"):
        return None, None
    if kind == "soft_prompt":
        if soft_prompt is None:
            raise ConfigError("strategy soft_prompt needs a learned soft prompt")
        return soft_prompt.prompt, None
    if kind == "te2sl" and te2sl is None:
        raise ConfigError("strategy te2sl needs a trained TE2SL module")
    b = len(transcripts)
    if rngs is None:
        rngs = [np.random.default_rng(i) for i in range(b)]
    index_rows = []
    for i, ids in enumerate(transcripts):
        durs = durations[i] if durations is not None else random_durations(len(ids), strategy.d_min, strategy.d_max, rngs[i])
        index_rows.append(repeat_index(ids, durs))
    lens = np.array([len(r) for r in index_rows], dtype=np.int64)
    index = np.full((b, int(lens.max())), -1, dtype=np.int64)
    for i, r in enumerate(index_rows):
        index[i, : r.size] = r
    valid = index >= 0
    x = gather_rows(model.embed, index)
    if kind == "te2sl":
        x = te2sl(x, valid)
    keep = valid.copy()
    if mask:
        for i in range(b):
            keep[i, : lens[i]] &= time_mask_rows(int(lens[i]), strategy.mask, rngs[i])
    return x * keep[..., None].astype(np.float64), lens


def build_pseudo_prompt(
    strategy: Strategy,
    y: Sequence[int],
    model: AsrModel,
    te2sl: Te2slModule | None = None,
    soft_prompt: SoftPrompt | None = None,
    seed: int = 0,
    durations: np.ndarray | None = None,
) -> Tensor | None:
    """Single-sample pseudo prompt ``[L', D]`` (or the soft prompt, or None)."""
    rng = np.random.default_rng(seed)
    prompt, lens = pseudo_prompt_batch(
        strategy, [list(y)], model, te2sl, soft_prompt, [rng], None if durations is None else [durations]
    )
    if prompt is None or lens is None:
        return prompt
    return prompt[0]


# ---------------------------------------------------------------------------
# training phases


@dataclass
class OptimSettings:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("optimizer settings need lr > 0, batch_size >= 1, epochs >= 1")

    def make(self, params) -> AdamW:
        return AdamW(list(params), lr=self.lr, beta1=self.beta1, beta2=self.beta2, weight_decay=self.weight_decay)


def bucket_batches(lengths: Sequence[int], batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle, sort within windows of 8 batches by length, chunk, shuffle the chunks."""
    order = rng.permutation(len(lengths))
    window = batch_size * 8
    batches = []
    lengths = np.asarray(lengths)
    for s in range(0, len(order), window):
        chunk = order[s : s + window]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i : i + batch_size] for i in range(0, len(chunk), batch_size))
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


@dataclass
class Te2slPair:
    tokens: list[int]  # model token ids
    target: np.ndarray  # true audio prompt Z, [T', D]


def audio_prompt_targets(model: AsrModel, stacked: Sequence[np.ndarray], batch: int = 64) -> list[np.ndarray]:
    """Ground-truth audio prompts Z for pre-stacked encoder outputs, without gradient."""
    out = []
    for s in range(0, len(stacked), batch):
        chunk = stacked[s : s + batch]
        x, lens = pad_batch(chunk)
        z = model.project(Tensor(x)).data
        out.extend(z[i, : lens[i]].copy() for i in range(len(chunk)))
    return out


def te2sl_batch_loss(module: Te2slModule, model: AsrModel, pairs: Sequence[Te2slPair], raw: bool = False) -> Tensor:
    """Frame-wise MSE between refined (or raw, if ``raw``) upsampled embeddings and Z."""
    b = len(pairs)
    lens = np.array([p.target.shape[0] for p in pairs], dtype=np.int64)
    t_max = int(lens.max())
    index = np.full((b, t_max), -1, dtype=np.int64)
    target = np.zeros((b, t_max, model.cfg.d_model))
    for i, p in enumerate(pairs):
        durs = deterministic_durations(len(p.tokens), int(lens[i]))
        index[i, : lens[i]] = repeat_index(p.tokens, durs)
        target[i, : lens[i]] = p.target
    valid = index >= 0
    x = gather_rows(model.embed, index)
    pred = x if raw else module(x, valid)
    return mse_loss(pred, Tensor(target), mask=valid)


def make_te2sl_pairs(model: AsrModel, tokens: Sequence[Sequence[int]], stacked: Sequence[np.ndarray]):
    """Pairs (token ids, Z); utterances with fewer prompt frames than tokens are skipped."""
    zs = audio_prompt_targets(model, stacked)
    pairs, skipped = [], 0
    for toks, z in zip(tokens, zs):
        if z.shape[0] < len(toks):
            skipped += 1
            continue
        pairs.append(Te2slPair(list(toks), z))
    total = len(zs)
    if skipped:
        log.info("TE2SL: skipped %d/%d utterances with T' < L", skipped, total)
    if total == 0 or skipped * 2 > total:
        raise ValueError(f"TE2SL: {skipped}/{total} utterances too short for upsampling")
    return pairs, skipped


def train_te2sl(
    module: Te2slModule,
    model: AsrModel,
    pairs: Sequence[Te2slPair],
    opt: OptimSettings,
    seed: int = 0,
    max_steps: int | None = None,
) -> list[float]:
    """Fit the refinement module to real audio prompts. The ASR model stays frozen.

    Returns the mean training loss of each epoch.
    """
    model.set_phase("frozen")
    module.set_trainable(True)
    adam = opt.make(module.parameters())
    rng = np.random.default_rng(np.random.SeedSequence([seed, 404]))
    curve = []
    steps = 0
    for _ in range(opt.epochs):
        total, count = 0.0, 0
        for idx in bucket_batches([p.target.shape[0] for p in pairs], opt.batch_size, rng):
            loss = te2sl_batch_loss(module, model, [pairs[i] for i in idx])
            if not np.isfinite(loss.data):
                raise NumericError("TE2SL loss diverged")
            loss.backward()
            adam.step()
            total += float(loss.data) * len(idx)
            count += len(idx)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        curve.append(total / count)
        if max_steps is not None and steps >= max_steps:
            break
    module.set_trainable(False)
    return curve


def frame_mse(module: Te2slModule | None, model: AsrModel, pairs: Sequence[Te2slPair], batch: int = 64) -> float:
    """Pooled frame-MSE of refined (module given) or raw (module None) upsampled embeddings."""
    num, den = 0.0, 0
    for s in range(0, len(pairs), batch):
        chunk = pairs[s : s + batch]
        frames = sum(p.target.shape[0] for p in chunk)
        loss = te2sl_batch_loss(module, model, chunk, raw=module is None)
        num += float(loss.data) * frames
        den += frames
    return num / den


def learn_soft_prompt(
    model: AsrModel,
    transcripts: Sequence[Sequence[int]],
    length: int,
    opt: OptimSettings,
    seed: int = 0,
) -> tuple[SoftPrompt, list[float]]:
    """Train one prompt tensor (model frozen) to minimize the transcription loss on source text."""
    model.set_phase("frozen")
    sp = SoftPrompt.init(length, model.cfg.d_model, seed)
    adam = opt.make([sp.prompt])
    rng = np.random.default_rng(np.random.SeedSequence([seed, 505]))
    curve = []
    for _ in range(opt.epochs):
        total, count = 0.0, 0
        for idx in bucket_batches([len(t) for t in transcripts], opt.batch_size, rng):
            loss = model.loss(sp.prompt, None, [transcripts[i] for i in idx])
            loss.backward()
            adam.step()
            total += float(loss.data) * len(idx)
            count += len(idx)
        curve.append(total / count)
    sp.prompt.set_trainable(False)
    return sp, curve


def stack_all(model: AsrModel, features: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Frozen-encoder outputs, frame-stacked, for a list of utterances."""
    return [frame_stack(model.encode_audio(f), model.cfg.stack) for f in features]
