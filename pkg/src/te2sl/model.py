"""LLM-based ASR stack: frozen audio encoder, frame stacking, projector, decoder LM with LoRA."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .layers import ConformerBlock, DecoderBlock, LayerNorm, Linear, Module, Rotary, sinusoidal_positions
from .numerics import (
    ConfigError,
    Parameter,
    ShapeError,
    Tensor,
    causal_mask,
    concat,
    gather_rows,
    matmul,
    relu,
    reshape,
    softmax_cross_entropy,
    transpose,
)

EOS = 0


@dataclass
class ModelConfig:
    feat_dim: int = 16  # F_raw
    enc_dim: int = 32  # C
    enc_blocks: int = 1
    enc_heads: int = 2
    enc_kernel: int = 5
    stack: int = 5  # k
    proj_hidden: int = 64
    d_model: int = 32  # D
    lm_layers: int = 2
    lm_heads: int = 4
    lm_hidden: int = 96
    n_words: int = 64
    n_inst: int = 2  # L_inst
    lora_rank: int = 8
    lora_alpha: float = 16.0
    embed_scale: float = 1.0
    pos_scale: float = 0.0  # additive sinusoidal positions, off by default
    rope_base: float = 10000.0  # rotary positions in LM attention; 0 disables

    def __post_init__(self):
        if self.stack < 1:
            raise ConfigError("frame stacking factor k must be >= 1")
        if self.n_inst < 0:
            raise ConfigError("instruction length must be >= 0")
        for f in fields(self):
            if f.name not in ("n_inst", "embed_scale", "pos_scale", "rope_base", "lm_layers", "enc_blocks"):
                if getattr(self, f.name) <= 0:
                    raise ConfigError(f"model.{f.name} must be positive")
        if not 1 <= self.lora_rank <= self.d_model:
            raise ConfigError("LoRA rank must lie in [1, d_model]")
        if self.d_model % self.lm_heads or self.enc_dim % self.enc_heads:
            raise ConfigError("model widths must be divisible by their head counts")
        if self.enc_kernel % 2 == 0:
            raise ConfigError("encoder conv kernel width must be odd")
        if self.pos_scale < 0 or self.rope_base < 0:
            raise ConfigError("position settings must be >= 0")
        if self.rope_base and (self.d_model // self.lm_heads) % 2:
            raise ConfigError("rotary positions need an even LM head width")

    @property
    def vocab_size(self) -> int:
        return 1 + self.n_inst + self.n_words

    @property
    def word_offset(self) -> int:
        return 1 + self.n_inst

    def to_dict(self) -> dict:
        return asdict(self)


def word_to_id(cfg: ModelConfig, w: int) -> int:
    return w + cfg.word_offset


def id_to_word(cfg: ModelConfig, i: int) -> int:
    return i - cfg.word_offset


class AudioEncoder(Module):
    """Toy stand-in for a pretrained speech encoder: input linear + Conformer blocks, frozen."""

    def __init__(self, rng, cfg: ModelConfig):
        self.inp = Linear(rng, cfg.feat_dim, cfg.enc_dim)
        self.blocks = [ConformerBlock(rng, cfg.enc_dim, cfg.enc_heads, cfg.enc_kernel, 2) for _ in range(cfg.enc_blocks)]

    def __call__(self, x: Tensor) -> Tensor:
        h = self.inp(x)
        for blk in self.blocks:
            h = blk(h)
        return h


class Projector(Module):
    """Two linear layers with a ReLU between them."""

    def __init__(self, rng, d_in: int, hidden: int, d_out: int):
        self.fc1 = Linear(rng, d_in, hidden)
        self.fc2 = Linear(rng, hidden, d_out)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.fc1.weight.shape[0]:
            raise ShapeError(f"projector expects width {self.fc1.weight.shape[0]}, got {x.shape[-1]}")
        return self.fc2(relu(self.fc1(x)))


def pretrained_embeddings(cfg: ModelConfig, rng: np.random.Generator, lexicon: np.ndarray | None) -> np.ndarray:
    """Embedding table standing in for a pretrained LLM vocabulary.

    Word rows are a fixed random nonlinear view of the word's acoustic
    prototype (``lexicon``), so the table carries token identity in a space
    related to, but not equal to, the audio-prompt space. Special rows are random.
    """
    d = cfg.d_model
    table = rng.normal(0.0, 1.0 / np.sqrt(d), size=(cfg.vocab_size, d))
    if lexicon is not None:
        if lexicon.shape[0] != cfg.n_words:
            raise ShapeError(f"lexicon has {lexicon.shape[0]} words, config says {cfg.n_words}")
        r1 = rng.normal(size=(lexicon.shape[1], 2 * d)) / np.sqrt(lexicon.shape[1])
        r2 = rng.normal(size=(2 * d, d)) / np.sqrt(2 * d)
        words = np.tanh(2.0 * lexicon @ r1) @ r2
        words /= np.linalg.norm(words, axis=1, keepdims=True)
        table[cfg.word_offset :] = words
    table /= np.linalg.norm(table, axis=1, keepdims=True)
    return table * cfg.embed_scale


class AsrModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, lexicon: np.ndarray | None = None):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
        self.encoder = AudioEncoder(rng, cfg)
        self.projector = Projector(rng, cfg.enc_dim * cfg.stack, cfg.proj_hidden, cfg.d_model)
        self.embed = Parameter(pretrained_embeddings(cfg, rng, lexicon), trainable=False)
        self.blocks = [
            DecoderBlock(rng, cfg.d_model, cfg.lm_heads, cfg.lm_hidden, cfg.lora_rank, cfg.lora_alpha)
            for _ in range(cfg.lm_layers)
        ]
        self.final_norm = LayerNorm(cfg.d_model)
        self.assign_names()
        self.encoder.set_trainable(False)
        self.set_phase("source")

    # parameter groups -----------------------------------------------------------

    def named_groups(self) -> dict[str, list[Parameter]]:
        groups: dict[str, list[Parameter]] = {"encoder": [], "projector": [], "lm": [], "lora": [], "embed": []}
        for name, p in self.named_parameters():
            if name.startswith("encoder."):
                groups["encoder"].append(p)
            elif name.startswith("projector."):
                groups["projector"].append(p)
            elif name == "embed":
                groups["embed"].append(p)
            elif ".lora_" in name:
                groups["lora"].append(p)
            else:
                groups["lm"].append(p)
        return groups

    def set_phase(self, phase: str) -> None:
        """'source': projector + LM body train; 'adapt': only LoRA trains; 'frozen': nothing trains."""
        groups = self.named_groups()
        train = {"source": {"projector", "lm"}, "adapt": {"lora"}, "frozen": set()}[phase]
        for gname, params in groups.items():
            for p in params:
                p.set_trainable(gname in train)

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    # audio path -------------------------------------------------------------------

    def encode_audio(self, x: np.ndarray) -> np.ndarray:
        """H = AudioEncoder(x); length preserving. Returns a plain array (the encoder is frozen)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("encode_audio needs a non-empty [T, F] feature matrix")
        if x.shape[1] != self.cfg.feat_dim:
            raise ShapeError(f"encoder expects {self.cfg.feat_dim} features, got {x.shape[1]}")
        return self.encoder(Tensor(x)).data

    def project(self, stacked: Tensor) -> Tensor:
        return self.projector(stacked)

    def audio_prompt(self, x: np.ndarray) -> Tensor:
        return self.project(Tensor(frame_stack(self.encode_audio(x), self.cfg.stack)))

    def token_embed(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        v = self.cfg.vocab_size
        bad = ids[(ids < 0) | (ids >= v)]
        if bad.size:
            raise IndexError(f"token id {int(bad[0])} out of range for vocabulary size {v}")
        if ids.size == 0:
            return Tensor(np.zeros(ids.shape + (self.cfg.d_model,)))
        return gather_rows(self.embed, ids)

    @property
    def instruction_ids(self) -> list[int]:
        return list(range(1, 1 + self.cfg.n_inst))

    # language model -------------------------------------------------------------

    def lm_forward(self, prompt: Tensor | None, prompt_lens, seqs: Sequence[Sequence[int]]):
        """Run the causal LM over [prompt_i; E_inst; E(seq_i)] for a batch.

        ``prompt`` is ``[B, P, D]`` (ragged via ``prompt_lens``), ``[P, D]``
        shared by all samples, or None. Returns logits ``[B, S, V]``,
        next-token targets ``[B, S]`` and a mask selecting the positions that
        predict ``seq_i`` tokens.
        """
        cfg = self.cfg
        b = len(seqs)
        d = cfg.d_model
        n_inst = cfg.n_inst
        if prompt is None:
            plens = np.zeros(b, dtype=np.int64)
            rows = self.embed
            tok_offset = 0
        else:
            if prompt.shape[-1] != d:
                raise ShapeError(f"prompt width {prompt.shape[-1]} != model width {d}")
            if prompt.ndim == 2:
                plens = np.full(b, prompt.shape[0], dtype=np.int64)
                flat = prompt
                base = np.zeros(b, dtype=np.int64)
            else:
                if prompt.shape[0] != b:
                    raise ShapeError(f"prompt batch {prompt.shape[0]} != {b} sequences")
                pmax = prompt.shape[1]
                plens = np.asarray(prompt_lens if prompt_lens is not None else [pmax] * b, dtype=np.int64)
                flat = reshape(prompt, (b * pmax, d))
                base = np.arange(b, dtype=np.int64) * pmax
            tok_offset = flat.shape[0]
            rows = concat([flat, self.embed], axis=0)
        if (plens + n_inst < 1).any():
            raise ConfigError("need at least one prompt or instruction position before the transcription")
        lens = plens + n_inst + np.array([len(s) for s in seqs], dtype=np.int64)
        s_max = int(lens.max())
        index = np.full((b, s_max), -1, dtype=np.int64)
        targets = np.zeros((b, s_max), dtype=np.int64)
        mask = np.zeros((b, s_max), dtype=bool)
        inst = np.asarray(self.instruction_ids, dtype=np.int64)
        for i, seq in enumerate(seqs):
            p = int(plens[i])
            if p:
                index[i, :p] = base[i] + np.arange(p)
            index[i, p : p + n_inst] = tok_offset + inst
            seq = np.asarray(seq, dtype=np.int64)
            if seq.size and (seq.min() < 0 or seq.max() >= cfg.vocab_size):
                raise IndexError(f"token id out of range for vocabulary size {cfg.vocab_size}")
            start = p + n_inst
            index[i, start : start + seq.size] = tok_offset + seq
            targets[i, start - 1 : start - 1 + seq.size] = seq
            mask[i, start - 1 : start - 1 + seq.size] = True
        x = gather_rows(rows, index)
        if cfg.pos_scale:
            x = x + sinusoidal_positions(s_max, d) * cfg.pos_scale
        rope = Rotary(s_max, d, cfg.lm_heads, cfg.rope_base) if cfg.rope_base else None
        cm = causal_mask(s_max)
        for blk in self.blocks:
            x = blk(x, cm, rope)
        x = self.final_norm(x)
        logits = matmul(x, transpose(self.embed))
        return logits, targets, mask

    def lm_logits(self, prompt: Tensor | None, y_prefix: Sequence[int]):
        """Single-sample convenience wrapper: logits ``[P+L_inst+|y|, V]`` and the loss mask."""
        if prompt is not None and prompt.ndim != 2:
            raise ShapeError("lm_logits takes an unbatched [P, D] prompt")
        logits, targets, mask = self.lm_forward(prompt, None, [list(y_prefix)])
        return logits[0], targets[0], mask[0]

    def loss(self, prompt: Tensor | None, prompt_lens, transcripts: Sequence[Sequence[int]]) -> Tensor:
        """Teacher-forced cross-entropy over transcription tokens plus one EOS."""
        seqs = [list(t) + [EOS] for t in transcripts]
        logits, targets, mask = self.lm_forward(prompt, prompt_lens, seqs)
        return softmax_cross_entropy(logits, targets, mask)

    def next_token_logits(self, prompt: Tensor | None, prompt_lens, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        """Logits for the token following each prefix, ``[B, V]``."""
        logits, _, _ = self.lm_forward(prompt, prompt_lens, prefixes)
        plens = np.zeros(len(prefixes), dtype=np.int64) if prompt is None else (
            np.full(len(prefixes), prompt.shape[0]) if prompt.ndim == 2 else np.asarray(prompt_lens)
        )
        last = plens + self.cfg.n_inst + np.array([len(p) for p in prefixes]) - 1
        return logits.data[np.arange(len(prefixes)), last]


def frame_stack(h: np.ndarray, k: int) -> np.ndarray:
    """Concatenate k consecutive frames: [T, C] -> [floor(T/k), C*k]; trailing frames dropped."""
    h = np.asarray(h)
    t, c = h.shape
    if k < 1:
        raise ConfigError("stacking factor must be >= 1")
    if t < k:
        raise ValueError(f"utterance too short for frame stacking: T={t} < k={k}")
    tp = t // k
    return h[: tp * k].reshape(tp, k * c)


def pad_batch(arrays: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad [T_i, W] arrays into [B, T_max, W]; returns the batch and lengths."""
    lens = np.array([a.shape[0] for a in arrays], dtype=np.int64)
    w = arrays[0].shape[1]
    out = np.zeros((len(arrays), int(lens.max()), w))
    for i, a in enumerate(arrays):
        out[i, : a.shape[0]] = a
    return out, lens


def greedy_decode(model, prompt, prompt_lens=None, max_len: int = 16, batch: int | None = None) -> list[list[int]]:
    """Batched greedy decoding; argmax ties go to the lowest token id.

    ``model`` only needs ``next_token_logits(prompt, prompt_lens, prefixes)``.
    ``batch`` is required when ``prompt`` is None or shared ([P, D]).
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if prompt is not None and prompt.ndim == 3:
        b = prompt.shape[0]
    else:
        b = 1 if batch is None else batch
    prefixes: list[list[int]] = [[] for _ in range(b)]
    done = np.zeros(b, dtype=bool)
    for _ in range(max_len):
        logits = model.next_token_logits(prompt, prompt_lens, prefixes)
        nxt = np.argmax(logits, axis=-1)
        for i in range(b):
            if done[i]:
                continue
            if int(nxt[i]) == EOS:
                done[i] = True
            else:
                prefixes[i].append(int(nxt[i]))
        if done.all():
            break
    return prefixes


def model_tensors(model: Module) -> dict[str, np.ndarray]:
    return {p.name: p.data for p in model.parameters()}
