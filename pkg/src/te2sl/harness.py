"""Two-phase experiment protocol: source training, text-only adaptation, evaluation, reports."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .adaptation import (
    OptimSettings,
    SoftPrompt,
    Strategy,
    Te2slModule,
    bucket_batches,
    frame_mse,
    learn_soft_prompt,
    make_te2sl_pairs,
    pseudo_prompt_batch,
    stack_all,
    train_te2sl,
)
from .checkpoint import read_tensors, write_tensors
from .config import ExperimentConfig
from .corpus import Corpus, Utterance, word
from .metrics import EditCounts, error_rate, levenshtein_counts, oov_recall, pool
from .model import AsrModel, ModelConfig, greedy_decode, id_to_word, pad_batch, word_to_id
from .numerics import ConfigError, NumericError, Parameter, Tensor

log = logging.getLogger(__name__)


class ArtifactMissing(ConfigError):
    """A phase needs an artifact (checkpoint, module, prompt) that does not exist."""


# ---------------------------------------------------------------------------
# checkpoints


def save_model(path: Path, model: AsrModel) -> None:
    tensors = {p.name: p.data for p in model.parameters()}
    for key, value in model.cfg.to_dict().items():
        tensors[f"config.{key}"] = np.array(float(value))
    write_tensors(path, tensors)


def load_model(path: Path) -> AsrModel:
    path = Path(path)
    if not path.exists():
        raise ArtifactMissing(f"model checkpoint not found: {path}")
    tensors = read_tensors(path)
    kwargs = {}
    for f in ModelConfig.__dataclass_fields__.values():
        key = f"config.{f.name}"
        if key in tensors:
            val = float(tensors.pop(key))
            kwargs[f.name] = int(val) if f.type in ("int", int) else val
    model = AsrModel(ModelConfig(**kwargs))
    model.load_state_dict(tensors)
    return model


def save_module(path: Path, module: Te2slModule) -> None:
    tensors = {p.name: p.data for p in module.parameters()}
    tensors["config.d_model"] = np.array(float(module.d_model))
    tensors["config.hidden"] = np.array(float(module.inp.weight.shape[1]))
    tensors["config.blocks"] = np.array(float(len(module.blocks)))
    tensors["config.heads"] = np.array(float(module.blocks[0].attn.heads if module.blocks else 1))
    tensors["config.kernel"] = np.array(float(module.blocks[0].conv.dw.shape[0] if module.blocks else 1))
    write_tensors(path, tensors)


def load_module(path: Path) -> Te2slModule:
    path = Path(path)
    if not path.exists():
        raise ArtifactMissing(f"TE2SL module checkpoint not found: {path}")
    t = read_tensors(path)
    cfg = {k: int(float(t.pop(f"config.{k}"))) for k in ("d_model", "hidden", "blocks", "heads", "kernel")}
    module = Te2slModule(**cfg)
    module.load_state_dict(t)
    module.set_trainable(False)
    return module


def save_soft_prompt(path: Path, sp: SoftPrompt) -> None:
    write_tensors(path, {"soft_prompt": sp.prompt.data})


def load_soft_prompt(path: Path) -> SoftPrompt:
    path = Path(path)
    if not path.exists():
        raise ArtifactMissing(f"soft prompt not found: {path}")
    return SoftPrompt(Parameter(read_tensors(path)["soft_prompt"], name="soft_prompt", trainable=False))


# ---------------------------------------------------------------------------
# results


@dataclass
class PhaseResult:
    phase: str
    train_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    selected_epoch: int = 0  # 1-based
    checkpoint: str = ""
    wall_clock: float = 0.0
    extra: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class MetricsReport:
    strategy: str
    split: str
    error_rate: float
    oov_recall: float | None
    counts: EditCounts
    oov_counts: EditCounts
    seed: int
    config_digest: str
    records: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "type": "summary",
            "strategy": self.strategy,
            "split": self.split,
            "wer": self.error_rate,
            "rec_oov": self.oov_recall,
            "N": self.counts.n,
            "S": self.counts.s,
            "D": self.counts.d,
            "I": self.counts.i,
            "oov_N": self.oov_counts.n,
            "oov_S": self.oov_counts.s,
            "oov_D": self.oov_counts.d,
            "seed": self.seed,
            "config_digest": self.config_digest,
        }

    def write(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.write(json.dumps(self.summary(), sort_keys=True) + "\n")


def select_checkpoint(metrics: Sequence[float]) -> int:
    """1-based epoch with the minimum validation metric; ties go to the earliest."""
    if not metrics:
        raise ValueError("no epochs to select from")
    return int(np.argmin(np.asarray(metrics, dtype=np.float64))) + 1


# ---------------------------------------------------------------------------
# evaluation


class FeatureCache:
    """Frame-stacked outputs of the frozen encoder, computed once per split."""

    def __init__(self, model: AsrModel):
        self.model = model
        self._cache: dict[str, list[np.ndarray]] = {}

    def get(self, name: str, utts: Sequence[Utterance]) -> list[np.ndarray]:
        if name not in self._cache:
            if any(u.features is None for u in utts):
                raise ValueError(f"split {name} has no audio features")
            self._cache[name] = stack_all(self.model, [u.features for u in utts])
        return self._cache[name]


def decode_split(model: AsrModel, stacked: Sequence[np.ndarray], max_len: int, batch: int) -> list[list[int]]:
    hyps: list[list[int]] = []
    for s in range(0, len(stacked), batch):
        x, lens = pad_batch(stacked[s : s + batch])
        z = model.project(Tensor(x))
        hyps.extend(greedy_decode(model, z, lens, max_len))
    return hyps


def to_words(cfg: ModelConfig, ids: Sequence[int]) -> list[str]:
    out = []
    for i in ids:
        w = id_to_word(cfg, i)
        out.append(word(w) if w >= 0 else f"<special{i}>")
    return out


def evaluate(
    model: AsrModel,
    utts: Sequence[Utterance],
    stacked: Sequence[np.ndarray],
    source_vocab: set[str],
    max_len: int = 14,
    batch: int = 100,
    strategy: str = "",
    split: str = "",
    seed: int = 0,
    config_digest: str = "",
) -> MetricsReport:
    """Greedy-decode a paired split from real audio prompts and score it."""
    if not utts:
        raise ValueError("cannot evaluate an empty split")
    model.set_phase("frozen")
    hyp_ids = decode_split(model, stacked, max_len, batch)
    refs = [[word(t) for t in u.tokens] for u in utts]
    hyps = [to_words(model.cfg, h) for h in hyp_ids]
    counts = [levenshtein_counts(r, h) for r, h in zip(refs, hyps)]
    rec = oov_recall(refs, hyps, source_vocab)
    records = []
    for u, r, h, c, oc in zip(utts, refs, hyps, counts, rec.per_utterance):
        records.append(
            {
                "type": "utterance",
                "id": u.uid,
                "ref": " ".join(r),
                "hyp": " ".join(h),
                "N": c.n,
                "S": c.s,
                "D": c.d,
                "I": c.i,
                "oov_N": oc.n,
                "oov_S": oc.s,
                "oov_D": oc.d,
            }
        )
    return MetricsReport(strategy, split, error_rate(counts), rec.value, pool(counts), rec.counts, seed, config_digest, records)


def validation_wer(model: AsrModel, utts, stacked, max_len: int, batch: int) -> float:
    hyp_ids = decode_split(model, stacked, max_len, batch)
    refs = [[word_to_id(model.cfg, t) for t in u.tokens] for u in utts]
    return error_rate([levenshtein_counts(r, h) for r, h in zip(refs, hyp_ids)])


# ---------------------------------------------------------------------------
# phases


def _ensure_fresh(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigError(f"output {path} already exists; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)


def _check_loss(loss: Tensor, phase: str, epoch: int) -> None:
    if not np.isfinite(loss.data):
        raise NumericError(f"{phase}: loss became non-finite in epoch {epoch}")


def train_source(
    cfg: ExperimentConfig,
    corpus: Corpus,
    out: Path,
    cache: FeatureCache | None = None,
    force: bool = False,
) -> tuple[AsrModel, PhaseResult]:
    """Train projector + LM body on paired source data; LoRA stays at B=0, encoder frozen."""
    t0 = time.perf_counter()
    out = Path(out)
    _ensure_fresh(out, force)
    model = AsrModel(cfg.model, seed=cfg.seed, lexicon=corpus.table.prototypes)
    cache = cache or FeatureCache(model)
    cache.model = model
    train = corpus.splits["source_train"]
    dev = corpus.splits["source_dev"]
    st = cache.get("source_train", train)
    sd = cache.get("source_dev", dev)
    ys = [[word_to_id(cfg.model, t) for t in u.tokens] for u in train]
    opt = cfg.optim_source
    model.set_phase("source")
    adam = opt.make(model.trainable_parameters())
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))
    result = PhaseResult("source")
    for epoch in range(1, opt.epochs + 1):
        model.set_phase("source")
        total, count = 0.0, 0
        for idx in bucket_batches([s.shape[0] for s in st], opt.batch_size, rng):
            x, lens = pad_batch([st[i] for i in idx])
            loss = model.loss(model.project(Tensor(x)), lens, [ys[i] for i in idx])
            _check_loss(loss, "source training", epoch)
            loss.backward()
            adam.step()
            total += float(loss.data) * len(idx)
            count += len(idx)
        model.set_phase("frozen")
        result.train_loss.append(total / count)
        result.val_metric.append(validation_wer(model, dev, sd, cfg.eval.max_len, cfg.eval.batch_size))
        save_model(out / f"epoch_{epoch:03d}.ckpt", model)
        log.info("source epoch %d loss %.4f dev WER %.4f", epoch, result.train_loss[-1], result.val_metric[-1])
    best = select_checkpoint(result.val_metric)
    result.selected_epoch = best
    result.checkpoint = str(out / f"epoch_{best:03d}.ckpt")
    model = load_model(Path(result.checkpoint))
    cache.model = model
    model.set_phase("frozen")
    save_model(out / "best.ckpt", model)
    result.wall_clock = time.perf_counter() - t0
    result.write(out / "phase.json")
    return model, result


def prepare_te2sl(
    cfg: ExperimentConfig,
    model: AsrModel,
    corpus: Corpus,
    out: Path,
    cache: FeatureCache,
    force: bool = False,
) -> tuple[Te2slModule, PhaseResult]:
    """Train the refinement module on source pairs; report held-out frame-MSE refined vs raw."""
    t0 = time.perf_counter()
    out = Path(out)
    _ensure_fresh(out, force)
    sc = cfg.strategy
    module = Te2slModule(cfg.model.d_model, sc.te2sl_hidden, sc.te2sl_blocks, sc.te2sl_heads, sc.te2sl_kernel, seed=cfg.seed)
    train = corpus.splits["source_train"]
    dev = corpus.splits["source_dev"]
    to_ids = lambda utts: [[word_to_id(cfg.model, t) for t in u.tokens] for u in utts]  # noqa: E731
    pairs, skipped = make_te2sl_pairs(model, to_ids(train), cache.get("source_train", train))
    held, _ = make_te2sl_pairs(model, to_ids(dev), cache.get("source_dev", dev))
    curve = train_te2sl(module, model, pairs, cfg.optim_te2sl, seed=cfg.seed)
    refined = frame_mse(module, model, held)
    raw = frame_mse(None, model, held)
    save_module(out / "module.ckpt", module)
    result = PhaseResult(
        "te2sl",
        train_loss=curve,
        selected_epoch=len(curve),
        checkpoint=str(out / "module.ckpt"),
        extra={"heldout_mse_refined": refined, "heldout_mse_raw": raw, "skipped": skipped},
    )
    result.wall_clock = time.perf_counter() - t0
    result.write(out / "phase.json")
    return module, result


def prepare_soft_prompt(
    cfg: ExperimentConfig, model: AsrModel, corpus: Corpus, out: Path, force: bool = False
) -> tuple[SoftPrompt, PhaseResult]:
    t0 = time.perf_counter()
    out = Path(out)
    _ensure_fresh(out, force)
    sc = cfg.strategy
    ys = [[word_to_id(cfg.model, t) for t in u.tokens] for u in corpus.splits["source_train"]]
    opt = OptimSettings(lr=sc.soft_prompt_lr, batch_size=cfg.optim_adapt.batch_size, epochs=sc.soft_prompt_epochs)
    sp, curve = learn_soft_prompt(model, ys, sc.soft_prompt_len, opt, seed=cfg.seed)
    save_soft_prompt(out / "prompt.ckpt", sp)
    result = PhaseResult("soft_prompt", train_loss=curve, selected_epoch=len(curve), checkpoint=str(out / "prompt.ckpt"))
    result.wall_clock = time.perf_counter() - t0
    result.write(out / "phase.json")
    return sp, result


def adapt_target(
    cfg: ExperimentConfig,
    source_model: AsrModel,
    strategy: Strategy,
    corpus: Corpus,
    out: Path,
    cache: FeatureCache,
    te2sl: Te2slModule | None = None,
    soft_prompt: SoftPrompt | None = None,
    force: bool = False,
) -> tuple[AsrModel, PhaseResult]:
    """Text-only adaptation: only LoRA factors train; prompts come from ``strategy``.

    Gradient steps read target text only. Checkpoints are selected by WER on
    the paired target dev split.
    """
    t0 = time.perf_counter()
    out = Path(out)
    if strategy.kind == "te2sl" and te2sl is None:
        raise ArtifactMissing("strategy te2sl needs a trained TE2SL module (run train-te2sl first)")
    if strategy.kind == "soft_prompt" and soft_prompt is None:
        raise ArtifactMissing("strategy soft_prompt needs a learned soft prompt (run learn-soft-prompt first)")
    _ensure_fresh(out, force)
    model = AsrModel(source_model.cfg)
    model.load_state_dict(source_model.state_dict())
    result = PhaseResult("adapt:" + strategy.kind)
    if strategy.kind == "none":
        model.set_phase("frozen")
        save_model(out / "best.ckpt", model)
        result.checkpoint = str(out / "best.ckpt")
        result.write(out / "phase.json")
        return model, result
    if te2sl is not None:
        te2sl.set_trainable(False)
    if soft_prompt is not None:
        soft_prompt.prompt.set_trainable(False)
    texts = [[word_to_id(cfg.model, t) for t in u.tokens] for u in corpus.splits["target_adapt"]]
    dev = corpus.splits["target_dev"]
    sd = cache.get("target_dev", dev)
    opt = cfg.optim_adapt
    model.set_phase("adapt")
    adam = opt.make(model.trainable_parameters())
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 22]))
    prompt_frames = 0
    for epoch in range(1, opt.epochs + 1):
        model.set_phase("adapt")
        total, count = 0.0, 0
        for idx in bucket_batches([len(t) for t in texts], opt.batch_size, rng):
            rngs = [np.random.default_rng(np.random.SeedSequence([cfg.seed, 33, epoch, int(i)])) for i in idx]
            batch = [texts[i] for i in idx]
            prompt, lens = pseudo_prompt_batch(strategy, batch, model, te2sl, soft_prompt, rngs)
            if prompt is not None:
                prompt_frames += int(lens.sum()) if lens is not None else prompt.shape[0] * len(idx)
            loss = model.loss(prompt, lens, batch)
            _check_loss(loss, "adaptation", epoch)
            loss.backward()
            adam.step()
            total += float(loss.data) * len(idx)
            count += len(idx)
        model.set_phase("frozen")
        result.train_loss.append(total / count)
        result.val_metric.append(validation_wer(model, dev, sd, cfg.eval.max_len, cfg.eval.batch_size))
        save_model(out / f"epoch_{epoch:03d}.ckpt", model)
        log.info("adapt[%s] epoch %d loss %.4f dev WER %.4f", strategy.kind, epoch, result.train_loss[-1], result.val_metric[-1])
    best = select_checkpoint(result.val_metric)
    result.selected_epoch = best
    result.checkpoint = str(out / f"epoch_{best:03d}.ckpt")
    model = load_model(Path(result.checkpoint))
    model.set_phase("frozen")
    save_model(out / "best.ckpt", model)
    result.extra["prompt_frames"] = prompt_frames
    result.wall_clock = time.perf_counter() - t0
    result.write(out / "phase.json")
    return model, result


# ---------------------------------------------------------------------------
# reports

METHOD_NAMES = {
    "none": "Baseline",
    "text_only_ft": "Text-only FT",
    "soft_prompt": "Soft Prompt",
    "upsample_mask": "Upsample-and-Mask",
    "te2sl": "TE2SL",
}


def format_table(summaries: Sequence[dict], metric: str = "WER") -> str:
    """Human-readable comparison: Method | WER/CER (down) | Rec_OOV (up), both in %."""
    rows = [("Method", f"{metric} (down)", "Rec_OOV (up)")]
    for s in summaries:
        rec = "undef" if s["rec_oov"] is None else f"{100 * s['rec_oov']:.1f}"
        rows.append((METHOD_NAMES.get(s["strategy"], s["strategy"]), f"{100 * s['wer']:.1f}", rec))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = []
    for k, r in enumerate(rows):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_report(out: Path, summaries: Sequence[dict]) -> None:
    out = Path(out)
    with open(out / "report.jsonl", "w", encoding="utf-8") as fh:
        for s in summaries:
            fh.write(json.dumps(s, sort_keys=True) + "\n")
    (out / "report.txt").write_text(format_table(summaries), encoding="utf-8")


# ---------------------------------------------------------------------------
# full pipeline


def evaluate_strategy(
    cfg: ExperimentConfig, model: AsrModel, corpus: Corpus, cache: FeatureCache, kind: str, split: str
) -> MetricsReport:
    utts = corpus.splits[split]
    vocab = {word(w) for w in corpus.manifest["source_vocab"]}
    return evaluate(
        model,
        utts,
        cache.get(split, utts),
        vocab,
        cfg.eval.max_len,
        cfg.eval.batch_size,
        strategy=kind,
        split=split,
        seed=cfg.seed,
        config_digest=cfg.digest(),
    )


def run_strategy(
    cfg: ExperimentConfig,
    kind: str,
    source_model: AsrModel,
    corpus: Corpus,
    out: Path,
    cache: FeatureCache,
    te2sl: Te2slModule | None = None,
    soft_prompt: SoftPrompt | None = None,
    force: bool = False,
) -> list[dict]:
    """Adapt with one strategy, then evaluate every configured split."""
    out = Path(out)
    model, _ = adapt_target(
        cfg, source_model, cfg.strategy.strategy(kind), corpus, out / "adapt" / kind, cache, te2sl, soft_prompt, force
    )
    (out / "eval" / kind).mkdir(parents=True, exist_ok=True)
    summaries = []
    for split in cfg.eval.splits:
        report = evaluate_strategy(cfg, model, corpus, cache, kind, split)
        report.write(out / "eval" / kind / f"{split}.jsonl")
        summaries.append(report.summary())
    return summaries


# ---------------------------------------------------------------------------
# run directory layout: corpus/ source/ te2sl/ soft_prompt/ adapt/<kind>/ eval/<kind>/


def load_run_corpus(out: Path) -> Corpus:
    from .corpus import read_corpus

    path = Path(out) / "corpus"
    if not (path / "manifest.json").exists():
        raise ArtifactMissing(f"corpus not found at {path} (run generate-corpus first)")
    return read_corpus(path)


def load_run_source(out: Path) -> AsrModel:
    path = Path(out) / "source" / "best.ckpt"
    if not path.exists():
        raise ArtifactMissing(f"source model not found at {path} (run train-source first)")
    return load_model(path)


def load_run_te2sl(out: Path) -> Te2slModule:
    path = Path(out) / "te2sl" / "module.ckpt"
    if not path.exists():
        raise ArtifactMissing(f"TE2SL module not found at {path} (run train-te2sl first)")
    return load_module(path)


def load_run_soft_prompt(out: Path) -> SoftPrompt:
    path = Path(out) / "soft_prompt" / "prompt.ckpt"
    if not path.exists():
        raise ArtifactMissing(f"soft prompt not found at {path} (run learn-soft-prompt first)")
    return load_soft_prompt(path)


def load_run_adapted(out: Path, kind: str) -> AsrModel:
    path = Path(out) / "adapt" / kind / "best.ckpt"
    if not path.exists():
        raise ArtifactMissing(f"adapted model not found at {path} (run adapt --strategy {kind} first)")
    return load_model(path)


def evaluate_run(cfg: ExperimentConfig, out: Path, kind: str, force: bool = False) -> list[dict]:
    """Score an adapted model from ``out`` on every configured split."""
    out = Path(out)
    corpus = load_run_corpus(out)
    model = load_run_adapted(out, kind)
    dest = out / "eval" / kind
    _ensure_fresh(dest, force)
    cache = FeatureCache(model)
    summaries = []
    for split in cfg.eval.splits:
        report = evaluate_strategy(cfg, model, corpus, cache, kind, split)
        report.write(dest / f"{split}.jsonl")
        summaries.append(report.summary())
    return summaries


def collect_summaries(out: Path) -> list[dict]:
    """Summary lines of every evaluation under ``out/eval``, in strategy order."""
    root = Path(out) / "eval"
    if not root.is_dir():
        raise ArtifactMissing(f"no evaluations under {root} (run evaluate first)")
    order = {k: i for i, k in enumerate(METHOD_NAMES)}
    found = []
    for path in sorted(root.glob("*/*.jsonl")):
        lines = path.read_text(encoding="utf-8").splitlines()
        if lines:
            rec = json.loads(lines[-1])
            if rec.get("type") == "summary":
                found.append(rec)
    if not found:
        raise ArtifactMissing(f"no evaluation summaries under {root}")
    return sorted(found, key=lambda r: (order.get(r["strategy"], len(order)), r["strategy"], r["split"]))


def run_all(cfg: ExperimentConfig, out: Path, force: bool = False, jobs: int = 1) -> list[dict]:
    """generate corpus -> train source -> per strategy {prepare, adapt, evaluate} -> report."""
    from .corpus import generate_corpus, write_corpus

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    corpus_dir = out / "corpus"
    _ensure_fresh(corpus_dir, force)
    corpus = generate_corpus(cfg.corpus, cfg.seed)
    write_corpus(corpus, corpus_dir)
    model, _ = train_source(cfg, corpus, out / "source", force=force)
    cache = FeatureCache(model)
    kinds = list(cfg.strategy.compare)
    te2sl = soft_prompt = None
    if "te2sl" in kinds:
        te2sl, _ = prepare_te2sl(cfg, model, corpus, out / "te2sl", cache, force)
    if "soft_prompt" in kinds:
        soft_prompt, _ = prepare_soft_prompt(cfg, model, corpus, out / "soft_prompt", force)
    if jobs > 1 and len(kinds) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool_:
            futures = [
                pool_.submit(run_strategy, cfg, k, model, corpus, out, cache, te2sl, soft_prompt, force) for k in kinds
            ]
            per_kind = [f.result() for f in futures]
    else:
        per_kind = [run_strategy(cfg, k, model, corpus, out, cache, te2sl, soft_prompt, force) for k in kinds]
    summaries = [s for group in per_kind for s in group]
    write_report(out, summaries)
    return summaries
