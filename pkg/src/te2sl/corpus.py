"""Synthetic paired/text-only corpora with a controlled source -> target vocabulary shift.

Each word has an acoustic prototype vector. An utterance's features are the
prototypes of its words, each repeated for a random number of frames, plus
Gaussian noise. Word sequences come from per-domain bigram chains; the target
domain holds words the source never uses (the OOV set).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import read_tensors, write_tensors

SPLITS_PAIRED = ("source_train", "source_dev", "source_test", "target_dev", "target_test")
SPLIT_DOMAIN = {
    "source_train": "source",
    "source_dev": "source",
    "source_test": "source",
    "target_adapt": "target",
    "target_dev": "target",
    "target_test": "target",
}


class CorpusError(ValueError):
    pass


@dataclass
class PrototypeTable:
    prototypes: np.ndarray  # [n_words, F_raw]
    sigma: float = 0.1
    d_lo: int = 6
    d_hi: int = 12

    @property
    def n_words(self) -> int:
        return self.prototypes.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.prototypes.shape[1]


@dataclass
class DomainSpec:
    vocab: np.ndarray  # word ids, sorted
    transitions: np.ndarray  # [|vocab|, |vocab|], rows sum to 1
    length_range: tuple[int, int] = (4, 10)
    start: np.ndarray | None = None  # defaults to the stationary distribution

    def __post_init__(self):
        self.vocab = np.asarray(self.vocab, dtype=np.int64)
        if self.vocab.size == 0:
            raise CorpusError("domain vocabulary is empty")
        n = self.vocab.size
        t = np.asarray(self.transitions, dtype=np.float64)
        if t.shape != (n, n) or (t < 0).any() or not np.allclose(t.sum(axis=1), 1.0, atol=1e-12):
            raise CorpusError("transition table must be a row-stochastic |V| x |V| matrix")
        self.transitions = t
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise CorpusError(f"bad utterance length range {self.length_range}")
        if self.start is None:
            self.start = stationary_distribution(t)


@dataclass
class Utterance:
    uid: str
    domain: str
    tokens: list[int]
    features: np.ndarray | None = None


@dataclass
class Corpus:
    splits: dict[str, list[Utterance]]
    table: PrototypeTable
    source: DomainSpec
    target: DomainSpec
    manifest: dict = field(default_factory=dict)

    @property
    def oov(self) -> set[int]:
        return set(self.manifest["oov"])


def stationary_distribution(t: np.ndarray) -> np.ndarray:
    # power iteration on a lazy chain converges for any finite chain
    lazy = 0.5 * (t + np.eye(t.shape[0]))
    p = np.full(t.shape[0], 1.0 / t.shape[0])
    for _ in range(10_000):
        nxt = p @ lazy
        if np.abs(nxt - p).max() < 1e-15:
            break
        p = nxt
    return p / p.sum()


def make_prototypes(n_words: int, feat_dim: int, rng: np.random.Generator, min_dist: float = 0.5) -> np.ndarray:
    """Unit-norm random prototypes, redrawn until pairwise distances exceed ``min_dist``."""
    for _ in range(100):
        protos = rng.normal(size=(n_words, feat_dim))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        d = np.linalg.norm(protos[:, None] - protos[None], axis=-1)
        np.fill_diagonal(d, np.inf)
        if d.min() > min_dist:
            return protos
    raise CorpusError("could not draw pairwise-distinct prototypes")


def _dirichlet(rng: np.random.Generator, width: int, count: int, concentration: float) -> np.ndarray:
    rows = rng.dirichlet(np.full(width, concentration), size=count)
    rows = np.maximum(rows, 1e-300)
    return rows / rows.sum(axis=1, keepdims=True)


def make_domain(
    vocab,
    rng: np.random.Generator,
    length_range=(4, 10),
    concentration: float = 0.1,
    oov=(),
    oov_mass: float = 0.0,
) -> DomainSpec:
    """Random bigram grammar over ``vocab``.

    When ``oov`` is given, every row sends exactly ``oov_mass`` of its
    probability to those words, so their stationary mass is ``oov_mass``.
    """
    vocab = np.sort(np.asarray(list(vocab), dtype=np.int64))
    n = vocab.size
    oov_set = set(int(w) for w in oov)
    is_oov = np.array([int(w) in oov_set for w in vocab])
    rows = np.zeros((n, n))
    if is_oov.any():
        n_in, n_out = int((~is_oov).sum()), int(is_oov.sum())
        rows[:, ~is_oov] = (1.0 - oov_mass) * _dirichlet(rng, n_in, n, concentration)
        rows[:, is_oov] = oov_mass * rng.dirichlet(np.full(n_out, 1.0), size=n)
        rows /= rows.sum(axis=1, keepdims=True)
    else:
        rows = _dirichlet(rng, n, n, concentration)
    return DomainSpec(vocab, rows, tuple(length_range))


def sample_tokens(domain: DomainSpec, rng: np.random.Generator) -> list[int]:
    lo, hi = domain.length_range
    length = int(rng.integers(lo, hi + 1))
    idx = int(rng.choice(domain.vocab.size, p=domain.start))
    out = [idx]
    for _ in range(length - 1):
        idx = int(rng.choice(domain.vocab.size, p=domain.transitions[idx]))
        out.append(idx)
    return [int(domain.vocab[i]) for i in out]


def synth_features(tokens, table: PrototypeTable, rng: np.random.Generator) -> np.ndarray:
    """Prototype of each word repeated d ~ U[d_lo, d_hi] frames, plus N(0, sigma^2) noise."""
    blocks = []
    for tok in tokens:
        if not 0 <= tok < table.n_words:
            raise CorpusError(f"unknown token {tok}")
        d = int(rng.integers(table.d_lo, table.d_hi + 1))
        blocks.append(np.repeat(table.prototypes[tok][None, :], d, axis=0))
    feats = np.concatenate(blocks, axis=0) if blocks else np.zeros((0, table.feat_dim))
    if table.sigma > 0:
        feats = feats + rng.normal(0.0, table.sigma, size=feats.shape)
    return feats


@dataclass
class CorpusConfig:
    n_source: int = 48
    n_target: int = 48
    n_oov: int = 16
    feat_dim: int = 16
    sigma: float = 0.1
    d_lo: int = 6
    d_hi: int = 12
    length_lo: int = 4
    length_hi: int = 10
    oov_mass: float = 0.3
    concentration: float = 0.1
    source_train: int = 2000
    source_dev: int = 200
    source_test: int = 200
    target_adapt: int = 2000
    target_dev: int = 200
    target_test: int = 300

    def split_sizes(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in SPLIT_DOMAIN}


def split_seeds(seed: int, names) -> dict[str, int]:
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: int(c.generate_state(1, dtype=np.uint64)[0]) for name, c in zip(names, children)}


def generate_corpus(cfg: CorpusConfig, seed: int, seeds: dict[str, int] | None = None) -> Corpus:
    """Deterministic source/target corpus. ``seeds`` overrides per-split seeds."""
    if cfg.n_oov < 1 or cfg.n_oov > cfg.n_target:
        raise CorpusError("need 1 <= n_oov <= n_target")
    if cfg.n_target - cfg.n_oov > cfg.n_source:
        raise CorpusError("shared target vocabulary cannot exceed the source vocabulary")
    world = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    n_words = cfg.n_source + cfg.n_oov
    table = PrototypeTable(make_prototypes(n_words, cfg.feat_dim, world), cfg.sigma, cfg.d_lo, cfg.d_hi)
    src_vocab = list(range(cfg.n_source))
    shared = list(range(cfg.n_source - (cfg.n_target - cfg.n_oov), cfg.n_source))
    oov = list(range(cfg.n_source, n_words))
    lengths = (cfg.length_lo, cfg.length_hi)
    source = make_domain(src_vocab, world, lengths, cfg.concentration)
    target = make_domain(shared + oov, world, lengths, cfg.concentration, oov=oov, oov_mass=cfg.oov_mass)

    sizes = cfg.split_sizes()
    seeds = dict(seeds) if seeds else split_seeds(seed, list(sizes))
    if len(set(seeds.values())) != len(seeds):
        raise CorpusError("split seeds overlap")

    splits: dict[str, list[Utterance]] = {}
    for name, n in sizes.items():
        rng = np.random.default_rng(seeds[name])
        dom_name = SPLIT_DOMAIN[name]
        dom = source if dom_name == "source" else target
        utts = []
        for i in range(n):
            toks = sample_tokens(dom, rng)
            feats = None if name == "target_adapt" else synth_features(toks, table, rng)
            utts.append(Utterance(f"{name}-{i:05d}", dom_name, toks, feats))
        splits[name] = utts

    oov_count = sum(t in set(oov) for u in splits["target_test"] for t in u.tokens)
    if oov_count == 0:
        raise CorpusError("target test split contains no OOV tokens; OOV recall would be vacuous")
    manifest = {
        "seed": seed,
        "split_seeds": seeds,
        "counts": {k: len(v) for k, v in splits.items()},
        "n_words": n_words,
        "feat_dim": cfg.feat_dim,
        "source_vocab": src_vocab,
        "target_vocab": shared + oov,
        "oov": sorted(set(shared + oov) - set(src_vocab)),
        "target_test_oov_tokens": oov_count,
    }
    return Corpus(splits, table, source, target, manifest)


def word(tok: int) -> str:
    return f"w{tok}"


def write_corpus(corpus: Corpus, root: Path) -> None:
    """One JSONL file per split; features in one tensor file per split."""
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    for name, utts in corpus.splits.items():
        blobs = {}
        with open(root / f"{name}.jsonl", "w", encoding="utf-8") as fh:
            for u in utts:
                rec = {"id": u.uid, "domain": u.domain, "tokens": " ".join(map(str, u.tokens))}
                if u.features is not None:
                    rec["features"] = f"features/{name}.bin#{u.uid}"
                    blobs[u.uid] = u.features
                fh.write(json.dumps(rec) + "\n")
        if blobs:
            write_tensors(root / "features" / f"{name}.bin", blobs)
    grammar = {
        "prototypes": corpus.table.prototypes,
        "source.transitions": corpus.source.transitions,
        "source.vocab": corpus.source.vocab.astype(np.float64),
        "target.transitions": corpus.target.transitions,
        "target.vocab": corpus.target.vocab.astype(np.float64),
    }
    write_tensors(root / "world.bin", grammar)
    manifest = dict(corpus.manifest)
    manifest["table"] = {"sigma": corpus.table.sigma, "d_lo": corpus.table.d_lo, "d_hi": corpus.table.d_hi}
    manifest["length_range"] = list(corpus.source.length_range)
    with open(root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_corpus(root: Path) -> Corpus:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no corpus manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    world = read_tensors(root / "world.bin")
    t = manifest["table"]
    table = PrototypeTable(world["prototypes"], t["sigma"], t["d_lo"], t["d_hi"])
    lengths = tuple(manifest["length_range"])
    source = DomainSpec(world["source.vocab"].astype(np.int64), world["source.transitions"], lengths)
    target = DomainSpec(world["target.vocab"].astype(np.int64), world["target.transitions"], lengths)
    splits = {}
    for name in manifest["counts"]:
        blob_cache: dict[str, dict[str, np.ndarray]] = {}
        utts = []
        with open(root / f"{name}.jsonl", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                feats = None
                if "features" in rec:
                    path, key = rec["features"].split("#", 1)
                    if path not in blob_cache:
                        blob_cache[path] = read_tensors(root / path)
                    feats = blob_cache[path][key]
                toks = [int(x) for x in rec["tokens"].split()]
                utts.append(Utterance(rec["id"], rec["domain"], toks, feats))
        splits[name] = utts
    return Corpus(splits, table, source, target, manifest)
