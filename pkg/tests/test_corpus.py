import filecmp

import numpy as np
import pytest

from te2sl.corpus import (
    CorpusConfig,
    CorpusError,
    DomainSpec,
    PrototypeTable,
    generate_corpus,
    make_domain,
    read_corpus,
    sample_tokens,
    synth_features,
    write_corpus,
)

SMALL = CorpusConfig(source_train=40, source_dev=10, source_test=10, target_adapt=40, target_dev=10, target_test=30)


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(SMALL, seed=5)


def test_single_token_noiseless():
    protos = np.eye(3)
    table = PrototypeTable(protos, sigma=0.0, d_lo=3, d_hi=3)
    feats = synth_features([1], table, np.random.default_rng(0))
    np.testing.assert_array_equal(feats, np.repeat(protos[1][None], 3, axis=0))


def test_feature_length_is_sum_of_durations():
    table = PrototypeTable(np.eye(4), sigma=0.1, d_lo=6, d_hi=12)
    rng = np.random.default_rng(1)
    for _ in range(50):
        toks = list(rng.integers(0, 4, size=rng.integers(1, 8)))
        probe = np.random.default_rng(7)
        durs = [int(probe.integers(6, 13)) for _ in toks]
        probe = np.random.default_rng(7)
        assert synth_features(toks, table, probe).shape[0] == sum(durs)


def test_distinct_tokens_give_distinct_blocks(corpus):
    table = PrototypeTable(corpus.table.prototypes, sigma=0.0, d_lo=2, d_hi=2)
    feats = synth_features([0, 1], table, np.random.default_rng(0))
    assert not np.array_equal(feats[:2], feats[2:])


def test_deterministic_chain():
    t = np.zeros((3, 3))
    t[0, 1] = t[1, 2] = t[2, 0] = 1.0
    dom = DomainSpec(np.array([10, 11, 12]), t, (5, 5), start=np.array([1.0, 0.0, 0.0]))
    assert sample_tokens(dom, np.random.default_rng(0)) == [10, 11, 12, 10, 11]


def test_lengths_within_range():
    dom = make_domain(range(8), np.random.default_rng(0), (4, 10))
    rng = np.random.default_rng(1)
    lengths = [len(sample_tokens(dom, rng)) for _ in range(1000)]
    assert min(lengths) >= 4 and max(lengths) <= 10


def test_oov_frequency_matches_mass():
    oov = list(range(48, 64))
    dom = make_domain(list(range(16, 48)) + oov, np.random.default_rng(2), (4, 10), 0.1, oov=oov, oov_mass=0.3)
    rng = np.random.default_rng(3)
    toks = []
    while len(toks) < 10_000:
        toks.extend(sample_tokens(dom, rng))
    freq = np.isin(toks, oov).mean()
    assert 0.3 * 0.8 <= freq <= 0.3 * 1.2


def test_bad_transition_table():
    with pytest.raises(CorpusError):
        DomainSpec(np.array([0, 1]), np.array([[0.5, 0.4], [0.5, 0.5]]))


def test_split_sizes_and_manifest(corpus):
    assert {k: len(v) for k, v in corpus.splits.items()} == SMALL.split_sizes()
    assert set(corpus.manifest["oov"]) == set(corpus.manifest["target_vocab"]) - set(corpus.manifest["source_vocab"])
    assert corpus.oov == set(range(48, 64))
    assert all(u.features is None for u in corpus.splits["target_adapt"])


def test_real_pairs_allow_upsampling(corpus):
    for name in ("source_train", "target_test"):
        for u in corpus.splits[name]:
            assert u.features.shape[0] // 5 >= len(u.tokens)


def test_domains_respect_vocabularies(corpus):
    src = set(corpus.manifest["source_vocab"])
    tgt = set(corpus.manifest["target_vocab"])
    assert all(set(u.tokens) <= src for u in corpus.splits["source_train"])
    assert all(set(u.tokens) <= tgt for u in corpus.splits["target_adapt"])


def test_overlapping_split_seeds_rejected():
    seeds = {name: 1 for name in SMALL.split_sizes()}
    with pytest.raises(CorpusError):
        generate_corpus(SMALL, seed=0, seeds=seeds)


def test_regeneration_is_byte_identical(tmp_path):
    write_corpus(generate_corpus(SMALL, seed=9), tmp_path / "a")
    write_corpus(generate_corpus(SMALL, seed=9), tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for sub in cmp.subdirs.values():
        assert not sub.diff_files
    assert (tmp_path / "a" / "features" / "source_train.bin").read_bytes() == (
        tmp_path / "b" / "features" / "source_train.bin"
    ).read_bytes()


def test_round_trip_through_disk(tmp_path, corpus):
    write_corpus(corpus, tmp_path)
    back = read_corpus(tmp_path)
    for name, utts in corpus.splits.items():
        for u, v in zip(utts, back.splits[name]):
            assert u.uid == v.uid and u.tokens == v.tokens
            if u.features is not None:
                assert u.features.tobytes() == v.features.tobytes()
    np.testing.assert_array_equal(back.target.transitions, corpus.target.transitions)
