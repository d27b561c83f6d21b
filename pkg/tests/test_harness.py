import json

import pytest
from conftest import tiny_config

from te2sl import harness
from te2sl.config import ExperimentConfig, dump_config, load_config
from te2sl.harness import (
    collect_summaries,
    evaluate_run,
    format_table,
    load_model,
    load_run_corpus,
    load_run_source,
    run_all,
    select_checkpoint,
)
from te2sl.model import word_to_id
from te2sl.numerics import ConfigError


@pytest.mark.parametrize("metrics,expect", [([0.5, 0.3, 0.4], 2), ([0.3, 0.3], 1), ([0.9], 1), ([0.4, 0.4, 0.1], 3)])
def test_select_checkpoint(metrics, expect):
    assert select_checkpoint(metrics) == expect


def test_select_checkpoint_empty():
    with pytest.raises(ValueError):
        select_checkpoint([])


# ---------------------------------------------------------------------------
# configuration


def test_unknown_keys_and_sections_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(None, ["model.nonsense=1"])
    with pytest.raises(ConfigError):
        load_config(None, ["bogus.lr=1"])
    path = tmp_path / "c.ini"
    path.write_text("[optim.adapt]\nlearning_rate = 0.1\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        load_config(None, ["optim.adapt.lr=fast"])
    with pytest.raises(ConfigError):
        load_config(None, ["strategy.mask_frac=1.5"])
    with pytest.raises(ConfigError):
        load_config(None, ["strategy.d_min=4", "strategy.d_max=2"])
    with pytest.raises(ConfigError):
        load_config(None, ["model.n_words=10"])


def test_overrides_apply():
    cfg = load_config(None, ["optim.source.lr=0.01", "strategy.compare=none,te2sl", "experiment.seed=7"])
    assert cfg.optim_source.lr == 0.01
    assert cfg.strategy.compare == ("none", "te2sl")
    assert cfg.seed == 7


def test_dump_load_round_trip(tmp_path):
    cfg = load_config(None, ["optim.adapt.epochs=3", "strategy.mask_spans=1"])
    path = tmp_path / "c.ini"
    path.write_text(dump_config(cfg))
    assert load_config(path).digest() == cfg.digest()
    assert ExperimentConfig().digest() != cfg.digest()


# ---------------------------------------------------------------------------
# full tiny pipeline


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = tiny_config()
    return out, cfg, run_all(cfg, out)


def _params(path):
    model = load_model(path)
    return {name: p.data.copy() for name, p in model.named_parameters()}


def test_layout(run_dir):
    out, cfg, summaries = run_dir
    for rel in ("corpus/manifest.json", "source/best.ckpt", "te2sl/module.ckpt", "soft_prompt/prompt.ckpt", "report.txt"):
        assert (out / rel).exists(), rel
    for kind in cfg.strategy.compare:
        assert (out / "adapt" / kind / "best.ckpt").exists()
        assert (out / "eval" / kind / "target_test.jsonl").exists()
    assert [s["strategy"] for s in summaries] == list(cfg.strategy.compare)


def test_no_adaptation_is_the_source_model(run_dir):
    out, _, _ = run_dir
    src = _params(out / "source" / "best.ckpt")
    none = _params(out / "adapt" / "none" / "best.ckpt")
    assert all(src[k].tobytes() == none[k].tobytes() for k in src)


@pytest.mark.parametrize("kind", ["text_only_ft", "soft_prompt", "upsample_mask", "te2sl"])
def test_adaptation_changes_only_lora(run_dir, kind):
    out, _, _ = run_dir
    src = _params(out / "source" / "best.ckpt")
    new = _params(out / "adapt" / kind / "best.ckpt")
    changed = {k for k in src if src[k].tobytes() != new[k].tobytes()}
    assert changed and all(".lora_" in k for k in changed)


def test_phase_records(run_dir):
    out, cfg, _ = run_dir
    src = json.loads((out / "source" / "phase.json").read_text())
    assert len(src["val_metric"]) == cfg.optim_source.epochs
    assert src["selected_epoch"] == select_checkpoint(src["val_metric"])
    te = json.loads((out / "te2sl" / "phase.json").read_text())
    assert {"heldout_mse_raw", "heldout_mse_refined"} <= set(te["extra"])


def test_report_is_consistent(run_dir):
    out, _, summaries = run_dir
    lines = [json.loads(x) for x in (out / "report.jsonl").read_text().splitlines()]
    assert lines == summaries
    assert (out / "report.txt").read_text() == format_table(summaries)
    for s in summaries:
        records = [json.loads(x) for x in (out / "eval" / s["strategy"] / "target_test.jsonl").read_text().splitlines()]
        utts = [r for r in records if r["type"] == "utterance"]
        n = sum(r["N"] for r in utts)
        errs = sum(r["S"] + r["D"] + r["I"] for r in utts)
        assert n == s["N"] and s["wer"] == pytest.approx(errs / n)
        assert records[-1] == s
    assert collect_summaries(out) == summaries


def test_evaluation_is_deterministic(run_dir):
    out, cfg, _ = run_dir
    path = out / "eval" / "te2sl" / "target_test.jsonl"
    before = path.read_bytes()
    with pytest.raises(ConfigError):
        evaluate_run(cfg, out, "te2sl")
    evaluate_run(cfg, out, "te2sl", force=True)
    assert path.read_bytes() == before


def test_rerun_requires_force(run_dir):
    out, cfg, _ = run_dir
    with pytest.raises(ConfigError):
        run_all(cfg, out)


def test_perfect_decoder_scores_zero(run_dir, monkeypatch):
    out, cfg, _ = run_dir
    corpus = load_run_corpus(out)
    model = load_run_source(out)
    utts = corpus.splits["target_test"]
    refs = [[word_to_id(cfg.model, t) for t in u.tokens] for u in utts]
    monkeypatch.setattr(harness, "decode_split", lambda *a, **k: refs)
    report = harness.evaluate_strategy(cfg, model, corpus, harness.FeatureCache(model), "none", "target_test")
    assert report.error_rate == 0.0
    assert report.oov_recall in (1.0, None)


def test_same_seed_same_results(run_dir, tmp_path):
    out, cfg, summaries = run_dir
    again = run_all(tiny_config(), tmp_path)
    assert again == summaries
    a = (out / "adapt" / "te2sl" / "best.ckpt").read_bytes()
    assert (tmp_path / "adapt" / "te2sl" / "best.ckpt").read_bytes() == a

