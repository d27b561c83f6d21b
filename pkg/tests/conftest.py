import pytest

from te2sl.config import load_config

# A pipeline small enough to run end to end in a few seconds.
TINY = [
    "corpus.n_source=8",
    "corpus.n_target=8",
    "corpus.n_oov=3",
    "corpus.feat_dim=6",
    "corpus.d_lo=6",
    "corpus.d_hi=8",
    "corpus.length_lo=2",
    "corpus.length_hi=4",
    "corpus.source_train=24",
    "corpus.source_dev=6",
    "corpus.source_test=6",
    "corpus.target_adapt=24",
    "corpus.target_dev=6",
    "corpus.target_test=10",
    "model.feat_dim=6",
    "model.enc_dim=8",
    "model.enc_heads=2",
    "model.enc_kernel=3",
    "model.proj_hidden=32",
    "model.d_model=16",
    "model.lm_layers=1",
    "model.lm_heads=2",
    "model.lm_hidden=32",
    "model.n_words=11",
    "model.lora_rank=2",
    "strategy.te2sl_hidden=16",
    "strategy.te2sl_blocks=1",
    "strategy.te2sl_heads=2",
    "strategy.te2sl_kernel=3",
    "strategy.soft_prompt_len=3",
    "strategy.soft_prompt_epochs=2",
    "optim.source.epochs=2",
    "optim.source.batch_size=8",
    "optim.adapt.epochs=2",
    "optim.adapt.batch_size=8",
    "optim.te2sl.epochs=2",
    "optim.te2sl.batch_size=8",
    "eval.max_len=6",
]


def tiny_config(*extra):
    return load_config(None, TINY + list(extra))


@pytest.fixture
def tiny_cfg():
    return tiny_config()


# one PASS/FAIL line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
