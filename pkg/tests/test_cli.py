import subprocess
import sys

from conftest import TINY

from te2sl.checkpoint import encode_tensors
from te2sl.cli import main

TINY_ARGS = [a for kv in TINY for a in ("--set", kv)]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_help_exits_zero(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0 and "run-all" in out


def test_usage_errors_exit_one(capsys):
    assert run(capsys)[0] == 1
    assert run(capsys, "adapt", "--strategy", "magic")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1


def test_bad_config_exits_one(capsys, tmp_path):
    code, _, err = run(capsys, "generate-corpus", "--out", str(tmp_path), "--set", "model.nope=3")
    assert code == 1 and "model.nope" in err
    code, _, err = run(capsys, "generate-corpus", "--out", str(tmp_path), "--config", str(tmp_path / "missing.ini"))
    assert code == 1


def test_missing_artifact_names_the_fix(capsys, tmp_path):
    code, _, err = run(capsys, "adapt", "--strategy", "te2sl", "--out", str(tmp_path), *TINY_ARGS)
    assert code == 1
    assert "train-te2sl" in err
    code, _, err = run(capsys, "train-source", "--out", str(tmp_path), *TINY_ARGS)
    assert code == 1 and "generate-corpus" in err


def test_corrupt_checkpoint_exits_two(capsys, tmp_path):
    run(capsys, "generate-corpus", "--out", str(tmp_path), *TINY_ARGS)
    (tmp_path / "source").mkdir()
    blob = bytearray(encode_tensors({}))
    blob[-1] ^= 0xFF
    (tmp_path / "source" / "best.ckpt").write_bytes(bytes(blob))
    code, _, err = run(capsys, "train-te2sl", "--out", str(tmp_path), *TINY_ARGS)
    assert code == 2 and "checksum" in err


def test_gradcheck_output(capsys):
    code, out, _ = run(capsys, "gradcheck", "--seed", "3")
    lines = out.strip().splitlines()
    assert code == 0
    assert len(lines) >= 9
    assert all(line.endswith("ok") and "max_rel_err=" in line for line in lines)


def test_step_by_step_equals_run_all(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for cmd in ("generate-corpus", "train-source", "train-te2sl", "learn-soft-prompt"):
        code, _, err = run(capsys, cmd, "--out", str(a), *TINY_ARGS)
        assert code == 0, err
    for kind in ("none", "text_only_ft", "soft_prompt", "upsample_mask", "te2sl"):
        assert run(capsys, "adapt", "--strategy", kind, "--out", str(a), *TINY_ARGS)[0] == 0
        assert run(capsys, "evaluate", "--strategy", kind, "--out", str(a), *TINY_ARGS)[0] == 0
    code, table_a, _ = run(capsys, "report", "--out", str(a), *TINY_ARGS)
    assert code == 0 and "TE2SL" in table_a
    code, table_b, _ = run(capsys, "run-all", "--out", str(b), *TINY_ARGS)
    assert code == 0
    assert table_a == table_b
    assert (a / "report.jsonl").read_bytes() == (b / "report.jsonl").read_bytes()
    # outputs are write-once without --force
    assert run(capsys, "generate-corpus", "--out", str(a), *TINY_ARGS)[0] == 1
    assert run(capsys, "generate-corpus", "--out", str(a), "--force", *TINY_ARGS)[0] == 0


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "te2sl.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gradcheck" in proc.stdout


def test_seed_flag(capsys, tmp_path):
    for name, seed in (("a", "1"), ("b", "1"), ("c", "2")):
        assert run(capsys, "generate-corpus", "--seed", seed, "--out", str(tmp_path / name), *TINY_ARGS)[0] == 0
    feats = lambda name: (tmp_path / name / "corpus" / "features" / "source_train.bin").read_bytes()  # noqa: E731
    assert feats("a") == feats("b") != feats("c")
