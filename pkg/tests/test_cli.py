import filecmp

import pytest

from latent_recourse.cli import UsageError, default_seed, parse_grid, parse_rows, run
from latent_recourse.errors import DataError


def _ok(argv):
    rc = run([str(a) for a in argv])
    assert rc == 0, argv
    return rc


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    _ok(["--seed", 2, "synth", "classification", "--n", 400, "--out", d / "all.csv", "--schema-out", d / "s.txt"])
    _ok(["--seed", 2, "split", "--data", d / "all.csv", "--schema", d / "s.txt", "--prefix", f"{d}/"])
    _ok(["--seed", 1, "train-clf", "--data", d / "train.csv", "--schema", d / "s.txt", "--out", d / "clf.model",
         "--epochs", 10, "--lr", 0.01])
    _ok(["--seed", 1, "train-vae", "--data", d / "train.csv", "--schema", d / "s.txt", "--out", d / "vae.model",
         "--epochs", 8, "--conditional", "--stats-from", d / "clf.model"])
    return d


def _revise(d, out, *extra):
    return run([str(a) for a in ["revise", "--data", d / "test.csv", "--schema", d / "s.txt", "--clf",
                                 d / "clf.model", "--vae", d / "vae.model", "--out", out, "--rows", "0..11",
                                 "--lambda-grid", "1,0.1", "--tau-max", 60, *extra]])


def test_split_writes_three_files(work):
    sizes = [len((work / f"{n}.csv").read_text().splitlines()) - 1 for n in ("train", "val", "test")]
    assert sizes == [240, 80, 80]


def test_revise_report(work):
    assert _revise(work, work / "r.tsv", "--trajectory-out", work / "traj.csv") == 0
    text = (work / "r.tsv").read_text()
    head = text.splitlines()[0].split("\t")
    assert head[:3] == ["row", "lambda", "success"]
    assert "selected" in text
    traj = (work / "traj.csv").read_text().splitlines()
    assert traj[0].startswith("row,lambda,iteration,label,prob")
    assert len(traj) > 1


def test_threads_byte_identical(work):
    assert _revise(work, work / "t1.tsv", "--threads", 1) == 0
    assert _revise(work, work / "t3.tsv", "--threads", 3) == 0
    assert filecmp.cmp(work / "t1.tsv", work / "t3.tsv", shallow=False)


def test_rerun_byte_identical(work, tmp_path):
    for name in ("a", "b"):
        _ok(["--seed", 5, "train-clf", "--data", work / "train.csv", "--schema", work / "s.txt",
             "--out", tmp_path / f"{name}.model", "--epochs", 2])
    assert filecmp.cmp(tmp_path / "a.model", tmp_path / "b.model", shallow=False)


def test_report_markdown(work):
    assert run(["report", "--data", str(work / "test.csv"), "--schema", str(work / "s.txt"), "--clf",
                str(work / "clf.model"), "--vae", str(work / "vae.model"), "--rows", "0",
                "--lambda-grid", "1,0.1", "--tau-max", "40", "--out", str(work / "rep.md")]) == 0
    text = (work / "rep.md").read_text()
    assert text.startswith("row 0\n| attribute | original | REVISE-1.0")


def test_report_needs_rows(work, capsys):
    rc = run(["report", "--data", str(work / "test.csv"), "--schema", str(work / "s.txt"), "--clf",
              str(work / "clf.model"), "--vae", str(work / "vae.model")])
    assert rc == 1
    assert "--rows" in capsys.readouterr().err


def test_unknown_flag(capsys):
    assert run(["revise", "--bogus"]) == 1
    assert run([]) == 1


def test_missing_file(work, tmp_path):
    rc = run(["train-clf", "--data", str(tmp_path / "none.csv"), "--schema", str(work / "s.txt"),
              "--out", str(tmp_path / "m")])
    assert rc == 2


def test_truncated_model(work, tmp_path, capsys):
    text = (work / "vae.model").read_text()
    (tmp_path / "cut.model").write_text(text[: len(text) // 3])
    rc = run(["revise", "--data", str(work / "test.csv"), "--schema", str(work / "s.txt"), "--clf",
              str(work / "clf.model"), "--vae", str(tmp_path / "cut.model"), "--out", str(tmp_path / "o.tsv")])
    assert rc == 2
    assert "byte" in capsys.readouterr().err


def test_model_kind_mismatch(work, tmp_path):
    rc = run(["revise", "--data", str(work / "test.csv"), "--schema", str(work / "s.txt"), "--clf",
              str(work / "vae.model"), "--vae", str(work / "vae.model"), "--out", str(tmp_path / "o.tsv")])
    assert rc == 2


def test_rows_out_of_range(work, tmp_path):
    assert _revise(work, tmp_path / "o.tsv", "--rows", "0..5000") == 2


def test_bad_threads(work, tmp_path):
    assert _revise(work, tmp_path / "o.tsv", "--threads", 0) == 1


@pytest.fixture(scope="module")
def causal_work(tmp_path_factory):
    d = tmp_path_factory.mktemp("causal")
    _ok(["synth", "causal", "--n", 600, "--out", d / "c.csv", "--schema-out", d / "s.txt",
         "--truth-out", d / "truth.csv"])
    _ok(["train-causal", "--data", d / "c.csv", "--schema", d / "s.txt", "--out", d / "m.model", "--epochs", 6])
    return d


def test_revise_causal(causal_work):
    d = causal_work
    _ok(["revise-causal", "--data", d / "c.csv", "--schema", d / "s.txt", "--model", d / "m.model",
         "--do-t", 1, "--rows", "0..9", "--lambda-grid", "0.1", "--tau-max", 40, "--out", d / "rc.tsv"])
    lines = (d / "rc.tsv").read_text().splitlines()
    assert lines[0].startswith("row\tlambda\tsuccess")
    assert (d / "truth.csv").exists()


def test_immutable_treatment_is_usage_error(causal_work, tmp_path):
    d = causal_work
    rc = run(["train-causal", "--data", str(d / "c.csv"), "--schema", str(d / "s.txt"),
              "--out", str(tmp_path / "m"), "--immutable", "t", "--epochs", "1"])
    assert rc == 1


def test_audit_confounding(tmp_path):
    d = tmp_path
    _ok(["synth", "aux-confounded", "--n", 400, "--bias", 1.0, "--out", d / "a.csv", "--schema-out", d / "s.txt"])
    _ok(["train-clf", "--data", d / "a.csv", "--schema", d / "s.txt", "--label", "label", "--out", d / "b.model",
         "--epochs", 4, "--lr", 0.01])
    for name, label in (("u", "label"), ("r", "a")):
        _ok(["train-clf", "--data", d / "a.csv", "--schema", d / "s.txt", "--label", label,
             "--out", d / f"{name}.model", "--epochs", 4, "--lr", 0.01, "--stats-from", d / "b.model"])
    _ok(["train-vae", "--data", d / "a.csv", "--schema", d / "s.txt", "--out", d / "v.model", "--epochs", 4,
         "--stats-from", d / "b.model"])
    _ok(["audit-confounding", "--data", d / "a.csv", "--schema", d / "s.txt", "--biased", d / "b.model",
         "--unbiased", d / "u.model", "--reference", d / "r.model", "--vae", d / "v.model", "--rows", "0..19",
         "--lam", 0.1, "--tau-max", 40, "--out", d / "flip.tsv"])
    lines = (d / "flip.tsv").read_text().splitlines()
    assert len(lines) == 3
    assert {ln.split("\t")[0] for ln in lines[1:]} == {"biased", "unbiased"}


def test_stats_mismatch_rejected(tmp_path):
    d = tmp_path
    _ok(["synth", "classification", "--n", 200, "--out", d / "a.csv", "--schema-out", d / "s.txt"])
    _ok(["--seed", 3, "split", "--data", d / "a.csv", "--schema", d / "s.txt", "--prefix", d / "p"])
    _ok(["train-clf", "--data", d / "a.csv", "--schema", d / "s.txt", "--out", d / "c.model", "--epochs", 1])
    _ok(["train-vae", "--data", d / "ptrain.csv", "--schema", d / "s.txt", "--out", d / "v.model", "--epochs", 1])
    rc = run(["revise", "--data", str(d / "a.csv"), "--schema", str(d / "s.txt"), "--clf", str(d / "c.model"),
              "--vae", str(d / "v.model"), "--out", str(d / "o.tsv")])
    assert rc == 2


# ---- helpers

def test_parse_rows():
    assert parse_rows("3,7,10..12", 20).tolist() == [3, 7, 10, 11, 12]
    assert parse_rows("0..2,1", 3).tolist() == [0, 1, 2]
    with pytest.raises(UsageError):
        parse_rows("a..b", 10)
    with pytest.raises(UsageError):
        parse_rows("5..2", 10)
    with pytest.raises(DataError):
        parse_rows("10", 10)


def test_parse_grid():
    assert parse_grid("1, 0.1,0.01") == (1.0, 0.1, 0.01)
    with pytest.raises(UsageError):
        parse_grid("")
    with pytest.raises(UsageError):
        parse_grid("x")


def test_seed_from_environment(monkeypatch):
    monkeypatch.delenv("REVISE_SEED", raising=False)
    assert default_seed() == 0
    monkeypatch.setenv("REVISE_SEED", "17")
    assert default_seed() == 17
    monkeypatch.setenv("REVISE_SEED", "x")
    with pytest.raises(UsageError):
        default_seed()


def test_env_seed_matches_flag(tmp_path, monkeypatch):
    monkeypatch.setenv("REVISE_SEED", "9")
    _ok(["synth", "classification", "--n", 50, "--out", tmp_path / "env.csv"])
    monkeypatch.delenv("REVISE_SEED")
    _ok(["--seed", 9, "synth", "classification", "--n", 50, "--out", tmp_path / "flag.csv"])
    assert filecmp.cmp(tmp_path / "env.csv", tmp_path / "flag.csv", shallow=False)
    _ok(["synth", "classification", "--n", 50, "--out", tmp_path / "zero.csv"])
    assert not filecmp.cmp(tmp_path / "env.csv", tmp_path / "zero.csv", shallow=False)


def test_version(capsys):
    with pytest.raises(SystemExit):
        run(["--version"])
    assert capsys.readouterr().out.strip()
