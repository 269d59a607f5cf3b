import pytest

from nast.cli import run_command
from nast.data import read_lines
from nast.streaming import read_traces


def run(*argv):
    return run_command([str(a) for a in argv])


@pytest.fixture
def corpus(tmp_path):
    assert run("synth", "--task", "copy", "--n", 40, "--seed", 7, "--max-len", 8, "--vocab-size", 6, "--out", tmp_path / "d") == 0
    return tmp_path / "d"


def test_synth_creates_files(corpus):
    assert len(read_lines(corpus / "train.src")) == 40
    assert (corpus / "train.links").exists()


def test_usage_errors(capsys):
    assert run("synth", "--task", "copy", "--n", 3, "--out", "x", "--bogus") == 2
    assert "usage" in capsys.readouterr().err
    assert run("nope") == 2
    assert run("synth", "--task", "copy", "--n", "many", "--out", "x") == 2


def test_missing_file(tmp_path, capsys):
    missing = tmp_path / "none.ckpt"
    assert run("translate", "--checkpoint", missing, "--src", missing, "--out", tmp_path / "h") == 1
    assert str(missing) in capsys.readouterr().err


def _train(corpus, tmp_path, out="m.ckpt", extra=()):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\nembed_dim = 16\nheads = 2\nffn_dim = 32\nmax_positions = 12\nk = 1\n[train]\nsteps = 50\nwarmup = 3\n")
    return run(
        "train", "--src", corpus / "train.src", "--tgt", corpus / "train.tgt", "--out", tmp_path / out,
        "--config", cfg, "--steps", 4, "--batch-tokens", 128, "--log", tmp_path / "log.txt", *extra,
    )


def test_train_translate_evaluate(corpus, tmp_path, capsys):
    assert _train(corpus, tmp_path) == 0
    # the flag overrides the file's 50 steps
    assert "4 steps" in capsys.readouterr().out
    hyp, tr = tmp_path / "hyp.txt", tmp_path / "tr.jsonl"
    assert run("translate", "--checkpoint", tmp_path / "m.ckpt", "--src", corpus / "train.src", "--out", hyp, "--traces", tr, "--k", 0) == 0
    assert "k=0" in capsys.readouterr().out  # runtime k beats the stored k=1
    assert len(read_lines(hyp)) == 40 and len(read_traces(tr)) == 40
    report = tmp_path / "r.txt"
    code = run("evaluate", "--hyp", hyp, "--ref", corpus / "train.tgt", "--traces", tr,
               "--gold-links", corpus / "train.links", "--out", report, "--csv", tmp_path / "r.csv")
    assert code == 0
    text = report.read_text()
    assert "BLEU = " in text and "AL = " in text and "BLEU_hard" in text
    assert (tmp_path / "r.csv").read_text().startswith("sentences,BLEU")
    # stage 2 from the stage-1 checkpoint
    code = run("train", "--src", corpus / "train.src", "--tgt", corpus / "train.tgt", "--out", tmp_path / "m2.ckpt",
               "--init", tmp_path / "m.ckpt", "--stage", 2, "--steps", 2, "--l-min", 0, "--k", 0)
    assert code == 0


def test_end_to_end_determinism(corpus, tmp_path):
    outs = []
    for name in ("a", "b"):
        assert _train(corpus, tmp_path, f"{name}.ckpt") == 0
        hyp = tmp_path / f"{name}.txt"
        assert run("translate", "--checkpoint", tmp_path / f"{name}.ckpt", "--src", corpus / "train.src", "--out", hyp) == 0
        outs.append(hyp.read_bytes())
    assert outs[0] == outs[1]


def test_suites_exit_codes():
    assert run("oracle", "--n", 20) == 0
    assert run("gradcheck", "--n", 3) == 0
    assert run("gradcheck", "--n", 2, "--tol", 1e-30) == 1
