import json
import os
import subprocess
import sys

import pytest

from jointse import training
from jointse.cli import main
from jointse.signal import read_wav

TINY_CFG = """\
train.mode = {mode}
train.steps = 2
train.batch_size = 4
train.valid_every = 2
se.layers = 1
se.hidden_units = 8
asr.encoder_layers = 1
asr.decoder_layers = 1
asr.d_model = 16
asr.heads = 2
asr.ff_hidden = 32
corpus.dir = {corpus}
"""


def write_cfg(tmp_path, corpus, mode="mtjl"):
    path = tmp_path / f"{mode}.cfg"
    path.write_text(TINY_CFG.format(mode=mode, corpus=corpus))
    return str(path)


@pytest.fixture(scope="module")
def trained(tiny_corpus, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = write_cfg(tmp, tiny_corpus, "dc-mtjl")
    assert main(["train", "--config", cfg, "--run-dir", str(tmp / "run")]) == 0
    return tmp / "run"


def test_gen_corpus_writes_manifests(tmp_path, capsys):
    assert main(["gen-corpus", "--out", str(tmp_path / "c"), "--train", "2", "--valid", "1",
                 "--test", "1", "--seed", "5"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["counts"] == {"train": 2, "valid": 1, "test": 1}
    assert abs(summary["snr_db"]["min"]) < 0.1 and abs(summary["snr_db"]["max"]) < 0.1
    assert os.path.exists(tmp_path / "c" / "train.jsonl")


def test_train_writes_run_artifacts(trained):
    for f in ("config.resolved", "metrics.jsonl", "report.json", "ckpt/last.ckpt", "ckpt/best.ckpt"):
        assert os.path.exists(trained / f), f
    report = json.loads((trained / "report.json").read_text())
    assert report["steps"] == 2 and report["best_step"] == 2
    assert "train.mode = dc-mtjl" in (trained / "config.resolved").read_text()


def test_flag_overrides_reach_the_resolved_config(tiny_corpus, tmp_path):
    cfg = write_cfg(tmp_path, tiny_corpus)
    args = ["train", "--config", cfg, "--run-dir", str(tmp_path / "r"), "--mode", "joint",
            "--beta", "0.5", "--phase", "discard", "--mask-act", "mish", "--steps", "1"]
    assert main(args) == 0
    text = (tmp_path / "r" / "config.resolved").read_text()
    for line in ("train.mode = joint", "weights.beta = 0.5", "se.phase = discard",
                 "se.mask_activation = mish", "train.steps = 1"):
        assert line in text


def test_decode_enhance_evaluate(trained, tiny_corpus, tmp_path, capsys):
    ckpt = str(trained / "ckpt" / "last.ckpt")
    wav = os.path.join(tiny_corpus, "test", "test-00000_noisy.wav")
    assert main(["decode", "--ckpt", ckpt, "--in", wav, "--mode", "ctc"]) == 0
    assert set(capsys.readouterr().out.strip()) <= set("abcdefghij")
    out = str(tmp_path / "enh.wav")
    assert main(["enhance", "--ckpt", ckpt, "--in", wav, "--out", out]) == 0
    assert len(read_wav(out)) == len(read_wav(wav))
    capsys.readouterr()
    assert main(["evaluate", "--ckpt", ckpt, "--manifest", os.path.join(tiny_corpus, "test.jsonl")]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["metric"] == "CER" and result["utterances"] == 4


def test_resume_continues_step_count(trained, tiny_corpus, tmp_path, capsys):
    cfg = write_cfg(tmp_path, tiny_corpus, "dc-mtjl")
    capsys.readouterr()
    assert main(["train", "--config", cfg, "--run-dir", str(tmp_path / "r"), "--steps", "3",
                 "--resume", str(trained / "ckpt" / "last.ckpt")]) == 0
    assert json.loads(capsys.readouterr().out)["steps"] == 3


def test_usage_and_io_errors_exit_2(tmp_path, capsys):
    assert main(["decode", "--ckpt", str(tmp_path / "none.ckpt"), "--in", "x.wav"]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["train"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("weights.beta = 3\n")
    assert main(["train", "--config", str(bad), "--run-dir", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_divergence_exits_3(tiny_corpus, tmp_path, monkeypatch, capsys):
    original = training.Trainer.compute_gradients

    def poisoned(self, batch):
        loss, grads, parts = original(self, batch)
        return float("nan"), grads, parts

    monkeypatch.setattr(training.Trainer, "compute_gradients", poisoned)
    cfg = write_cfg(tmp_path, tiny_corpus)
    assert main(["train", "--config", cfg, "--run-dir", str(tmp_path / "r")]) == 3
    err = capsys.readouterr().err
    assert "non-finite" in err and '"step": 1' in err


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--list"]) == 0
    assert "se_chain_preserve" in capsys.readouterr().out.split()
    assert main(["gradcheck", "--case", "mul", "--case", "tanh"]) == 0
    assert "6/6 checks passed" in capsys.readouterr().out
    assert main(["gradcheck", "--case", "bogus"]) == 2


def test_compare_command_on_minimal_plan(tiny_corpus, tmp_path, capsys):
    plan = tmp_path / "p.plan"
    plan.write_text(TINY_CFG.format(mode="mtjl", corpus=tiny_corpus).replace("train.steps = 2", "train.steps = 1")
                    + "plan.systems = S1, S5\nplan.gammas = 0.5\nplan.activations = metaacon\n")
    assert main(["compare", "--plan", str(plan), "--out", str(tmp_path / "out")]) == 0
    text = capsys.readouterr().out
    assert "Synthetic" in text and "S5" in text and "gamma=0.5" in text and "act=metaacon" in text
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert [r["key"] for r in report["rows"]] == ["S1", "S5", "gamma=0.5", "act=metaacon"]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "jointse", "gradcheck", "--list"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "ctc" in proc.stdout.split()
