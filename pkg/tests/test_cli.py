import json

import pytest

from transferlab.pipeline.cli import main
from transferlab.tasks import load_bitext

TINY_YAML = """\
name: cli
upstream_n: 160
downstream_n: 100
model_layers: 1
model_heads: 2
model_d_model: 16
model_d_ffn: 32
pretrain_max_steps: 4
finetune_max_steps: 3
eval_every: 2
batch_size: 16
decode_max_len: 8
"""


@pytest.fixture
def manifest(tmp_path):
    path = tmp_path / "m.yaml"
    path.write_text(TINY_YAML)
    return path


def test_gen_and_prep(tmp_path, capsys):
    out = tmp_path / "copy.tsv"
    assert main(["gen", "copy", "--n", "50", "--vocab-size", "6", "--seed", "3", "--out", str(out)]) == 0
    assert len(load_bitext(out)) == 50
    assert main(["prep", str(out), "--swap", "--downsample", "40", "--split", "0.25", "--seed", "1",
                 "--out", str(tmp_path / "train.tsv"), "--test-out", str(tmp_path / "test.tsv")]) == 0
    assert len(load_bitext(tmp_path / "train.tsv")) == 30 and len(load_bitext(tmp_path / "test.tsv")) == 10
    assert main(["gen", "reversal", "--n", "5", "--format", "jsonl", "--out", str(tmp_path / "r.jsonl")]) == 0
    assert len(load_bitext(tmp_path / "r.jsonl", "jsonl")) == 5


def test_prep_masks_sql(tmp_path):
    src = tmp_path / "sql.tsv"
    src.write_text("how many over 30\tSELECT count(*) FROM p WHERE age > 30 AND city = 'Oslo'\n")
    assert main(["prep", str(src), "--mask-sql", "target", "--out", str(tmp_path / "masked.tsv")]) == 0
    assert load_bitext(tmp_path / "masked.tsv").targets == ["SELECT count(*) FROM p WHERE age > <num> AND city = <str>"]


def test_score_bash(tmp_path, capsys):
    (tmp_path / "p.txt").write_text("find -name\nls -l\necho 'broken\n")
    (tmp_path / "r.txt").write_text("find -size\nls -l\necho hi\n")
    assert main(["score-bash", str(tmp_path / "p.txt"), str(tmp_path / "r.txt")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["line\tscore", "1\t0.0000", "2\t100.0000", "3\t-100.0000", "mean\t0.0000"]
    (tmp_path / "short.txt").write_text("ls\n")
    assert main(["score-bash", str(tmp_path / "short.txt"), str(tmp_path / "r.txt")]) == 2


def test_phase_commands_and_report(tmp_path, manifest, capsys):
    pre = tmp_path / "pre"
    assert main(["pretrain", "--manifest", str(manifest), "--out", str(pre)]) == 0
    ft = tmp_path / "ft"
    assert main(["finetune", "--manifest", str(manifest), "--checkpoint", str(pre / "pretrained.ckpt"),
                 "--out", str(ft)]) == 0
    capsys.readouterr()
    assert main(["eval", "--manifest", str(manifest), "--checkpoint", str(ft / "finetuned.ckpt"),
                 "--out", str(tmp_path / "report.json")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["phase"] == "finetuned" and report["pretrain_steps"] == 4

    # the staged commands reproduce the one-shot run
    assert main(["run", "--manifest", str(manifest), "--out", str(tmp_path / "run")]) == 0
    capsys.readouterr()
    assert json.loads((tmp_path / "run" / "report.json").read_text()) == report
    assert (tmp_path / "run" / "finetuned.ckpt").read_bytes() == (ft / "finetuned.ckpt").read_bytes()

    assert main(["report", str(tmp_path / "run"), str(tmp_path / "report.json")]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].split() == ["experiment", "ppl", "Acc.", "BaSH"]
    assert main(["report", "--style", "compute", "--tsv", str(tmp_path / "run")]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "Samples\tSteps\tppl\tAcc.\tBaSH"


def test_finetune_refuses_wrong_phase_and_unfreeze(tmp_path, manifest, capsys):
    assert main(["run", "--manifest", str(manifest), "--out", str(tmp_path / "run")]) == 0
    rc = main(["finetune", "--manifest", str(manifest), "--checkpoint", str(tmp_path / "run" / "finetuned.ckpt"),
               "--out", str(tmp_path / "again")])
    assert rc == 2 and "pretrained" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["finetune", "--manifest", str(manifest), "--checkpoint", "x", "--out", "y", "--unfreeze"])
    assert info.value.code == 2


def test_sweep_command(tmp_path, manifest, capsys):
    assert main(["sweep", "--manifest", str(manifest), "--grid", "80x2,120x2", "--out", str(tmp_path / "sw")]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split() == ["Samples", "Steps", "ppl", "Acc.", "BaSH"]
    assert (tmp_path / "sw" / "table.tsv").exists()


def test_bad_manifest_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("mode: sideways\n")
    assert main(["run", "--manifest", str(path), "--out", str(tmp_path / "r")]) == 2
    assert "mode" in capsys.readouterr().err
