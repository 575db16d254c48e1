"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The training criteria share one transfer run of ``manifests/copy_transfer.yaml``
(pre-train on copy over vocabulary A, frozen fine-tune on vocabulary B).  The
whole module takes roughly a quarter of an hour on one CPU core.
"""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from grad_cases import check_case, primitive_cases, random_graph
from transferlab.autodiff.tensor import PRIMITIVES
from transferlab.bash import bash_similarity, parse_bash
from transferlab.batching import Example
from transferlab.metrics import perplexity, token_accuracy
from transferlab.model import load_checkpoint, swap_embeddings
from transferlab.pipeline import Manifest, run_experiment, run_sweep
from transferlab.pipeline.cli import main as cli
from transferlab.tasks import copy_permutation, gen_copy
from transferlab.vocab import BOS, EOS, Vocab

ROOT = Path(__file__).resolve().parent.parent
MANIFESTS = ROOT / "manifests"
FIXTURE = Path(__file__).parent / "fixtures" / "bash_commands.txt"

pytestmark = pytest.mark.slow


def line(n: int, ok: bool, what: str, detail: str) -> str:
    return f"criterion {n} {'PASS' if ok else 'FAIL'}: {what} ({detail})"


@pytest.fixture(scope="module")
def transfer_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("acceptance") / "transfer"
    manifest = Manifest.load(MANIFESTS / "copy_transfer.yaml")
    report = run_experiment(manifest, run_dir)
    return manifest, run_dir, report


@pytest.fixture(scope="module")
def baseline_runs(tmp_path_factory):
    """Frozen random cores, Xavier vs uniform, on the vocabulary-B copy task for three core seeds."""
    base = tmp_path_factory.mktemp("baselines")
    runs = {}
    for mode in ("xavier_init", "uniform_init"):
        manifest = Manifest.load(MANIFESTS / f"copy_{mode}.yaml")
        for seed in (0, 1, 2):
            m = manifest.with_changes(model_seed=seed)
            runs[mode, seed] = (base / f"{mode}-{seed}", run_experiment(m, base / f"{mode}-{seed}"))
    return runs


def test_criterion_1_gradient_oracle(verdict):
    start = time.perf_counter()
    cases = primitive_cases()
    covered = all(any(name.startswith(p) for name in cases) for p in PRIMITIVES)
    errors = {name: check_case(build, arrays) for name, (build, arrays) in cases.items()}
    for seed in range(20):
        errors[f"graph{seed}"] = check_case(*random_graph(seed))
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = covered and errors[worst] < 1e-4 and elapsed < 30
    verdict(line(1, ok, "gradient oracle",
                 f"{len(cases)} primitive cases + 20 random graphs, worst rel. error {errors[worst]:.1e} "
                 f"({worst}), {elapsed:.1f} s"))
    assert covered, "a primitive has no gradient check"
    assert errors[worst] < 1e-4
    assert elapsed < 30


def test_criterion_2_freeze_invariance(transfer_run, verdict):
    manifest, run_dir, _ = transfer_run
    pre = load_checkpoint(run_dir / "pretrained.ckpt")
    tuned = load_checkpoint(run_dir / "finetuned.ckpt")
    identical = set(pre.core) == set(tuned.core) and all(
        np.array_equal(pre.core[k].data, tuned.core[k].data) and pre.core[k].data.dtype == tuned.core[k].data.dtype
        for k in pre.core
    )
    initial = swap_embeddings(pre, tuned.src_vocab_size, tuned.tgt_vocab_size, seed=manifest.embed_seed)
    moved = [k for k in tuned.embeddings if not np.array_equal(tuned.embeddings[k].data, initial.embeddings[k].data)]
    ok = identical and bool(moved)
    verdict(line(2, ok, "freeze invariance",
                 f"{len(pre.core)} core tensors bit-identical: {identical}; embeddings changed: {', '.join(moved)}; "
                 "verify_freeze also runs inside every fine-tune"))
    assert identical and moved


def test_criterion_3_copy_learnability(transfer_run, verdict):
    manifest, run_dir, _ = transfer_run
    model = load_checkpoint(run_dir / "pretrained.ckpt")
    src_vocab = Vocab.load(run_dir / "upstream.src.vocab")
    tgt_vocab = Vocab.load(run_dir / "upstream.tgt.vocab")
    shape = (manifest.upstream_vocab_size, manifest.upstream_len_min, manifest.upstream_len_max)
    seen = set(gen_copy(manifest.upstream_n, *shape, seed=manifest.upstream_seed,
                        perm_seed=manifest.upstream_perm_seed).pairs)
    # fresh sentences under the same token map, minus anything seen in training
    fresh = gen_copy(1200, *shape, seed=12345, perm_seed=manifest.upstream_perm_seed)
    held_out = [p for p in fresh.pairs if p not in seen][:1000]
    examples = [Example(tuple(src_vocab.lookup(w) for w in s) + (EOS,),
                        (BOS,) + tuple(tgt_vocab.lookup(w) for w in t) + (EOS,)) for s, t in held_out]
    acc = token_accuracy(model, examples)
    seconds = json.loads((run_dir / "timing.json").read_text())["pretrain_seconds"]
    ok = acc >= 99.0 and model.step <= 3000 and seconds <= 600
    verdict(line(3, ok, "copy-task learnability",
                 f"held-out token accuracy {acc:.2f}% on {len(examples)} unseen pairs after {model.step} steps, "
                 f"{seconds:.0f} s"))
    assert acc >= 99.0 and model.step <= 3000 and seconds <= 600


def test_criterion_4_lexical_realignment(transfer_run, verdict):
    manifest, run_dir, report = transfer_run
    up = gen_copy(50, manifest.upstream_vocab_size, seed=0, prefix="w", perm_seed=manifest.upstream_perm_seed)
    down = gen_copy(50, manifest.downstream_vocab_size, seed=0, prefix="v", perm_seed=manifest.downstream_perm_seed)
    disjoint = not (set(copy_permutation(up)) & set(copy_permutation(down)))
    ok = report.accuracy_pct >= 95.0 and disjoint and report.phase == "finetuned"
    verdict(line(4, ok, "lexical-realignment transfer",
                 f"vocab A -> disjoint vocab B, frozen core, held-out accuracy {report.accuracy_pct:.2f}% "
                 f"on {report.examples} test pairs, exact match {report.bash_score:.1f}%"))
    assert disjoint and report.accuracy_pct >= 95.0


def _random_command(rng: np.random.Generator) -> tuple[str, list]:
    utilities = ["ls", "grep", "find", "tar", "cut", "sort"]
    flags = ["-a", "-l", "-r", "-n", "-v", "-x", "-z", "-f", "--all", "--force", "--color", "--name"]
    stages = []
    for _ in range(int(rng.integers(1, 4))):
        k = int(rng.integers(0, 5))
        stages.append([str(rng.choice(utilities)), list(rng.choice(flags, size=k, replace=False)),
                       ["'x y'"] * int(rng.integers(0, 2))])
    return render_stages(stages), stages


def render_stages(stages) -> str:
    return " | ".join(" ".join([u, *f, *a]) for u, f, a in stages)


def test_criterion_5_bash_metric(verdict):
    commands = FIXTURE.read_text().splitlines()
    reflexive = len(commands) == 50 and all(bash_similarity(c, c).value == 100.0 for c in commands)

    examples = [
        ("tar -xzf a.tgz", "tar -xzf a.tgz", 100.0),
        ("find -name", "find -size", 0.0),
        ("ls -l", "find . -name f", -100.0),
        ("find -name -size", "find -name", 50.0),
    ]
    formula = all(bash_similarity(p, r).value == want for p, r, want in examples)

    rng = np.random.default_rng(2024)
    cases = 1500
    range_ok = symmetric = monotone = True
    for _ in range(cases):
        a, a_stages = _random_command(rng)
        b, _ = _random_command(rng)
        ab, ba = bash_similarity(a, b).value, bash_similarity(b, a).value
        range_ok &= -100.0 <= ab <= 100.0
        symmetric &= ab == ba
        ref_flags = set().union(*(c.flags for c in parse_bash(b).stages))
        idx = int(rng.integers(0, len(a_stages)))
        extra = next((f for f in ("-q", "-w", "--spurious") if f not in ref_flags | set(a_stages[idx][1])), None)
        if extra is not None:
            noisier = [list(s) for s in a_stages]
            noisier[idx] = [noisier[idx][0], noisier[idx][1] + [extra], noisier[idx][2]]
            monotone &= bash_similarity(render_stages(noisier), b).value <= ab
    ok = reflexive and formula and range_ok and symmetric and monotone
    verdict(line(5, ok, "BaSH metric suite",
                 f"reflexive on 50 fixtures: {reflexive}; 4 formula examples: {formula}; {cases} random cases: "
                 f"range {range_ok}, symmetry {symmetric}, spurious-flag monotonicity {monotone}"))
    assert ok


class _Uniform:
    def __init__(self, v):
        self.v = v

    def teacher_forced_logits(self, src, tgt_in):
        return np.zeros(tgt_in.shape + (self.v,))


class _TwoTokens:
    """Gold probabilities 0.5 then 0.25 over a 6-token vocabulary."""

    def teacher_forced_logits(self, src, tgt_in):
        p = np.empty((1, 2, 6))
        p[0, 0] = 0.5 / 5
        p[0, 0, 4] = 0.5
        p[0, 1] = 0.75 / 5
        p[0, 1, EOS] = 0.25
        return np.log(p)


def test_criterion_6_perplexity_oracle(verdict):
    rel_errors = []
    for v, seed in ((6, 0), (50, 1), (1000, 2)):
        rng = np.random.default_rng(seed)
        ex = []
        for _ in range(30):
            body = tuple(int(x) for x in rng.integers(4, v, size=int(rng.integers(1, 9))))
            ex.append(Example(body + (EOS,), (BOS,) + body + (EOS,)))
        rel_errors.append(abs(perplexity(_Uniform(v), ex) - v) / v)
    sqrt8 = perplexity(_TwoTokens(), [Example((4, EOS), (BOS, 4, EOS))])
    ok = max(rel_errors) <= 1e-3 and abs(sqrt8 - math.sqrt(8)) <= 1e-6
    verdict(line(6, ok, "perplexity oracle",
                 f"uniform logits: max rel. error {max(rel_errors):.1e} for V in (6, 50, 1000); "
                 f"two-token example {sqrt8:.9f} vs sqrt(8) {math.sqrt(8):.9f}"))
    assert ok


def test_criterion_7_table_shapes(transfer_run, baseline_runs, tmp_path, capsys, verdict):
    _, transfer_dir, _ = transfer_run
    e2e_dir = tmp_path / "end_to_end"
    run_experiment(Manifest.load(MANIFESTS / "copy_end_to_end.yaml"), e2e_dir)
    results_dirs = [transfer_dir, baseline_runs["xavier_init", 0][0], baseline_runs["uniform_init", 0][0], e2e_dir]
    capsys.readouterr()
    assert cli(["report", *map(str, results_dirs)]) == 0
    results_text = capsys.readouterr().out
    assert cli(["report", "--tsv", *map(str, results_dirs)]) == 0
    results_tsv = capsys.readouterr().out

    sweep_base = Manifest.load(MANIFESTS / "sweep_reversal.yaml").with_changes(finetune_max_steps=250)
    table = run_sweep(sweep_base, [(1000, 250), (2000, 250)], tmp_path / "sweep")
    cells = [tmp_path / "sweep" / f"{sweep_base.name}-{c}-250" for c in ("1k", "2k")]
    assert cli(["report", "--style", "compute", "--tsv", *map(str, cells)]) == 0
    compute_tsv = capsys.readouterr().out
    assert cli(["report", "--style", "compute", *map(str, cells)]) == 0
    compute_text = capsys.readouterr().out

    results_header = results_tsv.splitlines()[0].split("\t")
    compute_header = compute_tsv.splitlines()[0].split("\t")
    ok = (results_header == ["experiment", "ppl", "Acc.", "BaSH"] and len(results_tsv.splitlines()) == 5
          and compute_header == ["Samples", "Steps", "ppl", "Acc.", "BaSH"] and len(compute_tsv.splitlines()) == 3
          and not table.failures and "*" in results_text and "*" in compute_text)
    with capsys.disabled():
        print("\n" + results_text + "\n" + compute_text)
    verdict(line(7, ok, "protocol-shape reproduction",
                 f"results table {results_header} with {len(results_tsv.splitlines()) - 1} rows; "
                 f"compute table {compute_header} with {len(compute_tsv.splitlines()) - 1} rows"))
    assert ok


def test_criterion_8_xavier_vs_uniform(baseline_runs, verdict):
    wins = []
    detail = []
    for seed in (0, 1, 2):
        xa = baseline_runs["xavier_init", seed][1].accuracy_pct
        un = baseline_runs["uniform_init", seed][1].accuracy_pct
        wins.append(xa >= un)
        detail.append(f"seed {seed}: Xavier {xa:.1f}% vs uniform {un:.1f}%")
    holds = sum(wins) >= 2
    # a statistical tendency: recorded, never a hard failure
    verdict(f"criterion 8 {'PASS' if holds else 'RECORDED (tendency not observed)'}: "
            f"Xavier >= uniform(0.1) frozen cores in {sum(wins)}/3 seeds ({'; '.join(detail)})")
