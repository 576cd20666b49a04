"""End-to-end CLI coverage: gen -> train -> eval -> retrieve -> gradcheck."""

import contextlib
import io
import re
import subprocess
import sys

import pytest

from dualproto import checkpoint as ckpt
from dualproto import cli
from dualproto.metrics import MetricsReport


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        rc = cli.main(argv)
    return rc, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rc, out, err = run_cli(
        [
            "gen",
            "--out", str(root),
            "--states", "3",
            "--objects", "3",
            "--dim", "16",
            "--train-per-pair", "6",
            "--seed", "0",
        ]
    )
    assert rc == 0, err
    manifest = re.search(r"^manifest=(.+)$", out, re.M).group(1)
    checkpoint = root / "model.dupc"
    rc, out, err = run_cli(
        [
            "train",
            "--manifest", manifest,
            "--out", str(checkpoint),
            "--epochs", "2",
            "--batch-size", "16",
            "--prefix-len", "2",
        ]
    )
    assert rc == 0, err
    return root, manifest, checkpoint, out


def test_gen_writes_dataset_files(workspace):
    root, manifest, _, _ = workspace
    assert manifest.endswith("dataset.manifest")
    for name in (
        "dataset.vocab.tsv",
        "dataset.seen_pairs.tsv",
        "dataset.unseen_pairs.tsv",
        "dataset.labels.tsv",
        "dataset.embeddings.dupx",
    ):
        assert (root / name).is_file()


def test_train_logs_and_checkpoint(workspace):
    _, _, checkpoint, out = workspace
    lines = out.strip().splitlines()
    assert re.match(r"^epoch=0 loss=\S+ val_auc=\S+ lr=\S+$", lines[0])
    assert lines[-1] == f"checkpoint={checkpoint}"
    loaded = ckpt.read_checkpoint(checkpoint)
    assert loaded.config.epochs == 2
    assert loaded.config.batch_size == 16


def test_train_flags_override_config_file(workspace, tmp_path):
    root, manifest, _, _ = workspace
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs=1\nlambda=0.8\n", encoding="utf-8")
    out_path = tmp_path / "override.dupc"
    rc, _, err = run_cli(
        [
            "train",
            "--manifest", manifest,
            "--config", str(cfg),
            "--out", str(out_path),
            "--epochs", "2",
            "--batch-size", "16",
            "--prefix-len", "2",
        ]
    )
    assert rc == 0, err
    loaded = ckpt.read_checkpoint(out_path)
    assert loaded.config.epochs == 2  # flag beats file
    assert loaded.config.node_mix == 0.8  # file beats default


def test_eval_stdout_and_report_files(workspace, tmp_path):
    _, manifest, checkpoint, _ = workspace
    rc, out, err = run_cli(["eval", "--checkpoint", str(checkpoint), "--manifest", manifest])
    assert rc == 0, err
    report = MetricsReport.from_text(out)
    assert report.world == "closed"
    assert report.mode == "full"

    out_dir = tmp_path / "reports"
    rc, out, err = run_cli(
        [
            "eval",
            "--checkpoint", str(checkpoint),
            "--manifest", manifest,
            "--mode", "c",
            "--out", str(out_dir),
        ]
    )
    assert rc == 0, err
    assert f"report={out_dir / 'report.txt'}" in out
    on_disk = MetricsReport.from_text((out_dir / "report.txt").read_text(encoding="utf-8"))
    assert on_disk.mode == "c"
    csv_lines = (out_dir / "curve.csv").read_text(encoding="utf-8").strip().splitlines()
    assert csv_lines[0] == "bias,seen_acc,unseen_acc"
    first = csv_lines[1].split(",")
    assert float(first[0]) == float("-inf")
    assert all(len(line.split(",")) == 3 for line in csv_lines[1:])


def test_eval_gamma_override_runs(workspace):
    _, manifest, checkpoint, _ = workspace
    rc, out_sem, err = run_cli(
        [
            "eval",
            "--checkpoint", str(checkpoint),
            "--manifest", manifest,
            "--mode", "cprime",
            "--gamma", "0.0",
        ]
    )
    assert rc == 0, err
    rc, out_c, err = run_cli(
        ["eval", "--checkpoint", str(checkpoint), "--manifest", manifest, "--mode", "c"]
    )
    assert rc == 0, err
    sem = MetricsReport.from_text(out_sem)
    comp = MetricsReport.from_text(out_c)
    assert (sem.seen, sem.unseen, sem.harmonic_mean, sem.auc) == (
        comp.seen,
        comp.unseen,
        comp.harmonic_mean,
        comp.auc,
    )


def test_retrieve_image(workspace):
    _, manifest, checkpoint, _ = workspace
    rc, out, err = run_cli(
        [
            "retrieve",
            "--checkpoint", str(checkpoint),
            "--manifest", manifest,
            "--direction", "image",
            "--query", "0",
            "--k", "3",
        ]
    )
    assert rc == 0, err
    lines = out.strip().splitlines()
    assert len(lines) == 3
    for rank, line in enumerate(lines, start=1):
        m = re.match(r"^rank=(\d+) id=(s\d+:o\d+) score=(\S+)$", line)
        assert m, line
        assert int(m.group(1)) == rank
        float(m.group(3))


def test_retrieve_composition(workspace):
    _, manifest, checkpoint, _ = workspace
    rc, out, err = run_cli(
        [
            "retrieve",
            "--checkpoint", str(checkpoint),
            "--manifest", manifest,
            "--direction", "composition",
            "--query", "s0:o0",
            "--k", "2",
        ]
    )
    assert rc == 0, err
    lines = out.strip().splitlines()
    assert len(lines) == 2
    for line in lines:
        m = re.match(r"^rank=\d+ id=(\d+) score=\S+$", line)
        assert m, line


def test_error_lines_and_exit_codes(workspace, tmp_path):
    root, manifest, checkpoint, _ = workspace
    cases = [
        (["train"], "config-invalid"),  # no manifest anywhere
        (["gen", "--out", str(tmp_path), "--seen-fraction", "1.5"], "config-invalid"),
        (
            ["eval", "--checkpoint", str(tmp_path / "no.dupc"), "--manifest", manifest],
            "missing-file",
        ),
        (
            [
                "retrieve",
                "--checkpoint", str(checkpoint),
                "--manifest", manifest,
                "--direction", "composition",
                "--query", "s9:o9",
            ],
            "unknown-id",
        ),
    ]
    for argv, kind in cases:
        rc, _, err = run_cli(argv)
        assert rc == 2, argv
        assert err.startswith(f"error={kind} detail="), err

    garbage = tmp_path / "garbage.dupc"
    garbage.write_bytes(b"XXXX" + b"\x00" * 64)
    rc, _, err = run_cli(["eval", "--checkpoint", str(garbage), "--manifest", manifest])
    assert rc == 2
    assert err.startswith("error=bad-magic detail=")


def test_gradcheck_passes(workspace):
    rc, out, err = run_cli(["gradcheck", "--seed", "0"])
    assert rc == 0, err
    lines = out.strip().splitlines()
    assert all(re.match(r"^param=\S+ rel_err=\S+$", line) for line in lines[:-1])
    m = re.match(r"^max_rel_err=(\S+)$", lines[-1])
    assert m
    assert float(m.group(1)) < 1e-4


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [
            sys.executable, "-m", "dualproto",
            "gen",
            "--out", str(tmp_path),
            "--states", "2",
            "--objects", "2",
            "--dim", "8",
            "--train-per-pair", "4",
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "manifest=" in proc.stdout
    assert (tmp_path / "dataset.manifest").is_file()
