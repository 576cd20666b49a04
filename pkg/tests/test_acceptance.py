"""Acceptance gate. Each test prints one PASS/FAIL line with the measured
value and its tolerance; the assertions carry the same detail."""

import time

import numpy as np
import pytest

from dualproto import checkpoint as ckpt
from dualproto.config import TrainConfig
from dualproto.data import (
    batches,
    generate_synthetic,
    load_dataset,
    read_embedding_matrix,
    write_dataset,
)
from dualproto.encoders import semantic_prototypes
from dualproto.errors import CheckpointError, DataFormatError
from dualproto.metrics import bias_sweep, summarize
from dualproto.objective import class_probs
from dualproto.prototypes import batch_node_features
from dualproto.train import _BATCH_STREAM, _head_probs, evaluate, gradient_check, train

from oracles import brute_force_summary, random_sweep_instance


def emit(capsys, name, ok, detail):
    line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
    with capsys.disabled():
        print(f"\n{line}")
    assert ok, line


PARAM_GROUPS = {
    "prompt.ctx_composition",
    "prompt.ctx_state",
    "prompt.ctx_object",
    "prompt.state_tokens",
    "prompt.object_tokens",
    "dis_state.w1",
    "dis_state.b1",
    "dis_state.w2",
    "dis_state.b2",
    "dis_object.w1",
    "dis_object.b1",
    "dis_object.w2",
    "dis_object.b2",
    "graph.weight",
    "fusion.weight",
}


def test_A1_gradient_correctness(capsys):
    start = time.perf_counter()
    report = gradient_check(seed=0, eps=1e-5)
    elapsed = time.perf_counter() - start
    covered = PARAM_GROUPS <= set(report)
    ok = covered and report["max"] < 1e-4 and elapsed < 60.0
    emit(
        capsys,
        "A1",
        ok,
        f"max_rel_err={report['max']:.3e} (< 1e-4), all 15 parameter groups audited, "
        f"runtime={elapsed:.1f}s (< 60s)",
    )


def test_A2_metric_oracle_equivalence(capsys):
    worst = 0.0
    for seed in range(100):
        scores, labels, unseen_mask = random_sweep_instance(seed)
        report = summarize(bias_sweep(scores, labels, unseen_mask), world="closed", mode="full")
        oracle = brute_force_summary(scores, labels, unseen_mask)
        got = (report.seen, report.unseen, report.harmonic_mean, report.auc)
        worst = max(worst, max(abs(g - o) for g, o in zip(got, oracle)))
    ok = worst <= 1e-12
    emit(capsys, "A2", ok, f"100 random instances, worst |diff|={worst:.2e} (<= 1e-12)")


def test_A3_metric_boundary_cases(capsys):
    # classes 0,1 seen; 2,3 unseen; one image per class
    labels = np.arange(4)
    unseen_mask = np.array([False, False, True, True])
    perfect = summarize(
        bias_sweep(np.eye(4), labels, unseen_mask), world="closed", mode="full"
    )
    wrong_scores = np.zeros((4, 4))
    for image, cls in enumerate([1, 0, 3, 2]):  # same-side sibling gets the mass
        wrong_scores[image, cls] = 1.0
    wrong = summarize(
        bias_sweep(wrong_scores, labels, unseen_mask), world="closed", mode="full"
    )
    perfect_vals = (perfect.seen, perfect.unseen, perfect.harmonic_mean, perfect.auc)
    wrong_vals = (wrong.seen, wrong.unseen, wrong.harmonic_mean, wrong.auc)
    ok = perfect_vals == (1.0, 1.0, 1.0, 1.0) and wrong_vals == (0.0, 0.0, 0.0, 0.0)
    emit(capsys, "A3", ok, f"one-hot -> {perfect_vals}, all-wrong -> {wrong_vals} (exact)")


def test_A4_synthetic_generalization(capsys):
    unseen_accs = []
    full_beats_c = 0
    dual_beats_both = 0
    slowest = 0.0
    for seed in range(5):
        start = time.perf_counter()
        dataset, space = generate_synthetic(
            8, 10, 32, 0.05, 0.7, 50, seed, test_per_pair=10
        )
        aucs = {}
        for branches in (("sp", "vp"), ("sp",), ("vp",)):
            config = TrainConfig(seed=seed, branches=branches).validate()
            blob, _ = train(config, dataset=dataset, space=space)
            model, _ = ckpt.restore(ckpt.deserialize(blob), space)
            report = evaluate(model, dataset, space, world="closed", mode="full")
            aucs[branches] = report.auc
            if branches == ("sp", "vp"):
                unseen_accs.append(report.unseen)
                aucs["c"] = evaluate(model, dataset, space, world="closed", mode="c").auc
        slowest = max(slowest, time.perf_counter() - start)
        if aucs[("sp", "vp")] >= aucs["c"]:
            full_beats_c += 1
        if aucs[("sp", "vp")] >= aucs[("sp",)] and aucs[("sp", "vp")] >= aucs[("vp",)]:
            dual_beats_both += 1
    ok = (
        all(u >= 0.50 for u in unseen_accs)
        and full_beats_c >= 4
        and dual_beats_both >= 4
        and slowest < 300.0
    )
    emit(
        capsys,
        "A4",
        ok,
        f"unseen acc {['%.3f' % u for u in unseen_accs]} (all >= 0.50 on 5/5), "
        f"AUC(full)>=AUC(c) on {full_beats_c}/5, dual>=each single branch on "
        f"{dual_beats_both}/5 (both >= 4/5), slowest seed {slowest:.1f}s (< 300s)",
    )


def _capture_node_commits(small_run, node_mix):
    """Train 2 epochs at the given node_mix, recording per-step state-node
    inputs and the committed codebook rows, plus the replayed batch labels."""
    config, dataset, space, _, _ = small_run
    cfg = config.override(epochs=2, node_mix=node_mix)
    captured = []

    def hook(epoch, model, forward):
        captured.append(
            (
                forward.z_state.copy(),
                forward.node_state_mask.copy(),
                model.codebook.node_state.copy(),
                model.codebook.node_state_init.copy(),
            )
        )

    train(cfg, dataset=dataset, space=space, step_hook=hook)

    steps = []
    index = 0
    for epoch in range(cfg.epochs):
        for rows in batches(dataset, cfg.batch_size, [cfg.seed, _BATCH_STREAM, epoch]):
            z_state, mask, committed, anchor = captured[index]
            steps.append((z_state, dataset.labels[rows, 0], mask, committed, anchor))
            index += 1
    assert index == len(captured)
    return steps


def test_A5_node_mix_extremes(capsys, small_run):
    config, dataset, space, _, _ = small_run
    frozen_steps = [0]

    def frozen_hook(epoch, model, forward):
        frozen_steps[0] += 1
        assert np.array_equal(model.codebook.node_state, model.codebook.node_state_init)
        assert np.array_equal(model.codebook.node_object, model.codebook.node_object_init)

    cfg = config.override(epochs=2, node_mix=1.0)
    train(cfg, dataset=dataset, space=space, step_hook=frozen_hook)

    batch_exact = True
    for z_state, labels, mask, committed, anchor in _capture_node_commits(small_run, 0.0):
        nu_hat, _, _ = batch_node_features(z_state, labels, anchor.shape[0])
        batch_exact = batch_exact and np.array_equal(committed[mask], nu_hat[mask])

    worst_blend = 0.0
    for z_state, labels, mask, committed, anchor in _capture_node_commits(small_run, 0.9):
        nu_hat, _, _ = batch_node_features(z_state, labels, anchor.shape[0])
        blend = 0.9 * anchor[mask] + 0.1 * nu_hat[mask]
        expected = blend / np.linalg.norm(blend, axis=1, keepdims=True)
        worst_blend = max(worst_blend, float(np.abs(committed[mask] - expected).max()))

    ok = frozen_steps[0] > 0 and batch_exact and worst_blend <= 1e-12
    emit(
        capsys,
        "A5",
        ok,
        f"lambda=1 bit-exact over {frozen_steps[0]} steps, lambda=0 batch means "
        f"bit-exact={batch_exact}, lambda=0.9 blend err={worst_blend:.2e} (<= 1e-12)",
    )


def test_A6_fusion_extremes(capsys, small_run):
    config, dataset, space, blob, _ = small_run
    model, _ = ckpt.restore(ckpt.deserialize(blob), space)
    target_idx = space.target_indices("closed")
    x = dataset.embeddings[dataset.rows_of("test")]
    tau = model.temperature
    protos, _ = semantic_prototypes(model.bank, model.text_encoder)

    at_sem = _head_probs(model, x, target_idx, fusion_override=0.0)
    sem_direct = class_probs(x, protos["composition"][target_idx], tau)
    at_vis = _head_probs(model, x, target_idx, fusion_override=1.0)
    vis_direct = class_probs(x, model.codebook.prototypes[target_idx], tau)
    endpoint_ok = np.array_equal(at_sem["comp_vis"], sem_direct) and np.array_equal(
        at_vis["comp_vis"], vis_direct
    )

    # single-branch training pins the fusion weight to its endpoint
    pinned_ok = True
    for branches, reference in ((("sp",), "sem"), (("vp",), "vis")):
        cfg = config.override(epochs=2, branches=branches)
        b, _ = train(cfg, dataset=dataset, space=space)
        m, _ = ckpt.restore(ckpt.deserialize(b), space)
        heads = _head_probs(m, x, target_idx)
        p, _ = semantic_prototypes(m.bank, m.text_encoder)
        direct = (
            class_probs(x, p["composition"][target_idx], m.temperature)
            if reference == "sem"
            else class_probs(x, m.codebook.prototypes[target_idx], m.temperature)
        )
        pinned_ok = pinned_ok and np.array_equal(heads["comp_vis"], direct)

    ok = endpoint_ok and pinned_ok
    emit(
        capsys,
        "A6",
        ok,
        "gamma=0 equals semantic-only and gamma=1 equals visual-only head bitwise, "
        "for overrides and single-branch trained models",
    )


def test_A7_determinism(capsys, small_run):
    config, dataset, space, _, _ = small_run
    cfg = config.override(epochs=2)
    blobs, reports, curves = [], [], []
    for _ in range(2):
        blob, _ = train(cfg, dataset=dataset, space=space)
        model, _ = ckpt.restore(ckpt.deserialize(blob), space)
        report = evaluate(model, dataset, space, world="closed", mode="full")
        blobs.append(blob)
        reports.append(report.to_text())
        curves.append(report.curve_csv())
    ok = blobs[0] == blobs[1] and reports[0] == reports[1] and curves[0] == curves[1]
    emit(
        capsys,
        "A7",
        ok,
        f"two identical runs: checkpoints byte-identical={blobs[0] == blobs[1]}, "
        f"reports identical={reports[0] == reports[1]}",
    )


def test_A8_serialization_round_trips(capsys, small_run, tmp_path):
    config, dataset, space, blob, _ = small_run

    first = tmp_path / "first"
    second = tmp_path / "second"
    manifest = write_dataset(dataset, space, first)
    loaded, loaded_space = load_dataset(manifest)
    write_dataset(loaded, loaded_space, second)
    files = sorted(p.name for p in first.iterdir())
    dataset_ok = files == sorted(p.name for p in second.iterdir()) and all(
        (first / name).read_bytes() == (second / name).read_bytes() for name in files
    )

    restored, adam = ckpt.restore(ckpt.deserialize(blob), space)
    loaded_ckpt = ckpt.deserialize(blob)
    again = ckpt.serialize(restored, adam, loaded_ckpt.config, loaded_ckpt.epoch,
                           loaded_ckpt.val_auc)
    ckpt_ok = again == blob

    kinds = []
    dupx = first / "dataset.embeddings.dupx"
    raw = dupx.read_bytes()

    def data_kind(fn):
        with pytest.raises(DataFormatError) as e:
            fn()
        return e.value.kind

    def ckpt_kind(fn):
        with pytest.raises(CheckpointError) as e:
            fn()
        return e.value.kind

    bad_magic = tmp_path / "bad_magic.dupx"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    kinds.append(("bad-magic", data_kind(lambda: read_embedding_matrix(bad_magic))))
    truncated = tmp_path / "truncated.dupx"
    truncated.write_bytes(raw[:-8])
    kinds.append(("truncated-file", data_kind(lambda: read_embedding_matrix(truncated))))
    flipped = bytearray(raw)
    flipped[-1] ^= 0xFF
    dupx.write_bytes(bytes(flipped))
    kinds.append(("checksum-mismatch", data_kind(lambda: load_dataset(manifest))))
    dupx.write_bytes(raw)
    kinds.append(
        ("missing-file", data_kind(lambda: load_dataset(tmp_path / "absent.manifest")))
    )

    kinds.append(("bad-magic", ckpt_kind(lambda: ckpt.deserialize(b"YYYY" + blob[4:]))))
    kinds.append(("truncated-file", ckpt_kind(lambda: ckpt.deserialize(blob[:40]))))
    bumped = bytearray(blob)
    bumped[4] = 99
    kinds.append(("version-mismatch", ckpt_kind(lambda: ckpt.deserialize(bytes(bumped)))))
    kinds.append(
        ("missing-file", ckpt_kind(lambda: ckpt.read_checkpoint(tmp_path / "absent.dupc")))
    )
    kinds_ok = all(expected == got for expected, got in kinds)

    ok = dataset_ok and ckpt_ok and kinds_ok
    emit(
        capsys,
        "A8",
        ok,
        f"dataset write-load-write byte-identical over {len(files)} files, checkpoint "
        f"round trip byte-identical, {len(kinds)} corruption kinds designated",
    )
