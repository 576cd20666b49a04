"""Training loop, evaluation, retrieval, and the gradient-check harness.

Training is deterministic for a fixed (config, seed): parameter init comes
from per-component seeded streams, batch order from a per-epoch seeded
permutation, and all arithmetic is float64 with fixed reduction order, so
two runs with the same inputs produce byte-identical checkpoints.
"""

import numpy as np

from . import checkpoint as ckpt
from .config import TrainConfig
from .data import batches, generate_synthetic, load_dataset
from .encoders import disentangle, semantic_prototypes
from .errors import ConfigError, NonFiniteError, UnknownIdError
from .kernel import AdamState, adam_step, finite_diff_check
from .metrics import bias_sweep, summarize, topk
from .objective import ablation_score, backward_batch, class_probs, forward_batch
from .prototypes import fuse
from .state import ModelState

_BATCH_STREAM = 1000


def train(config, dataset=None, space=None, step_hook=None, log_fn=None):
    """Run the full loop; returns (best_checkpoint_bytes, log_lines).

    The retained checkpoint is the epoch with the highest closed-world val
    AUC (earliest on ties); when the dataset has no val rows the final
    epoch is retained and val_auc logs as nan.
    """
    config.validate()
    if dataset is None:
        if config.manifest is None:
            raise ConfigError("no dataset given and config.manifest is unset")
        dataset, space = load_dataset(config.manifest)
    dataset.validate_against(space)

    model = ModelState.initialize(space, dataset, config)
    adam = AdamState(config.lr)
    params = model.trainable_params()
    has_val = dataset.rows_of("val").size > 0

    best_blob = None
    best_auc = -np.inf
    logs = []
    for epoch in range(config.epochs):
        adam.lr = config.learning_rate_at(epoch)
        epoch_losses = []
        for batch_rows in batches(dataset, config.batch_size, [config.seed, _BATCH_STREAM, epoch]):
            x = dataset.embeddings[batch_rows]
            state_labels = dataset.labels[batch_rows, 0]
            object_labels = dataset.labels[batch_rows, 1]
            forward, caches = forward_batch(model, x, state_labels, object_labels)
            if not np.isfinite(forward.total):
                raise NonFiniteError(
                    f"loss became non-finite at epoch {epoch} "
                    f"(state={forward.loss_state} object={forward.loss_object} "
                    f"sem={forward.loss_comp_sem} vis={forward.loss_comp_vis})"
                )
            model.zero_grads()
            backward_batch(model, caches)
            adam_step(params, adam)
            model.clamp_fusion()
            model.codebook.commit(
                forward.refreshed,
                forward.node_state_new,
                forward.node_state_mask,
                forward.node_object_new,
                forward.node_object_mask,
            )
            epoch_losses.append(forward.total)
            if step_hook is not None:
                step_hook(epoch, model, forward)

        val_auc = float("nan")
        if has_val:
            val_auc = evaluate(model, dataset, space, world="closed", mode="full", split="val").auc
        loss = float(np.mean(epoch_losses))
        line = f"epoch={epoch} loss={loss!r} val_auc={val_auc!r} lr={adam.lr!r}"
        logs.append(line)
        if log_fn is not None:
            log_fn(line)
        if val_auc > best_auc:
            best_auc = val_auc
            best_blob = ckpt.serialize(model, adam, config, epoch, val_auc)

    if best_blob is None:
        best_blob = ckpt.serialize(model, adam, config, config.epochs - 1, float("nan"))
    return best_blob, logs


def _head_probs(model, x, target_idx, fusion_override=None):
    """Every inference head over the target compositions."""
    tau = model.temperature
    weight = (
        float(model.fusion_weight.values[0]) if fusion_override is None else float(fusion_override)
    )
    protos, _ = semantic_prototypes(model.bank, model.text_encoder)
    fused, _ = fuse(model.codebook.prototypes, protos["composition"], weight)
    z_state, z_object = disentangle(model.dis_state, model.dis_object, x)
    return {
        "comp_sem": class_probs(x, protos["composition"][target_idx], tau),
        "comp_vis": class_probs(x, fused[target_idx], tau),
        "state": class_probs(z_state, protos["state"], tau),
        "object": class_probs(z_object, protos["object"], tau),
    }


def evaluate(
    model,
    dataset,
    space,
    world=None,
    mode="full",
    split="test",
    fusion_override=None,
):
    """Bias-sweep metrics for one split / world / scoring mode."""
    rows = dataset.rows_of(split)
    if rows.size == 0:
        raise ConfigError(f"{split} split is empty")
    if dataset.dim != model.dim:
        raise ConfigError(f"dataset d={dataset.dim} but model d={model.dim}")
    world_name = space.world if world is None else world
    target_idx = space.target_indices(world_name)

    x = dataset.embeddings[rows]
    labels_global = dataset.labels[rows, 0] * space.num_objects + dataset.labels[rows, 1]
    positions = np.searchsorted(target_idx, labels_global)
    positions = np.clip(positions, 0, target_idx.size - 1)
    if not np.all(target_idx[positions] == labels_global):
        raise ConfigError(f"{split} rows carry labels outside the {world_name}-world target space")

    heads = _head_probs(model, x, target_idx, fusion_override)
    target_pairs = (target_idx // space.num_objects, target_idx % space.num_objects)
    scores = ablation_score(
        mode, heads["comp_vis"], heads["comp_sem"], heads["state"], heads["object"], target_pairs
    )

    seen_global = space.seen_indices()
    unseen_mask = ~np.isin(target_idx, seen_global)
    curve = bias_sweep(scores, positions, unseen_mask)
    return summarize(curve, world=world_name, mode=mode)


def retrieve(model, dataset, space, direction, query, k, world=None):
    """Cross-modal nearest neighbors against the fused prototypes.

    direction "image": query is an embedding row index, gallery is the
    fused prototype matrix over the target space. direction "composition":
    query is "state:object" (or a composition index), gallery is the image
    embedding matrix. Returns a list of (identifier, score) pairs.
    """
    world_name = space.world if world is None else world
    target_idx = space.target_indices(world_name)
    protos, _ = semantic_prototypes(model.bank, model.text_encoder)
    fused, _ = fuse(
        model.codebook.prototypes, protos["composition"], float(model.fusion_weight.values[0])
    )
    gallery_protos = fused[target_idx]

    if direction == "image":
        try:
            row = int(query)
        except (TypeError, ValueError):
            raise UnknownIdError(f"image query must be a row index, got {query!r}") from None
        if not 0 <= row < dataset.embeddings.shape[0]:
            raise UnknownIdError(f"image row {row} outside dataset of {dataset.embeddings.shape[0]}")
        q = dataset.embeddings[row]
        picks = topk(q, gallery_protos, k)
        scores = gallery_protos[picks] @ q
        return [
            (space.composition_name(int(target_idx[i])), float(s))
            for i, s in zip(picks, scores)
        ]

    if direction == "composition":
        comp = _parse_composition(space, query)
        pos = np.searchsorted(target_idx, comp)
        if pos >= target_idx.size or target_idx[pos] != comp:
            raise UnknownIdError(
                f"composition {space.composition_name(comp)} outside the {world_name}-world target"
            )
        q = gallery_protos[pos]
        picks = topk(q, dataset.embeddings, k)
        scores = dataset.embeddings[picks] @ q
        return [(int(i), float(s)) for i, s in zip(picks, scores)]

    raise ConfigError(f"direction must be image or composition, got {direction!r}")


def _parse_composition(space, query):
    if isinstance(query, (int, np.integer)):
        comp = int(query)
        if not 0 <= comp < space.num_compositions:
            raise UnknownIdError(f"composition index {comp} out of range")
        return comp
    text = str(query)
    if ":" in text:
        state_name, object_name = text.split(":", 1)
        if state_name not in space.states or object_name not in space.objects:
            raise UnknownIdError(f"unknown composition {text!r}")
        return space.index_of(space.states.index(state_name), space.objects.index(object_name))
    try:
        return _parse_composition(space, int(text))
    except ValueError:
        raise UnknownIdError(f"unknown composition {text!r}") from None


def gradient_check(seed=0, eps=1e-5, batch_rows=6):
    """Full-loss central-difference audit on a 2x2 space with d=8.

    Runs at temperature 1.0: the temperature enters the gradient once and
    multiplicatively, and an un-saturated softmax keeps every analytic
    gradient well above the finite-difference noise floor. Returns a dict
    of per-parameter max relative errors plus their overall "max".
    """
    dataset, space = generate_synthetic(
        2, 2, 8, sigma=0.1, seen_fraction=0.75, images_per_pair=4, seed=seed
    )
    config = TrainConfig(
        temperature=1.0,
        prefix_len=2,
        node_mix=0.9,
        fusion_init=0.3,
        seed=seed,
    ).validate()
    model = ModelState.initialize(space, dataset, config)

    train_rows = dataset.rows_of("train")
    stride = max(1, train_rows.size // batch_rows)
    rows = train_rows[::stride][:batch_rows]
    x = dataset.embeddings[rows]
    state_labels = dataset.labels[rows, 0]
    object_labels = dataset.labels[rows, 1]

    _nudge_off_kinks(model, x)

    forward, caches = forward_batch(model, x, state_labels, object_labels)
    model.zero_grads()
    backward_batch(model, caches)
    params = model.trainable_params()
    analytic = {name: p.grad.copy() for name, p in params.items()}
    values = {name: p.values for name, p in params.items()}

    def loss_fn():
        return forward_batch(model, x, state_labels, object_labels)[0].total

    report = {}
    for name in sorted(params):
        report[name] = finite_diff_check(
            loss_fn, {name: values[name]}, {name: analytic[name]}, eps=eps
        )
    report["max"] = max(report.values())
    return report


def _nudge_off_kinks(model, x, margin=2e-3):
    """Shift first-layer biases so no ReLU preactivation sits near its kink
    for the probe batch (central differences would straddle it)."""
    for module in (model.dis_state, model.dis_object):
        for _ in range(10):
            pre = x @ module.w1.values + module.b1.values
            near = np.any(np.abs(pre) < margin, axis=0)
            if not near.any():
                break
            module.b1.values[near] += 2.1 * margin
