"""Training losses and inference scoring.

The training objective is the sum of four batch-mean cross entropies, all
over temperature-scaled cosine logits: state and object heads from the
disentangled features, a composition head against the semantic prototypes,
and a composition head against the fused (refreshed visual + semantic)
prototypes. At train time the composition softmaxes normalize over the
seen compositions only; at inference every head renormalizes over the
target space and the three probability paths are summed:

    score(c=(m,n) | x) = p_vis(c|x) + p_sem(c|x) + p(m|x) * p(n|x)

Every head is always computed; single-prototype ablations are expressed
through the fusion weight (frozen at 0 -> fused head reduces to the
semantic prototypes, frozen at 1 -> pure refreshed visual prototypes),
not by dropping losses.
"""

from dataclasses import dataclass

import numpy as np

from .encoders import (
    disentangle_backward,
    disentangle_forward,
    semantic_prototypes,
    semantic_prototypes_backward,
)
from .errors import ConfigError
from .kernel import cross_entropy_mean, softmax_with_temperature
from .prototypes import (
    batch_node_features,
    batch_node_features_backward,
    fuse,
    fuse_backward,
    refresh_all,
    refresh_all_backward,
    update_nodes,
    update_nodes_backward,
)

MODES = ("full", "c", "cprime", "cc", "so")


def class_probs(features, prototypes, tau):
    """softmax(features @ prototypes.T / tau) over the prototype rows."""
    return softmax_with_temperature(np.asarray(features) @ np.asarray(prototypes).T, tau)


@dataclass
class BatchForward:
    """Forward results for one batch: features, head probabilities, losses."""

    z_cls: np.ndarray
    z_state: np.ndarray
    z_object: np.ndarray
    probs_state: np.ndarray
    probs_object: np.ndarray
    probs_comp_sem: np.ndarray
    probs_comp_vis: np.ndarray
    loss_state: float
    loss_object: float
    loss_comp_sem: float
    loss_comp_vis: float
    total: float
    node_state_new: np.ndarray
    node_state_mask: np.ndarray
    node_object_new: np.ndarray
    node_object_mask: np.ndarray
    refreshed: np.ndarray


def forward_batch(model, x, state_labels, object_labels):
    """Compute every head and loss for one batch. Returns (BatchForward, caches).

    Pure in the model state: the codebook is read, never written. The
    trainer commits node/prototype updates after the optimizer step.
    """
    cb = model.codebook
    tau = model.temperature
    seen_idx = model.seen_indices
    seen_pos = model.seen_position

    protos, sem_cache = semantic_prototypes(model.bank, model.text_encoder)
    z_state, cache_state = disentangle_forward(model.dis_state, x)
    z_object, cache_object = disentangle_forward(model.dis_object, x)

    probs_state = class_probs(z_state, protos["state"], tau)
    loss_state, dlog_state = cross_entropy_mean(probs_state, state_labels, tau)
    probs_object = class_probs(z_object, protos["object"], tau)
    loss_object, dlog_object = cross_entropy_mean(probs_object, object_labels, tau)

    comp_targets = seen_pos[state_labels * model.num_objects + object_labels]
    if np.any(comp_targets < 0):
        raise ConfigError("batch contains a label outside the seen compositions")

    caches = {
        "sem": sem_cache,
        "dis_state": cache_state,
        "dis_object": cache_object,
        "dlog_state": dlog_state,
        "dlog_object": dlog_object,
        "protos": protos,
        "x": x,
    }

    probs_comp_sem = class_probs(x, protos["composition"][seen_idx], tau)
    loss_comp_sem, dlog_sem = cross_entropy_mean(probs_comp_sem, comp_targets, tau)
    caches["dlog_comp_sem"] = dlog_sem

    nu_hat_s, mask_state, bn_cache_s = batch_node_features(z_state, state_labels, cb.num_states)
    nu_hat_o, mask_object, bn_cache_o = batch_node_features(
        z_object, object_labels, cb.num_objects
    )
    node_state_new, up_cache_s = update_nodes(
        cb.node_state_init, cb.node_state, nu_hat_s, mask_state, cb.node_mix
    )
    node_object_new, up_cache_o = update_nodes(
        cb.node_object_init, cb.node_object, nu_hat_o, mask_object, cb.node_mix
    )
    refreshed, refresh_cache = refresh_all(
        cb.prototypes, node_state_new, node_object_new, model.graph_weight.values
    )
    fused, fuse_cache = fuse(refreshed, protos["composition"], model.fusion_weight.values[0])
    probs_comp_vis = class_probs(x, fused[seen_idx], tau)
    loss_comp_vis, dlog_vis = cross_entropy_mean(probs_comp_vis, comp_targets, tau)
    caches.update(
        {
            "bn_state": bn_cache_s,
            "bn_object": bn_cache_o,
            "up_state": up_cache_s,
            "up_object": up_cache_o,
            "refresh": refresh_cache,
            "fuse": fuse_cache,
            "dlog_comp_vis": dlog_vis,
        }
    )

    total = loss_state + loss_object + loss_comp_sem + loss_comp_vis
    forward = BatchForward(
        z_cls=x,
        z_state=z_state,
        z_object=z_object,
        probs_state=probs_state,
        probs_object=probs_object,
        probs_comp_sem=probs_comp_sem,
        probs_comp_vis=probs_comp_vis,
        loss_state=loss_state,
        loss_object=loss_object,
        loss_comp_sem=loss_comp_sem,
        loss_comp_vis=loss_comp_vis,
        total=total,
        node_state_new=node_state_new,
        node_state_mask=mask_state,
        node_object_new=node_object_new,
        node_object_mask=mask_object,
        refreshed=refreshed,
    )
    return forward, caches


def backward_batch(model, caches):
    """Accumulate d(total)/d(parameter) into every trainable ParamTensor."""
    protos = caches["protos"]
    x = caches["x"]
    num_comp = model.num_states * model.num_objects
    dim = x.shape[1]

    d_comp = np.zeros((num_comp, dim))
    d_state_proto = caches["dlog_state"].T @ caches["dis_state"][1]
    d_object_proto = caches["dlog_object"].T @ caches["dis_object"][1]
    d_z_state = caches["dlog_state"] @ protos["state"]
    d_z_object = caches["dlog_object"] @ protos["object"]

    seen_idx = model.seen_indices
    d_comp[seen_idx] += caches["dlog_comp_sem"].T @ x

    d_fused = np.zeros((num_comp, dim))
    d_fused[seen_idx] += caches["dlog_comp_vis"].T @ x
    d_refreshed, d_sem, d_w = fuse_backward(caches["fuse"], d_fused)
    d_comp += d_sem
    model.fusion_weight.grad[0] += d_w
    d_node_s, d_node_o, d_graph = refresh_all_backward(
        caches["refresh"], model.graph_weight.values, d_refreshed
    )
    model.graph_weight.grad += d_graph
    d_hat_s = update_nodes_backward(caches["up_state"], d_node_s)
    d_hat_o = update_nodes_backward(caches["up_object"], d_node_o)
    d_z_state += batch_node_features_backward(caches["bn_state"], d_hat_s)
    d_z_object += batch_node_features_backward(caches["bn_object"], d_hat_o)

    disentangle_backward(model.dis_state, caches["dis_state"], d_z_state)
    disentangle_backward(model.dis_object, caches["dis_object"], d_z_object)
    semantic_prototypes_backward(model.bank, caches["sem"], d_comp, d_state_proto, d_object_proto)


def fused_score(probs_comp_vis, probs_comp_sem, probs_state, probs_object, target_pairs):
    """Sum the three probability paths over the target compositions.

    probs_comp_* are already restricted to (and normalized over) the target
    columns; probs_state/probs_object cover every primitive. target_pairs is
    the (m, n) pair per target column. Scores land in [0, 3].
    """
    m_idx, n_idx = target_pairs
    product = probs_state[:, m_idx] * probs_object[:, n_idx]
    return probs_comp_vis + probs_comp_sem + product


def ablation_score(mode, probs_comp_vis, probs_comp_sem, probs_state, probs_object, target_pairs):
    """Score matrix for one inference formulation (see MODES)."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    m_idx, n_idx = target_pairs
    if mode == "full":
        return fused_score(probs_comp_vis, probs_comp_sem, probs_state, probs_object, target_pairs)
    if mode == "c":
        return probs_comp_sem.copy()
    if mode == "cprime":
        return probs_comp_vis.copy()
    if mode == "cc":
        return probs_comp_vis + probs_comp_sem
    return probs_state[:, m_idx] * probs_object[:, n_idx]


def predict(scores, target_indices):
    """Argmax composition per row, ties to the smallest composition index.

    Returns global composition indices. target_indices must be sorted
    ascending (target_space output), which makes positional argmax ties
    resolve to the smallest index.
    """
    scores = np.asarray(scores)
    target_indices = np.asarray(target_indices)
    if scores.ndim != 2 or scores.shape[1] != target_indices.shape[0]:
        raise ConfigError(
            f"scores shape {scores.shape} does not match {target_indices.shape[0]} targets"
        )
    return target_indices[np.argmax(scores, axis=1)]
