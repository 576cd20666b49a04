"""Visual prototype codebook with star-graph refresh and semantic fusion.

Every composition (m, n) owns one codebook row. A refresh propagates the
state and object node features into that row through a single normalized
adjacency step on the 3-node star graph {row, state node, object node}:

    A_hat = D^-1/2 (A + I) D^-1/2, center row coefficients
    [1/3, 1/sqrt(6), 1/sqrt(6)]

followed by a shared linear map and L2 normalization. There is no
nonlinearity and no per-sample graph; the graph lives over node features.
Codebook writes are gradient-detached: the stored rows are constants to
the next step's backward pass.
"""

import numpy as np

from .errors import ConfigError, DataFormatError
from .kernel import as_f64, unit_rows, unit_rows_backward

CENTER_SELF = 1.0 / 3.0
CENTER_NEIGHBOR = 1.0 / np.sqrt(6.0)


class PrototypeCodebook:
    """Stored visual prototypes plus per-primitive node feature state.

    `prototypes` holds one unit row per composition in index order m*N+n.
    `node_state`/`node_object` are the current node features; the *_init
    copies are the dataset-level anchors mixed in at weight `node_mix`.
    """

    def __init__(
        self,
        prototypes,
        node_state,
        node_object,
        node_mix,
        node_state_init=None,
        node_object_init=None,
    ):
        self.prototypes = as_f64(prototypes).copy()
        self.node_state = as_f64(node_state).copy()
        self.node_object = as_f64(node_object).copy()
        self.node_state_init = (
            self.node_state.copy() if node_state_init is None else as_f64(node_state_init).copy()
        )
        self.node_object_init = (
            self.node_object.copy() if node_object_init is None else as_f64(node_object_init).copy()
        )
        if not 0.0 <= float(node_mix) <= 1.0:
            raise ConfigError(f"node_mix must lie in [0, 1], got {node_mix}")
        self.node_mix = float(node_mix)

    @property
    def num_states(self):
        return self.node_state.shape[0]

    @property
    def num_objects(self):
        return self.node_object.shape[0]

    @property
    def dim(self):
        return self.prototypes.shape[1]

    def commit(self, refreshed, new_state, state_mask, new_object, object_mask):
        """Gradient-detached write-back after an optimizer step."""
        self.prototypes[...] = refreshed
        self.node_state[state_mask] = new_state[state_mask]
        self.node_object[object_mask] = new_object[object_mask]


def init_codebook(num_states, num_objects, dim, rng):
    """Gaussian(0, 1/sqrt(dim)) rows, L2-normalized."""
    raw = rng.normal(0.0, 1.0 / np.sqrt(dim), (num_states * num_objects, dim))
    rows, _ = unit_rows(raw, error_kind="degenerate-codebook", site="init_codebook")
    return rows


def init_node_features(embeddings, labels, train_rows, num_states, num_objects):
    """Per-primitive unit means of the raw train embeddings.

    Returns (state_nodes, object_nodes). A primitive with zero train
    images has no defined node feature and is an error.
    """
    embeddings = as_f64(embeddings)
    dim = embeddings.shape[1]
    state_nodes = np.zeros((num_states, dim))
    object_nodes = np.zeros((num_objects, dim))
    for kind, count, nodes, column in (
        ("state", num_states, state_nodes, 0),
        ("object", num_objects, object_nodes, 1),
    ):
        for idx in range(count):
            rows = train_rows[labels[train_rows, column] == idx]
            if rows.size == 0:
                raise DataFormatError(
                    f"{kind} {idx} has no train images; node feature undefined",
                    kind="uncovered-primitive",
                )
            mean = embeddings[rows].mean(axis=0)
            nodes[idx], _ = unit_rows(
                mean[None, :], error_kind="degenerate-node", site="init_node_features"
            )
    return state_nodes, object_nodes


def batch_node_features(features, labels, count):
    """Unit means of `features` grouped by label value.

    Returns (nodes, mask, cache); rows of `nodes` where mask is False are
    zero and carry no meaning.
    """
    features = as_f64(features)
    labels = np.asarray(labels, dtype=np.int64)
    dim = features.shape[1]
    nodes = np.zeros((count, dim))
    means = np.zeros((count, dim))
    norms = np.ones((count, 1))
    counts = np.zeros(count, dtype=np.int64)
    mask = np.zeros(count, dtype=bool)
    for value in np.unique(labels):
        rows = np.flatnonzero(labels == value)
        counts[value] = rows.size
        mask[value] = True
        means[value] = features[rows].mean(axis=0)
        normed, norm = unit_rows(
            means[value][None, :], error_kind="degenerate-node", site="batch_node_features"
        )
        nodes[value] = normed[0]
        norms[value] = norm[0]
    cache = {"labels": labels, "counts": counts, "nodes": nodes, "norms": norms, "mask": mask}
    return nodes, mask, cache


def batch_node_features_backward(cache, d_nodes):
    """Gradient w.r.t. the stacked feature rows that fed the group means."""
    labels = cache["labels"]
    mask = cache["mask"]
    d_mean = unit_rows_backward(cache["nodes"], cache["norms"], d_nodes)
    d_mean = np.where(mask[:, None], d_mean, 0.0)
    counts = np.maximum(cache["counts"], 1)
    return d_mean[labels] / counts[labels, None]


def update_nodes(node_init, node_prev, batch_nodes, mask, node_mix):
    """Blend initial and batch node features for the primitives present.

    Present rows become normalize(node_mix * init + (1 - node_mix) * batch);
    absent rows keep the previous value. node_mix 1 or 0 short-circuits to a
    bit-exact copy of the corresponding (already unit) rows.
    """
    node_init = as_f64(node_init)
    node_prev = as_f64(node_prev)
    updated = node_prev.copy()
    cache = {"mask": mask, "node_mix": float(node_mix), "mixed": None, "norms": None}
    if not mask.any():
        return updated, cache
    if node_mix == 1.0:
        updated[mask] = node_init[mask]
        return updated, cache
    if node_mix == 0.0:
        updated[mask] = batch_nodes[mask]
        return updated, cache
    mixed = node_mix * node_init + (1.0 - node_mix) * batch_nodes
    normed, norms = unit_rows(
        mixed[mask], error_kind="degenerate-node", site="update_nodes"
    )
    updated[mask] = normed
    cache["mixed"] = normed
    cache["norms"] = norms
    return updated, cache


def update_nodes_backward(cache, d_updated):
    """Gradient w.r.t. the batch node features (init and prev are constants)."""
    mask = cache["mask"]
    mix = cache["node_mix"]
    d_batch = np.zeros_like(d_updated)
    if not mask.any() or mix == 1.0:
        return d_batch
    if mix == 0.0:
        # The extra normalize is a no-op on unit inputs and its Jacobian
        # acts as identity on tangent directions, so pass through.
        d_batch[mask] = d_updated[mask]
        return d_batch
    d_mixed = unit_rows_backward(cache["mixed"], cache["norms"], d_updated[mask])
    d_batch[mask] = (1.0 - mix) * d_mixed
    return d_batch


def _star_inputs(prototypes, node_state, node_object, num_states, num_objects):
    dim = prototypes.shape[1]
    grid = prototypes.reshape(num_states, num_objects, dim)
    mixed = (
        CENTER_SELF * grid
        + CENTER_NEIGHBOR * node_state[:, None, :]
        + CENTER_NEIGHBOR * node_object[None, :, :]
    )
    return mixed.reshape(num_states * num_objects, dim)


def gcn_refresh(prototype, state_node, object_node, graph_weight):
    """Refresh one codebook row from its star neighborhood."""
    mixed = (
        CENTER_SELF * as_f64(prototype)
        + CENTER_NEIGHBOR * as_f64(state_node)
        + CENTER_NEIGHBOR * as_f64(object_node)
    )
    projected = mixed @ as_f64(graph_weight)
    out, _ = unit_rows(projected[None, :], error_kind="degenerate-refresh", site="gcn_refresh")
    return out[0]


def refresh_all(prototypes, node_state, node_object, graph_weight):
    """Refresh every codebook row. Returns (refreshed, cache).

    The stored prototypes enter as constants; gradients flow only into the
    node features and the graph weight.
    """
    num_states = node_state.shape[0]
    num_objects = node_object.shape[0]
    if prototypes.shape[0] != num_states * num_objects:
        raise ConfigError(
            f"codebook has {prototypes.shape[0]} rows, expected {num_states * num_objects}"
        )
    mixed = _star_inputs(prototypes, node_state, node_object, num_states, num_objects)
    projected = mixed @ graph_weight
    refreshed, norms = unit_rows(
        projected, error_kind="degenerate-refresh", site="refresh_all"
    )
    cache = {
        "mixed": mixed,
        "refreshed": refreshed,
        "norms": norms,
        "M": num_states,
        "N": num_objects,
    }
    return refreshed, cache


def refresh_all_backward(cache, graph_weight, d_refreshed):
    """Returns (d_node_state, d_node_object, d_graph_weight)."""
    d_projected = unit_rows_backward(cache["refreshed"], cache["norms"], d_refreshed)
    d_graph = cache["mixed"].T @ d_projected
    d_mixed = d_projected @ graph_weight.T
    grid = d_mixed.reshape(cache["M"], cache["N"], -1)
    d_state = CENTER_NEIGHBOR * grid.sum(axis=1)
    d_object = CENTER_NEIGHBOR * grid.sum(axis=0)
    return d_state, d_object, d_graph


def fuse(refreshed, semantic, fusion_weight):
    """normalize(w * refreshed + (1 - w) * semantic) row-wise.

    fusion_weight 0 or 1 short-circuits to a bit-exact copy of the
    corresponding (already unit) rows. Returns (fused, cache).
    """
    w = float(fusion_weight)
    if not 0.0 <= w <= 1.0:
        raise ConfigError(f"fusion weight must lie in [0, 1], got {w}")
    refreshed = as_f64(refreshed)
    semantic = as_f64(semantic)
    if refreshed.shape != semantic.shape:
        raise ConfigError(
            f"fuse: shapes disagree {refreshed.shape} vs {semantic.shape}"
        )
    if w == 1.0:
        fused = refreshed.copy()
        norms = np.ones((fused.shape[0], 1))
    elif w == 0.0:
        fused = semantic.copy()
        norms = np.ones((fused.shape[0], 1))
    else:
        mixed = w * refreshed + (1.0 - w) * semantic
        fused, norms = unit_rows(mixed, error_kind="degenerate-fusion", site="fuse")
    cache = {
        "fused": fused,
        "norms": norms,
        "refreshed": refreshed,
        "semantic": semantic,
        "w": w,
    }
    return fused, cache


def fuse_backward(cache, d_fused):
    """Returns (d_refreshed, d_semantic, d_fusion_weight)."""
    d_mixed = unit_rows_backward(cache["fused"], cache["norms"], d_fused)
    w = cache["w"]
    d_refreshed = w * d_mixed
    d_semantic = (1.0 - w) * d_mixed
    d_w = float((d_mixed * (cache["refreshed"] - cache["semantic"])).sum())
    return d_refreshed, d_semantic, d_w
