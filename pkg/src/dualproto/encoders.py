"""Soft-prompt semantic prototypes and the visual feature disentanglers.

The text side is a bank of learnable token rows: a shared context prefix
per prompt kind plus one token per state and per object. A frozen random
projection stands in for the text encoder over precomputed embeddings:
tokens are mean-pooled, projected, and L2-normalized. The visual side maps
a backbone embedding through two small MLPs into normalized state and
object features.
"""

import numpy as np

from .errors import ConfigError
from .kernel import (
    ParamTensor,
    mlp2_backward,
    mlp2_forward,
    unit_rows,
    unit_rows_backward,
)

PROMPT_KINDS = ("composition", "state", "object")


class FrozenTextEncoder:
    """Deterministic frozen map from a token matrix to a unit vector.

    The projection is seeded once and never trained; for a given seed it is
    bit-identical across runs and processes. The seeded Gaussian draw is
    QR-orthogonalized so the map is an isometry on its input (token) space:
    prompt geometry survives the projection undistorted, which keeps the
    prompt optimization landscape well conditioned.
    """

    def __init__(self, token_dim, embed_dim, seed):
        rng = np.random.default_rng(seed)
        raw = rng.standard_normal((token_dim, embed_dim))
        if token_dim >= embed_dim:
            q, r = np.linalg.qr(raw)
            self.projection = q * np.sign(np.diag(r))
        else:
            q, r = np.linalg.qr(raw.T)
            self.projection = (q * np.sign(np.diag(r))).T
        self.token_dim = int(token_dim)
        self.embed_dim = int(embed_dim)
        self.seed = seed

    def encode(self, tokens):
        """Mean-pool token rows, project, L2-normalize."""
        tokens = np.asarray(tokens, dtype=np.float64)
        if tokens.ndim != 2 or tokens.shape[1] != self.token_dim:
            raise ConfigError(
                f"token matrix shape {tokens.shape} incompatible with token_dim {self.token_dim}"
            )
        pooled = tokens.mean(axis=0)
        projected = pooled @ self.projection
        out, _ = unit_rows(projected[None, :], error_kind="degenerate-prompt", site="encode_text")
        return out[0]


def encode_text(tokens, encoder):
    return encoder.encode(tokens)


class PromptBank:
    """Learnable soft-prompt parameters.

    Three context prefixes (composition/state/object prompts) of
    `prefix_len` rows each, plus one token row per state and per object.
    Context rows init Gaussian std 0.02; primitive rows Gaussian scaled
    0.1/sqrt(token_dim). Small token norms matter: the prototypes are
    normalized after pooling, so a fixed optimizer step moves a short token
    through a larger angle, and the prompt side has to cross most of its
    angular distance before the low-temperature CE saturates.
    """

    TOKEN_INIT_SCALE = 0.1

    def __init__(self, num_states, num_objects, token_dim, prefix_len, rng):
        if prefix_len < 1:
            raise ConfigError(f"prefix_len must be >= 1, got {prefix_len}")
        self.num_states = int(num_states)
        self.num_objects = int(num_objects)
        self.token_dim = int(token_dim)
        self.prefix_len = int(prefix_len)
        scale = self.TOKEN_INIT_SCALE / np.sqrt(token_dim)
        self.ctx_composition = ParamTensor(0.02 * rng.standard_normal((prefix_len, token_dim)))
        self.ctx_state = ParamTensor(0.02 * rng.standard_normal((prefix_len, token_dim)))
        self.ctx_object = ParamTensor(0.02 * rng.standard_normal((prefix_len, token_dim)))
        self.state_tokens = ParamTensor(scale * rng.standard_normal((num_states, token_dim)))
        self.object_tokens = ParamTensor(scale * rng.standard_normal((num_objects, token_dim)))

    def params(self, prefix="prompt"):
        return {
            f"{prefix}.ctx_composition": self.ctx_composition,
            f"{prefix}.ctx_state": self.ctx_state,
            f"{prefix}.ctx_object": self.ctx_object,
            f"{prefix}.state_tokens": self.state_tokens,
            f"{prefix}.object_tokens": self.object_tokens,
        }


def compose_prompt(kind, bank, state=None, obj=None):
    """Stack context rows and primitive tokens for one prompt.

    composition -> [ctx_composition; state_tokens[state]; object_tokens[obj]]
    state       -> [ctx_state; state_tokens[state]]
    object      -> [ctx_object; object_tokens[obj]]
    Pure function of (kind, indices, bank values).
    """
    if kind == "composition":
        if state is None or obj is None:
            raise ConfigError("composition prompt needs both state and object")
        rows = [
            bank.ctx_composition.values,
            bank.state_tokens.values[int(state)][None, :],
            bank.object_tokens.values[int(obj)][None, :],
        ]
    elif kind == "state":
        if state is None:
            raise ConfigError("state prompt needs a state index")
        rows = [bank.ctx_state.values, bank.state_tokens.values[int(state)][None, :]]
    elif kind == "object":
        if obj is None:
            raise ConfigError("object prompt needs an object index")
        rows = [bank.ctx_object.values, bank.object_tokens.values[int(obj)][None, :]]
    else:
        raise ConfigError(f"unknown prompt kind {kind!r}")
    return np.concatenate(rows, axis=0)


def semantic_prototypes(bank, encoder, num_states=None, num_objects=None):
    """Encode every composition/state/object prompt.

    Returns (protos, cache): protos has unit-row matrices
    `composition` (M*N, d) in index order m*N+n, `state` (M, d),
    `object` (N, d). The cache feeds semantic_prototypes_backward.
    """
    M = bank.num_states if num_states is None else num_states
    N = bank.num_objects if num_objects is None else num_objects
    K = bank.prefix_len
    proj = encoder.projection

    ctx_c_sum = bank.ctx_composition.values.sum(axis=0)
    ctx_s_sum = bank.ctx_state.values.sum(axis=0)
    ctx_o_sum = bank.ctx_object.values.sum(axis=0)
    st = bank.state_tokens.values
    ob = bank.object_tokens.values

    pooled_c = (ctx_c_sum[None, None, :] + st[:, None, :] + ob[None, :, :]) / (K + 2)
    pooled_c = pooled_c.reshape(M * N, -1)
    pooled_s = (ctx_s_sum[None, :] + st) / (K + 1)
    pooled_o = (ctx_o_sum[None, :] + ob) / (K + 1)

    pre_c = pooled_c @ proj
    pre_s = pooled_s @ proj
    pre_o = pooled_o @ proj
    comp, norm_c = unit_rows(pre_c, error_kind="degenerate-prompt", site="semantic_prototypes")
    state, norm_s = unit_rows(pre_s, error_kind="degenerate-prompt", site="semantic_prototypes")
    obj, norm_o = unit_rows(pre_o, error_kind="degenerate-prompt", site="semantic_prototypes")

    protos = {"composition": comp, "state": state, "object": obj}
    cache = {
        "M": M,
        "N": N,
        "K": K,
        "proj": proj,
        "comp": comp,
        "state": state,
        "object": obj,
        "norm_c": norm_c,
        "norm_s": norm_s,
        "norm_o": norm_o,
    }
    return protos, cache


def semantic_prototypes_backward(bank, cache, d_comp, d_state, d_obj):
    """Accumulate prototype gradients into the bank parameters."""
    M, N, K = cache["M"], cache["N"], cache["K"]
    proj_t = cache["proj"].T

    d_pooled_c = unit_rows_backward(cache["comp"], cache["norm_c"], d_comp) @ proj_t
    d_pooled_s = unit_rows_backward(cache["state"], cache["norm_s"], d_state) @ proj_t
    d_pooled_o = unit_rows_backward(cache["object"], cache["norm_o"], d_obj) @ proj_t

    d_pooled_c /= K + 2
    d_pooled_s /= K + 1
    d_pooled_o /= K + 1

    grid = d_pooled_c.reshape(M, N, -1)
    bank.ctx_composition.grad += d_pooled_c.sum(axis=0)[None, :]
    bank.ctx_state.grad += d_pooled_s.sum(axis=0)[None, :]
    bank.ctx_object.grad += d_pooled_o.sum(axis=0)[None, :]
    bank.state_tokens.grad += grid.sum(axis=1) + d_pooled_s
    bank.object_tokens.grad += grid.sum(axis=0) + d_pooled_o


class Disentangler:
    """Two-layer MLP projecting a backbone embedding to one primitive's
    feature space; outputs are L2-normalized by the forward helpers."""

    def __init__(self, dim, hidden_dim, rng):
        self.w1 = ParamTensor(rng.standard_normal((dim, hidden_dim)) / np.sqrt(dim))
        self.b1 = ParamTensor(np.zeros(hidden_dim))
        self.w2 = ParamTensor(rng.standard_normal((hidden_dim, dim)) / np.sqrt(hidden_dim))
        self.b2 = ParamTensor(np.zeros(dim))

    def params(self, prefix):
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }


def disentangle_forward(module, x):
    """normalize(mlp2(x)) for a batch of rows. Returns (features, cache)."""
    raw, mlp_cache = mlp2_forward(
        x, module.w1.values, module.b1.values, module.w2.values, module.b2.values
    )
    if raw.ndim == 1:
        raw = raw[None, :]
    feats, norms = unit_rows(raw, error_kind="degenerate-feature", site="disentangle")
    return feats, (mlp_cache, feats, norms)


def disentangle_backward(module, cache, d_feats):
    """Accumulate gradients into the module; returns dx for completeness."""
    mlp_cache, feats, norms = cache
    d_raw = unit_rows_backward(feats, norms, d_feats)
    dx, dw1, db1, dw2, db2 = mlp2_backward(mlp_cache, module.w1.values, module.w2.values, d_raw)
    module.w1.grad += dw1
    module.b1.grad += db1
    module.w2.grad += dw2
    module.b2.grad += db2
    return dx


def disentangle(module_state, module_object, x):
    """Convenience forward for both branches; returns (z_state, z_object)."""
    zs, _ = disentangle_forward(module_state, x)
    zo, _ = disentangle_forward(module_object, x)
    return zs, zo
