"""Aggregate model state: prompts, disentanglers, codebook, fusion.

Seed discipline: every randomly initialized component draws from its own
stream default_rng([seed, k]) with a fixed k per component, so adding or
reordering draws in one component never shifts another.
"""

import numpy as np

from .config import BRANCH_SEMANTIC, BRANCH_VISUAL
from .encoders import Disentangler, FrozenTextEncoder, PromptBank
from .errors import ConfigError
from .kernel import ParamTensor
from .prototypes import PrototypeCodebook, init_codebook, init_node_features

_STREAM_TEXT = 0
_STREAM_PROMPTS = 1
_STREAM_DIS_STATE = 2
_STREAM_DIS_OBJECT = 3
_STREAM_CODEBOOK = 4


class ModelState:
    def __init__(
        self,
        space,
        text_encoder,
        bank,
        dis_state,
        dis_object,
        codebook,
        graph_weight,
        fusion_weight,
        temperature,
        branches,
    ):
        self.space = space
        self.text_encoder = text_encoder
        self.bank = bank
        self.dis_state = dis_state
        self.dis_object = dis_object
        self.codebook = codebook
        self.graph_weight = graph_weight
        self.fusion_weight = fusion_weight
        self.temperature = float(temperature)
        self.branches = tuple(branches)
        if not self.branches:
            raise ConfigError("at least one branch must be enabled")
        self.seen_indices = space.seen_indices()
        self.seen_position = np.full(space.num_compositions, -1, dtype=np.int64)
        self.seen_position[self.seen_indices] = np.arange(self.seen_indices.size)

    @property
    def num_states(self):
        return self.space.num_states

    @property
    def num_objects(self):
        return self.space.num_objects

    @property
    def dim(self):
        return self.codebook.dim

    @property
    def use_semantic_branch(self):
        return BRANCH_SEMANTIC in self.branches

    @property
    def use_visual_branch(self):
        return BRANCH_VISUAL in self.branches

    @property
    def fusion_trainable(self):
        # Single-prototype models pin the fusion weight at its endpoint
        # (0 = semantic only, 1 = visual only); it trains only when both
        # prototype kinds feed the fused head.
        return self.use_semantic_branch and self.use_visual_branch

    def trainable_params(self):
        params = {}
        params.update(self.bank.params("prompt"))
        params.update(self.dis_state.params("dis_state"))
        params.update(self.dis_object.params("dis_object"))
        params["graph.weight"] = self.graph_weight
        if self.fusion_trainable:
            params["fusion.weight"] = self.fusion_weight
        return params

    def all_params(self):
        """Every parameter, trainable or not (checkpoint payload)."""
        params = {}
        params.update(self.bank.params("prompt"))
        params.update(self.dis_state.params("dis_state"))
        params.update(self.dis_object.params("dis_object"))
        params["graph.weight"] = self.graph_weight
        params["fusion.weight"] = self.fusion_weight
        return params

    def zero_grads(self):
        for p in self.all_params().values():
            p.zero_grad()

    def clamp_fusion(self):
        np.clip(self.fusion_weight.values, 0.0, 1.0, out=self.fusion_weight.values)

    @classmethod
    def initialize(cls, space, dataset, config):
        """Fresh state for a (space, dataset, config) triple."""
        dim = dataset.dim
        if config.embed_dim is not None and config.embed_dim != dim:
            raise ConfigError(
                f"config d={config.embed_dim} but dataset embeddings have d={dim}"
            )
        token_dim = config.token_dim if config.token_dim is not None else dim
        hidden_dim = config.hidden_dim if config.hidden_dim is not None else dim
        seed = config.seed

        text_encoder = FrozenTextEncoder(token_dim, dim, seed=[seed, _STREAM_TEXT])
        bank = PromptBank(
            space.num_states,
            space.num_objects,
            token_dim,
            config.prefix_len,
            np.random.default_rng([seed, _STREAM_PROMPTS]),
        )
        dis_state = Disentangler(dim, hidden_dim, np.random.default_rng([seed, _STREAM_DIS_STATE]))
        dis_object = Disentangler(
            dim, hidden_dim, np.random.default_rng([seed, _STREAM_DIS_OBJECT])
        )

        prototypes = init_codebook(
            space.num_states,
            space.num_objects,
            dim,
            np.random.default_rng([seed, _STREAM_CODEBOOK]),
        )
        node_state, node_object = init_node_features(
            dataset.embeddings,
            dataset.labels,
            dataset.rows_of("train"),
            space.num_states,
            space.num_objects,
        )
        codebook = PrototypeCodebook(prototypes, node_state, node_object, config.node_mix)

        branches = tuple(config.branches)
        fusion_init = config.fusion_init
        if BRANCH_SEMANTIC not in branches:
            fusion_init = 1.0
        elif BRANCH_VISUAL not in branches:
            fusion_init = 0.0
        graph_weight = ParamTensor(np.eye(dim))
        fusion_weight = ParamTensor(np.array([fusion_init]))
        return cls(
            space,
            text_encoder,
            bank,
            dis_state,
            dis_object,
            codebook,
            graph_weight,
            fusion_weight,
            config.temperature,
            branches,
        )
