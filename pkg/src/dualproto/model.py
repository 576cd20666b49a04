"""Estimator facade over the training loop.

X is a matrix of unit-norm image embeddings, y an (n, 2) array of
(state, object) index pairs. fit() treats every supplied row as a seen
composition; pass X_val/y_val (which may contain novel pairs) to enable
best-epoch selection by validation AUC.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import checkpoint as ckpt
from .config import TrainConfig
from .data import CompositionSpace, EmbeddingDataset
from .encoders import disentangle
from .errors import ConfigError
from .objective import ablation_score, predict as predict_compositions
from .train import _head_probs, evaluate as evaluate_state, train
from .validation import check_label_pairs, check_unit_rows


class DualPrototypeClassifier(BaseEstimator, ClassifierMixin):
    """Compositional classifier with semantic and visual prototype branches.

    Parameters mirror TrainConfig; `space` pins an explicit
    CompositionSpace (otherwise one is inferred from the training labels,
    with every unobserved pair treated as closed-world unseen).
    """

    def __init__(
        self,
        space=None,
        lr=1e-3,
        batch_size=32,
        epochs=15,
        node_mix=0.9,
        fusion_init=0.3,
        temperature=0.01,
        prefix_len=3,
        token_dim=None,
        hidden_dim=None,
        decay_factor=0.5,
        decay_period=5,
        branches=("sp", "vp"),
        world="closed",
        seed=0,
    ):
        self.space = space
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.node_mix = node_mix
        self.fusion_init = fusion_init
        self.temperature = temperature
        self.prefix_len = prefix_len
        self.token_dim = token_dim
        self.hidden_dim = hidden_dim
        self.decay_factor = decay_factor
        self.decay_period = decay_period
        self.branches = branches
        self.world = world
        self.seed = seed

    def _config(self):
        return TrainConfig(
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            node_mix=self.node_mix,
            fusion_init=self.fusion_init,
            temperature=self.temperature,
            prefix_len=self.prefix_len,
            token_dim=self.token_dim,
            hidden_dim=self.hidden_dim,
            decay_factor=self.decay_factor,
            decay_period=self.decay_period,
            branches=tuple(self.branches),
            seed=self.seed,
        ).validate()

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_unit_rows(X, "X")
        y = check_label_pairs(y, name="y")
        if (X_val is None) != (y_val is None):
            raise ConfigError("X_val and y_val must be given together")

        if self.space is not None:
            space = self.space
        else:
            space = _infer_space(y, y_val)
        check_label_pairs(y, space.num_states, space.num_objects, "y")

        blocks = [X]
        labels = [y]
        splits = [np.full(X.shape[0], "train", dtype="<U5")]
        if X_val is not None:
            X_val = check_unit_rows(X_val, "X_val")
            y_val = check_label_pairs(y_val, space.num_states, space.num_objects, "y_val")
            if X_val.shape[1] != X.shape[1]:
                raise ConfigError("X_val dimensionality differs from X")
            blocks.append(X_val)
            labels.append(y_val)
            splits.append(np.full(X_val.shape[0], "val", dtype="<U5"))
        dataset = EmbeddingDataset(
            np.concatenate(blocks), np.concatenate(labels), np.concatenate(splits)
        )

        blob, logs = train(self._config(), dataset=dataset, space=space)
        restored = ckpt.deserialize(blob)
        self.model_, _ = ckpt.restore(restored, space)
        self.space_ = space
        self.checkpoint_ = blob
        self.logs_ = logs
        self.best_epoch_ = restored.epoch
        self.val_auc_ = restored.val_auc
        self.target_indices_ = space.target_indices(self.world)
        self.classes_ = self.target_indices_.copy()
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ConfigError("estimator is not fitted; call fit first")

    def _scores(self, X, mode="full"):
        self._check_fitted()
        X = check_unit_rows(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise ConfigError(f"X has d={X.shape[1]}, fitted with d={self.n_features_in_}")
        model = self.model_
        target_idx = self.target_indices_
        heads = _head_probs(model, X, target_idx)
        pairs = (
            target_idx // self.space_.num_objects,
            target_idx % self.space_.num_objects,
        )
        return ablation_score(
            mode, heads["comp_vis"], heads["comp_sem"], heads["state"], heads["object"], pairs
        )

    def decision_function(self, X):
        """Fused score matrix over the target compositions."""
        return self._scores(X)

    def predict(self, X):
        """Global composition index per row (state * num_objects + object)."""
        return predict_compositions(self._scores(X), self.target_indices_)

    def predict_pairs(self, X):
        comp = self.predict(X)
        return np.stack(
            [comp // self.space_.num_objects, comp % self.space_.num_objects], axis=1
        )

    def transform(self, X):
        """Disentangled unit features, state block then object block."""
        self._check_fitted()
        X = check_unit_rows(X, "X")
        z_state, z_object = disentangle(self.model_.dis_state, self.model_.dis_object, X)
        return np.hstack([z_state, z_object])

    def score(self, X, y):
        """Top-1 composition accuracy over the target space."""
        y = check_label_pairs(y, name="y")
        truth = y[:, 0] * self.space_.num_objects + y[:, 1]
        return float(np.mean(self.predict(X) == truth))

    def evaluate(self, X, y, world=None, mode="full"):
        """Full bias-sweep report; y must mix seen and unseen pairs."""
        self._check_fitted()
        X = check_unit_rows(X, "X")
        y = check_label_pairs(y, self.space_.num_states, self.space_.num_objects, "y")
        dataset = EmbeddingDataset(X, y, np.full(X.shape[0], "test", dtype="<U5"))
        return evaluate_state(
            self.model_,
            dataset,
            self.space_,
            world=self.world if world is None else world,
            mode=mode,
        )

    def retrieve_compositions(self, x, k=5):
        """Nearest fused prototypes for one embedding row."""
        self._check_fitted()
        x = check_unit_rows(np.atleast_2d(x), "x")[0]
        from .train import retrieve  # local import to avoid cycle at module load

        dataset = EmbeddingDataset(
            x[None, :], np.zeros((1, 2), dtype=np.int64), np.array(["test"], dtype="<U5")
        )
        return retrieve(self.model_, dataset, self.space_, "image", 0, k, world=self.world)


def _infer_space(y, y_val=None):
    stacked = y if y_val is None else np.concatenate([y, y_val])
    num_states = int(stacked[:, 0].max()) + 1
    num_objects = int(stacked[:, 1].max()) + 1
    seen = {(int(m), int(n)) for m, n in y}
    unseen = {
        (m, n)
        for m in range(num_states)
        for n in range(num_objects)
        if (m, n) not in seen
    }
    return CompositionSpace(
        tuple(f"s{m}" for m in range(num_states)),
        tuple(f"o{n}" for n in range(num_objects)),
        seen,
        unseen,
        world="closed",
    )
