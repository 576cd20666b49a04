"""Seen/unseen bias-sweep evaluation.

A scalar bias is added to every unseen-class score and swept from -inf to
+inf; each bias yields one (seen accuracy, unseen accuracy) operating
point. The sweep only needs a finite set of biases: per image, the
differences between its best seen score and each unseen score locate the
switch points, and the midpoints between consecutive candidates realize
the open-interval outcomes that exact-tie evaluation at the switch points
can miss under the smallest-index tie rule. Sentinel biases at -inf/+inf
restrict the argmax to the seen/unseen columns.

Summary metrics: S and U are the sentinel accuracies, HM is the best
harmonic mean over the curve, AUC is the trapezoidal area under the
Pareto-dominant upper envelope of the curve.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError

_FLOAT_KEYS = ("S", "U", "HM", "AUC")


@dataclass
class EvalCurve:
    """Operating points indexed by bias, sorted ascending by bias."""

    biases: np.ndarray
    seen_acc: np.ndarray
    unseen_acc: np.ndarray

    def __len__(self):
        return self.biases.shape[0]


@dataclass
class MetricsReport:
    world: str
    mode: str
    seen: float
    unseen: float
    harmonic_mean: float
    auc: float
    curve: EvalCurve = None

    def to_text(self):
        return (
            f"world={self.world}\n"
            f"mode={self.mode}\n"
            f"S={self.seen!r}\n"
            f"U={self.unseen!r}\n"
            f"HM={self.harmonic_mean!r}\n"
            f"AUC={self.auc!r}\n"
        )

    @classmethod
    def from_text(cls, text):
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(f"bad report line {line!r}", kind="bad-format")
            key, value = line.split("=", 1)
            kv[key] = value
        missing = {"world", "mode", *_FLOAT_KEYS} - kv.keys()
        if missing:
            raise DataFormatError(f"report missing keys {sorted(missing)}", kind="bad-format")
        return cls(
            world=kv["world"],
            mode=kv["mode"],
            seen=float(kv["S"]),
            unseen=float(kv["U"]),
            harmonic_mean=float(kv["HM"]),
            auc=float(kv["AUC"]),
        )

    def curve_csv(self):
        lines = ["bias,seen_acc,unseen_acc"]
        for b, s, u in zip(self.curve.biases, self.curve.seen_acc, self.curve.unseen_acc):
            lines.append(f"{float(b)!r},{float(s)!r},{float(u)!r}")
        return "\n".join(lines) + "\n"


def _validate_sweep_inputs(scores, labels, unseen_mask):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    unseen_mask = np.asarray(unseen_mask, dtype=bool)
    if scores.ndim != 2:
        raise ConfigError(f"scores must be 2-d, got {scores.shape}")
    if not np.isfinite(scores).all():
        raise ConfigError("scores contain non-finite values")
    n, c = scores.shape
    if unseen_mask.shape != (c,):
        raise ConfigError(f"unseen mask shape {unseen_mask.shape} != ({c},)")
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=-1) >= c:
        raise ConfigError("labels must index score columns")
    if not unseen_mask.any() or unseen_mask.all():
        raise ConfigError("target space must contain both seen and unseen classes")
    return scores, labels, unseen_mask


def candidate_biases(scores, unseen_mask):
    """Finite threshold set realizing every achievable accuracy pair.

    Per image: (best seen score - each unseen score), deduplicated across
    images, plus midpoints of consecutive values, with -inf/+inf sentinels.
    """
    scores = np.asarray(scores, dtype=np.float64)
    unseen_mask = np.asarray(unseen_mask, dtype=bool)
    if scores.ndim != 2 or unseen_mask.shape != (scores.shape[1],):
        raise ConfigError("candidate_biases: shape mismatch")
    if not unseen_mask.any() or unseen_mask.all():
        raise ConfigError("target space must contain both seen and unseen classes")
    best_seen = scores[:, ~unseen_mask].max(axis=1)
    diffs = (best_seen[:, None] - scores[:, unseen_mask]).ravel()
    uniq = np.unique(diffs)
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    finite = np.unique(np.concatenate([uniq, mids]))
    return np.concatenate([[-np.inf], finite, [np.inf]])


def bias_sweep(scores, labels, unseen_mask):
    """Accuracy curve over the candidate biases.

    Ties in the biased argmax go to the smallest class index. Asserts the
    protocol monotonicity: seen accuracy never increases and unseen
    accuracy never decreases along increasing bias.
    """
    scores, labels, unseen_mask = _validate_sweep_inputs(scores, labels, unseen_mask)
    n = scores.shape[0]
    seen_cols = np.flatnonzero(~unseen_mask)
    unseen_cols = np.flatnonzero(unseen_mask)

    masked_seen = np.where(unseen_mask[None, :], -np.inf, scores)
    masked_unseen = np.where(unseen_mask[None, :], scores, -np.inf)
    seen_arg = np.argmax(masked_seen, axis=1)
    unseen_arg = np.argmax(masked_unseen, axis=1)
    best_seen = scores[np.arange(n), seen_arg]
    best_unseen = scores[np.arange(n), unseen_arg]

    # An image flips to an unseen prediction once bias exceeds its switch
    # threshold; at an exact tie the smaller class index wins.
    threshold = best_seen - best_unseen
    unseen_wins_tie = unseen_arg < seen_arg

    truth_unseen = unseen_mask[labels]
    n_seen_img = int((~truth_unseen).sum())
    n_unseen_img = int(truth_unseen.sum())
    if n_seen_img == 0 or n_unseen_img == 0:
        raise ConfigError("evaluation rows must include both seen-pair and unseen-pair images")

    seen_ok = ~truth_unseen & (seen_arg == labels)
    unseen_ok = truth_unseen & (unseen_arg == labels)

    biases = candidate_biases(scores, unseen_mask)

    def switched_counts(member):
        t = np.sort(threshold[member])
        t_tie = np.sort(threshold[member & unseen_wins_tie])
        below = np.searchsorted(t, biases, side="left")
        ties = np.searchsorted(t_tie, biases, side="right") - np.searchsorted(
            t_tie, biases, side="left"
        )
        return below + ties

    seen_correct = seen_ok.sum() - switched_counts(seen_ok)
    unseen_correct = switched_counts(unseen_ok)
    seen_acc = seen_correct / n_seen_img
    unseen_acc = unseen_correct / n_unseen_img

    assert np.all(np.diff(seen_acc) <= 0), "seen accuracy must be non-increasing in bias"
    assert np.all(np.diff(unseen_acc) >= 0), "unseen accuracy must be non-decreasing in bias"
    return EvalCurve(biases=biases, seen_acc=seen_acc, unseen_acc=unseen_acc)


def pareto_envelope(seen_acc, unseen_acc):
    """Indices of the non-dominated points, sorted by seen accuracy."""
    seen_acc = np.asarray(seen_acc, dtype=np.float64)
    unseen_acc = np.asarray(unseen_acc, dtype=np.float64)
    order = np.lexsort((unseen_acc, seen_acc))
    kept = []
    best_unseen = -np.inf
    for idx in order[::-1]:
        if unseen_acc[idx] > best_unseen:
            kept.append(idx)
            best_unseen = unseen_acc[idx]
    return np.array(kept[::-1], dtype=np.int64)


def area_under_envelope(seen_acc, unseen_acc):
    """Trapezoid under the Pareto envelope, extended flat back to seen=0."""
    keep = pareto_envelope(seen_acc, unseen_acc)
    s = np.asarray(seen_acc, dtype=np.float64)[keep]
    u = np.asarray(unseen_acc, dtype=np.float64)[keep]
    if s[0] > 0.0:
        s = np.concatenate([[0.0], s])
        u = np.concatenate([[u[0]], u])
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    return float(trapezoid(u, s))


def summarize(curve, world="closed", mode="full"):
    """Collapse a sweep curve into S, U, best HM, and AUC."""
    if len(curve) < 2:
        raise ConfigError("curve needs at least the two sentinel points")
    if not (np.isinf(curve.biases[0]) and np.isinf(curve.biases[-1])):
        raise ConfigError("curve must span the -inf/+inf sentinels")
    s = np.asarray(curve.seen_acc, dtype=np.float64)
    u = np.asarray(curve.unseen_acc, dtype=np.float64)
    denom = s + u
    hm = np.where(denom > 0.0, 2.0 * s * u / np.where(denom > 0.0, denom, 1.0), 0.0)
    return MetricsReport(
        world=world,
        mode=mode,
        seen=float(s[0]),
        unseen=float(u[-1]),
        harmonic_mean=float(hm.max()),
        auc=area_under_envelope(s, u),
        curve=curve,
    )


def topk(query, gallery, k):
    """Indices of the k largest dot products, descending, ties by smaller index."""
    query = np.asarray(query, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if gallery.ndim != 2 or query.shape != (gallery.shape[1],):
        raise ConfigError(f"topk: query {query.shape} vs gallery {gallery.shape}")
    if not 1 <= k <= gallery.shape[0]:
        raise ConfigError(f"k must lie in [1, {gallery.shape[0]}], got {k}")
    dots = gallery @ query
    order = np.argsort(-dots, kind="stable")
    return order[:k]
