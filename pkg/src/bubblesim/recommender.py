"""Trainable MF/FM scoring models and the feedback-weighted training loop.

Both models emit click-through probabilities via a sigmoid over a latent
score; training is per-sample SGD on a feedback-weighted binary
cross-entropy with L2 regularization on the latent factors. Negative
feedback enters either as flipped labels (default) or as signed weights
(literal mode).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agents import FeedbackRecord, FeedbackType
from .catalog import Catalog
from .personas import UserProfile

logger = logging.getLogger(__name__)

EPS = 1e-7  # prediction clamp inside the loss
LABEL_MODES = ("label-flip", "literal")


class RecommenderError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


# --- feedback weight strategies -------------------------------------------


@dataclass(frozen=True)
class FeedbackWeights:
    name: str
    weights: dict

    def __post_init__(self):
        missing = [fb for fb in FeedbackType if fb not in self.weights]
        if missing:
            raise RecommenderError(f"strategy {self.name!r} missing weights for {missing}")

    def weight(self, feedback: FeedbackType) -> float:
        return self.weights[feedback]


def _strategy(name: str, jw: float, like: float, comment: float, collect: float,
              skip: float, dislike: float) -> FeedbackWeights:
    return FeedbackWeights(
        name,
        {
            FeedbackType.JUST_WATCH: jw,
            FeedbackType.WATCH_AND_LIKE: like,
            FeedbackType.WATCH_AND_COMMENT: comment,
            FeedbackType.WATCH_AND_COLLECT: collect,
            FeedbackType.SKIP: skip,
            FeedbackType.DISLIKE: dislike,
        },
    )


# "simple" collapses everything to implicit watch-or-skip signals, so the
# unlisted positive actions count as a plain watch and dislike as a skip.
STRATEGIES = {
    "default": _strategy("default", 1, 2, 2, 2, 0, -1),
    "simple": _strategy("simple", 1, 1, 1, 1, 0, 0),
    "progressive": _strategy("progressive", 1, 2, 3, 4, -1, -2),
    "reversed": _strategy("reversed", 2, 1, 1, 1, 0, -1),
}


@dataclass(frozen=True)
class TrainSample:
    user: int
    item: int
    y: float
    weight: float
    source: FeedbackType
    features: tuple = ()  # FM active feature indices; empty for MF


def feedback_to_sample(
    record: FeedbackRecord,
    strategy: FeedbackWeights,
    mode: str = "label-flip",
    *,
    user_index: dict,
    item_index: dict,
    features: tuple = (),
) -> TrainSample | None:
    """Turn one feedback record into a weighted training sample.

    "label-flip" (default) maps negative-weight feedback to y=0 with the
    absolute weight; "literal" keeps y=1 and the signed weight exactly as
    written in the loss. Zero-weight feedback yields no sample.
    """
    if mode not in LABEL_MODES:
        raise RecommenderError(f"unknown label mode {mode!r}")
    w = float(strategy.weight(record.feedback))
    if w == 0.0:
        return None
    y = 1.0
    if mode == "label-flip" and w < 0.0:
        y, w = 0.0, abs(w)
    return TrainSample(
        user=user_index[record.user_id],
        item=item_index[record.item_id],
        y=y,
        weight=w,
        source=record.feedback,
        features=features,
    )


# --- losses ----------------------------------------------------------------


def weighted_bce(predictions, samples) -> float:
    """Feedback-weighted binary cross-entropy, averaged over the batch."""
    if len(samples) == 0:
        raise RecommenderError("empty sample list")
    if len(predictions) != len(samples):
        raise RecommenderError("predictions and samples must align")
    total = 0.0
    for y_hat, sample in zip(predictions, samples):
        y_c = min(max(y_hat, EPS), 1.0 - EPS)
        total += sample.weight * (
            sample.y * math.log(y_c) + (1.0 - sample.y) * math.log(1.0 - y_c)
        )
    return -total / len(samples)


def _loss_term_and_gain(y_hat: float, sample: TrainSample) -> tuple[float, float]:
    """Per-sample loss contribution and dLoss/dz (zero where the clamp is flat)."""
    y_c = min(max(y_hat, EPS), 1.0 - EPS)
    loss = -sample.weight * (
        sample.y * math.log(y_c) + (1.0 - sample.y) * math.log(1.0 - y_c)
    )
    if EPS < y_hat < 1.0 - EPS:
        gain = sample.weight * (y_hat - sample.y)
    else:
        gain = 0.0
    return loss, gain


# --- matrix factorization ----------------------------------------------------


class MFModel:
    """Biased matrix factorization: sigmoid(b + b_u + b_i + <p_u, q_i>)."""

    kind = "mf"

    def __init__(self, user_ids, item_ids, dim, global_bias, user_bias, item_bias,
                 user_vecs, item_vecs):
        self.user_ids = list(user_ids)
        self.item_ids = list(item_ids)
        self.dim = dim
        self.user_index = {uid: i for i, uid in enumerate(self.user_ids)}
        self.item_index = {iid: i for i, iid in enumerate(self.item_ids)}
        self.global_bias = float(global_bias)
        self.user_bias = np.asarray(user_bias, dtype=np.float64)
        self.item_bias = np.asarray(item_bias, dtype=np.float64)
        self.user_vecs = np.asarray(user_vecs, dtype=np.float64)
        self.item_vecs = np.asarray(item_vecs, dtype=np.float64)

    @classmethod
    def init(cls, user_ids, item_ids, dim: int = 16, seed: int = 0,
             init_scale: float = 0.1) -> "MFModel":
        rng = np.random.default_rng(seed)
        n_users, n_items = len(user_ids), len(item_ids)
        return cls(
            user_ids,
            item_ids,
            dim,
            global_bias=rng.normal(0.0, init_scale),
            user_bias=rng.normal(0.0, init_scale, n_users),
            item_bias=rng.normal(0.0, init_scale, n_items),
            user_vecs=rng.normal(0.0, init_scale, (n_users, dim)),
            item_vecs=rng.normal(0.0, init_scale, (n_items, dim)),
        )

    def score(self, user: int, item: int) -> float:
        if not (0 <= user < len(self.user_ids) and 0 <= item < len(self.item_ids)):
            raise RecommenderError(f"index out of range: user={user} item={item}")
        return float(
            self.global_bias
            + self.user_bias[user]
            + self.item_bias[item]
            + self.user_vecs[user] @ self.item_vecs[item]
        )

    def predict(self, user: int, item: int) -> float:
        return _sigmoid(self.score(user, item))

    def predict_sample(self, sample: TrainSample) -> float:
        return self.predict(sample.user, sample.item)

    def catalog_scores(self, user) -> np.ndarray:
        """Raw scores for every item, aligned with self.item_ids."""
        uid = user.user_id if isinstance(user, UserProfile) else user
        u = self.user_index[uid]
        return (
            self.global_bias
            + self.user_bias[u]
            + self.item_bias
            + self.item_vecs @ self.user_vecs[u]
        )

    def sgd_step(self, sample: TrainSample, lr: float, reg: float) -> None:
        u, i = sample.user, sample.item
        y_hat = self.predict(u, i)
        _, g = _loss_term_and_gain(y_hat, sample)
        self.global_bias -= lr * g
        self.user_bias[u] -= lr * g
        self.item_bias[i] -= lr * g
        p_old = self.user_vecs[u].copy()
        self.user_vecs[u] -= lr * (g * self.item_vecs[i] + reg * self.user_vecs[u])
        self.item_vecs[i] -= lr * (g * p_old + reg * self.item_vecs[i])

    def params(self) -> dict:
        return {
            "global_bias": self.global_bias,
            "user_bias": self.user_bias,
            "item_bias": self.item_bias,
            "user_vecs": self.user_vecs,
            "item_vecs": self.item_vecs,
        }

    def all_finite(self) -> bool:
        return (
            math.isfinite(self.global_bias)
            and bool(np.all(np.isfinite(self.user_bias)))
            and bool(np.all(np.isfinite(self.item_bias)))
            and bool(np.all(np.isfinite(self.user_vecs)))
            and bool(np.all(np.isfinite(self.item_vecs)))
        )

    def loss_and_grads(self, samples) -> tuple[float, dict]:
        """Batch loss (mean weighted BCE, no regularizer) and its gradients."""
        if not samples:
            raise RecommenderError("empty sample list")
        n = len(samples)
        grads = {
            "global_bias": 0.0,
            "user_bias": np.zeros_like(self.user_bias),
            "item_bias": np.zeros_like(self.item_bias),
            "user_vecs": np.zeros_like(self.user_vecs),
            "item_vecs": np.zeros_like(self.item_vecs),
        }
        total = 0.0
        for sample in samples:
            y_hat = self.predict(sample.user, sample.item)
            loss, g = _loss_term_and_gain(y_hat, sample)
            total += loss
            g /= n
            grads["global_bias"] += g
            grads["user_bias"][sample.user] += g
            grads["item_bias"][sample.item] += g
            grads["user_vecs"][sample.user] += g * self.item_vecs[sample.item]
            grads["item_vecs"][sample.item] += g * self.user_vecs[sample.user]
        return total / n, grads

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "user_ids": self.user_ids,
            "item_ids": self.item_ids,
            "global_bias": self.global_bias,
            "user_bias": self.user_bias.tolist(),
            "item_bias": self.item_bias.tolist(),
            "user_vecs": self.user_vecs.tolist(),
            "item_vecs": self.item_vecs.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MFModel":
        return cls(
            data["user_ids"],
            data["item_ids"],
            data["dim"],
            data["global_bias"],
            data["user_bias"],
            data["item_bias"],
            data["user_vecs"],
            data["item_vecs"],
        )


def predict_mf(model: MFModel, user: int, item: int) -> float:
    return model.predict(user, item)


# --- factorization machine ---------------------------------------------------

# Feature fields, in vocabulary order. Age is deliberately not a feature:
# only gender, city level, and phone price describe the user beyond the id.
FM_USER_FIELDS = ("user", "gender", "city_level", "phone_price")
FM_ITEM_FIELDS = ("item", "category_l1", "category_l2", "category_l3")


class FMModel:
    """Second-order factorization machine over one-hot user/item/side features."""

    kind = "fm"

    def __init__(self, vocab, dim, w0, w, factors, user_features, item_features,
                 item_ids):
        self.vocab = [tuple(key) for key in vocab]  # ordered (field, value) pairs
        self.vocab_index = {key: i for i, key in enumerate(self.vocab)}
        self.dim = dim
        self.w0 = float(w0)
        self.w = np.asarray(w, dtype=np.float64)
        self.factors = np.asarray(factors, dtype=np.float64)
        # active-feature tuples, keyed by user id / aligned with item_ids
        self.user_features = {uid: tuple(f) for uid, f in user_features.items()}
        self.item_features = [tuple(f) for f in item_features]
        self.item_ids = list(item_ids)
        self.item_index = {iid: i for i, iid in enumerate(self.item_ids)}
        self.user_index = {uid: i for i, uid in enumerate(self.user_features)}
        self._item_feat_matrix = np.asarray(self.item_features, dtype=np.intp)

    @classmethod
    def init(cls, profiles, catalog: Catalog, dim: int = 16, seed: int = 0,
             init_scale: float = 0.1) -> "FMModel":
        from .personas import CITY_LEVELS, GENDERS, PHONE_PRICE_BANDS

        vocab: list[tuple[str, str]] = []
        vocab.extend(("user", p.user_id) for p in profiles)
        vocab.extend(("item", item.item_id) for item in catalog.items)
        vocab.extend(("gender", g) for g in GENDERS)
        vocab.extend(("city_level", str(c)) for c in CITY_LEVELS)
        vocab.extend(("phone_price", band) for band in PHONE_PRICE_BANDS)
        for level in (1, 2, 3):
            vocab.extend(
                (f"category_l{level}", name)
                for name in sorted(catalog.hierarchy.level_names(level))
            )
        index = {key: i for i, key in enumerate(vocab)}
        user_features = {
            p.user_id: (
                index[("user", p.user_id)],
                index[("gender", p.gender)],
                index[("city_level", str(p.city_level))],
                index[("phone_price", p.phone_price)],
            )
            for p in profiles
        }
        item_features = [
            (
                index[("item", item.item_id)],
                index[("category_l1", item.category_l1)],
                index[("category_l2", item.category_l2)],
                index[("category_l3", item.category_l3)],
            )
            for item in catalog.items
        ]
        rng = np.random.default_rng(seed)
        n = len(vocab)
        return cls(
            vocab,
            dim,
            w0=rng.normal(0.0, init_scale),
            w=rng.normal(0.0, init_scale, n),
            factors=rng.normal(0.0, init_scale, (n, dim)),
            user_features=user_features,
            item_features=item_features,
            item_ids=[item.item_id for item in catalog.items],
        )

    def features_for(self, profile: UserProfile, item_id: str) -> tuple:
        return self.user_features[profile.user_id] + self.item_features[self.item_index[item_id]]

    def _check_features(self, features) -> np.ndarray:
        idx = np.asarray(features, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self.vocab)):
            raise RecommenderError(f"feature index out of range (vocab size {len(self.vocab)})")
        if len(set(features)) != len(features):
            raise RecommenderError("duplicate active feature index")
        return idx

    def score(self, features) -> float:
        """Linear + pairwise score via the O(d*m) sum-of-squares identity."""
        idx = self._check_features(features)
        vf = self.factors[idx]
        s = vf.sum(axis=0)
        return float(self.w0 + self.w[idx].sum() + 0.5 * (s @ s - (vf * vf).sum()))

    def predict(self, features) -> float:
        return _sigmoid(self.score(features))

    def predict_sample(self, sample: TrainSample) -> float:
        return self.predict(sample.features)

    def catalog_scores(self, user) -> np.ndarray:
        profile = user if isinstance(user, UserProfile) else None
        if profile is None:
            raise RecommenderError("FM scoring requires the user profile")
        uf = np.asarray(self.user_features[profile.user_id], dtype=np.intp)
        u_w = self.w[uf].sum()
        u_s = self.factors[uf].sum(axis=0)
        u_sq = (self.factors[uf] ** 2).sum()
        items = self._item_feat_matrix
        i_w = self.w[items].sum(axis=1)
        i_s = self.factors[items].sum(axis=1)  # (n_items, dim)
        i_sq = (self.factors[items] ** 2).sum(axis=(1, 2))
        pair = 0.5 * (
            (u_s @ u_s)
            + 2.0 * (i_s @ u_s)
            + (i_s * i_s).sum(axis=1)
            - u_sq
            - i_sq
        )
        return self.w0 + u_w + i_w + pair

    def sgd_step(self, sample: TrainSample, lr: float, reg: float) -> None:
        idx = np.asarray(sample.features, dtype=np.intp)
        vf = self.factors[idx]
        s = vf.sum(axis=0)
        z = self.w0 + self.w[idx].sum() + 0.5 * float(s @ s - (vf * vf).sum())
        _, g = _loss_term_and_gain(_sigmoid(z), sample)
        self.w0 -= lr * g
        self.w[idx] -= lr * g
        self.factors[idx] -= lr * (g * (s[None, :] - vf) + reg * vf)

    def params(self) -> dict:
        return {"w0": self.w0, "w": self.w, "factors": self.factors}

    def all_finite(self) -> bool:
        return (
            math.isfinite(self.w0)
            and bool(np.all(np.isfinite(self.w)))
            and bool(np.all(np.isfinite(self.factors)))
        )

    def loss_and_grads(self, samples) -> tuple[float, dict]:
        if not samples:
            raise RecommenderError("empty sample list")
        n = len(samples)
        grads = {
            "w0": 0.0,
            "w": np.zeros_like(self.w),
            "factors": np.zeros_like(self.factors),
        }
        total = 0.0
        for sample in samples:
            idx = np.asarray(sample.features, dtype=np.intp)
            vf = self.factors[idx]
            s = vf.sum(axis=0)
            z = self.w0 + self.w[idx].sum() + 0.5 * float(s @ s - (vf * vf).sum())
            loss, g = _loss_term_and_gain(_sigmoid(z), sample)
            total += loss
            g /= n
            grads["w0"] += g
            grads["w"][idx] += g
            grads["factors"][idx] += g * (s[None, :] - vf)
        return total / n, grads

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "vocab": [list(key) for key in self.vocab],
            "w0": self.w0,
            "w": self.w.tolist(),
            "factors": self.factors.tolist(),
            "user_features": {uid: list(f) for uid, f in self.user_features.items()},
            "item_features": [list(f) for f in self.item_features],
            "item_ids": self.item_ids,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FMModel":
        return cls(
            data["vocab"],
            data["dim"],
            data["w0"],
            data["w"],
            data["factors"],
            data["user_features"],
            data["item_features"],
            data["item_ids"],
        )


def predict_fm(model: FMModel, features) -> float:
    return model.predict(features)


# --- training ----------------------------------------------------------------


def train(model, samples, epochs: int, lr: float, reg: float, seed: int):
    """Per-sample SGD over shuffled epochs; aborts on non-finite loss."""
    if not samples:
        raise RecommenderError("empty sample list")
    rng = np.random.default_rng(seed)
    order = np.arange(len(samples))
    for epoch in range(epochs):
        rng.shuffle(order)
        for i in order:
            model.sgd_step(samples[i], lr, reg)
        if not model.all_finite():
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
    predictions = [model.predict_sample(s) for s in samples]
    loss = weighted_bce(predictions, samples)
    if not math.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss after training: {loss}")
    return model


# --- serving -------------------------------------------------------------------


def recommend(model, user, k: int, exclusions: set, candidates: Catalog) -> list[str]:
    """Top-k non-excluded item ids; ties broken by ascending item id."""
    if k < 1:
        raise RecommenderError("k must be >= 1")
    ids = model.item_ids
    if len(candidates) != len(ids):
        raise RecommenderError("candidate catalog does not match the model's item set")
    keep = [i for i, iid in enumerate(ids) if iid not in exclusions]
    if len(keep) < k:
        raise RecommenderError(
            f"insufficient candidates: need {k}, have {len(keep)} after exclusions"
        )
    scores = model.catalog_scores(user)
    kept_ids = np.array([ids[i] for i in keep])
    kept_scores = scores[keep]
    order = np.lexsort((kept_ids, -kept_scores))
    return [str(kept_ids[i]) for i in order[:k]]


CSCMR_VALUES = (0, 25, 50, 75, 100)


def cold_start_slate(
    profile: UserProfile, catalog: Catalog, cscmr: int, k: int, rng
) -> list[str]:
    """First-iteration slate with round(cscmr% of k) interest-aligned items.

    Rounding is half-to-even so a 50% ratio over five slots is reproducible.
    Short pools backfill from the other side (logged) rather than failing.
    """
    if cscmr not in CSCMR_VALUES:
        raise RecommenderError(f"cscmr must be one of {CSCMR_VALUES}, got {cscmr}")
    if len(catalog) < k:
        raise RecommenderError(f"catalog has {len(catalog)} items, need {k}")
    interests = set(profile.initial_interests)
    aligned = [it.item_id for it in catalog.items if it.category_l1 in interests]
    other = [it.item_id for it in catalog.items if it.category_l1 not in interests]
    n_aligned = int(round(cscmr / 100 * k))
    if n_aligned > len(aligned):
        logger.warning(
            "user %s: aligned pool (%d) smaller than requested %d, backfilling",
            profile.user_id, len(aligned), n_aligned,
        )
        n_aligned = len(aligned)
    n_other = k - n_aligned
    if n_other > len(other):
        logger.warning(
            "user %s: non-aligned pool (%d) smaller than requested %d, backfilling",
            profile.user_id, len(other), n_other,
        )
        n_other = len(other)
        n_aligned = k - n_other
    slate = []
    if n_aligned:
        slate += [aligned[i] for i in rng.choice(len(aligned), size=n_aligned, replace=False)]
    if n_other:
        slate += [other[i] for i in rng.choice(len(other), size=n_other, replace=False)]
    slate = list(np.array(slate)[rng.permutation(len(slate))])
    return [str(iid) for iid in slate]


# --- checkpoints ----------------------------------------------------------------


def save_checkpoint(model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()), encoding="utf-8")


def load_checkpoint(path: str | Path):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data["kind"] == "mf":
        return MFModel.from_dict(data)
    if data["kind"] == "fm":
        return FMModel.from_dict(data)
    raise RecommenderError(f"unknown checkpoint kind {data['kind']!r}")
