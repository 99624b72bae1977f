"""Per-clip scorer, top-k bag objective, synthetic-loss scaling, and training.

The scorer is a single-hidden-layer network applied independently to every
clip feature vector. A bag (video) is scored by averaging its k highest clip
scores; each training step consumes (anomalous, normal) bag pairs and
optimizes binary cross-entropy on the two bag scores. Losses of pairs that
contain synthetic-source samples are multiplied by a scaling factor before
summation, which bounds how hard the synthetic domain can pull on the model.

Gradients are exact analytic derivatives of the scaled batch loss. The top-k
selection is treated as constant within a step (the standard subgradient
choice for max-pooling objectives), so gradient flows only to selected clips.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import fnv1a64
from .errors import DataFormatError, ShapeError, ValidationError
from .kvformat import load_kv, parse_bool, parse_float, parse_int, save_kv
from .numerics import AdamState, adam_step, bce, finite_diff_grad, rng_from, stable_sigmoid

PARAMS_MAGIC = b"GVPM"
PARAMS_VERSION = 1

_PARAM_KEYS = ("w1", "b1", "w2", "b2")


# ---------------------------------------------------------------------------
# scorer
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ScorerParams:
    """Weights of the clip scorer: dim -> hidden (relu) -> 1 (sigmoid)."""

    w1: np.ndarray  # (hidden, dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: np.ndarray  # scalar, shape ()

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64).reshape(())
        if self.w1.ndim != 2:
            raise ShapeError(f"w1 must be 2-D, got shape {self.w1.shape}")
        hidden = self.w1.shape[0]
        if self.b1.shape != (hidden,) or self.w2.shape != (hidden,):
            raise ShapeError(
                f"b1 {self.b1.shape} and w2 {self.w2.shape} must both be ({hidden},)"
            )
        for name in _PARAM_KEYS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"parameter {name} contains non-finite values")

    @property
    def dim(self) -> int:
        return int(self.w1.shape[1])

    @property
    def hidden(self) -> int:
        return int(self.w1.shape[0])

    @classmethod
    def init(cls, dim: int, hidden: int, rng: np.random.Generator) -> "ScorerParams":
        if dim < 1 or hidden < 1:
            raise ValidationError(f"dim and hidden must be >= 1, got {dim}, {hidden}")
        return cls(
            w1=rng.normal(0.0, math.sqrt(2.0 / dim), size=(hidden, dim)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, math.sqrt(1.0 / hidden), size=hidden),
            b2=np.zeros(()),
        )

    def to_dict(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    @classmethod
    def from_dict(cls, d: dict) -> "ScorerParams":
        return cls(d["w1"], d["b1"], d["w2"], d["b2"])

    def copy(self) -> "ScorerParams":
        return ScorerParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


def _forward(params: ScorerParams, features):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dim:
        raise ShapeError(f"features {x.shape} do not match scorer dim {params.dim}")
    z1 = x @ params.w1.T + params.b1
    h = np.maximum(z1, 0.0)
    logits = h @ params.w2 + params.b2
    scores = stable_sigmoid(logits)
    return x, z1, h, scores


def score_segments(params: ScorerParams, features) -> np.ndarray:
    """Anomaly score in (0,1) per clip; clips are scored independently."""
    return _forward(params, features)[3]


def resolve_k(rule: str, num_clips: int) -> int:
    """Map a top-k policy string to a concrete k for a bag of ``num_clips``.

    Policies: ``div:<m>`` (k = max(1, T // m)), ``fixed:<k>`` (clamped to T),
    ``frac:<f>`` (k = max(1, floor(f * T))).
    """
    if num_clips < 1:
        raise ValidationError(f"bag must contain at least one clip, got {num_clips}")
    kind, _, arg = rule.partition(":")
    if kind == "div":
        divisor = int(arg) if arg else 16
        if divisor < 1:
            raise ValidationError(f"k rule {rule!r}: divisor must be >= 1")
        return max(1, num_clips // divisor)
    if kind == "fixed":
        k = int(arg)
        if k < 1:
            raise ValidationError(f"k rule {rule!r}: k must be >= 1")
        return min(k, num_clips)
    if kind == "frac":
        f = float(arg)
        if not 0.0 < f <= 1.0:
            raise ValidationError(f"k rule {rule!r}: fraction must be in (0, 1]")
        return max(1, int(f * num_clips))
    raise ValidationError(f"unknown k rule {rule!r}")


def topk_indices(scores, k: int) -> np.ndarray:
    """Indices of the k largest scores; ties keep the lower clip index first."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ShapeError(f"scores must be 1-D, got shape {s.shape}")
    if not 1 <= k <= s.shape[0]:
        raise ValidationError(f"k={k} out of range for {s.shape[0]} clips")
    order = np.argsort(-s, kind="stable")
    return order[:k]


def topk_mean(scores, k: int) -> float:
    """Mean of the k largest scores, summed in descending-score order."""
    s = np.asarray(scores, dtype=np.float64)
    idx = topk_indices(s, k)
    return float(np.sum(s[idx]) / k)


def mil_loss(y_hat_anomalous: float, y_hat_normal: float, clamp_eps: float = 1e-7) -> float:
    """BCE of the anomalous bag score toward 1 plus the normal one toward 0."""
    return bce(1, y_hat_anomalous, clamp_eps) + bce(0, y_hat_normal, clamp_eps)


def _bce_and_grad(y: int, y_hat: float, clamp_eps: float):
    # The clamp is part of the objective: outside it the loss is flat.
    clamped = y_hat < clamp_eps or y_hat > 1.0 - clamp_eps
    p = min(max(y_hat, clamp_eps), 1.0 - clamp_eps)
    if y == 1:
        loss = -math.log(p)
        grad = 0.0 if clamped else -1.0 / p
    else:
        loss = -math.log1p(-p)
        grad = 0.0 if clamped else 1.0 / (1.0 - p)
    return loss, grad


def _bag_backward(params: ScorerParams, cache, dscores) -> dict:
    """Push per-clip score gradients back through the scorer for one bag."""
    x, z1, h, scores = cache
    du = dscores * scores * (1.0 - scores)
    dh = np.outer(du, params.w2)
    dz1 = dh * (z1 > 0.0)
    return {
        "w1": dz1.T @ x,
        "b1": dz1.sum(axis=0),
        "w2": h.T @ du,
        "b2": np.asarray(du.sum()),
    }


def _zero_grads(params: ScorerParams) -> dict:
    return {k: np.zeros_like(v) for k, v in params.to_dict().items()}


def _add_grads(acc: dict, grads: dict) -> None:
    for k, g in grads.items():
        acc[k] = acc[k] + g


@dataclass(eq=False)
class PairTerms:
    """Loss pieces and gradients for one (anomalous, normal) bag pair."""

    loss_anomalous: float
    loss_normal: float
    lap: float
    grads_anomalous: dict
    grads_normal: dict
    grads_lap: dict | None
    y_hat_anomalous: float
    y_hat_normal: float
    dscores_anomalous: np.ndarray
    dscores_normal: np.ndarray

    @property
    def mil(self) -> float:
        return self.loss_anomalous + self.loss_normal

    @property
    def total(self) -> float:
        return self.mil + self.lap

    def combined_grads(self, params: ScorerParams) -> dict:
        out = _zero_grads(params)
        _add_grads(out, self.grads_anomalous)
        _add_grads(out, self.grads_normal)
        if self.grads_lap is not None:
            _add_grads(out, self.grads_lap)
        return out


def pair_terms(params: ScorerParams, sample_a, sample_n, config, lap_hook=None) -> PairTerms:
    """Loss and exact gradients for one bag pair, before any source scaling."""
    if sample_a.y != 1 or sample_n.y != 0:
        raise ValidationError(
            f"pair ({sample_a.id!r}, {sample_n.id!r}) must be (anomalous, normal), "
            f"got y=({sample_a.y}, {sample_n.y})"
        )
    cache_a = _forward(params, sample_a.features)
    cache_n = _forward(params, sample_n.features)
    scores_a = cache_a[3]
    scores_n = cache_n[3]
    k_a = resolve_k(config.k_rule, scores_a.shape[0])
    k_n = resolve_k(config.k_rule, scores_n.shape[0])
    idx_a = topk_indices(scores_a, k_a)
    idx_n = topk_indices(scores_n, k_n)
    y_hat_a = float(np.sum(scores_a[idx_a]) / k_a)
    y_hat_n = float(np.sum(scores_n[idx_n]) / k_n)
    loss_a, gy_a = _bce_and_grad(1, y_hat_a, config.clamp_eps)
    loss_n, gy_n = _bce_and_grad(0, y_hat_n, config.clamp_eps)
    ds_a = np.zeros_like(scores_a)
    ds_a[idx_a] = gy_a / k_a
    ds_n = np.zeros_like(scores_n)
    ds_n[idx_n] = gy_n / k_n

    lap_val = 0.0
    lap_grads = None
    if lap_hook is not None:
        out = lap_hook(params, sample_a, sample_n, scores_a, scores_n)
        if isinstance(out, tuple):
            lap_val, lap_grads = float(out[0]), out[1]
        else:
            lap_val = float(out)

    return PairTerms(
        loss_anomalous=loss_a,
        loss_normal=loss_n,
        lap=lap_val,
        grads_anomalous=_bag_backward(params, cache_a, ds_a),
        grads_normal=_bag_backward(params, cache_n, ds_n),
        grads_lap=lap_grads,
        y_hat_anomalous=y_hat_a,
        y_hat_normal=y_hat_n,
        dscores_anomalous=ds_a,
        dscores_normal=ds_n,
    )


# ---------------------------------------------------------------------------
# loss scaling
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class LossBreakdown:
    """Per-sample raw and scaled losses plus the summed training objective.

    ``total`` is the left-to-right sum of ``scaled`` in ascending sample
    order; scaled[i] equals raw[i] exactly for real samples and
    lambda * raw[i] for synthetic ones.
    """

    raw: np.ndarray
    scaled: np.ndarray
    total: float
    source_labels: np.ndarray
    lambda_effective: float
    mil: np.ndarray | None = None
    lap: np.ndarray | None = None


def _left_fold_sum(values) -> float:
    total = 0.0
    for v in values:
        total += float(v)
    return total


def ssls_scale(raw_losses, source_labels, lam: float) -> LossBreakdown:
    """Apply the synthetic-sample scaling rule to a vector of raw losses."""
    raw = np.asarray(raw_losses, dtype=np.float64)
    ys = np.asarray(source_labels)
    if raw.ndim != 1 or raw.shape != ys.shape:
        raise ShapeError(f"losses {raw.shape} and source labels {ys.shape} must be equal-length vectors")
    if not np.isin(ys, (0, 1)).all():
        raise ValidationError("source labels must be 0 or 1")
    if lam < 0:
        raise ValidationError(f"scaling factor must be >= 0, got {lam}")
    scaled = raw.copy()
    synthetic = ys == 1
    scaled[synthetic] = lam * raw[synthetic]
    return LossBreakdown(
        raw=raw.copy(),
        scaled=scaled,
        total=_left_fold_sum(scaled),
        source_labels=ys.astype(np.int64),
        lambda_effective=float(lam),
    )


# ---------------------------------------------------------------------------
# training configuration
# ---------------------------------------------------------------------------

TRAIN_CONFIG_KEYS = (
    "lambda", "lambda_learnable", "ssls_enabled", "ssls_granularity", "k_rule",
    "lr", "weight_decay", "epochs", "batch_pairs", "clamp_eps", "hidden", "seed",
)


@dataclass
class TrainConfig:
    """Training knobs; ``lam`` is the synthetic-sample loss scale."""

    lam: float = 0.5
    lam_learnable: bool = False
    ssls_enabled: bool = True
    ssls_granularity: str = "pair"  # "pair" or "sample"
    k_rule: str = "div:16"
    lr: float = 0.001
    weight_decay: float = 0.005
    epochs: int = 20
    batch_pairs: int = 8
    clamp_eps: float = 1e-7
    hidden: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_pairs < 1:
            raise ValidationError(f"batch_pairs must be >= 1, got {self.batch_pairs}")
        if self.hidden < 1:
            raise ValidationError(f"hidden must be >= 1, got {self.hidden}")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ValidationError(f"clamp_eps must be in (0, 0.5), got {self.clamp_eps}")
        if self.ssls_granularity not in ("pair", "sample"):
            raise ValidationError(f"ssls_granularity must be 'pair' or 'sample', got {self.ssls_granularity!r}")
        resolve_k(self.k_rule, 16)  # surface bad rules early


def train_config_to_kv(config: TrainConfig) -> dict:
    return {
        "lambda": repr(config.lam),
        "lambda_learnable": "1" if config.lam_learnable else "0",
        "ssls_enabled": "1" if config.ssls_enabled else "0",
        "ssls_granularity": config.ssls_granularity,
        "k_rule": config.k_rule,
        "lr": repr(config.lr),
        "weight_decay": repr(config.weight_decay),
        "epochs": str(config.epochs),
        "batch_pairs": str(config.batch_pairs),
        "clamp_eps": repr(config.clamp_eps),
        "hidden": str(config.hidden),
        "seed": str(config.seed),
    }


def train_config_from_kv(values: dict, origin: str = "<config>") -> TrainConfig:
    unknown = sorted(set(values) - set(TRAIN_CONFIG_KEYS))
    if unknown:
        raise ValidationError(f"{origin}: unknown train config keys {unknown}")
    kwargs = {}
    if "lambda" in values:
        kwargs["lam"] = parse_float(values["lambda"], "lambda")
    if "lambda_learnable" in values:
        kwargs["lam_learnable"] = parse_bool(values["lambda_learnable"], "lambda_learnable")
    if "ssls_enabled" in values:
        kwargs["ssls_enabled"] = parse_bool(values["ssls_enabled"], "ssls_enabled")
    if "ssls_granularity" in values:
        kwargs["ssls_granularity"] = values["ssls_granularity"]
    if "k_rule" in values:
        kwargs["k_rule"] = values["k_rule"]
    for key, attr in (("lr", "lr"), ("weight_decay", "weight_decay"), ("clamp_eps", "clamp_eps")):
        if key in values:
            kwargs[attr] = parse_float(values[key], key)
    for key, attr in (("epochs", "epochs"), ("batch_pairs", "batch_pairs"),
                      ("hidden", "hidden"), ("seed", "seed")):
        if key in values:
            kwargs[attr] = parse_int(values[key], key)
    return TrainConfig(**kwargs)


def save_train_config(config: TrainConfig, path) -> None:
    save_kv(train_config_to_kv(config), path)


def load_train_config(path) -> TrainConfig:
    return train_config_from_kv(load_kv(path), origin=str(Path(path)))


# ---------------------------------------------------------------------------
# batch objective
# ---------------------------------------------------------------------------

def total_loss_and_grads(params: ScorerParams, batch, config: TrainConfig,
                         lap_hook=None, rho: float | None = None):
    """Scaled loss and exact gradients over a batch of bag pairs.

    Returns (LossBreakdown, grads) where grads covers the scorer blocks and,
    when the scaling factor is learnable, a ``"rho"`` entry for the logit of
    lambda. A pair counts as synthetic when either member is synthetic.
    """
    batch = list(batch)
    if not batch:
        raise ValidationError("batch must contain at least one pair")
    if config.lam_learnable:
        if rho is None:
            raise ValidationError("rho is required when the scaling factor is learnable")
        lam = stable_sigmoid(float(rho))
    else:
        lam = config.lam

    acc = _zero_grads(params)
    n = len(batch)
    raw = np.zeros(n)
    scaled = np.zeros(n)
    mil_terms = np.zeros(n)
    lap_terms = np.zeros(n)
    ys = np.zeros(n, dtype=np.int64)
    rho_coeff = 0.0  # d(total)/d(lambda): sum of losses that get scaled

    for i, (sample_a, sample_n) in enumerate(batch):
        terms = pair_terms(params, sample_a, sample_n, config, lap_hook)
        pair_synthetic = 1 if (sample_a.y_s == 1 or sample_n.y_s == 1) else 0
        raw[i] = terms.total
        mil_terms[i] = terms.mil
        lap_terms[i] = terms.lap
        ys[i] = pair_synthetic

        if not config.ssls_enabled:
            scaled[i] = terms.total
            _add_grads(acc, terms.combined_grads(params))
            continue

        if config.ssls_granularity == "pair":
            scale = lam if pair_synthetic else 1.0
            scaled[i] = scale * terms.total
            grads = terms.combined_grads(params)
            for key in grads:
                acc[key] = acc[key] + scale * grads[key]
            if pair_synthetic:
                rho_coeff += terms.total
        else:  # per-sample scaling: each bag keeps its own source label
            scale_a = lam if sample_a.y_s == 1 else 1.0
            scale_n = lam if sample_n.y_s == 1 else 1.0
            scale_pair = lam if pair_synthetic else 1.0
            scaled[i] = scale_a * terms.loss_anomalous + scale_n * terms.loss_normal + scale_pair * terms.lap
            for key in acc:
                acc[key] = acc[key] + scale_a * terms.grads_anomalous[key]
                acc[key] = acc[key] + scale_n * terms.grads_normal[key]
                if terms.grads_lap is not None:
                    acc[key] = acc[key] + scale_pair * terms.grads_lap[key]
            if sample_a.y_s == 1:
                rho_coeff += terms.loss_anomalous
            if sample_n.y_s == 1:
                rho_coeff += terms.loss_normal
            if pair_synthetic:
                rho_coeff += terms.lap

    breakdown = LossBreakdown(
        raw=raw,
        scaled=scaled,
        total=_left_fold_sum(scaled),
        source_labels=ys,
        lambda_effective=float(lam) if config.ssls_enabled else 1.0,
        mil=mil_terms,
        lap=lap_terms,
    )
    if config.lam_learnable:
        acc["rho"] = np.asarray(rho_coeff * lam * (1.0 - lam))
    return breakdown, acc


# ---------------------------------------------------------------------------
# synthetic-video filter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterPolicy:
    """``none`` keeps everything; ``centroid_distance`` drops synthetic videos
    whose mean feature lies beyond the given percentile of real same-class
    distances to the real class centroid."""

    kind: str = "none"
    percentile: float = 95.0

    def __post_init__(self):
        if self.kind not in ("none", "centroid_distance"):
            raise ValidationError(f"unknown filter policy {self.kind!r}")
        if not 0.0 < self.percentile <= 100.0:
            raise ValidationError(f"percentile must be in (0, 100], got {self.percentile}")


@dataclass(frozen=True)
class ClassFilterStats:
    threshold: float | None
    kept: tuple
    rejected: tuple  # (id, distance) pairs


@dataclass(frozen=True)
class FilterReport:
    policy: FilterPolicy
    anomalous: ClassFilterStats
    normal: ClassFilterStats

    @property
    def rejected_ids(self) -> tuple:
        return tuple(i for i, _ in self.anomalous.rejected) + tuple(i for i, _ in self.normal.rejected)


def _video_mean(sample) -> np.ndarray:
    return np.asarray(sample.features, dtype=np.float64).mean(axis=0)


def _filter_class(real, synth, percentile: float):
    means = np.stack([_video_mean(s) for s in real])
    centroid = means.mean(axis=0)
    real_dists = np.linalg.norm(means - centroid, axis=1)
    threshold = float(np.percentile(real_dists, percentile))
    kept, rejected = [], []
    for s in synth:
        dist = float(np.linalg.norm(_video_mean(s) - centroid))
        if dist <= threshold:
            kept.append(s)
        else:
            rejected.append((s.id, dist))
    return tuple(kept), ClassFilterStats(threshold, tuple(s.id for s in kept), tuple(rejected))


def filter_synthetic(real_anomalous, real_normal, synth_anomalous, synth_normal,
                     policy: FilterPolicy = FilterPolicy()):
    """Filter synthetic videos against the real distribution, per class.

    Returns (kept_synth_anomalous, kept_synth_normal, FilterReport). Real
    videos are never filtered.
    """
    if policy.kind == "none":
        stats = ClassFilterStats(None, tuple(s.id for s in synth_anomalous), ())
        stats_n = ClassFilterStats(None, tuple(s.id for s in synth_normal), ())
        return tuple(synth_anomalous), tuple(synth_normal), FilterReport(policy, stats, stats_n)
    if not real_anomalous or not real_normal:
        raise ValidationError("centroid_distance filtering needs non-empty real sets for both classes")
    kept_a, stats_a = _filter_class(real_anomalous, synth_anomalous, policy.percentile)
    kept_n, stats_n = _filter_class(real_normal, synth_normal, policy.percentile)
    return kept_a, kept_n, FilterReport(policy, stats_a, stats_n)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpochStats:
    epoch: int
    total_loss: float  # mean adjusted loss per pair
    mil_mean: float
    lap_mean: float
    val_auc: float | None
    lambda_effective: float


@dataclass(eq=False)
class TrainResult:
    params: ScorerParams
    history: list
    lambda_value: float
    rho: float | None


HISTORY_HEADER = "epoch,L_total,L_MIL_mean,L_LAP_mean,val_auc,lambda_effective"


def history_to_csv(history) -> str:
    lines = [HISTORY_HEADER]
    for row in history:
        val = "" if row.val_auc is None else repr(row.val_auc)
        lines.append(
            f"{row.epoch},{row.total_loss!r},{row.mil_mean!r},{row.lap_mean!r},{val},{row.lambda_effective!r}"
        )
    return "\n".join(lines) + "\n"


def save_history(history, path) -> None:
    Path(path).write_text(history_to_csv(history), encoding="utf-8")


def _shuffled(items, rng) -> list:
    items = list(items)
    return [items[i] for i in rng.permutation(len(items))]


def _epoch_pairs(anomalous, normal, rng) -> list:
    """Draw this epoch's bag pairs without replacement.

    Same-source pairs are preferred (real with real, synthetic with
    synthetic); leftovers are paired across sources and inherit the synthetic
    label if either member is synthetic.
    """
    real_a = _shuffled((s for s in anomalous if s.y_s == 0), rng)
    synth_a = _shuffled((s for s in anomalous if s.y_s == 1), rng)
    real_n = _shuffled((s for s in normal if s.y_s == 0), rng)
    synth_n = _shuffled((s for s in normal if s.y_s == 1), rng)

    pairs = []
    n_real = min(len(real_a), len(real_n))
    pairs.extend(zip(real_a[:n_real], real_n[:n_real]))
    n_synth = min(len(synth_a), len(synth_n))
    pairs.extend(zip(synth_a[:n_synth], synth_n[:n_synth]))
    rest_a = real_a[n_real:] + synth_a[n_synth:]
    rest_n = real_n[n_real:] + synth_n[n_synth:]
    n_cross = min(len(rest_a), len(rest_n))
    pairs.extend(zip(rest_a[:n_cross], rest_n[:n_cross]))
    return [pairs[i] for i in rng.permutation(len(pairs))]


def train(dataset, config: TrainConfig, lap_hook=None, val_samples=None) -> TrainResult:
    """Train the scorer on a mixed dataset; fully deterministic given inputs.

    Samples are ordered by id before any seeded shuffling, so two datasets
    holding the same samples train identically regardless of construction
    order. Validation AUC is computed per epoch when ``val_samples`` carry
    frame labels.
    """
    anomalous = sorted(dataset.anomalous, key=lambda s: s.id)
    normal = sorted(dataset.normal, key=lambda s: s.id)
    if not anomalous or not normal:
        raise ValidationError("training needs at least one sample per class")
    dim = anomalous[0].dim
    for s in (*anomalous, *normal):
        if s.dim != dim:
            raise ShapeError(f"sample {s.id!r} has dim {s.dim}, dataset has {dim}")

    params = ScorerParams.init(dim, config.hidden, rng_from(config.seed, "scorer-init"))
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    rho = 0.0 if config.lam_learnable else None  # sigmoid(0) = 0.5
    rho_state = AdamState(lr=config.lr, weight_decay=0.0) if config.lam_learnable else None
    loop_rng = rng_from(config.seed, "pair-sampling")

    history = []
    for epoch in range(1, config.epochs + 1):
        pairs = _epoch_pairs(anomalous, normal, loop_rng)
        total_sum = 0.0
        mil_sum = 0.0
        lap_sum = 0.0
        n_pairs = 0
        lam_eff = 1.0
        for start in range(0, len(pairs), config.batch_pairs):
            batch = pairs[start:start + config.batch_pairs]
            breakdown, grads = total_loss_and_grads(params, batch, config, lap_hook, rho)
            scorer_grads = {k: grads[k] for k in _PARAM_KEYS}
            params = ScorerParams.from_dict(adam_step(params.to_dict(), scorer_grads, state))
            if config.lam_learnable:
                updated = adam_step({"rho": np.asarray(rho)}, {"rho": grads["rho"]}, rho_state)
                rho = float(updated["rho"])
            total_sum += breakdown.total
            mil_sum += _left_fold_sum(breakdown.mil)
            lap_sum += _left_fold_sum(breakdown.lap)
            n_pairs += len(batch)
            lam_eff = breakdown.lambda_effective
        if config.lam_learnable:
            lam_eff = stable_sigmoid(rho)
        val_auc = None
        if val_samples is not None:
            from .evaluation import evaluate  # local import: evaluation imports this module

            val_auc = evaluate(params, val_samples).auc
        history.append(EpochStats(
            epoch=epoch,
            total_loss=total_sum / n_pairs,
            mil_mean=mil_sum / n_pairs,
            lap_mean=lap_sum / n_pairs,
            val_auc=val_auc,
            lambda_effective=lam_eff,
        ))

    if not config.ssls_enabled:
        lambda_value = 1.0
    elif config.lam_learnable:
        lambda_value = stable_sigmoid(rho)
    else:
        lambda_value = config.lam
    return TrainResult(params=params, history=history, lambda_value=lambda_value, rho=rho)


# ---------------------------------------------------------------------------
# parameter files (GVPM)
# ---------------------------------------------------------------------------

def save_params(path, params: ScorerParams) -> None:
    """Write scorer weights as float64 blocks with a trailing checksum."""
    blocks = [(name, np.ascontiguousarray(getattr(params, name), dtype="<f8")) for name in _PARAM_KEYS]
    meta = bytearray()
    meta += struct.pack("<4sII", PARAMS_MAGIC, PARAMS_VERSION, len(blocks))
    payload = bytearray()
    for name, arr in blocks:
        encoded = name.encode("ascii")
        meta += struct.pack("<I", len(encoded)) + encoded
        meta += struct.pack("<I", arr.ndim)
        meta += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
        payload += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(meta))
        fh.write(bytes(payload))
        fh.write(struct.pack("<Q", fnv1a64(bytes(payload))))


def load_params(path) -> ScorerParams:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise DataFormatError(f"{path}: truncated file")
    magic, version, n_blocks = struct.unpack_from("<4sII", raw, 0)
    if magic != PARAMS_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {PARAMS_MAGIC!r}")
    if version != PARAMS_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    offset = 12
    shapes = []
    try:
        for _ in range(n_blocks):
            (name_len,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            name = raw[offset:offset + name_len].decode("ascii")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, offset) if ndim else ()
            offset += 4 * ndim
            shapes.append((name, shape))
    except (struct.error, UnicodeDecodeError):
        raise DataFormatError(f"{path}: truncated or corrupt block header") from None
    names = [name for name, _ in shapes]
    if names != list(_PARAM_KEYS):
        raise DataFormatError(f"{path}: unexpected parameter blocks {names}")
    total = sum(int(np.prod(shape, dtype=np.int64)) for _, shape in shapes)
    expected = offset + total * 8 + 8
    if len(raw) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    payload = raw[offset:-8]
    (stored,) = struct.unpack_from("<Q", raw, len(raw) - 8)
    if fnv1a64(payload) != stored:
        raise DataFormatError(f"{path}: checksum mismatch")
    values = {}
    cursor = 0
    for name, shape in shapes:
        count = int(np.prod(shape, dtype=np.int64))
        values[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=cursor * 8).reshape(shape).copy()
        cursor += count
    return ScorerParams.from_dict(values)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def params_to_vector(params: ScorerParams) -> np.ndarray:
    return np.concatenate([getattr(params, k).ravel() for k in _PARAM_KEYS])


def vector_to_params(vec: np.ndarray, dim: int, hidden: int) -> ScorerParams:
    sizes = (hidden * dim, hidden, hidden, 1)
    if vec.size != sum(sizes):
        raise ShapeError(f"vector of size {vec.size} cannot fill a {dim}->{hidden}->1 scorer")
    w1, b1, w2, b2 = np.split(vec, np.cumsum(sizes)[:-1])
    return ScorerParams(w1.reshape(hidden, dim), b1, w2, b2.reshape(()))


@dataclass(frozen=True)
class GradCheckReport:
    threshold: float
    max_rel_error: float
    block_errors: dict
    num_batches: int
    passed: bool

    def format(self) -> str:
        lines = [f"gradient check over {self.num_batches} batches (threshold {self.threshold:g})"]
        for name, err in self.block_errors.items():
            lines.append(f"  {name:4s} max_rel_err {err:.3e}")
        lines.append(f"  max  max_rel_err {self.max_rel_error:.3e}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines) + "\n"


def _random_pair(rng, dim: int, y_s_a: int, y_s_n: int, tag: str):
    from .datamodel import VideoSample  # local to avoid polluting module API

    def sample(y, y_s, suffix):
        t = int(rng.integers(4, 10))
        feats = rng.normal(0.0, 1.0, size=(t, dim)).astype(np.float32)
        return VideoSample(f"gc-{tag}-{suffix}", feats, y, y_s)

    return sample(1, y_s_a, "a"), sample(0, y_s_n, "n")


def gradient_check(seed: int = 0, num_batches: int = 10, h: float = 1e-5,
                   threshold: float = 1e-4, corrupt: bool = False) -> GradCheckReport:
    """Compare analytic batch gradients against central finite differences.

    Exercises the top-k selection, both scaling granularities' common path,
    and the learnable scaling factor. Relative error per coordinate uses a
    safeguarded denominator max(|analytic|, |numeric|, 1e-5) so coordinates
    whose true gradient is dominated by finite-difference noise do not blow
    up the ratio. ``corrupt`` perturbs one analytic gradient block and is a
    negative-control hook for tests.
    """
    dim, hidden = 7, 5
    config = TrainConfig(lam=0.7, lam_learnable=True, k_rule="frac:0.3", hidden=hidden)
    block_errors = {key: 0.0 for key in (*_PARAM_KEYS, "rho")}
    for b in range(num_batches):
        rng = rng_from(seed, "gradcheck", b)
        params = ScorerParams.init(dim, hidden, rng)
        batch = [
            _random_pair(rng, dim, 0, 0, f"{b}-real"),
            _random_pair(rng, dim, 1, 1, f"{b}-synth"),
            _random_pair(rng, dim, 1, 0, f"{b}-mixed"),
        ]
        rho = float(rng.normal(0.0, 0.5))
        _, grads = total_loss_and_grads(params, batch, config, None, rho)
        if corrupt:
            grads = dict(grads)
            grads["w1"] = grads["w1"] + 1e-3

        analytic = np.concatenate([np.concatenate([grads[k].ravel() for k in _PARAM_KEYS]),
                                   np.atleast_1d(grads["rho"])])
        theta = np.concatenate([params_to_vector(params), [rho]])

        def objective(vec):
            p = vector_to_params(vec[:-1], dim, hidden)
            breakdown, _ = total_loss_and_grads(p, batch, config, None, float(vec[-1]))
            return breakdown.total

        numeric = finite_diff_grad(objective, theta, h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-5)
        rel = np.abs(analytic - numeric) / denom
        sizes = (hidden * dim, hidden, hidden, 1, 1)
        offsets = np.cumsum((0,) + sizes)
        for (name, start, stop) in zip((*_PARAM_KEYS, "rho"), offsets[:-1], offsets[1:]):
            block_errors[name] = max(block_errors[name], float(rel[start:stop].max()))
    max_err = max(block_errors.values())
    return GradCheckReport(
        threshold=threshold,
        max_rel_error=max_err,
        block_errors=block_errors,
        num_batches=num_batches,
        passed=max_err < threshold,
    )
