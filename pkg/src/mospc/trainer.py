"""Staged training: pairwise stage, optional C-Mixup stage, fusion stage.

Every stage runs plain SGD with early stopping on validation L1 and returns
the parameters from the best epoch. Inputs are never mutated; each stage
works on a copy.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from mospc.cmixup import CMixupConfig, PartnerSampler, draw_lambda, mix
from mospc.data import Dataset
from mospc.losses import l1_terms, pair_terms
from mospc.model import (
    FusionModel,
    ModelConfig,
    Predictor,
    encoder_forward_from_embedding,
    ensemble_scores,
    extractor_forward,
    fusion_forward,
    init_predictor,
    predict,
    predictor_backward,
    predictor_forward,
)
from mospc.pairing import make_pairs

log = logging.getLogger(__name__)

PATIENCE_EXHAUSTED = "patience_exhausted"
MAX_EPOCHS = "max_epochs"

# SeedSequence stream tags per stage
_INIT, _PAIRWISE, _CMIXUP, _FUSION = range(4)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 1000
    patience: int = 20
    beta: float = 0.6
    cmixup: CMixupConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        if d.get("cmixup") is not None:
            d["cmixup"] = CMixupConfig(**d["cmixup"])
        return cls(**d)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    valid_l1: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = MAX_EPOCHS

    @property
    def best_valid_l1(self) -> float:
        return self.records[self.best_epoch - 1].valid_l1

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "valid_l1"])
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.valid_l1)])
        return buf.getvalue()


def stage_seed(base: int, index: int, stage: int) -> int:
    """Independent 32-bit seed for one (predictor, stage) combination."""
    return int(np.random.SeedSequence([base, index, stage]).generate_state(1)[0])


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    # one stream for shuffling, one for pairing / partner / lambda draws
    a, b = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], learning_rate: float):
    """In-place ``theta <- theta - lr * g``. Returns ``params``."""
    if len(params) != len(grads):
        raise ValueError("parameter and gradient lists differ in length")
    for k, (theta, g) in enumerate(zip(params, grads)):
        if theta.shape != np.shape(g):
            raise ValueError(f"gradient {k} has shape {np.shape(g)}, parameter has {theta.shape}")
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in parameter array {k}")
    for theta, g in zip(params, grads):
        theta -= learning_rate * g
    for k, theta in enumerate(params):
        if not np.isfinite(theta).all():
            raise TrainingError(f"parameter array {k} became non-finite after update")
    return params


def _check_data(p: Predictor, *datasets: Dataset):
    for ds in datasets:
        ds.require_nonempty()
        if ds.feature_dim != p.input_dim:
            raise ValueError(f"{ds.name}: feature_dim {ds.feature_dim} does not match predictor input {p.input_dim}")


def valid_l1(p: Predictor, ds: Dataset) -> float:
    return float(np.mean(np.abs(predict(p, ds.features) - ds.mos)))


def _fit(model, run_epoch: Callable, evaluate: Callable, cfg: TrainConfig, tag: str):
    """Epoch loop with early stopping. ``run_epoch`` mutates ``model`` in place."""
    trace = TrainLog()
    best_state, best_val, since_best = model.copy(), np.inf, 0
    for epoch in range(1, cfg.max_epochs + 1):
        train_loss = float(run_epoch(model))
        val = float(evaluate(model))
        trace.records.append(EpochRecord(epoch, train_loss, val))
        log.info("%s epoch %d train_loss %.6f valid_l1 %.6f", tag, epoch, train_loss, val)
        if val < best_val:
            best_state, best_val, since_best = model.copy(), val, 0
            trace.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.patience:
                trace.stop_reason = PATIENCE_EXHAUSTED
                break
    return best_state, trace


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_predictor_pairwise(p: Predictor, train: Dataset, valid: Dataset, cfg: TrainConfig):
    """Train one predictor on in-batch ring pairs under the pair loss."""
    _check_data(p, train, valid)
    x, y = train.features, train.mos
    shuffle_rng, pair_rng = _streams(cfg.seed)

    def run_epoch(model: Predictor):
        losses = []
        for idx in _batches(len(y), cfg.batch_size, shuffle_rng):
            a, b = make_pairs(len(idx), pair_rng).as_arrays()
            if a.size == 0:
                continue
            m, cache = predictor_forward(model, x[idx])
            yb = y[idx]
            total, _, _, _, g_i, g_j = pair_terms(m[a], m[b], yb[a], yb[b], cfg.beta)
            # both pair members share parameters: per-sample upstream sums both branches
            upstream = np.zeros(len(idx))
            np.add.at(upstream, a, g_i)
            np.add.at(upstream, b, g_j)
            upstream /= a.size
            grads = predictor_backward(model, cache, upstream)
            sgd_step(model.parameters(), grads.parameters(), cfg.learning_rate)
            losses.append(float(total.mean()))
        return np.mean(losses) if losses else np.nan

    return _fit(p.copy(), run_epoch, lambda m: valid_l1(m, valid), cfg, "pairwise")


def train_predictor_cmixup(
    p: Predictor,
    train: Dataset,
    valid: Dataset,
    cfg: TrainConfig,
    force_lambda: float | None = None,
):
    """Fine-tune encoder and head on C-Mixup samples with an L1 loss.

    The extractor is frozen, so training embeddings are computed once.
    ``force_lambda`` pins the mixing weight (testing hook).
    """
    if cfg.cmixup is None:
        raise ValueError("train_predictor_cmixup requires cfg.cmixup")
    _check_data(p, train, valid)
    if len(train) < 2:
        raise ValueError("C-Mixup needs at least two training samples")
    y = train.mos
    emb = extractor_forward(p, train.features)
    sampler = PartnerSampler(y, cfg.cmixup.bandwidth)
    shuffle_rng, mix_rng = _streams(cfg.seed)
    n_frozen = 2 * len(p.extractor)

    def run_epoch(model: Predictor):
        losses = []
        for idx in _batches(len(y), cfg.batch_size, shuffle_rng):
            partners = sampler.sample(idx, mix_rng)
            lam = draw_lambda(cfg.cmixup.alpha, mix_rng, size=idx.size)
            if force_lambda is not None:
                lam = np.full(idx.size, float(force_lambda))
            e_hat, y_hat = mix(emb[idx], emb[partners], y[idx], y[partners], lam)
            m, cache = encoder_forward_from_embedding(model, e_hat)
            l1, sub = l1_terms(m, y_hat)
            grads = predictor_backward(model, cache, sub / idx.size)
            sgd_step(model.parameters()[n_frozen:], grads.parameters()[n_frozen:], cfg.learning_rate)
            losses.append(float(l1.mean()))
        return np.mean(losses)

    return _fit(p.copy(), run_epoch, lambda m: valid_l1(m, valid), cfg, "cmixup")


class _FusionState:
    def __init__(self, f: FusionModel):
        self.weights = f.weights.copy()
        self.bias = np.array([f.bias])

    def copy(self):
        return _FusionState(self.model())

    def model(self) -> FusionModel:
        return FusionModel(self.weights.copy(), float(self.bias[0]))


def train_fusion(
    f: FusionModel,
    predictors: Sequence[Predictor],
    train: Dataset,
    valid: Dataset,
    cfg: TrainConfig,
):
    """Fit the fusion layer by SGD on L1 with every predictor frozen."""
    if not predictors:
        raise ValueError("train_fusion needs at least one predictor")
    if f.k != len(predictors):
        raise ValueError(f"fusion layer expects {f.k} predictors, got {len(predictors)}")
    for p in predictors:
        _check_data(p, train, valid)
    s_train = ensemble_scores(predictors, train.features)
    s_valid = ensemble_scores(predictors, valid.features)
    y, y_valid = train.mos, valid.mos
    shuffle_rng, _ = _streams(cfg.seed)

    def run_epoch(state: _FusionState):
        losses = []
        for idx in _batches(len(y), cfg.batch_size, shuffle_rng):
            s = s_train[idx]
            l1, sub = l1_terms(s @ state.weights + state.bias[0], y[idx])
            gw = s.T @ sub / idx.size
            gb = np.array([sub.mean()])
            sgd_step([state.weights, state.bias], [gw, gb], cfg.learning_rate)
            losses.append(float(l1.mean()))
        return np.mean(losses)

    def evaluate(state: _FusionState):
        return float(np.mean(np.abs(fusion_forward(state.model(), s_valid) - y_valid)))

    best, trace = _fit(_FusionState(f), run_epoch, evaluate, cfg, "fusion")
    return best.model(), trace


@dataclass
class EnsembleResult:
    pairwise: list[Predictor]
    pairwise_logs: list[TrainLog]
    cmixup: list[Predictor] | None
    cmixup_logs: list[TrainLog] | None
    fusion: FusionModel
    fusion_log: TrainLog

    @property
    def predictors(self) -> list[Predictor]:
        return self.cmixup if self.cmixup is not None else self.pairwise


def init_predictors(input_dim: int, k: int, seed: int, model_cfg: ModelConfig = ModelConfig()):
    return [
        init_predictor(input_dim, model_cfg.extractor_sizes, model_cfg.encoder_sizes, seed=stage_seed(seed, i, _INIT))
        for i in range(k)
    ]


def _with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return TrainConfig(**{**cfg.__dict__, "seed": seed})


def pairwise_stage(predictors, train, valid, cfg):
    out = [train_predictor_pairwise(p, train, valid, _with_seed(cfg, stage_seed(cfg.seed, i, _PAIRWISE)))
           for i, p in enumerate(predictors)]
    return [o[0] for o in out], [o[1] for o in out]


def cmixup_stage(predictors, train, valid, cfg):
    out = [train_predictor_cmixup(p, train, valid, _with_seed(cfg, stage_seed(cfg.seed, i, _CMIXUP)))
           for i, p in enumerate(predictors)]
    return [o[0] for o in out], [o[1] for o in out]


def fusion_stage(predictors, train, valid, cfg):
    return train_fusion(
        FusionModel.averaging(len(predictors)), predictors, train, valid,
        _with_seed(cfg, stage_seed(cfg.seed, 0, _FUSION)),
    )


def train_ensemble(train: Dataset, valid: Dataset, cfg: TrainConfig, k: int = 7,
                   model_cfg: ModelConfig = ModelConfig()) -> EnsembleResult:
    """All stages in order: pairwise, C-Mixup (when configured), fusion."""
    predictors = init_predictors(train.feature_dim, k, cfg.seed, model_cfg)
    pw, pw_logs = pairwise_stage(predictors, train, valid, cfg)
    cm = cm_logs = None
    if cfg.cmixup is not None:
        cm, cm_logs = cmixup_stage(pw, train, valid, cfg)
    fusion, fusion_log = fusion_stage(cm if cm is not None else pw, train, valid, cfg)
    return EnsembleResult(pw, pw_logs, cm, cm_logs, fusion, fusion_log)
