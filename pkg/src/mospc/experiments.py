"""Paired-seed synthetic comparisons.

Two fixed benchmarks, each run over a list of seeds with everything except
the factor under study held equal:

* pairwise loss (beta < 1) against the pointwise L1 baseline (beta = 1),
  judged on test-set utterance KTAU;
* the C-Mixup stage against the same predictor without it, judged on L1
  over a feature-shifted out-of-distribution set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from mospc.cmixup import CMixupConfig
from mospc.data import Dataset, SynthConfig, generate_synthetic, split
from mospc.metrics import ktau
from mospc.model import predict
from mospc.trainer import TrainConfig, cmixup_stage, init_predictors, pairwise_stage

# 30 systems x 140 utterances = 4200, split 3000 / 600 / 600
BENCHMARK_SYNTH = SynthConfig(n_systems=30, utterances_per_system=140, feature_dim=16)
BENCHMARK_FRACTIONS = (5 / 7, 1 / 7, 1 / 7)
BENCHMARK_TRAIN = TrainConfig(learning_rate=1e-3, batch_size=8, max_epochs=200, patience=20, beta=0.6)
OOD_SHIFT = 1.5
# OOD sets draw fresh systems and noise; the feature map stays the same
_OOD_SEED_OFFSET = 50_000


def benchmark_splits(seed: int, synth: SynthConfig = BENCHMARK_SYNTH):
    ds = generate_synthetic(replace(synth, seed=seed))
    return split(ds, BENCHMARK_FRACTIONS, seed=seed)


def ood_set(seed: int, shift: float = OOD_SHIFT, synth: SynthConfig = BENCHMARK_SYNTH) -> Dataset:
    return generate_synthetic(replace(synth, seed=seed + _OOD_SEED_OFFSET, shift=shift, name="ood"))


def l1(p, ds: Dataset) -> float:
    return float(np.mean(np.abs(predict(p, ds.features) - ds.mos)))


@dataclass(frozen=True)
class PairedResult:
    seed: int
    treatment: float
    baseline: float

    @property
    def delta(self) -> float:
        return self.treatment - self.baseline


@dataclass(frozen=True)
class Comparison:
    metric: str
    results: tuple[PairedResult, ...]

    @property
    def deltas(self) -> np.ndarray:
        return np.array([r.delta for r in self.results])

    @property
    def median_delta(self) -> float:
        return float(np.median(self.deltas))

    def to_table(self) -> str:
        lines = [f"{'seed':>6} {'treatment':>10} {'baseline':>10} {'delta':>9}"]
        for r in self.results:
            lines.append(f"{r.seed:>6} {r.treatment:>10.4f} {r.baseline:>10.4f} {r.delta:>+9.4f}")
        lines.append(f"median {self.metric} delta {self.median_delta:+.4f}")
        return "\n".join(lines)


def compare_pairwise(seeds, cfg: TrainConfig = BENCHMARK_TRAIN, synth: SynthConfig = BENCHMARK_SYNTH) -> Comparison:
    """Test KTAU of one predictor trained with cfg.beta against beta = 1.

    Both arms share the data, the initial weights and the seeds of every
    random stream, so the loss weighting is the only difference.
    """
    out = []
    for seed in seeds:
        train, valid, test = benchmark_splits(seed, synth)
        init = init_predictors(train.feature_dim, 1, seed)
        scores = []
        for beta in (cfg.beta, 1.0):
            (p,), _ = pairwise_stage(init, train, valid, replace(cfg, beta=beta, seed=seed))
            scores.append(ktau(predict(p, test.features), test.mos))
        out.append(PairedResult(seed, scores[0], scores[1]))
    return Comparison("ktau", tuple(out))


def compare_cmixup(seeds, cfg: TrainConfig | None = None, synth: SynthConfig = BENCHMARK_SYNTH,
                   shift: float = OOD_SHIFT) -> Comparison:
    """OOD L1 after the C-Mixup stage against the pairwise predictor it started from."""
    if cfg is None:
        cfg = replace(BENCHMARK_TRAIN, cmixup=CMixupConfig())
    if cfg.cmixup is None:
        raise ValueError("compare_cmixup needs cfg.cmixup")
    out = []
    for seed in seeds:
        train, valid, _ = benchmark_splits(seed, synth)
        ood = ood_set(seed, shift, synth)
        run_cfg = replace(cfg, seed=seed)
        pw, _ = pairwise_stage(init_predictors(train.feature_dim, 1, seed), train, valid, run_cfg)
        cm, _ = cmixup_stage(pw, train, valid, run_cfg)
        out.append(PairedResult(seed, l1(cm[0], ood), l1(pw[0], ood)))
    return Comparison("ood_l1", tuple(out))
