"""End-to-end training orchestration.

The loop follows the teacher/student recipe: pre-train the teacher on the
labeled split, freeze the labeled label-correlation matrix, initialize the
student from the teacher, then per mini-batch

    augment both batches -> supervised loss -> refresh memory banks ->
    neighbor-vote pseudo-labels -> agreement weights -> unsupervised loss ->
    unlabeled correlation matrix -> alignment loss -> total loss ->
    SGD step on the student -> EMA update of the teacher

with validation-based early stopping keeping the best student checkpoint.
Ablation switches disable pseudo-labeling, agreement weighting, or
alignment; baselines cover supervised-only training and a fixed-confidence-
threshold variant of pseudo-label filtering.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import augment, correlation, metrics, nn, pseudo
from .data import SplitResult, SplitSpec, Subset, encode_subset, split
from .errors import ConfigurationError
from .rng import RandomStream

# substream namespaces, so no two consumers share a generator path
_NS_INIT = 0
_NS_PRETRAIN = 1
_NS_BANK = 2
_NS_STEP = 3
_NS_LABELED_ORDER = 4
_NS_UNLABELED_ORDER = 5

_ROLE_LABELED = 0
_ROLE_WEAK = 1
_ROLE_STRONG = 2

BASELINES = ("ecgmatch", "supervised_only", "fixed_threshold")


@dataclass(frozen=True)
class Ablations:
    no_pseudo: bool = False
    no_nam: bool = False
    no_align: bool = False


@dataclass(frozen=True)
class TrainConfig:
    batch_labeled: int = 64
    batch_unlabeled: int = 448
    weights: nn.LossWeights = field(default_factory=nn.LossWeights)
    knn: pseudo.KnnConfig = field(default_factory=pseudo.KnnConfig)
    optimizer: nn.OptimizerConfig = field(default_factory=nn.OptimizerConfig)
    max_epochs: int = 50
    patience: int = 10
    eval_metric: str = "map"
    seed: int = 0
    ablations: Ablations = field(default_factory=Ablations)
    baseline: str = "ecgmatch"
    fixed_threshold_tau: float = 0.95
    hidden_dims: tuple = (128,)
    feature_dim: int = 128
    head_hidden: int = 128
    activation: str = "relu"
    pool_len: int = 32
    similarity: str = "cosine"
    pretrain_max_epochs: int = 200
    pretrain_patience: int = 10
    pretrain_augment: bool = True
    augment_cfg: augment.AugmentConfig = field(default_factory=augment.AugmentConfig)
    # library hook for externally preprocessed inputs: maps one signal matrix
    # to a flat feature vector, replacing the z-score + pooling default
    preprocessor: object = None

    def __post_init__(self):
        if self.batch_labeled < 1 or self.batch_unlabeled < 1:
            raise ConfigurationError("batch sizes must be positive")
        if self.baseline not in BASELINES:
            raise ConfigurationError(f"unknown baseline {self.baseline!r}")
        if self.eval_metric not in metrics.HIGHER_IS_BETTER:
            raise ConfigurationError(f"unknown early-stop metric {self.eval_metric!r}")
        if self.similarity not in correlation.SIMILARITY_KINDS:
            raise ConfigurationError(f"unknown similarity kind {self.similarity!r}")

    def effective_weights(self) -> nn.LossWeights:
        lu = 0.0 if self.ablations.no_pseudo else self.weights.lambda_u
        lf = 0.0 if self.ablations.no_align else self.weights.lambda_f
        return nn.LossWeights(lu, lf)

    def model_config(self, channels: int, num_classes: int) -> nn.ModelConfig:
        return nn.ModelConfig(
            input_dim=channels * self.pool_len,
            num_classes=num_classes,
            hidden_dims=self.hidden_dims,
            feature_dim=self.feature_dim,
            head_hidden=self.head_hidden,
            activation=self.activation,
        )


class EarlyStopper:
    """Stops after `patience` consecutive epochs without improvement."""

    def __init__(self, patience: int, higher_is_better: bool = True):
        if patience < 1:
            raise ConfigurationError("patience must be positive")
        self.patience = patience
        self.higher_is_better = higher_is_better
        self.best: float | None = None
        self.stale = 0
        self.improved_last = False

    def update(self, score: float) -> bool:
        """Registers a new validation score; returns True when training should stop."""
        improved = self.best is None or (
            score > self.best if self.higher_is_better else score < self.best
        )
        self.improved_last = improved
        if improved:
            self.best = score
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


def early_stop_check(stopper: EarlyStopper, val_metrics: metrics.MetricsReport,
                     metric: str = "map") -> bool:
    """Convenience wrapper: feed a metrics report, get the stop decision."""
    return stopper.update(val_metrics.value(metric))


@dataclass
class TrainState:
    model_cfg: nn.ModelConfig
    student: nn.ParameterSet
    teacher: nn.ParameterSet
    velocity: nn.ParameterSet
    banks: pseudo.MemoryBanks | None
    label_correlation: np.ndarray | None
    step: int = 0
    epoch: int = 0
    last_acceptance: np.ndarray | None = None  # per-class accepted fraction, threshold rule only


@dataclass
class LabeledBatch:
    signals: list
    labels: np.ndarray


@dataclass
class UnlabeledBatch:
    signals: list
    indices: np.ndarray  # positions in the unlabeled pool / memory banks


def _encode(signals, cfg: TrainConfig):
    if cfg.preprocessor is not None:
        return np.vstack([np.asarray(cfg.preprocessor(x), dtype=float).ravel() for x in signals])
    return encode_subset(signals, cfg.pool_len)


def _augment_encode(signals, stream: RandomStream, cfg: TrainConfig, strong: bool):
    out = augment.augment_batch(signals, stream, cfg.augment_cfg, strong=strong)
    return _encode(out, cfg)


def _model_config_for(cfg: TrainConfig, sample_signal, num_classes: int) -> nn.ModelConfig:
    """Width follows the encoded input, so custom preprocessors just work."""
    width = _encode([sample_signal], cfg).shape[1]
    return nn.ModelConfig(
        input_dim=width,
        num_classes=num_classes,
        hidden_dims=cfg.hidden_dims,
        feature_dim=cfg.feature_dim,
        head_hidden=cfg.head_hidden,
        activation=cfg.activation,
    )


def evaluate_model(model_cfg: nn.ModelConfig, params: nn.ParameterSet, subset: Subset,
                   pool_len: int = 32, threshold: float = 0.5, beta: float = 2.0,
                   preprocessor=None) -> metrics.MetricsReport:
    """Score a subset with clean (un-augmented) inputs."""
    if preprocessor is not None:
        inputs = np.vstack([np.asarray(preprocessor(x), dtype=float).ravel() for x in subset.signals])
    else:
        inputs = encode_subset(subset.signals, pool_len)
    _, probs = nn.forward(model_cfg, params, inputs)
    return metrics.compute_all(probs, subset.labels, threshold=threshold, beta=beta)


def _iterations(n_labeled: int, batch: int) -> int:
    return max(1, n_labeled // batch)


def pretrain_teacher(labeled: Subset, val: Subset, cfg: TrainConfig) -> nn.ParameterSet:
    """Supervised training of the teacher with early stopping on the validation metric."""
    if len(labeled) == 0:
        raise ConfigurationError("labeled split is empty")
    if labeled.labels.sum() == 0:
        raise ConfigurationError("no positive labels in any class; nothing to pre-train on")
    model_cfg = _model_config_for(cfg, labeled.signals[0], labeled.labels.shape[1])
    stream = RandomStream(cfg.seed)
    params = nn.init_params(model_cfg, stream.substream(_NS_INIT))
    velocity = params.zeros_like()
    stopper = EarlyStopper(cfg.pretrain_patience, metrics.HIGHER_IS_BETTER[cfg.eval_metric])
    best = params.copy()
    n = len(labeled)
    batch_size = min(cfg.batch_labeled, n)
    step = 0
    for epoch in range(cfg.pretrain_max_epochs):
        order = stream.substream(_NS_PRETRAIN, epoch).generator().permutation(n)
        for it in range(_iterations(n, batch_size)):
            idx = order[it * batch_size : (it + 1) * batch_size]
            signals = [labeled.signals[i] for i in idx]
            if cfg.pretrain_augment:
                sub = stream.substream(_NS_PRETRAIN, epoch, it, _ROLE_LABELED)
                inputs = _augment_encode(signals, sub, cfg, strong=False)
            else:
                inputs = _encode(signals, cfg)
            batch = nn.StepBatch(labeled_inputs=inputs, labels=labeled.labels[idx])
            _, grads = nn.backward(model_cfg, params, batch, nn.LossWeights(0.0, 0.0))
            lr = nn.lr_at(step, cfg.optimizer)
            params, velocity = nn.sgd_step(params, grads, velocity, lr, cfg.optimizer.momentum)
            step += 1
        report = evaluate_model(model_cfg, params, val, cfg.pool_len, preprocessor=cfg.preprocessor)
        stop = early_stop_check(stopper, report, cfg.eval_metric)
        if stopper.improved_last:
            best = params.copy()
        if stop:
            break
    return best


def init_train_state(labeled: Subset, unlabeled: Subset, cfg: TrainConfig,
                     teacher: nn.ParameterSet) -> TrainState:
    """Set up the student, banks and the frozen labeled correlation matrix."""
    model_cfg = _model_config_for(cfg, labeled.signals[0], labeled.labels.shape[1])
    weights = cfg.effective_weights()
    banks = None
    if cfg.baseline != "supervised_only" and weights.lambda_u > 0.0:
        if len(unlabeled) == 0:
            raise ConfigurationError("unlabeled split is empty; cannot build memory banks")
        stream = RandomStream(cfg.seed).substream(_NS_BANK)
        inputs = _augment_encode(unlabeled.signals, stream, cfg, strong=False)
        banks = pseudo.bank_init(model_cfg, teacher, inputs)
    label_corr = None
    if weights.lambda_f > 0.0:
        label_corr = correlation.correlation_matrix(labeled.labels, cfg.similarity)
    return TrainState(
        model_cfg=model_cfg,
        student=teacher.copy(),
        teacher=teacher.copy(),
        velocity=teacher.zeros_like(),
        banks=banks,
        label_correlation=label_corr,
    )


def train_step(state: TrainState, labeled_batch: LabeledBatch,
               unlabeled_batch: UnlabeledBatch | None, cfg: TrainConfig,
               tau: float | None = None) -> nn.LossBreakdown:
    """One optimization step; mutates `state` (student, teacher, banks, counters).

    `tau` switches the agreement weights to the fixed-confidence-threshold
    rule (1 where max(pseudo, 1-pseudo) >= tau, else 0).
    """
    weights = cfg.effective_weights()
    stream = RandomStream(cfg.seed).substream(_NS_STEP, state.step)
    lab_inputs = _augment_encode(labeled_batch.signals, stream.substream(_ROLE_LABELED), cfg, strong=False)
    batch = nn.StepBatch(labeled_inputs=lab_inputs, labels=labeled_batch.labels,
                         similarity=cfg.similarity)

    use_unlabeled = unlabeled_batch is not None and (weights.lambda_u > 0.0 or weights.lambda_f > 0.0)
    if use_unlabeled:
        weak_inputs = _augment_encode(unlabeled_batch.signals, stream.substream(_ROLE_WEAK), cfg, strong=False)
        strong_inputs = _augment_encode(unlabeled_batch.signals, stream.substream(_ROLE_STRONG), cfg, strong=True)
        batch.strong_inputs = strong_inputs
        if weights.lambda_f > 0.0:
            batch.weak_inputs = weak_inputs
            batch.correlation_target = state.label_correlation
        if weights.lambda_u > 0.0:
            pseudo.bank_update(state.banks, unlabeled_batch.indices, state.model_cfg,
                               state.teacher, weak_inputs)
            query_features, _ = nn.forward(state.model_cfg, state.student, weak_inputs)
            targets, alpha = pseudo.generate_pseudo_labels(state.banks, query_features, cfg.knn,
                                                           self_indices=unlabeled_batch.indices)
            if tau is not None:
                conf = np.maximum(targets, 1.0 - targets)
                alpha = (conf >= tau).astype(float)
                state.last_acceptance = alpha.mean(axis=0)
            elif cfg.ablations.no_nam:
                alpha = np.ones_like(targets)
            batch.pseudo_targets = targets
            batch.pseudo_weights = alpha

    breakdown, grads = nn.backward(state.model_cfg, state.student, batch, weights)
    lr = nn.lr_at(state.step, cfg.optimizer)
    state.student, state.velocity = nn.sgd_step(
        state.student, grads, state.velocity, lr, cfg.optimizer.momentum
    )
    state.teacher = nn.ema_update(state.teacher, state.student, cfg.optimizer.ema_momentum)
    state.step += 1
    return breakdown


def fixed_threshold_baseline_step(state: TrainState, labeled_batch: LabeledBatch,
                                  unlabeled_batch: UnlabeledBatch | None, cfg: TrainConfig,
                                  tau: float = 0.95) -> nn.LossBreakdown:
    """Pseudo-label filtering by confidence threshold instead of neighbor agreement."""
    return train_step(state, labeled_batch, unlabeled_batch, cfg, tau=tau)


def _unlabeled_batches(n_unlabeled: int, iters: int, batch: int, epoch: int,
                       stream: RandomStream):
    """Index batches for one epoch; with replacement when the pool is too small."""
    if n_unlabeled >= batch * iters:
        order = stream.substream(_NS_UNLABELED_ORDER, epoch).generator().permutation(n_unlabeled)
        return [order[i * batch : (i + 1) * batch] for i in range(iters)]
    g = stream.substream(_NS_UNLABELED_ORDER, epoch).generator()
    return [g.integers(0, n_unlabeled, size=batch) for _ in range(iters)]


def ssl_train(splits: SplitResult, cfg: TrainConfig, teacher: nn.ParameterSet):
    """Semi-supervised training loop; returns (best student, state, history rows)."""
    labeled, unlabeled, val = splits.labeled, splits.unlabeled, splits.val
    state = init_train_state(labeled, unlabeled, cfg, teacher)
    weights = cfg.effective_weights()
    use_unlabeled = cfg.baseline != "supervised_only" and (
        weights.lambda_u > 0.0 or weights.lambda_f > 0.0
    )
    tau = cfg.fixed_threshold_tau if cfg.baseline == "fixed_threshold" else None

    stopper = EarlyStopper(cfg.patience, metrics.HIGHER_IS_BETTER[cfg.eval_metric])
    report = evaluate_model(state.model_cfg, state.student, val, cfg.pool_len,
                            preprocessor=cfg.preprocessor)
    early_stop_check(stopper, report, cfg.eval_metric)
    best = state.student.copy()
    history = [{"step": 0, "epoch": 0, "lb": "", "lu": "", "lf": "", "lr": "",
                "val_metric": report.value(cfg.eval_metric)}]

    stream = RandomStream(cfg.seed)
    n_lab = len(labeled)
    batch_size = min(cfg.batch_labeled, n_lab)
    iters = _iterations(n_lab, batch_size)
    for epoch in range(1, cfg.max_epochs + 1):
        state.epoch = epoch
        order = stream.substream(_NS_LABELED_ORDER, epoch).generator().permutation(n_lab)
        ub_indices = (
            _unlabeled_batches(len(unlabeled), iters, min(cfg.batch_unlabeled, max(len(unlabeled), 1)),
                               epoch, stream)
            if use_unlabeled else [None] * iters
        )
        last = None
        for it in range(iters):
            idx = order[it * batch_size : (it + 1) * batch_size]
            lab_batch = LabeledBatch([labeled.signals[i] for i in idx], labeled.labels[idx])
            un_batch = None
            if use_unlabeled:
                u_idx = np.asarray(ub_indices[it], dtype=int)
                un_batch = UnlabeledBatch([unlabeled.signals[i] for i in u_idx], u_idx)
            last = train_step(state, lab_batch, un_batch, cfg, tau=tau)
            row = {"step": state.step, "epoch": epoch,
                   "lb": last.supervised, "lu": last.unsupervised,
                   "lf": last.alignment, "lr": nn.lr_at(state.step - 1, cfg.optimizer),
                   "val_metric": ""}
            if state.last_acceptance is not None:
                row["acceptance"] = state.last_acceptance.tolist()
            history.append(row)
        report = evaluate_model(state.model_cfg, state.student, val, cfg.pool_len,
                                preprocessor=cfg.preprocessor)
        history[-1]["val_metric"] = report.value(cfg.eval_metric)
        stop = early_stop_check(stopper, report, cfg.eval_metric)
        if stopper.improved_last:
            best = state.student.copy()
        if stop:
            break
    return best, state, history


@dataclass
class SeedResult:
    seed: int
    report: metrics.MetricsReport
    history: list
    final_params: nn.ParameterSet | None = None


@dataclass
class ExperimentResult:
    per_seed: list  # of SeedResult
    mean: dict
    std: dict

    def reports(self):
        return [r.report for r in self.per_seed]


METRIC_NAMES = ("ranking_loss", "hamming_loss", "coverage", "map", "macro_auc", "macro_gbeta")


def run_experiment(datasets, split_spec: SplitSpec, cfg: TrainConfig, seeds,
                   metric_threshold: float = 0.5, gbeta_beta: float = 2.0) -> ExperimentResult:
    """Full pipeline per seed: split, pre-train, SSL train, evaluate on test.

    Each seed reseeds both the split and the training run, so the whole
    experiment is a pure function of (datasets, spec, cfg, seeds).
    """
    per_seed = []
    for seed in seeds:
        spec_s = replace(split_spec, seed=int(seed))
        cfg_s = replace(cfg, seed=int(seed))
        splits = split(datasets, spec_s)
        teacher = pretrain_teacher(splits.labeled, splits.val, cfg_s)
        model_cfg = _model_config_for(cfg_s, splits.labeled.signals[0],
                                      splits.labeled.labels.shape[1])
        if cfg_s.baseline == "supervised_only":
            final, history = teacher, []
        else:
            final, _, history = ssl_train(splits, cfg_s, teacher)
        report = evaluate_model(model_cfg, final, splits.test, cfg_s.pool_len,
                                threshold=metric_threshold, beta=gbeta_beta,
                                preprocessor=cfg_s.preprocessor)
        per_seed.append(SeedResult(int(seed), report, history, final))

    mean, std = {}, {}
    for name in METRIC_NAMES:
        values = np.array([r.report.value(name) for r in per_seed])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns stay NaN
            mean[name] = float(np.nanmean(values))
            std[name] = float(np.nanstd(values))
    return ExperimentResult(per_seed, mean, std)
