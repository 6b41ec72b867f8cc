"""Optimization, evaluation and analysis for time-aware link prediction.

Training iterates chronologically ordered mini-batches of training events,
scores each positive pair against seeded uniform negatives with the
sigmoid-of-inner-product decoder, and early-stops on validation average
precision, restoring the best checkpoint. Everything is deterministic given
the configured seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import metrics
from .autodiff import Tensor
from .errors import ContractError, EvaluationError, ValidationError
from .layer import (
    AttentionCollector,
    Dims,
    SamplingConfig,
    TgatModel,
    embed,
    embed_tensor,
)
from .temporal_graph import (
    STRATEGIES,
    SplitSpec,
    TemporalGraph,
    evaluation_event_indices,
    training_event_indices,
)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    layers: int = 2
    heads: int = 2
    neighborhood_dropout: float = 0.1
    negatives_per_positive: int = 1
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 10
    attention_mode: str = "learned"
    sampling_strategy: str = "uniform"
    rng_seed: int = 0
    d: int = 32
    d_t: int = 16
    d_h: int = 16
    d_f: int = 32
    max_neighbors: int = 20
    positional_learnable: bool = False
    train_frac: float = 0.70
    val_frac: float = 0.15
    unseen_fraction: float = 0.10
    # desk-scale budget caps: per-epoch training positives and validation events
    max_train_events_per_epoch: int = 0  # 0 = no cap
    max_val_events: int = 0

    def validate(self) -> None:
        if not 0 <= self.neighborhood_dropout < 1:
            raise ValidationError("neighborhood_dropout must lie in [0, 1)")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if self.negatives_per_positive < 1:
            raise ValidationError("negatives_per_positive must be >= 1")
        if self.sampling_strategy not in STRATEGIES:
            raise ValidationError(f"unknown sampling strategy {self.sampling_strategy!r}")
        if self.layers < 1 or self.heads < 1:
            raise ValidationError("layers and heads must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValidationError("batch_size must be >= 1 and max_epochs >= 0")

    def sampling(self, training: bool = False) -> SamplingConfig:
        """Evaluation uses the full neighborhood cap; training shrinks it by
        the dropout rate (neighborhood dropout realized as subsampling)."""
        cap = self.max_neighbors
        if training and self.neighborhood_dropout > 0:
            cap = max(1, int(round((1.0 - self.neighborhood_dropout) * cap)))
        return SamplingConfig(max_neighbors=cap, strategy=self.sampling_strategy)


@dataclass
class EvalMetrics:
    accuracy: float
    average_precision: float
    auc: float | None
    split_tag: str


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_ap: float
    val_acc: float


def build_model(graph: TemporalGraph, config: TrainConfig) -> TgatModel:
    dims = Dims(d0=graph.node_feature_dim, d=config.d, d_t=config.d_t,
                d_h=config.d_h, d_f=config.d_f, d_e=graph.edge_feature_dim)
    return TgatModel.create(
        dims,
        layer_count=config.layers,
        head_count=config.heads,
        attention_mode=config.attention_mode,
        rng_seed=config.rng_seed,
        t_max=max(graph.t_max, 1.0),
        positional_learnable=config.positional_learnable,
        max_positions=max(64, config.max_neighbors + 1),
    )


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def _draw_negative(rng: np.random.Generator, num_nodes: int, forbidden: int) -> int:
    """Uniform node id, resampling on collision with the positive destination."""
    v = int(rng.integers(0, num_nodes))
    while v == forbidden and num_nodes > 1:
        v = int(rng.integers(0, num_nodes))
    return v


def link_loss(
    model: TgatModel,
    graph: TemporalGraph,
    batch_events: Sequence[int],
    sampling: SamplingConfig,
    negatives_per_positive: int = 1,
    rng_seed=0,
) -> Tensor:
    """Time-sensitive link prediction loss for a batch of positive events.

    Per positive (i, j, t): -log sigmoid(h_i . h_j) plus, for each of Q
    uniformly drawn negatives q != j, -log sigmoid(-h_i . h_q). All
    embeddings are evaluated at the interaction time and the loss is
    differentiable through both sides of every inner product.
    """
    if len(batch_events) == 0:
        raise ContractError("link loss needs a non-empty batch")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    terms: list[Tensor] = []
    for idx in batch_events:
        ev = graph.events[idx]
        h_i = embed_tensor(model, ev.source, ev.timestamp, graph, sampling, rng)
        h_j = embed_tensor(model, ev.destination, ev.timestamp, graph, sampling, rng)
        s_pos = ad.matmul(h_i, ad.transpose(h_j))
        terms.append(ad.scale(ad.log_sigmoid(s_pos), -1.0))
        for _ in range(negatives_per_positive):
            q = _draw_negative(rng, graph.num_nodes, ev.destination)
            h_q = embed_tensor(model, q, ev.timestamp, graph, sampling, rng)
            s_neg = ad.matmul(h_i, ad.transpose(h_q))
            terms.append(ad.scale(ad.log_sigmoid(ad.scale(s_neg, -1.0)), -1.0))
    return ad.sum_all(ad.concat_rows(terms))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def create(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params])


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """Standard Adam update with bias correction."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params, grads and optimizer state must align")
    b1, b2 = betas
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ContractError(
                f"gradient shape {g.shape} does not match parameter shape {p.data.shape}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        m_hat = state.m[i] / (1 - b1 ** t)
        v_hat = state.v[i] / (1 - b2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _chronological_subsample(indices: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if cap <= 0 or indices.size <= cap:
        return indices
    return np.sort(rng.choice(indices, size=cap, replace=False))


def train(graph: TemporalGraph, split: SplitSpec, config: TrainConfig) -> tuple[TgatModel, list[EpochStats]]:
    """Optimize a model on the training period, early-stopping on validation AP.

    Returns the best-validation model and the per-epoch metric history.
    Fully deterministic given the config seed; with no validation events the
    final epoch's parameters are kept.
    """
    config.validate()
    train_idx = training_event_indices(graph, split)
    if train_idx.size == 0:
        raise ContractError("training period contains no usable events")
    model = build_model(graph, config)
    params = model.parameters()
    state = AdamState.create(params)
    train_sampling = config.sampling(training=True)

    val_idx = evaluation_event_indices(graph, split, "val", "transductive")
    val_subsample = _chronological_subsample(
        val_idx, config.max_val_events, np.random.default_rng([config.rng_seed, 777]))

    history: list[EpochStats] = []
    best_ap = -np.inf
    best_params = [p.data.copy() for p in params]
    epochs_without_improvement = 0

    for epoch in range(1, config.max_epochs + 1):
        epoch_rng = np.random.default_rng([config.rng_seed, epoch])
        epoch_idx = _chronological_subsample(train_idx, config.max_train_events_per_epoch, epoch_rng)
        total_loss = 0.0
        n_pos = 0
        for b_start in range(0, epoch_idx.size, config.batch_size):
            batch = epoch_idx[b_start : b_start + config.batch_size]
            batch_rng = np.random.default_rng([config.rng_seed, epoch, int(b_start)])
            ad.zero_grads(params)
            with ad.Tape() as tape:
                loss = link_loss(model, graph, batch, train_sampling,
                                 config.negatives_per_positive, batch_rng)
            ad.backward(tape, loss)
            adam_step(params, [p.grad for p in params], state, config.learning_rate)
            total_loss += float(loss.data[0, 0])
            n_pos += batch.size

        train_loss = total_loss / max(n_pos, 1)
        if val_subsample.size > 0:
            val = evaluate_links(model, graph, split, period="val", node_filter="observed",
                                 config=config, rng_seed=config.rng_seed,
                                 event_indices=val_subsample)
            val_ap, val_acc = val.average_precision, val.accuracy
        else:
            val_ap, val_acc = float("nan"), float("nan")
        history.append(EpochStats(epoch=epoch, train_loss=train_loss,
                                  val_ap=val_ap, val_acc=val_acc))

        if np.isnan(val_ap):
            best_params = [p.data.copy() for p in params]
            continue
        if val_ap > best_ap:
            best_ap = val_ap
            best_params = [p.data.copy() for p in params]
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= config.patience:
                break

    for p, best in zip(params, best_params):
        p.data = best
    return model, history


def write_history_csv(history: Sequence[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_ap", "val_acc"])
        for row in history:
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_ap), repr(row.val_acc)])


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate_links(
    model: TgatModel,
    graph: TemporalGraph,
    split: SplitSpec,
    period: str = "test",
    node_filter: str = "observed",
    config: TrainConfig | None = None,
    rng_seed: int = 0,
    event_indices: np.ndarray | None = None,
    max_events: int = 0,
) -> EvalMetrics:
    """Score each positive event against one seeded negative pair.

    ``node_filter`` "observed" evaluates transductively (no unseen endpoint);
    "unseen" evaluates the inductive set (at least one unseen endpoint).
    """
    if node_filter not in ("observed", "unseen"):
        raise ValidationError(f"node filter must be 'observed' or 'unseen', got {node_filter!r}")
    mode = "transductive" if node_filter == "observed" else "inductive"
    if event_indices is None:
        event_indices = evaluation_event_indices(graph, split, period, mode)
        if max_events:
            event_indices = _chronological_subsample(
                event_indices, max_events, np.random.default_rng([rng_seed, 555]))
    if event_indices.size == 0:
        raise EvaluationError(f"no {mode} events to evaluate in period {period!r}")
    sampling = (config or TrainConfig()).sampling(training=False)
    rng = np.random.default_rng([rng_seed, 1001])

    labels = []
    scores = []
    for idx in event_indices:
        ev = graph.events[int(idx)]
        h_i = embed(model, ev.source, ev.timestamp, graph, sampling, rng)
        h_j = embed(model, ev.destination, ev.timestamp, graph, sampling, rng)
        q = _draw_negative(rng, graph.num_nodes, ev.destination)
        h_q = embed(model, q, ev.timestamp, graph, sampling, rng)
        scores.append(float(ad.sigmoid_values(np.array([h_i @ h_j]))[0]))
        labels.append(1)
        scores.append(float(ad.sigmoid_values(np.array([h_i @ h_q]))[0]))
        labels.append(0)
    return EvalMetrics(
        accuracy=metrics.accuracy(labels, scores),
        average_precision=metrics.average_precision(labels, scores),
        auc=metrics.roc_auc(labels, scores),
        split_tag=mode,
    )


# ---------------------------------------------------------------------------
# downstream node classification
# ---------------------------------------------------------------------------


@dataclass
class MlpConfig:
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 1e-3
    l2: float = 0.001  # from the grid {0.001, 0.01, 0.05, 0.1, 0.2}
    rng_seed: int = 0


class _Mlp:
    """Three-layer ReLU MLP with widths (d, d, d/2, 1)."""

    def __init__(self, d: int, rng: np.random.Generator):
        from .layer import glorot

        d2 = max(1, d // 2)
        self.w1 = ad.parameter(glorot(rng, d, d))
        self.b1 = ad.parameter(np.zeros((1, d)))
        self.w2 = ad.parameter(glorot(rng, d, d2))
        self.b2 = ad.parameter(np.zeros((1, d2)))
        self.w3 = ad.parameter(glorot(rng, d2, 1))
        self.b3 = ad.parameter(np.zeros((1, 1)))

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def weight_matrices(self) -> list[Tensor]:
        return [self.w1, self.w2, self.w3]

    def logits(self, x: Tensor) -> Tensor:
        h1 = ad.relu(ad.add(ad.matmul(x, self.w1), self.b1))
        h2 = ad.relu(ad.add(ad.matmul(h1, self.w2), self.b2))
        return ad.add(ad.matmul(h2, self.w3), self.b3)

    def scores(self, x: np.ndarray) -> np.ndarray:
        return ad.sigmoid_values(self.logits(ad.constant(x)).data[:, 0])


def node_classify(
    model: TgatModel,
    graph: TemporalGraph,
    split: SplitSpec,
    mlp_config: MlpConfig | None = None,
    config: TrainConfig | None = None,
    rng_seed: int = 0,
) -> EvalMetrics:
    """Train an MLP on time-aware embeddings of labeled events and report
    test-period AUC.

    The labeled entity is the event source, embedded at the label timestamp.
    Batches are stratified (half positive, half negative, with replacement)
    because state labels are heavily imbalanced.
    """
    mlp_config = mlp_config or MlpConfig()
    sampling = (config or TrainConfig()).sampling(training=False)
    rng = np.random.default_rng([rng_seed, 2002])

    pools: dict[str, tuple[list[np.ndarray], list[int]]] = {
        "train": ([], []), "val": ([], []), "test": ([], [])}
    for ev in graph.events:
        if ev.label is None:
            continue
        feats, labels = pools[split.period_of(ev.timestamp)]
        feats.append(embed(model, ev.source, ev.timestamp, graph, sampling, rng))
        labels.append(int(ev.label))

    def as_arrays(period: str) -> tuple[np.ndarray, np.ndarray]:
        feats, labels = pools[period]
        return (np.stack(feats) if feats else np.zeros((0, model.dims.d)),
                np.asarray(labels, dtype=np.int64))

    x_train, y_train = as_arrays("train")
    x_test, y_test = as_arrays("test")
    for name, y in (("training", y_train), ("test", y_test)):
        if y.size == 0 or len(np.unique(y)) < 2:
            raise EvaluationError(f"{name} period needs at least one label of each class")

    mlp_rng = np.random.default_rng([mlp_config.rng_seed, 3003])
    mlp = _Mlp(x_train.shape[1], mlp_rng)
    params = mlp.parameters()
    state = AdamState.create(params)
    pos_idx = np.flatnonzero(y_train == 1)
    neg_idx = np.flatnonzero(y_train == 0)
    half = max(1, mlp_config.batch_size // 2)

    for _ in range(mlp_config.epochs):
        batch_idx = np.concatenate([
            mlp_rng.choice(pos_idx, size=half, replace=True),
            mlp_rng.choice(neg_idx, size=half, replace=True),
        ])
        x = x_train[batch_idx]
        y_sign = np.where(y_train[batch_idx] == 1, 1.0, -1.0)[:, None]
        ad.zero_grads(params)
        with ad.Tape() as tape:
            logits = mlp.logits(ad.constant(x))
            # -log sigmoid(s) for positives, -log sigmoid(-s) for negatives
            signed = ad.mul(logits, ad.constant(y_sign))
            loss = ad.sum_all(ad.scale(ad.log_sigmoid(signed), -1.0))
        ad.backward(tape, loss)
        grads = [p.grad for p in params]
        if mlp_config.l2 > 0:
            weights = set(id(w) for w in mlp.weight_matrices())
            grads = [
                (np.zeros_like(p.data) if g is None else g)
                + (2.0 * mlp_config.l2 * p.data if id(p) in weights else 0.0)
                for p, g in zip(params, grads)
            ]
        adam_step(params, grads, state, mlp_config.learning_rate)

    scores = mlp.scores(x_test)
    return EvalMetrics(
        accuracy=metrics.accuracy(y_test, scores),
        average_precision=metrics.average_precision(y_test, scores),
        auc=metrics.roc_auc(y_test, scores),
        split_tag="transductive",
    )


# ---------------------------------------------------------------------------
# attention analysis
# ---------------------------------------------------------------------------


@dataclass
class AttentionRow:
    timespan: float
    attention_weight: float
    occurrence_count: int
    target_time_offset: float


def attention_report(
    model: TgatModel,
    graph: TemporalGraph,
    event_indices: Sequence[int],
    target_time_offsets: Sequence[float] = (0.0,),
    config: TrainConfig | None = None,
    rng_seed: int = 0,
) -> list[AttentionRow]:
    """Collect top-layer attention weights as functions of timespan and of
    neighbor recurrence, for a sample of predictions."""
    sampling = (config or TrainConfig()).sampling(training=False)
    rows: list[AttentionRow] = []
    rng = np.random.default_rng([rng_seed, 4004])
    top = model.layer_count
    for idx in event_indices:
        ev = graph.events[int(idx)]
        for offset in target_time_offsets:
            t = ev.timestamp + offset
            for node in (ev.source, ev.destination):
                collector = AttentionCollector()
                embed_tensor(model, node, t, graph, sampling, rng, collector)
                for layer_index, q_time, peers, timespans, weights in collector.records:
                    if layer_index != top:
                        continue
                    counts: dict[int, int] = {}
                    for p in peers:
                        counts[p] = counts.get(p, 0) + 1
                    for p, span, w in zip(peers, timespans, weights):
                        rows.append(AttentionRow(
                            timespan=float(span),
                            attention_weight=float(w),
                            occurrence_count=counts[p],
                            target_time_offset=float(offset),
                        ))
    return rows


def write_attention_csv(rows: Sequence[AttentionRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timespan", "attention_weight", "occurrence_count", "target_time_offset"])
        for r in rows:
            writer.writerow([repr(r.timespan), repr(r.attention_weight),
                             r.occurrence_count, repr(r.target_time_offset)])
