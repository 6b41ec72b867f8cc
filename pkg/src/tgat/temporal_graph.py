"""Event-indexed temporal interaction store and causality-respecting queries.

A TemporalGraph is immutable after construction: events are kept sorted by
timestamp (ties broken by ingestion order), every non-loop event is indexed
under both endpoints, and neighborhood queries only ever return interactions
strictly before the query time. Samplers take their seed explicitly, so
concurrent reads stay deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    IngestionError,
    MaskingError,
    SplitError,
    ValidationError,
)

# jitter added to timespans for inverse-timespan sampling so that weights stay
# bounded when an interaction is arbitrarily close to the query time
INVERSE_TIMESPAN_JITTER = 1.0

STRATEGIES = ("uniform", "inverse-timespan", "most-recent")


@dataclass(frozen=True)
class TemporalEvent:
    source: int
    destination: int
    timestamp: float
    edge_features: np.ndarray
    label: int | None = None


@dataclass(frozen=True)
class NeighborhoodSample:
    """Interactions of one node strictly before ``query_time``, oldest first."""

    entries: tuple[tuple[int, float, np.ndarray], ...]
    query_time: float
    event_indices: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class SplitSpec:
    """Chronological cut points plus the nodes withheld for inductive evaluation."""

    train_end: float
    val_end: float
    unseen_nodes: frozenset[int] = frozenset()

    def period_of(self, timestamp: float) -> str:
        if timestamp <= self.train_end:
            return "train"
        if timestamp <= self.val_end:
            return "val"
        return "test"


class _Adjacency:
    __slots__ = ("peers", "times", "event_idx")

    def __init__(self, peers, times, event_idx):
        self.peers = np.asarray(peers, dtype=np.int64)
        self.times = np.asarray(times, dtype=np.float64)
        self.event_idx = np.asarray(event_idx, dtype=np.int64)


class TemporalGraph:
    """Immutable store of timestamped interactions with per-node chronological adjacency."""

    def __init__(self, events: Sequence[TemporalEvent], node_features: np.ndarray):
        # copy so freezing the store never makes a caller's array read-only
        node_features = np.array(node_features, dtype=np.float64)
        if node_features.ndim != 2:
            raise ValidationError(f"node features must be 2-D, got shape {node_features.shape}")
        order = sorted(range(len(events)), key=lambda i: (events[i].timestamp, i))
        ordered = []
        d_e = None
        for i in order:
            ev = events[i]
            if ev.timestamp < 0:
                raise ValidationError(f"negative timestamp {ev.timestamp} in event {i}")
            feats = np.asarray(ev.edge_features, dtype=np.float64).reshape(-1)
            if d_e is None:
                d_e = feats.size
            elif feats.size != d_e:
                raise ValidationError(
                    f"edge feature length {feats.size} differs from declared {d_e}")
            for node in (ev.source, ev.destination):
                if not 0 <= node < node_features.shape[0]:
                    raise ValidationError(f"event references node {node} without features")
            ordered.append(replace(ev, edge_features=feats))
        self.events: tuple[TemporalEvent, ...] = tuple(ordered)
        self.node_features = node_features
        self.node_features.setflags(write=False)
        self.edge_feature_dim = 0 if d_e is None else d_e
        self.t_max = max((ev.timestamp for ev in self.events), default=0.0)

        buckets: list[list[tuple[int, float, int]]] = [[] for _ in range(node_features.shape[0])]
        for idx, ev in enumerate(self.events):
            if ev.source == ev.destination:
                continue  # self-loops never enter temporal neighborhoods
            buckets[ev.source].append((ev.destination, ev.timestamp, idx))
            buckets[ev.destination].append((ev.source, ev.timestamp, idx))
        self._adj = [
            _Adjacency([b[0] for b in bucket], [b[1] for b in bucket], [b[2] for b in bucket])
            for bucket in buckets
        ]

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_events(self) -> int:
        return len(self.events)

    @property
    def node_feature_dim(self) -> int:
        return self.node_features.shape[1]

    def has_node(self, node: int) -> bool:
        return 0 <= node < self.num_nodes

    def degree(self, node: int) -> int:
        return self._adj[node].peers.size


# ---------------------------------------------------------------------------
# access instrumentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AccessRecord:
    node: int
    query_time: float
    event_timestamp: float
    event_index: int


class AccessMonitor:
    """Records every event returned by neighborhood queries while active.

    Used to demonstrate end-to-end causality (no returned event may be at or
    after its consumer's query time) and split hygiene during training.
    """

    def __init__(self):
        self.records: list[AccessRecord] = []

    def __enter__(self) -> "AccessMonitor":
        _MONITORS.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _MONITORS.remove(self)
        return False

    def violations(self) -> list[AccessRecord]:
        return [r for r in self.records if r.event_timestamp >= r.query_time]

    def max_event_timestamp(self) -> float:
        return max((r.event_timestamp for r in self.records), default=float("-inf"))


_MONITORS: list[AccessMonitor] = []


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------


def _as_rng(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def temporal_neighborhood(
    g: TemporalGraph,
    node: int,
    t: float,
    max_size: int,
    strategy: str = "most-recent",
    rng_seed=0,
    jitter: float = INVERSE_TIMESPAN_JITTER,
) -> NeighborhoodSample:
    """Up to ``max_size`` interactions of ``node`` strictly before ``t``.

    ``uniform`` subsamples without replacement, ``inverse-timespan`` weights
    candidates by 1/(t - t_i + jitter), and ``most-recent`` keeps the latest
    interactions deterministically. Entries come back sorted by timestamp
    (ties by event order); recurring interactions with the same peer stay
    distinct. A node with no prior interactions yields an empty sample.
    """
    if not g.has_node(node):
        raise ValidationError(f"node {node} not in graph with {g.num_nodes} nodes")
    if max_size < 1:
        raise ValidationError(f"max_size must be >= 1, got {max_size}")
    if t < 0:
        raise ValidationError(f"query time must be non-negative, got {t}")
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown sampling strategy {strategy!r}")

    adj = g._adj[node]
    cut = int(np.searchsorted(adj.times, t, side="left"))
    if cut == 0:
        return NeighborhoodSample(entries=(), query_time=float(t))

    if cut <= max_size:
        chosen = np.arange(cut)
    elif strategy == "most-recent":
        chosen = np.arange(cut - max_size, cut)
    elif strategy == "uniform":
        rng = _as_rng(rng_seed)
        chosen = np.sort(rng.choice(cut, size=max_size, replace=False))
    else:  # inverse-timespan
        rng = _as_rng(rng_seed)
        weights = 1.0 / (t - adj.times[:cut] + jitter)
        chosen = np.sort(rng.choice(cut, size=max_size, replace=False, p=weights / weights.sum()))

    entries = []
    event_indices = []
    for i in chosen:
        ev_idx = int(adj.event_idx[i])
        entries.append((int(adj.peers[i]), float(adj.times[i]), g.events[ev_idx].edge_features))
        event_indices.append(ev_idx)
        for monitor in _MONITORS:
            monitor.records.append(
                AccessRecord(node=node, query_time=float(t),
                             event_timestamp=float(adj.times[i]), event_index=ev_idx))
    return NeighborhoodSample(entries=tuple(entries), query_time=float(t),
                              event_indices=tuple(event_indices))


def chronological_split(g: TemporalGraph, train_frac: float, val_frac: float) -> SplitSpec:
    """Quantile cut points over event timestamps; boundary events fall into
    the earlier period."""
    if not (0 < train_frac and 0 < val_frac and train_frac + val_frac < 1):
        raise ValidationError(
            f"invalid split fractions train={train_frac} val={val_frac}")
    if g.num_events < 3:
        raise SplitError(f"need at least 3 events to split, got {g.num_events}")
    ts = np.array([ev.timestamp for ev in g.events])
    n = ts.size

    def quantile_ts(frac: float) -> float:
        # index of the ceil(frac * n)-th event, guarding float fuzz like 0.7*100 -> 70.000...01
        idx = int(np.ceil(frac * n - 1e-9)) - 1
        return float(ts[min(max(idx, 0), n - 1)])

    return SplitSpec(train_end=quantile_ts(train_frac),
                     val_end=quantile_ts(train_frac + val_frac))


def mask_unseen(g: TemporalGraph, split: SplitSpec, fraction: float, rng_seed: int) -> SplitSpec:
    """Withhold a seeded random fraction of nodes from training.

    Training-period events incident to a withheld node are excluded from
    training; validation/test events incident to one form the inductive
    evaluation set. Raises if masking empties the training period.
    """
    if not 0 < fraction < 1:
        raise ValidationError(f"unseen fraction must lie in (0, 1), got {fraction}")
    rng = _as_rng(rng_seed)
    count = int(round(fraction * g.num_nodes))
    unseen = frozenset(int(v) for v in rng.choice(g.num_nodes, size=count, replace=False))
    masked = replace(split, unseen_nodes=unseen)
    if training_event_indices(g, masked).size == 0:
        raise MaskingError(
            f"masking {count} nodes leaves no training events before t={split.train_end}")
    return masked


def training_event_indices(g: TemporalGraph, split: SplitSpec) -> np.ndarray:
    """Indices of training-period events untouched by unseen nodes (chronological)."""
    keep = [
        i for i, ev in enumerate(g.events)
        if ev.timestamp <= split.train_end
        and ev.source not in split.unseen_nodes
        and ev.destination not in split.unseen_nodes
    ]
    return np.asarray(keep, dtype=np.int64)


def evaluation_event_indices(
    g: TemporalGraph, split: SplitSpec, period: str, mode: str = "transductive"
) -> np.ndarray:
    """Indices of evaluation events in ``period`` ("val" or "test").

    ``transductive`` keeps events between observed nodes only; ``inductive``
    keeps events incident to at least one unseen node.
    """
    if period not in ("val", "test"):
        raise ValidationError(f"evaluation period must be 'val' or 'test', got {period!r}")
    if mode not in ("transductive", "inductive"):
        raise ValidationError(f"evaluation mode must be transductive or inductive, got {mode!r}")
    keep = []
    for i, ev in enumerate(g.events):
        if split.period_of(ev.timestamp) != period:
            continue
        touches_unseen = ev.source in split.unseen_nodes or ev.destination in split.unseen_nodes
        if (mode == "inductive") == touches_unseen:
            keep.append(i)
    return np.asarray(keep, dtype=np.int64)


def sample_negative(g: TemporalGraph, rng_seed, count: int) -> list[int]:
    """``count`` node ids drawn uniformly with replacement from the node space."""
    if g.num_nodes == 0:
        raise ValidationError("cannot sample negatives from an empty graph")
    if count == 0:
        return []
    rng = _as_rng(rng_seed)
    return [int(v) for v in rng.integers(0, g.num_nodes, size=count)]


# ---------------------------------------------------------------------------
# ingestion and serialization
# ---------------------------------------------------------------------------


def build_graph(
    sources,
    destinations,
    timestamps,
    edge_features=None,
    labels=None,
    node_features=None,
    num_nodes: int | None = None,
    node_feature_dim: int = 1,
) -> TemporalGraph:
    """Assemble a graph from parallel arrays; convenience for fixtures and tests."""
    sources = np.asarray(sources, dtype=np.int64)
    destinations = np.asarray(destinations, dtype=np.int64)
    timestamps = np.asarray(timestamps, dtype=np.float64)
    n_events = sources.size
    if edge_features is None or n_events == 0:
        edge_features = np.zeros((n_events, 0))
    else:
        edge_features = np.asarray(edge_features, dtype=np.float64).reshape(n_events, -1)
    if node_features is None:
        if num_nodes is None:
            num_nodes = int(max(sources.max(initial=-1), destinations.max(initial=-1))) + 1
        node_features = np.zeros((num_nodes, node_feature_dim))
    events = [
        TemporalEvent(
            source=int(sources[i]),
            destination=int(destinations[i]),
            timestamp=float(timestamps[i]),
            edge_features=edge_features[i],
            label=None if labels is None else int(labels[i]),
        )
        for i in range(n_events)
    ]
    return TemporalGraph(events, node_features)


def ingest(
    rows: Iterable[Sequence[str]],
    feature_dim: int,
    node_feature_dim: int | None = None,
    time_divisor: float = 1.0,
    first_line: int = 2,
) -> TemporalGraph:
    """Build a graph from parsed CSV rows ``user, item, timestamp, label, f_1..f_de``.

    User and item id spaces are distinct; both are remapped to contiguous node
    ids in first-appearance order. Node features default to all-zero vectors.
    ``time_divisor`` rescales raw timestamps (raw epoch-second magnitudes make
    poor cos/sin arguments); line numbers in errors assume a single header line
    unless ``first_line`` says otherwise.
    """
    if time_divisor <= 0:
        raise ValidationError(f"time divisor must be positive, got {time_divisor}")
    expected_cols = 4 + feature_dim
    node_ids: dict[tuple[str, str], int] = {}

    def node_of(kind: str, raw: str) -> int:
        key = (kind, raw)
        if key not in node_ids:
            node_ids[key] = len(node_ids)
        return node_ids[key]

    events = []
    for offset, row in enumerate(rows):
        line = first_line + offset
        if len(row) != expected_cols:
            raise IngestionError(
                f"line {line}: expected {expected_cols} columns, got {len(row)}")
        try:
            timestamp = float(row[2])
            label = int(float(row[3]))
            feats = np.array([float(v) for v in row[4:]], dtype=np.float64)
        except ValueError as exc:
            raise IngestionError(f"line {line}: {exc}") from None
        if timestamp < 0:
            raise ValidationError(f"line {line}: negative timestamp {timestamp}")
        events.append(
            TemporalEvent(
                source=node_of("u", row[0]),
                destination=node_of("i", row[1]),
                timestamp=timestamp / time_divisor,
                edge_features=feats,
                label=label,
            )
        )
    if node_feature_dim is None:
        node_feature_dim = feature_dim if feature_dim > 0 else 1
    node_features = np.zeros((len(node_ids), node_feature_dim))
    return TemporalGraph(events, node_features)


def load_graph_csv(
    path,
    feature_dim: int | None = None,
    node_feature_dim: int | None = None,
    time_divisor: float = 1.0,
) -> TemporalGraph:
    """Read the benchmark CSV layout (one header line, then data rows).

    When ``feature_dim`` is omitted it is inferred from the header width.
    """
    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file, expected a header line") from None
        if feature_dim is None:
            feature_dim = max(len(header) - 4, 0)
        return ingest(reader, feature_dim, node_feature_dim=node_feature_dim,
                      time_divisor=time_divisor)


GRAPH_FORMAT_VERSION = 1


def save_graph(g: TemporalGraph, path) -> None:
    """Serialize to an .npz archive (schema documented in the README)."""
    labels = np.array([-1 if ev.label is None else ev.label for ev in g.events], dtype=np.int64)
    np.savez(
        path,
        format_version=np.array([GRAPH_FORMAT_VERSION]),
        sources=np.array([ev.source for ev in g.events], dtype=np.int64),
        destinations=np.array([ev.destination for ev in g.events], dtype=np.int64),
        timestamps=np.array([ev.timestamp for ev in g.events], dtype=np.float64),
        labels=labels,
        edge_features=np.stack([ev.edge_features for ev in g.events])
        if g.num_events else np.zeros((0, g.edge_feature_dim)),
        node_features=g.node_features,
    )


def load_graph(path) -> TemporalGraph:
    with np.load(path) as data:
        version = int(data["format_version"][0])
        if version != GRAPH_FORMAT_VERSION:
            raise ValidationError(f"unsupported graph format version {version}")
        labels = data["labels"]
        events = [
            TemporalEvent(
                source=int(data["sources"][i]),
                destination=int(data["destinations"][i]),
                timestamp=float(data["timestamps"][i]),
                edge_features=data["edge_features"][i],
                label=None if labels[i] < 0 else int(labels[i]),
            )
            for i in range(data["sources"].size)
        ]
        return TemporalGraph(events, data["node_features"])
