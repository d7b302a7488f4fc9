"""Class-similarity graph, per-class feature bank, and GCN imputation.

The graph links classes whose embedding cosine similarity clears a
threshold. Seen classes fill a feature bank row by row; once every seen
row is filled, a two-layer graph convolution propagates those rows and
the unseen rows of the output become imputed fake features.
"""

import csv
import logging

import numpy as np

from cfzsl import autodiff as ad
from cfzsl.errors import ConfigError, DataFormatError, TrainingDivergedError
from cfzsl.generator import FakeFeatureBatch
from cfzsl.optim import OptimizerSpec, step, zero_grad
from cfzsl.rng import substream

log = logging.getLogger(__name__)


class ClassGraph:
    """Symmetric weighted adjacency over classes; no self-edges stored."""

    def __init__(self, names, adjacency, threshold):
        self.names = list(names)
        self.n = len(self.names)
        self.adjacency = np.ascontiguousarray(adjacency, dtype=np.float64)
        self.threshold = float(threshold)
        if self.adjacency.shape != (self.n, self.n):
            raise ConfigError(
                f"adjacency shape {self.adjacency.shape} does not match {self.n} classes"
            )

    def isolated_nodes(self):
        """Class ids with no edge above the threshold."""
        return [int(i) for i in np.flatnonzero(self.adjacency.sum(axis=1) == 0.0)]


def build_graph(embeddings, threshold):
    """Adjacency from pairwise embedding cosines, zeroed at or below threshold."""
    if len(embeddings) < 2:
        raise ConfigError("need at least 2 embeddings to build a class graph")
    if not -1.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (-1, 1), got {threshold}")
    vectors = np.ascontiguousarray([e.vector for e in embeddings], dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DataFormatError(
            f"zero-norm embedding for {embeddings[int(zero[0])].name!r}; cosine undefined"
        )
    unit = vectors / norms[:, None]
    cos = unit @ unit.T
    upper = np.triu(cos, k=1)
    kept = np.where(upper > threshold, upper, 0.0)
    adjacency = kept + kept.T  # exact symmetry by construction
    return ClassGraph([e.name for e in embeddings], adjacency, threshold)


def normalized_adjacency(graph, mode="symmetric"):
    """Propagation matrix: symmetric-normalized with self-loops, or raw."""
    if mode == "raw":
        return graph.adjacency.copy()
    if mode != "symmetric":
        raise ConfigError(f"unknown adjacency normalization {mode!r}")
    with_loops = graph.adjacency + np.eye(graph.n)
    inv_sqrt_deg = 1.0 / np.sqrt(with_loops.sum(axis=1))
    return inv_sqrt_deg[:, None] * with_loops * inv_sqrt_deg[None, :]


class FeatureBank:
    """Per-class feature rows: seen rows filled from real data, unseen zero."""

    def __init__(self, n_classes, feature_dim, unseen_ids, policy="running_mean"):
        if policy not in ("running_mean", "last_write"):
            raise ConfigError(f"unknown bank policy {policy!r}")
        self.matrix = np.zeros((n_classes, feature_dim))
        self.counts = np.zeros(n_classes, dtype=np.int64)
        self.filled_mask = np.zeros(n_classes, dtype=bool)
        self.unseen_ids = frozenset(int(i) for i in unseen_ids)
        self.policy = policy

    @property
    def n_classes(self):
        return self.matrix.shape[0]

    def matrix_for_propagation(self):
        """Copy of the bank with every unfilled row forced to zero."""
        out = self.matrix.copy()
        out[~self.filled_mask] = 0.0
        return out


def accumulate(bank, class_id, feature):
    """Write one real feature into its class row (mean or last-write policy)."""
    class_id = int(class_id)
    if class_id in bank.unseen_ids:
        raise ConfigError(
            f"class {class_id} is unseen; its bank row must stay empty before imputation"
        )
    if not 0 <= class_id < bank.n_classes:
        raise IndexError(f"class id {class_id} out of range for {bank.n_classes} classes")
    feature = np.asarray(feature, dtype=np.float64).ravel()
    bank.counts[class_id] += 1
    if bank.policy == "running_mean":
        row = bank.matrix[class_id]
        row += (feature - row) / bank.counts[class_id]
    else:
        bank.matrix[class_id] = feature
    bank.filled_mask[class_id] = True
    return bank


def fill_bank(bank, dataset):
    """Accumulate every training feature; only seen classes are present there."""
    for fv in dataset.train:
        accumulate(bank, fv.class_id, fv.values)
    return bank


def ready(bank):
    """True once every seen class has at least one banked feature."""
    seen = [k for k in range(bank.n_classes) if k not in bank.unseen_ids]
    return bool(bank.filled_mask[seen].all())


class GcnNet:
    """Two graph-convolution layers (feature -> hidden -> feature), no bias."""

    def __init__(self, feature_dim, hidden_width=None, normalization="symmetric", rng=None):
        if rng is None:
            rng = substream(0, "gcn.init")
        self.feature_dim = int(feature_dim)
        self.hidden_width = int(hidden_width) if hidden_width else self.feature_dim
        self.normalization = normalization
        self.theta1 = ad.Parameter(
            rng.normal(size=(self.feature_dim, self.hidden_width))
            * np.sqrt(2.0 / self.feature_dim)
        )
        self.theta2 = ad.Parameter(
            rng.normal(size=(self.hidden_width, self.feature_dim))
            * np.sqrt(1.0 / self.hidden_width)
        )

    def parameters(self):
        return [self.theta1, self.theta2]

    def to_dict(self):
        return {
            "feature_dim": self.feature_dim,
            "hidden_width": self.hidden_width,
            "normalization": self.normalization,
            "theta1": self.theta1.data.tolist(),
            "theta2": self.theta2.data.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        net = cls(d["feature_dim"], d["hidden_width"], d["normalization"])
        net.theta1.data[...] = np.asarray(d["theta1"])
        net.theta2.data[...] = np.asarray(d["theta2"])
        return net


def gcn_forward(net, graph, bank_matrix):
    """Propagate the bank through both layers; returns an (n, feature_dim) tensor."""
    ahat = ad.constant(normalized_adjacency(graph, net.normalization))
    m = bank_matrix if isinstance(bank_matrix, ad.Tensor) else ad.constant(bank_matrix)
    hidden = ad.relu(ad.matmul(ad.matmul(ahat, m), net.theta1))
    return ad.matmul(ad.matmul(ahat, hidden), net.theta2)


def train_gcn(net, graph, bank, dataset, epochs, optimizer=None):
    """Fit the GCN to reconstruct seen-class feature means; unseen rows carry no loss."""
    if not ready(bank):
        raise ConfigError("feature bank is not ready: some seen class has no features")
    if optimizer is None:
        optimizer = OptimizerSpec(kind="adam", learning_rate=1e-3, weight_decay=0.0)
    X, y = dataset.train_arrays()
    seen = dataset.seen_ids
    targets = np.stack([X[y == k].mean(axis=0) for k in seen])
    seen_idx = np.asarray(seen, dtype=np.intp)
    m_input = bank.matrix_for_propagation()
    params = net.parameters()
    for epoch in range(epochs):
        zero_grad(params)
        out = gcn_forward(net, graph, m_input)
        loss = ad.mse(ad.take_rows(out, seen_idx), targets)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDivergedError(f"gcn loss became non-finite at epoch {epoch}")
        loss.backward()
        step(params, optimizer)
    return net


def impute(net, graph, bank, unseen_ids):
    """Unseen rows of the propagated bank, tagged as imputed fake features."""
    ids = [int(k) for k in unseen_ids]
    for k in ids:
        if not 0 <= k < bank.n_classes:
            raise IndexError(f"unseen id {k} out of range for {bank.n_classes} classes")
    if not ready(bank):
        raise ConfigError("feature bank is not ready: some seen class has no features")
    out = gcn_forward(net, graph, bank.matrix_for_propagation()).data
    isolated = set(graph.isolated_nodes())
    degenerate = sorted(set(ids) & isolated)
    if degenerate:
        log.warning(
            "unseen classes %s have no graph neighbor above threshold %.3f; "
            "their imputed rows only reflect their own (empty) bank row",
            degenerate, graph.threshold,
        )
    rows = out[np.asarray(ids, dtype=np.intp)] if ids else np.zeros((0, bank.matrix.shape[1]))
    return FakeFeatureBatch(rows, np.asarray(ids, dtype=np.int64), origin="gcn_imputed")


class ImputedSource:
    """Fake-feature source that serves GCN-imputed rows for unseen classes.

    Seen classes (and any degenerate unseen class with no graph neighbor)
    fall back to the wrapped generator source. ``mode="mix"`` serves both
    the imputed rows and the generator rows for unseen classes.
    """

    origin = "gcn_imputed"

    def __init__(self, imputed, base, degenerate_ids=(), mode="replace"):
        if mode not in ("replace", "mix"):
            raise ConfigError(f"unknown imputed mode {mode!r}")
        self.rows = {int(k): row for k, row in zip(imputed.class_ids, imputed.features)}
        for k in degenerate_ids:
            self.rows.pop(int(k), None)
        self.base = base
        self.mode = mode

    def sample(self, class_ids, samples_per_class, rng):
        imputed_ids = [k for k in class_ids if int(k) in self.rows]
        base_ids = [k for k in class_ids if int(k) not in self.rows]
        if self.mode == "mix":
            base_ids = list(class_ids)
        parts = []
        if base_ids:
            parts.append(self.base.sample(base_ids, samples_per_class, rng))
        if imputed_ids:
            feats = np.vstack([
                np.tile(self.rows[int(k)], (samples_per_class, 1)) for k in imputed_ids
            ])
            ids = np.repeat(np.asarray(imputed_ids, dtype=np.int64), samples_per_class)
            parts.append(FakeFeatureBatch(feats, ids, origin="gcn_imputed"))
        features = np.vstack([p.features for p in parts])
        class_ids_out = np.concatenate([p.class_ids for p in parts])
        return FakeFeatureBatch(features, class_ids_out, origin="gcn_imputed")


def export_adjacency_csv(path, graph):
    """n x n adjacency as CSV with a class-name header row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class"] + graph.names)
        for name, row in zip(graph.names, graph.adjacency):
            writer.writerow([name] + [f"{v:.6f}" for v in row])
