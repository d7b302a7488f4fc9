"""Synthetic zero-shot feature tasks and class-embedding ingestion.

A task is a set of classes, each with a word embedding and a Gaussian
feature cluster. Training features cover seen classes only; the test set
covers every class. Cluster means are tied to the embeddings through a
shared linear map, with a coupling knob controlling how much of the mean
is explained by the embedding versus an independent per-class component.
"""

import json
from dataclasses import dataclass

import numpy as np

from cfzsl.errors import ConfigError, DataFormatError
from cfzsl.rng import substream


@dataclass
class ClassEmbedding:
    class_id: int
    name: str
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.ascontiguousarray(self.vector, dtype=np.float64).ravel()
        if not np.isfinite(self.vector).all():
            raise DataFormatError(f"embedding for {self.name!r} has non-finite values")


@dataclass
class FeatureVector:
    values: np.ndarray
    class_id: int

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()


@dataclass
class ZeroShotTaskSpec:
    """Parameters of one synthetic task; fully determines it given the seed."""

    n_classes: int = 10
    n_unseen: int = 2
    feature_dim: int = 64
    embedding_dim: int = 32
    samples_per_class: int = 200
    cluster_spread: float = 0.15
    embedding_feature_coupling: float = 0.8
    seed: int = 0
    # How tightly each unseen embedding hugs its seen anchor class.
    unseen_neighbor_scale: float = 0.25

    def validate(self):
        if not 0 < self.n_unseen < self.n_classes:
            raise ConfigError(
                f"need 0 < n_unseen < n_classes, got {self.n_unseen}/{self.n_classes}"
            )
        if self.samples_per_class < 2:
            raise ConfigError("samples_per_class must be >= 2")
        if self.feature_dim < 1 or self.embedding_dim < 1:
            raise ConfigError("feature_dim and embedding_dim must be >= 1")
        if self.cluster_spread < 0:
            raise ConfigError("cluster_spread must be >= 0")
        if not 0.0 <= self.embedding_feature_coupling <= 1.0:
            raise ConfigError("embedding_feature_coupling must be in [0, 1]")
        if self.unseen_neighbor_scale < 0:
            raise ConfigError("unseen_neighbor_scale must be >= 0")

    def to_dict(self):
        return {
            "n_classes": self.n_classes,
            "n_unseen": self.n_unseen,
            "feature_dim": self.feature_dim,
            "embedding_dim": self.embedding_dim,
            "samples_per_class": self.samples_per_class,
            "cluster_spread": self.cluster_spread,
            "embedding_feature_coupling": self.embedding_feature_coupling,
            "seed": self.seed,
            "unseen_neighbor_scale": self.unseen_neighbor_scale,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ZeroShotDataset:
    embeddings: list
    train: list
    test: list
    unseen_ids: frozenset
    spec: ZeroShotTaskSpec = None

    def __post_init__(self):
        self.unseen_ids = frozenset(int(i) for i in self.unseen_ids)
        bad = [fv.class_id for fv in self.train if fv.class_id in self.unseen_ids]
        if bad:
            raise ConfigError(f"training features carry unseen class ids: {sorted(set(bad))}")

    @property
    def n_classes(self):
        return len(self.embeddings)

    @property
    def feature_dim(self):
        return len(self.test[0].values) if self.test else 0

    @property
    def embedding_dim(self):
        return len(self.embeddings[0].vector)

    @property
    def seen_ids(self):
        return sorted(set(range(self.n_classes)) - self.unseen_ids)

    @property
    def names(self):
        return [e.name for e in self.embeddings]

    def embedding_matrix(self):
        return np.ascontiguousarray([e.vector for e in self.embeddings])

    def train_arrays(self):
        """Training features and labels; seen classes only by construction."""
        X = np.ascontiguousarray([fv.values for fv in self.train])
        y = np.asarray([fv.class_id for fv in self.train], dtype=np.int64)
        return X, y

    def test_arrays(self):
        X = np.ascontiguousarray([fv.values for fv in self.test])
        y = np.asarray([fv.class_id for fv in self.test], dtype=np.int64)
        return X, y

    def to_dict(self):
        return {
            "spec": self.spec.to_dict() if self.spec else None,
            "embeddings": [
                {"class_id": e.class_id, "name": e.name, "vector": e.vector.tolist()}
                for e in self.embeddings
            ],
            "train": [
                {"class_id": fv.class_id, "values": fv.values.tolist()} for fv in self.train
            ],
            "test": [
                {"class_id": fv.class_id, "values": fv.values.tolist()} for fv in self.test
            ],
            "unseen_ids": sorted(self.unseen_ids),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            embeddings=[
                ClassEmbedding(e["class_id"], e["name"], np.asarray(e["vector"]))
                for e in d["embeddings"]
            ],
            train=[FeatureVector(np.asarray(r["values"]), r["class_id"]) for r in d["train"]],
            test=[FeatureVector(np.asarray(r["values"]), r["class_id"]) for r in d["test"]],
            unseen_ids=frozenset(d["unseen_ids"]),
            spec=ZeroShotTaskSpec.from_dict(d["spec"]) if d.get("spec") else None,
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def synthesize(spec: ZeroShotTaskSpec) -> ZeroShotDataset:
    """Generate a task from its spec; identical spec gives identical bytes.

    Unseen classes take the last ``n_unseen`` ids and their embeddings are
    placed near distinct seen anchors, so a thresholded similarity graph
    links each unseen class to at least one seen neighbor.
    """
    spec.validate()
    rng_emb = substream(spec.seed, "data.embeddings")
    rng_map = substream(spec.seed, "data.feature_map")
    rng_indep = substream(spec.seed, "data.independent")
    rng_samples = substream(spec.seed, "data.samples")

    n, w, l = spec.n_classes, spec.embedding_dim, spec.feature_dim
    n_seen = n - spec.n_unseen

    emb = np.empty((n, w))
    emb[:n_seen] = rng_emb.normal(size=(n_seen, w))
    for j in range(spec.n_unseen):
        anchor = emb[j % n_seen]
        emb[n_seen + j] = anchor + spec.unseen_neighbor_scale * rng_emb.normal(size=w)

    # Shared embedding->feature map; scaled so the mapped part keeps unit-ish scale.
    fmap = rng_map.normal(size=(w, l)) / np.sqrt(w)
    indep = rng_indep.normal(size=(n, l))
    coupling = spec.embedding_feature_coupling
    means = coupling * (emb @ fmap) + (1.0 - coupling) * indep

    embeddings = [ClassEmbedding(k, f"class_{k}", emb[k]) for k in range(n)]
    unseen_ids = frozenset(range(n_seen, n))
    train, test = [], []
    for k in range(n):
        block_train = means[k] + spec.cluster_spread * rng_samples.normal(
            size=(spec.samples_per_class, l)
        )
        block_test = means[k] + spec.cluster_spread * rng_samples.normal(
            size=(spec.samples_per_class, l)
        )
        if k < n_seen:
            train.extend(FeatureVector(row, k) for row in block_train)
        test.extend(FeatureVector(row, k) for row in block_test)

    return ZeroShotDataset(embeddings, train, test, unseen_ids, spec=spec)


def synthesize_from_embeddings(
    embeddings,
    feature_dim,
    samples_per_class,
    cluster_spread,
    embedding_feature_coupling,
    seed,
) -> ZeroShotDataset:
    """Build feature clusters around ingested embeddings; all classes seen.

    Pair with :func:`split` to withhold classes by name.
    """
    if samples_per_class < 2:
        raise ConfigError("samples_per_class must be >= 2")
    if not 0.0 <= embedding_feature_coupling <= 1.0:
        raise ConfigError("embedding_feature_coupling must be in [0, 1]")
    rng_map = substream(seed, "data.feature_map")
    rng_indep = substream(seed, "data.independent")
    rng_samples = substream(seed, "data.samples")

    emb = np.ascontiguousarray([e.vector for e in embeddings])
    n, w = emb.shape
    fmap = rng_map.normal(size=(w, feature_dim)) / np.sqrt(w)
    indep = rng_indep.normal(size=(n, feature_dim))
    means = embedding_feature_coupling * (emb @ fmap) + (
        1.0 - embedding_feature_coupling
    ) * indep

    train, test = [], []
    for k in range(n):
        block_train = means[k] + cluster_spread * rng_samples.normal(
            size=(samples_per_class, feature_dim)
        )
        block_test = means[k] + cluster_spread * rng_samples.normal(
            size=(samples_per_class, feature_dim)
        )
        train.extend(FeatureVector(row, k) for row in block_train)
        test.extend(FeatureVector(row, k) for row in block_test)
    return ZeroShotDataset(list(embeddings), train, test, frozenset(), spec=None)


def load_embeddings(path):
    """Parse a word2vec-style text file: ``name v1 v2 ... vw`` per line."""
    embeddings = []
    names = set()
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(" ")
            name, values = parts[0], parts[1:]
            if not values:
                raise DataFormatError(f"line {lineno}: no vector values for {name!r}")
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise DataFormatError(
                    f"line {lineno}: expected {dim} values, got {len(values)}"
                )
            if name in names:
                raise DataFormatError(f"line {lineno}: duplicate name {name!r}")
            names.add(name)
            try:
                vec = np.array([float(v) for v in values])
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from exc
            embeddings.append(ClassEmbedding(len(embeddings), name, vec))
    if not embeddings:
        raise DataFormatError(f"no embeddings in {path}")
    return embeddings


def split(dataset: ZeroShotDataset, unseen_names) -> ZeroShotDataset:
    """Withhold the named classes from training; the test set is untouched."""
    by_name = {e.name: e.class_id for e in dataset.embeddings}
    unseen_ids = set()
    for name in unseen_names:
        if name not in by_name:
            raise ConfigError(f"unknown class name {name!r}")
        unseen_ids.add(by_name[name])
    if len(unseen_ids) >= dataset.n_classes:
        raise ConfigError("at least one seen class required")
    train = [fv for fv in dataset.train if fv.class_id not in unseen_ids]
    return ZeroShotDataset(
        embeddings=dataset.embeddings,
        train=train,
        test=dataset.test,
        unseen_ids=frozenset(unseen_ids),
        spec=dataset.spec,
    )
