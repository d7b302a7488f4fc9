"""Fake-feature generator: an MLP from class embedding to feature space.

Trained by reconstruction on seen classes (generated output vs sampled
real features, mean squared error), then queried for any class. An
optional noise input concatenated to the embedding keeps the generated
batches non-degenerate so their variance is usable downstream.
"""

import logging
from dataclasses import dataclass

import numpy as np

from cfzsl import autodiff as ad
from cfzsl.errors import ConfigError, TrainingDivergedError
from cfzsl.optim import OptimizerSpec, step, zero_grad
from cfzsl.rng import substream

log = logging.getLogger(__name__)


@dataclass
class FakeFeatureBatch:
    features: np.ndarray
    class_ids: np.ndarray
    origin: str  # "mlp_generator" or "gcn_imputed"

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64).ravel()


def minibatch_indices(n, batch_size, rng):
    """Shuffled index blocks; a trailing singleton is merged into its neighbor."""
    order = rng.permutation(n)
    blocks = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(blocks) > 1 and len(blocks[-1]) == 1:
        blocks[-2:] = [np.concatenate(blocks[-2:])]
    return blocks


class GeneratorNet:
    """Three linear layers with ReLU between: (embedding + noise) -> feature."""

    def __init__(self, embedding_dim, feature_dim, hidden_width=None, noise_dim=8, rng=None):
        if rng is None:
            rng = substream(0, "generator.init")
        self.embedding_dim = int(embedding_dim)
        self.feature_dim = int(feature_dim)
        self.hidden_width = int(hidden_width) if hidden_width else 2 * self.feature_dim
        self.noise_dim = int(noise_dim)
        dims = [self.embedding_dim + self.noise_dim, self.hidden_width,
                self.hidden_width, self.feature_dim]
        self.layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = ad.Parameter(rng.normal(size=(fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
            b = ad.Parameter(np.zeros((1, fan_out)))
            self.layers.append((w, b))

    def parameters(self):
        return [p for pair in self.layers for p in pair]

    def forward(self, x):
        """x: (batch, embedding_dim + noise_dim) tensor or array."""
        h = x if isinstance(x, ad.Tensor) else ad.constant(x)
        for i, (w, b) in enumerate(self.layers):
            h = ad.linear_forward(h, w, b)
            if i < len(self.layers) - 1:
                h = ad.relu(h)
        return h

    def to_dict(self):
        return {
            "embedding_dim": self.embedding_dim,
            "feature_dim": self.feature_dim,
            "hidden_width": self.hidden_width,
            "noise_dim": self.noise_dim,
            "layers": [
                {"weight": w.data.tolist(), "bias": b.data.tolist()}
                for w, b in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d):
        net = cls(
            d["embedding_dim"], d["feature_dim"],
            hidden_width=d["hidden_width"], noise_dim=d["noise_dim"],
        )
        for (w, b), saved in zip(net.layers, d["layers"]):
            w.data[...] = np.asarray(saved["weight"])
            b.data[...] = np.asarray(saved["bias"])
        return net


def train_generator(gen, dataset, epochs, optimizer=None, batch_size=64, seed=0):
    """Fit the generator on seen classes; returns (gen, per-epoch loss curve)."""
    if not dataset.seen_ids:
        raise ConfigError("dataset has no seen classes to train the generator on")
    if optimizer is None:
        optimizer = OptimizerSpec(kind="adam", learning_rate=2e-4, weight_decay=0.0)
    rng_shuffle = substream(seed, "generator.shuffle")
    rng_noise = substream(seed, "generator.noise")

    X, y = dataset.train_arrays()
    emb_rows = dataset.embedding_matrix()[y]
    params = gen.parameters()
    curve = []
    for epoch in range(epochs):
        if gen.noise_dim:
            noise = rng_noise.normal(size=(X.shape[0], gen.noise_dim))
            inputs = np.hstack([emb_rows, noise])
        else:
            inputs = emb_rows
        total, count = 0.0, 0
        for idx in minibatch_indices(X.shape[0], batch_size, rng_shuffle):
            zero_grad(params)
            loss = ad.mse(gen.forward(inputs[idx]), X[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"generator loss became non-finite at epoch {epoch} "
                    f"(lr={optimizer.learning_rate})"
                )
            loss.backward()
            step(params, optimizer)
            total += value * len(idx)
            count += len(idx)
        curve.append(total / count)
    return gen, curve


def generate(gen, embeddings, class_ids, samples_per_class, seed=0):
    """Sample fake features for the given classes.

    ``embeddings`` is the full (n_classes, embedding_dim) matrix; ``seed``
    may also be a Generator to draw the noise from an external stream.
    """
    embeddings = np.ascontiguousarray(embeddings, dtype=np.float64)
    n = embeddings.shape[0]
    ids = [int(k) for k in class_ids]
    for k in ids:
        if not 0 <= k < n:
            raise IndexError(f"unknown class id {k} for {n} classes")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "generator.noise")

    rows = np.repeat(np.asarray(ids, dtype=np.int64), samples_per_class)
    inputs = embeddings[rows]
    if gen.noise_dim:
        noise = rng.normal(size=(inputs.shape[0], gen.noise_dim))
        inputs = np.hstack([inputs, noise])
    features = gen.forward(inputs).data
    return FakeFeatureBatch(features, rows, origin="mlp_generator")


class GeneratorSource:
    """Fake-feature source backed by the trained MLP generator."""

    origin = "mlp_generator"

    def __init__(self, gen, embeddings):
        self.gen = gen
        self.embeddings = np.ascontiguousarray(embeddings, dtype=np.float64)

    def sample(self, class_ids, samples_per_class, rng):
        return generate(self.gen, self.embeddings, class_ids, samples_per_class, seed=rng)
