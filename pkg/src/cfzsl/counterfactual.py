"""Two-branch debiased classifier: effect decomposition, fusion, training.

One linear classifier scores real features directly; a second scores
fake features generated from class embeddings. The second branch's
logits pass through a learned affine correction ``(1 - a) * L - c`` that
removes the share of its output attributable to real features leaking
through the generator, and the two branches are fused by a
variance-weighted convex combination.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from cfzsl import autodiff as ad
from cfzsl.errors import ConfigError, FusionError, ShapeError, TrainingDivergedError
from cfzsl.evaluation import confusion, report
from cfzsl.generator import minibatch_indices
from cfzsl.optim import OptimizerSpec, step, zero_grad
from cfzsl.rng import substream

log = logging.getLogger(__name__)


class LinearClassifier:
    """Single linear map from feature space to class logits."""

    def __init__(self, feature_dim, n_classes, rng=None):
        if rng is None:
            rng = substream(0, "classifier.init")
        self.feature_dim = int(feature_dim)
        self.n_classes = int(n_classes)
        self.weight = ad.Parameter(
            rng.normal(size=(self.feature_dim, self.n_classes))
            * np.sqrt(1.0 / self.feature_dim)
        )
        self.bias = ad.Parameter(np.zeros((1, self.n_classes)))

    def parameters(self):
        return [self.weight, self.bias]

    def logits(self, x):
        x = x if isinstance(x, ad.Tensor) else ad.constant(x)
        return ad.linear_forward(x, self.weight, self.bias)

    def logits_array(self, x):
        return self.logits(x).data

    def to_dict(self):
        return {
            "feature_dim": self.feature_dim,
            "n_classes": self.n_classes,
            "weight": self.weight.data.tolist(),
            "bias": self.bias.data.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        clf = cls(d["feature_dim"], d["n_classes"])
        clf.weight.data[...] = np.asarray(d["weight"])
        clf.bias.data[...] = np.asarray(d["bias"])
        return clf


class CounterfactualParams:
    """Trainable scalars of the logit correction.

    ``a_raw`` is used through a [0, 1] clamp and projected back into that
    interval after every optimizer step; ``c_total`` is the pooled
    constant standing for the network's score under void input.
    """

    def __init__(self, a_init=0.0, c_init=0.0):
        self.a_raw = ad.Parameter([[float(a_init)]])
        self.c_total = ad.Parameter([[float(c_init)]])

    def parameters(self):
        return [self.a_raw, self.c_total]

    def effective_a(self):
        return float(np.clip(self.a_raw.data[0, 0], 0.0, 1.0))

    def c_value(self):
        return float(self.c_total.data[0, 0])

    def project(self):
        np.clip(self.a_raw.data, 0.0, 1.0, out=self.a_raw.data)

    def to_dict(self):
        return {"a_raw": self.a_raw.data[0, 0], "c_total": self.c_total.data[0, 0]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["a_raw"], d["c_total"])


@dataclass
class EffectDecomposition:
    """Total, direct, and indirect effect logits plus the corrected output."""

    te: np.ndarray
    nde: np.ndarray
    nie: np.ndarray
    out_fl: np.ndarray


def counterfactual_transform(logits, params):
    """Corrected fake-branch logits ``(1 - a) * L - c`` on the tape."""
    one_minus_a = ad.sub(ad.constant(1.0), ad.clamp01(params.a_raw))
    return ad.sub(ad.mul(logits, one_minus_a), params.c_total)


def counterfactual_transform_array(logits, a, c):
    """Same correction on a plain array with fixed scalars."""
    return (1.0 - a) * logits - c


def reference_logits(params, batch_rows, n_classes):
    """Logits under void input: every entry is the constant c."""
    return np.full((batch_rows, n_classes), params.c_value())


def effect_decomposition(fl, fake_features, params):
    """Decompose the fake branch's logits on a batch of fake features.

    The full treatment gives L; removing the embedding input scales it to
    a*L; removing everything gives the constant reference. Total effect is
    measured against the reference, direct and indirect effects both
    reduce to the a-scaled case, and the corrected output keeps the
    constant subtracted rather than cancelled.
    """
    fake_features = np.ascontiguousarray(fake_features, dtype=np.float64)
    if fake_features.ndim != 2 or fake_features.shape[1] != fl.feature_dim:
        raise ShapeError(
            f"fake features {fake_features.shape} do not match feature_dim {fl.feature_dim}"
        )
    l_full = fl.logits_array(fake_features)
    l_ref = reference_logits(params, l_full.shape[0], fl.n_classes)
    a = params.effective_a()
    te = l_full - l_ref
    nde = a * l_full - l_ref
    nie = a * l_full - l_ref
    out_fl = counterfactual_transform_array(l_full, a, params.c_value())
    return EffectDecomposition(te, nde, nie.copy(), out_fl)


def te_matches_additive_split(decomp, tol=1e-9):
    """Whether TE equals NDE + NIE elementwise; generically it does not."""
    return bool(np.allclose(decomp.te, decomp.nde + decomp.nie, rtol=0.0, atol=tol))


def batch_variance(features):
    """Population variance pooled over every entry of the batch."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError("batch_variance needs a matrix with at least 2 rows")
    return float(np.var(features))


def fusion_weights(var_r, var_f):
    """Convex weights (on the fake branch, on the real branch)."""
    if var_r < 0 or var_f < 0:
        raise FusionError("variances must be >= 0")
    total = var_r + var_f
    if total == 0:
        raise FusionError("fusion undefined: both variances are zero")
    return var_r / total, var_f / total


def fuse(out_fl, out_rl, var_r, var_f):
    """Variance-weighted combination of the two branches' logits."""
    out_fl = np.asarray(out_fl, dtype=np.float64)
    out_rl = np.asarray(out_rl, dtype=np.float64)
    if out_fl.shape != out_rl.shape:
        raise ShapeError(f"fuse: shapes {out_fl.shape} and {out_rl.shape} differ")
    w_fl, w_rl = fusion_weights(var_r, var_f)
    return w_fl * out_fl + w_rl * out_rl


def fuse_tensors(out_fl, out_rl, var_r, var_f):
    """Tape version of :func:`fuse`; the variances carry no gradient."""
    if out_fl.shape != out_rl.shape:
        raise ShapeError(f"fuse: shapes {out_fl.shape} and {out_rl.shape} differ")
    w_fl, w_rl = fusion_weights(var_r, var_f)
    return ad.add(ad.scale(out_fl, w_fl), ad.scale(out_rl, w_rl))


def joint_loss(out_fl, out_rl, fused, targets):
    """Sum of the three cross-entropy terms on aligned logits."""
    return ad.add(
        ad.add(
            ad.softmax_cross_entropy(out_fl, targets),
            ad.softmax_cross_entropy(out_rl, targets),
        ),
        ad.softmax_cross_entropy(fused, targets),
    )


class _RunningMean:
    def __init__(self):
        self.total = 0.0
        self.count = 0

    def update(self, value):
        self.total += value
        self.count += 1

    @property
    def mean(self):
        return self.total / self.count if self.count else 0.0


class CounterfactualBundle:
    """Trained two-branch model plus the frozen fusion variances."""

    variant = "cf"

    def __init__(self, rl, fl, params, var_r, var_f):
        self.rl = rl
        self.fl = fl
        self.params = params
        self.var_r = float(var_r)
        self.var_f = float(var_f)
        self.history = None  # per-epoch losses, attached by training

    def branch_logits(self, features):
        features = np.ascontiguousarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.rl.feature_dim:
            raise ShapeError(
                f"features {features.shape} do not match feature_dim {self.rl.feature_dim}"
            )
        out_rl = self.rl.logits_array(features)
        out_fl = counterfactual_transform_array(
            self.fl.logits_array(features), self.params.effective_a(), self.params.c_value()
        )
        return out_fl, out_rl

    def predict(self, features):
        """Fused prediction; ties resolve to the lowest class index."""
        out_fl, out_rl = self.branch_logits(features)
        fused = fuse(out_fl, out_rl, self.var_r, self.var_f)
        return np.argmax(fused, axis=1), fused

    def to_dict(self):
        return {
            "variant": self.variant,
            "classifier_rl": self.rl.to_dict(),
            "classifier_fl": self.fl.to_dict(),
            "counterfactual": self.params.to_dict(),
            "var_r": self.var_r,
            "var_f": self.var_f,
        }

    @classmethod
    def from_dict(cls, d):
        bundle = cls(
            LinearClassifier.from_dict(d["classifier_rl"]),
            LinearClassifier.from_dict(d["classifier_fl"]),
            CounterfactualParams.from_dict(d["counterfactual"]),
            d["var_r"],
            d["var_f"],
        )
        return bundle

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class BaselineBundle:
    """Single confounded classifier trained on real seen plus fake unseen."""

    variant = "baseline"

    def __init__(self, classifier):
        self.classifier = classifier
        self.history = None

    def predict(self, features):
        logits = self.classifier.logits_array(
            np.ascontiguousarray(features, dtype=np.float64)
        )
        return np.argmax(logits, axis=1), logits

    def to_dict(self):
        return {"variant": self.variant, "classifier": self.classifier.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(LinearClassifier.from_dict(d["classifier"]))


def _check_finite(value, term, epoch):
    if not np.isfinite(value):
        raise TrainingDivergedError(f"{term} loss became non-finite at epoch {epoch}")


def train_counterfactual(
    dataset,
    fake_source,
    epochs,
    classifier_opt=None,
    counterfactual_opt=None,
    batch_size=64,
    fake_samples_per_class=None,
    seed=0,
):
    """Train both branches and the correction scalars.

    Each epoch: (1) the real branch steps on real seen batches, with its
    cross-entropy restricted to the seen logit columns (it is trained
    only on seen classes; its unseen columns stay at initialization);
    (2) the fake branch steps on freshly sampled fake features for every
    class, through the logit correction; (3) the fused output steps both
    branches plus the correction scalars on real seen batches. Batch
    variances enter the fusion as constants; their running means are
    frozen into the returned bundle for test-time fusion.
    """
    if classifier_opt is None:
        classifier_opt = OptimizerSpec()
    if counterfactual_opt is None:
        counterfactual_opt = OptimizerSpec(weight_decay=0.0)
    rng_shuffle = substream(seed, "training.shuffle")
    rng_fake = substream(seed, "training.fake")
    rng_init = substream(seed, "training.init")

    X, y = dataset.train_arrays()
    n, l = dataset.n_classes, dataset.feature_dim
    if fake_samples_per_class is None:
        fake_samples_per_class = max(2, X.shape[0] // max(n, 1))
    rl = LinearClassifier(l, n, rng_init)
    fl = LinearClassifier(l, n, rng_init)
    params = CounterfactualParams()
    all_params = rl.parameters() + fl.parameters() + params.parameters()
    all_ids = list(range(n))
    seen = dataset.seen_ids
    seen_idx = np.asarray(seen, dtype=np.intp)
    seen_pos = np.full(n, -1, dtype=np.int64)
    seen_pos[seen_idx] = np.arange(len(seen))
    var_r_avg, var_f_avg = _RunningMean(), _RunningMean()
    history = {"real": [], "fake": [], "fusion": [], "total": []}

    for epoch in range(epochs):
        fake = fake_source.sample(all_ids, fake_samples_per_class, rng_fake)

        real_total, count = 0.0, 0
        for idx in minibatch_indices(X.shape[0], batch_size, rng_shuffle):
            zero_grad(rl.parameters())
            logits_seen = ad.take_cols(rl.logits(X[idx]), seen_idx)
            loss = ad.softmax_cross_entropy(logits_seen, seen_pos[y[idx]])
            _check_finite(loss.item(), "real-branch", epoch)
            loss.backward()
            step(rl.parameters(), classifier_opt)
            real_total += loss.item() * len(idx)
            count += len(idx)
        history["real"].append(real_total / count)

        fake_total, count = 0.0, 0
        for idx in minibatch_indices(fake.features.shape[0], batch_size, rng_shuffle):
            zero_grad(fl.parameters() + params.parameters())
            out = counterfactual_transform(fl.logits(fake.features[idx]), params)
            loss = ad.softmax_cross_entropy(out, fake.class_ids[idx])
            _check_finite(loss.item(), "fake-branch", epoch)
            loss.backward()
            step(fl.parameters(), classifier_opt)
            fake_total += loss.item() * len(idx)
            count += len(idx)
        history["fake"].append(fake_total / count)

        var_f = batch_variance(fake.features)
        var_f_avg.update(var_f)
        fusion_total, count = 0.0, 0
        for idx in minibatch_indices(X.shape[0], batch_size, rng_shuffle):
            var_r = batch_variance(X[idx])
            var_r_avg.update(var_r)
            zero_grad(all_params)
            out_rl = rl.logits(X[idx])
            out_fl = counterfactual_transform(fl.logits(X[idx]), params)
            fused = fuse_tensors(out_fl, out_rl, var_r, var_f)
            loss = ad.softmax_cross_entropy(fused, y[idx])
            _check_finite(loss.item(), "fusion", epoch)
            loss.backward()
            step(rl.parameters(), classifier_opt)
            step(fl.parameters(), classifier_opt)
            step(params.parameters(), counterfactual_opt)
            params.project()
            fusion_total += loss.item() * len(idx)
            count += len(idx)
        history["fusion"].append(fusion_total / count)
        history["total"].append(
            history["real"][-1] + history["fake"][-1] + history["fusion"][-1]
        )

    bundle = CounterfactualBundle(rl, fl, params, var_r_avg.mean, var_f_avg.mean)
    bundle.history = history
    return bundle


def train_baseline(
    dataset,
    fake_source,
    epochs,
    classifier_opt=None,
    batch_size=64,
    fake_samples_per_class=None,
    seed=0,
):
    """Confounded control: one classifier on real seen plus fake unseen features."""
    if classifier_opt is None:
        classifier_opt = OptimizerSpec()
    rng_shuffle = substream(seed, "training.shuffle")
    rng_fake = substream(seed, "training.fake")
    rng_init = substream(seed, "training.init")

    X, y = dataset.train_arrays()
    n, l = dataset.n_classes, dataset.feature_dim
    if fake_samples_per_class is None:
        fake_samples_per_class = max(2, X.shape[0] // max(n, 1))
    clf = LinearClassifier(l, n, rng_init)
    unseen = sorted(dataset.unseen_ids)
    history = {"total": []}
    for epoch in range(epochs):
        if unseen:
            fake = fake_source.sample(unseen, fake_samples_per_class, rng_fake)
            Xall = np.vstack([X, fake.features])
            yall = np.concatenate([y, fake.class_ids])
        else:
            Xall, yall = X, y
        total, count = 0.0, 0
        for idx in minibatch_indices(Xall.shape[0], batch_size, rng_shuffle):
            zero_grad(clf.parameters())
            loss = ad.softmax_cross_entropy(clf.logits(Xall[idx]), yall[idx])
            _check_finite(loss.item(), "baseline", epoch)
            loss.backward()
            step(clf.parameters(), classifier_opt)
            total += loss.item() * len(idx)
            count += len(idx)
        history["total"].append(total / count)
    bundle = BaselineBundle(clf)
    bundle.history = history
    return bundle


def evaluate_bundle(bundle, dataset):
    """Confusion-based metrics of a trained bundle on the test split."""
    X, y = dataset.test_arrays()
    preds, _ = bundle.predict(X)
    conf = confusion(preds, y, dataset.n_classes)
    return report(conf, dataset.unseen_ids)
