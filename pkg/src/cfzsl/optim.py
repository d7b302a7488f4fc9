"""Optimizers and the finite-difference gradient oracle."""

from dataclasses import dataclass, field

import numpy as np

from cfzsl import kernels as K
from cfzsl.errors import ConfigError, TrainingDivergedError

# Relative-error floor: gradients below this magnitude are compared in
# absolute terms, so err < 1e-4 there means |analytic - numeric| < 1e-7.
_REL_FLOOR = 1e-3


@dataclass
class OptimizerSpec:
    """Hyperparameters for one optimizer instance."""

    kind: str = "sgd_momentum"
    learning_rate: float = 7e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "adam"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        # learning_rate == 0 is allowed: the step is then the identity.
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")

    def to_dict(self):
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "adam_betas": list(self.adam_betas),
            "adam_eps": self.adam_eps,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)


def zero_grad(params):
    for p in params:
        p.grad = None


def step(params, spec: OptimizerSpec):
    """Advance every parameter in place; missing gradients count as zero."""
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if spec.kind == "sgd_momentum":
            buf = p.state.get("momentum_buf")
            if buf is None:
                buf = p.state["momentum_buf"] = np.zeros_like(p.data)
            K.sgd_momentum_update(
                p.data, g, buf, spec.learning_rate, spec.momentum, spec.weight_decay
            )
        else:
            m = p.state.get("adam_m")
            if m is None:
                m = p.state["adam_m"] = np.zeros_like(p.data)
                p.state["adam_v"] = np.zeros_like(p.data)
                p.state["adam_t"] = 0
            v = p.state["adam_v"]
            p.state["adam_t"] += 1
            b1, b2 = spec.adam_betas
            K.adam_update(
                p.data, g, m, v, p.state["adam_t"],
                spec.learning_rate, b1, b2, spec.adam_eps, spec.weight_decay,
            )


def finite_difference_check(fn, params, h=1e-5):
    """Max error between the engine gradient and central differences.

    ``fn`` rebuilds the scalar loss from the current parameter values. The
    returned error is relative except for near-zero gradients, where the
    ``_REL_FLOOR`` denominator turns it into a scaled absolute error.
    """
    if h <= 0:
        raise ConfigError("finite difference step h must be > 0")
    loss = fn()
    if not np.isfinite(loss.data).all():
        raise TrainingDivergedError("non-finite loss in finite_difference_check")
    zero_grad(params)
    loss.backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.ravel()
        ga_flat = ga.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn().item()
            flat[i] = orig - h
            f_minus = fn().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise TrainingDivergedError("non-finite loss while perturbing")
            g_fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(g_fd - ga_flat[i]) / max(abs(g_fd), abs(ga_flat[i]), _REL_FLOOR)
            worst = max(worst, err)
    return worst
