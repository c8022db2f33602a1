"""ADAM with a 1/sqrt(t) step-size schedule, and early stopping.

The update follows the variant used here verbatim: eta_t = eta/sqrt(t),
a first-moment rate that can decay geometrically (beta1_t = beta1 *
lam**(t-1)), bias correction by 1 - beta1**t / 1 - beta2**t, and epsilon
placed inside the square root, w -= eta_t * mhat / sqrt(vhat + eps).
With lam = 1 and constant_eta this reduces to textbook ADAM.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError


@dataclass(frozen=True)
class AdamConfig:
    eta: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    lam: float = 1.0  # decay factor for beta1_t; 1.0 disables the decay
    epsilon: float = 1e-8
    constant_eta: bool = False  # use eta_t = eta instead of eta/sqrt(t)

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if not 0 < self.lam <= 1:
            raise ConfigError(f"lam must lie in (0, 1], got {self.lam}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, tensors):
        return cls(
            m={k: np.zeros_like(a) for k, a in tensors.items()},
            v={k: np.zeros_like(a) for k, a in tensors.items()},
        )


def adam_step(state, params, grads, config):
    """One ADAM update over every tensor in ``params`` (mutated in place).

    ``params`` is a key -> array mapping (e.g. UNetParams.flat()) and
    ``grads`` must carry the same keys. Returns (state, params).
    """
    if set(grads) != set(params):
        raise TrainingError("gradient keys do not match parameter keys")
    state.t += 1
    t = state.t
    beta1_t = config.beta1 * config.lam ** (t - 1)
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    eta_t = config.eta if config.constant_eta else config.eta / np.sqrt(t)
    for key, w in params.items():
        g = grads[key]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {key!r}")
        dt = w.dtype.type
        m = state.m[key]
        v = state.v[key]
        m *= dt(beta1_t)
        m += dt(1.0 - beta1_t) * g
        v *= dt(config.beta2)
        v += dt(1.0 - config.beta2) * np.square(g)
        mhat = m / dt(bc1)
        vhat = v / dt(bc2)
        w -= dt(eta_t) * mhat / np.sqrt(vhat + dt(config.epsilon))
    return state, params


@dataclass
class EarlyStopController:
    """Stops after `patience` consecutive epochs without strict improvement."""

    patience: int = 10
    best_metric: float = field(default=-np.inf)
    epochs_since_improvement: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")

    def should_stop(self, validation_metric):
        """Record one epoch's higher-is-better metric; True means stop now."""
        if validation_metric > self.best_metric:
            self.best_metric = validation_metric
            self.epochs_since_improvement = 0
            return False
        self.epochs_since_improvement += 1
        return self.epochs_since_improvement >= self.patience

    def to_dict(self):
        return {
            "patience": self.patience,
            "best_metric": self.best_metric,
            "epochs_since_improvement": self.epochs_since_improvement,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)
