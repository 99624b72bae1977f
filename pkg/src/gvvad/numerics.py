"""Small dense-math kernel: matvec, stable activations, BCE, Adam, seeding.

Everything runs on plain numpy arrays in float64. All randomness in the
package flows through ``seed_sequence``: tokens (ints and strings) are hashed
into the key of a counter-based generator, so any intermediate sample can be
regenerated in isolation from its tokens.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ShapeError, ValidationError

# Smallest/largest float64 strictly inside (0, 1); sigmoid outputs are clamped
# here so downstream logs never see exact 0 or 1.
_SIGMOID_FLOOR = float(np.nextafter(0.0, 1.0))
_SIGMOID_CEIL = float(np.nextafter(1.0, 0.0))


def seed_sequence(*tokens: int | str) -> np.random.SeedSequence:
    """Hash a list of int/str tokens into a numpy SeedSequence."""
    digest = hashlib.sha256()
    for tok in tokens:
        if isinstance(tok, (bool, np.bool_, np.integer)):
            tok = int(tok)
        if isinstance(tok, int):
            digest.update(b"i")
            digest.update(tok.to_bytes(16, "little", signed=True))
        elif isinstance(tok, str):
            data = tok.encode("utf-8")
            digest.update(b"s")
            digest.update(len(data).to_bytes(4, "little"))
            digest.update(data)
        else:
            raise TypeError(f"seed tokens must be int or str, got {type(tok).__name__}")
    words = np.frombuffer(digest.digest(), dtype="<u4")
    return np.random.SeedSequence([int(w) for w in words])


def rng_from(*tokens: int | str) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by the token hash."""
    return np.random.Generator(np.random.Philox(seed_sequence(*tokens)))


def derived_int_seed(*tokens: int | str) -> int:
    """A single 63-bit integer seed derived from the tokens."""
    return int(seed_sequence(*tokens).generate_state(1, np.uint64)[0] >> 1)


def linear_forward(weights: np.ndarray, bias: np.ndarray, x: np.ndarray) -> np.ndarray:
    """weights @ x + bias with explicit shape checking."""
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if weights.ndim != 2:
        raise ShapeError(f"weights must be 2-D, got shape {weights.shape}")
    if x.ndim != 1 or bias.ndim != 1:
        raise ShapeError(f"bias and input must be 1-D, got {bias.shape} and {x.shape}")
    if weights.shape[1] != x.shape[0]:
        raise ShapeError(f"weights {weights.shape} cannot multiply input {x.shape}")
    if bias.shape[0] != weights.shape[0]:
        raise ShapeError(f"bias {bias.shape} does not match weights {weights.shape}")
    out = weights @ x + bias
    if not np.all(np.isfinite(out)):
        raise ValidationError("linear_forward produced non-finite values")
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def stable_sigmoid(x):
    """Numerically stable logistic, clamped strictly inside (0, 1).

    Uses the two-branch formulation (1/(1+exp(-x)) for x >= 0, else
    exp(x)/(1+exp(x))) so no exp ever overflows; saturated outputs are nudged
    off exact 0/1 so log-losses stay finite.
    """
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    np.clip(out, _SIGMOID_FLOOR, _SIGMOID_CEIL, out=out)
    return float(out[0]) if scalar else out


def bce(y: int, y_hat: float, clamp_eps: float = 1e-7) -> float:
    """Binary cross-entropy with the prediction clamped to [eps, 1-eps]."""
    if y not in (0, 1):
        raise ValidationError(f"label must be 0 or 1, got {y!r}")
    if not 0.0 < clamp_eps < 0.5:
        raise ValidationError(f"clamp_eps must be in (0, 0.5), got {clamp_eps}")
    p = min(max(float(y_hat), clamp_eps), 1.0 - clamp_eps)
    if y == 1:
        return -math.log(p)
    return -math.log1p(-p)


@dataclass
class AdamState:
    """Adam state with decoupled weight decay over a dict of parameter arrays.

    Moment buffers are created lazily on the first step and afterwards must
    keep matching the parameter shapes.
    """

    lr: float = 0.001
    weight_decay: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """One Adam update; returns the new params and advances ``state`` in place.

    Weight decay is decoupled: each parameter first shrinks by lr * wd, then
    the moment update is applied, so decay never enters the moment estimates.
    Bias correction uses the post-increment step count.
    """
    if set(params) != set(grads):
        raise ShapeError(f"param keys {sorted(params)} != grad keys {sorted(grads)}")
    for key, p in params.items():
        if key not in state.first_moment:
            if state.step == 0:
                state.first_moment[key] = np.zeros_like(np.asarray(p, dtype=np.float64))
                state.second_moment[key] = np.zeros_like(np.asarray(p, dtype=np.float64))
            else:
                raise ShapeError(f"no moment state for parameter {key!r}")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    out = {}
    for key, p in params.items():
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(grads[key], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"grad {key!r} has shape {g.shape}, param has {p.shape}")
        m = state.first_moment[key]
        v = state.second_moment[key]
        if m.shape != p.shape:
            raise ShapeError(f"moment {key!r} has shape {m.shape}, param has {p.shape}")
        p = p - state.lr * state.weight_decay * p
        m[...] = state.beta1 * m + (1.0 - state.beta1) * g
        v[...] = state.beta2 * v + (1.0 - state.beta2) * g * g
        out[key] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


def finite_diff_grad(f: Callable[[np.ndarray], float], theta: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function at ``theta``."""
    if h <= 0:
        raise ValidationError(f"step size must be positive, got {h}")
    theta = np.array(theta, dtype=np.float64, copy=True)
    grad = np.zeros_like(theta)
    flat = theta.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(theta))
        flat[i] = orig - h
        f_minus = float(f(theta))
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad
