"""Dense numeric substrate: named parameter slots, the small set of
operations the model needs, the Adam optimizer, and a central-difference
gradient checker.

Everything is float64.  Gradients for the model are hand-derived elsewhere;
this module only provides the carriers and the verification tooling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit as sigmoid  # numerically stable logistic

from .errors import NumericError, ShapeError

__all__ = [
    "ParameterStore", "GradientStore", "sigmoid", "affine", "mean_pool",
    "softmax", "softmax_over_subset", "nll_from_scores", "Adam", "adam_step",
    "FdCheckResult", "finite_difference_check", "assert_all_finite",
]


def assert_all_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


class ParameterStore:
    """Named float64 slots with a fixed shape signature and deterministic order."""

    def __init__(self, slots: Mapping[str, np.ndarray]):
        self._slots: dict[str, np.ndarray] = {}
        for name, arr in slots.items():
            self._slots[name] = np.asarray(arr, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._slots

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._slots[name]
        except KeyError:
            raise ShapeError(f"unknown slot {name!r}") from None

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        current = self[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != current.shape:
            raise ShapeError(
                f"slot {name!r}: expected shape {current.shape}, got {value.shape}")
        self._slots[name] = value

    def names(self) -> list[str]:
        return list(self._slots)

    def items(self):
        return self._slots.items()

    def shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self._slots.items()}

    @property
    def total_size(self) -> int:
        return sum(v.size for v in self._slots.values())

    def zeros_like(self) -> "ParameterStore":
        return ParameterStore({k: np.zeros_like(v) for k, v in self._slots.items()})

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self._slots.items()})

    def _require_congruent(self, other: "ParameterStore") -> None:
        if self.shapes() != other.shapes():
            ours, theirs = self.shapes(), other.shapes()
            for k in set(ours) | set(theirs):
                if ours.get(k) != theirs.get(k):
                    raise ShapeError(
                        f"slot {k!r}: shapes {ours.get(k)} vs {theirs.get(k)}")

    def accumulate(self, other: "ParameterStore", scale: float = 1.0) -> None:
        self._require_congruent(other)
        for k, v in self._slots.items():
            v += scale * other._slots[k]

    def scale(self, alpha: float) -> None:
        for v in self._slots.values():
            v *= alpha

    def fill(self, value: float) -> None:
        for v in self._slots.values():
            v.fill(value)

    def squared_l2(self) -> float:
        return float(sum(np.dot(v.ravel(), v.ravel()) for v in self._slots.values()))

    def flat_coordinate(self, k: int) -> tuple[str, tuple]:
        """Map a flat coordinate in [0, total_size) to (slot name, multi-index)."""
        if not (0 <= k < self.total_size):
            raise IndexError(k)
        for name, arr in self._slots.items():
            if k < arr.size:
                return name, np.unravel_index(k, arr.shape)
            k -= arr.size
        raise AssertionError("unreachable")

    def check_finite(self) -> None:
        for name, arr in self._slots.items():
            assert_all_finite(f"slot {name!r}", arr)


# Gradients share the carrier: same slot names and shapes as their parameters.
GradientStore = ParameterStore


def affine(W: np.ndarray, x_index: int, u_terms: Iterable[tuple[np.ndarray, np.ndarray]],
           bias: np.ndarray) -> np.ndarray:
    """Pre-activation of one gate: W[:, x_index] + sum_i U_i @ v_i + bias.

    The node feature is a one-hot id vector, so the W term reduces to a
    column lookup.
    """
    d = W.shape[0]
    if bias.shape != (d,):
        raise ShapeError(f"bias: expected shape ({d},), got {bias.shape}")
    if not (0 <= x_index < W.shape[1]):
        raise ShapeError(f"one-hot index {x_index} out of range for W {W.shape}")
    out = W[:, x_index] + bias
    for i, (U, v) in enumerate(u_terms):
        if U.shape != (d, v.shape[0]):
            raise ShapeError(f"U_term {i}: U {U.shape} incompatible with v {v.shape}")
        out = out + U @ v
    return out


def mean_pool(vectors: Sequence[np.ndarray], dim: int) -> np.ndarray:
    """Elementwise mean; the empty collection pools to the zero vector."""
    if len(vectors) == 0:
        return np.zeros(dim)
    for i, v in enumerate(vectors):
        if v.shape != (dim,):
            raise ShapeError(f"vector {i}: expected shape ({dim},), got {v.shape}")
    return np.mean(vectors, axis=0)


def softmax(values: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over a 1-d array."""
    shifted = values - np.max(values)
    e = np.exp(shifted)
    return e / e.sum()


def softmax_over_subset(scores: Mapping[int, float], subset) -> dict[int, float]:
    """Probability of each subset member under a softmax of its score."""
    nodes = sorted(subset)
    if not nodes:
        raise ValueError("softmax over an empty subset")
    try:
        vals = np.array([scores[v] for v in nodes], dtype=np.float64)
    except KeyError as exc:
        raise ValueError(f"no score for node {exc.args[0]}") from None
    return dict(zip(nodes, softmax(vals)))


def nll_from_scores(scores: np.ndarray, target_pos: int) -> tuple[float, np.ndarray]:
    """(-log softmax(scores)[target], softmax(scores)) via a stable log-sum-exp."""
    m = np.max(scores)
    shifted = scores - m
    e = np.exp(shifted)
    z = e.sum()
    loss = float(np.log(z) - shifted[target_pos])
    return loss, e / z


def adam_step(params: ParameterStore, grads: GradientStore,
              moment1: ParameterStore, moment2: ParameterStore, step_count: int,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update applied in place to every slot."""
    if step_count < 1:
        raise ValueError("step_count must be >= 1")
    params._require_congruent(grads)
    bc1 = 1.0 - beta1 ** step_count
    bc2 = 1.0 - beta2 ** step_count
    for name, theta in params.items():
        g = grads[name]
        m = moment1[name]
        v = moment2[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class Adam:
    """Adam optimizer state bound to one ParameterStore layout."""

    def __init__(self, params: ParameterStore, lr: float = 1e-2,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.moment1 = params.zeros_like()
        self.moment2 = params.zeros_like()
        self.step_count = 0

    def step(self, params: ParameterStore, grads: GradientStore) -> None:
        self.step_count += 1
        adam_step(params, grads, self.moment1, self.moment2, self.step_count,
                  self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class FdCheckResult:
    max_rel_error: float
    worst_slot: str
    worst_index: tuple
    worst_analytic: float
    worst_numeric: float
    samples: int

    def __str__(self):
        return (f"max relative error {self.max_rel_error:.3e} at "
                f"{self.worst_slot}{list(self.worst_index)} "
                f"(analytic {self.worst_analytic:.6e}, "
                f"numeric {self.worst_numeric:.6e}, {self.samples} samples)")


def finite_difference_check(loss_fn: Callable[[ParameterStore], float],
                            params: ParameterStore, grads: GradientStore,
                            samples: int, h: float = 1e-5,
                            rng: np.random.Generator | None = None) -> FdCheckResult:
    """Compare analytic gradients against central differences.

    For ``samples`` randomly chosen parameter coordinates, perturbs the
    coordinate by +/- h, evaluates ``loss_fn`` and forms
    (loss(theta+h) - loss(theta-h)) / 2h.  Relative error is
    |a - n| / max(|a|, |n|, 1e-8); the maximum over samples is returned with
    the offending slot named.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if rng is None:
        rng = np.random.default_rng(0)
    total = params.total_size
    n = min(samples, total)
    coords = rng.choice(total, size=n, replace=False)

    result = FdCheckResult(-1.0, "", (), 0.0, 0.0, n)
    for k in coords:
        name, idx = params.flat_coordinate(int(k))
        arr = params[name]
        saved = arr[idx]
        arr[idx] = saved + h
        loss_plus = loss_fn(params)
        arr[idx] = saved - h
        loss_minus = loss_fn(params)
        arr[idx] = saved
        if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
            raise NumericError(f"non-finite loss while perturbing {name}{list(idx)}")
        numeric = (loss_plus - loss_minus) / (2.0 * h)
        analytic = float(grads[name][idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        if rel > result.max_rel_error:
            result.max_rel_error = rel
            result.worst_slot = name
            result.worst_index = tuple(int(i) for i in idx)
            result.worst_analytic = analytic
            result.worst_numeric = numeric
    return result
