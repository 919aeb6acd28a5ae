"""Small tanh MLP classifier with analytic backpropagation"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from ..errors import ValidationError


class Objective(str, Enum):
    """Loss an attack ascends"""
    CE = "ce"
    # KL(reference || model(x)), the inner objective of TRADES
    KL = "kl"


@dataclass(frozen=True, eq=False)
class ToyModel:
    """Fully connected layers z = a @ W + b with tanh between them"""
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValidationError("model needs one bias per weight matrix and at least one layer")
        width = self.weights[0].shape[0]
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or w.shape[0] != width or b.shape != (w.shape[1],):
                raise ValidationError(f"inconsistent shapes {w.shape} / {b.shape}", f"layer {layer}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError("non-finite parameters", f"layer {layer}")
            w.setflags(write=False)
            b.setflags(write=False)
            width = w.shape[1]

    @property
    def sizes(self) -> List[int]:
        return [int(self.weights[0].shape[0])] + [int(w.shape[1]) for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def n_classes(self) -> int:
        return self.sizes[-1]

    @classmethod
    def initialize(cls, sizes: Sequence[int], seed: int = 0) -> "ToyModel":
        """Gaussian weights scaled by 1/sqrt(fan_in), zero biases"""
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValidationError(f"invalid layer sizes {list(sizes)}")
        rng = np.random.default_rng(seed)
        weights = tuple(
            rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
        )
        return cls(weights, tuple(np.zeros(n) for n in sizes[1:]))

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "ToyModel":
        return cls(
            tuple(np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])),
            tuple(np.zeros(n) for n in sizes[1:]),
        )

    def parameters(self) -> List[np.ndarray]:
        """[W0, b0, W1, b1, ...]"""
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def with_parameters(self, params: Sequence[np.ndarray]) -> "ToyModel":
        params = [np.array(p, dtype=np.float64) for p in params]
        return ToyModel(tuple(params[0::2]), tuple(params[1::2]))


def as_batch(model: ToyModel, x) -> np.ndarray:
    batch = np.asarray(x, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != model.input_dim:
        raise ValidationError(f"input of shape {np.shape(x)} does not match model input dim {model.input_dim}")
    if not np.all(np.isfinite(batch)):
        raise ValidationError("input contains non-finite values", f"row {int(np.argwhere(~np.isfinite(batch))[0][0])}")
    return batch


def activations(model: ToyModel, x: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    """Layer inputs [x, h1, ...] and the output logits"""
    acts = [x]
    a = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        a = np.tanh(a @ w + b)
        acts.append(a)
    return acts, a @ model.weights[-1] + model.biases[-1]


def forward(model: ToyModel, x) -> np.ndarray:
    """Class probabilities; a single input gives a single vector"""
    single = np.ndim(x) == 1
    _, z = activations(model, as_batch(model, x))
    probs = softmax(z, axis=1)
    return probs[0] if single else probs


def predict(model: ToyModel, x) -> np.ndarray:
    """Most probable class, ties to the lowest index"""
    _, z = activations(model, as_batch(model, x))
    return np.argmax(z, axis=1)


def embed(model: ToyModel, x) -> np.ndarray:
    """Penultimate-layer activations (the inputs for a model without hidden layers)"""
    acts, _ = activations(model, as_batch(model, x))
    return acts[-1]


def one_hot(y: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), y] = 1.0
    return out


def backward(
    model: ToyModel,
    acts: List[np.ndarray],
    dz: np.ndarray,
    need_params: bool = True,
) -> Tuple[Optional[List[np.ndarray]], np.ndarray]:
    """Gradients of a scalar loss given dL/dlogits: ([dW0, db0, ...], dL/dx)"""
    grads: List[np.ndarray] = []
    delta = dz
    for layer in range(len(model.weights) - 1, -1, -1):
        if need_params:
            grads.append(delta.sum(axis=0))
            grads.append(acts[layer].T @ delta)
        upstream = delta @ model.weights[layer].T
        if layer > 0:
            delta = upstream * (1.0 - acts[layer] ** 2)
    grads.reverse()
    return (grads if need_params else None), upstream


def input_grad(
    model: ToyModel,
    x,
    y,
    objective: Objective = Objective.CE,
    reference: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Gradient w.r.t. each input row of that row's own loss"""
    batch = as_batch(model, x)
    acts, z = activations(model, batch)
    probs = softmax(z, axis=1)
    if Objective(objective) == Objective.CE:
        dz = probs - one_hot(np.atleast_1d(np.asarray(y, dtype=np.int64)), model.n_classes)
    else:
        if reference is None:
            raise ValidationError("KL objective needs reference probabilities")
        dz = probs - np.atleast_2d(reference)
    _, dx = backward(model, acts, dz, need_params=False)
    return dx[0] if np.ndim(x) == 1 else dx
