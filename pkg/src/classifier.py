"""
One-hidden-layer classifier used as the federated global model.

Parameters live in a single flat float64 vector so that model updates are
plain vectors of length z. Forward and backward passes run in torch on views
of that vector.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DimensionError, DivergenceError

logger = logging.getLogger(__name__)

DTYPE = torch.float64


@dataclass(frozen=True)
class ModelSpec:
    """Architecture input_dim -> hidden_dim (tanh) -> classes (softmax)."""
    input_dim: int = 2
    hidden_dim: int = 16
    classes: int = 2

    @property
    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [
            ("w1", (self.hidden_dim, self.input_dim)),
            ("b1", (self.hidden_dim,)),
            ("w2", (self.classes, self.hidden_dim)),
            ("b2", (self.classes,)),
        ]

    @property
    def size(self) -> int:
        """Number of parameters z."""
        return sum(int(np.prod(shape)) for _, shape in self.shapes)


@dataclass
class GlobalModel:
    """Architecture plus flattened parameter vector."""
    spec: ModelSpec
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64).reshape(-1)
        if self.params.shape[0] != self.spec.size:
            raise DimensionError(
                f"parameter vector has length {self.params.shape[0]}, expected {self.spec.size}"
            )

    @classmethod
    def initialize(cls, spec: ModelSpec, rng: np.random.Generator) -> "GlobalModel":
        """Glorot-uniform weights, zero biases."""
        parts = []
        for name, shape in spec.shapes:
            if name.startswith("w"):
                fan_out, fan_in = shape
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                parts.append(rng.uniform(-limit, limit, size=shape).reshape(-1))
            else:
                parts.append(np.zeros(shape).reshape(-1))
        return cls(spec=spec, params=np.concatenate(parts))

    def copy(self) -> "GlobalModel":
        return GlobalModel(spec=self.spec, params=self.params.copy())

    @property
    def size(self) -> int:
        return self.spec.size

    def unflatten(self) -> dict[str, np.ndarray]:
        return unflatten(self.spec, self.params)


def unflatten(spec: ModelSpec, params: np.ndarray) -> dict[str, np.ndarray]:
    layers = {}
    offset = 0
    for name, shape in spec.shapes:
        count = int(np.prod(shape))
        layers[name] = params[offset:offset + count].reshape(shape)
        offset += count
    return layers


def flatten(spec: ModelSpec, layers: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(layers[name], dtype=np.float64).reshape(-1) for name, _ in spec.shapes])


def _forward(spec: ModelSpec, flat: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
    offset = 0
    views = {}
    for name, shape in spec.shapes:
        count = int(np.prod(shape))
        views[name] = flat[offset:offset + count].view(shape)
        offset += count
    hidden = torch.tanh(features @ views["w1"].T + views["b1"])
    return hidden @ views["w2"].T + views["b2"]


def loss_and_grad(
    spec: ModelSpec,
    params: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
) -> tuple[float, np.ndarray]:
    """
    Mean softmax cross-entropy over the batch and its gradient w.r.t. params.

    Raises DivergenceError if the loss is not finite.
    """
    flat = torch.tensor(params, dtype=DTYPE, requires_grad=True)
    x = torch.as_tensor(np.asarray(features, dtype=np.float64), dtype=DTYPE)
    y = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    loss = F.cross_entropy(_forward(spec, flat, x), y)
    value = float(loss.item())
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite training loss {value}", stage="local_update")
    loss.backward()
    return value, flat.grad.detach().numpy().copy()


def loss(spec: ModelSpec, params: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
    with torch.no_grad():
        flat = torch.as_tensor(np.asarray(params, dtype=np.float64), dtype=DTYPE)
        x = torch.as_tensor(np.asarray(features, dtype=np.float64), dtype=DTYPE)
        y = torch.as_tensor(np.asarray(labels, dtype=np.int64))
        return float(F.cross_entropy(_forward(spec, flat, x), y).item())


def predict(model: GlobalModel, features: np.ndarray) -> np.ndarray:
    """Predicted class per row."""
    with torch.no_grad():
        flat = torch.as_tensor(model.params, dtype=DTYPE)
        x = torch.as_tensor(np.asarray(features, dtype=np.float64), dtype=DTYPE)
        logits = _forward(model.spec, flat, x)
    return logits.argmax(dim=1).numpy()


def accuracy(model: GlobalModel, features: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict(model, features) == np.asarray(labels)))
