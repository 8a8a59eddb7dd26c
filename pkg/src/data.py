"""Client datasets, the synthetic task and the split into client/auxiliary/evaluation pools."""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

logger = logging.getLogger(__name__)


@dataclass
class ClientDataset:
    """Local training data D_i of one client (also used for auxiliary batches)."""
    client_id: int
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise DimensionError(f"client {self.client_id} has no samples")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DimensionError(
                f"client {self.client_id}: {self.features.shape[0]} samples but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def with_sample(self, x: np.ndarray, y: int) -> "ClientDataset":
        """Copy with the last sample replaced, so the dataset size stays fixed."""
        features = self.features.copy()
        labels = self.labels.copy()
        features[-1] = x
        labels[-1] = y
        return ClientDataset(client_id=self.client_id, features=features, labels=labels)

    def contains(self, x: np.ndarray) -> bool:
        return bool(np.any(np.all(self.features == np.asarray(x)[None, :], axis=1)))


@dataclass
class TaskData:
    """Everything drawn for one experiment seed."""
    clients: list[ClientDataset]
    aux_features: np.ndarray
    aux_labels: np.ndarray
    eval_features: np.ndarray
    eval_labels: np.ndarray
    target_x: np.ndarray
    target_y: int
    input_dim: int
    classes: int


def gaussian_blobs(count: int, dim: int, separation: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two-class blobs: class c has mean (c - 0.5) * separation * u for a random unit u, unit covariance."""
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    labels = rng.integers(0, 2, size=count)
    means = (labels[:, None] - 0.5) * separation * direction[None, :]
    features = means + rng.normal(size=(count, dim))
    return features, labels.astype(np.int64)


def partition_task(
    features: np.ndarray,
    labels: np.ndarray,
    clients: int,
    local_size: int,
    aux_size: int,
    eval_size: int,
    rng: np.random.Generator,
    classes: int,
    target_label_flip: bool = False,
) -> TaskData:
    """
    Split a sample pool into disjoint client datasets, the auxiliary pool and
    an evaluation set, and set aside one target sample that appears nowhere else.
    """
    needed = clients * local_size + aux_size + eval_size + 1
    if features.shape[0] < needed:
        raise DimensionError(f"need {needed} samples for this split, pool has {features.shape[0]}")

    order = rng.permutation(features.shape[0])[:needed]
    target_index = order[0]
    cursor = 1

    datasets = []
    for client_id in range(clients):
        picked = order[cursor:cursor + local_size]
        cursor += local_size
        datasets.append(ClientDataset(client_id=client_id, features=features[picked], labels=labels[picked]))

    aux = order[cursor:cursor + aux_size]
    cursor += aux_size
    held_out = order[cursor:cursor + eval_size]

    target_y = int(labels[target_index])
    if target_label_flip:
        target_y = (target_y + 1) % classes

    return TaskData(
        clients=datasets,
        aux_features=features[aux],
        aux_labels=labels[aux],
        eval_features=features[held_out],
        eval_labels=labels[held_out],
        target_x=features[target_index].copy(),
        target_y=target_y,
        input_dim=int(features.shape[1]),
        classes=classes,
    )


def synthetic_task(
    clients: int,
    local_size: int,
    aux_size: int,
    eval_size: int,
    dim: int,
    separation: float,
    rng: np.random.Generator,
    target_label_flip: bool = False,
) -> TaskData:
    total = clients * local_size + aux_size + eval_size + 1
    features, labels = gaussian_blobs(total, dim, separation, rng)
    logger.debug(f"Drew {total} synthetic samples in {dim} dimensions (separation {separation})")
    return partition_task(
        features, labels, clients, local_size, aux_size, eval_size, rng,
        classes=2, target_label_flip=target_label_flip,
    )
