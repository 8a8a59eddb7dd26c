"""
Federated averaging simulator.

Each round a fraction C of the N clients is sampled, every participant runs
one local SGD pass from the current global model, malicious participants
modify their update, and the server only learns the aggregate

    b_r = sum_i A[r, i] * dw_r^i

(through secure aggregation when enabled). The model then moves by b_r / k
with k = round(C * N) participants.

What the server sees is kept in AttackerView. Per-client updates go to a
separate GroundTruthArchive that only test oracles read.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .classifier import GlobalModel, ModelSpec, loss_and_grad
from .config import DEFAULT_FIXED_POINT_BITS, WORKERS, ClientRole, PropertyKind
from .data import ClientDataset
from .errors import DimensionError, DivergenceError
from .secagg import MaskedUpdate, masked_round

logger = logging.getLogger(__name__)

# Sub-stream tags for np.random.SeedSequence entropy
_PARTICIPATION_STREAM = 0
_CLIENT_STREAM = 1
_MASK_STREAM = 2


@dataclass
class ParticipationMatrix:
    """Binary rounds x clients matrix A with a fixed number of participants per row."""
    entries: np.ndarray
    fraction: float

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2:
            raise DimensionError(f"participation matrix must be 2-D, got shape {self.entries.shape}")

    @property
    def rounds(self) -> int:
        return int(self.entries.shape[0])

    @property
    def clients(self) -> int:
        return int(self.entries.shape[1])

    def participants(self, round_index: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.entries[round_index])]

    def rounds_of(self, client_id: int) -> list[int]:
        """R(i): rounds in which the client took part."""
        return [int(r) for r in np.flatnonzero(self.entries[:, client_id])]

    def prefix(self, rounds: int) -> "ParticipationMatrix":
        return ParticipationMatrix(entries=self.entries[:rounds], fraction=self.fraction)


def participants_per_round(clients: int, fraction: float) -> int:
    """k = round(C * N), halves rounded up."""
    return int(np.floor(fraction * clients + 0.5))


def sample_participation(rounds: int, clients: int, fraction: float, seed) -> ParticipationMatrix:
    """Draw each row uniformly among the size-k subsets of the clients."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"participation fraction must lie in (0, 1], got {fraction}")
    k = participants_per_round(clients, fraction)
    if k < 1:
        raise ValueError(f"C * N = {fraction * clients} selects no client per round")
    if rounds < 1:
        raise ValueError("need at least one round")

    rng = np.random.default_rng(seed)
    entries = np.zeros((rounds, clients))
    for r in range(rounds):
        entries[r, rng.choice(clients, size=k, replace=False)] = 1.0
    return ParticipationMatrix(entries=entries, fraction=fraction)


def local_update(
    model: GlobalModel,
    data: ClientDataset,
    eta: float,
    epochs: int = 1,
    batch_size: int = 10,
    seed=None,
    ascent: bool = False,
) -> np.ndarray:
    """
    Run mini-batch SGD on a copy of the model and return dw = w_after - w_before.

    With ascent=True every step moves along +eta * grad (loss maximisation).
    """
    if eta <= 0:
        raise ValueError(f"learning rate must be positive, got {eta}")
    rng = np.random.default_rng(seed)
    params = model.params.copy()
    sign = 1.0 if ascent else -1.0
    size = len(data)
    batch_size = max(1, min(batch_size, size))

    for _ in range(epochs):
        order = rng.permutation(size)
        for start in range(0, size, batch_size):
            batch = order[start:start + batch_size]
            _, grad = loss_and_grad(model.spec, params, data.features[batch], data.labels[batch])
            params = params + sign * eta * grad

    if not np.all(np.isfinite(params)):
        raise DivergenceError(f"client {data.client_id} produced non-finite parameters", stage="local_update")
    return params - model.params


def apply_attack(
    update: np.ndarray,
    role: ClientRole,
    model: GlobalModel,
    data: ClientDataset,
    eta: float,
    epochs: int = 1,
    batch_size: int = 10,
    seed=None,
) -> np.ndarray:
    """Inversion sends -dw, ascent redoes the local pass with flipped steps, everyone else is unchanged."""
    if role is ClientRole.INVERSION_ATTACKER:
        return -update
    if role is ClientRole.ASCENT_ATTACKER:
        return local_update(model, data, eta, epochs, batch_size, seed, ascent=True)
    return update


def assign_roles(clients: int, positives: int, kind: PropertyKind, rng: np.random.Generator) -> list[ClientRole]:
    """Pick `positives` clients uniformly and give them the role matching the property."""
    if not 0 <= positives <= clients:
        raise ValueError(f"cannot plant {positives} positives among {clients} clients")
    positive_role = {
        PropertyKind.MEMBERSHIP: ClientRole.MEMBER,
        PropertyKind.INVERSION: ClientRole.INVERSION_ATTACKER,
        PropertyKind.ASCENT: ClientRole.ASCENT_ATTACKER,
    }[kind]
    roles = [ClientRole.HONEST] * clients
    for client_id in rng.choice(clients, size=positives, replace=False):
        roles[int(client_id)] = positive_role
    return roles


def plant_target(
    datasets: Sequence[ClientDataset],
    roles: Sequence[ClientRole],
    target_x: np.ndarray,
    target_y: int,
) -> list[ClientDataset]:
    """Insert the fixed target sample into every member's data, keeping sizes equal."""
    return [
        data.with_sample(target_x, target_y) if role is ClientRole.MEMBER else data
        for data, role in zip(datasets, roles)
    ]


@dataclass
class FederationSettings:
    rounds: int
    clients: int
    fraction: float
    eta: float
    epochs: int = 1
    batch_size: int = 10
    secure_aggregation: bool = True
    fixed_point_bits: int = DEFAULT_FIXED_POINT_BITS
    keep_ciphertexts: bool = False
    workers: int = WORKERS


@dataclass
class RoundRecord:
    """One observed round: model before it, who took part, and the aggregate."""
    round_index: int
    aggregate: np.ndarray = field(repr=False)
    snapshot: GlobalModel = field(repr=False)
    participants: tuple[int, ...]


class AttackerView:
    """
    Everything the server observes: A, aggregates b_r, model snapshots and
    participant ids. No per-client update is reachable from here.
    """

    def __init__(self, spec: ModelSpec, participation: ParticipationMatrix, records: Sequence[RoundRecord]):
        if len(records) > participation.rounds:
            raise DimensionError(f"{len(records)} records for {participation.rounds} rounds")
        self.spec = spec
        self.participation = participation
        self.records = list(records)

    @property
    def rounds(self) -> int:
        return len(self.records)

    @property
    def clients(self) -> int:
        return self.participation.clients

    @property
    def A(self) -> np.ndarray:
        return self.participation.entries[:self.rounds]

    @property
    def aggregates(self) -> np.ndarray:
        """n x z matrix B of observed aggregates."""
        return np.vstack([record.aggregate for record in self.records])

    def snapshot(self, round_index: int) -> GlobalModel:
        return self.records[round_index].snapshot

    def prefix(self, rounds: int) -> "AttackerView":
        """View restricted to the first `rounds` rounds."""
        return AttackerView(self.spec, self.participation.prefix(rounds), self.records[:rounds])

    def to_payload(self) -> dict[str, np.ndarray]:
        return {
            "participation": self.A,
            "fraction": np.array(self.participation.fraction),
            "aggregates": self.aggregates,
            "snapshots": np.vstack([record.snapshot.params for record in self.records]),
            "participants": np.array([record.participants for record in self.records], dtype=np.int64),
            "model_spec": np.array([self.spec.input_dim, self.spec.hidden_dim, self.spec.classes], dtype=np.int64),
        }

    def save(self, path: Path) -> None:
        np.savez_compressed(path, **self.to_payload())

    @classmethod
    def load(cls, path: Path) -> "AttackerView":
        with np.load(path) as payload:
            spec = ModelSpec(*(int(v) for v in payload["model_spec"]))
            participation = ParticipationMatrix(entries=payload["participation"], fraction=float(payload["fraction"]))
            records = [
                RoundRecord(
                    round_index=r,
                    aggregate=payload["aggregates"][r].copy(),
                    snapshot=GlobalModel(spec=spec, params=payload["snapshots"][r].copy()),
                    participants=tuple(int(i) for i in payload["participants"][r]),
                )
                for r in range(payload["aggregates"].shape[0])
            ]
        return cls(spec, participation, records)


class GroundTruthArchive:
    """Per-client updates and roles; for test oracles and evaluation only."""

    def __init__(self, roles: Sequence[ClientRole]):
        self.roles = list(roles)
        self._updates: dict[int, dict[int, np.ndarray]] = {}

    def record(self, round_index: int, updates: dict[int, np.ndarray]) -> None:
        self._updates[round_index] = {i: updates[i].copy() for i in sorted(updates)}

    def client_update(self, round_index: int, client_id: int) -> np.ndarray:
        return self._updates[round_index][client_id]

    def round_updates(self, round_index: int) -> dict[int, np.ndarray]:
        return self._updates[round_index]

    def round_sum(self, round_index: int) -> np.ndarray:
        updates = self._updates[round_index]
        return np.sum([updates[i] for i in sorted(updates)], axis=0)

    @property
    def labels(self) -> np.ndarray:
        return np.array([role.is_positive for role in self.roles], dtype=np.int64)

    def save(self, path: Path) -> None:
        payload = {"roles": np.array([role.value for role in self.roles])}
        for r, updates in self._updates.items():
            payload[f"round_{r:04d}_ids"] = np.array(sorted(updates), dtype=np.int64)
            payload[f"round_{r:04d}_updates"] = np.vstack([updates[i] for i in sorted(updates)])
        np.savez_compressed(path, **payload)

    @classmethod
    def load(cls, path: Path) -> "GroundTruthArchive":
        with np.load(path) as payload:
            archive = cls([ClientRole(value) for value in payload["roles"]])
            for key in payload.files:
                if key.endswith("_ids"):
                    r = int(key.split("_")[1])
                    ids = payload[key]
                    rows = payload[f"round_{r:04d}_updates"]
                    archive._updates[r] = {int(i): rows[j].copy() for j, i in enumerate(ids)}
        return archive


@dataclass
class FederationResult:
    view: AttackerView
    truth: GroundTruthArchive
    final_model: GlobalModel
    ciphertexts: dict[int, list[MaskedUpdate]] = field(default_factory=dict)


def _client_update(
    model: GlobalModel,
    data: ClientDataset,
    role: ClientRole,
    settings: FederationSettings,
    seed: np.random.SeedSequence,
) -> np.ndarray:
    if role is ClientRole.ASCENT_ATTACKER:
        return apply_attack(None, role, model, data, settings.eta, settings.epochs, settings.batch_size, seed)
    update = local_update(model, data, settings.eta, settings.epochs, settings.batch_size, seed)
    return apply_attack(update, role, model, data, settings.eta, settings.epochs, settings.batch_size, seed)


def run_federation(
    settings: FederationSettings,
    initial_model: GlobalModel,
    datasets: Sequence[ClientDataset],
    roles: Sequence[ClientRole],
    seed: int,
    participation: Optional[ParticipationMatrix] = None,
) -> FederationResult:
    """
    Simulate all rounds of FedAvg.

    Returns the attacker view, the ground-truth archive and the final model.
    """
    if len(datasets) != settings.clients or len(roles) != settings.clients:
        raise DimensionError(
            f"{settings.clients} clients configured, got {len(datasets)} datasets and {len(roles)} roles"
        )
    if participation is None:
        participation = sample_participation(
            settings.rounds, settings.clients, settings.fraction, [seed, _PARTICIPATION_STREAM]
        )

    model = initial_model.copy()
    truth = GroundTruthArchive(roles)
    records: list[RoundRecord] = []
    ciphertexts: dict[int, list[MaskedUpdate]] = {}
    scale = float(1 << settings.fixed_point_bits)
    executor = ThreadPoolExecutor(max_workers=settings.workers) if settings.workers > 1 else None

    logger.info(
        f"Simulating {settings.rounds} rounds, {settings.clients} clients, "
        f"{participants_per_round(settings.clients, settings.fraction)} per round, z={model.size}"
    )
    try:
        for r in range(settings.rounds):
            chosen = participation.participants(r)
            jobs = {
                i: (model, datasets[i], roles[i], settings, np.random.SeedSequence([seed, _CLIENT_STREAM, r, i]))
                for i in chosen
            }
            if executor is None:
                updates = {i: _client_update(*args) for i, args in jobs.items()}
            else:
                futures = {i: executor.submit(_client_update, *args) for i, args in jobs.items()}
                updates = {i: futures[i].result() for i in chosen}

            if settings.secure_aggregation:
                aggregate, masked = masked_round(updates, r, [seed, _MASK_STREAM, r], scale)
                if settings.keep_ciphertexts:
                    ciphertexts[r] = masked
            else:
                aggregate = np.zeros(model.size)
                for i in sorted(updates):
                    aggregate = aggregate + updates[i]

            truth.record(r, updates)
            records.append(RoundRecord(round_index=r, aggregate=aggregate, snapshot=model.copy(), participants=tuple(chosen)))

            params = model.params + aggregate / len(chosen)
            if not np.all(np.isfinite(params)):
                raise DivergenceError(f"global model became non-finite in round {r}", stage="aggregate")
            model = GlobalModel(spec=model.spec, params=params)
            logger.debug(f"Round {r}: {len(chosen)} participants, |b_r| = {np.linalg.norm(aggregate):.4g}")
    except DivergenceError as exc:
        logger.error(f"Federation aborted: {exc}")
        raise
    finally:
        if executor is not None:
            executor.shutdown()

    return FederationResult(
        view=AttackerView(model.spec, participation, records),
        truth=truth,
        final_model=model,
        ciphertexts=ciphertexts,
    )
