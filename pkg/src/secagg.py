"""
Additive-mask secure aggregation over Z_p with fixed-point encoding.

Each participant adds a key vector to its encoded update; keys of one round
sum to zero modulo p, so the server learns the sum of updates and nothing
else. Key agreement is simulated in-process by a trusted dealer.
"""
import logging
import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .config import DEFAULT_FIXED_POINT_BITS, MAX_FIELD_BITS
from .errors import DimensionError, FieldOverflowError, IncompleteMaskSetError

logger = logging.getLogger(__name__)

_HEADER = ">iiQI"  # round, client_id, modulus, length
_HEADER_SIZE = struct.calcsize(_HEADER)


@dataclass
class MaskedUpdate:
    """Ciphertext Enc_K(x) = x + K mod p of one client for one round."""
    client_id: int
    round_index: int
    modulus: int
    ciphertext: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.ciphertext = np.asarray(self.ciphertext, dtype=np.int64).reshape(-1)
        if np.any(self.ciphertext < 0) or np.any(self.ciphertext >= self.modulus):
            raise ValueError(f"ciphertext of client {self.client_id} leaves [0, {self.modulus})")

    def to_bytes(self) -> bytes:
        """Length-prefixed big-endian encoding."""
        return (
            struct.pack(_HEADER, self.round_index, self.client_id, self.modulus, self.ciphertext.shape[0])
            + self.ciphertext.astype(">i8").tobytes()
        )

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> tuple["MaskedUpdate", int]:
        round_index, client_id, modulus, length = struct.unpack(_HEADER, data[offset:offset + _HEADER_SIZE])
        offset += _HEADER_SIZE
        end = offset + 8 * length
        if end > len(data):
            raise DimensionError(f"masked update of client {client_id} truncated")
        values = np.frombuffer(data[offset:end], dtype=">i8").astype(np.int64)
        return cls(client_id=client_id, round_index=round_index, modulus=modulus, ciphertext=values), end


@dataclass
class MaskSet:
    """Per-client keys of one round; they sum to zero mod p."""
    round_index: int
    modulus: int
    keys: dict[int, np.ndarray]

    @property
    def participants(self) -> list[int]:
        return sorted(self.keys)


def _check_modulus(p: int) -> None:
    if p < 2:
        raise ValueError(f"modulus must be at least 2, got {p}")
    if p & (p - 1):
        raise ValueError(f"modulus must be a power of two, got {p}")
    if p > 1 << MAX_FIELD_BITS:
        raise ValueError(f"modulus above 2^{MAX_FIELD_BITS} overflows int64 sums")


def field_size_for(max_abs: float, participants: int, scale: float) -> int:
    """Smallest power of two holding a sum of `participants` encoded values of magnitude max_abs."""
    largest = int(np.rint(scale * abs(max_abs)))
    required = 2 * largest * max(participants, 1) + 1
    p = max(2, 1 << max(1, (required - 1).bit_length()))
    if p > 1 << MAX_FIELD_BITS:
        raise FieldOverflowError(required, 1 << MAX_FIELD_BITS)
    return p


def generate_masks(
    participants: Sequence[int],
    z: int,
    p: int,
    seed,
    round_index: int = 0,
) -> MaskSet:
    """Uniform keys for all but the last participant, whose key cancels the rest."""
    _check_modulus(p)
    participants = sorted(participants)
    if not participants:
        raise ValueError("mask set needs at least one participant")
    rng = np.random.default_rng(seed)
    keys: dict[int, np.ndarray] = {}
    running = np.zeros(z, dtype=np.int64)
    for client_id in participants[:-1]:
        key = rng.integers(0, p, size=z, dtype=np.int64)
        keys[client_id] = key
        running = (running + key) % p
    keys[participants[-1]] = (-running) % p
    return MaskSet(round_index=round_index, modulus=p, keys=keys)


def encode_fixed_point(update, scale: float, p: int, participants: int = 1) -> np.ndarray:
    """
    round(scale * x) mod p, negatives wrapped two's-complement style.

    Raises FieldOverflowError when a sum over `participants` such values could wrap.
    """
    _check_modulus(p)
    values = np.asarray(update, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise DimensionError("cannot encode non-finite update")
    integers = np.rint(scale * values).astype(np.int64)
    largest = int(np.max(np.abs(integers))) if integers.size else 0
    required = 2 * largest * max(participants, 1) + 1
    if required > p:
        raise FieldOverflowError(required, p)
    return np.mod(integers, p)


def decode_fixed_point(values, scale: float, p: int) -> np.ndarray:
    """Map [p/2, p) back to negatives and undo the scaling."""
    values = np.mod(np.asarray(values, dtype=np.int64), p)
    signed = np.where(values >= p // 2, values - p, values)
    return signed.astype(np.float64) / scale


def mask(encoded: np.ndarray, masks: MaskSet, client_id: int) -> MaskedUpdate:
    key = masks.keys[client_id]
    encoded = np.asarray(encoded, dtype=np.int64)
    if encoded.shape != key.shape:
        raise DimensionError(f"encoded update has shape {encoded.shape}, key has {key.shape}")
    return MaskedUpdate(
        client_id=client_id,
        round_index=masks.round_index,
        modulus=masks.modulus,
        ciphertext=(encoded + key) % masks.modulus,
    )


def aggregate_masked(masked: Sequence[MaskedUpdate], participants: Sequence[int]) -> np.ndarray:
    """
    Sum ciphertexts mod p. Keys cancel only over the complete participant set,
    so a missing participant is an error rather than a garbage sum.
    """
    if not masked:
        raise IncompleteMaskSetError(sorted(participants), -1)
    round_index = masked[0].round_index
    p = masked[0].modulus
    received = {update.client_id for update in masked}
    missing = sorted(set(participants) - received)
    if missing:
        raise IncompleteMaskSetError(missing, round_index)
    for update in masked:
        if update.round_index != round_index or update.modulus != p:
            raise ValueError(f"masked update of client {update.client_id} belongs to another round or field")

    total = np.zeros_like(masked[0].ciphertext)
    for update in sorted(masked, key=lambda item: item.client_id):
        total = (total + update.ciphertext) % p
    return total


def secure_sum(
    updates: Mapping[int, np.ndarray],
    round_index: int,
    seed,
    scale: float = float(1 << DEFAULT_FIXED_POINT_BITS),
) -> np.ndarray:
    """Encode, mask, aggregate and decode one round; returns the float sum."""
    total, _ = masked_round(updates, round_index, seed, scale)
    return total


def masked_round(
    updates: Mapping[int, np.ndarray],
    round_index: int,
    seed,
    scale: float = float(1 << DEFAULT_FIXED_POINT_BITS),
) -> tuple[np.ndarray, list[MaskedUpdate]]:
    """Like secure_sum but also returns the ciphertexts for archiving."""
    participants = sorted(updates)
    z = int(np.asarray(updates[participants[0]]).shape[0])
    max_abs = max(float(np.max(np.abs(updates[i]))) for i in participants)
    p = field_size_for(max_abs, len(participants), scale)
    masks = generate_masks(participants, z, p, seed, round_index=round_index)
    masked = [
        mask(encode_fixed_point(updates[i], scale, p, len(participants)), masks, i)
        for i in participants
    ]
    total = aggregate_masked(masked, participants)
    logger.debug(f"Round {round_index}: securely summed {len(participants)} updates in Z_{p}")
    return decode_fixed_point(total, scale, p), masked


def pack_round(masked: Sequence[MaskedUpdate]) -> bytes:
    """Count-prefixed concatenation of a round's ciphertexts."""
    return struct.pack(">I", len(masked)) + b"".join(update.to_bytes() for update in masked)


def unpack_round(data: bytes) -> list[MaskedUpdate]:
    (count,) = struct.unpack(">I", data[:4])
    offset = 4
    masked = []
    for _ in range(count):
        update, offset = MaskedUpdate.from_bytes(data, offset)
        masked.append(update)
    return masked
