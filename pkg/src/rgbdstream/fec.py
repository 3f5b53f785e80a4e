"""Systematic Reed-Solomon erasure coding over GF(2^8) and the selective
protection policy: I-frames get parity shards, P-frame headers get duplicated.

The field uses the primitive polynomial 0x11D and a Vandermonde-derived
systematic generator, so parity bytes are bit-exact reproducible across
implementations.  Shard counts never exceed 255.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .frames import FrameKind

_PRIM_POLY = 0x11D
_FIELD = 256


def _build_tables():
    exp = np.zeros(2 * _FIELD, dtype=np.uint8)
    log = np.zeros(_FIELD, dtype=np.int32)
    x = 1
    for i in range(_FIELD - 1):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= _PRIM_POLY
    exp[_FIELD - 1:2 * _FIELD - 2] = exp[:_FIELD - 1]
    mul = np.zeros((_FIELD, _FIELD), dtype=np.uint8)
    a = np.arange(1, _FIELD)
    mul[1:, 1:] = exp[(log[a][:, None] + log[a][None, :]) % 255]
    return exp, log, mul


_EXP, _LOG, _MUL = _build_tables()


def gf_mul(a: int, b: int) -> int:
    return int(_MUL[a, b])


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("no inverse of 0 in GF(2^8)")
    return int(_EXP[255 - _LOG[a]])


def _gf_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over GF(2^8); operands are uint8 2-D arrays."""
    prod = _MUL[a[:, :, None], b[None, :, :]]
    return np.bitwise_xor.reduce(prod, axis=1)


def _gf_inv_matrix(m: np.ndarray) -> np.ndarray:
    """Gauss-Jordan inversion over GF(2^8)."""
    n = m.shape[0]
    aug = np.concatenate((m.copy(), np.eye(n, dtype=np.uint8)), axis=1)
    for col in range(n):
        pivot = col + int(np.argmax(aug[col:, col] != 0))
        if aug[pivot, col] == 0:
            raise ValueError("singular matrix")
        if pivot != col:
            aug[[col, pivot]] = aug[[pivot, col]]
        aug[col] = _MUL[gf_inv(int(aug[col, col])), aug[col]]
        for row in range(n):
            if row != col and aug[row, col]:
                aug[row] ^= _MUL[int(aug[row, col]), aug[col]]
    return aug[:, n:]


@lru_cache(maxsize=256)
def _generator_matrix(n: int, r: int) -> np.ndarray:
    """(n+r) x n systematic generator: identity on top, parity rows below."""
    points = np.arange(n + r, dtype=np.uint8)
    vand = np.zeros((n + r, n), dtype=np.uint8)
    vand[:, 0] = 1
    for j in range(1, n):
        vand[:, j] = _MUL[vand[:, j - 1], points]
    top_inv = _gf_inv_matrix(vand[:n])
    gen = _gf_matmul(vand, top_inv)
    assert (gen[:n] == np.eye(n, dtype=np.uint8)).all()
    return gen


class UnrecoverableError(Exception):
    """Fewer than n shards survive; the data cannot be reconstructed."""


@dataclass
class ShardSet:
    n: int
    r: int
    shard_len: int
    data_len: int
    shards: list[bytes | None]     # length n+r; None marks an erased shard
    present: list[bool]

    def __post_init__(self):
        if self.n < 1 or self.r < 0:
            raise ValueError("need n >= 1, r >= 0")
        if self.n + self.r > _FIELD - 1:
            raise ValueError("n+r must be <= 255")

    @property
    def n_present(self) -> int:
        return sum(self.present)


def rs_encode(data: bytes, n: int, r: int, shard_len: int | None = None) -> ShardSet:
    """Split `data` into n data shards and append r parity shards.

    Systematic: shards 0..n-1 are the data split verbatim (last shard
    zero-padded to shard_len).
    """
    if n + r > _FIELD - 1:
        raise ValueError("n+r must be <= 255 for GF(2^8)")
    if n < 1:
        raise ValueError("n must be >= 1")
    if shard_len is None:
        shard_len = max(1, math.ceil(len(data) / n))
    if n * shard_len < len(data):
        raise ValueError("n*shard_len too small for data")
    padded = np.frombuffer(data.ljust(n * shard_len, b"\x00"), dtype=np.uint8)
    mat = padded.reshape(n, shard_len)
    shards = [mat[i].tobytes() for i in range(n)]
    if r:
        gen = _generator_matrix(n, r)[n:]
        parity = np.zeros((r, shard_len), dtype=np.uint8)
        for i in range(r):
            acc = parity[i]
            for j in range(n):
                acc ^= _MUL[gen[i, j]][mat[j]]
        shards.extend(parity[i].tobytes() for i in range(r))
    return ShardSet(n=n, r=r, shard_len=shard_len, data_len=len(data),
                    shards=shards, present=[True] * (n + r))


def rs_reconstruct(s: ShardSet) -> bytes:
    """Recover the original data from any n present shards."""
    if s.n_present < s.n:
        raise UnrecoverableError("only %d of %d required shards present"
                                 % (s.n_present, s.n))
    if all(s.present[:s.n]):
        # systematic fast path: no field arithmetic on the data path
        return b"".join(s.shards[:s.n])[:s.data_len]
    idx = [i for i in range(s.n + s.r) if s.present[i]][:s.n]
    gen = _generator_matrix(s.n, s.r)
    sub = gen[idx]
    inv = _gf_inv_matrix(sub)
    received = np.stack([np.frombuffer(s.shards[i], dtype=np.uint8) for i in idx])
    out = np.zeros((s.n, s.shard_len), dtype=np.uint8)
    for i in range(s.n):
        acc = out[i]
        for j in range(s.n):
            if inv[i, j]:
                acc ^= _MUL[inv[i, j]][received[j]]
    return out.reshape(-1).tobytes()[:s.data_len]


def max_tolerable_loss(n: int, r: int) -> float:
    """Highest loss rate at which every shard pattern is still recoverable."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return r / (n + r)


class ProtectionMode(str, enum.Enum):
    REVO = "revo"
    L3_ONLY = "l3_only"
    L7_ONLY = "l7_only"
    REACTIVE = "reactive"
    NONE = "none"

    @property
    def l3_enabled(self) -> bool:
        return self in (ProtectionMode.REVO, ProtectionMode.L3_ONLY,
                        ProtectionMode.REACTIVE)

    @property
    def l7_enabled(self) -> bool:
        return self in (ProtectionMode.REVO, ProtectionMode.L7_ONLY)


@dataclass(frozen=True)
class ProtectionPolicy:
    i_parity_ratio: float = 0.5
    p_header_copies: int = 2
    mode: ProtectionMode = ProtectionMode.REVO

    def __post_init__(self):
        if not 0.0 <= self.i_parity_ratio <= 1.0:
            raise ValueError("i_parity_ratio must be in [0, 1]")
        if self.p_header_copies < 1:
            raise ValueError("p_header_copies must be >= 1")


@dataclass(frozen=True)
class ShardPlan:
    n: int
    r: int
    header_copies: int
    shard_len: int


# reactive-FEC quantization levels (WebRTC-default baseline)
REACTIVE_LEVELS = (0.0, 0.5, 1.0)


def reactive_ratio(observed_loss: float) -> float:
    """Quantize an observed loss rate to the nearest reactive redundancy level."""
    return min(REACTIVE_LEVELS, key=lambda lv: abs(lv - observed_loss))


def plan_protection(kind: FrameKind, encoded_len: int, policy: ProtectionPolicy,
                    payload_len: int, header_len: int = 0,
                    reactive_observed_loss: float | None = None) -> ShardPlan:
    """Decide the shard layout for one encoded frame.

    I-frames: n = ceil(encoded_len/payload_len) data shards plus
    r = ceil(ratio*n) parity shards.  P-frames: shard 0 is the codec header
    (header_len bytes), transmitted `p_header_copies` times; body shards are
    unprotected.
    """
    if encoded_len <= 0:
        raise ValueError("encoded frame is empty")
    mode = policy.mode
    if kind == FrameKind.I:
        if not mode.l3_enabled:
            ratio = 0.0
        elif mode == ProtectionMode.REACTIVE:
            ratio = reactive_ratio(reactive_observed_loss or 0.0)
        else:
            ratio = policy.i_parity_ratio
        # RS over GF(2^8) caps n+r at 255; large frames take bigger shards
        shard_len = payload_len
        while True:
            n = math.ceil(encoded_len / shard_len)
            r = math.ceil(ratio * n)
            if n + r <= _FIELD - 1:
                break
            shard_len *= 2
        return ShardPlan(n=n, r=r, header_copies=1, shard_len=shard_len)
    body_len = encoded_len - header_len
    n = 1 + math.ceil(body_len / payload_len) if body_len > 0 else 1
    # only the full cross-layer mode duplicates P headers; l3_only and the
    # reactive baseline send P-frames best effort
    copies = policy.p_header_copies if mode == ProtectionMode.REVO else 1
    return ShardPlan(n=n, r=0, header_copies=copies, shard_len=payload_len)
