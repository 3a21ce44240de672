"""Out-of-sample hashing and Hamming-space ranking.

Codes are stored as ``{-1, +1}`` float/int matrices.  The packed form puts
bit ``j`` of a code in word ``j // 64`` at bit position ``j % 64`` (``+1`` is
a set bit), so distances reduce to XOR plus popcount.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import AttributeMatrix
from .encoder import EncoderParams, encode_features
from .errors import DatasetError, ParseError, ShapeError
from .trainer import least_squares_category, sign_codes

WORD_BITS = 64
PACKED_MAGIC = b"CZHC"
PACKED_VERSION = 1


def pack_codes(codes: np.ndarray) -> np.ndarray:
    """``(n, b)`` +-1 codes -> ``(n, ceil(b/64))`` uint64 words."""
    codes = np.atleast_2d(codes)
    n, b = codes.shape
    words = -(-b // WORD_BITS)
    bits = np.zeros((n, words * WORD_BITS), dtype=np.uint8)
    bits[:, :b] = codes > 0
    packed = np.packbits(bits, axis=1, bitorder="little")
    return packed.view("<u8").reshape(n, words).astype(np.uint64)


def unpack_codes(packed: np.ndarray, b: int) -> np.ndarray:
    packed = np.ascontiguousarray(np.atleast_2d(packed), dtype="<u8")
    bits = np.unpackbits(packed.view(np.uint8), axis=1, bitorder="little")[:, :b]
    return np.where(bits == 1, 1, -1).astype(np.int8)


@dataclass(frozen=True, eq=False)
class HashCodes:
    codes: np.ndarray
    packed: np.ndarray

    @classmethod
    def from_codes(cls, codes) -> "HashCodes":
        codes = np.atleast_2d(np.asarray(codes))
        if not np.isin(codes, (-1, 1)).all():
            raise ValueError("codes must only contain -1 and +1")
        return cls(codes.astype(np.int8), pack_codes(codes))

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def bits(self) -> int:
        return self.codes.shape[1]


def hamming_distance(u, v) -> int:
    """Number of positions where two +-1 codes differ, via packed popcount."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ShapeError(f"code length mismatch: {u.shape} vs {v.shape}")
    x = np.bitwise_xor(pack_codes(u.reshape(1, -1)), pack_codes(v.reshape(1, -1)))
    return int(np.bitwise_count(x).sum())


def hamming_matrix(query_packed: np.ndarray, db_packed: np.ndarray) -> np.ndarray:
    """All pairwise distances between packed query rows and database rows."""
    if query_packed.shape[1] != db_packed.shape[1]:
        raise ShapeError("packed widths differ")
    out = np.zeros((query_packed.shape[0], db_packed.shape[0]), dtype=np.int64)
    for w in range(query_packed.shape[1]):
        x = np.bitwise_xor(query_packed[:, w, None], db_packed[None, :, w])
        out += np.bitwise_count(x)
    return out


class HammingIndex:
    """Linear-scan index over packed database codes."""

    def __init__(self, codes: HashCodes, ids: Sequence[int] | None = None):
        if codes.n == 0:
            raise ValueError("cannot index an empty code set")
        ids = np.arange(codes.n) if ids is None else np.asarray(ids)
        if ids.shape != (codes.n,):
            raise ShapeError("one id per database code is required")
        self.codes = codes
        # rows sorted by id so a stable sort on distance breaks ties by id
        order = np.argsort(ids, kind="stable")
        self._ids = ids[order]
        self._packed = codes.packed[order]

    @property
    def ids(self) -> np.ndarray:
        return self._ids

    def distances(self, query_codes) -> np.ndarray:
        q = pack_codes(np.atleast_2d(query_codes))
        return hamming_matrix(q, self._packed)

    def rank(self, query_codes, k: int | None = None) -> np.ndarray:
        """Ranked ids for each query row, ascending distance then ascending id."""
        dist = self.distances(query_codes)
        order = np.argsort(dist, axis=1, kind="stable")
        if k is not None:
            order = order[:, :k]
        return self._ids[order]


def retrieve(index: HammingIndex, query_code, k: int | None = None) -> list[int]:
    return index.rank(np.asarray(query_code).reshape(1, -1), k)[0].tolist()


def encode(
    params: EncoderParams,
    attrs: AttributeMatrix | np.ndarray,
    w: np.ndarray,
    x: np.ndarray,
    ridge: float = 1e-8,
) -> np.ndarray:
    """Codes for feature rows ``x``: encoder, least-squares category space, sign."""
    a = attrs.vectors if isinstance(attrs, AttributeMatrix) else np.asarray(attrs, float)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if a.shape[0] != w.shape[0]:
        raise ShapeError(f"W has {w.shape[0]} rows but there are {a.shape[0]} categories")
    f = encode_features(params, x)
    if f.shape[1] != a.shape[1]:
        raise ShapeError(f"encoder outputs {f.shape[1]} dims, attributes have {a.shape[1]}")
    c = least_squares_category(f, a, ridge)
    return sign_codes(c @ w).astype(np.int8)


def encode_query(params, attrs, w, x, ridge: float = 1e-8) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("encode_query takes a single feature vector")
    return encode(params, attrs, w, x[None, :], ridge)[0]


# ---------------------------------------------------------------------------
# export


def save_codes_text(path, codes) -> None:
    codes = np.atleast_2d(codes)
    with open(path, "w", encoding="utf-8") as fh:
        for row in codes:
            fh.write(" ".join("1" if x > 0 else "-1" for x in row) + "\n")


def load_codes_text(path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        toks = line.split()
        if any(t not in ("1", "-1") for t in toks):
            raise ParseError("code entries must be 1 or -1", path, lineno)
        if rows and len(toks) != len(rows[0]):
            raise ParseError("rows have differing code lengths", path, lineno)
        rows.append([int(t) for t in toks])
    return np.array(rows, dtype=np.int8)


def save_codes_packed(path, codes) -> None:
    """Header ``CZHC``, version u32, n u64, b u32, word bits u32; then LE u64 words."""
    hc = HashCodes.from_codes(codes)
    with open(path, "wb") as fh:
        fh.write(PACKED_MAGIC)
        fh.write(struct.pack("<IQII", PACKED_VERSION, hc.n, hc.bits, WORD_BITS))
        fh.write(hc.packed.astype("<u8").tobytes())


def load_codes_packed(path) -> HashCodes:
    data = Path(path).read_bytes()
    head = 4 + struct.calcsize("<IQII")
    if len(data) < head or data[:4] != PACKED_MAGIC:
        raise DatasetError(f"{path} is not a packed czhash code file")
    version, n, b, word = struct.unpack("<IQII", data[4:head])
    if version != PACKED_VERSION or word != WORD_BITS:
        raise DatasetError(f"unsupported packed code file (version {version}, word {word})")
    words = -(-b // WORD_BITS)
    body = np.frombuffer(data[head:], dtype="<u8")
    if body.size != n * words:
        raise DatasetError(f"{path}: expected {n * words} words, found {body.size}")
    packed = body.reshape(n, words).astype(np.uint64)
    return HashCodes(unpack_codes(packed, b), packed)
