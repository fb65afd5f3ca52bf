"""Uplink codecs for client deltas, with exact wire-size accounting.

Structured codecs constrain the update while encoding (``low_rank``,
``random_mask``); sketched codecs compress a full update with an unbiased
randomized sketch (``subsample``, ``quantize``, ``rotate_quantize``).

Canonical serialization (all little-endian)::

    header      tag:u32  dim:u32  n_examples:u32  reserved:u32      16 bytes
    identity    dim * f64
    low_rank    round:u32 client:u32 rank:u32, factor entries * f64
    random_mask round:u32 client:u32 count:u32, count * f64
    subsample   round:u32 client:u32 count:u32, scale:f64, count * f64
    quantize    lo:f64 hi:f64, packed codes
    rotate_q    round:u32 client:u32, lo:f64 hi:f64, packed codes

The tag's low byte is the scheme id; for the two quantizers the next byte
holds the bit width. Packed codes are a b-bit stream, most significant bit
first within each byte, zero-padded to a byte boundary. Mask indices, random
bases and rotations are never sent: both ends rebuild them from the shared
run seed plus the transmitted (round, client) pair.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from . import params as pv
from .errors import CodecError, DimensionMismatchError
from .models import LayoutEntry
from .seeding import derive_seed

Kind = Literal["identity", "low_rank", "random_mask", "subsample", "quantize", "rotate_quantize"]

HEADER = struct.Struct("<IIII")
HEADER_BYTES = HEADER.size
SCHEME_IDS = {
    "identity": 1,
    "low_rank": 2,
    "random_mask": 3,
    "subsample": 4,
    "quantize": 5,
    "rotate_quantize": 6,
}
_KIND_BY_ID = {v: k for k, v in SCHEME_IDS.items()}


@dataclass(frozen=True)
class CompressionScheme:
    kind: Kind = "identity"
    rank: int | None = None
    keep_fraction: float | None = None
    bits: int | None = None

    def __post_init__(self):
        if self.kind not in SCHEME_IDS:
            raise CodecError(f"unknown compression scheme {self.kind!r}")
        if self.kind == "low_rank" and (self.rank is None or self.rank < 1):
            raise CodecError("low_rank needs rank >= 1")
        if self.kind in ("random_mask", "subsample"):
            s = self.keep_fraction
            if s is None or not 0 < s <= 1:
                raise CodecError(f"{self.kind} needs 0 < keep_fraction <= 1")
        if self.kind in ("quantize", "rotate_quantize"):
            if self.bits is None or not 1 <= self.bits <= 8:
                raise CodecError(f"{self.kind} needs 1 <= bits <= 8")

    @property
    def tag(self) -> int:
        return SCHEME_IDS[self.kind] | ((self.bits or 0) << 8)

    def __str__(self) -> str:
        arg = {"low_rank": self.rank, "random_mask": self.keep_fraction,
               "subsample": self.keep_fraction, "quantize": self.bits,
               "rotate_quantize": self.bits}.get(self.kind)
        return self.kind if arg is None else f"{self.kind}({arg})"


@dataclass(frozen=True)
class EncodedUpdate:
    scheme: CompressionScheme
    dim: int
    n_examples: int
    round: int = 0
    client_id: int = 0
    # shared run seed; known to both ends, never serialized
    seed: int = field(default=0, compare=False)
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    count: int = 0
    scale: float = 1.0
    lo: float = 0.0
    hi: float = 0.0
    codes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))

    @property
    def wire_bytes(self) -> int:
        return measure_bytes(self)


def keep_count(keep_fraction: float, dim: int) -> int:
    # tolerance absorbs products like 0.7 * 100 = 70.00000000000001
    return max(1, min(dim, math.ceil(keep_fraction * dim - 1e-9)))


def padded_dim(dim: int) -> int:
    return 1 << (dim - 1).bit_length()


# --- randomized Hadamard rotation -------------------------------------------

def fwht(x: np.ndarray) -> np.ndarray:
    """Orthonormal fast Walsh-Hadamard transform (Sylvester order); len(x) must be a power of two."""
    n = x.size
    if n & (n - 1):
        raise ValueError("fwht needs a power-of-two length")
    y = np.array(x, dtype=np.float64)
    h = 1
    while h < n:
        blocks = y.reshape(-1, 2, h)
        y = np.stack((blocks[:, 0] + blocks[:, 1], blocks[:, 0] - blocks[:, 1]), axis=1).reshape(n)
        h *= 2
    return y / math.sqrt(n)


def _rotation_signs(seed: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.choice(np.array([-1.0, 1.0]), size=n)


def rotate(x: np.ndarray, seed: int) -> np.ndarray:
    """Zero-pad to a power of two and apply H @ diag(signs)."""
    n = padded_dim(x.size)
    padded = np.zeros(n)
    padded[:x.size] = x
    return fwht(_rotation_signs(seed, n) * padded)


def unrotate(y: np.ndarray, seed: int, dim: int) -> np.ndarray:
    """Inverse of :func:`rotate`, truncated back to ``dim`` entries."""
    return (_rotation_signs(seed, y.size) * fwht(y))[:dim]


# --- stochastic quantization --------------------------------------------------

def _quantize(x: np.ndarray, bits: int, rng: np.random.Generator) -> tuple[float, float, np.ndarray]:
    lo, hi = float(x.min()), float(x.max())
    levels = (1 << bits) - 1
    if hi == lo:
        return lo, hi, np.zeros(x.size, dtype=np.uint8)
    pos = (x - lo) / (hi - lo) * levels
    base = np.clip(np.floor(pos), 0, levels)
    up = rng.random(x.size) < (pos - base)
    return lo, hi, np.minimum(base + up, levels).astype(np.uint8)


def _dequantize(lo: float, hi: float, codes: np.ndarray, bits: int) -> np.ndarray:
    t = codes.astype(np.float64) / ((1 << bits) - 1)
    # lerp form is exact at both endpoints
    return lo * (1.0 - t) + hi * t


def pack_codes(codes: np.ndarray, bits: int) -> bytes:
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint8)
    bitmat = (codes[:, None] >> shifts) & 1
    return np.packbits(bitmat.reshape(-1)).tobytes()


def unpack_codes(data: bytes, n: int, bits: int) -> np.ndarray:
    flat = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[: n * bits]
    if flat.size != n * bits:
        raise CodecError("packed code stream is shorter than expected")
    weights = (1 << np.arange(bits - 1, -1, -1)).astype(np.uint16)
    return (flat.reshape(n, bits) @ weights).astype(np.uint8)


# --- low rank -----------------------------------------------------------------

def _low_rank_basis(seed: int, entry: LayoutEntry, rank: int) -> np.ndarray:
    """Random Gaussian basis on the smaller side of the block, entries N(0, 1/rank)."""
    rng = np.random.default_rng(seed)
    small = min(entry.rows, entry.cols)
    if entry.rows >= entry.cols:
        return rng.standard_normal((rank, small)) / math.sqrt(rank)
    return rng.standard_normal((small, rank)) / math.sqrt(rank)


def _effective_rank(entry: LayoutEntry, rank: int) -> int:
    return min(rank, entry.rows, entry.cols)


def _low_rank_factor_size(layout: Sequence[LayoutEntry], rank: int) -> int:
    return sum(
        _effective_rank(e, rank) * max(e.rows, e.cols) if e.is_matrix else e.size
        for e in layout
    )


def _layout_seed(seed: int, round_: int, client_id: int, entry: LayoutEntry) -> int:
    return derive_seed(seed, "low_rank", round_, client_id, entry.name)


def _check_layout(layout: Sequence[LayoutEntry], dim: int) -> None:
    total = sum(e.size for e in layout)
    if total != dim:
        raise DimensionMismatchError(dim, total, "delta and parameter layout")


# --- public API ---------------------------------------------------------------

def encode(
    delta: pv.ParamVector,
    layout: Sequence[LayoutEntry],
    scheme: CompressionScheme,
    round: int = 0,
    client_id: int = 0,
    seed: int = 0,
    n_examples: int = 0,
    rng: np.random.Generator | None = None,
) -> EncodedUpdate:
    """Compress ``delta``.

    Stochastic rounding draws from ``rng`` when given, otherwise from a
    stream derived from (seed, round, client_id).
    """
    x = np.asarray(delta, dtype=np.float64)
    dim = x.size
    _check_layout(layout, dim)
    base = dict(scheme=scheme, dim=dim, n_examples=n_examples, round=round, client_id=client_id, seed=seed)
    kind = scheme.kind

    if kind == "identity":
        return EncodedUpdate(**base, values=x.copy())

    if kind == "low_rank":
        factors = []
        for e in layout:
            block = x[e.offset:e.offset + e.size]
            if not e.is_matrix:
                factors.append(block)
                continue
            w = block.reshape(e.rows, e.cols)
            r = _effective_rank(e, scheme.rank)
            b = _low_rank_basis(_layout_seed(seed, round, client_id, e), e, r)
            if e.rows >= e.cols:
                a = np.linalg.lstsq(b.T, w.T, rcond=None)[0].T  # rows x r
            else:
                a = np.linalg.lstsq(b, w, rcond=None)[0]  # r x cols
            factors.append(a.reshape(-1))
        # record the rank actually used, clamped to the largest matrix block
        sides = [min(e.rows, e.cols) for e in layout if e.is_matrix]
        used = min(scheme.rank, max(sides)) if sides else scheme.rank
        return EncodedUpdate(**base, values=np.concatenate(factors), count=used)

    if kind in ("random_mask", "subsample"):
        k = keep_count(scheme.keep_fraction, dim)
        idx = _mask_indices(seed, round, client_id, dim, k)
        enc_scale = dim / k if kind == "subsample" else 1.0
        return EncodedUpdate(**base, values=x[idx].copy(), count=k, scale=enc_scale)

    if rng is None:
        rng = np.random.default_rng(derive_seed(seed, "quantize", round, client_id))
    if kind == "quantize":
        lo, hi, codes = _quantize(x, scheme.bits, rng)
    else:
        lo, hi, codes = _quantize(rotate(x, derive_seed(seed, "rotate", round, client_id)), scheme.bits, rng)
    return EncodedUpdate(**base, lo=lo, hi=hi, codes=codes)


def _mask_indices(seed: int, round_: int, client_id: int, dim: int, k: int) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed, "mask", round_, client_id))
    return np.sort(rng.choice(dim, size=k, replace=False))


def decode(enc: EncodedUpdate, layout: Sequence[LayoutEntry]) -> pv.ParamVector:
    dim, kind = enc.dim, enc.scheme.kind
    _check_layout(layout, dim)

    if kind == "identity":
        if enc.values.size != dim:
            raise CodecError(f"identity payload has {enc.values.size} values, expected {dim}")
        return pv.freeze(np.array(enc.values, dtype=np.float64))

    if kind == "low_rank":
        expected = _low_rank_factor_size(layout, enc.count)
        if enc.values.size != expected:
            raise CodecError(f"low_rank payload has {enc.values.size} values, expected {expected}")
        out = np.empty(dim)
        pos = 0
        for e in layout:
            if not e.is_matrix:
                out[e.offset:e.offset + e.size] = enc.values[pos:pos + e.size]
                pos += e.size
                continue
            r = _effective_rank(e, enc.count)
            b = _low_rank_basis(_layout_seed(enc.seed, enc.round, enc.client_id, e), e, r)
            n = r * max(e.rows, e.cols)
            a = enc.values[pos:pos + n]
            pos += n
            w = a.reshape(e.rows, r) @ b if e.rows >= e.cols else b @ a.reshape(r, e.cols)
            out[e.offset:e.offset + e.size] = w.reshape(-1)
        return pv.freeze(out)

    if kind in ("random_mask", "subsample"):
        if not 1 <= enc.count <= dim or enc.values.size != enc.count:
            raise CodecError(f"mask payload count {enc.count} / {enc.values.size} values inconsistent with dim {dim}")
        out = np.zeros(dim)
        out[_mask_indices(enc.seed, enc.round, enc.client_id, dim, enc.count)] = enc.values * enc.scale
        return pv.freeze(out)

    bits = enc.scheme.bits
    n = dim if kind == "quantize" else padded_dim(dim)
    if enc.codes.size != n:
        raise CodecError(f"{kind} payload has {enc.codes.size} codes, expected {n}")
    values = _dequantize(enc.lo, enc.hi, enc.codes, bits)
    if kind == "rotate_quantize":
        values = unrotate(values, derive_seed(enc.seed, "rotate", enc.round, enc.client_id), dim)
    return pv.freeze(values)


def measure_bytes(enc: EncodedUpdate) -> int:
    """Size of the canonical serialization, computed from the layout arithmetic."""
    kind, dim = enc.scheme.kind, enc.dim
    if kind == "identity":
        body = 8 * dim
    elif kind == "low_rank":
        body = 12 + 8 * enc.values.size
    elif kind == "random_mask":
        body = 12 + 8 * enc.count
    elif kind == "subsample":
        body = 12 + 8 + 8 * enc.count
    elif kind == "quantize":
        body = 16 + math.ceil(dim * enc.scheme.bits / 8)
    else:
        body = 8 + 16 + math.ceil(padded_dim(dim) * enc.scheme.bits / 8)
    return HEADER_BYTES + body


def serialized_size(scheme: CompressionScheme, layout: Sequence[LayoutEntry]) -> int:
    """Wire size an update of this layout will have under ``scheme`` (no encoding needed)."""
    dim = sum(e.size for e in layout)
    probe = EncodedUpdate(scheme=scheme, dim=dim, n_examples=0)
    if scheme.kind == "low_rank":
        probe = EncodedUpdate(scheme=scheme, dim=dim, n_examples=0,
                              values=np.empty(_low_rank_factor_size(layout, scheme.rank)))
    elif scheme.kind in ("random_mask", "subsample"):
        probe = EncodedUpdate(scheme=scheme, dim=dim, n_examples=0, count=keep_count(scheme.keep_fraction, dim))
    return measure_bytes(probe)


def serialize(enc: EncodedUpdate) -> bytes:
    parts = [HEADER.pack(enc.scheme.tag, enc.dim, enc.n_examples, 0)]
    kind = enc.scheme.kind
    f64 = lambda a: np.asarray(a, dtype="<f8").tobytes()
    if kind == "identity":
        parts.append(f64(enc.values))
    elif kind == "low_rank":
        parts += [struct.pack("<III", enc.round, enc.client_id, enc.count), f64(enc.values)]
    elif kind == "random_mask":
        parts += [struct.pack("<III", enc.round, enc.client_id, enc.count), f64(enc.values)]
    elif kind == "subsample":
        parts += [struct.pack("<IIId", enc.round, enc.client_id, enc.count, enc.scale), f64(enc.values)]
    elif kind == "quantize":
        parts += [struct.pack("<dd", enc.lo, enc.hi), pack_codes(enc.codes, enc.scheme.bits)]
    else:
        parts += [struct.pack("<IIdd", enc.round, enc.client_id, enc.lo, enc.hi),
                  pack_codes(enc.codes, enc.scheme.bits)]
    return b"".join(parts)


def deserialize(data: bytes, seed: int = 0, keep_fraction: float | None = None) -> EncodedUpdate:
    """Parse a canonical payload. ``seed`` is the shared run seed.

    ``keep_fraction`` and ``rank`` are not needed to decode (the count or rank
    is on the wire); the returned scheme carries a keep fraction of
    ``count / dim`` unless one is supplied.
    """
    if len(data) < HEADER_BYTES:
        raise CodecError("payload shorter than header")
    tag, dim, n_examples, _ = HEADER.unpack_from(data)
    kind = _KIND_BY_ID.get(tag & 0xFF)
    if kind is None:
        raise CodecError(f"unknown scheme tag {tag:#x}")
    bits = (tag >> 8) & 0xFF or None
    body = memoryview(data)[HEADER_BYTES:]

    def reals(buf, n):
        if len(buf) != 8 * n:
            raise CodecError(f"{kind} payload size {len(buf)} does not match {n} reals")
        return np.frombuffer(buf, dtype="<f8").astype(np.float64)

    try:
        if kind == "identity":
            return EncodedUpdate(CompressionScheme(kind), dim, n_examples, seed=seed, values=reals(body, dim))
        if kind in ("low_rank", "random_mask"):
            rnd, cid, count = struct.unpack_from("<III", body)
            rest = body[12:]
            if len(rest) % 8:
                raise CodecError(f"{kind} payload not a whole number of reals")
            n = len(rest) // 8
            if kind == "low_rank":
                scheme = CompressionScheme(kind, rank=count)
            else:
                scheme = CompressionScheme(kind, keep_fraction=keep_fraction or count / dim)
            return EncodedUpdate(scheme, dim, n_examples, rnd, cid, seed, values=reals(rest, n), count=count)
        if kind == "subsample":
            rnd, cid, count, enc_scale = struct.unpack_from("<IIId", body)
            scheme = CompressionScheme(kind, keep_fraction=keep_fraction or count / dim)
            return EncodedUpdate(scheme, dim, n_examples, rnd, cid, seed,
                                 values=reals(body[20:], count), count=count, scale=enc_scale)
        scheme = CompressionScheme(kind, bits=bits)
        if kind == "quantize":
            rnd = cid = 0
            lo, hi = struct.unpack_from("<dd", body)
            packed, n = bytes(body[16:]), dim
        else:
            rnd, cid, lo, hi = struct.unpack_from("<IIdd", body)
            packed, n = bytes(body[24:]), padded_dim(dim)
        if len(packed) != math.ceil(n * bits / 8):
            raise CodecError(f"{kind} code stream has {len(packed)} bytes, expected {math.ceil(n * bits / 8)}")
        return EncodedUpdate(scheme, dim, n_examples, rnd, cid, seed, lo=lo, hi=hi,
                             codes=unpack_codes(packed, n, bits))
    except struct.error as exc:
        raise CodecError(f"truncated {kind} payload: {exc}") from None
