import math
import struct

import numpy as np
import pytest

from fedsim import models
from fedsim.compression import (
    CompressionScheme, EncodedUpdate, decode, deserialize, encode, fwht, keep_count, measure_bytes,
    pack_codes, padded_dim, rotate, serialize, serialized_size, unpack_codes, unrotate,
)
from fedsim.errors import CodecError, DimensionMismatchError
from fedsim.models import LayoutEntry
from fedsim.seeding import derive_seed


def flat(dim):
    return (LayoutEntry("v", 0, 1, dim),)


SCHEMES = [
    CompressionScheme("identity"),
    CompressionScheme("low_rank", rank=1),
    CompressionScheme("low_rank", rank=3),
    CompressionScheme("random_mask", keep_fraction=0.1),
    CompressionScheme("random_mask", keep_fraction=0.5),
    CompressionScheme("subsample", keep_fraction=0.25),
    CompressionScheme("quantize", bits=1),
    CompressionScheme("quantize", bits=3),
    CompressionScheme("quantize", bits=8),
    CompressionScheme("rotate_quantize", bits=2),
    CompressionScheme("rotate_quantize", bits=8),
]


def hadamard_matrix(n):
    h = np.array([[1.0]])
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h / math.sqrt(n)


# --- roundtrips ---------------------------------------------------------------

def test_identity_roundtrip_exact(rng):
    x = rng.normal(size=37)
    assert np.array_equal(decode(encode(x, flat(37), SCHEMES[0]), flat(37)), x)


@pytest.mark.parametrize("kind", ["random_mask", "subsample"])
def test_keep_everything_roundtrip_exact(kind, rng):
    x = rng.normal(size=50)
    scheme = CompressionScheme(kind, keep_fraction=1.0)
    assert np.array_equal(decode(encode(x, flat(50), scheme, seed=3), flat(50)), x)


def test_one_bit_endpoints_are_exact():
    x = np.array([-1.3, 2.7, -1.3])
    enc = encode(x, flat(3), CompressionScheme("quantize", bits=1))
    assert decode(enc, flat(3)).tolist() == [-1.3, 2.7, -1.3]


def test_constant_vector_quantizes_exactly():
    x = np.full(9, 0.1)
    out = decode(encode(x, flat(9), CompressionScheme("quantize", bits=4)), flat(9))
    assert np.array_equal(out, x)


def test_low_rank_full_rank_reconstructs():
    rng = np.random.default_rng(1)
    spec = models.mlp(input_dim=7, num_classes=3, hidden_dim=5)
    x = rng.normal(size=spec.dim)
    enc = encode(x, spec.layout, CompressionScheme("low_rank", rank=5), round=2, client_id=1, seed=9)
    out = decode(enc, spec.layout)
    for e in spec.layout:
        err = np.linalg.norm(out[e.offset:e.offset + e.size] - x[e.offset:e.offset + e.size])
        assert err <= 1e-9


def test_low_rank_rank_is_clamped_and_recorded(rng):
    spec = models.logistic_regression(input_dim=6, num_classes=3)
    x = rng.normal(size=spec.dim)
    enc = encode(x, spec.layout, CompressionScheme("low_rank", rank=50))
    assert enc.count == 3
    assert np.linalg.norm(decode(enc, spec.layout) - x) <= 1e-9


def test_low_rank_is_projection_of_rank_r(rng):
    spec = models.logistic_regression(input_dim=8, num_classes=6)
    x = rng.normal(size=spec.dim)
    out = decode(encode(x, spec.layout, CompressionScheme("low_rank", rank=2), seed=4), spec.layout)
    w = out[:48].reshape(6, 8)
    assert np.linalg.matrix_rank(w) == 2
    assert np.array_equal(out[48:], x[48:])  # bias passes through


def test_rotation_isometry_and_inverse(rng):
    for dim in (64, 100, 1024):
        x = rng.normal(size=dim)
        y = rotate(x, seed=dim)
        assert y.size == padded_dim(dim)
        assert abs(np.linalg.norm(y) - np.linalg.norm(x)) <= 1e-9
        assert np.max(np.abs(unrotate(y, dim, dim) - x)) <= 1e-9


def test_fwht_matches_dense_hadamard(rng):
    for n in (1, 2, 8, 32):
        x = rng.normal(size=n)
        np.testing.assert_allclose(fwht(x), hadamard_matrix(n) @ x, atol=1e-12)


def test_subsample_zero_count(rng):
    for s in (0.1, 0.33, 0.9):
        x = rng.normal(size=101)
        out = decode(encode(x, flat(101), CompressionScheme("subsample", keep_fraction=s), seed=2), flat(101))
        assert np.sum(out == 0.0) == 101 - math.ceil(s * 101)


def test_random_mask_mean_is_s_times_x():
    x = np.linspace(-1.0, 2.0, 20)
    scheme = CompressionScheme("random_mask", keep_fraction=0.25)
    n = 20000
    total = np.zeros(20)
    for r in range(n):
        total += decode(encode(x, flat(20), scheme, round=r, seed=5), flat(20))
    mean = total / n
    sigma = np.abs(x) * math.sqrt(0.25 * 0.75)
    assert np.all(np.abs(mean - 0.25 * x) <= 4 * sigma / math.sqrt(n) + 1e-12)


def test_decode_deterministic(rng):
    x = rng.normal(size=40)
    for scheme in SCHEMES:
        enc = encode(x, flat(40), scheme, round=1, client_id=2, seed=3)
        assert np.array_equal(decode(enc, flat(40)), decode(enc, flat(40)))


# --- byte accounting ----------------------------------------------------------

def test_worked_byte_counts():
    identity = encode(np.ones(100), flat(100), CompressionScheme("identity"))
    assert measure_bytes(identity) == 816
    mask = encode(np.ones(1000), flat(1000), CompressionScheme("random_mask", keep_fraction=0.1))
    assert measure_bytes(mask) == 828
    q = encode(np.arange(1000.0), flat(1000), CompressionScheme("quantize", bits=1))
    assert measure_bytes(q) == 157


def test_serialized_length_matches_measure_bytes():
    rng = np.random.default_rng(11)
    for _ in range(300):
        dim = int(rng.integers(1, 200))
        scheme = SCHEMES[int(rng.integers(len(SCHEMES)))]
        enc = encode(rng.normal(size=dim), flat(dim), scheme, round=int(rng.integers(100)),
                     client_id=int(rng.integers(50)), seed=int(rng.integers(1 << 30)))
        blob = serialize(enc)
        assert len(blob) == measure_bytes(enc) == serialized_size(scheme, flat(dim))


def test_header_layout():
    enc = encode(np.ones(10), flat(10), CompressionScheme("quantize", bits=3), n_examples=77)
    tag, dim, n, reserved = struct.unpack_from("<IIII", serialize(enc))
    assert (tag & 0xFF, tag >> 8, dim, n, reserved) == (5, 3, 10, 77, 0)


def test_deserialize_roundtrip():
    rng = np.random.default_rng(12)
    spec = models.mlp(input_dim=5, num_classes=3, hidden_dim=4)
    x = rng.normal(size=spec.dim)
    for scheme in SCHEMES:
        enc = encode(x, spec.layout, scheme, round=7, client_id=3, seed=99, n_examples=12)
        back = deserialize(serialize(enc), seed=99)
        assert back.n_examples == 12
        assert np.array_equal(decode(back, spec.layout), decode(enc, spec.layout)), str(scheme)


def test_corrupt_payloads_raise():
    enc = encode(np.ones(10), flat(10), CompressionScheme("quantize", bits=2))
    blob = serialize(enc)
    with pytest.raises(CodecError):
        deserialize(blob[:-1])
    with pytest.raises(CodecError):
        deserialize(blob[:8])
    with pytest.raises(CodecError):
        deserialize(b"\x63" + blob[1:])
    mask = serialize(encode(np.ones(10), flat(10), CompressionScheme("subsample", keep_fraction=0.5)))
    with pytest.raises(CodecError):
        deserialize(mask + b"\x00" * 8)
    bad = EncodedUpdate(CompressionScheme("identity"), 10, 0, values=np.ones(9))
    with pytest.raises(CodecError):
        decode(bad, flat(10))
    with pytest.raises(DimensionMismatchError):
        encode(np.ones(5), flat(6), CompressionScheme("identity"))


def test_payload_monotone_in_parameters():
    layout = models.mlp(input_dim=30, num_classes=10, hidden_dim=20).layout
    size = lambda **kw: serialized_size(CompressionScheme(**kw), layout)
    fr = [0.01, 0.05, 0.1, 0.3, 0.5, 1.0]
    for kind in ("random_mask", "subsample"):
        sizes = [size(kind=kind, keep_fraction=s) for s in fr]
        assert sizes == sorted(sizes)
    for kind in ("quantize", "rotate_quantize"):
        sizes = [size(kind=kind, bits=b) for b in range(1, 9)]
        assert sizes == sorted(sizes)
    sizes = [size(kind="low_rank", rank=r) for r in range(1, 25)]
    assert sizes == sorted(sizes)
    assert size(kind="quantize", bits=8) < size(kind="identity")


def test_fresh_randomness_each_round():
    # mask, basis, rotation and rounding seeds all depend on (round, client)
    for label in ("mask", "low_rank", "rotate", "quantize"):
        seeds = {derive_seed(0, label, r, c) for r in range(20) for c in range(5)}
        assert len(seeds) == 100
    x = np.arange(100.0)
    a = encode(x, flat(100), CompressionScheme("random_mask", keep_fraction=0.1), round=0)
    b = encode(x, flat(100), CompressionScheme("random_mask", keep_fraction=0.1), round=1)
    assert not np.array_equal(a.values, b.values)


def test_code_packing_roundtrip(rng):
    for bits in range(1, 9):
        codes = rng.integers(0, 1 << bits, size=37).astype(np.uint8)
        packed = pack_codes(codes, bits)
        assert len(packed) == math.ceil(37 * bits / 8)
        assert np.array_equal(unpack_codes(packed, 37, bits), codes)
    assert pack_codes(np.array([1, 0, 1], dtype=np.uint8), 1) == bytes([0b10100000])


def test_keep_count():
    assert keep_count(0.1, 1000) == 100
    assert keep_count(0.7, 100) == 70
    assert keep_count(1e-6, 10) == 1


@pytest.mark.parametrize("kw", [
    {"kind": "low_rank"}, {"kind": "random_mask", "keep_fraction": 0.0},
    {"kind": "quantize", "bits": 9}, {"kind": "bogus"},
])
def test_scheme_validation(kw):
    with pytest.raises(CodecError):
        CompressionScheme(**kw)
