import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gtic import bitstream as B
from gtic.bitstream import Bitstream, Header


def bits_of(bs: Bitstream) -> str:
    return "".join(format(b, "08b") for b in bs.payload)[:bs.payload_bits]


def hdr(h, w, K, L=2, mode="fixed"):
    return Header(h * 8, w * 8, h * 8, w * 8, K, L, 0.0, mode)


def prefix_tensor(rng, h, w, K, L=2):
    q = rng.integers(0, 2 ** L, (h, w, K))
    ones = rng.integers(1, K + 1, (h, w))
    mask = (np.arange(K) < ones[..., None]).astype(np.int64)
    return q * mask


def test_paper_table_exact():
    t = B.paper_table(2)
    assert [t.codeword(s) for s in range(5)] == ["1", "01", "001", "0001", "00001"]
    assert t.is_prefix_free() and t.kraft_sum() <= 1


def test_paper_table_other_L():
    t = B.paper_table(3)
    assert t.codeword(7) == "0" * 7 + "1" and t.codeword(B.eoc_symbol(3)) == "0" * 8 + "1"
    assert t.is_prefix_free()


def test_fig5_example():
    # one channel scanned as [0, 0, 1]: a 1x3 row
    z = np.array([0, 0, 1]).reshape(1, 3, 1)
    header = Header(8, 24, 8, 24, 1, 2, 0.0, "fixed")
    bs = B.encode_stream(z, B.paper_table(2), header)
    assert bits_of(bs) == "1101" + "00001"


def test_hand_traced_scan_order():
    z = np.array([[0, 0], [1, 2]]).reshape(2, 2, 1)  # top row [0,0], bottom row [1,2]
    bs = B.encode_stream(z, B.paper_table(2), hdr(2, 2, 1))
    assert bits_of(bs) == "0100100001"
    np.testing.assert_array_equal(B.decode_stream(bs), z)


def test_all_zero_channel_is_eoc_only():
    bs = B.encode_stream(np.zeros((2, 2, 1), int), B.paper_table(2), hdr(2, 2, 1))
    assert bits_of(bs) == "00001"


def test_k_eocs_decode_to_zeros():
    K = 5
    bits = "00001" * K
    payload = int(bits + "0" * (-len(bits) % 8), 2).to_bytes((len(bits) + 7) // 8, "big")
    bs = Bitstream(hdr(2, 3, K), B.paper_table(2), payload, len(bits))
    np.testing.assert_array_equal(B.decode_stream(bs), np.zeros((2, 3, K)))


def test_scan_roundtrip(rng):
    z = rng.integers(0, 4, (3, 4, 2))
    for k in range(2):
        seq = B.scan_channel(z, k)
        assert seq[:4].tolist() == z[2, :, k].tolist()
        np.testing.assert_array_equal(B.unscan_channel(seq, 3, 4), z[:, :, k])


def test_huffman_textbook_example():
    assert B.huffman_lengths([8, 4, 2, 1, 1]) == [1, 2, 3, 4, 4]
    t = B.build_table([8, 4, 2, 1, 1])
    assert t.is_prefix_free() and t.kraft_sum() == 1


def test_huffman_single_symbol():
    t = B.build_table([0, 0, 0, 0, 9])
    assert t.lengths == (0, 0, 0, 0, 1)


def test_huffman_empty_rejected():
    with pytest.raises(ValueError):
        B.build_table([0, 0, 0, 0, 0])


@given(st.lists(st.integers(0, 1000), min_size=5, max_size=5).filter(lambda c: sum(c) > 0))
def test_huffman_properties(counts):
    t = B.build_table(counts)
    assert t.is_prefix_free() and t.kraft_sum() <= 1 + 1e-12
    assert all((l > 0) == (c > 0) for l, c in zip(t.lengths, counts))
    assert B.build_table(counts) == t


@pytest.mark.parametrize("mode", ["fixed", "adaptive", "raw"])
def test_random_roundtrip(rng, mode):
    for _ in range(100):
        h, w, K = rng.integers(1, 9, 3)
        z = prefix_tensor(rng, h, w, K)
        header = hdr(h, w, K, mode=mode)
        bs = B.encode_stream(z, B.make_table(z, 2, mode), header)
        data = bs.to_bytes()
        np.testing.assert_array_equal(B.decode_stream(data), z)
        assert B.encode_stream(z, B.make_table(z, 2, mode), header).to_bytes() == data


def test_exhaustive_1x2():
    for a, b in itertools.product(range(4), repeat=2):
        z = np.array([a, b]).reshape(1, 2, 1)
        for mode in ("fixed", "adaptive"):
            bs = B.encode_stream(z, B.make_table(z, 2, mode), Header(8, 16, 8, 16, 1, 2, 0.0, mode))
            np.testing.assert_array_equal(B.decode_stream(bs.to_bytes()), z)


def test_header_roundtrip_and_size():
    h = Header(65, 63, 72, 64, 16, 2, -1.32, "adaptive")
    z = np.zeros(h.latent_shape, int)
    data = B.encode_stream(z, B.make_table(z, 2, "adaptive"), h).to_bytes()
    back = Bitstream.from_bytes(data).header
    assert (back.orig_h, back.orig_w, back.pad_h, back.pad_w, back.K, back.L, back.mode) == (65, 63, 72, 64, 16, 2,
                                                                                            "adaptive")
    assert back.n == pytest.approx(-1.32, abs=1e-6)
    assert B.HEADER_SIZE == 29 and data[:4] == b"GTIC"


def test_fixed_code_zeroing_never_grows(rng):
    for _ in range(200):
        z = prefix_tensor(rng, 2, 3, 4)
        nz = np.argwhere(z)
        if not len(nz):
            continue
        z2 = z.copy()
        z2[tuple(nz[rng.integers(len(nz))])] = 0
        t = B.paper_table(2)
        assert B.encode_stream(z2, t, hdr(2, 3, 4)).payload_bits <= B.encode_stream(z, t, hdr(2, 3, 4)).payload_bits


def test_symbol_out_of_range_rejected():
    with pytest.raises(B.SymbolRangeError):
        B.encode_stream(np.full((1, 1, 1), 4), B.paper_table(2), hdr(1, 1, 1))
    with pytest.raises(B.SymbolRangeError):
        B.encode_stream(np.zeros((2, 1, 1), int), B.paper_table(2), hdr(1, 1, 1))


def test_adaptive_table_missing_symbol_rejected():
    z = np.array([1, 1]).reshape(1, 2, 1)
    t = B.make_table(np.zeros_like(z), 2, "adaptive")
    with pytest.raises(B.SymbolRangeError):
        B.encode_stream(z, t, Header(8, 16, 8, 16, 1, 2, 0.0, "adaptive"))


def test_distinct_diagnostics():
    z = np.array([3, 2, 1, 1]).reshape(2, 2, 1)
    good = B.encode_stream(z, B.paper_table(2), hdr(2, 2, 1)).to_bytes()
    with pytest.raises(B.TruncatedStreamError):
        B.decode_stream(good[:B.HEADER_SIZE])
    # 5 zeros then a 1 is no codeword of the fixed table
    bad = bytearray(good)
    bad[B.HEADER_SIZE] = 0b00000010
    with pytest.raises(B.InvalidCodewordError):
        B.decode_stream(bytes(bad))
    # five '1' symbols in a four-position channel
    over = int("11111" + "000", 2).to_bytes(1, "big") + b"\x08"
    with pytest.raises(B.ChannelOverflowError):
        B.decode_stream(good[:B.HEADER_SIZE] + over)
    with pytest.raises(B.PaddingError):
        B.decode_stream(good + b"\x00")
    with pytest.raises(B.HeaderError):
        B.decode_stream(b"XXXX" + good[4:])
    with pytest.raises(B.HeaderError):
        B.decode_stream(good[:10])


def test_bitflip_fuzz_never_crashes(rng):
    for trial in range(30):
        z = prefix_tensor(rng, 3, 3, 4)
        mode = ("fixed", "adaptive")[trial % 2]
        data = B.encode_stream(z, B.make_table(z, 2, mode), hdr(3, 3, 4, mode=mode)).to_bytes()
        start = len(data) - len(Bitstream.from_bytes(data).payload)
        for bit in range(8 * start, 8 * len(data)):
            flipped = bytearray(data)
            flipped[bit // 8] ^= 0x80 >> (bit % 8)
            try:
                out = B.decode_stream(bytes(flipped))
            except B.BitstreamError:
                continue
            assert not np.array_equal(out, z)


def test_bpp():
    assert B.bpp(100, 64, 64) == pytest.approx(800 / 4096)
    assert B.bpp(100, 128, 64) < B.bpp(100, 64, 64)
    bs = B.encode_stream(np.zeros((1, 1, 1), int), B.paper_table(2), hdr(1, 1, 1))
    assert B.bpp(bs, 8, 8) > 0 and B.bpp(bs, 8, 8) == len(bs.to_bytes()) * 8 / 64
    with pytest.raises(ValueError):
        B.bpp(10, 0, 5)
