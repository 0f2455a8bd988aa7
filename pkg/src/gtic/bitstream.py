"""Entropy coding of masked code tensors into the ``.gtc`` file format.

Each channel is scanned bottom row first, every row left to right. Symbols are
written up to the last nonzero one, followed by an end-of-channel (EOC) code;
the trailing zeros are implied. Bits are packed MSB first and the payload is
zero-padded to a byte boundary.

Header (little-endian)::

    magic "GTIC" | version u8 | origH u32 | origW u32 | padH u32 | padW u32 |
    K u16 | L u8 | flags u8 | n f32 [| alphabet u8 | bit-lengths u8[alphabet]]

flags bit 0 marks an adaptive (canonical Huffman) table whose bit-lengths
follow the fixed part; bit 1 marks raw fixed-width packing without EOC codes.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"GTIC"
VERSION = 1
_HEADER = struct.Struct("<4sBIIIIHBBf")
HEADER_SIZE = _HEADER.size
FLAG_ADAPTIVE = 1
FLAG_RAW = 2
MAX_L = 7
MODES = ("fixed", "adaptive", "raw")


class BitstreamError(ValueError):
    pass


class HeaderError(BitstreamError):
    pass


class TruncatedStreamError(BitstreamError):
    pass


class InvalidCodewordError(BitstreamError):
    pass


class ChannelOverflowError(BitstreamError):
    pass


class PaddingError(BitstreamError):
    pass


class SymbolRangeError(BitstreamError):
    pass


def eoc_symbol(L: int) -> int:
    return 2 ** L


@dataclass(frozen=True)
class CodeTable:
    """Codewords for the symbols 0..2**L-1 plus EOC (index 2**L).

    ``codes[s]`` is ``(value, length)`` or ``None`` for a symbol without a codeword.
    """

    mode: str
    codes: tuple

    @property
    def alphabet_size(self) -> int:
        return len(self.codes)

    @property
    def lengths(self) -> tuple[int, ...]:
        return tuple(c[1] if c else 0 for c in self.codes)

    def codeword(self, symbol: int) -> str:
        c = self.codes[symbol]
        if c is None:
            raise SymbolRangeError(f"symbol {symbol} has no codeword in this table")
        return format(c[0], f"0{c[1]}b")

    def kraft_sum(self) -> float:
        return sum(2.0 ** -c[1] for c in self.codes if c)

    def is_prefix_free(self) -> bool:
        words = sorted(self.codeword(s) for s, c in enumerate(self.codes) if c)
        return all(not b.startswith(a) for a, b in zip(words, words[1:]))


def paper_table(L: int = 2) -> CodeTable:
    """Unary code: symbol s -> '0'*s + '1', EOC -> '0'*2**L + '1' (for L=2: 1, 01, 001, 0001, 00001)."""
    return CodeTable("fixed", tuple((1, s + 1) for s in range(2 ** L + 1)))


def huffman_lengths(counts) -> list[int]:
    """Huffman code lengths; merge ties broken by (count, lowest symbol index in the subtree)."""
    counts = list(counts)
    heap = [(c, s, (s,)) for s, c in enumerate(counts) if c > 0]
    if not heap:
        raise ValueError("histogram has no nonzero count")
    lengths = [0] * len(counts)
    if len(heap) == 1:
        lengths[heap[0][1]] = 1
        return lengths
    heapq.heapify(heap)
    while len(heap) > 1:
        c1, s1, a = heapq.heappop(heap)
        c2, s2, b = heapq.heappop(heap)
        for s in a + b:
            lengths[s] += 1
        heapq.heappush(heap, (c1 + c2, min(s1, s2), a + b))
    return lengths


def canonical_table(lengths, mode: str = "adaptive") -> CodeTable:
    order = sorted((ln, s) for s, ln in enumerate(lengths) if ln > 0)
    codes: list = [None] * len(lengths)
    code, prev = 0, order[0][0]
    for ln, s in order:
        code <<= ln - prev
        codes[s] = (code, ln)
        code += 1
        prev = ln
    table = CodeTable(mode, tuple(codes))
    if table.kraft_sum() > 1.0:
        raise HeaderError(f"code lengths {list(lengths)} violate the Kraft inequality")
    return table


def build_table(histogram) -> CodeTable:
    """Canonical Huffman table for counts over the data symbols followed by EOC."""
    table = canonical_table(huffman_lengths(histogram))
    assert table.is_prefix_free() and table.kraft_sum() <= 1.0
    return table


# ---------------------------------------------------------------------------
# scan order


def scan_channel(z: np.ndarray, k: int) -> np.ndarray:
    """Channel ``k`` of an (h, w, K) tensor: bottom row first, each row left to right."""
    return z[::-1, :, k].reshape(-1)


def unscan_channel(values: np.ndarray, h: int, w: int) -> np.ndarray:
    return np.asarray(values).reshape(h, w)[::-1]


def channel_symbols(z: np.ndarray) -> list[list[int]]:
    """Per-channel symbol sequences as emitted (truncated after the last nonzero, EOC appended)."""
    out = []
    for k in range(z.shape[2]):
        seq = scan_channel(z, k)
        nz = np.flatnonzero(seq)
        out.append(seq[:nz[-1] + 1].tolist() if nz.size else [])
    return out


def histogram(z: np.ndarray, L: int) -> list[int]:
    counts = [0] * (2 ** L + 1)
    for seq in channel_symbols(z):
        for s in seq:
            counts[s] += 1
        counts[eoc_symbol(L)] += 1
    return counts


# ---------------------------------------------------------------------------
# header + stream


@dataclass(frozen=True)
class Header:
    orig_h: int
    orig_w: int
    pad_h: int
    pad_w: int
    K: int
    L: int
    n: float = 0.0
    mode: str = "adaptive"
    version: int = VERSION

    def __post_init__(self):
        if self.mode not in MODES:
            raise HeaderError(f"unknown table mode {self.mode!r}")
        if not 1 <= self.L <= MAX_L:
            raise HeaderError(f"L must lie in [1, {MAX_L}], got {self.L}")
        if not 1 <= self.K < 2 ** 16:
            raise HeaderError(f"K must lie in [1, 65535], got {self.K}")
        if self.orig_h < 1 or self.orig_w < 1:
            raise HeaderError(f"original size {self.orig_h}x{self.orig_w} is empty")
        for o, p, what in ((self.orig_h, self.pad_h, "height"), (self.orig_w, self.pad_w, "width")):
            if p % 8 or p < o or p - o >= 8:
                raise HeaderError(f"padded {what} {p} is inconsistent with original {what} {o}")

    @classmethod
    def for_image(cls, h: int, w: int, K: int, L: int, n: float = 0.0, mode: str = "adaptive") -> Header:
        return cls(h, w, -(-h // 8) * 8, -(-w // 8) * 8, K, L, n, mode)

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return self.pad_h // 8, self.pad_w // 8, self.K

    @property
    def flags(self) -> int:
        return {"fixed": 0, "adaptive": FLAG_ADAPTIVE, "raw": FLAG_RAW}[self.mode]


@dataclass(frozen=True)
class Bitstream:
    header: Header
    table: CodeTable | None
    payload: bytes
    payload_bits: int

    def to_bytes(self) -> bytes:
        h = self.header
        out = _HEADER.pack(MAGIC, h.version, h.orig_h, h.orig_w, h.pad_h, h.pad_w, h.K, h.L, h.flags, h.n)
        if h.mode == "adaptive":
            out += bytes([self.table.alphabet_size]) + bytes(self.table.lengths)
        return out + self.payload

    def __len__(self) -> int:
        return len(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> Bitstream:
        if len(data) < HEADER_SIZE:
            raise HeaderError(f"file is {len(data)} bytes, shorter than the {HEADER_SIZE}-byte header")
        magic, version, oh, ow, ph, pw, K, L, flags, n = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise HeaderError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise HeaderError(f"unsupported stream version {version} (this build reads version {VERSION})")
        modes = {0: "fixed", FLAG_ADAPTIVE: "adaptive", FLAG_RAW: "raw"}
        if flags not in modes:
            raise HeaderError(f"unknown flags 0x{flags:02x}")
        header = Header(oh, ow, ph, pw, K, L, float(n), modes[flags], version)
        pos = HEADER_SIZE
        if header.mode == "adaptive":
            if len(data) < pos + 1:
                raise HeaderError("missing code table")
            size = data[pos]
            if size != 2 ** L + 1:
                raise HeaderError(f"code table has {size} entries, expected {2 ** L + 1} for L={L}")
            if len(data) < pos + 1 + size:
                raise HeaderError("truncated code table")
            lengths = list(data[pos + 1:pos + 1 + size])
            if lengths[eoc_symbol(L)] == 0:
                raise HeaderError("code table has no EOC codeword")
            table = canonical_table(lengths)
            pos += 1 + size
        elif header.mode == "fixed":
            table = paper_table(L)
        else:
            table = None
        payload = bytes(data[pos:])
        return cls(header, table, payload, 8 * len(payload))


def _pack(bits: str) -> bytes:
    if not bits:
        return b""
    bits += "0" * (-len(bits) % 8)
    return int(bits, 2).to_bytes(len(bits) // 8, "big")


def encode_stream(z: np.ndarray, table: CodeTable | None, header: Header) -> Bitstream:
    """Entropy-code one (h, w, K) masked code tensor."""
    z = np.asarray(z)
    if z.shape != header.latent_shape:
        raise SymbolRangeError(f"tensor shape {z.shape} does not match header latent shape {header.latent_shape}")
    top = 2 ** header.L - 1
    if z.size and (z.min() < 0 or z.max() > top):
        raise SymbolRangeError(f"symbols must lie in [0, {top}], got [{z.min()}, {z.max()}]")
    z = z.astype(np.int64)
    if header.mode == "raw":
        parts = [format(int(s), f"0{header.L}b") for k in range(z.shape[2]) for s in scan_channel(z, k)]
        bits = "".join(parts)
        return Bitstream(header, None, _pack(bits), len(bits))
    if table is None:
        raise ValueError(f"mode {header.mode!r} needs a code table")
    lookup = {s: table.codeword(s) for s in range(table.alphabet_size) if table.codes[s]}
    eoc = lookup.get(eoc_symbol(header.L))
    if eoc is None:
        raise SymbolRangeError("code table has no EOC codeword")
    parts = []
    for seq in channel_symbols(z):
        for s in seq:
            if s not in lookup:
                raise SymbolRangeError(f"symbol {s} has no codeword in this table")
            parts.append(lookup[s])
        parts.append(eoc)
    bits = "".join(parts)
    return Bitstream(header, table, _pack(bits), len(bits))


def decode_stream(bs: Bitstream | bytes) -> np.ndarray:
    """Exact inverse of :func:`encode_stream`; returns the (h, w, K) int32 tensor."""
    if isinstance(bs, (bytes, bytearray)):
        bs = Bitstream.from_bytes(bytes(bs))
    h, w, K = bs.header.latent_shape
    L = bs.header.L
    cap = h * w
    bits = "".join(format(b, "08b") for b in bs.payload)
    z = np.zeros((h, w, K), dtype=np.int32)
    pos = 0
    if bs.header.mode == "raw":
        need = cap * K * L
        if len(bits) < need:
            raise TruncatedStreamError(f"raw payload has {len(bits)} bits, needs {need}")
        vals = [int(bits[i:i + L], 2) for i in range(0, need, L)]
        for k in range(K):
            z[:, :, k] = unscan_channel(vals[k * cap:(k + 1) * cap], h, w)
        pos = need
    else:
        table = bs.table
        decode_map = {(c[0], c[1]): s for s, c in enumerate(table.codes) if c}
        max_len = max(c[1] for c in table.codes if c)
        eoc = eoc_symbol(L)
        nbits = len(bits)
        for k in range(K):
            seq = []
            while True:
                value, length = 0, 0
                while True:
                    if pos >= nbits:
                        raise TruncatedStreamError(
                            f"payload ended inside channel {k} after {len(seq)} symbols")
                    value = (value << 1) | (bits[pos] == "1")
                    length += 1
                    pos += 1
                    sym = decode_map.get((value, length))
                    if sym is not None:
                        break
                    if length >= max_len:
                        raise InvalidCodewordError(
                            f"bits {format(value, f'0{length}b')} at offset {pos - length} match no codeword")
                if sym == eoc:
                    break
                if len(seq) >= cap:
                    raise ChannelOverflowError(
                        f"channel {k} holds more than its capacity of {cap} symbols before EOC")
                seq.append(sym)
            full = np.zeros(cap, dtype=np.int32)
            full[:len(seq)] = seq
            z[:, :, k] = unscan_channel(full, h, w)
    rest = bits[pos:]
    if len(rest) >= 8:
        raise PaddingError(f"{len(rest) // 8} unexpected trailing bytes after the last channel")
    if "1" in rest:
        raise PaddingError("nonzero padding bits after the last channel")
    return z


def bpp(bs: Bitstream | bytes | int, orig_h: int, orig_w: int) -> float:
    """Bits per pixel of the whole file (header and table included)."""
    if orig_h * orig_w <= 0:
        raise ValueError(f"image size {orig_h}x{orig_w} is empty")
    nbytes = bs if isinstance(bs, int) else len(bs)
    return nbytes * 8 / (orig_h * orig_w)


def make_table(z: np.ndarray, L: int, mode: str) -> CodeTable | None:
    if mode == "fixed":
        return paper_table(L)
    if mode == "adaptive":
        return build_table(histogram(z, L))
    if mode == "raw":
        return None
    raise ValueError(f"unknown table mode {mode!r}")
