"""Per-line dictionary compression for SMILES libraries.

Each line is encoded on its own against a fixed dictionary of up to 128
printable-ASCII substrings; entry ``k`` is written as the single byte
``0x80 + k``. Input is restricted to 7-bit ASCII so any byte >= 0x80 in a
payload is unambiguously a dictionary code.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from functools import cached_property, lru_cache
from importlib import resources
from pathlib import Path

CODE_BASE = 0x80
MAX_ENTRIES = 128
MIN_NGRAM = 2
MAX_NGRAM = 8
DICT_MAGIC = b"SMZ1"
FILE_MAGIC = b"SMZC"


class CodecError(ValueError):
    pass


class NonAsciiInput(CodecError):
    pass


class UnknownCode(CodecError):
    def __init__(self, code: int, offset: int):
        super().__init__(f"unknown code byte 0x{code:02x} at offset {offset}")
        self.code = code
        self.offset = offset


def _as_ascii(line: str | bytes) -> bytes:
    if isinstance(line, str):
        try:
            data = line.encode("ascii")
        except UnicodeEncodeError as exc:
            raise NonAsciiInput(f"non-ASCII character at offset {exc.start}") from None
    else:
        data = bytes(line)
    for i, byte in enumerate(data):
        if byte >= CODE_BASE:
            raise NonAsciiInput(f"byte 0x{byte:02x} at offset {i} is outside 7-bit ASCII")
    return data


def _printable(chunk: bytes) -> bool:
    return all(0x20 <= b < 0x7F for b in chunk)


@dataclass(frozen=True)
class Dictionary:
    entries: tuple[bytes, ...] = ()
    version: str = "SMZ1"

    def __post_init__(self):
        entries = tuple(bytes(e) for e in self.entries)
        object.__setattr__(self, "entries", entries)
        if len(entries) > MAX_ENTRIES:
            raise CodecError(f"at most {MAX_ENTRIES} entries allowed, got {len(entries)}")
        if len(set(entries)) != len(entries):
            raise CodecError("dictionary entries must be unique")
        for entry in entries:
            if not MIN_NGRAM <= len(entry) <= MAX_NGRAM or not _printable(entry):
                raise CodecError(f"invalid dictionary entry {entry!r}")

    def __len__(self) -> int:
        return len(self.entries)

    def code_of(self, entry: bytes | str) -> int:
        if isinstance(entry, str):
            entry = entry.encode("ascii")
        return CODE_BASE + self.entries.index(entry)

    @cached_property
    def _by_first_byte(self) -> dict[int, list[tuple[bytes, int]]]:
        # candidates per leading byte, longest first so the first hit is the longest match
        table: dict[int, list[tuple[bytes, int]]] = {}
        for k, entry in enumerate(self.entries):
            table.setdefault(entry[0], []).append((entry, CODE_BASE + k))
        for cands in table.values():
            cands.sort(key=lambda item: (-len(item[0]), item[0]))
        return table

    def to_bytes(self) -> bytes:
        out = bytearray(DICT_MAGIC)
        out.append(len(self.entries))
        for entry in self.entries:
            out.append(len(entry))
            out += entry
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Dictionary":
        if data[:4] != DICT_MAGIC:
            raise CodecError("not a dictionary file (bad magic)")
        if len(data) < 5:
            raise CodecError("truncated dictionary header")
        count = data[4]
        pos = 5
        entries = []
        for _ in range(count):
            if pos >= len(data):
                raise CodecError("truncated dictionary")
            size = data[pos]
            entry = data[pos + 1 : pos + 1 + size]
            if len(entry) != size:
                raise CodecError("truncated dictionary entry")
            entries.append(entry)
            pos += 1 + size
        if pos != len(data):
            raise CodecError("trailing bytes after dictionary")
        return cls(tuple(entries), version=data[:4].decode("ascii"))

    def sha256(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Dictionary":
        return cls.from_bytes(Path(path).read_bytes())


def compress_line(line: str | bytes, d: Dictionary) -> bytes:
    """Greedy left-to-right longest-match encoding of one line."""
    data = _as_ascii(line)
    table = d._by_first_byte
    out = bytearray()
    i = 0
    n = len(data)
    while i < n:
        for entry, code in table.get(data[i], ()):
            if data.startswith(entry, i):
                out.append(code)
                i += len(entry)
                break
        else:
            out.append(data[i])
            i += 1
    return bytes(out)


def decompress_line(data: bytes, d: Dictionary) -> str:
    out = bytearray()
    entries = d.entries
    for offset, byte in enumerate(data):
        if byte < CODE_BASE:
            out.append(byte)
            continue
        k = byte - CODE_BASE
        if k >= len(entries):
            raise UnknownCode(byte, offset)
        out += entries[k]
    return out.decode("ascii")


def _ngram_counts(encoded: bytes) -> Counter:
    counts: Counter = Counter()
    n = len(encoded)
    for i in range(n):
        if encoded[i] >= CODE_BASE:
            continue
        for length in range(MIN_NGRAM, MAX_NGRAM + 1):
            if i + length > n:
                break
            gram = encoded[i : i + length]
            if gram[-1] >= CODE_BASE or not 0x20 <= gram[-1] < 0x7F:
                break
            counts[gram] += 1
    # a leading non-printable byte ends the run immediately
    return Counter({g: c for g, c in counts.items() if 0x20 <= g[0] < 0x7F})


def train_dictionary(corpus, max_entries: int = MAX_ENTRIES) -> Dictionary:
    """Greedily pick the n-gram with the largest ``frequency * (length - 1)`` saving.

    Frequencies are counted over the corpus as re-encoded with the entries
    chosen so far; ties go to the lexicographically smallest n-gram. Only
    lines touched by the newest entry are recounted each round.
    """
    if not 0 <= max_entries <= MAX_ENTRIES:
        raise CodecError(f"max_entries must be in [0, {MAX_ENTRIES}]")
    lines = [_as_ascii(line) for line in corpus]
    entries: list[bytes] = []
    encoded = list(lines)
    per_line = [_ngram_counts(e) for e in encoded]
    totals: Counter = Counter()
    for c in per_line:
        totals.update(c)

    while len(entries) < max_entries and totals:
        best = None
        best_saving = 0
        for gram, freq in totals.items():
            saving = freq * (len(gram) - 1)
            if saving > best_saving or (saving == best_saving and best is not None and gram < best):
                best, best_saving = gram, saving
        if best is None or best_saving <= 0:
            break
        entries.append(best)
        d = Dictionary(tuple(entries))
        for idx, line in enumerate(lines):
            if best not in line:
                continue
            new = compress_line(line, d)
            if new == encoded[idx]:
                continue
            totals.subtract(per_line[idx])
            encoded[idx] = new
            per_line[idx] = _ngram_counts(new)
            totals.update(per_line[idx])
        totals = +totals
    return Dictionary(tuple(entries))


def compression_ratio(lines, d: Dictionary) -> float:
    raw = sum(len(_as_ascii(line)) for line in lines)
    packed = sum(len(compress_line(line, d)) for line in lines)
    return raw / packed if packed else 1.0


# -- file formats --------------------------------------------------------------


def _write_varint(value: int, out: bytearray) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    shift = 0
    value = 0
    while True:
        if pos >= len(data):
            raise CodecError("truncated varint")
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7
        if shift > 63:
            raise CodecError("varint too long")


def encode_library(lines, d: Dictionary) -> bytes:
    out = bytearray(FILE_MAGIC)
    out += d.sha256()
    for line in lines:
        payload = compress_line(line, d)
        _write_varint(len(payload), out)
        out += payload
    return bytes(out)


def decode_library(data: bytes, d: Dictionary) -> list[str]:
    if data[:4] != FILE_MAGIC:
        raise CodecError("not a compressed library (bad magic)")
    if data[4:36] != d.sha256():
        raise CodecError("library was compressed with a different dictionary")
    pos = 36
    lines = []
    while pos < len(data):
        size, pos = _read_varint(data, pos)
        payload = data[pos : pos + size]
        if len(payload) != size:
            raise CodecError("truncated line payload")
        lines.append(decompress_line(payload, d))
        pos += size
    return lines


def write_compressed_library(path: str | Path, lines, d: Dictionary) -> None:
    Path(path).write_bytes(encode_library(lines, d))


def read_compressed_library(path: str | Path, d: Dictionary) -> list[str]:
    return decode_library(Path(path).read_bytes(), d)


@lru_cache(maxsize=1)
def default_dictionary() -> Dictionary:
    """The shipped dictionary, trained once on a generated SMILES sample."""
    data = resources.files("vscreen").joinpath("data/smiles.smz1").read_bytes()
    return Dictionary.from_bytes(data)
