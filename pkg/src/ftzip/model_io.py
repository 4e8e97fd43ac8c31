"""Sectioned little-endian model files with exact byte accounting.

Layout::

    magic "MTXZ" | version u16 | flags u16 | nsections u32
    nsections x (section id u32 | offset u64 | length u64)
    section payloads, contiguous, in table order

Quantized matrices take four sections: a 16-byte meta record, the codebook
(or projection), the per-row codes followed by the per-row norm bytes, and the
norm codebook.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ftzip.codecs import (
    CODEC_HEADER_BYTES,
    BinaryCodeMatrix,
    NormCodebook,
    PQCodebook,
    QuantizedMatrix,
    pack_codes,
    row_payload_bytes,
    unpack_codes,
)
from ftzip.featurizer import Vocabulary
from ftzip.linear_model import Model, TrainConfig
from ftzip.pipeline import CompressedModel, CompressOptions
from ftzip.pruning import BLOOM_HEADER_BYTES, BloomFilter

MAGIC = b"MTXZ"
VERSION = 1
HEADER = struct.Struct("<4sHHI")
ENTRY = struct.Struct("<IQQ")
META = struct.Struct("<IHHBBHf")
assert META.size == CODEC_HEADER_BYTES

FLAG_COMPRESSED = 1
FLAG_NORM = 2
FLAG_OPQ = 4
FLAG_LSH = 8
FLAG_BLOOM = 16
FLAG_QOUT = 32

_META_NORM, _META_ROT, _META_LSH = 1, 2, 4

SECTIONS = {
    1: "config",
    2: "labels",
    3: "hash",
    4: "dictionary",
    5: "input_dense",
    6: "output_dense",
    10: "word_index",
    11: "bucket_index",
    12: "bloom",
    20: "input_meta",
    21: "input_codebook",
    22: "input_codes",
    23: "input_norm_codebook",
    24: "input_rotation",
    30: "output_meta",
    31: "output_codebook",
    32: "output_codes",
    33: "output_norm_codebook",
    34: "output_rotation",
}
SECTION_IDS = {name: i for i, name in SECTIONS.items()}


class ModelFormatError(ValueError):
    pass


class TruncatedFile(ModelFormatError):
    pass


class BadMagic(ModelFormatError):
    pass


class VersionMismatch(ModelFormatError):
    pass


class SectionOverflow(ModelFormatError):
    pass


class UnknownSection(ModelFormatError):
    pass


# --------------------------------------------------------------------------
# encoding helpers


def _json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _labels_bytes(labels) -> bytes:
    out = [struct.pack("<I", len(labels))]
    for name in labels:
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
    return b"".join(out)


def _read_labels(buf: bytes) -> list[str]:
    (n,), pos = struct.unpack_from("<I", buf), 4
    labels = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", buf, pos)
        labels.append(buf[pos + 2:pos + 2 + ln].decode("utf-8"))
        pos += 2 + ln
    return labels


def _vocab_bytes(vocab: Vocabulary) -> bytes:
    out = [struct.pack("<I", vocab.nwords)]
    for word, count in vocab.words:
        out.append(struct.pack("<IH", count, len(word)) + word)
    return b"".join(out)


def _read_vocab(buf: bytes) -> list[tuple[bytes, int]]:
    (n,), pos = struct.unpack_from("<I", buf), 4
    words = []
    for _ in range(n):
        count, ln = struct.unpack_from("<IH", buf, pos)
        words.append((bytes(buf[pos + 6:pos + 6 + ln]), count))
        pos += 6 + ln
    return words


def _quantized_sections(prefix: str, q) -> list[tuple[str, bytes]]:
    norm = q.norm_codebook is not None
    if isinstance(q, BinaryCodeMatrix):
        flags = _META_LSH | (_META_NORM if norm else 0) | _META_ROT
        meta = META.pack(q.rows, q.d, q.nbits, 1, flags, 0, q.fallback_norm)
        codes = np.ascontiguousarray(q.bits, dtype=np.uint8).tobytes()
        parts = [(f"{prefix}_meta", meta), (f"{prefix}_rotation", _f32(q.rotation))]
    else:
        flags = (_META_NORM if norm else 0) | (_META_ROT if q.rotation is not None else 0)
        meta = META.pack(q.rows, q.d, q.k, q.b, flags, 0, 0.0)
        codes = pack_codes(q.codes, q.b).tobytes()
        parts = [(f"{prefix}_meta", meta), (f"{prefix}_codebook", _f32(q.codebook.centroids))]
        if q.rotation is not None:
            parts.append((f"{prefix}_rotation", _f32(q.rotation)))
    if norm:
        codes += np.ascontiguousarray(q.norm_codes, dtype=np.uint8).tobytes()
    parts.append((f"{prefix}_codes", codes))
    if norm:
        parts.append((f"{prefix}_norm_codebook", _f32(q.norm_codebook.centroids)))
    return parts


def _read_quantized(prefix: str, sec: dict[str, bytes]):
    rows, d, k, b, flags, _, extra = META.unpack(sec[f"{prefix}_meta"])
    norm = bool(flags & _META_NORM)
    codes_raw = np.frombuffer(sec[f"{prefix}_codes"], dtype=np.uint8)
    ncb = ncodes = None
    if norm:
        ncb = NormCodebook(np.frombuffer(sec[f"{prefix}_norm_codebook"], dtype="<f4").astype(np.float32))
        ncodes = codes_raw[len(codes_raw) - rows:]
        codes_raw = codes_raw[:len(codes_raw) - rows]
    if flags & _META_LSH:
        R = np.frombuffer(sec[f"{prefix}_rotation"], dtype="<f4").reshape(k, d).astype(np.float32)
        bits = codes_raw.reshape(rows, -1)
        return BinaryCodeMatrix(rows, d, k, R, bits, ncb, ncodes, fallback_norm=float(extra))
    ksub = 1 << b
    cents = np.frombuffer(sec[f"{prefix}_codebook"], dtype="<f4").reshape(k, ksub, d // k).astype(np.float32)
    R = None
    if flags & _META_ROT:
        R = np.frombuffer(sec[f"{prefix}_rotation"], dtype="<f4").reshape(d, d).astype(np.float32)
    payload = -(-k * b // 8)
    codes = unpack_codes(codes_raw.reshape(rows, payload), k, b)
    return QuantizedMatrix(rows, d, PQCodebook(k, b, cents), codes, ncb, ncodes, R)


# --------------------------------------------------------------------------


def _sections(obj) -> tuple[int, list[tuple[str, bytes]]]:
    if isinstance(obj, Model):
        cfg = obj.config
        secs = [
            ("config", _json({"kind": "full", "train": cfg.as_dict()})),
            ("labels", _labels_bytes(obj.labels)),
            ("hash", struct.pack("<IIII", cfg.bucket, cfg.word_ngrams, obj.dim, obj.vocab.nwords)),
            ("dictionary", _vocab_bytes(obj.vocab)),
            ("input_dense", _f32(obj.A)),
            ("output_dense", _f32(obj.B)),
        ]
        return 0, secs
    if not isinstance(obj, CompressedModel):
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    if not obj.labels:
        raise ValueError("model has no labels")
    flags = FLAG_COMPRESSED
    A = obj.A
    if A.norm_codebook is not None:
        flags |= FLAG_NORM
    if isinstance(A, BinaryCodeMatrix):
        flags |= FLAG_LSH
    elif A.rotation is not None:
        flags |= FLAG_OPQ
    if obj.bloom is not None:
        flags |= FLAG_BLOOM
    opts = asdict(obj.options)
    secs = [
        ("config", _json({"kind": "compressed", "options": opts})),
        ("labels", _labels_bytes(obj.labels)),
        ("hash", struct.pack("<IIII", obj.bucket, obj.word_ngrams, obj.dim, obj.nword_rows)),
    ]
    if obj.bloom is not None:
        bf = obj.bloom
        secs.append(("bloom", struct.pack("<QII", bf.m, bf.h, bf.nrows) + bf.bits.tobytes()))
    else:
        secs.append(("word_index", np.asarray(obj.word_keys, dtype="<u4").tobytes()))
        if obj.bucket_index is not None:
            secs.append(("bucket_index", np.asarray(obj.bucket_index, dtype="<u4").tobytes()))
    secs += _quantized_sections("input", A)
    if isinstance(obj.B, QuantizedMatrix):
        flags |= FLAG_QOUT
        secs += _quantized_sections("output", obj.B)
    else:
        secs.append(("output_dense", _f32(obj.B)))
    return flags, secs


def to_bytes(obj) -> bytes:
    flags, secs = _sections(obj)
    offset = HEADER.size + ENTRY.size * len(secs)
    table = []
    for name, payload in secs:
        table.append(ENTRY.pack(SECTION_IDS[name], offset, len(payload)))
        offset += len(payload)
    data = b"".join([HEADER.pack(MAGIC, VERSION, flags, len(secs))] + table + [p for _, p in secs])
    assert len(data) == offset
    return data


def read_sections(data: bytes) -> tuple[int, list[tuple[int, str, int, int]], dict[str, bytes]]:
    """Validate the container; returns (flags, [(id, name, offset, length)], payloads by name)."""
    if len(data) < HEADER.size:
        raise TruncatedFile(f"file is {len(data)} bytes, shorter than the {HEADER.size}-byte header")
    magic, version, flags, n = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatch(f"file version {version}, this reader supports {VERSION}")
    table_end = HEADER.size + ENTRY.size * n
    if len(data) < table_end:
        raise TruncatedFile("file ends inside the section table")
    entries = []
    payloads = {}
    expected = table_end
    for i in range(n):
        sid, off, ln = ENTRY.unpack_from(data, HEADER.size + ENTRY.size * i)
        if sid not in SECTIONS:
            raise UnknownSection(f"unknown section id {sid} for format version {VERSION}")
        if off != expected or off + ln > len(data):
            raise SectionOverflow(f"section {SECTIONS[sid]} [{off}, {off + ln}) overflows the {len(data)}-byte file")
        entries.append((sid, SECTIONS[sid], off, ln))
        payloads[SECTIONS[sid]] = data[off:off + ln]
        expected = off + ln
    if expected != len(data):
        raise SectionOverflow(f"{len(data) - expected} trailing bytes after the last section")
    return flags, entries, payloads


def from_bytes(data: bytes):
    flags, _, sec = read_sections(data)
    config = json.loads(sec["config"])
    labels = _read_labels(sec["labels"])
    bucket, word_ngrams, dim, nwords = struct.unpack("<IIII", sec["hash"])
    if not flags & FLAG_COMPRESSED:
        cfg = TrainConfig(**config["train"])
        vocab = Vocabulary(_read_vocab(sec["dictionary"]), cfg.min_count, bucket, word_ngrams)
        A = np.frombuffer(sec["input_dense"], dtype="<f4").reshape(-1, dim).copy()
        B = np.frombuffer(sec["output_dense"], dtype="<f4").reshape(-1, dim).copy()
        return Model(vocab, A, B, labels, cfg)
    bloom = word_keys = bucket_index = None
    if flags & FLAG_BLOOM:
        m, h, nrows = struct.unpack_from("<QII", sec["bloom"])
        bloom = BloomFilter(m, h, np.frombuffer(sec["bloom"], dtype=np.uint8, offset=BLOOM_HEADER_BYTES).copy(), nrows)
    else:
        word_keys = np.frombuffer(sec["word_index"], dtype="<u4").astype(np.uint32)
        if "bucket_index" in sec:
            bucket_index = np.frombuffer(sec["bucket_index"], dtype="<u4").astype(np.uint32)
    A = _read_quantized("input", sec)
    if flags & FLAG_QOUT:
        B = _read_quantized("output", sec)
    else:
        B = np.frombuffer(sec["output_dense"], dtype="<f4").reshape(-1, dim).copy()
    return CompressedModel(labels, dim, bucket, word_ngrams, A, B, word_keys, bucket_index, bloom,
                           CompressOptions(**config["options"]))


def save(obj, path) -> dict[str, int]:
    data = to_bytes(obj)
    Path(path).write_bytes(data)
    report = size_report(data)
    assert report["total"] == len(data) == Path(path).stat().st_size
    return report


def load(path):
    return from_bytes(Path(path).read_bytes())


def size_report(obj_or_bytes) -> dict[str, int]:
    """Bytes per section plus 'header' (file header and section table) and 'total'."""
    data = obj_or_bytes if isinstance(obj_or_bytes, (bytes, bytearray)) else to_bytes(obj_or_bytes)
    _, entries, _ = read_sections(data)
    report = {"header": HEADER.size + ENTRY.size * len(entries)}
    for _, name, _, ln in entries:
        report[name] = ln
    report["total"] = len(data)
    return report


def dump_sections(data: bytes) -> str:
    """Debug listing: id, name, offset, length and share of the file."""
    _, entries, _ = read_sections(data)
    lines = [f"{'id':>3}  {'section':<22}{'offset':>12}{'length':>12}{'share':>9}",
             f"{'-':>3}  {'header+table':<22}{0:>12}{HEADER.size + ENTRY.size * len(entries):>12}"
             f"{100.0 * (HEADER.size + ENTRY.size * len(entries)) / len(data):>8.2f}%"]
    for sid, name, off, ln in entries:
        lines.append(f"{sid:>3}  {name:<22}{off:>12}{ln:>12}{100.0 * ln / len(data):>8.2f}%")
    lines.append(f"{'':>3}  {'total':<22}{'':>12}{len(data):>12}{100.0:>8.2f}%")
    return "\n".join(lines)


def codes_section_bytes(q) -> int:
    """Expected length of a codes section: rows x payload (+ rows norm bytes)."""
    return q.rows * (row_payload_bytes(q) + (1 if q.norm_codebook is not None else 0))
