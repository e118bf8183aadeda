"""File formats: tensors, dataset manifests, model checkpoints, loss CSVs and
PGM images.

Tensor file layout (all integers little-endian)::

    offset  size     field
    0       4        magic b"SNTF"
    4       4        format version (uint32, currently 1)
    8       4        mode count n (uint32, >= 1)
    12      8 * n    dims (uint64 each)
    12+8n   8 * prod payload, float64 little-endian, row-major

A model checkpoint is a text index followed by one tensor frame (1-mode) per
factor vector, in index order. See :func:`save_model`.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .model import ModelState, StratifiedDataset

MAGIC = b"SNTF"
TENSOR_VERSION = 1
MODEL_MAGIC = "SNTF-MODEL"
MODEL_VERSION = 1
_MAX_BYTES = 1 << 62


class FormatError(ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def _atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(x) -> bytes:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 1:
        raise ValueError("tensors need at least one mode")
    header = MAGIC + struct.pack("<II", TENSOR_VERSION, x.ndim)
    header += struct.pack(f"<{x.ndim}Q", *x.shape)
    return header + np.ascontiguousarray(x, dtype="<f8").tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one tensor frame at ``offset``; return it and the end offset."""
    if len(buf) - offset < 12:
        raise FormatError(
            f"truncated header: need 12 bytes, have {len(buf) - offset}", offset
        )
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[offset:offset + 4])!r}", offset)
    version, n = struct.unpack_from("<II", buf, offset + 4)
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported format version {version}", offset + 4)
    if n < 1:
        raise FormatError("mode count must be >= 1", offset + 8)
    dims_at = offset + 12
    if len(buf) - dims_at < 8 * n:
        raise FormatError(
            f"truncated dims: need {8 * n} bytes, have {len(buf) - dims_at}", dims_at
        )
    dims = struct.unpack_from(f"<{n}Q", buf, dims_at)
    count = 1
    for d in dims:
        count *= d
        if count * 8 > _MAX_BYTES:
            raise FormatError(f"dims {dims} overflow the payload size limit", dims_at)
    data_at = dims_at + 8 * n
    expected = 8 * count
    actual = len(buf) - data_at
    if actual < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, found {actual}", data_at
        )
    values = np.frombuffer(buf, dtype="<f8", count=count, offset=data_at)
    return values.astype(np.float64).reshape(dims), data_at + expected


def write_tensor(path, x):
    _atomic_write(path, encode_tensor(x))


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    x, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(
            f"{len(buf) - end} trailing bytes after payload in {path}", end
        )
    return x


def write_manifest(path, tensor_paths):
    path = Path(path)
    lines = ["# one tensor file per stratum, in stratum order"]
    for p in tensor_paths:
        p = Path(p)
        try:
            p = p.relative_to(path.parent)
        except ValueError:
            pass
        lines.append(p.as_posix())
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def read_manifest(path) -> list[Path]:
    path = Path(path)
    entries = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        entries.append(path.parent / line)
    if not entries:
        raise FormatError(f"manifest {path} lists no strata")
    return entries


def load_dataset(manifest) -> StratifiedDataset:
    """Load the strata listed in a manifest, in line order."""
    strata = []
    for k, p in enumerate(read_manifest(manifest)):
        x = read_tensor(p)
        if strata:
            ref = strata[0]
            if x.ndim != ref.ndim or x.shape[1:] != ref.shape[1:]:
                raise FormatError(
                    f"stratum {k + 1} ({p}) has shape {x.shape}, which does not share "
                    f"the trailing dims of stratum 1 shape {ref.shape}"
                )
        strata.append(x)
    return StratifiedDataset(strata)


def save_dataset(out_dir, dataset: StratifiedDataset, stem: str = "stratum") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, a in enumerate(dataset):
        p = out_dir / f"{stem}_{i:03d}.sntf"
        write_tensor(p, a)
        paths.append(p)
    manifest = out_dir / "manifest.txt"
    write_manifest(manifest, paths)
    return manifest


def to_pixels(image, scale="auto") -> np.ndarray:
    """Map a 2-mode non-negative array to 8-bit gray levels.

    ``scale="auto"`` maps ``[0, max]`` onto ``[0, 255]``; a number is used as
    the fixed maximum and values above it are clamped. Rounding is half-up.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM export needs a 2-mode tensor, got shape {image.shape}")
    if np.any(image < 0):
        raise ValueError("PGM export needs non-negative values")
    peak = float(image.max()) if scale == "auto" else float(scale)
    if peak <= 0:
        return np.zeros(image.shape, dtype=np.uint8)
    levels = np.floor(np.clip(image / peak, 0.0, 1.0) * 255.0 + 0.5)
    return levels.astype(np.uint8)


def export_pgm(image, path, scale="auto"):
    """Write a binary (P5) 8-bit PGM; rows follow the first mode."""
    pixels = to_pixels(image, scale)
    h, w = pixels.shape
    _atomic_write(path, f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise FormatError(f"{path} is not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def export_loss_csv(trace, path):
    """Write ``iteration,objective,seconds`` rows; objectives keep 17 digits."""
    if len(trace) == 0:
        raise ValueError("cannot export an empty loss trace")
    rows = ["iteration,objective,seconds"]
    for it, value, sec in trace:
        rows.append(f"{it},{value:.17g},{sec:.6f}")
    try:
        _atomic_write(path, ("\n".join(rows) + "\n").encode())
    except OSError as exc:
        raise OSError(f"cannot write loss CSV {path}: {exc}") from exc


def read_loss_csv(path) -> list[tuple[int, float, float]]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "iteration,objective,seconds":
        raise FormatError(f"{path} lacks the loss CSV header")
    out = []
    for line in lines[1:]:
        it, value, sec = line.split(",")
        out.append((int(it), float(value), float(sec)))
    return out


def save_model(path, model: ModelState):
    """Write a checkpoint.

    The text index starts with ``SNTF-MODEL 1``, then ``shape`` and
    ``strata_ranks`` lines, then one ``role stratum rank mode length`` line per
    factor vector (``-`` as stratum for topics, modes numbered from 1), then
    ``end``. The vectors follow as 1-mode tensor frames in index order.
    """
    index = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        f"shape {model.n_strata} {model.topic_rank} {model.ndim}",
        "strata_ranks " + " ".join(str(r) for r in model.strata_ranks),
    ]
    frames = []
    for role, i, mode, mat in model.arrays():
        for rank in range(mat.shape[1]):
            stratum = "-" if i is None else str(i)
            index.append(f"{role} {stratum} {rank} {mode} {mat.shape[0]}")
            frames.append(encode_tensor(mat[:, rank]))
    index.append("end")
    _atomic_write(path, ("\n".join(index) + "\n").encode() + b"".join(frames))


def _require(cond):
    if not cond:
        raise ValueError


def load_model(path) -> ModelState:
    buf = Path(path).read_bytes()
    pos = 0
    lines = []
    while True:
        nl = buf.find(b"\n", pos)
        if nl < 0:
            raise FormatError(f"{path}: index not terminated by 'end'", pos)
        line = buf[pos:nl].decode("ascii", errors="replace")
        pos = nl + 1
        lines.append(line)
        if line == "end":
            break

    def bad(lineno, why):
        return FormatError(f"{path}: index line {lineno}: {why}: {lines[lineno - 1]!r}")

    head = lines[0].split()
    if head != [MODEL_MAGIC, str(MODEL_VERSION)]:
        raise bad(1, "not a model checkpoint")
    try:
        tag, s, r, n = lines[1].split()
        s, r, n = int(s), int(r), int(n)
        _require(tag == "shape" and s >= 1 and r >= 1 and n >= 2)
    except ValueError:
        raise bad(2, "malformed shape line") from None
    try:
        parts = lines[2].split()
        _require(parts[0] == "strata_ranks" and len(parts) == s + 1)
        ranks = [int(v) for v in parts[1:]]
        _require(min(ranks) >= 0)
    except (ValueError, IndexError):
        raise bad(3, "malformed strata_ranks line") from None

    strata = [[{} for _ in range(n - 1)] for _ in range(s)]
    codings = [{} for _ in range(s)]
    topics = [{} for _ in range(n - 1)]
    entries = []
    for lineno in range(4, len(lines)):
        fields = lines[lineno - 1].split()
        try:
            role, stratum, rank, mode, length = fields
            rank, mode, length = int(rank), int(mode), int(length)
            if role == "topic":
                _require(stratum == "-" and 2 <= mode <= n and 0 <= rank < r)
                slot = topics[mode - 2]
            elif role == "coding":
                i = int(stratum)
                _require(0 <= i < s and mode == 1 and 0 <= rank < r)
                slot = codings[i]
            elif role == "strata":
                i = int(stratum)
                _require(0 <= i < s and 2 <= mode <= n and 0 <= rank < ranks[i])
                slot = strata[i][mode - 2]
            else:
                raise ValueError(role)
            _require(rank not in slot and length >= 1)
        except ValueError:
            raise bad(lineno, "malformed or duplicate entry") from None
        slot[rank] = None
        entries.append((lineno, slot, rank, length))

    for lineno, slot, rank, length in entries:
        at = pos
        vec, pos = decode_tensor(buf, pos)
        if vec.shape != (length,):
            raise FormatError(
                f"{path}: payload for index line {lineno} has shape {vec.shape}, "
                f"index says ({length},)", at
            )
        slot[rank] = vec
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} bytes after the last entry", pos)

    def stack(slot, count, what, length=None):
        if sorted(slot) != list(range(count)):
            raise FormatError(f"{path}: {what} has entries {sorted(slot)}, expected {count}")
        if count == 0:
            return np.zeros((length, 0))
        cols = [slot[k] for k in range(count)]
        if len({c.shape for c in cols}) != 1:
            raise FormatError(f"{path}: {what} vectors differ in length")
        return np.stack(cols, axis=1)

    topic_mats = [stack(topics[t], r, f"topic mode {t + 2}") for t in range(n - 1)]
    dims = [h.shape[0] for h in topic_mats]
    coding_mats = [stack(codings[i], r, f"coding of stratum {i}") for i in range(s)]
    strata_mats = [
        [stack(strata[i][t], ranks[i], f"strata stratum {i} mode {t + 2}", dims[t])
         for t in range(n - 1)]
        for i in range(s)
    ]
    for i in range(s):
        for t in range(n - 1):
            if strata_mats[i][t].shape[0] != dims[t]:
                raise FormatError(f"{path}: strata vectors of stratum {i} mode {t + 2} "
                                  f"have length {strata_mats[i][t].shape[0]}, topics {dims[t]}")
    return ModelState(strata_mats, coding_mats, topic_mats)
