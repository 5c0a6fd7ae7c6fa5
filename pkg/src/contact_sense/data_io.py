"""Recording CSV + sidecar files, binary dataset caches and model containers.

Byte layouts are documented in docs/formats.md.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import struct
from pathlib import Path

import numpy as np
from filelock import FileLock

from .models import ModelState, spec_from_dict, spec_to_dict
from .preprocessing import PreprocessingParams
from .types import NUM_JOINTS, NUM_FEATURES, PERIOD_MS, WINDOW_LEN, ClassLabel, LabeledDataset, Recording, Window


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class StaleCacheError(DataError):
    pass


GROUPS = (("q_des", "q_desired"), ("q_act", "q_actual"), ("qd_des", "qdot_desired"),
          ("qd_act", "qdot_actual"), ("tau", "tau_J"))
CSV_COLUMNS = ["t_ms"] + [f"{prefix}_{j}" for prefix, _ in GROUPS for j in range(NUM_JOINTS)] + ["contact"]
SIDECAR_SUFFIX = ".meta.json"


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + SIDECAR_SUFFIX)


def _lock(path: Path) -> FileLock:
    return FileLock(str(path) + ".lock")


# -- recordings -------------------------------------------------------------------------------
def save_recording(r: Recording, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [r.q_desired, r.q_actual, r.qdot_desired, r.qdot_actual, r.tau_J]
    block = np.concatenate(cols, axis=1)
    with _lock(path):
        with open(path, "w", newline="") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for t, row, c in zip(r.t_ms.tolist(), block.tolist(), r.contact.tolist()):
                fh.write(f"{t}," + ",".join(map(repr, row)) + f",{int(c)}\n")
        meta = {"recording_id": r.recording_id, "label": r.label.value, "motion_id": r.motion_id,
                "setup_id": r.setup_id}
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_recording(path, column_map: dict[str, str] | None = None) -> Recording:
    """Read and validate a recording CSV and its sidecar.

    ``column_map`` maps canonical column names to the names used in the file.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    names = {c: (column_map or {}).get(c, c) for c in CSV_COLUMNS}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [names[c] for c in CSV_COLUMNS if names[c] not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        pos = [header.index(names[c]) for c in CSV_COLUMNS]
        t_list, rows, flags = [], [], []
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(raw)}")
            try:
                t = int(raw[pos[0]])
                vals = [float(raw[p]) for p in pos[1:-1]]
                flag = raw[pos[-1]].strip()
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if flag not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: contact must be 0 or 1, got {flag!r}")
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{lineno}: non-finite value")
            if t_list and t - t_list[-1] != PERIOD_MS:
                raise DataError(
                    f"{path}:{lineno}: timestamp {t} ms does not follow {t_list[-1]} ms by {PERIOD_MS} ms"
                )
            t_list.append(t)
            rows.append(vals)
            flags.append(flag == "1")
    if not t_list:
        raise DataError(f"{path}: no samples")
    meta_path = sidecar_path(path)
    if not meta_path.exists():
        raise DataError(f"{meta_path}: sidecar metadata file not found")
    try:
        meta = json.loads(meta_path.read_text())
        label = ClassLabel.parse(meta["label"])
    except (ValueError, KeyError) as exc:
        raise DataError(f"{meta_path}: {exc}") from None
    block = np.array(rows, dtype=np.float64)
    parts = {attr: block[:, i * NUM_JOINTS:(i + 1) * NUM_JOINTS] for i, (_, attr) in enumerate(GROUPS)}
    return Recording(
        recording_id=str(meta.get("recording_id", path.stem)),
        t_ms=np.array(t_list, dtype=np.int64),
        contact=np.array(flags, dtype=bool),
        label=label,
        motion_id=str(meta.get("motion_id", "")),
        setup_id=str(meta.get("setup_id", "")),
        **parts,
    )


def save_recordings(recordings, directory) -> list[Path]:
    directory = Path(directory)
    return [save_recording(r, directory / f"{r.recording_id}.csv") for r in recordings]


def recording_paths(directory) -> list[Path]:
    return sorted(p for p in Path(directory).glob("*.csv"))


def load_recordings(directory, column_map: dict | None = None) -> list[Recording]:
    paths = recording_paths(directory)
    if not paths:
        raise DataError(f"{directory}: no recording files")
    return [load_recording(p, column_map) for p in paths]


# -- dataset cache ----------------------------------------------------------------------------------
CACHE_MAGIC = b"CSDSET\x00\x01"
MODEL_MAGIC = b"CSMODEL\x01"
FORMAT_VERSION = 1


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def source_digests(paths) -> list[str]:
    """Digests of each recording file and its sidecar, in sorted path order."""
    out = []
    for p in sorted(Path(p) for p in paths):
        out.append(file_digest(p))
        side = sidecar_path(p)
        if side.exists():
            out.append(file_digest(side))
    return out


def cache_key(params: PreprocessingParams, digests: list[str]) -> str:
    payload = json.dumps({"params": params.as_dict(), "sources": list(digests)}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def _write_blob(fh, header: dict, array: np.ndarray, magic: bytes) -> None:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    fh.write(magic)
    fh.write(struct.pack("<II", FORMAT_VERSION, len(head)))
    fh.write(head)
    fh.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def cache_dataset(dataset: LabeledDataset, path, params: PreprocessingParams, sources) -> str:
    """Write the dataset; returns the cache key stored in the header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    key = cache_key(params, source_digests(sources))
    header = {
        "key": key,
        "params": params.as_dict(),
        "provenance": dataset.provenance,
        "count": len(dataset),
        "windows": [[w.label.index, w.t_end, w.source[0], w.source[1], w.source[2]] for w in dataset.windows],
    }
    with _lock(path):
        with open(path, "wb") as fh:
            _write_blob(fh, header, dataset.features(), CACHE_MAGIC)
    return key


def _read_blob(path: Path, magic: bytes) -> tuple[dict, bytes]:
    data = path.read_bytes()
    if data[:8] != magic:
        raise DataError(f"{path}: bad magic bytes")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    header = json.loads(data[16:16 + hlen].decode())
    return header, data[16 + hlen:]


def load_cached(path, params: PreprocessingParams | None = None, sources=None) -> LabeledDataset:
    """Load a cache; when params/sources are given the stored key must match them."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: cache not found")
    header, body = _read_blob(path, CACHE_MAGIC)
    if params is not None or sources is not None:
        if params is None or sources is None:
            raise ValueError("params and sources must be given together")
        if header["key"] != cache_key(params, source_digests(sources)):
            raise StaleCacheError(f"{path}: stale cache (parameters or source files changed)")
    n = header["count"]
    feats = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if feats.size != n * WINDOW_LEN * NUM_FEATURES:
        raise DataError(f"{path}: truncated feature block")
    feats = feats.reshape(n, WINDOW_LEN, NUM_FEATURES)
    windows = tuple(
        Window(feats[i], ClassLabel.from_index(lab), int(t_end), (str(rid), int(ci), int(wi)))
        for i, (lab, t_end, rid, ci, wi) in enumerate(header["windows"])
    )
    return LabeledDataset(windows, header["provenance"])


# -- model container ---------------------------------------------------------------------------------
def _header_lines(d: dict) -> bytes:
    return "".join(f"{k}={json.dumps(d[k], sort_keys=True)}\n" for k in sorted(d)).encode()


def save_model(state: ModelState, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {f"spec.{k}": v for k, v in spec_to_dict(state.spec).items()}
    header["rng_seed"] = state.rng_seed
    header.update({f"meta.{k}": v for k, v in state.meta.items()})
    head = _header_lines(header)
    parts = [MODEL_MAGIC, struct.pack("<II", FORMAT_VERSION, len(head)), head,
             struct.pack("<I", len(state.parameters))]
    for name in sorted(state.parameters):
        arr = np.ascontiguousarray(state.parameters[name], dtype="<f8")
        enc = name.encode()
        parts.append(struct.pack("<H", len(enc)) + enc + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    with _lock(path):
        path.write_bytes(b"".join(parts))
    return path


def load_model(path) -> ModelState:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: model file not found")
    data = path.read_bytes()
    if data[:8] != MODEL_MAGIC:
        raise DataError(f"{path}: bad magic bytes")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    header = {}
    for line in data[16:16 + hlen].decode().splitlines():
        key, _, value = line.partition("=")
        header[key] = json.loads(value)
    off = 16 + hlen
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).astype(np.float64).reshape(shape)
        off += 8 * size
    spec = spec_from_dict({k[5:]: v for k, v in header.items() if k.startswith("spec.")})
    meta = {k[5:]: v for k, v in header.items() if k.startswith("meta.")}
    return ModelState(spec, params, int(header.get("rng_seed", 0)), meta)


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path
