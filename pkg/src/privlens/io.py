"""File formats: tensor container, coefficient text, run config, telemetry, manifests.

TensorFile layout (all little-endian)::

    b"PLTF"  u16 version  u8 rank  rank x u32 dims  float32 payload (row-major)

Coefficient files hold a ``q=<int>`` header followed by ``q`` lines
``j,alpha``. Run configs are INI-style key-value text read with
:mod:`configparser`; the ``[privlens]`` section carries a format version.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import os
import struct
import subprocess
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .optics import OpticsConfig

MAGIC = b"PLTF"
TENSOR_VERSION = 1
CONFIG_VERSION = 1
_HEAD = struct.Struct("<4sHB")


class FormatError(ValueError):
    """A file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, path, message, line=None):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path, self.line = str(path), line


# ------------------------------------------------------------- TensorFile


def encode_tensor(array) -> bytes:
    a = np.asarray(array)
    if a.ndim > 255:
        raise ValueError("rank above 255 not representable")
    if not np.all(np.isfinite(a)):
        raise ValueError("tensor contains non-finite values")
    dims = struct.pack(f"<{a.ndim}I", *a.shape)
    return _HEAD.pack(MAGIC, TENSOR_VERSION, a.ndim) + dims + np.ascontiguousarray(a, dtype="<f4").tobytes()


def decode_tensor(data: bytes, path="<bytes>") -> np.ndarray:
    if len(data) < _HEAD.size:
        raise FormatError(path, "truncated header")
    magic, version, rank = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(path, f"bad magic {magic!r}")
    if version != TENSOR_VERSION:
        raise FormatError(path, f"unsupported tensor version {version}")
    off = _HEAD.size + 4 * rank
    if len(data) < off:
        raise FormatError(path, "truncated dims")
    dims = struct.unpack_from(f"<{rank}I", data, _HEAD.size)
    n = int(np.prod(dims, dtype=np.int64))
    if len(data) - off != 4 * n:
        raise FormatError(path, f"payload is {len(data) - off} bytes, expected {4 * n}")
    return np.frombuffer(data, dtype="<f4", offset=off).reshape(dims).astype(np.float32)


def write_tensor(path, array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes(), path)


# ------------------------------------------------------ coefficient files


def format_coefficients(alpha) -> str:
    alpha = np.asarray(alpha, dtype=float).ravel()
    lines = [f"q={alpha.size}"] + [f"{j},{a:.9g}" for j, a in enumerate(alpha, start=1)]
    return "\n".join(lines) + "\n"


def parse_coefficients(text: str, path="<string>") -> np.ndarray:
    rows = [(i, ln.strip()) for i, ln in enumerate(text.splitlines(), start=1)]
    rows = [(i, ln) for i, ln in rows if ln and not ln.startswith("#")]
    if not rows:
        raise FormatError(path, "empty coefficient file")
    i, head = rows[0]
    key, _, val = head.partition("=")
    if key.strip() != "q" or not val.strip().isdigit() or int(val) < 1:
        raise FormatError(path, f"expected header 'q=<int>', got {head!r}", i)
    q = int(val)
    if len(rows) - 1 != q:
        raise FormatError(path, f"header says q={q} but {len(rows) - 1} coefficient lines follow", i)
    alpha = np.zeros(q)
    for expect, (i, ln) in enumerate(rows[1:], start=1):
        parts = ln.split(",")
        try:
            j, a = int(parts[0]), float(parts[1])
        except (ValueError, IndexError):
            raise FormatError(path, f"expected 'j,alpha', got {ln!r}", i) from None
        if len(parts) != 2 or j != expect:
            raise FormatError(path, f"expected index {expect} as 'j,alpha', got {ln!r}", i)
        if not np.isfinite(a):
            raise FormatError(path, f"non-finite coefficient {parts[1]!r}", i)
        alpha[j - 1] = a
    return alpha


def write_coefficients(path, alpha) -> None:
    Path(path).write_text(format_coefficients(alpha))


def read_coefficients(path) -> np.ndarray:
    return parse_coefficients(Path(path).read_text(), path)


# ------------------------------------------------------------ run config

_DATA_DEFAULTS = {"n_train": 512, "n_test": 128, "master_seed": 0}


def _typed(value: str, kind):
    if kind is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind is tuple:
        return tuple(float(v) for v in value.split(","))
    return kind(value)


def _field_kinds(cls) -> dict:
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}


def _key_line(text: str, section: str, key: str):
    cur = None
    for i, ln in enumerate(text.splitlines(), start=1):
        s = ln.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
        elif cur == section and s.partition("=")[0].strip().lower() == key:
            return i
    return None


def parse_config(text: str, path="<string>"):
    """Parse run-config text into ``(TrainConfig, OpticsConfig, data_options)``."""
    from .trainer import TrainConfig

    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise FormatError(path, str(exc).splitlines()[0], line) from None
    if not cp.has_option("privlens", "version"):
        raise FormatError(path, "missing [privlens] version")
    version = cp.get("privlens", "version")
    if version.strip() != str(CONFIG_VERSION):
        raise FormatError(path, f"unsupported config version {version!r}", _key_line(text, "privlens", "version"))
    unknown = set(cp.sections()) - {"privlens", "train", "optics", "data"}
    if unknown:
        raise FormatError(path, f"unknown section(s) {sorted(unknown)}")

    def section(name, kinds):
        out = {}
        if not cp.has_section(name):
            return out
        for key, raw in cp.items(name):
            line = _key_line(text, name, key)
            if key not in kinds:
                raise FormatError(path, f"unknown option {key!r} in [{name}]", line)
            try:
                out[key] = _typed(raw, kinds[key])
            except ValueError as exc:
                raise FormatError(path, f"{name}.{key}: {exc}", line) from None
        return out

    train = section("train", _field_kinds(TrainConfig))
    optics = section("optics", _field_kinds(OpticsConfig))
    data = {**_DATA_DEFAULTS, **section("data", {k: int for k in _DATA_DEFAULTS})}
    try:
        return TrainConfig(**train), OpticsConfig(**optics), data
    except ValueError as exc:
        raise FormatError(path, str(exc)) from None


def read_config(path):
    return parse_config(Path(path).read_text(), path)


def format_config(train=None, optics=None, data=None) -> str:
    from .trainer import TrainConfig

    train = train or TrainConfig()
    optics = optics or OpticsConfig()
    data = {**_DATA_DEFAULTS, **(data or {})}

    def fmt(v):
        if isinstance(v, tuple):
            return ",".join(f"{x:.9g}" for x in v)
        if isinstance(v, float):
            return f"{v:.9g}"
        return str(v).lower() if isinstance(v, bool) else str(v)

    out = ["[privlens]", f"version = {CONFIG_VERSION}", ""]
    for name, d in (("train", asdict(train)), ("optics", asdict(optics)), ("data", data)):
        out.append(f"[{name}]")
        out += [f"{k} = {fmt(v)}" for k, v in d.items()]
        out.append("")
    return "\n".join(out)


# ------------------------------------------------------ telemetry / JSONL


def write_telemetry(path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if k != "epoch" else int(v)) for k, v in r.items() if k in columns})


def read_telemetry(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in csv.DictReader(fh)]


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for i, ln in enumerate(fh, start=1):
            if ln.strip():
                try:
                    out.append(json.loads(ln))
                except json.JSONDecodeError as exc:
                    raise FormatError(path, exc.msg, i) from None
    return out


# --------------------------------------------------------------- datasets


def save_split(directory, split, name: str) -> list[dict]:
    """Write each clip as a TensorFile; return manifest records."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(len(split)):
        fname = f"{name}_{i:05d}.pltf"
        write_tensor(d / fname, split.videos[i])
        records.append({
            "split": name,
            "seed": int(split.seeds[i]),
            "action": int(split.actions[i]),
            "attributes": [int(a) for a in split.attributes[i]],
            "file": fname,
        })
    return records


def save_dataset(directory, dataset) -> Path:
    d = Path(directory)
    records = save_split(d, dataset.train, "train") + save_split(d, dataset.test, "test")
    write_jsonl(d / "manifest.jsonl", records)
    return d / "manifest.jsonl"


def load_dataset(directory):
    from .synthdata import Dataset, Split

    d = Path(directory)
    records = read_jsonl(d / "manifest.jsonl")
    splits = {}
    for name in ("train", "test"):
        rs = [r for r in records if r.get("split") == name]
        if not rs:
            raise FormatError(d / "manifest.jsonl", f"no {name} records")
        splits[name] = Split(
            np.stack([read_tensor(d / r["file"]) for r in rs]),
            np.array([r["action"] for r in rs], dtype=int),
            np.array([r["attributes"] for r in rs], dtype=int),
            np.array([r["seed"] for r in rs], dtype=np.int64),
        )
    return Dataset(splits["train"], splits["test"], master_seed=-1)


# ------------------------------------------------------------ checkpoints


def save_network(directory, net) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k, v in net.params.items():
        write_tensor(d / f"{k}.pltf", v)
    entry = {"class": type(net).__name__, "kwargs": net.init_kwargs(), "layers": {k: list(v.shape) for k, v in net.params.items()}}
    (d / "manifest.json").write_text(json.dumps(entry, indent=2, sort_keys=True) + "\n")
    return entry


def load_network(directory):
    from . import models

    d = Path(directory)
    entry = json.loads((d / "manifest.json").read_text())
    cls = getattr(models, entry["class"])
    params = {k: read_tensor(d / f"{k}.pltf").astype(float) for k in entry["layers"]}
    kwargs = dict(entry["kwargs"])
    if "kernels" in kwargs:
        kwargs["kernels"] = tuple(kwargs["kernels"])
    return cls(params=params, **kwargs)


# ------------------------------------------------------------- provenance


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def write_provenance(directory, command: str, **info) -> Path:
    """``provenance.json`` with the command, inputs' hashes, seeds and code version."""
    from . import __version__

    record = {"command": command, "privlens_version": __version__, "git": git_describe(), **info}
    path = Path(directory) / "provenance.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if isinstance(o, os.PathLike):
        return os.fspath(o)
    raise TypeError(f"not serialisable: {type(o)}")
