"""Checkpoint directory format: text manifest plus raw little-endian blobs.

Layout::

    <dir>/manifest.txt   key=value header, then one line per parameter:
                         name<TAB>shape<TAB>dtype<TAB>file
    <dir>/<name>.bin     flat little-endian values, C order
    <dir>/vocab.txt      tokenizer vocabulary (one token per line)
    <dir>/config.yaml    effective run configuration (written by the trainer)
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from glocal.encoders import GlobalLocalModel, Vocabulary

FORMAT_NAME = "glocal-checkpoint"
FORMAT_VERSION = 1

_DTYPE_TAGS = {"float64": "<f8", "float32": "<f4"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: GlobalLocalModel, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = model.parameters()
    precision = model.config.dtype
    tag = _DTYPE_TAGS[precision]
    lines = [
        f"format={FORMAT_NAME}",
        f"version={FORMAT_VERSION}",
        f"precision={precision}",
        f"parameters={len(params)}",
    ]
    for p in params:
        fname = p.name + ".bin"
        (out_dir / fname).write_bytes(np.ascontiguousarray(p.data).astype(tag).tobytes())
        shape = ",".join(str(s) for s in p.data.shape) or "scalar"
        lines.append(f"{p.name}\t{shape}\t{tag}\t{fname}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    model.vocab.save(out_dir / "vocab.txt")
    return out_dir


def _parse_manifest(path: Path) -> tuple[dict, list[tuple[str, tuple[int, ...], str, str]]]:
    header: dict[str, str] = {}
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if "\t" not in line:
            key, _, value = line.partition("=")
            header[key] = value
            continue
        name, shape_s, dtype, fname = line.split("\t")
        shape = () if shape_s == "scalar" else tuple(int(v) for v in shape_s.split(","))
        entries.append((name, shape, dtype, fname))
    if header.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path}: not a {FORMAT_NAME} manifest")
    if int(header.get("version", -1)) != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    if len(entries) != int(header.get("parameters", -1)):
        raise CheckpointError(f"{path}: manifest lists {len(entries)} parameters, header says {header.get('parameters')}")
    return header, entries


def load_parameters(model: GlobalLocalModel, ckpt_dir: str | Path) -> GlobalLocalModel:
    """Fill a freshly built model's parameters from a checkpoint directory."""
    ckpt_dir = Path(ckpt_dir)
    header, entries = _parse_manifest(ckpt_dir / "manifest.txt")
    if header["precision"] != model.config.dtype:
        raise CheckpointError(
            f"checkpoint precision {header['precision']} does not match model {model.config.dtype}"
        )
    by_name = {p.name: p for p in model.parameters()}
    seen = set()
    for name, shape, dtype, fname in entries:
        if name not in by_name:
            raise CheckpointError(f"checkpoint parameter {name!r} unknown to this model")
        raw = np.frombuffer((ckpt_dir / fname).read_bytes(), dtype=dtype)
        arr = raw.reshape(shape).astype(model.config.np_dtype)
        param = by_name[name]
        if param.data.shape != arr.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arr.shape} vs model shape {param.data.shape}")
        param.data = arr.copy()
        seen.add(name)
    missing = set(by_name) - seen
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(missing)}")
    return model


def load_vocab(ckpt_dir: str | Path) -> Vocabulary:
    return Vocabulary.load(Path(ckpt_dir) / "vocab.txt")
