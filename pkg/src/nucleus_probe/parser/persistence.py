"""Model container: versioned header, line-oriented metadata, raw float64 arrays.

Layout::

    NUCLEUS-PROBE-MODEL <format version>
    <key>\t<json value>          (one per line)
    ...
    param\t<name>\t<d1,d2,...>   (declared in storage order)
    sha256\t<hex digest of the array block>
    bytes\t<length of the array block>
    END
    <little-endian float64 arrays, concatenated in declared order>
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .. import __version__
from .model import ParserConfig, ParserModel, Vocab

MAGIC = "NUCLEUS-PROBE-MODEL"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


class IntegrityError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


def save_model(model: ParserModel, path) -> None:
    blobs = []
    lines = [f"{MAGIC} {FORMAT_VERSION}"]
    meta = {
        "toolkit_version": __version__,
        "config": model.config.to_dict(),
        "words": model.vocab.words,
        "word_freq": model.vocab.word_freq,
        "chars": model.vocab.chars,
        "labels": model.vocab.labels,
    }
    for k, v in meta.items():
        lines.append(f"{k}\t{json.dumps(v, ensure_ascii=False, sort_keys=True)}")
    for name, t in model.store:
        t = t.detach()
        lines.append(f"param\t{name}\t{','.join(str(d) for d in t.shape)}")
        blobs.append(t.numpy().astype("<f8", copy=False).tobytes(order="C"))
    block = b"".join(blobs)
    lines.append(f"sha256\t{hashlib.sha256(block).hexdigest()}")
    lines.append(f"bytes\t{len(block)}")
    lines.append("END")
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8") + block)


def load_model(path) -> ParserModel:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    header = raw[:nl].decode("utf-8", "replace") if nl >= 0 else ""
    parts = header.split(" ")
    if len(parts) != 2 or parts[0] != MAGIC:
        raise ContainerError(f"{path}: not a model container")
    if parts[1] != str(FORMAT_VERSION):
        raise VersionError(f"{path}: container format version {parts[1]}, this toolkit reads version {FORMAT_VERSION}")
    end = raw.find(b"\nEND\n")
    if end < 0:
        raise IntegrityError(f"{path}: metadata block is truncated")
    meta: dict = {}
    params: list[tuple[str, tuple[int, ...]]] = []
    for line in raw[nl + 1:end].decode("utf-8").split("\n"):
        fields = line.split("\t")
        if fields[0] == "param":
            shape = tuple(int(d) for d in fields[2].split(",")) if fields[2] else ()
            params.append((fields[1], shape))
        elif fields[0] in ("sha256", "bytes"):
            meta[fields[0]] = fields[1]
        else:
            meta[fields[0]] = json.loads(fields[1])
    block = raw[end + len(b"\nEND\n"):]
    if len(block) != int(meta.get("bytes", -1)):
        raise IntegrityError(f"{path}: expected {meta.get('bytes')} bytes of parameters, found {len(block)}")
    if hashlib.sha256(block).hexdigest() != meta.get("sha256"):
        raise IntegrityError(f"{path}: parameter checksum mismatch")
    vocab = Vocab(meta["words"], meta["word_freq"], meta["chars"], meta["labels"])
    model = ParserModel(vocab, ParserConfig.from_dict(meta["config"]), init=False)
    offset = 0
    for name, shape in params:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(block, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += 8 * count
        model.store.add(name, shape, const=0.0)
        with torch.no_grad():
            model.store[name].copy_(torch.from_numpy(arr.astype(np.float64)))
    return model
