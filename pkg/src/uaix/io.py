"""Binary tensor container and save/load of weights, posteriors, relevance sets and datasets.

Layout (all integers little-endian)::

    b"UAIX"  u16 version  u32 entry_count
    per entry:
        u16 name_len, name (UTF-8)
        u8 dtype tag, u8 rank, rank x u32 dims
        payload (product(dims) x itemsize bytes, little-endian)
        u32 CRC32 of everything from name_len to the end of the payload

Every file carries a ``__meta__`` entry (UTF-8 JSON stored as uint8) saying
which object it holds.
"""
import json
import os
import struct
import zlib

import numpy as np

from .errors import ContainerError
from .net import Network, WeightSet
from .posterior import DiagonalLaplace, Ensemble, MCDropout
from .synth import Dataset
from .uai import RelevanceSet

MAGIC = b"UAIX"
VERSION = 1
META = "__meta__"

DTYPES = {1: np.dtype("<f4"), 2: np.dtype("u1"), 3: np.dtype("<i8"), 4: np.dtype("<u8")}
TAGS = {dt: tag for tag, dt in DTYPES.items()}


def _tag_for(a):
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
    for tag, d in DTYPES.items():
        if d == dt:
            return tag
    raise ContainerError(f"unsupported dtype {a.dtype}")


def write_container(path, entries):
    """Write ``entries`` (name -> array, in order) atomically to ``path``."""
    out = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    seen = set()
    for name, a in entries.items():
        if name in seen:
            raise ContainerError("duplicate name", name)
        seen.add(name)
        a = np.asarray(a)
        tag = _tag_for(a)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or a.ndim > 255:
            raise ContainerError("name or rank too large", name)
        body = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", tag, a.ndim)
        body += struct.pack(f"<{a.ndim}I", *a.shape)
        body += np.ascontiguousarray(a, dtype=DTYPES[tag]).tobytes()
        out += [body, struct.pack("<I", zlib.crc32(body))]
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(b"".join(out))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n, what, entry=None):
        if self.pos + n > len(self.raw):
            raise ContainerError(f"truncated file while reading {what}", entry)
        b = self.raw[self.pos:self.pos + n]
        self.pos += n
        return b


def read_container(path):
    """Read a container into an ordered dict of read-only arrays."""
    with open(path, "rb") as f:
        raw = f.read()
    r = _Reader(raw)
    if r.take(4, "magic") != MAGIC:
        raise ContainerError(f"{path}: not a UAIX container")
    version, count = struct.unpack("<HI", r.take(6, "header"))
    if version != VERSION:
        raise ContainerError(f"{path}: format version {version}, this reader supports {VERSION}")
    entries = {}
    for k in range(count):
        start = r.pos
        (nlen,) = struct.unpack("<H", r.take(2, f"entry {k} name length"))
        name = r.take(nlen, f"entry {k} name").decode("utf-8")
        tag, rank = struct.unpack("<BB", r.take(2, "dtype and rank", name))
        if tag not in DTYPES:
            raise ContainerError(f"unknown dtype tag {tag}", name)
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "dims", name))
        nbytes = int(np.prod(dims, dtype=np.int64)) * DTYPES[tag].itemsize
        payload = r.take(nbytes, "payload", name)
        (crc,) = struct.unpack("<I", r.take(4, "checksum", name))
        if zlib.crc32(raw[start:r.pos - 4]) != crc:
            raise ContainerError("checksum mismatch", name)
        if name in entries:
            raise ContainerError("duplicate name", name)
        a = np.frombuffer(payload, dtype=DTYPES[tag]).reshape(dims)
        entries[name] = a
    if r.pos != len(raw):
        raise ContainerError(f"{path}: {len(raw) - r.pos} trailing bytes")
    return entries


def _meta_array(meta):
    return np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def read_meta(entries):
    if META not in entries:
        raise ContainerError("missing metadata", META)
    return json.loads(bytes(entries[META]).decode("utf-8"))


# ---------------------------------------------------------------------------
# objects
# ---------------------------------------------------------------------------


def _put_weights(entries, w, prefix=""):
    for name, a in w.named_arrays():
        entries[prefix + name] = a


def _get_weights(entries, prefix=""):
    params = {}
    for name, a in entries.items():
        if not name.startswith(prefix + "layer"):
            continue
        rest = name[len(prefix) + 5:]
        if "/" in rest:
            idx, part = rest.split("/", 1)
            if idx.isdigit() and part in ("weight", "bias"):
                params.setdefault(int(idx), {})[part] = a
    try:
        return WeightSet({i: (p["weight"], p["bias"]) for i, p in params.items()})
    except KeyError as e:
        raise ContainerError(f"layer without {e.args[0]}", prefix or None) from None


def save(path, obj, network=None, extra=None):
    """Save a WeightSet, posterior, RelevanceSet or Dataset; ``network`` is stored alongside if given."""
    meta = {"extra": extra or {}}
    if network is not None:
        meta["network"] = network.to_dict()
    entries = {}
    if isinstance(obj, WeightSet):
        meta["kind"] = "weights"
        _put_weights(entries, obj)
    elif isinstance(obj, Ensemble):
        meta.update(kind="posterior", variant=obj.tag, members=len(obj.members))
        for m, w in enumerate(obj.members):
            _put_weights(entries, w, f"member{m}/")
    elif isinstance(obj, MCDropout):
        meta.update(kind="posterior", variant=obj.tag, rates={str(k): v for k, v in obj.rates.items()})
        _put_weights(entries, obj.map_weights, "map/")
    elif isinstance(obj, DiagonalLaplace):
        meta.update(kind="posterior", variant=obj.tag)
        _put_weights(entries, obj.map_weights, "map/")
        _put_weights(entries, obj.variance, "variance/")
    elif isinstance(obj, RelevanceSet):
        meta.update(
            kind="relevance_set", method=obj.method, posterior=obj.posterior,
            class_index=obj.class_index, normalization=obj.normalization,
        )
        entries["samples"] = obj.samples
        if obj.x is not None:
            entries["x"] = obj.x
        entries["seeds"] = np.array([s & (2**64 - 1) for s in obj.seeds], dtype="<u8")
        entries["seed_is_set"] = np.array([s >= 0 for s in obj.seeds], dtype=np.uint8)
        entries["members"] = np.array(obj.members, dtype="<i8")
    elif isinstance(obj, Dataset):
        meta["kind"] = "dataset"
        entries["images"] = np.asarray(obj.images, dtype=np.float32)
        entries["labels"] = np.asarray(obj.labels, dtype="<i8")
        if obj.masks is not None:
            entries["masks"] = np.asarray(obj.masks, dtype=np.uint8)
    else:
        raise TypeError(f"cannot save {type(obj).__name__}")
    write_container(path, {META: _meta_array(meta), **entries})


def load_with_meta(path):
    """(object, metadata dict) from a file written by ``save``."""
    entries = read_container(path)
    meta = read_meta(entries)
    kind = meta.get("kind")
    if kind == "weights":
        obj = _get_weights(entries)
    elif kind == "posterior":
        variant = meta["variant"]
        if variant == Ensemble.tag:
            obj = Ensemble([_get_weights(entries, f"member{m}/") for m in range(meta["members"])])
        elif variant == MCDropout.tag:
            obj = MCDropout(_get_weights(entries, "map/"), {int(k): v for k, v in meta["rates"].items()})
        elif variant == DiagonalLaplace.tag:
            obj = DiagonalLaplace(_get_weights(entries, "map/"), _get_weights(entries, "variance/"))
        else:
            raise ContainerError(f"unknown posterior variant {variant!r}", META)
    elif kind == "relevance_set":
        seeds = tuple(int(s) if ok else -1 for s, ok in zip(entries["seeds"], entries["seed_is_set"]))
        obj = RelevanceSet(
            entries["samples"], entries.get("x"), meta["method"], meta["posterior"], meta["class_index"],
            seeds, tuple(int(m) for m in entries["members"]), meta["normalization"],
        )
    elif kind == "dataset":
        obj = Dataset(
            np.array(entries["images"]), np.array(entries["labels"], dtype=np.int64),
            np.array(entries["masks"]) if "masks" in entries else None,
        )
    else:
        raise ContainerError(f"unknown object kind {kind!r}", META)
    return obj, meta


def load(path):
    return load_with_meta(path)[0]


def load_network(path):
    """The network stored next to an object, or None."""
    meta = load_with_meta(path)[1]
    return Network.from_dict(meta["network"]) if "network" in meta else None
