"""Frozen per-subtoken layered embeddings and their trainable aggregation.

Embeddings come either from LEMB files (dumped by an external exporter
running a frozen pretrained model) or from a deterministic synthetic
generator used for desk-scale experiments.  The aggregation collapses the
m layer vectors of each token into one vector with trainable per-layer
weights and a global scale; gradients flow to those weights only.

LEMB binary layout (little-endian):
    magic "LEMB" | u32 version=1 | u32 m | u32 D | u32 T
    T x (u16 byte_len + UTF-8 token bytes)
    m*T*D float32 payload in (layer, token, dim) order
    u32 CRC-32 of the payload
"""
from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .corpus import TaggedSentence, sentence_key

LEMB_MAGIC = b"LEMB"
LEMB_VERSION = 1


class LembError(Exception):
    """Malformed or corrupted LEMB file."""


@dataclass
class LayeredEmbeddings:
    """Stack of m frozen layer outputs for T tokens of dimension D."""

    tokens: list[str]
    values: np.ndarray  # (m, T, D) float64

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError(f"values must be (m, T, D), got {self.values.shape}")
        if self.values.shape[1] != len(self.tokens):
            raise ValueError("token count does not match values")
        if self.values.shape[0] < 1:
            raise ValueError("need at least one layer")
        if not np.isfinite(self.values).all():
            raise ValueError("non-finite embedding values")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]


@dataclass
class AggregationParams:
    gamma: float
    layer_weights: np.ndarray  # (m,)

    def __post_init__(self):
        self.layer_weights = np.asarray(self.layer_weights, dtype=np.float64)
        if not (np.isfinite(self.gamma) and np.isfinite(self.layer_weights).all()):
            raise ValueError("non-finite aggregation parameters")

    @classmethod
    def initial(cls, m: int) -> "AggregationParams":
        return cls(gamma=1.0, layer_weights=np.full(m, 1.0 / m))


def write_embedding_file(path, emb: LayeredEmbeddings) -> None:
    m, t, d = emb.values.shape
    payload = np.ascontiguousarray(emb.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(LEMB_MAGIC)
        fh.write(struct.pack("<IIII", LEMB_VERSION, m, d, t))
        for token in emb.tokens:
            raw = token.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_embedding_file(path) -> LayeredEmbeddings:
    """Read and checksum-verify one LEMB file."""
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != LEMB_MAGIC:
        raise LembError(f"{path}: bad magic")
    version, m, d, t = struct.unpack_from("<IIII", data, 4)
    if version != LEMB_VERSION:
        raise LembError(f"{path}: unsupported version {version}")
    off = 20
    tokens = []
    try:
        for _ in range(t):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            tokens.append(data[off:off + ln].decode("utf-8"))
            off += ln
    except (struct.error, UnicodeDecodeError) as exc:
        raise LembError(f"{path}: truncated or corrupt token table") from exc
    need = m * t * d * 4
    payload = data[off:off + need]
    if len(payload) != need or len(data) < off + need + 4:
        raise LembError(f"{path}: truncated payload")
    (crc,) = struct.unpack_from("<I", data, off + need)
    if zlib.crc32(payload) != crc:
        raise LembError(f"{path}: checksum mismatch")
    values = np.frombuffer(payload, dtype="<f4").reshape(m, t, d).astype(np.float64)
    return LayeredEmbeddings(tokens=tokens, values=values)


def _token_seed(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def synthetic_embeddings(tokens: list[str], m: int, dim: int, seed: int) -> LayeredEmbeddings:
    """Deterministic stand-in for a frozen pretrained model.

    Every value is drawn uniformly from [-1, 1] keyed by (seed, token
    string); identical token strings get identical layer stacks wherever
    they appear.
    """
    if m < 1 or dim < 1:
        raise ValueError("m and dim must be positive")
    values = np.empty((m, len(tokens), dim))
    cache: dict[str, np.ndarray] = {}
    for t, token in enumerate(tokens):
        stack = cache.get(token)
        if stack is None:
            rng = np.random.default_rng([seed, _token_seed(token)])
            stack = rng.uniform(-1.0, 1.0, (m, dim))
            cache[token] = stack
        values[:, t, :] = stack
    return LayeredEmbeddings(tokens=list(tokens), values=values)


def aggregate_expr(layers: list[ad.Expr], gamma: ad.Expr, weights: ad.Expr) -> ad.Expr:
    """Graph for gamma * sum_i weights[i] * layers[i] over T x D layer inputs."""
    if weights.shape != (len(layers),):
        raise ad.ShapeError(f"need {len(layers)} layer weights, got {weights.shape}")
    total = None
    for i, layer in enumerate(layers):
        term = ad.scale_by(layer, ad.select_index(weights, i))
        total = term if total is None else ad.add(total, term)
    return ad.scale_by(total, gamma)


def aggregate(emb: LayeredEmbeddings, params: AggregationParams) -> np.ndarray:
    """Collapse layers to a T x D matrix with the trainable weighting."""
    if params.layer_weights.shape[0] != emb.m:
        raise ValueError(
            f"layer-count mismatch: embeddings have {emb.m}, params {params.layer_weights.shape[0]}"
        )
    m, t, d = emb.values.shape
    layers = [ad.inp(f"layer{i}", (t, d)) for i in range(m)]
    root = aggregate_expr(layers, ad.param("gamma", ()), ad.param("w", (m,)))
    bindings = {f"layer{i}": emb.values[i] for i in range(m)}
    bindings["gamma"] = params.gamma
    bindings["w"] = params.layer_weights
    return ad.evaluate(root, bindings)


# ---------------------------------------------------------------------------
# embedding sources used by the trainer / predictor


class SyntheticSource:
    """Generates embeddings on demand; cheap enough to skip caching files."""

    kind = "synthetic"

    def __init__(self, seed: int, m: int, dim: int):
        self.seed, self.m, self.dim = int(seed), int(m), int(dim)

    def get(self, sent: TaggedSentence) -> LayeredEmbeddings:
        return synthetic_embeddings(sent.subtokens, self.m, self.dim, self.seed)

    def describe(self) -> dict:
        return {"kind": "synthetic", "seed": self.seed, "m": self.m, "dim": self.dim}


class LembDirSource:
    """Loads one LEMB file per sentence from a directory, keyed by sentence."""

    kind = "lemb"

    def __init__(self, directory):
        self.directory = Path(directory)
        self.m: int | None = None
        self.dim: int | None = None

    def get(self, sent: TaggedSentence) -> LayeredEmbeddings:
        path = self.directory / f"{sentence_key(sent)}.lemb"
        if not path.exists():
            raise LembError(f"missing embedding file {path}")
        emb = load_embedding_file(path)
        if emb.tokens != sent.subtokens:
            raise LembError(f"{path}: token list does not match the prepared sentence")
        if self.m is None:
            self.m, self.dim = emb.m, emb.dim
        elif (self.m, self.dim) != (emb.m, emb.dim):
            raise LembError(f"{path}: inconsistent dimensions across files")
        return emb

    def describe(self) -> dict:
        return {"kind": "lemb", "dir": str(self.directory)}


def source_from_description(desc: dict):
    if desc["kind"] == "synthetic":
        return SyntheticSource(desc["seed"], desc["m"], desc["dim"])
    if desc["kind"] == "lemb":
        return LembDirSource(desc["dir"])
    raise ValueError(f"unknown embedding source kind {desc.get('kind')!r}")
