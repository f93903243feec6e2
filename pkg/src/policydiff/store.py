"""Policy-parameter dataset: task embeddings, normalization, binary storage."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, FormatError, MissionLookupError
from .gridworld import COLORS, FAMILIES, OBJECT_TYPES, TaskSpec, task_from_id
from .policy import PARAM_SHAPE, check_params

EMBED_LEN = 32  # structured embedding length
STD_FLOOR = 1e-6

_DATASET_MAGIC = b"PDDS"
_DATASET_VERSION = 1


@dataclass
class NormStats:
    mean: np.ndarray  # (32, 82)
    std: np.ndarray  # (32, 82), floored at STD_FLOOR

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != PARAM_SHAPE or self.std.shape != PARAM_SHAPE:
            raise DimensionError(
                f"NormStats shapes {self.mean.shape}/{self.std.shape}, "
                f"expected {PARAM_SHAPE}"
            )
        if np.any(self.std < STD_FLOOR):
            raise ContractError(f"NormStats std below floor {STD_FLOOR}")


@dataclass
class Record:
    task_id: str
    embedding: np.ndarray  # (L,) unit-norm
    params: np.ndarray  # (32, 82)
    eval_return: float


@dataclass
class ParamDataset:
    records: list[Record] = field(default_factory=list)
    norm_stats: NormStats | None = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def embedding_length(self) -> int:
        if not self.records:
            raise ContractError("embedding_length of empty dataset")
        return self.records[0].embedding.shape[0]


def embed_task(spec: TaskSpec) -> np.ndarray:
    """Structured task embedding: one-hot(family) + one-hot(type) + one-hot(color),
    zero-padded to EMBED_LEN and L2-normalized. Injective over the enumeration."""
    vec = np.zeros(EMBED_LEN)
    off = 0
    vec[off + FAMILIES.index(spec.family)] = 1.0
    off += len(FAMILIES)
    vec[off + OBJECT_TYPES.index(spec.target_type)] = 1.0
    off += len(OBJECT_TYPES)
    vec[off + COLORS.index(spec.target_color)] = 1.0
    return vec / np.linalg.norm(vec)


def compute_norm_stats(dataset: ParamDataset) -> NormStats:
    if len(dataset) < 2:
        raise ContractError(f"normalization needs >= 2 records, got {len(dataset)}")
    stack = np.stack([r.params for r in dataset.records])
    mean = stack.mean(axis=0)
    std = np.maximum(stack.std(axis=0), STD_FLOOR)
    return NormStats(mean=mean, std=std)


def normalize(dataset: ParamDataset) -> tuple[np.ndarray, NormStats]:
    """Per-coordinate z-score of all parameter matrices; also stores stats on
    the dataset. Returns (stack of normalized (N,32,82), NormStats)."""
    stats = compute_norm_stats(dataset)
    dataset.norm_stats = stats
    stack = np.stack([r.params for r in dataset.records])
    return (stack - stats.mean) / stats.std, stats


def denormalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return x * stats.std + stats.mean


def save_dataset(dataset: ParamDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_DATASET_MAGIC)
        fh.write(struct.pack("<II", _DATASET_VERSION, len(dataset.records)))
        has_stats = dataset.norm_stats is not None
        fh.write(struct.pack("<B", int(has_stats)))
        if has_stats:
            fh.write(dataset.norm_stats.mean.astype("<f8").tobytes())
            fh.write(dataset.norm_stats.std.astype("<f8").tobytes())
        for rec in dataset.records:
            tid = rec.task_id.encode("utf-8")
            fh.write(struct.pack("<I", len(tid)))
            fh.write(tid)
            emb = np.asarray(rec.embedding, dtype="<f8")
            fh.write(struct.pack("<I", emb.shape[0]))
            fh.write(emb.tobytes())
            fh.write(np.asarray(rec.params, dtype="<f8").tobytes())
            fh.write(struct.pack("<d", rec.eval_return))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"dataset truncated at byte {self.pos}: need {n} bytes for {what}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def load_dataset(path) -> ParamDataset:
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read())
    magic = cur.take(4, "magic")
    if magic != _DATASET_MAGIC:
        raise FormatError(f"bad dataset magic {magic!r} at byte 0")
    version, n_records = struct.unpack("<II", cur.take(8, "header"))
    if version != _DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version} at byte 4")
    (has_stats,) = struct.unpack("<B", cur.take(1, "stats flag"))
    stats = None
    if has_stats:
        nbytes = 8 * PARAM_SHAPE[0] * PARAM_SHAPE[1]
        mean = np.frombuffer(cur.take(nbytes, "stats mean"), dtype="<f8")
        std = np.frombuffer(cur.take(nbytes, "stats std"), dtype="<f8")
        stats = NormStats(mean.reshape(PARAM_SHAPE), std.reshape(PARAM_SHAPE))
    records = []
    for i in range(n_records):
        (tlen,) = struct.unpack("<I", cur.take(4, f"record {i} task_id length"))
        task_id = cur.take(tlen, f"record {i} task_id").decode("utf-8")
        task_from_id(task_id)  # raises if unresolvable
        (elen,) = struct.unpack("<I", cur.take(4, f"record {i} embedding length"))
        emb = np.frombuffer(cur.take(8 * elen, f"record {i} embedding"), dtype="<f8")
        nbytes = 8 * PARAM_SHAPE[0] * PARAM_SHAPE[1]
        params = np.frombuffer(cur.take(nbytes, f"record {i} params"), dtype="<f8")
        (ret,) = struct.unpack("<d", cur.take(8, f"record {i} return"))
        records.append(
            Record(
                task_id=task_id,
                embedding=emb.copy(),
                params=check_params(params.reshape(PARAM_SHAPE).copy()),
                eval_return=ret,
            )
        )
    if cur.pos != len(cur.data):
        raise FormatError(
            f"trailing bytes after record {n_records - 1} at byte {cur.pos}"
        )
    return ParamDataset(records=records, norm_stats=stats)


def read_embedding_file(path) -> dict[str, np.ndarray]:
    """One record per line: mission string TAB space-separated floats (UTF-8)."""
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise FormatError(f"embedding file line {lineno}: missing TAB")
            mission, _, floats = line.partition("\t")
            try:
                vec = np.array([float(tok) for tok in floats.split()])
            except ValueError as exc:
                raise FormatError(
                    f"embedding file line {lineno}: bad float ({exc})"
                ) from exc
            table[mission] = vec
    lengths = {v.shape[0] for v in table.values()}
    if len(lengths) > 1:
        raise FormatError(f"embedding file has ragged vector lengths {sorted(lengths)}")
    return table


def ingest_external_embeddings(path, dataset: ParamDataset) -> ParamDataset:
    """Replace structured embeddings with externally precomputed ones, keyed by
    mission string; vectors are re-normalized to unit norm."""
    table = read_embedding_file(path)
    records = []
    for rec in dataset.records:
        mission = task_from_id(rec.task_id).mission
        if mission not in table:
            raise MissionLookupError(f"no embedding for mission {mission!r}")
        vec = table[mission]
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise FormatError(f"zero-norm embedding for mission {mission!r}")
        records.append(
            Record(
                task_id=rec.task_id,
                embedding=vec / norm,
                params=rec.params,
                eval_return=rec.eval_return,
            )
        )
    return ParamDataset(records=records, norm_stats=dataset.norm_stats)
