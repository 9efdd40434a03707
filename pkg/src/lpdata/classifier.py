"""Hashed bag-of-n-grams linear classifier.

One engine serves language identification, quality scoring and domain
routing. Features are n-grams hashed with XXH64 into ``bucket_count``
buckets; a document is the average of its bucket indicators (counts divided
by the total), and the model is multinomial logistic regression on that
vector, trained with shuffled SGD and a linearly decaying learning rate.
"""

from __future__ import annotations

import io
import json
import os
import struct
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import xxhash

from lpdata.corpus import tokenize_words

MAGIC = b"LPCLS"
FORMAT_VERSION = 1
_KINDS = ("word", "char")


class ModelFormatError(ValueError):
    """Raised with ``code`` set to 'unrecognized_model' or 'corrupt_model'."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


@dataclass
class ModelShape:
    feature_kind: str = "word"
    ngram_min: int = 1
    ngram_max: int = 2
    bucket_count: int = 1 << 20
    hash_seed: int = 0

    def __post_init__(self) -> None:
        if self.feature_kind not in _KINDS:
            raise ValueError(f"feature_kind must be one of {_KINDS}")
        if not 1 <= self.ngram_min <= self.ngram_max:
            raise ValueError("need 1 <= ngram_min <= ngram_max")
        b = self.bucket_count
        if b < (1 << 16) or b & (b - 1):
            raise ValueError("bucket_count must be a power of two >= 2**16")


LANGID_SHAPE = ModelShape("char", 1, 3, 1 << 18)
QUALITY_SHAPE = ModelShape("word", 1, 2, 1 << 20)
DOMAIN_SHAPE = ModelShape("word", 1, 2, 1 << 20)


@dataclass
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 0.1
    seed: int = 0
    holdout_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must be in [0, 1)")


@dataclass
class LabeledExample:
    text: str
    label: str

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("label must be non-empty")


@dataclass(eq=False)
class ClassifierModel:
    feature_kind: str
    ngram_min: int
    ngram_max: int
    bucket_count: int
    labels: list[str]
    weights: np.ndarray
    bias: np.ndarray
    hash_seed: int = 0
    version: int = FORMAT_VERSION

    @classmethod
    def zeros(cls, shape: ModelShape, labels: Sequence[str]) -> ClassifierModel:
        if len(labels) < 2:
            raise ValueError("need at least two labels")
        return cls(
            shape.feature_kind,
            shape.ngram_min,
            shape.ngram_max,
            shape.bucket_count,
            list(labels),
            np.zeros((shape.bucket_count, len(labels)), dtype=np.float32),
            np.zeros(len(labels), dtype=np.float32),
            shape.hash_seed,
        )

    @property
    def shape(self) -> ModelShape:
        return ModelShape(self.feature_kind, self.ngram_min, self.ngram_max, self.bucket_count, self.hash_seed)

    def features(self, text: str) -> dict[int, int]:
        return featurize(
            text, self.feature_kind, self.ngram_min, self.ngram_max, self.bucket_count, self.hash_seed
        )

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        save_model(self, buf)
        return buf.getvalue()


def _ngrams(text: str, kind: str, nmin: int, nmax: int) -> Iterable[str]:
    if kind == "char":
        seq = text
        for n in range(nmin, nmax + 1):
            for i in range(len(seq) - n + 1):
                yield seq[i : i + n]
    else:
        words = tokenize_words(text)
        for n in range(nmin, nmax + 1):
            for i in range(len(words) - n + 1):
                yield " ".join(words[i : i + n])


def featurize(
    text: str,
    feature_kind: str,
    ngram_min: int,
    ngram_max: int,
    bucket_count: int,
    hash_seed: int = 0,
) -> dict[int, int]:
    """Sparse bucket -> count map, buckets in ascending order.

    Bucket of an n-gram = XXH64(utf8(ngram), seed=hash_seed) mod bucket_count.
    Word n-grams are the tokens joined by single spaces.
    """
    counts: dict[int, int] = {}
    h = xxhash.xxh64_intdigest
    seed = hash_seed & 0xFFFFFFFFFFFFFFFF
    for gram in _ngrams(text, feature_kind, ngram_min, ngram_max):
        b = h(gram.encode("utf-8"), seed) % bucket_count
        counts[b] = counts.get(b, 0) + 1
    return dict(sorted(counts.items()))


def _sparse(features: dict[int, int]) -> tuple[np.ndarray, np.ndarray]:
    if not features:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float32)
    idx = np.fromiter(features.keys(), dtype=np.int64, count=len(features))
    val = np.fromiter(features.values(), dtype=np.float32, count=len(features))
    return idx, val / val.sum()


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _proba(model: ClassifierModel, idx: np.ndarray, val: np.ndarray) -> np.ndarray:
    z = model.bias.astype(np.float64)
    if len(idx):
        z = z + val.astype(np.float64) @ model.weights[idx].astype(np.float64)
    return _softmax(z)


def predict_proba(model: ClassifierModel, text: str) -> np.ndarray:
    """Probabilities aligned with ``model.labels``."""
    return _proba(model, *_sparse(model.features(text)))


def predict(model: ClassifierModel, text: str) -> list[tuple[str, float]]:
    """(label, probability) pairs, most probable first."""
    p = predict_proba(model, text)
    order = sorted(range(len(p)), key=lambda i: (-p[i], i))
    return [(model.labels[i], float(p[i])) for i in order]


@dataclass
class TrainResult:
    model: ClassifierModel
    holdout_accuracy: float | None
    n_train: int
    n_holdout: int
    holdout: list[LabeledExample] = field(default_factory=list, repr=False)


def train(
    examples: Sequence[LabeledExample],
    shape: ModelShape | None = None,
    config: TrainConfig | None = None,
    labels: Sequence[str] | None = None,
) -> TrainResult:
    """Fit a model; deterministic for fixed (examples, shape, config).

    ``labels`` fixes the label order (defaults to sorted distinct labels).
    """
    shape = shape or ModelShape()
    config = config or TrainConfig()
    present = sorted({ex.label for ex in examples})
    if len(present) < 2:
        raise ValueError("degenerate_labels")
    if len(examples) < 10:
        raise ValueError("too_few_examples")
    label_list = list(labels) if labels is not None else present
    missing = set(present) - set(label_list)
    if missing:
        raise ValueError(f"examples carry labels outside the label set: {sorted(missing)}")
    label_ix = {lab: i for i, lab in enumerate(label_list)}

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(examples))
    n_hold = int(round(len(examples) * config.holdout_fraction))
    hold_ix, train_ix = order[:n_hold], order[n_hold:]
    train_set = [examples[i] for i in train_ix]
    holdout = [examples[i] for i in hold_ix]

    model = ClassifierModel.zeros(shape, label_list)
    feats = [_sparse(model.features(ex.text)) for ex in train_set]
    targets = [label_ix[ex.label] for ex in train_set]
    W, b = model.weights, model.bias
    total = config.epochs * len(train_set)
    lr0 = np.float32(config.learning_rate)
    step = 0
    for _ in range(config.epochs):
        for j in rng.permutation(len(train_set)):
            lr = lr0 * np.float32(1.0 - step / total)
            step += 1
            idx, val = feats[j]
            p = _proba(model, idx, val)
            grad = p.astype(np.float32)
            grad[targets[j]] -= 1.0
            if len(idx):
                W[idx] -= lr * np.outer(val, grad).astype(np.float32)
            b -= lr * grad

    acc = None
    if holdout:
        acc = sum(predict(model, ex.text)[0][0] == ex.label for ex in holdout) / len(holdout)
    return TrainResult(model, acc, len(train_set), len(holdout), holdout)


def evaluate(model: ClassifierModel, examples: Sequence[LabeledExample]) -> dict:
    """Accuracy, per-label F1 and macro-F1 over ``examples``."""
    tp = {lab: 0 for lab in model.labels}
    fp = dict(tp)
    fn = dict(tp)
    correct = 0
    for ex in examples:
        guess = predict(model, ex.text)[0][0]
        if guess == ex.label:
            correct += 1
            tp[guess] += 1
        else:
            fp[guess] += 1
            if ex.label in fn:
                fn[ex.label] += 1
    f1 = {}
    for lab in model.labels:
        denom = 2 * tp[lab] + fp[lab] + fn[lab]
        f1[lab] = 2 * tp[lab] / denom if denom else 0.0
    seen = [lab for lab in model.labels if tp[lab] + fn[lab] > 0]
    macro = sum(f1[lab] for lab in seen) / len(seen) if seen else 0.0
    return {
        "accuracy": correct / len(examples) if examples else 0.0,
        "f1": f1,
        "macro_f1": macro,
    }


def read_training_file(path: str | os.PathLike) -> list[LabeledExample]:
    """JSONL of {"text": ..., "label": ...}."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append(LabeledExample(rec["text"], rec["label"]))
    return out


# ---------------------------------------------------------------------------
# binary format: MAGIC, version byte, then little-endian
#   u8 kind, u8 ngram_min, u8 ngram_max, u32 bucket_count, u64 hash_seed,
#   u16 n_labels, n_labels x (u16 len, utf-8 bytes),
#   f32 bias[n_labels], f32 weights[bucket_count * n_labels] row-major

_HEAD = struct.Struct("<BBBIQH")


def save_model(model: ClassifierModel, path) -> None:
    """Write ``model`` to a path or binary file object."""
    parts = [
        MAGIC,
        bytes([FORMAT_VERSION]),
        _HEAD.pack(
            _KINDS.index(model.feature_kind),
            model.ngram_min,
            model.ngram_max,
            model.bucket_count,
            model.hash_seed & 0xFFFFFFFFFFFFFFFF,
            len(model.labels),
        ),
    ]
    for lab in model.labels:
        raw = lab.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    parts.append(np.ascontiguousarray(model.bias, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(model.weights, dtype="<f4").tobytes())
    if hasattr(path, "write"):
        for p in parts:
            path.write(p)
        return
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "wb") as fh:
        for p in parts:
            fh.write(p)
    os.replace(tmp, path)


def load_model(path) -> ClassifierModel:
    if hasattr(path, "read"):
        data = path.read()
    else:
        data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 1 or data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("unrecognized_model", "bad magic")
    version = data[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise ModelFormatError("unrecognized_model", f"version {version}")
    pos = len(MAGIC) + 1
    try:
        kind, nmin, nmax, buckets, seed, n_labels = _HEAD.unpack_from(data, pos)
        pos += _HEAD.size
        labels = []
        for _ in range(n_labels):
            (ln,) = struct.unpack_from("<H", data, pos)
            pos += 2
            if pos + ln > len(data):
                raise ModelFormatError("corrupt_model", "label table truncated")
            labels.append(data[pos : pos + ln].decode("utf-8"))
            pos += ln
    except struct.error:
        raise ModelFormatError("corrupt_model", "header truncated") from None
    if kind >= len(_KINDS):
        raise ModelFormatError("corrupt_model", f"feature kind {kind}")
    need = 4 * n_labels * (1 + buckets)
    if len(data) - pos != need:
        raise ModelFormatError("corrupt_model", f"expected {need} payload bytes, found {len(data) - pos}")
    bias = np.frombuffer(data, dtype="<f4", count=n_labels, offset=pos).astype(np.float32)
    pos += 4 * n_labels
    weights = np.frombuffer(data, dtype="<f4", count=buckets * n_labels, offset=pos)
    weights = weights.reshape(buckets, n_labels).astype(np.float32)
    return ClassifierModel(_KINDS[kind], nmin, nmax, buckets, labels, weights, bias, seed, version)


# per-task defaults: feature shape and training schedule. Features are
# averaged, so per-weight steps are small and the rate has to be large.
TASK_PRESETS: dict[str, tuple[ModelShape, TrainConfig]] = {
    "langid": (LANGID_SHAPE, TrainConfig(epochs=20, learning_rate=10.0)),
    "quality": (QUALITY_SHAPE, TrainConfig(epochs=20, learning_rate=10.0)),
    "domain": (DOMAIN_SHAPE, TrainConfig(epochs=20, learning_rate=10.0)),
}
