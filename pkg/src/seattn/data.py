"""Deterministic synthetic captioned-image dataset.

Each sample is a colored shape on a solid background with a templated
caption. Everything is a pure function of (seed, index), so a manifest
fully determines the dataset bytes.

On-disk layout (one directory):

``manifest.txt``
    UTF-8 ``key=value`` lines: format, seed, count, image_size, train_count,
    vocab_sha256, record_bytes.
``images.bin``
    ``count`` records back to back, each ``3*S*S`` little-endian float32
    values in C,H,W row-major order, values in [-1, 1].
``images.idx``
    ``count`` little-endian uint64 byte offsets into images.bin; offset i is
    ``i * record_bytes`` (fixed stride).
``captions.txt``
    One UTF-8 caption per line, in record order.
``labels.txt``
    ``shape fg bg`` integer ids per line, in record order.
``vocab.txt``
    One token per line; line number (0-based) is the token id.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ContractError
from .text_encoder import Vocab, tokenize_batch

SHAPES = ("circle", "square", "triangle", "diamond")
FG_COLORS = ("red", "green", "yellow", "orange", "purple", "pink")
BG_COLORS = ("blue", "teal", "brown", "olive")

# RGB in [0, 1]. All chromatic, so any RGB channel permutation moves every color.
FG_RGB = np.array(
    [
        [0.90, 0.10, 0.10],
        [0.10, 0.80, 0.15],
        [0.95, 0.90, 0.10],
        [1.00, 0.55, 0.00],
        [0.60, 0.15, 0.85],
        [1.00, 0.50, 0.75],
    ]
)
BG_RGB = np.array(
    [
        [0.10, 0.20, 0.75],
        [0.05, 0.45, 0.45],
        [0.45, 0.25, 0.10],
        [0.40, 0.40, 0.05],
    ]
)

SYNONYMS = {
    "shape": (("circle", "disc"), ("square", "block"), ("triangle", "wedge"), ("diamond", "rhombus")),
    "fg": (("red", "crimson"), ("green", "lime"), ("yellow", "golden"), ("orange", "amber"),
           ("purple", "violet"), ("pink", "rose")),
    "bg": (("blue", "azure"), ("teal", "turquoise"), ("brown", "chocolate"), ("olive", "khaki")),
    "background": ("background", "backdrop"),
}

N_CLASSES = len(SHAPES) * len(FG_COLORS)


def class_id(labels) -> int:
    """Shape × foreground color, the label the Inception-style classifier predicts."""
    shape, fg, _ = labels
    return int(shape) * len(FG_COLORS) + int(fg)


def _check_labels(labels):
    shape, fg, bg = (int(v) for v in labels)
    if not (0 <= shape < len(SHAPES) and 0 <= fg < len(FG_COLORS) and 0 <= bg < len(BG_COLORS)):
        raise ContractError(f"labels {tuple(labels)} outside the grammar")
    return shape, fg, bg


def caption(labels, variant=(0, 0, 0, 0)) -> str:
    """``a {fg} {shape} on a {bg} background`` with one synonym bit per slot."""
    shape, fg, bg = _check_labels(labels)
    vs, vf, vb, vk = (int(v) for v in variant)
    return (
        f"a {SYNONYMS['fg'][fg][vf]} {SYNONYMS['shape'][shape][vs]} "
        f"on a {SYNONYMS['bg'][bg][vb]} {SYNONYMS['background'][vk]}"
    )


def _lookup(slot):
    return {w: i for i, pair in enumerate(SYNONYMS[slot]) for w in pair}


_FG_WORDS, _SHAPE_WORDS, _BG_WORDS = _lookup("fg"), _lookup("shape"), _lookup("bg")


def parse_caption(text: str) -> tuple[int, int, int]:
    """Inverse of :func:`caption` (up to synonym choice)."""
    words = text.lower().split()
    if (
        len(words) != 7
        or words[0] != "a"
        or words[3:5] != ["on", "a"]
        or words[6] not in SYNONYMS["background"]
        or words[1] not in _FG_WORDS
        or words[2] not in _SHAPE_WORDS
        or words[5] not in _BG_WORDS
    ):
        raise ContractError(f"caption is not from the template grammar: {text!r}")
    return _SHAPE_WORDS[words[2]], _FG_WORDS[words[1]], _BG_WORDS[words[5]]


def grammar_vocab() -> Vocab:
    words = {"a", "on"}
    for slot in ("shape", "fg", "bg"):
        for pair in SYNONYMS[slot]:
            words.update(pair)
    words.update(SYNONYMS["background"])
    return Vocab.from_words(words)


def _shape_mask(shape: int, dx, dy, r):
    if shape == 0:
        return dx * dx + dy * dy <= r * r
    if shape == 1:
        return np.maximum(np.abs(dx), np.abs(dy)) <= 0.85 * r
    if shape == 2:
        # apex up, base at +0.8r, base half-width r
        return (dy >= -r) & (dy <= 0.8 * r) & (np.abs(dx) <= (dy + r) / 1.8)
    return np.abs(dx) + np.abs(dy) <= 1.1 * r


def render(labels, seed: int, size: int = 32, supersample: int = 4) -> np.ndarray:
    """Anti-aliased shape at a jittered position/scale; float32 (3, size, size) in [-1, 1]."""
    shape, fg, bg = _check_labels(labels)
    rng = np.random.default_rng(seed)
    cx, cy = rng.uniform(0.38, 0.62, size=2) * size
    r = rng.uniform(0.22, 0.32) * size
    ss = size * supersample
    coords = (np.arange(ss) + 0.5) / supersample
    dx = coords[None, :] - cx
    dy = coords[:, None] - cy
    cover = _shape_mask(shape, dx, dy, r).astype(np.float64)
    cover = cover.reshape(size, supersample, size, supersample).mean(axis=(1, 3))
    rgb = BG_RGB[bg][:, None, None] * (1.0 - cover) + FG_RGB[fg][:, None, None] * cover
    return (rgb * 2.0 - 1.0).astype(np.float32)


def sample_spec(seed: int, index: int):
    """(labels, jitter seed, synonym variant) for sample ``index``."""
    rng = np.random.default_rng([seed, index])
    labels = (int(rng.integers(len(SHAPES))), int(rng.integers(len(FG_COLORS))), int(rng.integers(len(BG_COLORS))))
    jitter = int(rng.integers(2**31))
    variant = tuple(int(v) for v in rng.integers(0, 2, size=4))
    return labels, jitter, variant


@dataclass
class DatasetManifest:
    seed: int = 42
    count: int = 2200
    image_size: int = 32
    train_count: int = 2000
    vocab_sha256: str = ""

    def __post_init__(self):
        if not self.vocab_sha256:
            self.vocab_sha256 = grammar_vocab().digest()
        if not 0 < self.train_count <= self.count:
            raise ContractError(f"train_count {self.train_count} must lie in 1..{self.count}")

    @property
    def record_bytes(self) -> int:
        return 3 * self.image_size * self.image_size * 4

    def to_text(self) -> str:
        lines = ["format=seattn-synth/1"]
        lines += [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]
        lines.append(f"record_bytes={self.record_bytes}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip() and not line.startswith("#"))
        if kv.get("format") != "seattn-synth/1":
            raise ContractError(f"unknown dataset format {kv.get('format')!r}")
        return cls(
            seed=int(kv["seed"]), count=int(kv["count"]), image_size=int(kv["image_size"]),
            train_count=int(kv["train_count"]), vocab_sha256=kv["vocab_sha256"],
        )


class SynthDataset:
    def __init__(self, manifest: DatasetManifest, images, captions, labels, vocab: Vocab):
        self.manifest = manifest
        self.images = images
        self.captions = list(captions)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.vocab = vocab
        self.tokens = tokenize_batch(self.captions, vocab)

    def __len__(self):
        return len(self.captions)

    @classmethod
    def generate(cls, manifest: DatasetManifest) -> "SynthDataset":
        vocab = grammar_vocab()
        if vocab.digest() != manifest.vocab_sha256:
            raise ContractError("manifest vocabulary hash does not match the grammar vocabulary")
        s = manifest.image_size
        images = np.empty((manifest.count, 3, s, s), np.float32)
        caps, labs = [], []
        for i in range(manifest.count):
            labels, jitter, variant = sample_spec(manifest.seed, i)
            images[i] = render(labels, jitter, s)
            caps.append(caption(labels, variant))
            labs.append(labels)
        return cls(manifest, images, caps, labs, vocab)

    def split(self, name: str) -> "SynthDataset":
        cut = self.manifest.train_count
        sl = slice(0, cut) if name == "train" else slice(cut, None)
        if name not in ("train", "val"):
            raise ContractError(f"unknown split {name!r}")
        sub = SynthDataset.__new__(SynthDataset)
        sub.manifest = self.manifest
        sub.images = self.images[sl]
        sub.captions = self.captions[sl]
        sub.labels = self.labels[sl]
        sub.vocab = self.vocab
        sub.tokens = self.tokens[sl]
        return sub

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        m = self.manifest
        (d / "manifest.txt").write_text(m.to_text(), encoding="utf-8")
        self.images.astype("<f4").tofile(d / "images.bin")
        (np.arange(len(self), dtype="<u8") * m.record_bytes).tofile(d / "images.idx")
        (d / "captions.txt").write_text("".join(c + "\n" for c in self.captions), encoding="utf-8")
        (d / "labels.txt").write_text("".join(f"{a} {b} {c}\n" for a, b, c in self.labels), encoding="utf-8")
        self.vocab.save(d / "vocab.txt")

    @classmethod
    def load(cls, directory) -> "SynthDataset":
        d = Path(directory)
        m = DatasetManifest.from_text((d / "manifest.txt").read_text(encoding="utf-8"))
        vocab = Vocab.load(d / "vocab.txt")
        if vocab.digest() != m.vocab_sha256:
            raise ContractError("vocab.txt does not match the manifest hash")
        s = m.image_size
        raw = np.fromfile(d / "images.bin", dtype="<f4")
        if raw.size != m.count * 3 * s * s:
            raise ContractError(f"images.bin holds {raw.size} floats, expected {m.count * 3 * s * s}")
        images = raw.reshape(m.count, 3, s, s).astype(np.float32)
        caps = (d / "captions.txt").read_text(encoding="utf-8").splitlines()
        labs = [tuple(int(v) for v in line.split()) for line in (d / "labels.txt").read_text().splitlines()]
        if len(caps) != m.count or len(labs) != m.count:
            raise ContractError("captions/labels line count differs from manifest count")
        return cls(m, images, caps, labs, vocab)


def file_digest(directory) -> str:
    """SHA-256 over every dataset file, for byte-identity checks."""
    h = hashlib.sha256()
    for name in ("manifest.txt", "images.bin", "images.idx", "captions.txt", "labels.txt", "vocab.txt"):
        h.update(name.encode())
        h.update((Path(directory) / name).read_bytes())
    return h.hexdigest()


def load_external(directory):
    """Adapter point for a real captioned-image corpus.

    A loader must return a :class:`SynthDataset`-compatible object: float32
    images (N, 3, S, S) in [-1, 1], caption strings, a Vocab, and labels
    (may be all zero when no class labels exist).
    """
    raise NotImplementedError("only the synthetic dataset ships with this package")


class Batch(NamedTuple):
    index: np.ndarray  # dataset row ids
    images: np.ndarray  # (M, 3, S, S)
    tokens: np.ndarray  # (M, L)
    mismatch: np.ndarray  # (M,) position of the mismatched sentence inside the batch
    z: np.ndarray  # (M, z_dim)
    labels: np.ndarray  # (M, 3)


def epoch_order(n: int, batch_size: int, epoch_seed) -> list[np.ndarray]:
    """Seeded permutation cut into batches; a trailing batch of one joins its predecessor."""
    if batch_size < 2:
        raise ContractError("batch size must be at least 2 for mismatch pairing")
    if batch_size > n:
        raise ContractError(f"batch size {batch_size} exceeds dataset size {n}")
    perm = np.random.default_rng(epoch_seed).permutation(n)
    chunks = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        last = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], last])
    return chunks


def mismatch_index(m: int) -> np.ndarray:
    """Cyclic shift by one: a derangement for every m >= 2."""
    return np.roll(np.arange(m), -1)


def batches(ds: SynthDataset, batch_size: int, seed: int, epoch: int, z_dim: int = 100,
            start: int = 0) -> Iterator[Batch]:
    """Batches for one epoch. Noise comes from the same seeded stream, so the
    sequence is a pure function of (seed, epoch); ``start`` skips ahead."""
    chunks = epoch_order(len(ds), batch_size, [seed, epoch, 0])
    zrng = np.random.default_rng([seed, epoch, 1])
    for b, idx in enumerate(chunks):
        z = zrng.standard_normal((len(idx), z_dim)).astype(np.float32)
        if b < start:
            continue
        yield Batch(idx, ds.images[idx], ds.tokens[idx], mismatch_index(len(idx)), z, ds.labels[idx])


def batches_per_epoch(n: int, batch_size: int) -> int:
    full, rem = divmod(n, batch_size)
    return full + (1 if rem > 1 else 0) if full else 1
