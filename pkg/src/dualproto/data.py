"""Composition-space bookkeeping, dataset container, on-disk formats.

A dataset is a manifest (UTF-8 key=value) pointing at four line-oriented
text files (vocab, seen pairs, unseen pairs, labels) and one binary
embedding matrix. The binary layout is:

    magic "DUPX" | version u16 | rows u32 | cols u32 | reserved u16
    payload: rows*cols little-endian float32, row-major

Floats are promoted to float64 on load. Rows whose norm drifted more than
1e-6 from unit (external producers) are renormalized; rows already within
tolerance are kept bit-identical so write(load(path)) round-trips exactly.
"""

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .validation import (
    UNIT_NORM_TOL,
    check_fraction,
    check_label_pairs,
    check_positive_int,
    check_unit_rows,
)

MAGIC = b"DUPX"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHIIH")
SPLITS = ("train", "val", "test")


@dataclass
class CompositionSpace:
    """State/object vocabularies plus the seen / closed-world-unseen pair sets."""

    states: tuple
    objects: tuple
    seen: frozenset
    unseen_closed: frozenset
    world: str = "closed"

    def __post_init__(self):
        self.states = tuple(self.states)
        self.objects = tuple(self.objects)
        self.seen = frozenset((int(m), int(n)) for m, n in self.seen)
        self.unseen_closed = frozenset((int(m), int(n)) for m, n in self.unseen_closed)
        if not self.states or not self.objects:
            raise ConfigError("composition space needs at least one state and one object")
        if len(set(self.states)) != len(self.states) or len(set(self.objects)) != len(self.objects):
            raise ConfigError("duplicate names in vocab")
        if self.world not in ("closed", "open"):
            raise ConfigError(f"world must be closed or open, got {self.world!r}")
        for m, n in self.seen | self.unseen_closed:
            if not (0 <= m < len(self.states) and 0 <= n < len(self.objects)):
                raise ConfigError(f"pair ({m}, {n}) outside the vocab")
        if self.seen & self.unseen_closed:
            raise ConfigError("seen and unseen_closed pair sets overlap")
        if not self.seen:
            raise ConfigError("empty seen set")

    @property
    def num_states(self):
        return len(self.states)

    @property
    def num_objects(self):
        return len(self.objects)

    @property
    def num_compositions(self):
        return len(self.states) * len(self.objects)

    def index_of(self, m, n):
        return int(m) * self.num_objects + int(n)

    def pair_of(self, index):
        return divmod(int(index), self.num_objects)

    def composition_name(self, index):
        m, n = self.pair_of(index)
        return f"{self.states[m]}:{self.objects[n]}"

    def seen_indices(self):
        return np.array(sorted(self.index_of(m, n) for m, n in self.seen), dtype=np.int64)

    def target_indices(self, world=None):
        """Sorted composition indices of the prediction target set."""
        world = self.world if world is None else world
        if world == "open":
            return np.arange(self.num_compositions, dtype=np.int64)
        if world == "closed":
            pairs = self.seen | self.unseen_closed
            return np.array(sorted(self.index_of(m, n) for m, n in pairs), dtype=np.int64)
        raise ConfigError(f"world must be closed or open, got {world!r}")


def target_space(space, world=None):
    return space.target_indices(world)


@dataclass
class EmbeddingDataset:
    """Unit-norm image embeddings with (state, object) labels and split tags."""

    embeddings: np.ndarray
    labels: np.ndarray
    split: np.ndarray

    def __post_init__(self):
        self.embeddings = check_unit_rows(self.embeddings, "embeddings")
        self.labels = check_label_pairs(self.labels, name="labels")
        self.split = np.asarray(self.split, dtype="<U5")
        n = self.embeddings.shape[0]
        if self.labels.shape[0] != n or self.split.shape != (n,):
            raise ConfigError("embeddings, labels and split lengths disagree")
        bad = set(self.split) - set(SPLITS)
        if bad:
            raise DataFormatError(f"unknown split tags {sorted(bad)}", kind="invalid-split")

    @property
    def dim(self):
        return self.embeddings.shape[1]

    def rows_of(self, split):
        return np.flatnonzero(self.split == split)

    def validate_against(self, space):
        check_label_pairs(self.labels, space.num_states, space.num_objects, "labels")
        train = self.rows_of("train")
        for row in train:
            pair = (int(self.labels[row, 0]), int(self.labels[row, 1]))
            if pair not in space.seen:
                raise DataFormatError(
                    f"train row {row} labeled with unseen pair {pair}", kind="invalid-split"
                )


def write_embedding_matrix(path, matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    rows, cols = matrix.shape
    payload = matrix.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, rows, cols, 0))
        fh.write(payload)


def read_embedding_matrix(path):
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"embedding file not found: {path}", kind="missing-file")
    blob = path.read_bytes()
    if len(blob) < HEADER.size:
        raise DataFormatError(f"{path} shorter than header", kind="truncated-file")
    magic, version, rows, cols, _ = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataFormatError(f"{path} has magic {magic!r}, expected {MAGIC!r}", kind="bad-magic")
    if version != FORMAT_VERSION:
        raise DataFormatError(
            f"{path} format version {version}, reader supports {FORMAT_VERSION}",
            kind="version-mismatch",
        )
    expected = HEADER.size + rows * cols * 4
    if len(blob) != expected:
        raise DataFormatError(
            f"{path} has {len(blob)} bytes, header implies {expected}", kind="truncated-file"
        )
    flat = np.frombuffer(blob, dtype="<f4", offset=HEADER.size)
    return flat.astype(np.float64).reshape(rows, cols)


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_kv(path, pairs):
    lines = [f"{k}={v}" for k, v in pairs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_kv(path):
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"manifest not found: {path}", kind="missing-file")
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataFormatError(f"bad manifest line {line!r}", kind="bad-format")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_dataset(dataset, space, out_dir, stem="dataset"):
    """Write vocab/pair/label text files, the embedding binary, and the
    manifest into out_dir. Returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset.validate_against(space)

    vocab_path = out_dir / f"{stem}.vocab.tsv"
    with open(vocab_path, "w", encoding="utf-8") as fh:
        for name in space.states:
            fh.write(f"state\t{name}\n")
        for name in space.objects:
            fh.write(f"object\t{name}\n")

    def pair_lines(pairs):
        for m, n in sorted(pairs):
            yield f"{space.states[m]}\t{space.objects[n]}\n"

    seen_path = out_dir / f"{stem}.seen_pairs.tsv"
    seen_path.write_text("".join(pair_lines(space.seen)), encoding="utf-8")
    unseen_path = out_dir / f"{stem}.unseen_pairs.tsv"
    unseen_path.write_text("".join(pair_lines(space.unseen_closed)), encoding="utf-8")

    labels_path = out_dir / f"{stem}.labels.tsv"
    with open(labels_path, "w", encoding="utf-8") as fh:
        for row in range(dataset.embeddings.shape[0]):
            m, n = dataset.labels[row]
            fh.write(
                f"{row}\t{space.states[m]}\t{space.objects[n]}\t{dataset.split[row]}\n"
            )

    bin_path = out_dir / f"{stem}.embeddings.dupx"
    write_embedding_matrix(bin_path, dataset.embeddings)

    manifest_path = out_dir / f"{stem}.manifest"
    _write_kv(
        manifest_path,
        [
            ("format", FORMAT_VERSION),
            ("d", dataset.dim),
            ("world", space.world),
            ("vocab", vocab_path.name),
            ("seen_pairs", seen_path.name),
            ("unseen_pairs", unseen_path.name),
            ("labels", labels_path.name),
            ("embeddings", bin_path.name),
            ("checksum.embeddings", _sha256(bin_path)),
        ],
    )
    return manifest_path


def _read_lines(path, kind):
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"{kind} file not found: {path}", kind="missing-file")
    return [
        line.rstrip("\n") for line in path.read_text(encoding="utf-8").splitlines() if line.strip()
    ]


def load_dataset(manifest_path):
    """Load (EmbeddingDataset, CompositionSpace) from a manifest file."""
    manifest_path = Path(manifest_path)
    kv = _read_kv(manifest_path)
    base = manifest_path.parent
    for key in ("d", "vocab", "seen_pairs", "unseen_pairs", "labels", "embeddings"):
        if key not in kv:
            raise DataFormatError(f"manifest missing key {key!r}", kind="bad-format")

    states, objects = [], []
    for line in _read_lines(base / kv["vocab"], "vocab"):
        parts = line.split("\t")
        if len(parts) != 2 or parts[0] not in ("state", "object"):
            raise DataFormatError(f"bad vocab line {line!r}", kind="bad-format")
        (states if parts[0] == "state" else objects).append(parts[1])
    state_idx = {name: i for i, name in enumerate(states)}
    object_idx = {name: i for i, name in enumerate(objects)}

    def parse_pairs(path):
        pairs = set()
        for line in _read_lines(path, "pair"):
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"bad pair line {line!r}", kind="bad-format")
            if parts[0] not in state_idx or parts[1] not in object_idx:
                raise DataFormatError(
                    f"pair {line!r} names a primitive missing from the vocab",
                    kind="unknown-primitive",
                )
            pairs.add((state_idx[parts[0]], object_idx[parts[1]]))
        return pairs

    seen = parse_pairs(base / kv["seen_pairs"])
    unseen = parse_pairs(base / kv["unseen_pairs"])
    space = CompositionSpace(states, objects, seen, unseen, world=kv.get("world", "closed"))

    bin_path = base / kv["embeddings"]
    if not bin_path.is_file():
        raise DataFormatError(f"embedding file not found: {bin_path}", kind="missing-file")
    recorded = kv.get("checksum.embeddings")
    if recorded is not None and _sha256(bin_path) != recorded:
        raise DataFormatError(
            f"checksum mismatch for {bin_path.name}", kind="checksum-mismatch"
        )
    matrix = read_embedding_matrix(bin_path)
    if matrix.shape[1] != int(kv["d"]):
        raise DataFormatError(
            f"manifest d={kv['d']} but binary has {matrix.shape[1]} columns",
            kind="dim-mismatch",
        )

    rows = matrix.shape[0]
    labels = np.zeros((rows, 2), dtype=np.int64)
    split = np.empty(rows, dtype="<U5")
    filled = np.zeros(rows, dtype=bool)
    for line in _read_lines(base / kv["labels"], "labels"):
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataFormatError(f"bad label line {line!r}", kind="bad-format")
        idx_text, state_name, object_name, split_tag = parts
        try:
            row = int(idx_text)
        except ValueError:
            raise DataFormatError(f"bad row index {idx_text!r}", kind="bad-format") from None
        if not 0 <= row < rows:
            raise DataFormatError(f"label row {row} outside matrix", kind="bad-format")
        if state_name not in state_idx or object_name not in object_idx:
            raise DataFormatError(
                f"label {line!r} names a primitive missing from the vocab",
                kind="unknown-primitive",
            )
        if split_tag not in SPLITS:
            raise DataFormatError(f"unknown split {split_tag!r}", kind="invalid-split")
        labels[row] = (state_idx[state_name], object_idx[object_name])
        split[row] = split_tag
        filled[row] = True
    if not filled.all():
        raise DataFormatError(
            f"{int((~filled).sum())} embedding rows have no label line", kind="bad-format"
        )

    dataset = EmbeddingDataset(matrix, labels, split)
    dataset.validate_against(space)
    return dataset, space


def generate_synthetic(
    num_states,
    num_objects,
    dim,
    sigma,
    seen_fraction,
    images_per_pair,
    seed,
    test_per_pair=None,
    val_per_pair=None,
):
    """Deterministic synthetic benchmark with planted compositional structure.

    Each state and object gets a latent direction; every image embedding is
    normalize(u_state + u_object + sigma * noise) (identity mixing maps).
    Latents are drawn once from the seeded generator and orthonormalized
    (QR) when M + N <= dim, so distinct primitives are exactly uncorrelated;
    otherwise they stay independent unit Gaussians. images_per_pair train
    images are drawn for every seen pair; val/test images are drawn for
    every pair (seen and unseen) so open/closed evaluation and val selection
    are defined. The seen set is a uniform sample of
    ceil(seen_fraction * M * N) pairs built to cover every state and every
    object at least once.
    """
    num_states = check_positive_int(num_states, "num_states")
    num_objects = check_positive_int(num_objects, "num_objects")
    dim = check_positive_int(dim, "dim")
    sigma = float(sigma)
    if sigma < 0:
        raise ConfigError(f"sigma must be non-negative, got {sigma}")
    check_fraction(seen_fraction, "seen_fraction")
    images_per_pair = check_positive_int(images_per_pair, "images_per_pair")
    if test_per_pair is None:
        test_per_pair = max(2, images_per_pair // 5)
    if val_per_pair is None:
        val_per_pair = test_per_pair
    test_per_pair = check_positive_int(test_per_pair, "test_per_pair")
    val_per_pair = check_positive_int(val_per_pair, "val_per_pair")

    total = num_states * num_objects
    num_seen = int(np.ceil(seen_fraction * total))
    if num_seen < max(num_states, num_objects):
        raise ConfigError(
            f"seen_fraction {seen_fraction} gives {num_seen} pairs, too few to cover "
            f"{num_states} states and {num_objects} objects"
        )
    if num_seen > total:
        num_seen = total

    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((dim, num_states + num_objects))
    if num_states + num_objects <= dim:
        q, r = np.linalg.qr(raw)
        latents = (q * np.sign(np.diag(r))).T
    else:
        latents = raw.T / np.linalg.norm(raw.T, axis=1, keepdims=True)
    signal_state = latents[:num_states]
    signal_object = latents[num_states:]

    # Coverage first: walk a shuffled state cycle against a shuffled object
    # cycle, then fill uniformly from the remaining pairs.
    state_order = rng.permutation(num_states)
    object_order = rng.permutation(num_objects)
    seen = set()
    for k in range(max(num_states, num_objects)):
        seen.add((int(state_order[k % num_states]), int(object_order[k % num_objects])))
    remaining = [
        (m, n) for m in range(num_states) for n in range(num_objects) if (m, n) not in seen
    ]
    extra = num_seen - len(seen)
    if extra > 0:
        picks = rng.choice(len(remaining), size=extra, replace=False)
        for k in sorted(int(p) for p in picks):
            seen.add(remaining[k])
    unseen = {
        (m, n) for m in range(num_states) for n in range(num_objects) if (m, n) not in seen
    }
    space = CompositionSpace(
        tuple(f"s{m}" for m in range(num_states)),
        tuple(f"o{n}" for n in range(num_objects)),
        seen,
        unseen,
        world="closed",
    )

    def draw(pairs, count):
        vecs, labels = [], []
        for m, n in pairs:
            base = signal_state[m] + signal_object[n]
            noise = rng.standard_normal((count, dim))
            vecs.append(base[None, :] + sigma * noise)
            labels.extend([(m, n)] * count)
        block = np.concatenate(vecs, axis=0)
        block /= np.linalg.norm(block, axis=1, keepdims=True)
        return block, labels

    seen_sorted = sorted(seen)
    all_sorted = [(m, n) for m in range(num_states) for n in range(num_objects)]
    train_x, train_y = draw(seen_sorted, images_per_pair)
    val_x, val_y = draw(all_sorted, val_per_pair)
    test_x, test_y = draw(all_sorted, test_per_pair)

    embeddings = np.concatenate([train_x, val_x, test_x], axis=0)
    labels = np.array(train_y + val_y + test_y, dtype=np.int64)
    split = np.array(
        ["train"] * len(train_y) + ["val"] * len(val_y) + ["test"] * len(test_y), dtype="<U5"
    )
    dataset = EmbeddingDataset(embeddings, labels, split)
    return dataset, space


def batches(dataset, batch_size, epoch_seed):
    """Seeded permutation of the train rows, chunked into batches."""
    batch_size = check_positive_int(batch_size, "batch_size")
    train_rows = dataset.rows_of("train")
    if train_rows.size == 0:
        raise ConfigError("train split is empty")
    perm = np.random.default_rng(epoch_seed).permutation(train_rows)
    return [perm[i : i + batch_size] for i in range(0, perm.size, batch_size)]
