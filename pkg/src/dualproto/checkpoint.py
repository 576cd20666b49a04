"""Binary checkpoint format.

Layout (all little-endian):

    magic "DUPC" | version u16 | section count u32
    section: name length u16 | name utf8 | payload length u64 | payload

Array payloads: ndim u32, each dim u32, float64 data. Sections are written
in a canonical order (config text, counters, sorted parameter names, Adam
state, codebook) so save -> load -> save is byte-identical.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .encoders import Disentangler, FrozenTextEncoder, PromptBank
from .errors import CheckpointError
from .kernel import AdamState, ParamTensor
from .prototypes import PrototypeCodebook
from .state import _STREAM_TEXT, ModelState

MAGIC = b"DUPC"
VERSION = 1
_HEAD = struct.Struct("<4sHI")
_SECTION_NAME = struct.Struct("<H")
_SECTION_LEN = struct.Struct("<Q")

_CODEBOOK_KEYS = (
    "codebook:prototypes",
    "codebook:node_state",
    "codebook:node_object",
    "codebook:node_state_init",
    "codebook:node_object_init",
)


def _pack_array(arr):
    arr = np.asarray(arr, dtype=np.float64)
    head = struct.pack("<I", arr.ndim) + b"".join(
        struct.pack("<I", d) for d in arr.shape
    )
    return head + arr.astype("<f8").tobytes()


def _unpack_array(payload, name):
    if len(payload) < 4:
        raise CheckpointError(f"section {name} truncated", kind="truncated-file")
    (ndim,) = struct.unpack_from("<I", payload, 0)
    offset = 4
    shape = []
    for _ in range(ndim):
        if len(payload) < offset + 4:
            raise CheckpointError(f"section {name} truncated", kind="truncated-file")
        (d,) = struct.unpack_from("<I", payload, offset)
        shape.append(d)
        offset += 4
    count = int(np.prod(shape)) if shape else 1
    if len(payload) != offset + count * 8:
        raise CheckpointError(f"section {name} has wrong payload size", kind="truncated-file")
    data = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
    return data.astype(np.float64).reshape(shape)


def _pack_scalar(value):
    return np.float64(value).tobytes()


def _unpack_scalar(payload, name):
    if len(payload) != 8:
        raise CheckpointError(f"section {name} has wrong payload size", kind="truncated-file")
    return float(np.frombuffer(payload, dtype="<f8")[0])


def _pack_u64(value):
    return struct.pack("<Q", int(value))


def _unpack_u64(payload, name):
    if len(payload) != 8:
        raise CheckpointError(f"section {name} has wrong payload size", kind="truncated-file")
    return struct.unpack("<Q", payload)[0]


@dataclass
class Checkpoint:
    """Deserialized checkpoint contents; restore() turns it back into state."""

    config: TrainConfig
    epoch: int
    val_auc: float
    params: dict
    adam_step: int
    adam_hyper: tuple
    adam_m: dict
    adam_v: dict
    codebook: dict
    node_mix: float


def serialize(model, adam, config, epoch, val_auc):
    """Serialize live training state to checkpoint bytes."""
    sections = []
    sections.append(("config", config.to_lines().encode("utf-8")))
    sections.append(("epoch", _pack_u64(epoch)))
    sections.append(("val_auc", _pack_scalar(val_auc)))
    params = model.all_params()
    for name in sorted(params):
        sections.append((f"param:{name}", _pack_array(params[name].values)))
    sections.append(
        (
            "adam:meta",
            _pack_u64(adam.step_count)
            + _pack_scalar(adam.lr)
            + _pack_scalar(adam.beta1)
            + _pack_scalar(adam.beta2)
            + _pack_scalar(adam.eps),
        )
    )
    for name in sorted(adam.m):
        sections.append((f"adam:m:{name}", _pack_array(adam.m[name])))
    for name in sorted(adam.v):
        sections.append((f"adam:v:{name}", _pack_array(adam.v[name])))
    cb = model.codebook
    for key, arr in zip(
        _CODEBOOK_KEYS,
        (cb.prototypes, cb.node_state, cb.node_object, cb.node_state_init, cb.node_object_init),
    ):
        sections.append((key, _pack_array(arr)))
    sections.append(("codebook:node_mix", _pack_scalar(cb.node_mix)))

    blob = bytearray(_HEAD.pack(MAGIC, VERSION, len(sections)))
    for name, payload in sections:
        encoded = name.encode("utf-8")
        blob += _SECTION_NAME.pack(len(encoded))
        blob += encoded
        blob += _SECTION_LEN.pack(len(payload))
        blob += payload
    return bytes(blob)


def deserialize(blob):
    """Parse checkpoint bytes into a Checkpoint."""
    if len(blob) < _HEAD.size:
        raise CheckpointError("checkpoint shorter than header", kind="truncated-file")
    magic, version, count = _HEAD.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}", kind="bad-magic")
    if version != VERSION:
        raise CheckpointError(
            f"checkpoint version {version}, reader supports {VERSION}", kind="version-mismatch"
        )
    offset = _HEAD.size
    sections = {}
    order = []
    for _ in range(count):
        if len(blob) < offset + _SECTION_NAME.size:
            raise CheckpointError("checkpoint truncated in section name", kind="truncated-file")
        (name_len,) = _SECTION_NAME.unpack_from(blob, offset)
        offset += _SECTION_NAME.size
        if len(blob) < offset + name_len + _SECTION_LEN.size:
            raise CheckpointError("checkpoint truncated in section header", kind="truncated-file")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (payload_len,) = _SECTION_LEN.unpack_from(blob, offset)
        offset += _SECTION_LEN.size
        if len(blob) < offset + payload_len:
            raise CheckpointError(f"section {name} truncated", kind="truncated-file")
        sections[name] = blob[offset : offset + payload_len]
        order.append(name)
        offset += payload_len
    if offset != len(blob):
        raise CheckpointError("trailing bytes after last section", kind="truncated-file")

    def need(name):
        if name not in sections:
            raise CheckpointError(f"missing section {name}", kind="bad-checkpoint")
        return sections[name]

    config = TrainConfig.from_lines(need("config").decode("utf-8"))
    epoch = _unpack_u64(need("epoch"), "epoch")
    val_auc = _unpack_scalar(need("val_auc"), "val_auc")

    params = {
        name[len("param:") :]: _unpack_array(payload, name)
        for name, payload in sections.items()
        if name.startswith("param:")
    }
    meta = need("adam:meta")
    if len(meta) != 8 + 4 * 8:
        raise CheckpointError("adam:meta has wrong payload size", kind="truncated-file")
    adam_step = struct.unpack_from("<Q", meta, 0)[0]
    hyper = tuple(float(x) for x in np.frombuffer(meta, dtype="<f8", offset=8))
    adam_m = {
        name[len("adam:m:") :]: _unpack_array(payload, name)
        for name, payload in sections.items()
        if name.startswith("adam:m:")
    }
    adam_v = {
        name[len("adam:v:") :]: _unpack_array(payload, name)
        for name, payload in sections.items()
        if name.startswith("adam:v:")
    }
    codebook = {key: _unpack_array(need(key), key) for key in _CODEBOOK_KEYS}
    node_mix = _unpack_scalar(need("codebook:node_mix"), "codebook:node_mix")
    return Checkpoint(
        config=config,
        epoch=int(epoch),
        val_auc=val_auc,
        params=params,
        adam_step=int(adam_step),
        adam_hyper=hyper,
        adam_m=adam_m,
        adam_v=adam_v,
        codebook=codebook,
        node_mix=node_mix,
    )


def write_checkpoint(path, blob):
    Path(path).write_bytes(blob)


def read_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}", kind="missing-file")
    return deserialize(path.read_bytes())


def restore(checkpoint, space):
    """Rebuild (ModelState, AdamState) from a Checkpoint and its space."""
    cfg = checkpoint.config
    proto = checkpoint.codebook["codebook:prototypes"]
    node_state = checkpoint.codebook["codebook:node_state"]
    node_object = checkpoint.codebook["codebook:node_object"]
    if node_state.shape[0] != space.num_states or node_object.shape[0] != space.num_objects:
        raise CheckpointError(
            f"checkpoint built for {node_state.shape[0]}x{node_object.shape[0]} compositions, "
            f"dataset has {space.num_states}x{space.num_objects}",
            kind="space-mismatch",
        )
    dim = proto.shape[1]

    def param(name):
        if name not in checkpoint.params:
            raise CheckpointError(f"missing parameter {name}", kind="bad-checkpoint")
        return checkpoint.params[name]

    token_dim = param("prompt.ctx_composition").shape[1]
    prefix_len = param("prompt.ctx_composition").shape[0]
    hidden_dim = param("dis_state.w1").shape[1]

    text_encoder = FrozenTextEncoder(token_dim, dim, seed=[cfg.seed, _STREAM_TEXT])
    rng = np.random.default_rng(0)
    bank = PromptBank(space.num_states, space.num_objects, token_dim, prefix_len, rng)
    dis_state = Disentangler(dim, hidden_dim, rng)
    dis_object = Disentangler(dim, hidden_dim, rng)
    graph_weight = ParamTensor(param("graph.weight"))
    fusion_weight = ParamTensor(param("fusion.weight"))
    codebook = PrototypeCodebook(
        proto,
        node_state,
        node_object,
        checkpoint.node_mix,
        node_state_init=checkpoint.codebook["codebook:node_state_init"],
        node_object_init=checkpoint.codebook["codebook:node_object_init"],
    )
    model = ModelState(
        space,
        text_encoder,
        bank,
        dis_state,
        dis_object,
        codebook,
        graph_weight,
        fusion_weight,
        cfg.temperature,
        cfg.branches,
    )
    for name, tensor in model.all_params().items():
        stored = param(name)
        if stored.shape != tensor.values.shape:
            raise CheckpointError(
                f"parameter {name} has shape {stored.shape}, model expects {tensor.values.shape}",
                kind="bad-checkpoint",
            )
        tensor.values[...] = stored

    adam = AdamState(*checkpoint.adam_hyper)
    adam.step_count = checkpoint.adam_step
    for name, arr in checkpoint.adam_m.items():
        adam.m[name] = arr.copy()
    for name, arr in checkpoint.adam_v.items():
        adam.v[name] = arr.copy()
    return model, adam
