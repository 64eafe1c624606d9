"""Learnable parameters, their initialization, and checkpoint (de)serialization.

Checkpoint layout (little-endian throughout):

    magic "RGFC" | u32 version=1 | u32 d_v, d_t, d_s, d | f64 tau_p | f64 gamma
    then one block per leaf, in canonical field order:
        u32 rows | u32 cols | rows*cols float32 (row-major)

Vectors are stored as 1 x n blocks and scalars as 1 x 1. Payloads are float32,
so a freshly saved/loaded value is the float64 promotion of its float32
representation; matrix entries produced by :func:`init_params` are quantized
to float32 at creation so fresh checkpoints round-trip without loss.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, FormatError

CHECKPOINT_MAGIC = b"RGFC"
CHECKPOINT_VERSION = 1

SIGMOID_INIT_LOG_TEMP = float(np.log(10.0))
SIGMOID_INIT_BIAS = -5.0
DEFAULT_TAU_P = 0.05
DEFAULT_GAMMA = 1.0
LAYER_NORM_EPS = 1e-5


@dataclass
class SigmoidParams:
    """Learnable temperature (stored as its log) and bias of a scaled sigmoid."""

    log_temp: float = SIGMOID_INIT_LOG_TEMP
    bias: float = SIGMOID_INIT_BIAS


@dataclass
class AttentionParams:
    """Single-head cross-attention block: projections plus layer-norm affine."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ln_scale: np.ndarray
    ln_shift: np.ndarray


@dataclass
class ModelParams:
    """Every learnable of the grounded pairwise reasoner, plus two config scalars.

    ``tau_p`` (patch-importance temperature) and ``gamma`` (interactiveness
    gate exponent) are carried along but never trained.
    """

    proj_patch_h: np.ndarray   # d_v x d_s
    proj_patch_o: np.ndarray   # d_v x d_s
    proj_text_h: np.ndarray    # d_t x d_s
    proj_text_o: np.ndarray    # d_t x d_s
    proj_query: np.ndarray     # 2d x d
    attn: AttentionParams      # all d x d, layer norm d
    proj_action: np.ndarray    # d x d_t
    sig_action: SigmoidParams = field(default_factory=SigmoidParams)
    sig_inter_h: SigmoidParams = field(default_factory=SigmoidParams)
    sig_inter_o: SigmoidParams = field(default_factory=SigmoidParams)
    tau_p: float = DEFAULT_TAU_P
    gamma: float = DEFAULT_GAMMA

    @property
    def d_v(self) -> int:
        return self.proj_patch_h.shape[0]

    @property
    def d_t(self) -> int:
        return self.proj_text_h.shape[0]

    @property
    def d_s(self) -> int:
        return self.proj_patch_h.shape[1]

    @property
    def d(self) -> int:
        return self.proj_query.shape[1]

    def copy(self) -> "ModelParams":
        return _map_leaves(self, lambda x: x.copy() if isinstance(x, np.ndarray) else x)

    def with_gamma(self, gamma: float) -> "ModelParams":
        out = self.copy()
        out.gamma = float(gamma)
        return out


@dataclass
class MLDecoderParams:
    """Baseline multi-label decoder: one text-derived query per triplet class."""

    proj_query_in: np.ndarray  # d_t x d
    attn: AttentionParams
    proj_out: np.ndarray       # d x 1
    sig: SigmoidParams = field(default_factory=SigmoidParams)

    @property
    def d(self) -> int:
        return self.proj_query_in.shape[1]


# Canonical leaf order; also the checkpoint block order.
_LEAVES: list[tuple[str, ...]] = [
    ("proj_patch_h",),
    ("proj_patch_o",),
    ("proj_text_h",),
    ("proj_text_o",),
    ("proj_query",),
    ("attn", "w_q"),
    ("attn", "w_k"),
    ("attn", "w_v"),
    ("attn", "w_o"),
    ("attn", "ln_scale"),
    ("attn", "ln_shift"),
    ("proj_action",),
    ("sig_action", "log_temp"),
    ("sig_action", "bias"),
    ("sig_inter_h", "log_temp"),
    ("sig_inter_h", "bias"),
    ("sig_inter_o", "log_temp"),
    ("sig_inter_o", "bias"),
]


def _get_leaf(params, path):
    node = params
    for name in path:
        node = getattr(node, name)
    return node


def _set_leaf(params, path, value):
    node = params
    for name in path[:-1]:
        node = getattr(node, name)
    setattr(node, path[-1], value)


def _map_leaves(params: ModelParams, fn) -> ModelParams:
    out = dataclasses.replace(
        params,
        attn=dataclasses.replace(params.attn),
        sig_action=dataclasses.replace(params.sig_action),
        sig_inter_h=dataclasses.replace(params.sig_inter_h),
        sig_inter_o=dataclasses.replace(params.sig_inter_o),
    )
    for path in _LEAVES:
        _set_leaf(out, path, fn(_get_leaf(params, path)))
    return out


def leaf_shapes(dims: dict[str, int]) -> list[tuple[tuple[str, ...], tuple[int, int]]]:
    """Expected (rows, cols) of every checkpoint block for given dims."""
    d_v, d_t, d_s, d = dims["d_v"], dims["d_t"], dims["d_s"], dims["d"]
    shapes = {
        ("proj_patch_h",): (d_v, d_s),
        ("proj_patch_o",): (d_v, d_s),
        ("proj_text_h",): (d_t, d_s),
        ("proj_text_o",): (d_t, d_s),
        ("proj_query",): (2 * d, d),
        ("attn", "w_q"): (d, d),
        ("attn", "w_k"): (d, d),
        ("attn", "w_v"): (d, d),
        ("attn", "w_o"): (d, d),
        ("attn", "ln_scale"): (1, d),
        ("attn", "ln_shift"): (1, d),
        ("proj_action",): (d, d_t),
    }
    return [(path, shapes.get(path, (1, 1))) for path in _LEAVES]


def _uniform_fan_in(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(rows)
    draw = rng.uniform(-bound, bound, size=(rows, cols))
    # float32 quantization keeps fresh params exactly representable in checkpoints
    return draw.astype(np.float32).astype(np.float64)


def init_params(
    dims: dict[str, int],
    seed: int,
    tau_p: float = DEFAULT_TAU_P,
    gamma: float = DEFAULT_GAMMA,
) -> ModelParams:
    """Seeded deterministic initialization.

    Matrices are i.i.d. uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)]; layer
    norm starts at identity (scale 1, shift 0); every scaled sigmoid starts at
    temperature 10 (stored as log 10) and bias -5.
    """
    dims = dict(dims)
    dims.setdefault("d", dims.get("d_v"))
    dims.setdefault("d_s", dims.get("d_t"))
    for key in ("d_v", "d_t", "d_s", "d"):
        if key not in dims or int(dims[key]) <= 0:
            raise ArgumentError(f"dimension {key} must be a positive integer, got {dims.get(key)}")
        dims[key] = int(dims[key])
    if dims["d"] != dims["d_v"]:
        raise ArgumentError(
            f"embedding dim d ({dims['d']}) must equal the backbone dim d_v ({dims['d_v']})"
        )
    if not tau_p > 0:
        raise ArgumentError(f"tau_p must be > 0, got {tau_p}")
    if gamma < 0:
        raise ArgumentError(f"gamma must be >= 0, got {gamma}")
    d_v, d_t, d_s, d = dims["d_v"], dims["d_t"], dims["d_s"], dims["d"]
    rng = np.random.default_rng(seed)
    params = ModelParams(
        proj_patch_h=_uniform_fan_in(rng, d_v, d_s),
        proj_patch_o=_uniform_fan_in(rng, d_v, d_s),
        proj_text_h=_uniform_fan_in(rng, d_t, d_s),
        proj_text_o=_uniform_fan_in(rng, d_t, d_s),
        proj_query=_uniform_fan_in(rng, 2 * d, d),
        attn=AttentionParams(
            w_q=_uniform_fan_in(rng, d, d),
            w_k=_uniform_fan_in(rng, d, d),
            w_v=_uniform_fan_in(rng, d, d),
            w_o=_uniform_fan_in(rng, d, d),
            ln_scale=np.ones(d),
            ln_shift=np.zeros(d),
        ),
        proj_action=_uniform_fan_in(rng, d, d_t),
        tau_p=float(tau_p),
        gamma=float(gamma),
    )
    return params


def init_ml_decoder_params(d_t: int, d: int, seed: int) -> MLDecoderParams:
    """Fresh baseline decoder; same init scheme as :func:`init_params`."""
    if d_t <= 0 or d <= 0:
        raise ArgumentError(f"dimensions must be positive, got d_t={d_t}, d={d}")
    rng = np.random.default_rng(seed)
    return MLDecoderParams(
        proj_query_in=_uniform_fan_in(rng, d_t, d),
        attn=AttentionParams(
            w_q=_uniform_fan_in(rng, d, d),
            w_k=_uniform_fan_in(rng, d, d),
            w_v=_uniform_fan_in(rng, d, d),
            w_o=_uniform_fan_in(rng, d, d),
            ln_scale=np.ones(d),
            ln_shift=np.zeros(d),
        ),
        proj_out=_uniform_fan_in(rng, d, 1),
    )


def params_dims(params: ModelParams) -> dict[str, int]:
    return {"d_v": params.d_v, "d_t": params.d_t, "d_s": params.d_s, "d": params.d}


def save_checkpoint(params: ModelParams, path) -> None:
    dims = params_dims(params)
    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<4I", dims["d_v"], dims["d_t"], dims["d_s"], dims["d"]),
        struct.pack("<2d", params.tau_p, params.gamma),
    ]
    for path_, (rows, cols) in leaf_shapes(dims):
        value = np.asarray(_get_leaf(params, path_), dtype=np.float64).reshape(rows, cols)
        chunks.append(struct.pack("<2I", rows, cols))
        chunks.append(value.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated checkpoint while reading {what}", offset=fh.tell())
    return data


def load_checkpoint(path) -> ModelParams:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        FormatError: bad magic/version, dimension mismatch, or truncation; the
            message carries the byte offset of the failure.
    """
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", offset=0)
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}", offset=4)
        d_v, d_t, d_s, d = struct.unpack("<4I", _read_exact(fh, 16, "dims"))
        dims = {"d_v": d_v, "d_t": d_t, "d_s": d_s, "d": d}
        if min(dims.values()) <= 0:
            raise FormatError(f"non-positive dimension in header: {dims}", offset=8)
        tau_p, gamma = struct.unpack("<2d", _read_exact(fh, 16, "tau_p/gamma"))
        leaves = {}
        for path_, (rows, cols) in leaf_shapes(dims):
            header_at = fh.tell()
            r, c = struct.unpack("<2I", _read_exact(fh, 8, f"{'.'.join(path_)} header"))
            if (r, c) != (rows, cols):
                raise FormatError(
                    f"{'.'.join(path_)} declared {r}x{c}, expected {rows}x{cols}",
                    offset=header_at,
                )
            raw = _read_exact(fh, 4 * rows * cols, f"{'.'.join(path_)} payload")
            leaves[path_] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(rows, cols)
        trailing = fh.read(1)
        if trailing:
            raise FormatError("trailing bytes after final block", offset=fh.tell() - 1)

    def leaf(path_):
        value = leaves[path_]
        if value.shape == (1, 1):
            return float(value[0, 0])
        if value.shape[0] == 1 and path_[-1] in ("ln_scale", "ln_shift"):
            return value[0].copy()
        return value

    return ModelParams(
        proj_patch_h=leaf(("proj_patch_h",)),
        proj_patch_o=leaf(("proj_patch_o",)),
        proj_text_h=leaf(("proj_text_h",)),
        proj_text_o=leaf(("proj_text_o",)),
        proj_query=leaf(("proj_query",)),
        attn=AttentionParams(
            w_q=leaf(("attn", "w_q")),
            w_k=leaf(("attn", "w_k")),
            w_v=leaf(("attn", "w_v")),
            w_o=leaf(("attn", "w_o")),
            ln_scale=leaf(("attn", "ln_scale")),
            ln_shift=leaf(("attn", "ln_shift")),
        ),
        proj_action=leaf(("proj_action",)),
        sig_action=SigmoidParams(
            leaf(("sig_action", "log_temp")), leaf(("sig_action", "bias"))
        ),
        sig_inter_h=SigmoidParams(
            leaf(("sig_inter_h", "log_temp")), leaf(("sig_inter_h", "bias"))
        ),
        sig_inter_o=SigmoidParams(
            leaf(("sig_inter_o", "log_temp")), leaf(("sig_inter_o", "bias"))
        ),
        tau_p=tau_p,
        gamma=gamma,
    )


def pack_params(params: ModelParams) -> np.ndarray:
    """Flatten every learnable leaf into one float64 vector (canonical order)."""
    parts = []
    for path in _LEAVES:
        value = _get_leaf(params, path)
        parts.append(np.atleast_1d(np.asarray(value, dtype=np.float64)).ravel())
    return np.concatenate(parts)


def unpack_params(vector: np.ndarray, template: ModelParams) -> ModelParams:
    """Inverse of :func:`pack_params`, shapes taken from ``template``."""
    vector = np.asarray(vector, dtype=np.float64)
    expected = pack_params(template).size
    if vector.size != expected:
        raise ArgumentError(f"vector has {vector.size} entries, params need {expected}")
    out = template.copy()
    at = 0
    for path in _LEAVES:
        value = _get_leaf(template, path)
        if isinstance(value, np.ndarray):
            n = value.size
            _set_leaf(out, path, vector[at : at + n].reshape(value.shape).copy())
        else:
            n = 1
            _set_leaf(out, path, float(vector[at]))
        at += n
    return out
