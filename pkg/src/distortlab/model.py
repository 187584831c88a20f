"""Toy vision-transformer segmenter: patch embedding, pre-norm encoder blocks,
per-patch MLP head, bilinear upsampling to pixel logits, and checkpointing.

All arithmetic is float64 and single-threaded-deterministic: a fixed seed and
input give bitwise-identical logits across runs. The backward pass is written
by hand so gradients can be validated against central finite differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import NumericError, PipelineError
from .masks import BinaryMask

PATCH_SIZE = 14
_CHECKPOINT_MAGIC = b"VTHD"
_CHECKPOINT_VERSION = 1
_LN_EPS = 1e-5
_SQRT_2PI = float(np.sqrt(2.0 * np.pi))

_BLOCK_PARAMS = (
    "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "ln2_g", "ln2_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b",
)


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    head_hidden_dim: int = 128
    init_seed: int = 0
    patch_size: int = PATCH_SIZE

    def __post_init__(self):
        if self.patch_size != PATCH_SIZE:
            raise ValueError(f"patch size is fixed at {PATCH_SIZE}, got {self.patch_size}")
        if self.embed_dim < 4 or self.depth < 1 or self.num_heads < 1 or self.head_hidden_dim < 1:
            raise ValueError("embed_dim/depth/num_heads/head_hidden_dim must be positive")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.embed_dim % 4 != 0:
            # the 2D sin/cos position encoding splits the dim in four
            raise ValueError(f"embed_dim must be divisible by 4, got {self.embed_dim}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch_size * self.patch_size

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "depth": self.depth,
            "num_heads": self.num_heads,
            "head_hidden_dim": self.head_hidden_dim,
            "init_seed": self.init_seed,
            "patch_size": self.patch_size,
        }


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in their declared (checkpoint) order."""
    d, h = cfg.embed_dim, cfg.head_hidden_dim
    shapes: dict[str, tuple[int, ...]] = {
        "patch_proj_w": (cfg.patch_dim, d),
        "patch_proj_b": (d,),
    }
    for i in range(cfg.depth):
        block = {
            f"block{i}.ln1_g": (d,), f"block{i}.ln1_b": (d,),
            f"block{i}.wq": (d, d), f"block{i}.bq": (d,),
            f"block{i}.wk": (d, d), f"block{i}.bk": (d,),
            f"block{i}.wv": (d, d), f"block{i}.bv": (d,),
            f"block{i}.wo": (d, d), f"block{i}.bo": (d,),
            f"block{i}.ln2_g": (d,), f"block{i}.ln2_b": (d,),
            f"block{i}.ff1_w": (d, 4 * d), f"block{i}.ff1_b": (4 * d,),
            f"block{i}.ff2_w": (4 * d, d), f"block{i}.ff2_b": (d,),
        }
        shapes.update(block)
    shapes.update({
        "final_ln_g": (d,), "final_ln_b": (d,),
        "head1_w": (d, h), "head1_b": (h,),
        "head2_w": (h, 1), "head2_b": (1,),
    })
    return shapes


def decayed_param_names(cfg: ModelConfig) -> set[str]:
    """Weight matrices participate in decoupled weight decay; biases and norms do not."""
    return {name for name, shape in param_shapes(cfg).items() if len(shape) == 2}


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})


def init_model(config: ModelConfig, positive_prior: float = 0.05) -> Model:
    """Deterministic initialization from the config seed.

    Weight matrices are scaled by 1/sqrt(fan-in); the head's final layer is
    zeroed with its bias set so the initial distorted probability equals the
    given prior (typically the corpus positive-pixel rate). Values are rounded
    to the float32 grid so a freshly initialized model survives the float32
    checkpoint format bit-for-bit.
    """
    if not (0.0 < positive_prior < 1.0):
        raise ValueError(f"positive_prior must be in (0, 1), got {positive_prior}")
    rng = np.random.default_rng(config.init_seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(("ln1_g", "ln2_g", "final_ln_g")):
            params[name] = np.ones(shape, dtype=np.float64)
        elif name == "head2_w":
            params[name] = np.zeros(shape, dtype=np.float64)
        elif name == "head2_b":
            prior = min(max(positive_prior, 1e-6), 1.0 - 1e-6)
            params[name] = np.full(shape, np.log(prior / (1.0 - prior)), dtype=np.float64)
        elif len(shape) == 1:
            params[name] = np.zeros(shape, dtype=np.float64)
        else:
            fan_in = shape[0]
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
    params = {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}
    return Model(config, params)


# ---------------------------------------------------------------------------
# Patch extraction and position encoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PatchGrid:
    rows: int
    cols: int
    vectors: np.ndarray  # (rows*cols, 3*ps*ps) float64 in [0, 1]
    orig_height: int
    orig_width: int


def patchify(image: np.ndarray, patch_size: int = PATCH_SIZE) -> PatchGrid:
    """Tile an (H, W, 3) image into non-overlapping patches, row-major.

    Dimensions that are not multiples of the patch size are zero-padded on
    the bottom/right before tiling.
    """
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image dimensions must be positive")
    h, w = arr.shape[:2]
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    else:
        arr = arr.astype(np.float64)
    rows = -(-h // patch_size)
    cols = -(-w // patch_size)
    padded = np.zeros((rows * patch_size, cols * patch_size, 3), dtype=np.float64)
    padded[:h, :w] = arr
    tiles = padded.reshape(rows, patch_size, cols, patch_size, 3)
    vectors = tiles.transpose(0, 2, 1, 3, 4).reshape(rows * cols, 3 * patch_size * patch_size)
    return PatchGrid(rows, cols, np.ascontiguousarray(vectors), h, w)


def pos_encoding(rows: int, cols: int, dim: int) -> np.ndarray:
    """2D sinusoidal position encoding, (rows*cols, dim); resolution-agnostic."""
    half = dim // 2
    quarter = half // 2

    def axis_encoding(n: int) -> np.ndarray:
        pos = np.arange(n, dtype=np.float64)[:, None]
        freq = np.exp(-np.log(10000.0) * np.arange(quarter, dtype=np.float64) / quarter)
        ang = pos * freq[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)  # (n, half)

    row_enc = axis_encoding(rows)  # (rows, half)
    col_enc = axis_encoding(cols)  # (cols, half)
    pe = np.zeros((rows, cols, dim), dtype=np.float64)
    pe[:, :, :half] = row_enc[:, None, :]
    pe[:, :, half:] = col_enc[None, :, :]
    return pe.reshape(rows * cols, dim)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _layernorm_backward(dy: np.ndarray, g: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=axes)
    db = dy.sum(axis=axes)
    dxhat = dy * g
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dg, db


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / _SQRT_2PI
    return cdf + x * pdf


def _softmax(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    b, n, d = x.shape
    return x.reshape(b, n, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, n, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * hd)


def forward_patches(
    model: Model,
    vectors: np.ndarray,
    rows: int,
    cols: int,
    want_cache: bool = False,
    want_attention: bool = False,
):
    """Run the encoder + head over a batch of patch vectors.

    vectors: (B, N, patch_dim) with N == rows*cols. Returns logits (B, rows,
    cols), optionally with the backward cache and per-layer attention maps.
    """
    # divergence shows up as inf/nan mid-layer; the finite check at the end
    # surfaces it as NumericError instead of numpy runtime warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward_patches_impl(model, vectors, rows, cols, want_cache, want_attention)


def _forward_patches_impl(model, vectors, rows, cols, want_cache, want_attention):
    cfg = model.config
    p = model.params
    b, n, _ = vectors.shape
    if n != rows * cols:
        raise ValueError(f"got {n} patch vectors for a {rows}x{cols} grid")

    cache: dict = {"vectors": vectors, "blocks": []}
    attentions: list[np.ndarray] = []

    x = vectors @ p["patch_proj_w"] + p["patch_proj_b"]
    x = x + pos_encoding(rows, cols, cfg.embed_dim)[None, :, :]
    scale = 1.0 / np.sqrt(cfg.head_dim)

    for i in range(cfg.depth):
        blk = f"block{i}."
        h_norm, ln1_cache = _layernorm(x, p[blk + "ln1_g"], p[blk + "ln1_b"])
        q = _split_heads(h_norm @ p[blk + "wq"] + p[blk + "bq"], cfg.num_heads)
        k = _split_heads(h_norm @ p[blk + "wk"] + p[blk + "bk"], cfg.num_heads)
        v = _split_heads(h_norm @ p[blk + "wv"] + p[blk + "bv"], cfg.num_heads)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        attn = _softmax(scores)
        if want_attention:
            attentions.append(attn)
        ctx = _merge_heads(attn @ v)
        attn_out = ctx @ p[blk + "wo"] + p[blk + "bo"]
        x_attn = x + attn_out

        f_norm, ln2_cache = _layernorm(x_attn, p[blk + "ln2_g"], p[blk + "ln2_b"])
        ff_pre = f_norm @ p[blk + "ff1_w"] + p[blk + "ff1_b"]
        ff_act = _gelu(ff_pre)
        ff_out = ff_act @ p[blk + "ff2_w"] + p[blk + "ff2_b"]
        x_out = x_attn + ff_out

        if want_cache:
            cache["blocks"].append({
                "x_in": x, "h_norm": h_norm, "ln1": ln1_cache,
                "q": q, "k": k, "v": v, "attn": attn, "ctx": ctx,
                "x_attn": x_attn, "f_norm": f_norm, "ln2": ln2_cache,
                "ff_pre": ff_pre, "ff_act": ff_act,
            })
        x = x_out

    z, final_cache = _layernorm(x, p["final_ln_g"], p["final_ln_b"])
    head_pre = z @ p["head1_w"] + p["head1_b"]
    head_act = _gelu(head_pre)
    logits = (head_act @ p["head2_w"] + p["head2_b"])[..., 0]  # (B, N)

    if not np.isfinite(logits).all():
        raise NumericError("non-finite activations in forward pass")

    logits = logits.reshape(b, rows, cols)
    if want_cache:
        cache.update({"x_final": x, "final_ln": final_cache, "z": z,
                      "head_pre": head_pre, "head_act": head_act,
                      "rows": rows, "cols": cols})
    result = [logits]
    if want_cache:
        result.append(cache)
    if want_attention:
        result.append(attentions)
    return result[0] if len(result) == 1 else tuple(result)



def _outer_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum_{batch,token} a[...,i] * b[...,j] as a 2D BLAS matmul."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])

def backward_patches(model: Model, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, given d(loss)/d(logits)."""
    cfg = model.config
    p = model.params
    b, rows, cols = dlogits.shape
    n = rows * cols
    scale = 1.0 / np.sqrt(cfg.head_dim)
    grads = {name: np.zeros_like(arr) for name, arr in p.items()}

    dl = dlogits.reshape(b, n, 1)
    grads["head2_b"][:] = dl.sum(axis=(0, 1))
    grads["head2_w"][:] = _outer_grad(cache["head_act"], dl)
    dhead_act = dl @ p["head2_w"].T
    dhead_pre = dhead_act * _gelu_grad(cache["head_pre"])
    grads["head1_b"][:] = dhead_pre.sum(axis=(0, 1))
    grads["head1_w"][:] = _outer_grad(cache["z"], dhead_pre)
    dz = dhead_pre @ p["head1_w"].T

    dx, dg, db = _layernorm_backward(dz, p["final_ln_g"], cache["final_ln"])
    grads["final_ln_g"][:] = dg
    grads["final_ln_b"][:] = db

    for i in reversed(range(cfg.depth)):
        blk = f"block{i}."
        c = cache["blocks"][i]

        # feed-forward branch
        dff_out = dx
        grads[blk + "ff2_b"][:] = dff_out.sum(axis=(0, 1))
        grads[blk + "ff2_w"][:] = _outer_grad(c["ff_act"], dff_out)
        dff_act = dff_out @ p[blk + "ff2_w"].T
        dff_pre = dff_act * _gelu_grad(c["ff_pre"])
        grads[blk + "ff1_b"][:] = dff_pre.sum(axis=(0, 1))
        grads[blk + "ff1_w"][:] = _outer_grad(c["f_norm"], dff_pre)
        df_norm = dff_pre @ p[blk + "ff1_w"].T
        dx_attn, dg2, db2 = _layernorm_backward(df_norm, p[blk + "ln2_g"], c["ln2"])
        grads[blk + "ln2_g"][:] = dg2
        grads[blk + "ln2_b"][:] = db2
        dx_attn = dx_attn + dx  # residual

        # attention branch
        dattn_out = dx_attn
        grads[blk + "bo"][:] = dattn_out.sum(axis=(0, 1))
        grads[blk + "wo"][:] = _outer_grad(c["ctx"], dattn_out)
        dctx = _split_heads(dattn_out @ p[blk + "wo"].T, cfg.num_heads)
        dattn = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = c["attn"].transpose(0, 1, 3, 2) @ dctx
        # softmax backward
        dscores = c["attn"] * (dattn - (dattn * c["attn"]).sum(axis=-1, keepdims=True))
        dq = (dscores @ c["k"]) * scale
        dk = (dscores.transpose(0, 1, 3, 2) @ c["q"]) * scale

        dq_m, dk_m, dv_m = (_merge_heads(t) for t in (dq, dk, dv))
        grads[blk + "bq"][:] = dq_m.sum(axis=(0, 1))
        grads[blk + "bk"][:] = dk_m.sum(axis=(0, 1))
        grads[blk + "bv"][:] = dv_m.sum(axis=(0, 1))
        h_norm = c["h_norm"]
        grads[blk + "wq"][:] = _outer_grad(h_norm, dq_m)
        grads[blk + "wk"][:] = _outer_grad(h_norm, dk_m)
        grads[blk + "wv"][:] = _outer_grad(h_norm, dv_m)
        dh_norm = dq_m @ p[blk + "wq"].T + dk_m @ p[blk + "wk"].T + dv_m @ p[blk + "wv"].T
        dx_in, dg1, db1 = _layernorm_backward(dh_norm, p[blk + "ln1_g"], c["ln1"])
        grads[blk + "ln1_g"][:] = dg1
        grads[blk + "ln1_b"][:] = db1
        dx = dx_in + dx_attn  # residual

    grads["patch_proj_b"][:] = dx.sum(axis=(0, 1))
    grads["patch_proj_w"][:] = _outer_grad(cache["vectors"], dx)
    return grads


def forward(model: Model, image: np.ndarray, want_attention: bool = False):
    """Patch logits for a single image of any size (padding handled by patchify)."""
    grid = patchify(image, model.config.patch_size)
    out = forward_patches(
        model, grid.vectors[None, :, :], grid.rows, grid.cols, want_attention=want_attention
    )
    if want_attention:
        logits, attentions = out
        return logits[0], attentions
    return out[0]


# ---------------------------------------------------------------------------
# Bilinear upsampling
# ---------------------------------------------------------------------------

def upsample_weights(grid_size: int, target: int, patch_size: int = PATCH_SIZE) -> np.ndarray:
    """Dense (target, grid_size) interpolation matrix for one axis.

    Grid node r sits at coordinate (r + 0.5) * patch_size; output pixel i is
    sampled at coordinate i, with constant extrapolation beyond the outermost
    nodes. Under this align-corners=false convention the pixel at an exact
    patch-center coordinate reproduces the node value.
    """
    w = np.zeros((target, grid_size), dtype=np.float64)
    if grid_size == 1:
        w[:, 0] = 1.0
        return w
    g = np.arange(target, dtype=np.float64) / patch_size - 0.5
    r0 = np.clip(np.floor(g).astype(int), 0, grid_size - 2)
    t = np.clip(g - r0, 0.0, 1.0)
    rows = np.arange(target)
    w[rows, r0] = 1.0 - t
    w[rows, r0 + 1] += t
    return w


def upsample_logits(
    patch_logits: np.ndarray, target_h: int, target_w: int, patch_size: int = PATCH_SIZE
) -> np.ndarray:
    """Bilinear interpolation of an (R, C) patch grid to (target_h, target_w) pixels.

    Targets are the pre-padding image dimensions; querying only those rows and
    columns is equivalent to interpolating at padded size and cropping.
    """
    grid = np.asarray(patch_logits, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError(f"patch logits must be 2D, got shape {grid.shape}")
    rows, cols = grid.shape
    if target_h > rows * patch_size or target_w > cols * patch_size:
        raise ValueError("target dimensions exceed the padded patch grid extent")
    wr = upsample_weights(rows, target_h, patch_size)
    wc = upsample_weights(cols, target_w, patch_size)
    return wr @ grid @ wc.T


def predict_mask(model: Model, image: np.ndarray, threshold: float = 0.5) -> BinaryMask:
    """Thresholded per-pixel prediction; at 0.5 this is exactly logit > 0."""
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    arr = np.asarray(image)
    patch_logits = forward(model, arr)
    pixel_logits = upsample_logits(patch_logits, arr.shape[0], arr.shape[1], model.config.patch_size)
    cut = 0.0 if threshold == 0.5 else np.log(threshold / (1.0 - threshold))
    return BinaryMask(pixel_logits > cut)


# ---------------------------------------------------------------------------
# Checkpoint format: b"VTHD" | u32 version | u32 header_len | header JSON |
# parameters in declared order as float32 little-endian.
# ---------------------------------------------------------------------------

def save_checkpoint(model: Model, path) -> None:
    shapes = param_shapes(model.config)
    header = {
        "config": model.config.to_dict(),
        "params": [{"name": n, "shape": list(s)} for n, s in shapes.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", _CHECKPOINT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for name in shapes:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CHECKPOINT_MAGIC:
            raise PipelineError(f"{path}: not a checkpoint (bad magic {magic!r})")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _CHECKPOINT_VERSION:
            raise PipelineError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        config = ModelConfig(**header["config"])
        expected = param_shapes(config)
        params: dict[str, np.ndarray] = {}
        for entry in header["params"]:
            name, shape = entry["name"], tuple(entry["shape"])
            if name not in expected or expected[name] != shape:
                raise PipelineError(f"{path}: unexpected parameter {name} {shape}")
            count = int(np.prod(shape))
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise PipelineError(f"{path}: truncated parameter data for {name}")
            params[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
        if fh.read(1):
            raise PipelineError(f"{path}: trailing bytes after parameters")
    if set(params) != set(expected):
        raise PipelineError(f"{path}: missing parameters")
    return Model(config, params)
