"""A small vision transformer with shifted-patch tokenization and
locality self-attention, implemented with explicit numpy forward and
backward passes.

Tokenization concatenates the image with four diagonally shifted copies,
patches and layer-normalizes the result, projects it, and adds a learned
positional embedding. Attention uses a learnable per-head softmax
temperature and a masked (-inf) self-similarity diagonal, so each token's
attention weight to itself is exactly zero. Blocks are pre-layer-norm with
residual connections. All layer norms are affine-free.

Parameters live in a flat ``dict[str, np.ndarray]``; computation follows
the parameter dtype (float32 for training, float64 for gradient checks).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import erf

LN_EPS = 1e-6
ADAM_KEYS = ("m", "v")

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class DivergenceError(RuntimeError):
    """Non-finite activations encountered; training has diverged."""


@dataclass(frozen=True)
class VitConfig:
    image_size: int = 256
    patch_size: int = 32
    num_blocks: int = 8
    num_heads: int = 4
    proj_dim: int = 64
    block_dropout: float = 0.10
    mlp_dims: tuple[int, int] = (128, 64)
    head_dropout: float = 0.50
    head_dims: tuple[int, int] = (1024, 512)
    num_classes: int = 4

    def __post_init__(self) -> None:
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")
        if self.proj_dim % self.num_heads != 0:
            raise ValueError("proj_dim must be divisible by num_heads")
        if self.mlp_dims[-1] != self.proj_dim:
            raise ValueError("last mlp dim must equal proj_dim (residual connection)")

    @property
    def num_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def raw_patch_dim(self) -> int:
        return 5 * self.patch_size**2

    @property
    def head_dim(self) -> int:
        return self.proj_dim // self.num_heads

    @property
    def shift(self) -> int:
        return self.patch_size // 2

    def to_json_obj(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_obj(cls, obj: dict) -> "VitConfig":
        obj = dict(obj)
        obj["mlp_dims"] = tuple(obj["mlp_dims"])
        obj["head_dims"] = tuple(obj["head_dims"])
        return cls(**obj)


def param_shapes(cfg: VitConfig) -> dict[str, tuple[int, ...]]:
    """Stable parameter inventory; names double as checkpoint blob names."""
    d, t = cfg.proj_dim, cfg.num_tokens
    m1, m2 = cfg.mlp_dims
    h1, h2 = cfg.head_dims
    shapes: dict[str, tuple[int, ...]] = {
        "spt.weight": (cfg.raw_patch_dim, d),
        "spt.bias": (d,),
        "pos": (t, d),
    }
    for i in range(cfg.num_blocks):
        for proj in ("q", "k", "v", "out"):
            shapes[f"block{i}.{proj}.weight"] = (d, d)
            shapes[f"block{i}.{proj}.bias"] = (d,)
        shapes[f"block{i}.tau"] = (cfg.num_heads,)
        shapes[f"block{i}.mlp1.weight"] = (d, m1)
        shapes[f"block{i}.mlp1.bias"] = (m1,)
        shapes[f"block{i}.mlp2.weight"] = (m1, m2)
        shapes[f"block{i}.mlp2.bias"] = (m2,)
    shapes["head1.weight"] = (t * d, h1)
    shapes["head1.bias"] = (h1,)
    shapes["head2.weight"] = (h1, h2)
    shapes["head2.bias"] = (h2,)
    shapes["classifier.weight"] = (h2, cfg.num_classes)
    shapes["classifier.bias"] = (cfg.num_classes,)
    return shapes


def param_count(cfg: VitConfig) -> int:
    """Closed-form total parameter count.

    SPT + positions + blocks * (4 projections + temperatures + 2 mlp
    layers) + 2 head layers + classifier. The default 256/32 configuration
    with 4 classes counts 5 319 780 here; the originally reported deployment
    of this architecture counted 5 730 512 (layer bookkeeping differs).
    """
    d, t = cfg.proj_dim, cfg.num_tokens
    m1, m2 = cfg.mlp_dims
    h1, h2 = cfg.head_dims
    spt = cfg.raw_patch_dim * d + d
    pos = t * d
    block = 4 * (d * d + d) + cfg.num_heads + (d * m1 + m1) + (m1 * m2 + m2)
    heads = (t * d) * h1 + h1 + h1 * h2 + h2
    cls = h2 * cfg.num_classes + cfg.num_classes
    return spt + pos + cfg.num_blocks * block + heads + cls


def init_params(
    cfg: VitConfig, rng: np.random.Generator, dtype: type = np.float32
) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, small-normal positions,
    temperatures at sqrt(head_dim)."""
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        if name == "pos":
            params[name] = (0.02 * rng.standard_normal(shape)).astype(dtype)
        elif name.endswith(".tau"):
            params[name] = np.full(shape, math.sqrt(cfg.head_dim), dtype=dtype)
        elif name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return params


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / SQRT2)) + x * INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _layer_norm(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Affine-free layer norm over the last axis; returns (y, scale)."""
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    scale = np.sqrt(var + LN_EPS)
    return (x - mu) / scale, scale


def _layer_norm_grad(dy: np.ndarray, y: np.ndarray, scale: np.ndarray) -> np.ndarray:
    mean_dy = dy.mean(axis=-1, keepdims=True)
    mean_dyy = (dy * y).mean(axis=-1, keepdims=True)
    return (dy - mean_dy - y * mean_dyy) / scale


def diagonal_shifts(image: np.ndarray, shift: int) -> np.ndarray:
    """Four zero-padded diagonal translations of the image: content moves by
    (-s,-s), (-s,+s), (+s,-s), (+s,+s). Returns [4, H, W]."""
    h, w = image.shape
    out = np.zeros((4, h, w), dtype=image.dtype)
    for c, (dy, dx) in enumerate(((-shift, -shift), (-shift, shift), (shift, -shift), (shift, shift))):
        ys_dst = slice(max(dy, 0), h + min(dy, 0))
        ys_src = slice(max(-dy, 0), h + min(-dy, 0))
        xs_dst = slice(max(dx, 0), w + min(dx, 0))
        xs_src = slice(max(-dx, 0), w + min(-dx, 0))
        out[c, ys_dst, xs_dst] = image[ys_src, xs_src]
    return out


def _patchify(channels: np.ndarray, patch: int) -> np.ndarray:
    """[C, H, W] -> [T, C * patch * patch] with row-major token order."""
    c, h, w = channels.shape
    th, tw = h // patch, w // patch
    x = channels.reshape(c, th, patch, tw, patch)
    x = x.transpose(1, 3, 0, 2, 4)  # [th, tw, c, p, p]
    return x.reshape(th * tw, c * patch * patch)


def _draw_masks(
    cfg: VitConfig, rng: np.random.Generator, dtype: type
) -> dict[str, list[np.ndarray] | np.ndarray]:
    """Inverted-scaling dropout masks, drawn in a fixed order."""
    t = cfg.num_tokens
    masks: dict = {"attn": [], "mlp1": [], "mlp2": []}

    def draw(shape, p):
        if p <= 0.0:
            return np.ones(shape, dtype=dtype)
        return ((rng.random(shape) >= p) / (1.0 - p)).astype(dtype)

    for _ in range(cfg.num_blocks):
        masks["attn"].append(draw((cfg.num_heads, t, t), cfg.block_dropout))
        masks["mlp1"].append(draw((t, cfg.mlp_dims[0]), cfg.block_dropout))
        masks["mlp2"].append(draw((t, cfg.mlp_dims[1]), cfg.block_dropout))
    masks["head"] = draw((t * cfg.proj_dim,), cfg.head_dropout)
    return masks


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def _spt_forward(image: np.ndarray, params: dict, cfg: VitConfig) -> tuple[np.ndarray, dict]:
    if image.shape != (cfg.image_size, cfg.image_size):
        raise ValueError(
            f"expected {cfg.image_size}x{cfg.image_size} image, got {image.shape}"
        )
    channels = np.concatenate(
        [image[None], diagonal_shifts(image, cfg.shift)], axis=0
    )
    raw = _patchify(channels, cfg.patch_size)
    raw_ln, _ = _layer_norm(raw)
    tokens = raw_ln @ params["spt.weight"] + params["spt.bias"] + params["pos"]
    return tokens, {"raw_ln": raw_ln}


def _attention_forward(
    u: np.ndarray,
    params: dict,
    block: int,
    cfg: VitConfig,
    attn_mask: Optional[np.ndarray],
) -> tuple[np.ndarray, dict]:
    t, d = u.shape
    if t < 2:
        raise ValueError("locality attention needs at least 2 tokens")
    nh, dh = cfg.num_heads, cfg.head_dim
    p = lambda name: params[f"block{block}.{name}"]
    tau = p("tau")
    if np.any(tau <= 0):
        raise ValueError(f"block{block}: softmax temperature must be positive")

    def heads(mat):
        return mat.reshape(t, nh, dh).transpose(1, 0, 2)  # [H, T, dh]

    q = heads(u @ p("q.weight") + p("q.bias"))
    k = heads(u @ p("k.weight") + p("k.bias"))
    v = heads(u @ p("v.weight") + p("v.bias"))
    raw = np.einsum("htd,hsd->hts", q, k)  # [H, T, T]
    scores = raw / tau[:, None, None]
    diag = np.arange(t)
    scores[:, diag, diag] = -np.inf
    shifted = scores - scores.max(axis=-1, keepdims=True)
    expd = np.exp(shifted)
    attn = expd / expd.sum(axis=-1, keepdims=True)  # diagonal exactly 0
    attn_d = attn if attn_mask is None else attn * attn_mask
    mixed = np.einsum("hts,hsd->htd", attn_d, v)
    concat = mixed.transpose(1, 0, 2).reshape(t, d)
    out = concat @ p("out.weight") + p("out.bias")
    cache = {
        "u": u, "q": q, "k": k, "v": v, "raw": raw, "attn": attn,
        "attn_d": attn_d, "concat": concat, "tau": tau,
    }
    return out, cache


def _forward_full(
    image: np.ndarray,
    params: dict,
    cfg: VitConfig,
    masks: Optional[dict],
) -> tuple[np.ndarray, dict]:
    dtype = params["spt.weight"].dtype
    image = np.asarray(image, dtype=dtype)
    tokens, spt_cache = _spt_forward(image, params, cfg)
    cache: dict = {"spt": spt_cache, "blocks": []}
    x = tokens
    for i in range(cfg.num_blocks):
        bc: dict = {"x_in": x}
        u, s1 = _layer_norm(x)
        bc["ln1"] = (u, s1)
        attn_mask = None if masks is None else masks["attn"][i]
        att, att_cache = _attention_forward(u, params, i, cfg, attn_mask)
        bc["attn"] = att_cache
        x = x + att
        bc["x_mid"] = x
        u2, s2 = _layer_norm(x)
        bc["ln2"] = (u2, s2)
        z1 = u2 @ params[f"block{i}.mlp1.weight"] + params[f"block{i}.mlp1.bias"]
        g1 = _gelu(z1)
        h1 = g1 if masks is None else g1 * masks["mlp1"][i]
        z2 = h1 @ params[f"block{i}.mlp2.weight"] + params[f"block{i}.mlp2.bias"]
        g2 = _gelu(z2)
        h2 = g2 if masks is None else g2 * masks["mlp2"][i]
        bc["mlp"] = (z1, h1, z2)
        x = x + h2
        cache["blocks"].append(bc)
    flat = x.reshape(-1)
    flat_d = flat if masks is None else flat * masks["head"]
    zh1 = flat_d @ params["head1.weight"] + params["head1.bias"]
    gh1 = _gelu(zh1)
    zh2 = gh1 @ params["head2.weight"] + params["head2.bias"]
    gh2 = _gelu(zh2)
    logits = gh2 @ params["classifier.weight"] + params["classifier.bias"]
    shifted = logits - logits.max()
    expd = np.exp(shifted)
    probs = expd / expd.sum()
    cache.update(
        {"flat_d": flat_d, "zh1": zh1, "gh1": gh1, "zh2": zh2, "gh2": gh2, "probs": probs}
    )
    return probs, cache


def spt_tokenize(image: np.ndarray, cfg: VitConfig, params: dict) -> np.ndarray:
    """Tokenize one image: [T, proj_dim] tokens with positional embedding added."""
    dtype = params["spt.weight"].dtype
    tokens, _ = _spt_forward(np.asarray(image, dtype=dtype), params, cfg)
    return tokens


def lsa_attention(
    tokens: np.ndarray,
    params: dict,
    block: int,
    cfg: VitConfig,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
    return_attention: bool = False,
):
    """One locality self-attention layer (without the residual connection)."""
    mask = None
    if train_mode and cfg.block_dropout > 0.0:
        if rng is None:
            raise ValueError("train_mode attention dropout needs an rng")
        t = tokens.shape[0]
        mask = (
            (rng.random((cfg.num_heads, t, t)) >= cfg.block_dropout)
            / (1.0 - cfg.block_dropout)
        ).astype(tokens.dtype)
    out, cache = _attention_forward(tokens, params, block, cfg, mask)
    if return_attention:
        return out, cache["attn"]
    return out


def forward(
    image: np.ndarray,
    params: dict,
    cfg: VitConfig,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Class-score vector P (softmax, sums to 1) for one image."""
    masks = None
    if train_mode:
        if rng is None:
            raise ValueError("train_mode forward needs an rng for dropout")
        masks = _draw_masks(cfg, rng, params["spt.weight"].dtype)
    probs, _ = _forward_full(image, params, cfg, masks)
    if not np.isfinite(probs).all():
        raise DivergenceError("non-finite class scores")
    return probs


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def _backward_full(
    image: np.ndarray,
    label: int,
    params: dict,
    cfg: VitConfig,
    masks: Optional[dict],
) -> tuple[float, dict[str, np.ndarray]]:
    probs, cache = _forward_full(image, params, cfg, masks)
    if not np.isfinite(probs).all():
        raise DivergenceError("non-finite class scores")
    loss = -float(np.log(max(float(probs[label]), 1e-300)))
    grads = {name: np.zeros_like(p) for name, p in params.items()}

    dlogits = probs.copy()
    dlogits[label] -= 1.0

    grads["classifier.weight"] += np.outer(cache["gh2"], dlogits)
    grads["classifier.bias"] += dlogits
    dgh2 = params["classifier.weight"] @ dlogits
    dzh2 = dgh2 * _gelu_grad(cache["zh2"])
    grads["head2.weight"] += np.outer(cache["gh1"], dzh2)
    grads["head2.bias"] += dzh2
    dgh1 = params["head2.weight"] @ dzh2
    dzh1 = dgh1 * _gelu_grad(cache["zh1"])
    grads["head1.weight"] += np.outer(cache["flat_d"], dzh1)
    grads["head1.bias"] += dzh1
    dflat_d = params["head1.weight"] @ dzh1
    dflat = dflat_d if masks is None else dflat_d * masks["head"]
    dx = dflat.reshape(cfg.num_tokens, cfg.proj_dim)

    for i in reversed(range(cfg.num_blocks)):
        bc = cache["blocks"][i]
        z1, h1m, z2 = bc["mlp"]
        u2, s2 = bc["ln2"]

        dh2 = dx  # residual: x = x_mid + h2
        dg2 = dh2 if masks is None else dh2 * masks["mlp2"][i]
        dz2 = dg2 * _gelu_grad(z2)
        grads[f"block{i}.mlp2.weight"] += h1m.T @ dz2
        grads[f"block{i}.mlp2.bias"] += dz2.sum(axis=0)
        dh1 = dz2 @ params[f"block{i}.mlp2.weight"].T
        dg1 = dh1 if masks is None else dh1 * masks["mlp1"][i]
        dz1 = dg1 * _gelu_grad(z1)
        grads[f"block{i}.mlp1.weight"] += u2.T @ dz1
        grads[f"block{i}.mlp1.bias"] += dz1.sum(axis=0)
        du2 = dz1 @ params[f"block{i}.mlp1.weight"].T
        dx = dx + _layer_norm_grad(du2, u2, s2)

        ac = bc["attn"]
        u, s1 = bc["ln1"]
        t, d = u.shape
        nh, dh_ = cfg.num_heads, cfg.head_dim

        datt_out = dx  # residual: x_mid = x_in + att_out
        grads[f"block{i}.out.weight"] += ac["concat"].T @ datt_out
        grads[f"block{i}.out.bias"] += datt_out.sum(axis=0)
        dconcat = datt_out @ params[f"block{i}.out.weight"].T
        dmixed = dconcat.reshape(t, nh, dh_).transpose(1, 0, 2)  # [H, T, dh]

        dattn_d = np.einsum("htd,hsd->hts", dmixed, ac["v"])
        dv = np.einsum("hts,htd->hsd", ac["attn_d"], dmixed)
        dattn = dattn_d if masks is None else dattn_d * masks["attn"][i]
        attn = ac["attn"]
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        tau = ac["tau"]
        graw = dscores / tau[:, None, None]
        grads[f"block{i}.tau"] += -(dscores * ac["raw"]).sum(axis=(1, 2)) / tau**2
        dq = np.einsum("hts,hsd->htd", graw, ac["k"])
        dk = np.einsum("hts,htd->hsd", graw, ac["q"])

        def merge(dheads):
            return dheads.transpose(1, 0, 2).reshape(t, d)

        du = np.zeros_like(u)
        for proj, dmat in (("q", merge(dq)), ("k", merge(dk)), ("v", merge(dv))):
            grads[f"block{i}.{proj}.weight"] += u.T @ dmat
            grads[f"block{i}.{proj}.bias"] += dmat.sum(axis=0)
            du += dmat @ params[f"block{i}.{proj}.weight"].T
        dx = dx + _layer_norm_grad(du, u, s1)

    grads["pos"] += dx
    grads["spt.bias"] += dx.sum(axis=0)
    grads["spt.weight"] += cache["spt"]["raw_ln"].T @ dx
    return loss, grads


def backward(
    image: np.ndarray,
    label: int,
    params: dict,
    cfg: VitConfig,
    rng: Optional[np.random.Generator] = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy loss and gradients for every parameter tensor.

    With an rng, dropout is active (training semantics); without, the loss
    is the deterministic eval-mode value.
    """
    masks = None
    if rng is not None:
        masks = _draw_masks(cfg, rng, params["spt.weight"].dtype)
    return _backward_full(image, label, params, cfg, masks)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    cfg: VitConfig
    step: int
    history: list[dict]
    opt_state: Optional[dict] = None


def save_checkpoint(
    ckpt_dir: str | Path,
    params: dict[str, np.ndarray],
    cfg: VitConfig,
    step: int,
    history: list[dict],
    opt_state: Optional[dict] = None,
) -> Path:
    """Write a checkpoint directory: header.json + one STF blob per tensor."""
    from modalvit.tensor_core import write_stf

    ckpt_dir = Path(ckpt_dir)
    (ckpt_dir / "params").mkdir(parents=True, exist_ok=True)
    for name, arr in params.items():
        write_stf(np.asarray(arr, dtype=np.float32), ckpt_dir / "params" / f"{name}.stf")
    header = {
        "config": cfg.to_json_obj(),
        "step": step,
        "history": history,
        "param_names": sorted(params),
        "opt_step": None,
    }
    if opt_state is not None:
        (ckpt_dir / "opt").mkdir(parents=True, exist_ok=True)
        for key in ADAM_KEYS:
            for name, arr in opt_state[key].items():
                write_stf(
                    np.asarray(arr, dtype=np.float32),
                    ckpt_dir / "opt" / f"{name}.{key}.stf",
                )
        header["opt_step"] = opt_state["t"]
    (ckpt_dir / "header.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    return ckpt_dir


def load_checkpoint(ckpt_dir: str | Path) -> Checkpoint:
    from modalvit.tensor_core import read_stf

    ckpt_dir = Path(ckpt_dir)
    header = json.loads((ckpt_dir / "header.json").read_text())
    cfg = VitConfig.from_json_obj(header["config"])
    params = {
        name: read_stf(ckpt_dir / "params" / f"{name}.stf")
        for name in header["param_names"]
    }
    opt_state = None
    if header.get("opt_step") is not None:
        opt_state = {
            key: {
                name: read_stf(ckpt_dir / "opt" / f"{name}.{key}.stf")
                for name in header["param_names"]
            }
            for key in ADAM_KEYS
        }
        opt_state["t"] = int(header["opt_step"])
    return Checkpoint(
        params=params,
        cfg=cfg,
        step=int(header["step"]),
        history=list(header["history"]),
        opt_state=opt_state,
    )
