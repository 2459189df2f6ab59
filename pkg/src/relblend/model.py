"""Transformer encoder with additive pairwise attention bias, plus heads.

The encoder follows post-norm residual blocks: multi-head self-attention
with one shared scalar bias matrix added to every head's logits, then a
GELU feed-forward, each wrapped in LayerNorm(x + sublayer(x)). Pairwise
predictions come from an outer-product projection of two per-atom
projections; per-atom noise predictions and a mean readout complete the
surface.

Everything is plain float64 numpy with hand-written backward passes. Each
forward returns a cache; backwards accumulate into a name -> gradient
dict so composite losses can be finite-difference checked parameter by
parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erf

from .molio import VOCAB_SIZE
from .relations import (
    NUM_BOND_TYPES,
    NUM_EDGE_CLASSES,
    EdgePathParams,
    GaussianKernelParams,
)
from .rng import TAG_PARAM_INIT, keyed_stream

SQRT_2PI = np.sqrt(2.0 * np.pi)
INV_SQRT2 = 1.0 / np.sqrt(2.0)

HEAD_TARGETS = ("spd", "edge", "dist")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. Defaults are the desk-scale model."""

    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    m_pair: int = 8
    max_spd: int = 15
    n_kernels: int = 16
    d_edge: int = 8
    dist_head_dim: int = 1  # 1: scalar distance regression; 3: displacement vector
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "d_ff", "m_pair",
                     "max_spd", "n_kernels", "d_edge"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.m_pair < 2:
            raise ValueError("m_pair must be >= 2 (LayerNorm needs a nonzero variance axis)")
        if self.dist_head_dim not in (1, 3):
            raise ValueError("dist_head_dim must be 1 or 3")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_spd_classes(self) -> int:
        return self.max_spd + 2  # hops 0..max_spd plus the unreachable sentinel

    def head_classes(self, target: str) -> int:
        return {"spd": self.n_spd_classes, "edge": NUM_EDGE_CLASSES,
                "dist": self.dist_head_dim}[target]


# Full-scale preset from the published training setup; never used in tests.
FULL_SCALE = ModelConfig(
    n_layers=12, d_model=768, n_heads=32, d_ff=3072, m_pair=32,
    max_spd=15, n_kernels=128, d_edge=8,
)

GRADCHECK = ModelConfig(
    n_layers=2, d_model=8, n_heads=2, d_ff=16, m_pair=4,
    max_spd=15, n_kernels=4, d_edge=4,
)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """The stable name -> shape table for every learnable tensor."""
    d, df, m = config.d_model, config.d_ff, config.m_pair
    k = config.n_kernels
    shapes: dict[str, tuple[int, ...]] = {
        "atom_embed": (VOCAB_SIZE, d),
        "spd_buckets": (config.n_spd_classes,),
        "edge_hop_w": (config.max_spd, config.d_edge),
        "edge_bond_feat": (NUM_BOND_TYPES, config.d_edge),
        "gauss_mu": (k,),
        "gauss_sigma": (k,),
        "gauss_gamma": (VOCAB_SIZE, VOCAB_SIZE),
        "gauss_beta": (VOCAB_SIZE, VOCAB_SIZE),
        "gauss_w1": (k, k),
        "gauss_w2": (k,),
    }
    for l in range(config.n_layers):
        prefix = f"layers.{l}."
        shapes[prefix + "attn_wq"] = (d, d)
        shapes[prefix + "attn_wk"] = (d, d)
        shapes[prefix + "attn_wv"] = (d, d)
        shapes[prefix + "attn_wo"] = (d, d)
        shapes[prefix + "ln1_gain"] = (d,)
        shapes[prefix + "ln1_bias"] = (d,)
        shapes[prefix + "ffn_w1"] = (d, df)
        shapes[prefix + "ffn_w2"] = (df, d)
        shapes[prefix + "ln2_gain"] = (d,)
        shapes[prefix + "ln2_bias"] = (d,)
    shapes["pair_wl"] = (m, d)
    shapes["pair_wr"] = (m, d)
    shapes["pair_ln_gain"] = (m,)
    shapes["pair_ln_bias"] = (m,)
    for target in HEAD_TARGETS:
        shapes[f"head_out_{target}"] = (config.head_classes(target), m * m)
    shapes["noise_head_w"] = (d, 3)
    shapes["task_head_w"] = (d,)
    shapes["task_head_b"] = (1,)
    return shapes


_ONES_INIT = ("gauss_gamma",)
_ZEROS_INIT = ("gauss_beta", "task_head_b")
_WEIGHT_STD = 0.02


def init_params(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Initialize all tensors; each draws from its own keyed Philox stream.

    Weights are N(0, 0.02); LayerNorm gains 1 and biases 0; kernel means
    uniform on [0, 10] Angstrom with widths 10/K; the affine map starts at
    identity (gamma 1, beta 0).
    """
    params: dict[str, np.ndarray] = {}
    for idx, (name, shape) in enumerate(param_shapes(config).items()):
        if name.endswith(("ln_gain", "ln1_gain", "ln2_gain")) or name in _ONES_INIT:
            params[name] = np.ones(shape, dtype=np.float64)
        elif name.endswith(("ln_bias", "ln1_bias", "ln2_bias")) or name in _ZEROS_INIT:
            params[name] = np.zeros(shape, dtype=np.float64)
        elif name == "gauss_mu":
            stream = keyed_stream(seed, TAG_PARAM_INIT, idx)
            params[name] = stream.uniform(0.0, 10.0, size=shape)
        elif name == "gauss_sigma":
            params[name] = np.full(shape, 10.0 / config.n_kernels, dtype=np.float64)
        else:
            stream = keyed_stream(seed, TAG_PARAM_INIT, idx)
            params[name] = stream.normal(0.0, _WEIGHT_STD, size=shape)
    return params


def zero_grads(config: ModelConfig) -> dict[str, np.ndarray]:
    """A gradient dict with zeros for every registered tensor."""
    return {name: np.zeros(shape, dtype=np.float64)
            for name, shape in param_shapes(config).items()}


def check_params(params: dict[str, np.ndarray], config: ModelConfig) -> None:
    """Validate that a parameter dict matches the registry exactly."""
    expected = param_shapes(config)
    if list(params.keys()) != list(expected.keys()):
        raise ValueError("parameter names do not match the registry")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")


def edge_params_view(params: dict[str, np.ndarray]) -> EdgePathParams:
    return EdgePathParams(hop_weights=params["edge_hop_w"],
                          bond_features=params["edge_bond_feat"])


def kernel_params_view(params: dict[str, np.ndarray]) -> GaussianKernelParams:
    return GaussianKernelParams(
        mu=params["gauss_mu"], sigma=params["gauss_sigma"],
        gamma=params["gauss_gamma"], beta=params["gauss_beta"],
        w1=params["gauss_w1"], w2=params["gauss_w2"],
    )


# ---------------------------------------------------------------------------
# Primitive layers
# ---------------------------------------------------------------------------


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact Gaussian-CDF GELU, x * Phi(x)."""
    return 0.5 * x * (1.0 + erf(x * INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * x * x) / SQRT_2PI
    return 0.5 * (1.0 + erf(x * INV_SQRT2)) + x * phi


def layer_norm_forward(x, gain, bias, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gain * xhat + bias, (xhat, inv)


def layer_norm_backward(dy, cache, gain):
    xhat, inv = cache
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    axes = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=axes)
    dbias = dy.sum(axis=axes)
    return dx, dgain, dbias


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def attention_forward(x, bias, wq, wk, wv, wo, n_heads, inv_scale):
    """Multi-head attention; the same scalar bias is added to every head."""
    q = _split_heads(x @ wq, n_heads)
    k = _split_heads(x @ wk, n_heads)
    v = _split_heads(x @ wv, n_heads)
    logits = q @ k.transpose(0, 2, 1) * inv_scale + bias[None, :, :]
    logits -= logits.max(axis=-1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=-1, keepdims=True)
    ctx = probs @ v
    merged = _merge_heads(ctx)
    out = merged @ wo
    cache = (x, q, k, v, probs, merged)
    return out, cache


def attention_backward(dout, cache, wq, wk, wv, wo, inv_scale, dbias):
    x, q, k, v, probs, merged = cache
    dwo = merged.T @ dout
    dmerged = dout @ wo.T
    dctx = _split_heads(dmerged, probs.shape[0])
    dprobs = dctx @ v.transpose(0, 2, 1)
    dv = probs.transpose(0, 2, 1) @ dctx
    dlogits = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dbias += dlogits.sum(axis=0)
    dq = dlogits @ k * inv_scale
    dk = dlogits.transpose(0, 2, 1) @ q * inv_scale
    dqf, dkf, dvf = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
    dx = dqf @ wq.T + dkf @ wk.T + dvf @ wv.T
    dwq, dwk, dwv = x.T @ dqf, x.T @ dkf, x.T @ dvf
    return dx, dwq, dwk, dwv, dwo


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


def embed_atoms(atom_types, params) -> np.ndarray:
    """Row i of the output is the embedding of atom i's element code."""
    table = params["atom_embed"]
    codes = np.asarray(atom_types, dtype=np.int64)
    if np.any(codes < 0) or np.any(codes >= table.shape[0]):
        raise ValueError("atom code out of vocabulary range")
    return table[codes]


def embed_atoms_backward(dx, atom_types, grads) -> None:
    codes = np.asarray(atom_types, dtype=np.int64)
    np.add.at(grads["atom_embed"], codes, dx)


def encoder_forward(x, bias, params, config: ModelConfig):
    """Run the full block stack; returns final states and per-layer caches.

    The bias matrix must be symmetric and finite; it is added unchanged to
    the attention logits of every layer and head.
    """
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(bias)):
        raise ValueError("non-finite encoder input")
    inv_scale = 1.0 / np.sqrt(config.d_model)
    caches = []
    for l in range(config.n_layers):
        p = f"layers.{l}."
        attn_out, attn_cache = attention_forward(
            x, bias, params[p + "attn_wq"], params[p + "attn_wk"],
            params[p + "attn_wv"], params[p + "attn_wo"],
            config.n_heads, inv_scale,
        )
        res1 = x + attn_out
        normed1, ln1_cache = layer_norm_forward(
            res1, params[p + "ln1_gain"], params[p + "ln1_bias"], config.ln_eps)
        pre = normed1 @ params[p + "ffn_w1"]
        act = gelu(pre)
        ffn_out = act @ params[p + "ffn_w2"]
        res2 = normed1 + ffn_out
        normed2, ln2_cache = layer_norm_forward(
            res2, params[p + "ln2_gain"], params[p + "ln2_bias"], config.ln_eps)
        caches.append((attn_cache, ln1_cache, normed1, pre, act, ln2_cache))
        x = normed2
    return x, caches


def encoder_backward(dx, caches, params, config: ModelConfig, grads):
    """Backward through the block stack; returns (d_input, d_bias)."""
    inv_scale = 1.0 / np.sqrt(config.d_model)
    n = dx.shape[0]
    dbias = np.zeros((n, n), dtype=np.float64)
    for l in reversed(range(config.n_layers)):
        p = f"layers.{l}."
        attn_cache, ln1_cache, normed1, pre, act, ln2_cache = caches[l]
        dres2, dg2, db2 = layer_norm_backward(dx, ln2_cache, params[p + "ln2_gain"])
        grads[p + "ln2_gain"] += dg2
        grads[p + "ln2_bias"] += db2
        dact = dres2 @ params[p + "ffn_w2"].T
        grads[p + "ffn_w2"] += act.T @ dres2
        dpre = dact * gelu_grad(pre)
        grads[p + "ffn_w1"] += normed1.T @ dpre
        dnormed1 = dres2 + dpre @ params[p + "ffn_w1"].T
        dres1, dg1, db1 = layer_norm_backward(dnormed1, ln1_cache, params[p + "ln1_gain"])
        grads[p + "ln1_gain"] += dg1
        grads[p + "ln1_bias"] += db1
        dx_attn, dwq, dwk, dwv, dwo = attention_backward(
            dres1, attn_cache, params[p + "attn_wq"], params[p + "attn_wk"],
            params[p + "attn_wv"], params[p + "attn_wo"], inv_scale, dbias)
        grads[p + "attn_wq"] += dwq
        grads[p + "attn_wk"] += dwk
        grads[p + "attn_wv"] += dwv
        grads[p + "attn_wo"] += dwo
        dx = dres1 + dx_attn
    return dx, dbias


# ---------------------------------------------------------------------------
# Heads
# ---------------------------------------------------------------------------


def pair_features_forward(x, params, config: ModelConfig):
    """Left/right m-dim pair factors G(W x) with G = LayerNorm(GELU(.))."""
    caches = {}
    feats = {}
    for side, wname in (("l", "pair_wl"), ("r", "pair_wr")):
        proj = x @ params[wname].T
        act = gelu(proj)
        normed, ln_cache = layer_norm_forward(
            act, params["pair_ln_gain"], params["pair_ln_bias"], config.ln_eps)
        feats[side] = normed
        caches[side] = (proj, act, ln_cache)
    return feats["l"], feats["r"], caches


def pair_features_backward(dgl, dgr, caches, x, params, grads):
    """Backward for both pair factors; returns the gradient on x."""
    dx = np.zeros_like(x)
    for side, wname, dg in (("l", "pair_wl", dgl), ("r", "pair_wr", dgr)):
        proj, act, ln_cache = caches[side]
        dact, dgain, dbias = layer_norm_backward(dg, ln_cache, params["pair_ln_gain"])
        grads["pair_ln_gain"] += dgain
        grads["pair_ln_bias"] += dbias
        dproj = dact * gelu_grad(proj)
        grads[wname] += dproj.T @ x
        dx += dproj @ params[wname]
    return dx


def pair_project_forward(gl, gr, w_out):
    """z_ij = W_out . flatten(gl_i outer gr_j) for all ordered pairs."""
    m = gl.shape[1]
    w3 = w_out.reshape(-1, m, m)
    return np.einsum("ia,jb,cab->ijc", gl, gr, w3, optimize=True)


def pair_project_backward(dz, gl, gr, w_out):
    m = gl.shape[1]
    w3 = w_out.reshape(-1, m, m)
    dw3 = np.einsum("ijc,ia,jb->cab", dz, gl, gr, optimize=True)
    dgl = np.einsum("ijc,cab,jb->ia", dz, w3, gr, optimize=True)
    dgr = np.einsum("ijc,cab,ia->jb", dz, w3, gl, optimize=True)
    return dgl, dgr, dw3.reshape(w_out.shape)


def outer_product_head(x, target: str, params, config: ModelConfig) -> np.ndarray:
    """Pairwise predictions Z (n, n, c) for one target from final atom states."""
    if target not in HEAD_TARGETS:
        raise ValueError(f"unknown head target {target!r}")
    gl, gr, _ = pair_features_forward(x, params, config)
    return pair_project_forward(gl, gr, params[f"head_out_{target}"])


def noise_head(x, params) -> np.ndarray:
    """Per-atom 3-vector prediction of injected coordinate noise."""
    return x @ params["noise_head_w"]


def noise_head_backward(dout, x, params, grads):
    grads["noise_head_w"] += x.T @ dout
    return dout @ params["noise_head_w"].T


def readout(x) -> np.ndarray:
    """Graph-level representation: mean over atom rows."""
    if x.shape[0] < 1:
        raise ValueError("readout needs at least one atom")
    return x.mean(axis=0)


def readout_backward(dr, n_atoms: int) -> np.ndarray:
    return np.tile(dr / n_atoms, (n_atoms, 1))
