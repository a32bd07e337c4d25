"""Desk-scale transformer encoder in numpy with hand-written backward.

One parameter dictionary holds both the standard model and (prefixed
``gen_``) the narrow generator.  The attention mask is additive over
{0, -inf}; forbidden positions get exactly zero post-softmax weight, so
the number of appended query symbols can never leak into context
representations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf

from .errors import NumericError, UsageError, VersionError
from .maskplan import MaskPlan, RngState, build_attention_mask

CHECKPOINT_VERSION = 1
INIT_STD = 0.02
LN_EPS = 1e-12
SQRT2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class ModelConfig:
    layers: int
    hidden: int
    heads: int
    ffn: int
    max_positions: int
    fine_vocab_size: int
    ngram_vocab_size: int
    generator_layers: int = 1
    dropout: float = 0.0
    max_query: int = 8

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise UsageError(f"hidden {self.hidden} not divisible by heads {self.heads}")

    @property
    def joint_size(self) -> int:
        return self.fine_vocab_size + self.ngram_vocab_size

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def generator_heads(self) -> int:
        return self.heads

    @property
    def generator_hidden(self) -> int:
        # one third of the standard width, floored to a multiple of the heads
        h = (self.hidden // 3 // self.generator_heads) * self.generator_heads
        return max(h, self.generator_heads)

    def generator_view(self) -> "ModelConfig":
        return ModelConfig(
            layers=self.generator_layers,
            hidden=self.generator_hidden,
            heads=self.generator_heads,
            ffn=max(self.ffn // 3, self.generator_hidden),
            max_positions=self.max_positions,
            fine_vocab_size=self.fine_vocab_size,
            ngram_vocab_size=self.ngram_vocab_size,
            generator_layers=self.generator_layers,
            dropout=self.dropout,
            max_query=self.max_query,
        )


def _trunc_normal(g: np.random.Generator, shape, std, dtype):
    x = g.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while bad.any():
        x[bad] = g.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x.astype(dtype)


def _encoder_param_shapes(cfg: ModelConfig, vocab_rows: int):
    shapes = {
        "tok_emb": (vocab_rows, cfg.hidden),
        "pos_emb": (cfg.max_positions, cfg.hidden),
        "emb_ln_g": (cfg.hidden,),
        "emb_ln_b": (cfg.hidden,),
    }
    for i in range(cfg.layers):
        p = f"l{i}_"
        for w in ("wq", "wk", "wv", "wo"):
            shapes[p + w] = (cfg.hidden, cfg.hidden)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[p + b] = (cfg.hidden,)
        shapes[p + "ln1_g"] = (cfg.hidden,)
        shapes[p + "ln1_b"] = (cfg.hidden,)
        shapes[p + "w1"] = (cfg.hidden, cfg.ffn)
        shapes[p + "b1"] = (cfg.ffn,)
        shapes[p + "w2"] = (cfg.ffn, cfg.hidden)
        shapes[p + "b2"] = (cfg.hidden,)
        shapes[p + "ln2_g"] = (cfg.hidden,)
        shapes[p + "ln2_b"] = (cfg.hidden,)
    return shapes


def param_shapes(cfg: ModelConfig):
    shapes = _encoder_param_shapes(cfg, cfg.joint_size)
    shapes["fine_w"] = (cfg.hidden, cfg.fine_vocab_size)
    shapes["fine_b"] = (cfg.fine_vocab_size,)
    shapes["ngram_w"] = (cfg.hidden, cfg.joint_size)
    shapes["ngram_b"] = (cfg.joint_size,)
    shapes["rtd_w"] = (cfg.hidden,)
    shapes["rtd_b"] = (1,)
    gcfg = cfg.generator_view()
    for name, shape in _encoder_param_shapes(gcfg, gcfg.joint_size).items():
        shapes["gen_" + name] = shape
    shapes["gen_ngram_w"] = (gcfg.hidden, gcfg.joint_size)
    shapes["gen_ngram_b"] = (gcfg.joint_size,)
    return shapes


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict:
    g = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        last = name.rsplit("_", 1)[-1]
        if "ln" in name and last == "g":
            params[name] = np.ones(shape, dtype=dtype)
        elif last.startswith("b") or name == "rtd_w":
            # biases start at zero; rtd head too (probability 0.5 everywhere)
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = _trunc_normal(g, shape, INIT_STD, dtype)
    return params


def check_finite(params: dict):
    for name, arr in params.items():
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite values in parameter {name}")


# ---------------------------------------------------------------------------
# primitives with paired backward

def _layernorm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_backward(dy, cache):
    xhat, inv, g = cache
    h = xhat.shape[-1]
    dg = (dy * xhat).sum(0)
    db = dy.sum(0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    assert h == dx.shape[-1]
    return dx, dg, db


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / SQRT2))


def _gelu_backward(dy, x):
    cdf = 0.5 * (1.0 + erf(x / SQRT2))
    pdf = INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return dy * (cdf + x * pdf)


def _masked_softmax(scores):
    # -inf entries come out exactly 0 (exp(-inf) == 0)
    m = scores.max(-1, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(-1, keepdims=True)


def _softmax_backward(dprobs, probs):
    return probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True))


class Activations:
    """Per-layer hidden states, attention tensors and backward caches."""

    def __init__(self):
        self.embedded = None
        self.layer_hidden = []
        self.attn_probs = []
        self.hidden = None
        self.cache = []
        self.emb_cache = None


def encode(params: dict, ids, positions, attn_mask, cfg: ModelConfig, prefix: str = "",
           train: bool = False, dropout_rng: RngState | None = None) -> Activations:
    """Forward pass; retains everything needed for encode_backward."""
    ids = np.asarray(ids, dtype=np.int64)
    positions = np.asarray(positions, dtype=np.int64)
    tok = params[prefix + "tok_emb"]
    pos = params[prefix + "pos_emb"]
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= tok.shape[0]:
        raise UsageError(f"token id out of range 0..{tok.shape[0] - 1}")
    if positions.min(initial=1) < 1 or positions.max(initial=1) > pos.shape[0]:
        raise UsageError(f"position id out of range 1..{pos.shape[0]}")
    attn_mask = np.asarray(attn_mask, dtype=tok.dtype)
    n = len(ids)
    if attn_mask.shape != (n, n):
        raise UsageError(f"attention mask shape {attn_mask.shape} != ({n}, {n})")

    acts = Activations()
    drop = cfg.dropout if train else 0.0
    g_drop = dropout_rng.next_generator() if (drop > 0 and dropout_rng is not None) else None

    def dropout(x):
        if drop <= 0 or g_drop is None:
            return x, None
        keep = (g_drop.random(x.shape) >= drop).astype(x.dtype) / (1.0 - drop)
        return x * keep, keep

    x0 = tok[ids] + pos[positions - 1]
    x, ln_cache = _layernorm(x0, params[prefix + "emb_ln_g"], params[prefix + "emb_ln_b"])
    x, emb_keep = dropout(x)
    acts.embedded = x
    acts.emb_cache = (ids, positions, ln_cache, emb_keep)

    A, dk = cfg.heads, cfg.head_dim
    scale = 1.0 / np.sqrt(dk)
    for i in range(cfg.layers):
        p = prefix + f"l{i}_"
        q = x @ params[p + "wq"] + params[p + "bq"]
        k = x @ params[p + "wk"] + params[p + "bk"]
        v = x @ params[p + "wv"] + params[p + "bv"]
        qh = q.reshape(n, A, dk).transpose(1, 0, 2)
        kh = k.reshape(n, A, dk).transpose(1, 0, 2)
        vh = v.reshape(n, A, dk).transpose(1, 0, 2)
        scores = qh @ kh.transpose(0, 2, 1) * scale + attn_mask[None]
        probs = _masked_softmax(scores)
        ctx = (probs @ vh).transpose(1, 0, 2).reshape(n, cfg.hidden)
        attn_out = ctx @ params[p + "wo"] + params[p + "bo"]
        attn_out, keep1 = dropout(attn_out)
        y, ln1_cache = _layernorm(x + attn_out, params[p + "ln1_g"], params[p + "ln1_b"])
        pre = y @ params[p + "w1"] + params[p + "b1"]
        act = _gelu(pre)
        ffn_out = act @ params[p + "w2"] + params[p + "b2"]
        ffn_out, keep2 = dropout(ffn_out)
        z, ln2_cache = _layernorm(y + ffn_out, params[p + "ln2_g"], params[p + "ln2_b"])
        acts.cache.append(
            dict(x=x, qh=qh, kh=kh, vh=vh, probs=probs, ctx=ctx, ln1=ln1_cache,
                 y=y, pre=pre, act=act, ln2=ln2_cache, keep1=keep1, keep2=keep2)
        )
        acts.attn_probs.append(probs)
        x = z
        acts.layer_hidden.append(x)
    acts.hidden = x
    return acts


def encode_backward(params: dict, acts: Activations, d_hidden, cfg: ModelConfig,
                    prefix: str = "") -> dict:
    """Gradients of a scalar loss w.r.t. all ``prefix`` encoder parameters,
    given the gradient at the final hidden states."""
    grads = {}
    A, dk = cfg.heads, cfg.head_dim
    scale = 1.0 / np.sqrt(dk)
    dx = np.asarray(d_hidden)
    n = dx.shape[0]

    def undrop(d, keep):
        return d if keep is None else d * keep

    for i in reversed(range(cfg.layers)):
        p = prefix + f"l{i}_"
        c = acts.cache[i]
        d_sum2, dg2, db2 = _layernorm_backward(dx, c["ln2"])
        grads[p + "ln2_g"] = dg2
        grads[p + "ln2_b"] = db2
        d_ffn = undrop(d_sum2, c["keep2"])
        grads[p + "w2"] = c["act"].T @ d_ffn
        grads[p + "b2"] = d_ffn.sum(0)
        d_act = d_ffn @ params[p + "w2"].T
        d_pre = _gelu_backward(d_act, c["pre"])
        grads[p + "w1"] = c["y"].T @ d_pre
        grads[p + "b1"] = d_pre.sum(0)
        dy = d_sum2 + d_pre @ params[p + "w1"].T
        d_sum1, dg1, db1 = _layernorm_backward(dy, c["ln1"])
        grads[p + "ln1_g"] = dg1
        grads[p + "ln1_b"] = db1
        d_attn_out = undrop(d_sum1, c["keep1"])
        grads[p + "wo"] = c["ctx"].T @ d_attn_out
        grads[p + "bo"] = d_attn_out.sum(0)
        d_ctx = (d_attn_out @ params[p + "wo"].T).reshape(n, A, dk).transpose(1, 0, 2)
        d_probs = d_ctx @ c["vh"].transpose(0, 2, 1)
        d_vh = c["probs"].transpose(0, 2, 1) @ d_ctx
        d_scores = _softmax_backward(d_probs, c["probs"])
        d_qh = d_scores @ c["kh"] * scale
        d_kh = d_scores.transpose(0, 2, 1) @ c["qh"] * scale
        dq = d_qh.transpose(1, 0, 2).reshape(n, cfg.hidden)
        dk_ = d_kh.transpose(1, 0, 2).reshape(n, cfg.hidden)
        dv = d_vh.transpose(1, 0, 2).reshape(n, cfg.hidden)
        x = c["x"]
        grads[p + "wq"] = x.T @ dq
        grads[p + "bq"] = dq.sum(0)
        grads[p + "wk"] = x.T @ dk_
        grads[p + "bk"] = dk_.sum(0)
        grads[p + "wv"] = x.T @ dv
        grads[p + "bv"] = dv.sum(0)
        dx = d_sum1 + dq @ params[p + "wq"].T + dk_ @ params[p + "wk"].T + dv @ params[p + "wv"].T

    ids, positions, ln_cache, emb_keep = acts.emb_cache
    dx = undrop(dx, emb_keep)
    d_x0, dg, db = _layernorm_backward(dx, ln_cache)
    grads[prefix + "emb_ln_g"] = dg
    grads[prefix + "emb_ln_b"] = db
    d_tok = np.zeros_like(params[prefix + "tok_emb"])
    np.add.at(d_tok, ids, d_x0)
    grads[prefix + "tok_emb"] = d_tok
    d_pos = np.zeros_like(params[prefix + "pos_emb"])
    np.add.at(d_pos, positions - 1, d_x0)
    grads[prefix + "pos_emb"] = d_pos
    return grads


# ---------------------------------------------------------------------------
# heads

def predict_fine(acts: Activations, indexes, params: dict):
    """Logits over the fine vocabulary at the given sequence indexes."""
    return acts.hidden[list(indexes)] @ params["fine_w"] + params["fine_b"]


def predict_ngram(acts: Activations, indexes, params: dict, prefix: str = ""):
    """Logits over the joint vocabulary at the given sequence indexes."""
    return acts.hidden[list(indexes)] @ params[prefix + "ngram_w"] + params[prefix + "ngram_b"]


def predict_rtd(acts: Activations, context_indexes, params: dict):
    """One binary logit per context position (original vs replaced)."""
    return acts.hidden[list(context_indexes)] @ params["rtd_w"] + params["rtd_b"][0]


def head_backward(acts: Activations, indexes, d_logits, w_name: str, b_name: str,
                  params: dict, d_hidden):
    """Accumulate head gradients and scatter d_logits back into d_hidden."""
    idx = list(indexes)
    h = acts.hidden[idx]
    grads = {w_name: h.T @ d_logits, b_name: d_logits.sum(0)}
    np.add.at(d_hidden, idx, d_logits @ params[w_name].T)
    return grads


def rtd_backward(acts: Activations, context_indexes, d_logits, params: dict, d_hidden):
    idx = list(context_indexes)
    h = acts.hidden[idx]
    grads = {"rtd_w": h.T @ d_logits, "rtd_b": np.array([d_logits.sum()], dtype=h.dtype)}
    np.add.at(d_hidden, idx, np.outer(d_logits, params["rtd_w"]))
    return grads


# ---------------------------------------------------------------------------
# generator sampling

def generator_forward_and_sample(params: dict, plan: MaskPlan, cfg: ModelConfig,
                                 rng: RngState, temperature: float = 1.0):
    """Sample one joint identity per masked slot from the generator softmax.

    Sampling is a non-differentiable boundary: no gradient flows back
    through the returned ids.
    """
    if temperature <= 0:
        raise UsageError("temperature must be > 0")
    if not plan.targets_coarse:
        raise UsageError("plan has no masked slots to sample for")
    gcfg = cfg.generator_view()
    T = plan.T
    mask = np.zeros((T, T), dtype=params["gen_tok_emb"].dtype)
    acts = encode(params, plan.context_ids, plan.context_positions, mask, gcfg, prefix="gen_")
    slots = [slot for slot, _ in plan.targets_coarse]
    logits = predict_ngram(acts, slots, params, prefix="gen_").astype(np.float64)
    z = logits / temperature
    z -= z.max(-1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(-1, keepdims=True)
    g = rng.next_generator()
    return np.array([g.choice(probs.shape[1], p=probs[i]) for i in range(probs.shape[0])])


# ---------------------------------------------------------------------------
# export and checkpoints

def export_finetune_weights(params: dict, cfg: ModelConfig) -> dict:
    """Prune to a vanilla encoder: truncate embeddings to the fine rows,
    drop all heads and every generator tensor.  Encoder weights intact."""
    out = {}
    for name, arr in params.items():
        if name.startswith("gen_") or name.startswith(("fine_", "ngram_", "rtd_")):
            continue
        if name == "tok_emb":
            out[name] = arr[: cfg.fine_vocab_size].copy()
        else:
            out[name] = arr.copy()
    return out


def param_count(params: dict) -> int:
    return sum(int(a.size) for a in params.values())


def vanilla_encoder_param_count(cfg: ModelConfig) -> int:
    """Size of a plain encoder with |V_F| embedding rows and no heads."""
    return sum(
        int(np.prod(s)) for s in _encoder_param_shapes(cfg, cfg.fine_vocab_size).values()
    )


def save_checkpoint(path, params: dict, cfg: ModelConfig, extra: dict | None = None,
                    arrays: dict | None = None):
    """Named-tensor container (npz): bit-exact round trip."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "extra": extra or {},
    }
    meta_arr = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    store = {"__meta__": meta_arr}
    for name, arr in params.items():
        store["p/" + name] = arr
    for name, arr in (arrays or {}).items():
        store["a/" + name] = arr
    # write through a handle so numpy never appends ".npz" to the path
    with open(path, "wb") as f:
        np.savez(f, **store)


def load_checkpoint(path):
    """Returns (params, config, extra, arrays)."""
    from .errors import DataError

    try:
        z = np.load(path)
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    with z:
        if "__meta__" not in z:
            raise VersionError(f"{path}: not a checkpoint file")
        meta = json.loads(z["__meta__"].tobytes().decode("utf-8"))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise VersionError(
                f"checkpoint version {meta.get('format_version')}, expected {CHECKPOINT_VERSION}"
            )
        params = {k[2:]: z[k] for k in z.files if k.startswith("p/")}
        arrays = {k[2:]: z[k] for k in z.files if k.startswith("a/")}
    cfg = ModelConfig(**meta["config"])
    return params, cfg, meta["extra"], arrays
