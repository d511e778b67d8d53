"""Pre-norm transformer stack shared by the LM and the projector.

Attention is stored as per-head weight matrices, so the whole stack is
expressible with 2-D matmuls: per head, scores over the full sequence,
an optional causal fill, softmax, context, then a head-local output
projection summed across heads.
"""

from __future__ import annotations

import math

import numpy as np

from radkg.model.params import ParamSet
from radkg.tensor import (
    Tensor,
    add,
    causal_masked_fill,
    gelu,
    layer_norm,
    matmul,
    scale,
    softmax_lastdim,
    transpose_2d,
)

INIT_STD = 0.02


def init_stack(
    ps: ParamSet,
    rng: np.random.Generator,
    d_model: int,
    n_layers: int,
    n_heads: int,
    d_ff: int,
    prefix: str = "",
) -> None:
    """Register one stack's parameters in a fixed draw order."""
    d_head = d_model // n_heads

    def w(name, shape):
        ps.add(prefix + name, rng.normal(0.0, INIT_STD, shape), decay=True)

    def b(name, size):
        ps.add(prefix + name, np.zeros(size), decay=False)

    def ln(name):
        ps.add(prefix + name + ".gain", np.ones(d_model), decay=False)
        ps.add(prefix + name + ".bias", np.zeros(d_model), decay=False)

    for i in range(n_layers):
        base = f"layers.{i}."
        ln(base + "ln1")
        for h in range(n_heads):
            w(f"{base}attn.head{h}.wq", (d_model, d_head))
            b(f"{base}attn.head{h}.bq", d_head)
            w(f"{base}attn.head{h}.wk", (d_model, d_head))
            b(f"{base}attn.head{h}.bk", d_head)
            w(f"{base}attn.head{h}.wv", (d_model, d_head))
            b(f"{base}attn.head{h}.bv", d_head)
            w(f"{base}attn.head{h}.wo", (d_head, d_model))
        b(base + "attn.bo", d_model)
        ln(base + "ln2")
        w(base + "mlp.w1", (d_model, d_ff))
        b(base + "mlp.b1", d_ff)
        w(base + "mlp.w2", (d_ff, d_model))
        b(base + "mlp.b2", d_model)
    ln("final_ln")


def stack_param_count(d_model: int, n_layers: int, n_heads: int, d_ff: int) -> int:
    d_head = d_model // n_heads
    attn = n_heads * (3 * (d_model * d_head + d_head) + d_head * d_model) + d_model
    mlp = d_model * d_ff + d_ff + d_ff * d_model + d_model
    per_layer = 2 * d_model + attn + 2 * d_model + mlp
    return n_layers * per_layer + 2 * d_model


def _attention(
    ps: ParamSet, base: str, x: Tensor, n_heads: int, d_head: int, causal: bool
) -> Tensor:
    inv_sqrt = 1.0 / math.sqrt(d_head)
    out = None
    for h in range(n_heads):
        hp = f"{base}attn.head{h}."
        q = add(matmul(x, ps[hp + "wq"]), ps[hp + "bq"])
        k = add(matmul(x, ps[hp + "wk"]), ps[hp + "bk"])
        v = add(matmul(x, ps[hp + "wv"]), ps[hp + "bv"])
        scores = scale(matmul(q, transpose_2d(k)), inv_sqrt)
        if causal:
            scores = causal_masked_fill(scores)
        ctx = matmul(softmax_lastdim(scores), v)
        head_out = matmul(ctx, ps[hp + "wo"])
        out = head_out if out is None else add(out, head_out)
    return add(out, ps[base + "attn.bo"])


def run_stack(
    ps: ParamSet,
    x: Tensor,
    n_layers: int,
    n_heads: int,
    causal: bool,
    ln_eps: float,
    prefix: str = "",
) -> Tensor:
    """Apply the registered stack to x ([S, d_model]) and final-norm it."""
    d_head = x.data.shape[1] // n_heads
    for i in range(n_layers):
        base = f"{prefix}layers.{i}."
        normed = layer_norm(x, ps[base + "ln1.gain"], ps[base + "ln1.bias"], ln_eps)
        x = add(x, _attention(ps, base, normed, n_heads, d_head, causal))
        normed = layer_norm(x, ps[base + "ln2.gain"], ps[base + "ln2.bias"], ln_eps)
        h = gelu(add(matmul(normed, ps[base + "mlp.w1"]), ps[base + "mlp.b1"]))
        h = add(matmul(h, ps[base + "mlp.w2"]), ps[base + "mlp.b2"])
        x = add(x, h)
    return layer_norm(x, ps[prefix + "final_ln.gain"], ps[prefix + "final_ln.bias"], ln_eps)
