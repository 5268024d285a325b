"""Cross-modal fusion: pooling attention, prediction encoding, and the
two-layer hierarchical multi-head attention that produces y_cross.

Layer 1 fuses the pooled original-text vector with the pooled
explanation vector into y_uni; layer 2 fuses y_uni with the encoded
LLM candidate list into y_cross.  Each layer attends over exactly two
keys (the two fused vectors), per head, with a combined query
Q_a + Q_b; head outputs are concatenated and projected.

Ablation switches reshape the graph without changing output shapes:
drop_exp / drop_org route the surviving stream through a self-only
attention (single key, weight 1), drop_pred short-circuits layer 2
(y_cross is y_uni, bit-exact), and linear_fuse swaps both attention
layers for affine maps on concatenated inputs.  All parameter blocks
exist regardless of flags, so one checkpoint can be evaluated under
every ablation mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from moltext.numcore import (
    ShapeError,
    Tensor,
    add,
    add_bias,
    concat_cols,
    concat_rows,
    init_uniform,
    matmul,
    scale,
    softmax_rows,
    transpose,
)

__all__ = [
    "FusionDims",
    "FusionParams",
    "FusionOutput",
    "AblationFlags",
    "ABLATION_MODES",
    "pool",
    "encode_predictions",
    "mha_fuse",
    "cross_modal",
    "init_fusion_params",
    "fusion_params_from_blocks",
    "tokenize_against",
]


@dataclass(frozen=True)
class FusionDims:
    d: int
    heads: int
    head_dim: int
    r: int
    c: int

    def __post_init__(self):
        for name in ("d", "heads", "head_dim", "r", "c"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.heads * self.head_dim != self.d:
            raise ValueError(
                f"heads * head_dim must equal d: {self.heads} * {self.head_dim} "
                f"!= {self.d}"
            )


@dataclass(frozen=True)
class AblationFlags:
    drop_exp: bool = False
    drop_org: bool = False
    drop_pred: bool = False
    linear_fuse: bool = False

    def validate(self) -> None:
        if self.drop_exp and self.drop_org:
            raise ValueError("cannot drop both text streams")


# evaluation order for the ablation harness: full model plus one flag each
ABLATION_MODES: dict[str, AblationFlags] = {
    "full": AblationFlags(),
    "drop_exp": AblationFlags(drop_exp=True),
    "drop_org": AblationFlags(drop_org=True),
    "drop_pred": AblationFlags(drop_pred=True),
    "linear_fuse": AblationFlags(linear_fuse=True),
}

_STREAMS = (("l1", "org"), ("l1", "exp"), ("l2", "uni"), ("l2", "pred"))


class FusionParams:
    """All trainable fusion blocks, addressable by stable names."""

    def __init__(self, dims: FusionDims, blocks: dict[str, Tensor]):
        self.dims = dims
        self._blocks = blocks
        self.u = blocks["fusion.pool.u"]
        self.v = blocks["fusion.pool.v"]
        self.w_o_uni = blocks["fusion.l1.wo"]
        self.w_o_cross = blocks["fusion.l2.wo"]
        self.w_pred = blocks["fusion.pred.w"]
        self.heads: dict[tuple[str, str], list[tuple[Tensor, Tensor, Tensor]]] = {}
        for layer, stream in _STREAMS:
            self.heads[(layer, stream)] = [
                tuple(
                    blocks[f"fusion.{layer}.{stream}.h{h}.{part}"]
                    for part in ("q", "k", "v")
                )
                for h in range(dims.heads)
            ]
        self.lin_a1 = blocks["fusion.lin.a1"]
        self.lin_b1 = blocks["fusion.lin.b1"]
        self.lin_a2 = blocks["fusion.lin.a2"]
        self.lin_b2 = blocks["fusion.lin.b2"]

    def blocks(self) -> dict[str, Tensor]:
        return dict(self._blocks)


def _expected_shapes(dims: FusionDims) -> dict[str, tuple[int, int]]:
    shapes: dict[str, tuple[int, int]] = {
        "fusion.pool.u": (dims.d, 1),
        "fusion.pool.v": (dims.d, 1),
        "fusion.l1.wo": (dims.heads * dims.head_dim, dims.d),
        "fusion.l2.wo": (dims.heads * dims.head_dim, dims.d),
        "fusion.pred.w": (dims.r * dims.c, dims.d),
        "fusion.lin.a1": (2 * dims.d, dims.d),
        "fusion.lin.b1": (1, dims.d),
        "fusion.lin.a2": (2 * dims.d, dims.d),
        "fusion.lin.b2": (1, dims.d),
    }
    for layer, stream in _STREAMS:
        for h in range(dims.heads):
            for part in ("q", "k", "v"):
                shapes[f"fusion.{layer}.{stream}.h{h}.{part}"] = (dims.d, dims.head_dim)
    return shapes


def init_fusion_params(dims: FusionDims, rng: np.random.Generator) -> FusionParams:
    """Fresh parameters; biases start at zero, everything else uniform."""
    blocks: dict[str, Tensor] = {}
    for name, (rows, cols) in sorted(_expected_shapes(dims).items()):
        if name.endswith(("b1", "b2")):
            data = np.zeros((rows, cols))
        else:
            data = init_uniform(rows, cols, rng)
        blocks[name] = Tensor(data, requires_grad=True, name=name)
    return FusionParams(dims, blocks)


def fusion_params_from_blocks(
    dims: FusionDims, arrays: Mapping[str, np.ndarray]
) -> FusionParams:
    blocks: dict[str, Tensor] = {}
    for name, shape in _expected_shapes(dims).items():
        if name not in arrays:
            raise KeyError(f"missing fusion block {name!r}")
        arr = np.asarray(arrays[name], dtype=np.float64)
        if arr.shape != shape:
            raise ShapeError(f"block {name!r} has shape {arr.shape}, expected {shape}")
        blocks[name] = Tensor(arr, requires_grad=True, name=name)
    return FusionParams(dims, blocks)


@dataclass
class FusionOutput:
    y_org: Tensor
    y_exp: Tensor
    y_pred: Tensor
    y_uni: Tensor
    y_cross: Tensor
    # per layer, one 1-D weight array per head (2 entries, or 1 when a
    # stream is dropped, or none under linear fusion)
    attention_trace: dict[str, list[np.ndarray]] = field(default_factory=dict)


# ------------------------------------------------------------------- ops


def pool(tokens: Tensor, w: Tensor) -> Tensor:
    """Attention-pool token rows into one vector: softmax(tokens @ w).

    Returns a 1 x d convex combination of the rows, so the output lies
    inside the per-coordinate hull of the tokens.
    """
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    if tokens.shape[1] != w.shape[0] or w.shape[1] != 1:
        raise ShapeError(
            f"pool: tokens {tokens.shape} incompatible with weight vector {w.shape}"
        )
    scores = transpose(matmul(tokens, w))  # 1 x m
    alpha = softmax_rows(scores)
    return matmul(alpha, tokens)  # 1 x d


def tokenize_against(text: str, symbols: Sequence[str]) -> tuple[list[str], int]:
    """Greedy symbol tokenization; returns (tokens in vocab, oov count).

    Multi-character symbols match first, longest first, so Cl and Br
    survive as single tokens when present in the vocabulary.
    """
    multi = sorted((s for s in symbols if len(s) > 1), key=len, reverse=True)
    known = set(symbols)
    tokens: list[str] = []
    oov = 0
    i = 0
    while i < len(text):
        for sym in multi:
            if text.startswith(sym, i):
                tokens.append(sym)
                i += len(sym)
                break
        else:
            ch = text[i]
            if ch in known:
                tokens.append(ch)
            else:
                oov += 1
            i += 1
    return tokens, oov


def encode_predictions(
    prediction, symbols: Sequence[str], w_pred: Tensor, r: int
) -> tuple[Tensor, int]:
    """Encode up to r ranked candidate strings into one d-vector.

    Each candidate becomes a C-dimensional multi-hot bag-of-symbols
    indicator; missing candidates stay zero; the R indicators are
    concatenated and linearly mapped by w_pred.  Returns the vector and
    the out-of-vocabulary symbol count for diagnostics.
    """
    ranked = getattr(prediction, "ranked_smiles", prediction)
    c = len(symbols)
    if w_pred.shape[0] != r * c:
        raise ShapeError(
            f"w_pred has {w_pred.shape[0]} rows, expected r*C = {r} * {c}"
        )
    index = {sym: i for i, sym in enumerate(symbols)}
    indicator = np.zeros((1, r * c))
    oov_total = 0
    for slot, candidate in enumerate(ranked[:r]):
        tokens, oov = tokenize_against(candidate, symbols)
        oov_total += oov
        for tok in tokens:
            indicator[0, slot * c + index[tok]] = 1.0
    return matmul(Tensor(indicator), w_pred), oov_total


def mha_fuse(
    a: Tensor,
    b: Tensor,
    heads_a: Sequence[tuple[Tensor, Tensor, Tensor]],
    heads_b: Sequence[tuple[Tensor, Tensor, Tensor]],
    w_o: Tensor,
    head_dim: int,
) -> tuple[Tensor, list[np.ndarray]]:
    """One fusion layer over two 1 x d streams.

    Per head: combined query q = a W_Qa + b W_Qb, keys and values
    stacked from both streams, attention softmax((q K^T)/sqrt(d_h))
    over the two keys.  Heads concatenate and project through w_o.
    """
    outputs = []
    traces: list[np.ndarray] = []
    inv_sqrt = 1.0 / math.sqrt(head_dim)
    for (wqa, wka, wva), (wqb, wkb, wvb) in zip(heads_a, heads_b):
        q = add(matmul(a, wqa), matmul(b, wqb))
        k = concat_rows([matmul(a, wka), matmul(b, wkb)])
        v = concat_rows([matmul(a, wva), matmul(b, wvb)])
        attn = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt))
        traces.append(attn.data[0].copy())
        outputs.append(matmul(attn, v))
    return matmul(concat_cols(outputs), w_o), traces


def _mha_self(
    x: Tensor,
    heads_x: Sequence[tuple[Tensor, Tensor, Tensor]],
    w_o: Tensor,
    head_dim: int,
) -> tuple[Tensor, list[np.ndarray]]:
    """Degenerate single-stream layer for drop ablations: the surviving
    vector attends over its own key only, so every weight is exactly 1."""
    outputs = []
    traces: list[np.ndarray] = []
    inv_sqrt = 1.0 / math.sqrt(head_dim)
    for wqx, wkx, wvx in heads_x:
        q = matmul(x, wqx)
        k = matmul(x, wkx)
        v = matmul(x, wvx)
        attn = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt))
        traces.append(attn.data[0].copy())
        outputs.append(matmul(attn, v))
    return matmul(concat_cols(outputs), w_o), traces


def _zeros_like_row(x: Tensor) -> Tensor:
    return Tensor(np.zeros((1, x.shape[1])))


def cross_modal(
    y_org: Tensor,
    y_exp: Tensor,
    y_pred: Tensor,
    params: FusionParams,
    ablation: AblationFlags = AblationFlags(),
) -> FusionOutput:
    """Compose both fusion layers under the requested ablation mode.

    linear_fuse replaces attention with affine maps on concatenations
    (dropped streams become zero inputs there); drop_pred always means
    y_cross is y_uni, whichever layer-1 architecture produced it.
    """
    ablation.validate()
    dims = params.dims
    trace: dict[str, list[np.ndarray]] = {"layer1": [], "layer2": []}

    if ablation.linear_fuse:
        a = _zeros_like_row(y_org) if ablation.drop_org else y_org
        b = _zeros_like_row(y_exp) if ablation.drop_exp else y_exp
        y_uni = add_bias(matmul(concat_cols([a, b]), params.lin_a1), params.lin_b1)
        if ablation.drop_pred:
            y_cross = y_uni
        else:
            y_cross = add_bias(
                matmul(concat_cols([y_uni, y_pred]), params.lin_a2), params.lin_b2
            )
        return FusionOutput(y_org, y_exp, y_pred, y_uni, y_cross, trace)

    if ablation.drop_exp:
        y_uni, trace["layer1"] = _mha_self(
            y_org, params.heads[("l1", "org")], params.w_o_uni, dims.head_dim
        )
    elif ablation.drop_org:
        y_uni, trace["layer1"] = _mha_self(
            y_exp, params.heads[("l1", "exp")], params.w_o_uni, dims.head_dim
        )
    else:
        y_uni, trace["layer1"] = mha_fuse(
            y_org,
            y_exp,
            params.heads[("l1", "org")],
            params.heads[("l1", "exp")],
            params.w_o_uni,
            dims.head_dim,
        )

    if ablation.drop_pred:
        y_cross = y_uni
    else:
        y_cross, trace["layer2"] = mha_fuse(
            y_uni,
            y_pred,
            params.heads[("l2", "uni")],
            params.heads[("l2", "pred")],
            params.w_o_cross,
            dims.head_dim,
        )
    return FusionOutput(y_org, y_exp, y_pred, y_uni, y_cross, trace)
