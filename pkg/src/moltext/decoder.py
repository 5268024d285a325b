"""Character-level transformer decoder conditioned on the fused vector,
plus the joint training loop for fusion and decoder parameters.

The decoder is deliberately small: token embeddings, fixed sinusoidal
positions, a couple of pre-norm blocks (masked self-attention,
cross-attention over a length-1 memory holding y_cross, and a ReLU
feed-forward), a final layer norm, and an output projection.  Greedy
decoding only.  Training is plain Adam with a halve-on-plateau schedule
and early stopping, deterministic for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from moltext import checkpoint as ckpt
from moltext.embeddings import TokenEmbedder, embed_tokens, tokenize_words
from moltext.fusion import (
    AblationFlags,
    FusionDims,
    FusionOutput,
    FusionParams,
    cross_modal,
    encode_predictions,
    fusion_params_from_blocks,
    init_fusion_params,
    pool,
)
from moltext.llmclient import LlmPrediction
from moltext.numcore import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    add_bias,
    backward,
    concat_cols,
    cross_entropy_rows,
    gather_rows,
    init_uniform,
    layer_norm_rows,
    matmul,
    relu,
    scale,
    softmax_rows,
    transpose,
    zero_grad,
)

__all__ = [
    "SmilesVocab",
    "BASE_SYMBOLS",
    "DecoderDims",
    "DecoderParams",
    "TrainConfig",
    "TrainExample",
    "TrainResult",
    "ModelParams",
    "GenerationResult",
    "DivergenceError",
    "Adam",
    "PlateauHalver",
    "forward",
    "ce_loss",
    "generate",
    "encode_example",
    "examples_from_corpus",
    "train",
    "positional_encoding",
]


# organic-subset atoms, aromatic forms, ring digits, and the structural
# punctuation the parser accepts; training targets can add to this set
BASE_SYMBOLS = (
    "B", "C", "N", "O", "P", "S", "F", "I", "Cl", "Br",
    "b", "c", "n", "o", "p", "s",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    "%", "(", ")", "[", "]", "=", "#", "-", "+", ":", ".", "H",
)


class SmilesVocab:
    """Ordered token list with reserved specials at the front.

    size C counts every entry, specials included.  encode maps unknown
    tokens to <unk> rather than dropping them; decode skips specials.
    """

    PAD = "<pad>"
    BOS = "<bos>"
    EOS = "<eos>"
    UNK = "<unk>"
    _SPECIALS = (PAD, BOS, EOS, UNK)

    def __init__(self, chemistry_symbols: Sequence[str]):
        for special in self._SPECIALS:
            if special in chemistry_symbols:
                raise ValueError(f"symbol list may not contain {special!r}")
        if len(set(chemistry_symbols)) != len(chemistry_symbols):
            raise ValueError("duplicate symbols in vocabulary")
        self.symbols: tuple[str, ...] = self._SPECIALS + tuple(chemistry_symbols)
        self._index = {sym: i for i, sym in enumerate(self.symbols)}
        self._multi = sorted(
            (s for s in chemistry_symbols if len(s) > 1), key=len, reverse=True
        )

    @classmethod
    def build(
        cls, targets: Iterable[str], base: Sequence[str] = BASE_SYMBOLS
    ) -> "SmilesVocab":
        """Union of the base set and every token observed in the targets."""
        observed: set[str] = set(base)
        multi = sorted((s for s in base if len(s) > 1), key=len, reverse=True)
        for text in targets:
            i = 0
            while i < len(text):
                for sym in multi:
                    if text.startswith(sym, i):
                        observed.add(sym)
                        i += len(sym)
                        break
                else:
                    observed.add(text[i])
                    i += 1
        return cls(tuple(sorted(observed)))

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    def tokenize(self, text: str) -> list[str]:
        tokens: list[str] = []
        i = 0
        while i < len(text):
            for sym in self._multi:
                if text.startswith(sym, i):
                    tokens.append(sym)
                    i += len(sym)
                    break
            else:
                tokens.append(text[i])
                i += 1
        return tokens

    def encode(self, text: str) -> list[int]:
        return [self._index.get(tok, self.unk_id) for tok in self.tokenize(text)]

    def decode(self, ids: Sequence[int]) -> str:
        parts = []
        for i in ids:
            sym = self.symbols[i]
            if sym not in self._SPECIALS:
                parts.append(sym)
        return "".join(parts)


# ------------------------------------------------------------- parameters


@dataclass(frozen=True)
class DecoderDims:
    d: int
    heads: int
    head_dim: int
    layers: int
    vocab_size: int

    def __post_init__(self):
        if self.heads * self.head_dim != self.d:
            raise ValueError(
                f"heads * head_dim must equal d: {self.heads} * {self.head_dim} "
                f"!= {self.d}"
            )
        for name in ("d", "heads", "head_dim", "layers", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def _decoder_shapes(dims: DecoderDims) -> dict[str, tuple[int, int]]:
    d, dh, ffn = dims.d, dims.head_dim, 4 * dims.d
    shapes: dict[str, tuple[int, int]] = {
        "dec.emb": (dims.vocab_size, d),
        "dec.final.g": (1, d),
        "dec.final.b": (1, d),
        "dec.out.w": (d, dims.vocab_size),
        "dec.out.b": (1, dims.vocab_size),
    }
    for i in range(dims.layers):
        p = f"dec.b{i}"
        for ln in ("ln1", "ln2", "ln3"):
            shapes[f"{p}.{ln}.g"] = (1, d)
            shapes[f"{p}.{ln}.b"] = (1, d)
        for kind in ("self", "cross"):
            for h in range(dims.heads):
                for part in ("q", "k", "v"):
                    shapes[f"{p}.{kind}.h{h}.{part}"] = (d, dh)
            shapes[f"{p}.{kind}.wo"] = (dims.heads * dh, d)
        shapes[f"{p}.ffn.w1"] = (d, ffn)
        shapes[f"{p}.ffn.b1"] = (1, ffn)
        shapes[f"{p}.ffn.w2"] = (ffn, d)
        shapes[f"{p}.ffn.b2"] = (1, d)
    return shapes


class DecoderParams:
    def __init__(self, dims: DecoderDims, blocks: dict[str, Tensor]):
        self.dims = dims
        self._blocks = blocks

    def blocks(self) -> dict[str, Tensor]:
        return dict(self._blocks)

    def __getitem__(self, name: str) -> Tensor:
        return self._blocks[name]


def init_decoder_params(dims: DecoderDims, rng: np.random.Generator) -> DecoderParams:
    blocks: dict[str, Tensor] = {}
    for name, (rows, cols) in sorted(_decoder_shapes(dims).items()):
        if name.endswith(".g"):
            data = np.ones((rows, cols))
        elif name.endswith((".b", ".b1", ".b2")):
            data = np.zeros((rows, cols))
        else:
            data = init_uniform(rows, cols, rng)
        blocks[name] = Tensor(data, requires_grad=True, name=name)
    return DecoderParams(dims, blocks)


def decoder_params_from_blocks(
    dims: DecoderDims, arrays: Mapping[str, np.ndarray]
) -> DecoderParams:
    blocks: dict[str, Tensor] = {}
    for name, shape in _decoder_shapes(dims).items():
        if name not in arrays:
            raise KeyError(f"missing decoder block {name!r}")
        arr = np.asarray(arrays[name], dtype=np.float64)
        if arr.shape != shape:
            raise ShapeError(f"block {name!r} has shape {arr.shape}, expected {shape}")
        blocks[name] = Tensor(arr, requires_grad=True, name=name)
    return DecoderParams(dims, blocks)


def positional_encoding(length: int, d: int) -> np.ndarray:
    """Fixed sinusoidal table, one row per position."""
    positions = np.arange(length, dtype=np.float64)[:, None]
    half = (d + 1) // 2
    freqs = 1.0 / np.power(10000.0, np.arange(half, dtype=np.float64) * 2.0 / d)
    angles = positions * freqs[None, :]
    table = np.zeros((length, d))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : d // 2])
    return table


# ----------------------------------------------------------------- forward


def _attention_sublayer(
    x: Tensor,
    memory: Tensor,
    params: DecoderParams,
    prefix: str,
    mask: np.ndarray | None,
) -> Tensor:
    dims = params.dims
    inv_sqrt = 1.0 / math.sqrt(dims.head_dim)
    outputs = []
    for h in range(dims.heads):
        q = matmul(x, params[f"{prefix}.h{h}.q"])
        k = matmul(memory, params[f"{prefix}.h{h}.k"])
        v = matmul(memory, params[f"{prefix}.h{h}.v"])
        attn = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt), mask=mask)
        outputs.append(matmul(attn, v))
    return matmul(concat_cols(outputs), params[f"{prefix}.wo"])


def forward(
    params: DecoderParams,
    y_cross: Tensor,
    prefix_ids: Sequence[int],
    max_len: int = 512,
) -> Tensor:
    """Logits for every prefix position; row t scores token t+1.

    Causal masking keeps position t blind to positions > t; the
    cross-attention memory is the single fused vector, so its attention
    weights are identically 1 and conditioning flows through the values.
    """
    dims = params.dims
    t = len(prefix_ids)
    if t == 0:
        raise ValueError("prefix must be nonempty (start with BOS)")
    if t > max_len:
        raise ValueError(f"prefix too long: {t} > {max_len}")
    for idx in prefix_ids:
        if not 0 <= idx < dims.vocab_size:
            raise ValueError(f"unknown token index {idx}")
    if y_cross.shape != (1, dims.d):
        raise ShapeError(f"y_cross must be 1x{dims.d}, got {y_cross.shape}")

    x = add(
        gather_rows(params["dec.emb"], list(prefix_ids)),
        Tensor(positional_encoding(t, dims.d)),
    )
    causal = np.triu(np.full((t, t), -1e30), k=1)
    for i in range(dims.layers):
        p = f"dec.b{i}"
        h1 = layer_norm_rows(x, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
        x = add(x, _attention_sublayer(h1, h1, params, f"{p}.self", causal))
        h2 = layer_norm_rows(x, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
        x = add(x, _attention_sublayer(h2, y_cross, params, f"{p}.cross", None))
        h3 = layer_norm_rows(x, params[f"{p}.ln3.g"], params[f"{p}.ln3.b"])
        f = add_bias(matmul(h3, params[f"{p}.ffn.w1"]), params[f"{p}.ffn.b1"])
        f = add_bias(matmul(relu(f), params[f"{p}.ffn.w2"]), params[f"{p}.ffn.b2"])
        x = add(x, f)
    x = layer_norm_rows(x, params["dec.final.g"], params["dec.final.b"])
    return add_bias(matmul(x, params["dec.out.w"]), params["dec.out.b"])


def ce_loss(logits: Tensor, targets: Sequence[int], pad_id: int) -> Tensor:
    return cross_entropy_rows(logits, targets, pad_id)


@dataclass(frozen=True)
class GenerationResult:
    text: str
    truncated: bool


def generate(
    params: DecoderParams,
    vocab: SmilesVocab,
    y_cross: Tensor,
    max_len: int = 128,
) -> GenerationResult:
    """Greedy argmax from BOS until EOS or the length cap.

    np.argmax takes the lowest index on ties, which fixes the tie-break
    deterministically.
    """
    ids = [vocab.bos_id]
    for _ in range(max_len):
        logits = forward(params, y_cross, ids, max_len=max_len + 1)
        next_id = int(np.argmax(logits.data[-1]))
        if next_id == vocab.eos_id:
            return GenerationResult(text=vocab.decode(ids[1:]), truncated=False)
        ids.append(next_id)
    return GenerationResult(text=vocab.decode(ids[1:]), truncated=True)


# ------------------------------------------------------------ optimization


class Adam:
    """Standard Adam on the tape tensors; lr is mutable for scheduling."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = 0

    def step(self) -> None:
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self._m[i] = b1 * self._m[i] + (1 - b1) * g
            self._v[i] = b2 * self._v[i] + (1 - b2) * (g * g)
            m_hat = self._m[i] / (1 - b1 ** self._t)
            v_hat = self._v[i] / (1 - b2 ** self._t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class PlateauHalver:
    """Halves the optimizer lr after `patience` epochs without a new best
    validation loss; the stagnation counter resets on every halving and
    on every improvement."""

    def __init__(self, optimizer: Adam, patience: int = 10):
        self._opt = optimizer
        self._patience = patience
        self._best = math.inf
        self._stale = 0

    @property
    def lr(self) -> float:
        return self._opt.lr

    def observe(self, val_loss: float) -> bool:
        if val_loss < self._best:
            self._best = val_loss
            self._stale = 0
            return False
        self._stale += 1
        if self._stale >= self._patience:
            self._opt.lr *= 0.5
            self._stale = 0
            return True
        return False


# -------------------------------------------------------------- model bundle


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    d: int = 128
    heads: int = 4
    head_dim: int = 32
    lr: float = 1e-3
    scheduler_patience: int = 10
    early_stop_patience: int = 25
    seed: int = 0
    r: int = 4
    k: int = 16
    max_steps: int | None = None
    max_len: int = 160
    layers: int = 2
    direction: str = "text2mol"

    def __post_init__(self):
        if self.heads * self.head_dim != self.d:
            raise ValueError(
                f"heads * head_dim must equal d: {self.heads} * {self.head_dim} "
                f"!= {self.d}"
            )
        for name in ("batch_size", "epochs", "d", "heads", "head_dim", "r", "k",
                     "max_len", "layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.direction not in ("text2mol", "mol2text"):
            raise ValueError(f"unknown direction {self.direction!r}")


class ModelParams:
    """Fusion + decoder parameters + vocabulary, checkpointable as one unit."""

    def __init__(self, fusion: FusionParams, decoder: DecoderParams,
                 vocab: SmilesVocab):
        self.fusion = fusion
        self.decoder = decoder
        self.vocab = vocab

    def blocks(self) -> dict[str, Tensor]:
        merged = self.fusion.blocks()
        merged.update(self.decoder.blocks())
        return merged

    def save(self, path: str | Path) -> None:
        dims = self.decoder.dims
        header = ckpt.CheckpointDims(
            d=dims.d, heads=dims.heads, head_dim=dims.head_dim,
            vocab_size=dims.vocab_size,
        )
        arrays = {name: t.data for name, t in self.blocks().items()}
        ckpt.save_checkpoint(path, header, list(self.vocab.symbols), arrays)

    @classmethod
    def load(cls, path: str | Path) -> "ModelParams":
        header, symbols, arrays = ckpt.load_checkpoint(path)
        vocab = SmilesVocab(tuple(symbols[4:]))  # specials are re-prepended
        if list(vocab.symbols) != list(symbols):
            raise ckpt.CheckpointError("vocabulary does not start with the specials")
        layers = sum(1 for n in arrays if n.endswith(".ln1.g"))
        r = arrays["fusion.pred.w"].shape[0] // header.vocab_size
        fusion_dims = FusionDims(
            d=header.d, heads=header.heads, head_dim=header.head_dim,
            r=r, c=header.vocab_size,
        )
        decoder_dims = DecoderDims(
            d=header.d, heads=header.heads, head_dim=header.head_dim,
            layers=layers, vocab_size=header.vocab_size,
        )
        fusion = fusion_params_from_blocks(
            fusion_dims, {n: a for n, a in arrays.items() if n.startswith("fusion.")}
        )
        decoder = decoder_params_from_blocks(
            decoder_dims, {n: a for n, a in arrays.items() if n.startswith("dec.")}
        )
        return cls(fusion, decoder, vocab)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.blocks().items()}

    def restore(self, snapshot: Mapping[str, np.ndarray]) -> None:
        for name, tensor in self.blocks().items():
            tensor.data = snapshot[name].copy()


# ------------------------------------------------------------------ training


@dataclass(frozen=True)
class TrainExample:
    pair_id: str
    source_text: str
    target_text: str
    prediction: LlmPrediction | None = None


def examples_from_corpus(
    records, predictions: Mapping[str, LlmPrediction] | None, direction: str
) -> list[TrainExample]:
    examples = []
    for rec in records:
        source = rec.description if direction == "text2mol" else rec.smiles
        target = rec.smiles if direction == "text2mol" else rec.description
        pred = predictions.get(rec.pair_id) if predictions else None
        examples.append(
            TrainExample(
                pair_id=rec.pair_id, source_text=source, target_text=target,
                prediction=pred,
            )
        )
    return examples


class DivergenceError(RuntimeError):
    """Training hit a non-finite value; carries the last finite state."""

    def __init__(self, message: str, model: ModelParams,
                 history: list[dict]):
        super().__init__(message)
        self.model = model
        self.history = history


@dataclass
class TrainResult:
    model: ModelParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    steps: int = 0


def encode_example(
    model: ModelParams,
    example: TrainExample,
    embedder: TokenEmbedder,
    r: int,
    ablation: AblationFlags = AblationFlags(),
) -> FusionOutput:
    """Run one example through pooling, prediction encoding, and fusion."""
    d = model.decoder.dims.d
    org = embed_tokens(example.source_text, embedder, d)
    y_org = pool(Tensor(org.matrix), model.fusion.u)
    explanation = example.prediction.explanation if example.prediction else ""
    if tokenize_words(explanation):
        exp = embed_tokens(explanation, embedder, d)
        y_exp = pool(Tensor(exp.matrix), model.fusion.v)
    else:
        y_exp = Tensor(np.zeros((1, d)))
    candidates = example.prediction.ranked_smiles if example.prediction else ()
    y_pred, _ = encode_predictions(candidates, model.vocab.symbols,
                                   model.fusion.w_pred, r)
    return cross_modal(y_org, y_exp, y_pred, model.fusion, ablation)


def _example_loss(
    model: ModelParams,
    example: TrainExample,
    embedder: TokenEmbedder,
    cfg: TrainConfig,
    ablation: AblationFlags,
) -> Tensor:
    fused = encode_example(model, example, embedder, cfg.r, ablation)
    vocab = model.vocab
    target_ids = vocab.encode(example.target_text)[: cfg.max_len - 1]
    prefix = [vocab.bos_id] + target_ids
    targets = target_ids + [vocab.eos_id]
    logits = forward(model.decoder, fused.y_cross, prefix, max_len=cfg.max_len + 1)
    return ce_loss(logits, targets, vocab.pad_id)


def _mean_loss(
    model: ModelParams,
    examples: Sequence[TrainExample],
    embedder: TokenEmbedder,
    cfg: TrainConfig,
    ablation: AblationFlags,
) -> Tensor:
    total: Tensor | None = None
    for ex in examples:
        loss = _example_loss(model, ex, embedder, cfg, ablation)
        total = loss if total is None else add(total, loss)
    assert total is not None
    return scale(total, 1.0 / len(examples))


def train(
    train_examples: Sequence[TrainExample],
    val_examples: Sequence[TrainExample],
    embedder: TokenEmbedder,
    cfg: TrainConfig,
    ablation: AblationFlags = AblationFlags(),
) -> TrainResult:
    """Jointly optimize fusion and decoder parameters.

    Deterministic for a fixed config and seed.  Validation loss drives
    the plateau scheduler, early stopping, and best-checkpoint choice.
    Non-finite losses abort with the last finite parameter snapshot
    attached to the raised :class:`DivergenceError`.
    """
    if not train_examples or not val_examples:
        raise ValueError("train and validation splits must both be nonempty")
    ablation.validate()

    base = BASE_SYMBOLS if cfg.direction == "text2mol" else ()
    vocab = SmilesVocab.build((ex.target_text for ex in train_examples), base=base)
    rng = np.random.default_rng(cfg.seed)
    fusion_dims = FusionDims(d=cfg.d, heads=cfg.heads, head_dim=cfg.head_dim,
                             r=cfg.r, c=vocab.size)
    decoder_dims = DecoderDims(d=cfg.d, heads=cfg.heads, head_dim=cfg.head_dim,
                               layers=cfg.layers, vocab_size=vocab.size)
    model = ModelParams(
        init_fusion_params(fusion_dims, rng),
        init_decoder_params(decoder_dims, rng),
        vocab,
    )

    all_params = list(model.blocks().values())
    optimizer = Adam(all_params, lr=cfg.lr)
    scheduler = PlateauHalver(optimizer, patience=cfg.scheduler_patience)
    order_rng = np.random.default_rng((cfg.seed, 0xBA7C4))

    history: list[dict] = []
    best_val = math.inf
    best_epoch = -1
    best_snapshot = model.snapshot()
    steps = 0
    stale_epochs = 0

    try:
        for epoch in range(cfg.epochs):
            order = order_rng.permutation(len(train_examples))
            epoch_losses = []
            for start in range(0, len(order), cfg.batch_size):
                batch = [train_examples[i] for i in order[start:start + cfg.batch_size]]
                zero_grad(all_params)
                loss = _mean_loss(model, batch, embedder, cfg, ablation)
                backward(loss)
                optimizer.step()
                epoch_losses.append(float(loss.data[0, 0]))
                steps += 1
                if cfg.max_steps is not None and steps >= cfg.max_steps:
                    break
            val_loss = float(
                _mean_loss(model, val_examples, embedder, cfg, ablation).data[0, 0]
            )
            history.append(
                {
                    "epoch": epoch,
                    "train_loss": float(np.mean(epoch_losses)),
                    "val_loss": val_loss,
                    "lr": optimizer.lr,
                }
            )
            if val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch
                best_snapshot = model.snapshot()
                stale_epochs = 0
            else:
                stale_epochs += 1
            scheduler.observe(val_loss)
            if stale_epochs >= cfg.early_stop_patience:
                break
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
    except NonFiniteError as err:
        model.restore(best_snapshot)
        raise DivergenceError(
            f"training diverged at step {steps}: {err}", model, history
        ) from err

    model.restore(best_snapshot)
    return TrainResult(model=model, history=history,
                       best_epoch=max(best_epoch, 0), steps=steps)
