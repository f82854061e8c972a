"""The full network and its training loop.

Pipeline per document: token embeddings feed a bidirectional LSTM giving
one d_h-vector per token; each token vector is projected to a query that
attends over per-tree key vectors, pulling in a mixture of the activated
leaf embeddings; the concatenated text+leaf vector is projected back to
d_m = d_h; per-label attention over token positions then yields one vector
per label, scored by a per-label linear layer and sigmoid. The loss is the
summed binary cross-entropy over labels.

The fusion step has four modes: `attention` as above; `average` and
`maxpool` replace the attention mixture with a uniform average or a
columnwise max of the leaf matrix; `text_only` bypasses the structured
branch entirely, passing the LSTM output straight to label attention.

Everything runs in float64 on the reverse-mode tape; batch size is one
document, which keeps runs deterministic under a fixed seed.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor, backward
from .metrics import PredictionBatch, compute_all, micro_f1

FUSION_MODES = ("attention", "average", "maxpool", "text_only")

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class ModelDims:
    vocab_size: int
    n_labels: int
    leaf_counts: tuple[int, ...] = ()
    d_e: int = 100
    d_lstm: int = 128
    d_t: int = 128
    d_l: int = 30

    @property
    def d_h(self) -> int:
        return 2 * self.d_lstm

    @property
    def n_trees(self) -> int:
        return len(self.leaf_counts)

    def validate(self) -> None:
        for name in ("vocab_size", "n_labels", "d_e", "d_lstm", "d_t", "d_l"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if any(c <= 0 for c in self.leaf_counts):
            raise ValueError("every tree needs at least one leaf")


@dataclass
class ModelParams:
    """All learnable arrays. The multimodal width d_m equals d_h, so the
    text-only mode can reuse every downstream shape."""

    dims: ModelDims
    word_emb: Tensor
    lstm_fwd_wx: Tensor
    lstm_fwd_wh: Tensor
    lstm_fwd_b: Tensor
    lstm_bwd_wx: Tensor
    lstm_bwd_wh: Tensor
    lstm_bwd_b: Tensor
    query_proj: Tensor
    tree_keys: Tensor
    leaf_tables: list[Tensor] = field(default_factory=list)
    fuse_proj: Tensor = None
    label_attn: Tensor = None
    out_weight: Tensor = None
    out_bias: Tensor = None

    def named(self) -> list[tuple[str, Tensor]]:
        pairs = [
            ("word_emb", self.word_emb),
            ("lstm_fwd_wx", self.lstm_fwd_wx),
            ("lstm_fwd_wh", self.lstm_fwd_wh),
            ("lstm_fwd_b", self.lstm_fwd_b),
            ("lstm_bwd_wx", self.lstm_bwd_wx),
            ("lstm_bwd_wh", self.lstm_bwd_wh),
            ("lstm_bwd_b", self.lstm_bwd_b),
            ("query_proj", self.query_proj),
            ("tree_keys", self.tree_keys),
            ("fuse_proj", self.fuse_proj),
            ("label_attn", self.label_attn),
            ("out_weight", self.out_weight),
            ("out_bias", self.out_bias),
        ]
        for t, table in enumerate(self.leaf_tables):
            pairs.append((f"leaf_table_{t:04d}", table))
        return pairs

    def all(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named()}

    def restore(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named():
            t.data[...] = state[name]


def _glorot(rng, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_params(dims: ModelDims, rng) -> ModelParams:
    """Fresh parameters: uniform(-0.1, 0.1) embeddings, Glorot-bounded
    weight matrices, zero biases with the forget gate nudged to +1."""
    dims.validate()
    d, d_h = dims.d_lstm, dims.d_h

    def lstm_bias() -> np.ndarray:
        b = np.zeros(4 * d)
        b[d : 2 * d] = 1.0  # forget gate: remember by default
        return b

    return ModelParams(
        dims=dims,
        word_emb=Tensor(rng.uniform(-0.1, 0.1, size=(dims.vocab_size, dims.d_e)),
                        requires_grad=True),
        lstm_fwd_wx=Tensor(_glorot(rng, 4 * d, dims.d_e), requires_grad=True),
        lstm_fwd_wh=Tensor(_glorot(rng, 4 * d, d), requires_grad=True),
        lstm_fwd_b=Tensor(lstm_bias(), requires_grad=True),
        lstm_bwd_wx=Tensor(_glorot(rng, 4 * d, dims.d_e), requires_grad=True),
        lstm_bwd_wh=Tensor(_glorot(rng, 4 * d, d), requires_grad=True),
        lstm_bwd_b=Tensor(lstm_bias(), requires_grad=True),
        query_proj=Tensor(_glorot(rng, dims.d_t, d_h), requires_grad=True),
        tree_keys=Tensor(rng.uniform(-0.1, 0.1, size=(dims.d_t, dims.n_trees)),
                         requires_grad=True),
        leaf_tables=[
            Tensor(rng.uniform(-0.1, 0.1, size=(count, dims.d_l)), requires_grad=True)
            for count in dims.leaf_counts
        ],
        fuse_proj=Tensor(_glorot(rng, d_h, d_h + dims.d_l), requires_grad=True),
        label_attn=Tensor(_glorot(rng, d_h, dims.n_labels), requires_grad=True),
        out_weight=Tensor(_glorot(rng, dims.n_labels, d_h), requires_grad=True),
        out_bias=Tensor(np.zeros(dims.n_labels), requires_grad=True),
    )


def encode_text(token_ids: np.ndarray, params: ModelParams) -> Tensor:
    """Token ids -> N x d_h bidirectional LSTM states."""
    token_ids = np.asarray(token_ids, dtype=np.int64)
    if token_ids.size == 0:
        raise ValueError("cannot encode an empty document")
    emb = ad.gather(params.word_emb, token_ids)
    fwd = ad.lstm_sequence(emb, params.lstm_fwd_wx, params.lstm_fwd_wh,
                           params.lstm_fwd_b)
    bwd = ad.lstm_sequence(emb, params.lstm_bwd_wx, params.lstm_bwd_wh,
                           params.lstm_bwd_b, reverse=True)
    return ad.concat([fwd, bwd], axis=1)


def assemble_leaf_matrix(assignment: np.ndarray, params: ModelParams) -> Tensor:
    """Activated-leaf embeddings as a d_l x n_trees matrix, one column per
    tree."""
    assignment = np.asarray(assignment, dtype=np.int64)
    if assignment.shape != (len(params.leaf_tables),):
        raise ValueError(
            f"assignment length {assignment.shape} does not match "
            f"{len(params.leaf_tables)} trees"
        )
    rows = [
        ad.gather(table, assignment[t : t + 1])
        for t, table in enumerate(params.leaf_tables)
    ]
    return ad.transpose2d(ad.concat(rows, axis=0))


def fuse(H: Tensor, leaf_matrix: Tensor | None, params: ModelParams,
         mode: str, return_weights: bool = False):
    """Blend each token vector with leaf content; N x d_m output.

    attention: per-token softmax over trees of (query . tree key) weights
    the leaf columns. average: uniform weights, identical for every token.
    maxpool: columnwise max of the leaf matrix for every token. text_only:
    the LSTM states pass through untouched.

    With return_weights the per-token tree weights come back alongside M
    (None for the modes that have no weights).
    """
    if mode not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {mode!r}")
    if mode == "text_only":
        return (H, None) if return_weights else H
    if leaf_matrix is None:
        raise ValueError(f"fusion mode {mode!r} needs a leaf matrix")
    n_tokens = H.data.shape[0]
    n_trees = leaf_matrix.data.shape[1]

    alpha = None
    if mode == "attention":
        queries = ad.matmul(H, params.query_proj, tb=True)
        # The consistent product keeps duplicate tree keys bitwise equal in
        # the score matrix, so uniform attention is exactly uniform.
        scores = ad.matmul_consistent(queries, params.tree_keys)
        alpha = ad.softmax(scores, axis=1)
        pulled = ad.matmul(alpha, leaf_matrix, tb=True)
    elif mode == "average":
        alpha = Tensor(np.full((n_tokens, n_trees), 1.0 / n_trees))
        pulled = ad.matmul(alpha, leaf_matrix, tb=True)
    else:
        peak = ad.maxpool_cols(leaf_matrix)
        pulled = ad.repeat_rows(peak, n_tokens)

    joined = ad.concat([H, pulled], axis=1)
    M = ad.matmul(joined, params.fuse_proj, tb=True)
    return (M, alpha) if return_weights else M


def label_attention(M: Tensor, label_attn: Tensor, return_weights: bool = False):
    """Per-label softmax over token positions; n_labels x d_m output."""
    scores = ad.matmul(M, label_attn)
    attn = ad.softmax(scores, axis=0)
    V = ad.matmul(attn, M, ta=True)
    return (V, attn) if return_weights else V


def predict(V: Tensor, params: ModelParams) -> Tensor:
    """Per-label probability from each label's own linear layer."""
    logits = ad.add(
        ad.reduce_sum(ad.mul(V, params.out_weight), axis=1), params.out_bias
    )
    return ad.sigmoid(logits)


def forward(params: ModelParams, token_ids: np.ndarray,
            assignment: np.ndarray | None, mode: str) -> Tensor:
    """Document -> per-label probability vector."""
    H = encode_text(token_ids, params)
    leaf_matrix = None
    if mode in ("attention", "average", "maxpool"):
        if assignment is None:
            raise ValueError(f"fusion mode {mode!r} needs a leaf assignment")
        leaf_matrix = assemble_leaf_matrix(assignment, params)
    M = fuse(H, leaf_matrix, params, mode)
    V = label_attention(M, params.label_attn)
    return predict(V, params)


def document_loss(params: ModelParams, token_ids, assignment, target,
                  mode: str) -> Tensor:
    yhat = forward(params, token_ids, assignment, mode)
    return ad.binary_cross_entropy(yhat, Tensor(np.asarray(target, dtype=np.float64)))


def predict_matrix(params: ModelParams, docs, assignments, mode: str) -> np.ndarray:
    """Probabilities for a whole split; rows follow docs order."""
    rows = []
    for i, ids in enumerate(docs):
        assignment = None if assignments is None else assignments[i]
        rows.append(forward(params, ids, assignment, mode).data)
    return np.stack(rows)


@dataclass
class TrainSettings:
    epochs: int
    seed: int
    fusion_mode: str = "attention"
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    metric_k: int = 5
    # optional early stop once training micro-F1 reaches this level
    train_f1_stop: float | None = None


LOG_COLUMNS = (
    "epoch", "train_loss", "val_macro_auc", "val_micro_auc",
    "val_macro_f1", "val_micro_f1", "val_precision_at_k", "train_micro_f1",
)


@dataclass
class TrainResult:
    log_rows: list[dict]
    best_epoch: int
    best_val_micro_f1: float

    def log_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(LOG_COLUMNS) + "\n")
        for row in self.log_rows:
            buf.write(",".join(repr(row[c]) for c in LOG_COLUMNS) + "\n")
        return buf.getvalue()


def train_model(
    params: ModelParams,
    train_docs, train_assignments, train_targets,
    val_docs, val_assignments, val_targets,
    settings: TrainSettings,
) -> TrainResult:
    """Seeded per-document training with best-validation checkpointing.

    After the final epoch the parameters are restored to the epoch with the
    highest validation micro-F1 (earliest such epoch on ties).
    """
    if settings.fusion_mode not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {settings.fusion_mode!r}")
    if settings.optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {settings.optimizer!r}")
    n = len(train_docs)
    if n == 0:
        raise ValueError("no training documents")
    train_targets = np.asarray(train_targets, dtype=np.float64)
    val_targets = np.asarray(val_targets, dtype=np.float64)

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([settings.seed, 1]))
    tensors = params.all()
    adam = AdamState(lr=settings.learning_rate)

    log_rows: list[dict] = []
    best_state = params.snapshot()
    best_epoch = -1
    best_val = -1.0

    for epoch in range(settings.epochs):
        order = shuffle_rng.permutation(n)
        loss_total = 0.0
        for i in order:
            assignment = None if train_assignments is None else train_assignments[i]
            ad.zero_grads(tensors)
            with Tape() as tape:
                loss = document_loss(
                    params, train_docs[i], assignment, train_targets[i],
                    settings.fusion_mode,
                )
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise RuntimeError(
                    f"non-finite loss {loss_value} at epoch {epoch}, "
                    f"document index {int(i)}"
                )
            backward(tape, loss)
            if settings.clip_norm and settings.clip_norm > 0:
                ad.clip_gradients(tensors, settings.clip_norm)
            if settings.optimizer == "adam":
                ad.adam_step(tensors, adam)
            else:
                ad.sgd_step(tensors, settings.learning_rate)
            loss_total += loss_value

        train_probs = predict_matrix(
            params, train_docs, train_assignments, settings.fusion_mode
        )
        train_f1 = micro_f1(PredictionBatch(train_probs, train_targets))
        val_probs = predict_matrix(
            params, val_docs, val_assignments, settings.fusion_mode
        )
        val_metrics = compute_all(
            PredictionBatch(val_probs, val_targets), k=settings.metric_k
        )
        row = {
            "epoch": epoch,
            "train_loss": loss_total / n,
            "val_macro_auc": val_metrics["macro_auc"],
            "val_micro_auc": val_metrics["micro_auc"],
            "val_macro_f1": val_metrics["macro_f1"],
            "val_micro_f1": val_metrics["micro_f1"],
            "val_precision_at_k": val_metrics[f"precision_at_{settings.metric_k}"],
            "train_micro_f1": train_f1,
        }
        log_rows.append(row)

        if row["val_micro_f1"] > best_val:
            best_val = row["val_micro_f1"]
            best_epoch = epoch
            best_state = params.snapshot()

        if settings.train_f1_stop is not None and train_f1 >= settings.train_f1_stop:
            break

    params.restore(best_state)
    return TrainResult(log_rows=log_rows, best_epoch=best_epoch,
                       best_val_micro_f1=best_val)


def save_checkpoint(path, params: ModelParams, meta: dict) -> None:
    """Named-array archive with a JSON metadata blob; exact round-trip."""
    payload = dict(meta)
    payload["format_version"] = CHECKPOINT_FORMAT_VERSION
    payload["dims"] = {
        "vocab_size": params.dims.vocab_size,
        "n_labels": params.dims.n_labels,
        "leaf_counts": list(params.dims.leaf_counts),
        "d_e": params.dims.d_e,
        "d_lstm": params.dims.d_lstm,
        "d_t": params.dims.d_t,
        "d_l": params.dims.d_l,
    }
    arrays = {name: t.data for name, t in params.named()}
    np.savez(path, meta_json=np.array(json.dumps(payload, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta_json"]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format version: {meta.get('format_version')!r}"
            )
        d = meta["dims"]
        dims = ModelDims(
            vocab_size=int(d["vocab_size"]), n_labels=int(d["n_labels"]),
            leaf_counts=tuple(int(c) for c in d["leaf_counts"]),
            d_e=int(d["d_e"]), d_lstm=int(d["d_lstm"]),
            d_t=int(d["d_t"]), d_l=int(d["d_l"]),
        )

        def t(name: str) -> Tensor:
            return Tensor(archive[name].copy(), requires_grad=True)

        params = ModelParams(
            dims=dims,
            word_emb=t("word_emb"),
            lstm_fwd_wx=t("lstm_fwd_wx"), lstm_fwd_wh=t("lstm_fwd_wh"),
            lstm_fwd_b=t("lstm_fwd_b"),
            lstm_bwd_wx=t("lstm_bwd_wx"), lstm_bwd_wh=t("lstm_bwd_wh"),
            lstm_bwd_b=t("lstm_bwd_b"),
            query_proj=t("query_proj"), tree_keys=t("tree_keys"),
            leaf_tables=[t(f"leaf_table_{i:04d}") for i in range(dims.n_trees)],
            fuse_proj=t("fuse_proj"), label_attn=t("label_attn"),
            out_weight=t("out_weight"), out_bias=t("out_bias"),
        )
    return params, meta
