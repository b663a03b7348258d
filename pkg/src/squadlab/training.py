"""Model assembly and desk-scale training for the five architecture tags.

Tags:
  squad_out                     embeddings -> linear span head
  highway_squad_out             embeddings -> 2x highway -> linear span head
  bilstm_attn_bilstm_bidaf      char combiner -> BiLSTM -> attention -> BiLSTM -> BiDAF head
  gru_highway_gru_bidaf         char combiner -> BiGRU -> highway -> BiGRU -> BiDAF head
  gru_attn_selfattn_gru_bidaf   char combiner -> BiGRU -> attention -> causal
                                self-attention -> BiGRU -> BiDAF head

Training is mini-batch Adam with gradient clipping; everything is driven
by a single seed so checkpoints and loss curves reproduce bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import (AdamState, Rng, Tensor, adam_step, clip_global_norm,
                       load_checkpoint, save_checkpoint, zero_grads)
from .embeddings import CharEmbeddingTable
from .heads import (DEFAULT_MAX_ANSWER_LENGTH, DEFAULT_N_BEST,
                    DEFAULT_NULL_THRESHOLD, AlbertSquadOut, AnswerCandidate,
                    BidafOut, aggregate_features, decode_spans,
                    prediction_record, span_loss, to_span_logits)
from .layers import (EmbeddingCombiner, GRUCell, Highway, LSTMCell,
                     bigru_forward, bilstm_forward, dot_product_attention,
                     dropout)

ARCHITECTURES = (
    "squad_out",
    "highway_squad_out",
    "bilstm_attn_bilstm_bidaf",
    "gru_highway_gru_bidaf",
    "gru_attn_selfattn_gru_bidaf",
)

_BIDAF_TAGS = set(ARCHITECTURES[2:])


@dataclass
class ModelConfig:
    architecture: str
    d_model: int = 64
    hidden: int = 32
    d_char: int = 16
    d_char_out: int = 16
    use_char_embedding: bool = False
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(
                f"unknown architecture {self.architecture!r}; "
                f"choose one of {ARCHITECTURES}"
            )
        if self.architecture in _BIDAF_TAGS and not self.use_char_embedding:
            raise ValueError(
                f"{self.architecture} requires use_char_embedding=True"
            )
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must be in [0, 1), got "
                             f"{self.dropout_rate}")


@dataclass
class Hyperparams:
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 3
    max_seq_length: int = 64
    doc_stride: int = 16
    dropout_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "epochs",
                     "max_seq_length", "doc_stride"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")


# hyperparameter presets used for the full-scale runs; desk-scale defaults
# above are what tests exercise
PRESETS = {
    "base": Hyperparams(learning_rate=3e-5, batch_size=7, epochs=3,
                        max_seq_length=384, doc_stride=128, dropout_rate=0.2),
    "base-extra-layers": Hyperparams(learning_rate=3e-5, batch_size=5,
                                     epochs=3, max_seq_length=384,
                                     doc_stride=128, dropout_rate=0.2),
    "xlarge": Hyperparams(learning_rate=1e-5, batch_size=1, epochs=2,
                          max_seq_length=280, doc_stride=128,
                          dropout_rate=0.2),
    "xxlarge": Hyperparams(learning_rate=8e-6, batch_size=1, epochs=1,
                           max_seq_length=280, doc_stride=128,
                           dropout_rate=0.2),
}

GRAD_CLIP_NORM = 5.0


class QaModel:
    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        self.seed = int(seed)
        rng = Rng(seed)
        tag = cfg.architecture
        self.combiner = None
        self.encoder = None
        self.decoder = None
        self.mid_highway = None
        self.head = None

        if tag in ("squad_out", "highway_squad_out"):
            self.highways = []
            if tag == "highway_squad_out":
                self.highways = [Highway(cfg.d_model, rng.spawn(1)),
                                 Highway(cfg.d_model, rng.spawn(2))]
            self.head = AlbertSquadOut(cfg.d_model, rng.spawn(3))
        else:
            d_char_out = cfg.d_char_out if cfg.use_char_embedding else 0
            self.combiner = EmbeddingCombiner(
                cfg.d_model, cfg.d_char, d_char_out, rng.spawn(4),
                char_table=CharEmbeddingTable(cfg.d_char, seed=0),
            )
            d_comb = self.combiner.d_comb
            h = cfg.hidden
            if tag == "bilstm_attn_bilstm_bidaf":
                self.encoder = (LSTMCell(d_comb, h, rng.spawn(5)),
                                LSTMCell(d_comb, h, rng.spawn(6)))
                self.decoder = (LSTMCell(2 * h, h, rng.spawn(7)),
                                LSTMCell(2 * h, h, rng.spawn(8)))
            else:
                self.encoder = (GRUCell(d_comb, h, rng.spawn(5)),
                                GRUCell(d_comb, h, rng.spawn(6)))
                self.decoder = (GRUCell(2 * h, h, rng.spawn(7)),
                                GRUCell(2 * h, h, rng.spawn(8)))
            if tag == "gru_highway_gru_bidaf":
                self.mid_highway = Highway(2 * h, rng.spawn(9))
            self.head = BidafOut(2 * h, 2 * h, h, rng.spawn(10))

    def parameters(self) -> dict:
        params = {}
        tag = self.cfg.architecture
        if tag in ("squad_out", "highway_squad_out"):
            for i, hw in enumerate(self.highways):
                for n, p in hw.parameters().items():
                    params[f"highway.{i}.{n}"] = p
        else:
            for n, p in self.combiner.parameters().items():
                params[f"combiner.{n}"] = p
            for label, pair in (("encoder", self.encoder),
                                ("decoder", self.decoder)):
                for d, cell in zip(("fwd", "bwd"), pair):
                    for n, p in cell.parameters().items():
                        params[f"{label}.{d}.{n}"] = p
            if self.mid_highway is not None:
                for n, p in self.mid_highway.parameters().items():
                    params[f"mid_highway.{n}"] = p
        for n, p in self.head.parameters().items():
            params[f"head.{n}"] = p
        return params

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def forward(self, feature, embedding: np.ndarray, train: bool = False,
                drop_rng: Rng | None = None):
        """Return (start_logits, end_logits) tensors for one feature."""
        cfg = self.cfg
        rate = cfg.dropout_rate if train else 0.0
        x = Tensor(embedding)
        if rate > 0:
            x = dropout(x, rate, drop_rng)
        tag = cfg.architecture
        if tag in ("squad_out", "highway_squad_out"):
            for hw in self.highways:
                x = hw.forward(x)
            return self.head.forward(x, feature.context_mask)

        x = self.combiner.forward(x, feature.tokens)
        if rate > 0:
            x = dropout(x, rate, drop_rng)
        if tag == "bilstm_attn_bilstm_bidaf":
            enc = bilstm_forward(self.encoder[0], self.encoder[1], x)
            att = dot_product_attention(enc)
            dec = bilstm_forward(self.decoder[0], self.decoder[1], att)
        elif tag == "gru_highway_gru_bidaf":
            enc = bigru_forward(self.encoder[0], self.encoder[1], x)
            att = self.mid_highway.forward(enc)
            dec = bigru_forward(self.decoder[0], self.decoder[1], att)
        else:
            enc = bigru_forward(self.encoder[0], self.encoder[1], x)
            att = dot_product_attention(enc)
            att = dot_product_attention(att, causal=True)
            dec = bigru_forward(self.decoder[0], self.decoder[1], att)
        return self.head.forward(att, dec, feature.context_mask)


def build_model(cfg: ModelConfig, seed: int) -> QaModel:
    return QaModel(cfg, seed)


def save_model(path, model: QaModel, hyperparams: dict | None = None) -> None:
    hp = dict(hyperparams or {})
    hp["model_config"] = {
        "architecture": model.cfg.architecture,
        "d_model": model.cfg.d_model,
        "hidden": model.cfg.hidden,
        "d_char": model.cfg.d_char,
        "d_char_out": model.cfg.d_char_out,
        "use_char_embedding": model.cfg.use_char_embedding,
        "dropout_rate": model.cfg.dropout_rate,
    }
    save_checkpoint(path, model.parameters(), model.seed, hp)


def load_model(path) -> QaModel:
    params, seed, hp = load_checkpoint(path)
    cfg = ModelConfig(**hp["model_config"])
    model = build_model(cfg, seed)
    own = model.parameters()
    if set(own) != set(params):
        missing = sorted(set(own) ^ set(params))
        raise ValueError(f"checkpoint parameter names do not match the "
                         f"architecture; first differences: {missing[:5]}")
    for name, arr in params.items():
        if own[name].data.shape != arr.shape:
            raise ValueError(f"checkpoint parameter {name!r} has shape "
                             f"{arr.shape}, model expects {own[name].data.shape}")
        own[name].data[...] = arr
    return model


@dataclass
class TrainResult:
    loss_curve: list = field(default_factory=list)  # (step, loss)

    def final_loss(self):
        return self.loss_curve[-1][1] if self.loss_curve else None


def train(model: QaModel, features, provider, hp: Hyperparams,
          max_steps: int | None = None) -> TrainResult:
    """Mini-batch Adam over seeded shuffles of the feature list."""
    if not features:
        raise ValueError("no features to train on")
    params = model.parameters()
    state = AdamState()
    order_rng = Rng(hp.seed).spawn(101)
    drop_rng = Rng(hp.seed).spawn(102)
    result = TrainResult()
    step = 0
    for _ in range(hp.epochs):
        order = order_rng.permutation(len(features))
        for lo in range(0, len(features), hp.batch_size):
            batch = [features[i] for i in order[lo : lo + hp.batch_size]]
            zero_grads(params)
            total = None
            for feat in batch:
                emb = provider(feat)
                try:
                    start, end = model.forward(feat, emb, train=True,
                                               drop_rng=drop_rng)
                    loss = span_loss(start, end, feat.start_position,
                                     feat.end_position, feat.context_mask)
                except FloatingPointError as e:
                    raise RuntimeError(
                        f"non-finite loss at step {step} "
                        f"(qid={feat.qid!r}, feature_index="
                        f"{feat.feature_index}): {e}"
                    ) from None
                total = loss if total is None else total + loss
            total = total * (1.0 / len(batch))
            total.backward()
            clip_global_norm(params, GRAD_CLIP_NORM)
            adam_step(params, state, hp.learning_rate)
            step += 1
            result.loss_curve.append((step, float(total.data)))
            if max_steps is not None and step >= max_steps:
                return result
    return result


def predict(model: QaModel, features, provider, context_by_qid: dict,
            n_best: int = DEFAULT_N_BEST,
            max_answer_length: int = DEFAULT_MAX_ANSWER_LENGTH,
            null_threshold: float = DEFAULT_NULL_THRESHOLD,
            model_f1_weight: float | None = None,
            collect_logits: bool = False):
    """Inference over features; returns (prediction records, logits dumps)."""
    by_qid = {}
    logit_sets = {}
    for feat in sorted(features, key=lambda f: (f.qid, f.feature_index)):
        start, end = model.forward(feat, provider(feat), train=False)
        logits = to_span_logits(feat, start, end)
        if collect_logits:
            logit_sets[(feat.qid, feat.feature_index)] = logits
        cands = decode_spans(logits, feat, context_by_qid[feat.qid],
                             n_best=n_best,
                             max_answer_length=max_answer_length)
        by_qid.setdefault(feat.qid, []).append(cands)
    records = []
    for qid in sorted(by_qid):
        merged = [c for cands in by_qid[qid] for c in cands]
        merged.sort(key=AnswerCandidate.sort_key)
        spans = [c for c in merged if not c.is_null][: n_best - 1]
        _, null_score = aggregate_features(by_qid[qid], null_threshold)
        null = AnswerCandidate(qid=qid, text="", start_token=None,
                               end_token=None, score=null_score)
        nbest = sorted(spans + [null], key=AnswerCandidate.sort_key)
        records.append(prediction_record(qid, nbest, null_score,
                                         model_f1_weight))
    return records, logit_sets


def write_loss_curve(path, result: TrainResult) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,loss\n")
        for step, loss in result.loss_curve:
            f.write(f"{step},{loss!r}\n")
