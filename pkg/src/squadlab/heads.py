"""Span-prediction output heads, loss, decoding, and per-question aggregation.

Both heads mask every position outside the context chunk to ``MASK_FILL``
except index 0, the sentinel, which stays live to score the no-answer
hypothesis.  A span's score is start_logit + end_logit; ties are broken by
(non-null first, smaller start, smaller end) so decoding is deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autograd import (MASK_FILL, Rng, Tensor, cross_entropy_from_logits,
                       init_uniform, masked_fill, matmul)
from .data import NULL_POSITION, Feature
from .layers import GRUCell, gru_forward

DEFAULT_N_BEST = 20
DEFAULT_MAX_ANSWER_LENGTH = 30
DEFAULT_NULL_THRESHOLD = 0.0


@dataclass
class SpanLogits:
    qid: str
    feature_index: int
    start_logits: np.ndarray
    end_logits: np.ndarray


@dataclass
class AnswerCandidate:
    qid: str
    text: str  # empty string = no-answer
    start_token: int | None
    end_token: int | None
    score: float
    feature_index: int = 0

    @property
    def is_null(self):
        return self.start_token is None

    def sort_key(self):
        # higher score first; at equal score non-null wins, then position
        return (-self.score, self.is_null,
                self.start_token if not self.is_null else 0,
                self.end_token if not self.is_null else 0)


def _head_mask(context_mask) -> np.ndarray:
    """Positions to blank: outside the context and not the null sentinel."""
    cm = np.asarray(context_mask, dtype=bool)
    blocked = ~cm
    blocked[NULL_POSITION] = False
    return blocked


class AlbertSquadOut:
    """Linear d -> 2; column 0 start logits, column 1 end logits."""

    def __init__(self, d: int, rng: Rng):
        self.d = d
        self.W = init_uniform(rng, (d, 2), d)
        self.b = init_uniform(rng, (2,), d)

    def parameters(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x: Tensor, context_mask):
        if x.shape[1] != self.d:
            raise ValueError(f"head width {self.d}, input width {x.shape[1]}")
        logits = matmul(x, self.W) + self.b  # [seq, 2]
        blocked = _head_mask(context_mask)
        start = masked_fill(logits[:, 0], blocked, MASK_FILL)
        end = masked_fill(logits[:, 1], blocked, MASK_FILL)
        return start, end


class BidafOut:
    """Start: w1 att + w2 dec.  End: w3 att + w4 gru(dec), per-token sums."""

    def __init__(self, d_att: int, d_dec: int, end_hidden: int, rng: Rng):
        self.d_att = d_att
        self.d_dec = d_dec
        self.w1 = init_uniform(rng, (d_att, 1), d_att)
        self.w2 = init_uniform(rng, (d_dec, 1), d_dec)
        self.w3 = init_uniform(rng, (d_att, 1), d_att)
        self.w4 = init_uniform(rng, (end_hidden, 1), end_hidden)
        self.end_rnn = GRUCell(d_dec, end_hidden, rng.spawn(17))

    def parameters(self):
        params = {"w1": self.w1, "w2": self.w2, "w3": self.w3, "w4": self.w4}
        for n, p in self.end_rnn.parameters().items():
            params[f"end_rnn.{n}"] = p
        return params

    def forward(self, att_out: Tensor, dec_out: Tensor, context_mask):
        if att_out.shape[1] != self.d_att or dec_out.shape[1] != self.d_dec:
            raise ValueError(
                f"bidaf head widths ({self.d_att}, {self.d_dec}), inputs "
                f"({att_out.shape[1]}, {dec_out.shape[1]})"
            )
        m2 = gru_forward(self.end_rnn, dec_out)
        start = (matmul(att_out, self.w1) + matmul(dec_out, self.w2))[:, 0]
        end = (matmul(att_out, self.w3) + matmul(m2, self.w4))[:, 0]
        blocked = _head_mask(context_mask)
        return (masked_fill(start, blocked, MASK_FILL),
                masked_fill(end, blocked, MASK_FILL))


def span_loss(start_logits: Tensor, end_logits: Tensor, gold_start: int,
              gold_end: int, context_mask) -> Tensor:
    """Mean of the start and end cross-entropies for one feature."""
    cm = np.asarray(context_mask, dtype=bool)
    for name, pos in (("start", gold_start), ("end", gold_end)):
        if pos != NULL_POSITION and not cm[pos]:
            raise ValueError(
                f"gold {name} position {pos} is masked and not the null "
                f"position; feature is corrupt"
            )
    ce_start = cross_entropy_from_logits(start_logits.reshape(1, -1), [gold_start])
    ce_end = cross_entropy_from_logits(end_logits.reshape(1, -1), [gold_end])
    return (ce_start + ce_end) * 0.5


def to_span_logits(feature: Feature, start: Tensor, end: Tensor) -> SpanLogits:
    return SpanLogits(
        qid=feature.qid,
        feature_index=feature.feature_index,
        start_logits=np.array(start.data, copy=True),
        end_logits=np.array(end.data, copy=True),
    )


def decode_spans(logits: SpanLogits, feature: Feature, context_text: str,
                 n_best: int = DEFAULT_N_BEST,
                 max_answer_length: int = DEFAULT_MAX_ANSWER_LENGTH) -> list:
    """Top-n candidates over legal (start, end) pairs plus the null candidate.

    A pair is legal when both ends are context positions, start <= end,
    and the span covers fewer than ``max_answer_length`` tokens.
    """
    sl, el = logits.start_logits, logits.end_logits
    ctx = feature.context_token_indices()
    candidates = []
    for si, s in enumerate(ctx):
        for e in ctx[si:]:
            if e - s >= max_answer_length:
                break
            text = context_text[feature.token_word_span[s][0]:
                                feature.token_word_span[e][1]]
            candidates.append(AnswerCandidate(
                qid=feature.qid, text=text, start_token=s, end_token=e,
                score=float(sl[s] + el[e]), feature_index=feature.feature_index,
            ))
    null = AnswerCandidate(
        qid=feature.qid, text="", start_token=None, end_token=None,
        score=float(sl[NULL_POSITION] + el[NULL_POSITION]),
        feature_index=feature.feature_index,
    )
    candidates.sort(key=AnswerCandidate.sort_key)
    top = candidates[: n_best - 1] if len(candidates) >= n_best else candidates
    out = top + [null]
    out.sort(key=AnswerCandidate.sort_key)
    return out


def aggregate_features(candidates_per_feature,
                       null_threshold: float = DEFAULT_NULL_THRESHOLD):
    """Pick the per-question answer across all chunks.

    Returns (final candidate, null_score) where null_score is the minimum
    null score over chunks.  No-answer wins iff null_score minus the best
    non-null score exceeds the threshold.
    """
    if not candidates_per_feature:
        raise ValueError("question has zero features")
    best = None
    null_score = None
    qid = None
    for cands in candidates_per_feature:
        for c in cands:
            qid = c.qid
            if c.is_null:
                if null_score is None or c.score < null_score:
                    null_score = c.score
            elif best is None or c.sort_key() < best.sort_key():
                best = c
    if null_score is None:
        raise ValueError(f"qid {qid}: no null candidate present")
    if best is None or null_score - best.score > null_threshold:
        final = AnswerCandidate(qid=qid, text="", start_token=None,
                                end_token=None, score=null_score)
    else:
        final = best
    return final, null_score


# -- prediction file ------------------------------------------------------


def write_predictions(path, records) -> None:
    """JSON-lines per question: {qid, nbest, null_score[, model_f1_weight]}.

    nbest entries carry feature_index so ensemble voting can key on the
    chunk a span came from.
    """
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_predictions(path) -> list:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(json.loads(line))
    return records


def prediction_record(qid: str, nbest, null_score: float,
                      model_f1_weight: float | None = None) -> dict:
    rec = {
        "qid": qid,
        "nbest": [
            {
                "text": c.text,
                "start_token": c.start_token,
                "end_token": c.end_token,
                "feature_index": c.feature_index,
                "score": c.score,
            }
            for c in nbest
        ],
        "null_score": null_score,
    }
    if model_f1_weight is not None:
        rec["model_f1_weight"] = model_f1_weight
    return rec
