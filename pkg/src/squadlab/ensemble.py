"""Ensembling over prediction files: mean logits, weighted voting, and
weighted voting with the mean-logits model as an extra voter.

Voting keys a prediction by (feature_index, start_token, end_token) so the
same token span coming from different chunks counts as different votes;
the no-answer vote is keyed separately.  Weights are the member models'
dev-set F1 values, used as given.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .heads import (DEFAULT_MAX_ANSWER_LENGTH, DEFAULT_N_BEST,
                    DEFAULT_NULL_THRESHOLD, AnswerCandidate, SpanLogits,
                    aggregate_features, decode_spans, prediction_record)

DUMP_MAGIC = b"SQLD"
DUMP_VERSION = 1

NULL_KEY = ("null",)


@dataclass
class PredictionSet:
    model_id: str
    records: dict  # qid -> prediction-file record
    weight: float

    def __post_init__(self):
        if self.weight <= 0:
            raise ValueError(
                f"model {self.model_id}: weight must be positive, "
                f"got {self.weight}"
            )

    @classmethod
    def from_records(cls, model_id, records, weight=None):
        by_qid = {}
        for rec in records:
            if rec["qid"] in by_qid:
                raise ValueError(f"duplicate qid {rec['qid']!r} in predictions")
            by_qid[rec["qid"]] = rec
        if weight is None:
            weights = {rec.get("model_f1_weight") for rec in records}
            if len(weights) != 1 or None in weights:
                raise ValueError(
                    f"model {model_id}: no single model_f1_weight in file and "
                    f"none supplied"
                )
            weight = weights.pop()
        return cls(model_id=model_id, records=by_qid, weight=weight)

    def top_vote(self, qid: str):
        """(vote key, candidate dict) for this model's single best prediction."""
        rec = self.records[qid]
        spans = [c for c in rec["nbest"] if c["start_token"] is not None]
        best = max(spans, key=lambda c: c["score"]) if spans else None
        if best is None or rec["null_score"] - best["score"] > DEFAULT_NULL_THRESHOLD:
            return NULL_KEY, {"text": "", "start_token": None,
                              "end_token": None, "feature_index": 0,
                              "score": rec["null_score"]}
        key = (best["feature_index"], best["start_token"], best["end_token"])
        return key, best


def _check_same_qids(sets):
    qids = set(sets[0].records)
    for s in sets[1:]:
        if set(s.records) != qids:
            extra = sorted(set(s.records) ^ qids)
            raise ValueError(
                f"models {sets[0].model_id!r} and {s.model_id!r} cover "
                f"different qids; first differences: {extra[:5]}"
            )
    return sorted(qids)


# -- mean logits ----------------------------------------------------------


def mean_logits(dumps) -> dict:
    """Elementwise sum of members' logits per (qid, feature_index) key."""
    dumps = list(dumps)
    if len(dumps) < 2:
        raise ValueError(f"mean_logits needs at least 2 dumps, got {len(dumps)}")
    keys = sorted(dumps[0])
    for d in dumps[1:]:
        if sorted(d) != keys:
            diff = sorted(set(d) ^ set(keys))
            raise ValueError(f"logits dumps disagree on key {diff[0]!r}")
    combined = {}
    for key in keys:
        qid, fi = key
        ref = dumps[0][key]
        start = np.array(ref.start_logits, copy=True)
        end = np.array(ref.end_logits, copy=True)
        for d in dumps[1:]:
            rec = d[key]
            if (rec.start_logits.shape != start.shape
                    or rec.end_logits.shape != end.shape):
                raise ValueError(
                    f"logits dumps disagree on sequence length at key {key!r}"
                )
            start += rec.start_logits
            end += rec.end_logits
        combined[key] = SpanLogits(qid=qid, feature_index=fi,
                                   start_logits=start, end_logits=end)
    return combined


def decode_logit_set(logit_sets: dict, features_by_key: dict,
                     context_by_qid: dict,
                     n_best: int = DEFAULT_N_BEST,
                     max_answer_length: int = DEFAULT_MAX_ANSWER_LENGTH,
                     null_threshold: float = DEFAULT_NULL_THRESHOLD,
                     model_f1_weight: float | None = None) -> list:
    """Standard decode + per-question aggregation over a SpanLogits map."""
    by_qid = {}
    for (qid, fi), logits in sorted(logit_sets.items()):
        feature = features_by_key[(qid, fi)]
        cands = decode_spans(logits, feature, context_by_qid[qid],
                             n_best=n_best, max_answer_length=max_answer_length)
        by_qid.setdefault(qid, []).append(cands)
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
    return records


# -- weighted voting ------------------------------------------------------


def weighted_voting(sets) -> list:
    """Each model's best prediction votes with the model's F1 weight.

    Winner per qid by (highest total weight, then highest single
    contributing weight, then earlier start, then earlier end, then
    non-null).  Returns prediction-file records.
    """
    sets = list(sets)
    if not sets:
        raise ValueError("weighted_voting needs at least one prediction set")
    qids = _check_same_qids(sets)
    records = []
    for qid in qids:
        tallies = {}  # key -> [total, max_single, candidate]
        for s in sets:
            key, cand = s.top_vote(qid)
            if key not in tallies:
                tallies[key] = [0.0, 0.0, cand]
            tallies[key][0] += s.weight
            tallies[key][1] = max(tallies[key][1], s.weight)

        def rank(item):
            key, (total, max_single, cand) = item
            is_null = key == NULL_KEY
            start = 0 if is_null else cand["start_token"]
            end = 0 if is_null else cand["end_token"]
            return (-total, -max_single, is_null, start, end)

        _, (total, _, winner) = min(tallies.items(), key=rank)
        null_scores = [s.records[qid]["null_score"] for s in sets]
        final = AnswerCandidate(
            qid=qid, text=winner["text"], start_token=winner["start_token"],
            end_token=winner["end_token"], score=total,
            feature_index=winner.get("feature_index") or 0,
        )
        records.append(prediction_record(qid, [final], min(null_scores)))
    return records


def weighted_voting_with_mean_logits(sets, dumps, mean_weight: float,
                                     features_by_key: dict,
                                     context_by_qid: dict,
                                     n_best: int = DEFAULT_N_BEST,
                                     max_answer_length: int = DEFAULT_MAX_ANSWER_LENGTH,
                                     null_threshold: float = DEFAULT_NULL_THRESHOLD) -> list:
    """Weighted voting over the member models plus the mean-logits model."""
    if mean_weight <= 0:
        raise ValueError(f"mean_weight must be positive, got {mean_weight}")
    combined = mean_logits(dumps)
    mean_records = decode_logit_set(
        combined, features_by_key, context_by_qid, n_best=n_best,
        max_answer_length=max_answer_length, null_threshold=null_threshold,
    )
    mean_set = PredictionSet.from_records("mean-logits", mean_records,
                                          weight=mean_weight)
    return weighted_voting(list(sets) + [mean_set])


# -- logits dump io -------------------------------------------------------


def save_logits_dump(path, logit_sets: dict) -> None:
    """Binary: header {magic, version, count}; per record {qid, feature
    index, seq_len, start fp64 LE, end fp64 LE}."""
    items = sorted(logit_sets.items())
    with open(path, "wb") as f:
        f.write(DUMP_MAGIC)
        f.write(struct.pack("<II", DUMP_VERSION, len(items)))
        for (qid, fi), rec in items:
            qb = qid.encode("utf-8")
            f.write(struct.pack("<I", len(qb)))
            f.write(qb)
            f.write(struct.pack("<II", fi, len(rec.start_logits)))
            f.write(np.ascontiguousarray(rec.start_logits, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(rec.end_logits, dtype="<f8").tobytes())


def load_logits_dump(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DUMP_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version, count = struct.unpack("<II", f.read(8))
        if version != DUMP_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        out = {}
        for _ in range(count):
            (qlen,) = struct.unpack("<I", f.read(4))
            qid = f.read(qlen).decode("utf-8")
            fi, seq_len = struct.unpack("<II", f.read(8))
            start = np.frombuffer(f.read(seq_len * 8), dtype="<f8")
            end = np.frombuffer(f.read(seq_len * 8), dtype="<f8")
            out[(qid, fi)] = SpanLogits(
                qid=qid, feature_index=fi,
                start_logits=start.astype(np.float64),
                end_logits=end.astype(np.float64),
            )
    return out
