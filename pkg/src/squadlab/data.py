"""SQuAD 2.0 ingestion, answer/token alignment, and long-context chunking.

Character spans are half-open [start, end) throughout.  Every token carries
the span of the *word* it belongs to, so consecutive subword tokens of one
word share an identical span.  A feature packs
``[sentinel] question [sep] context-chunk [sep]`` and the sentinel at index
0 doubles as the no-answer position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

SENTINEL_TOKEN = "[CLS]"
SEPARATOR_TOKEN = "[SEP]"
NULL_POSITION = 0

_TRAILING_PUNCT = ".,!?;:"


class DataError(ValueError):
    """Malformed input data (bad schema, impossible span, bad config)."""


@dataclass
class RawExample:
    qid: str
    question: str
    context: str
    answers: list  # list of (text, char_start)
    is_impossible: bool

    def __post_init__(self):
        if self.is_impossible != (len(self.answers) == 0):
            raise DataError(
                f"qid {self.qid}: is_impossible={self.is_impossible} but "
                f"{len(self.answers)} answers given"
            )
        for text, start in self.answers:
            if self.context[start : start + len(text)] != text:
                raise DataError(
                    f"qid {self.qid}: answer {text!r} does not match context "
                    f"at offset {start}"
                )


@dataclass
class TokenizedContext:
    tokens: list
    token_word_span: list  # per token: (start, end) half-open, word-level


@dataclass
class Feature:
    qid: str
    feature_index: int
    tokens: list
    context_mask: list  # bool per token
    token_word_span: list  # (start, end) where context_mask, else None
    start_position: int
    end_position: int

    def context_token_indices(self):
        return [i for i, m in enumerate(self.context_mask) if m]


@dataclass
class PreprocessConfig:
    max_seq_length: int
    doc_stride: int

    def __post_init__(self):
        if not 0 < self.doc_stride < self.max_seq_length:
            raise DataError(
                f"need 0 < doc_stride < max_seq_length, got "
                f"doc_stride={self.doc_stride}, max_seq_length={self.max_seq_length}"
            )


def toy_tokenize(text: str, vocab) -> TokenizedContext:
    """Whitespace-split then greedy longest-match subword decomposition.

    Stand-in for a real subword tokenizer so fixtures need no external
    model.  Unknown characters fall back to single-character tokens.  The
    word span excludes trailing sentence punctuation, matching the fixture
    convention ("August." maps to the span of "August").
    """
    vocab = set(vocab)
    tokens, spans = [], []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        end = pos
        while end < n and not text[end].isspace():
            end += 1
        word = text[pos:end]
        span_end = end
        while span_end - pos > 1 and text[span_end - 1] in _TRAILING_PUNCT:
            span_end -= 1
        span = (pos, span_end)
        i = 0
        while i < len(word):
            match = None
            for j in range(len(word), i, -1):
                if word[i:j] in vocab:
                    match = word[i:j]
                    break
            if match is None:
                match = word[i]
            tokens.append(match)
            spans.append(span)
            i += len(match)
        pos = end
    return TokenizedContext(tokens=tokens, token_word_span=spans)


def align_answer_to_tokens(ctx: TokenizedContext, answer_char_span) -> tuple:
    """Token range covering the answer: first and last tokens whose word
    spans overlap the answer's character span."""
    a_start, a_end = answer_char_span
    hits = [
        i
        for i, (s, e) in enumerate(ctx.token_word_span)
        if s < a_end and a_start < e
    ]
    if not hits:
        nearest = ctx.token_word_span[:3]
        raise DataError(
            f"answer span [{a_start}, {a_end}) overlaps no token; "
            f"nearest token spans: {nearest}"
        )
    return hits[0], hits[-1]


def span_to_text(ctx: TokenizedContext, start_token: int, end_token: int,
                 context_text: str) -> str:
    n = len(ctx.tokens)
    if not (0 <= start_token <= end_token < n):
        raise DataError(
            f"token span ({start_token}, {end_token}) out of range for "
            f"{n} tokens"
        )
    return context_text[ctx.token_word_span[start_token][0]:
                        ctx.token_word_span[end_token][1]]


def chunk_context(example: RawExample, ctx: TokenizedContext,
                  cfg: PreprocessConfig, question_tokens) -> list:
    """Split an over-long context into overlapping chunks and emit features.

    Consecutive full chunks share exactly ``doc_stride`` context tokens.
    The first chunk fully containing the gold answer keeps it; every other
    chunk (and every chunk of an unanswerable example) gets the null
    position.
    """
    budget = cfg.max_seq_length - len(question_tokens) - 3
    if budget < 1:
        raise DataError(
            f"qid {example.qid}: question of {len(question_tokens)} tokens "
            f"leaves no room for context under max_seq_length="
            f"{cfg.max_seq_length}"
        )
    n_ctx = len(ctx.tokens)
    step = budget - cfg.doc_stride
    if n_ctx > budget and step < 1:
        raise DataError(
            f"doc_stride={cfg.doc_stride} must be smaller than the context "
            f"budget {budget} when chunking is needed"
        )

    starts = [0]
    while starts[-1] + budget < n_ctx:
        starts.append(starts[-1] + step)

    gold = None
    if not example.is_impossible:
        text, char_start = example.answers[0]
        gold = align_answer_to_tokens(ctx, (char_start, char_start + len(text)))

    features = []
    gold_assigned = False
    for fi, lo in enumerate(starts):
        hi = min(lo + budget, n_ctx)
        chunk_tokens = ctx.tokens[lo:hi]
        chunk_spans = ctx.token_word_span[lo:hi]
        tokens = ([SENTINEL_TOKEN] + list(question_tokens) + [SEPARATOR_TOKEN]
                  + chunk_tokens + [SEPARATOR_TOKEN])
        ctx_offset = 2 + len(question_tokens)
        mask = [False] * ctx_offset + [True] * len(chunk_tokens) + [False]
        spans = [None] * ctx_offset + chunk_spans + [None]
        start_pos = end_pos = NULL_POSITION
        if gold is not None and not gold_assigned:
            gs, ge = gold
            if lo <= gs and ge < hi:
                start_pos = ctx_offset + (gs - lo)
                end_pos = ctx_offset + (ge - lo)
                gold_assigned = True
        features.append(Feature(
            qid=example.qid,
            feature_index=fi,
            tokens=tokens,
            context_mask=mask,
            token_word_span=spans,
            start_position=start_pos,
            end_position=end_pos,
        ))
    if gold is not None and not gold_assigned:
        raise DataError(
            f"qid {example.qid}: gold token span {gold} not fully contained "
            f"in any chunk (budget={budget}, doc_stride={cfg.doc_stride})"
        )
    return features


def load_squad_json(path) -> list:
    """Official SQuAD 2.0 schema: data -> paragraphs -> qas."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            blob = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: malformed JSON: {e}") from None
    examples = []
    if not isinstance(blob, dict) or not isinstance(blob.get("data"), list):
        raise DataError(f"{path}: $.data must be a list")
    for ai, article in enumerate(blob["data"]):
        paragraphs = article.get("paragraphs")
        if not isinstance(paragraphs, list):
            raise DataError(f"{path}: $.data[{ai}].paragraphs must be a list")
        for pi, para in enumerate(paragraphs):
            context = para.get("context")
            qas = para.get("qas")
            if not isinstance(context, str) or not isinstance(qas, list):
                raise DataError(
                    f"{path}: $.data[{ai}].paragraphs[{pi}] needs string "
                    f"'context' and list 'qas'"
                )
            for qi, qa in enumerate(qas):
                where = f"$.data[{ai}].paragraphs[{pi}].qas[{qi}]"
                try:
                    qid = qa["id"]
                    question = qa["question"]
                    is_impossible = bool(qa.get("is_impossible", False))
                    answers = [] if is_impossible else [
                        (a["text"], int(a["answer_start"]))
                        for a in qa.get("answers", [])
                    ]
                except (KeyError, TypeError) as e:
                    raise DataError(f"{path}: {where}: {e}") from None
                try:
                    examples.append(RawExample(
                        qid=qid, question=question, context=context,
                        answers=answers, is_impossible=is_impossible,
                    ))
                except DataError as e:
                    raise DataError(f"{path}: {where}: {e}") from None
    return examples


def load_pretokenized(path) -> dict:
    """JSON-lines {qid, tokens, spans} -> qid -> TokenizedContext."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[rec["qid"]] = TokenizedContext(
                    tokens=list(rec["tokens"]),
                    token_word_span=[(int(s), int(e)) for s, e in rec["spans"]],
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path}: line {ln + 1}: {e}") from None
    return out


# -- feature file io ------------------------------------------------------

_FEATURE_FIELDS = ("qid", "feature_index", "tokens", "context_mask",
                   "token_word_span", "start_position", "end_position")


def write_features(path, features) -> None:
    """JSON-lines, one feature per line, fixed field order, UTF-8."""
    ordered = sorted(features, key=lambda f: (f.qid, f.feature_index))
    with open(path, "w", encoding="utf-8") as f:
        for feat in ordered:
            rec = {
                "qid": feat.qid,
                "feature_index": feat.feature_index,
                "tokens": feat.tokens,
                "context_mask": feat.context_mask,
                "token_word_span": [
                    list(s) if s is not None else None
                    for s in feat.token_word_span
                ],
                "start_position": feat.start_position,
                "end_position": feat.end_position,
            }
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_features(path) -> list:
    features = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                features.append(Feature(
                    qid=rec["qid"],
                    feature_index=int(rec["feature_index"]),
                    tokens=list(rec["tokens"]),
                    context_mask=[bool(m) for m in rec["context_mask"]],
                    token_word_span=[
                        tuple(s) if s is not None else None
                        for s in rec["token_word_span"]
                    ],
                    start_position=int(rec["start_position"]),
                    end_position=int(rec["end_position"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path}: line {ln + 1}: {e}") from None
    return features


def preprocess_dataset(examples, tokenized_by_qid, cfg: PreprocessConfig,
                       question_tokenizer) -> list:
    """Run chunking over a whole dataset, ordered by (qid, feature_index)."""
    features = []
    for ex in sorted(examples, key=lambda e: e.qid):
        ctx = tokenized_by_qid[ex.qid]
        q_tokens = question_tokenizer(ex.question)
        features.extend(chunk_context(ex, ctx, cfg, q_tokens))
    return features
