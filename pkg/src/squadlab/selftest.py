"""Quick self-verification: golden fixtures plus a gradient spot check."""

from __future__ import annotations

import numpy as np

from .autograd import Rng, Tensor
from .data import (PreprocessConfig, RawExample, TokenizedContext,
                   align_answer_to_tokens, chunk_context, span_to_text,
                   toy_tokenize)
from .gradcheck import check_gradients
from .layers import Highway
from .scoring import compute_em, compute_f1

OBAMA_CONTEXT = "Obama was born in August."
OBAMA_VOCAB = ["O", "ba", "ma", "was", "born", "in", "Au", "gust."]
OBAMA_SPANS = [(0, 5), (0, 5), (0, 5), (6, 9), (10, 14), (15, 17),
               (18, 24), (18, 24)]

JAY_TOKENS = ["_jay", "_is", "_12", "_years", "_old", ".", "_he", "_lives",
              "_in", "_flo", "mo", "."]


def jay_context():
    """Jay fixture as a pre-tokenized context over a synthetic text."""
    text = "jay is 12 years old . he lives in flomo ."
    spans, pos = [], 0
    for tok in JAY_TOKENS:
        word = tok.lstrip("_")
        start = text.index(word, pos)
        spans.append((start, start + len(word)))
        pos = start + len(word)
    # "mo" belongs to the word "flomo": share its span with "_flo"
    spans[10] = spans[9] = (text.index("flomo"), text.index("flomo") + 5)
    return text, TokenizedContext(tokens=list(JAY_TOKENS),
                                  token_word_span=spans)


def run_selftest(verbose: bool = False) -> bool:
    ok = True

    def report(name, passed):
        nonlocal ok
        ok = ok and passed
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'}  {name}")

    # token alignment golden
    ctx = toy_tokenize(OBAMA_CONTEXT, OBAMA_VOCAB)
    report("obama tokenization",
           ctx.tokens == OBAMA_VOCAB and ctx.token_word_span == OBAMA_SPANS)
    report("obama align", align_answer_to_tokens(ctx, (18, 24)) == (6, 7))
    report("obama decode",
           span_to_text(ctx, 6, 6, OBAMA_CONTEXT) == "August")

    # chunking golden
    text, jay = jay_context()
    example = RawExample(qid="jay", question="How old is Jay?",
                         context=text, answers=[("12", text.index("12"))],
                         is_impossible=False)
    cfg = PreprocessConfig(max_seq_length=12, doc_stride=2)
    feats = chunk_context(example, jay, cfg, ["How", "old", "is", "Jay?"])
    first = feats[0]
    answer_ok = (
        len(feats) >= 2
        and first.start_position == first.end_position
        and first.tokens[first.start_position] == "_12"
        and all(f.start_position == 0 and f.end_position == 0
                for f in feats[1:])
    )
    report("jay chunking", answer_ok)

    # scoring golden
    report("einstein em",
           compute_em("Einstein", ["Albert Einstein"]) == 0
           and compute_em("Albert Einstein", ["Albert Einstein"]) == 1)
    report("einstein f1",
           abs(compute_f1("Einstein", ["Albert Einstein"]) - 2 / 3) < 1e-4)

    # gradient spot check
    rng = Rng(7)
    hw = Highway(4, rng)
    x = Tensor(rng.normal((3, 4)))
    try:
        check_gradients(lambda: hw.forward(x).sum(), hw.parameters(),
                        rtol=1e-6)
        report("highway gradients", True)
    except AssertionError:
        report("highway gradients", False)

    return ok
