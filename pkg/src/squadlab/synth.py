"""Synthetic corpus generator for training and pipeline tests.

Questions ask for a number hidden in a short filler context; a configurable
share of questions is unanswerable (no number present).  Word-level
tokenization keeps alignment trivial, so models only have to learn span
selection.
"""

from __future__ import annotations

import json

from .autograd import Rng
from .data import RawExample, TokenizedContext

_FILLER = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf",
           "hotel", "india", "juliet", "kilo", "lima", "mike", "november",
           "oscar", "papa", "quebec", "romeo", "sierra", "tango"]
_NUMBERS = ["11", "23", "37", "42", "58", "64", "71", "89", "95", "107"]


def word_tokenize(text: str) -> TokenizedContext:
    """One token per whitespace word, spanning the word verbatim."""
    tokens, spans = [], []
    pos = 0
    for word in text.split():
        start = text.index(word, pos)
        tokens.append(word)
        spans.append((start, start + len(word)))
        pos = start + len(word)
    return TokenizedContext(tokens=tokens, token_word_span=spans)


def question_tokens(text: str) -> list:
    return text.split()


def make_synthetic_examples(n: int = 50, seed: int = 0,
                            impossible_every: int = 5,
                            context_words: int = 8) -> list:
    """n examples; every ``impossible_every``-th one is unanswerable."""
    rng = Rng(seed)
    examples = []
    for i in range(n):
        words = [_FILLER[int(rng.uniform(0, len(_FILLER)))]
                 for _ in range(context_words)]
        impossible = impossible_every > 0 and i % impossible_every == 0
        if impossible:
            context = " ".join(words)
            examples.append(RawExample(
                qid=f"synth-{i:04d}",
                question=f"what number is case {i}",
                context=context,
                answers=[],
                is_impossible=True,
            ))
        else:
            number = _NUMBERS[int(rng.uniform(0, len(_NUMBERS)))]
            slot = 1 + int(rng.uniform(0, context_words - 2))
            words[slot] = number
            context = " ".join(words)
            char_start = len(" ".join(words[:slot])) + (1 if slot else 0)
            examples.append(RawExample(
                qid=f"synth-{i:04d}",
                question=f"what number is case {i}",
                context=context,
                answers=[(number, char_start)],
                is_impossible=False,
            ))
    return examples


def write_squad_json(path, examples) -> None:
    """Serialize RawExamples in the official SQuAD 2.0 layout."""
    data = {
        "version": "v2.0",
        "data": [{
            "title": "synthetic",
            "paragraphs": [
                {
                    "context": ex.context,
                    "qas": [{
                        "id": ex.qid,
                        "question": ex.question,
                        "is_impossible": ex.is_impossible,
                        "answers": [
                            {"text": text, "answer_start": start}
                            for text, start in ex.answers
                        ],
                    }],
                }
                for ex in examples
            ],
        }],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False)
