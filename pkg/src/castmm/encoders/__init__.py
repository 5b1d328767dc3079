"""Text and structure encoders plus the word-level tokenizer."""

from castmm.encoders.structure import MASK_ELEMENT, StructureEncoder, encode_structure
from castmm.encoders.text import TextEncoder, encode_text
from castmm.encoders.vocab import (
    CLS,
    MASK,
    MAX_LEN,
    PAD,
    SPECIALS,
    UNK,
    TokenSequence,
    Vocab,
    build_vocab,
    tokenize,
    word_tokens,
)
