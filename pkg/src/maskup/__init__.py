"""Selective masking of sensitive entities with a continually trained CRF tagger and key escrow."""

from .docmodel import (
    LABELS,
    TAGS,
    Document,
    EntitySpan,
    Token,
    normalize_iob1,
    read_conll,
    spans_to_tags,
    tags_to_spans,
    tokenize,
    write_conll,
)
from .tagger import CrfModel, TrainConfig, decode, evaluate, load_model, save_model, train
from .continual import EwcState, continual_update, estimate_fisher, ewc_penalty_and_gradient
from .selenc import MaskedDocument, derive_key, mask, select_sensitive, unmask
from .masterkey import Keystore, authority_keygen, authority_unwrap, wrap_session_key

__version__ = "0.1.0"
