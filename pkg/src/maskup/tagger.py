"""Linear-chain CRF tagger over the nine BIO2 tags.

Parameters live in one flat float64 vector ``params`` laid out as

    [ transition (10 x 10) | emission (V x 9) ]

Transition rows are the 9 tags followed by START; columns are the 9 tags
followed by STOP.  Keeping the emission block last means vocabulary growth only
appends parameters, which is what the EWC padding rule relies on.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._io import atomic_write
from .docmodel import ENTITY_TAGS, TAG_INDEX, TAGS, Document, normalize_iob1
from .errors import ContractError, ModelFormatError, TrainingDivergenceError, VersionError

NUM_TAGS = len(TAGS)
START = NUM_TAGS  # row index in the transition matrix
STOP = NUM_TAGS  # column index in the transition matrix
TRANS_SIZE = (NUM_TAGS + 1) * (NUM_TAGS + 1)

MODEL_FORMAT = "maskup-crf"
MODEL_VERSION = 1


class FeatureVocabulary:
    """Dense feature-string -> index map; grows until frozen."""

    def __init__(self, features: Iterable[str] = (), frozen: bool = False):
        self._index: dict[str, int] = {}
        for f in features:
            self._index.setdefault(f, len(self._index))
        self.frozen = frozen

    def add(self, feature: str) -> int | None:
        idx = self._index.get(feature)
        if idx is None and not self.frozen:
            idx = self._index[feature] = len(self._index)
        return idx

    def get(self, feature: str) -> int | None:
        return self._index.get(feature)

    def features(self) -> list[str]:
        return list(self._index)

    def copy(self, frozen: bool | None = None) -> "FeatureVocabulary":
        return FeatureVocabulary(self._index, self.frozen if frozen is None else frozen)

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, feature: str) -> bool:
        return feature in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureVocabulary) and self.features() == other.features()


@dataclass
class CrfModel:
    vocabulary: FeatureVocabulary
    params: np.ndarray
    tag_order: tuple[str, ...] = TAGS

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        expected = TRANS_SIZE + NUM_TAGS * len(self.vocabulary)
        if self.params.shape != (expected,):
            raise ContractError(f"params has shape {self.params.shape}, expected ({expected},)")
        if tuple(self.tag_order) != TAGS:
            raise ContractError(f"unsupported tag order {self.tag_order}")

    @classmethod
    def zeros(cls, vocabulary: FeatureVocabulary) -> "CrfModel":
        return cls(vocabulary, np.zeros(TRANS_SIZE + NUM_TAGS * len(vocabulary)))

    @property
    def transition(self) -> np.ndarray:
        return self.params[:TRANS_SIZE].reshape(NUM_TAGS + 1, NUM_TAGS + 1)

    @property
    def emission(self) -> np.ndarray:
        return self.params[TRANS_SIZE:].reshape(len(self.vocabulary), NUM_TAGS)

    @property
    def num_params(self) -> int:
        return self.params.size

    def copy(self) -> "CrfModel":
        return CrfModel(self.vocabulary.copy(), self.params.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.params)))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.1
    l2: float = 1e-4
    seed: int = 0
    ewc_lambda: float = 0.0
    batch: int = 1

    def __post_init__(self):
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ContractError("epochs must be a positive integer")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")
        if not self.l2 >= 0:
            raise ContractError("l2 must be non-negative")
        if not self.ewc_lambda >= 0:
            raise ContractError("ewc_lambda must be non-negative")
        if self.batch != 1:
            raise ContractError("only batch=1 (pure SGD) is supported")
        if not -(2**63) <= self.seed < 2**64:
            raise ContractError("seed must fit in 64 bits")


# --------------------------------------------------------------------------
# features


def _shape(word: str) -> str:
    out = []
    for ch in word:
        if ch.isupper():
            out.append("X")
        elif ch.islower():
            out.append("x")
        elif ch.isdigit():
            out.append("d")
        else:
            out.append(ch)
    return "".join(out)


def extract_features(doc: Document, position: int) -> set[str]:
    tokens = doc.tokens
    if not 0 <= position < len(tokens):
        raise ContractError(f"position {position} out of range for {len(tokens)} tokens")
    word = tokens[position].text
    low = word.lower()
    feats = {
        "bias",
        "w=" + low,
        "shape=" + _shape(word),
        "prev=" + (tokens[position - 1].text.lower() if position > 0 else "<S>"),
        "next=" + (tokens[position + 1].text.lower() if position + 1 < len(tokens) else "</S>"),
    }
    for k in (1, 2, 3):
        feats.add(f"p{k}={low[:k]}")
        feats.add(f"s{k}={low[-k:]}")
    if word[0].isupper():
        feats.add("cap=1")
    if word.isupper():
        feats.add("upper=1")
    if word.isdigit():
        feats.add("digit=1")
    return feats


def _sorted_features(doc: Document, position: int) -> list[str]:
    return sorted(extract_features(doc, position))


def feature_indices(vocabulary: FeatureVocabulary, doc: Document) -> list[np.ndarray]:
    """Per-token arrays of vocabulary indices; unseen features are dropped."""
    out = []
    for t in range(len(doc.tokens)):
        idx = [vocabulary.get(f) for f in _sorted_features(doc, t)]
        out.append(np.array([i for i in idx if i is not None], dtype=np.intp))
    return out


def build_vocabulary(corpus: Iterable[Document], base: FeatureVocabulary | None = None) -> FeatureVocabulary:
    vocab = base.copy(frozen=False) if base is not None else FeatureVocabulary()
    for doc in corpus:
        for t in range(len(doc.tokens)):
            for f in _sorted_features(doc, t):
                vocab.add(f)
    vocab.frozen = True
    return vocab


# --------------------------------------------------------------------------
# inference


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def _emission_scores(model: CrfModel, feats: Sequence[np.ndarray]) -> np.ndarray:
    W = model.emission
    E = np.zeros((len(feats), NUM_TAGS))
    for t, idx in enumerate(feats):
        if idx.size:
            E[t] = W[idx].sum(axis=0)
    return E


def _forward(trans: np.ndarray, E: np.ndarray) -> tuple[np.ndarray, float]:
    L = E.shape[0]
    if L == 0:
        return np.zeros((0, NUM_TAGS)), float(trans[START, STOP])
    inner = trans[:NUM_TAGS, :NUM_TAGS]
    alpha = np.empty((L, NUM_TAGS))
    alpha[0] = trans[START, :NUM_TAGS] + E[0]
    for t in range(1, L):
        alpha[t] = _logsumexp(alpha[t - 1][:, None] + inner, axis=0) + E[t]
    log_z = float(_logsumexp(alpha[-1] + trans[:NUM_TAGS, STOP], axis=0))
    return alpha, log_z


def _backward(trans: np.ndarray, E: np.ndarray) -> np.ndarray:
    L = E.shape[0]
    inner = trans[:NUM_TAGS, :NUM_TAGS]
    beta = np.empty((L, NUM_TAGS))
    if L == 0:
        return beta
    beta[-1] = trans[:NUM_TAGS, STOP]
    for t in range(L - 2, -1, -1):
        beta[t] = _logsumexp(inner + (E[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def log_partition(model: CrfModel, doc: Document) -> float:
    E = _emission_scores(model, feature_indices(model.vocabulary, doc))
    return _forward(model.transition, E)[1]


def _path_score(trans: np.ndarray, E: np.ndarray, path: Sequence[int]) -> float:
    if len(path) == 0:
        return float(trans[START, STOP])
    s = trans[START, path[0]] + trans[path[-1], STOP]
    for t, y in enumerate(path):
        s += E[t, y]
        if t:
            s += trans[path[t - 1], y]
    return float(s)


def sequence_score(model: CrfModel, doc: Document, tags: Sequence[str]) -> float:
    """Unnormalized log-score of one tag sequence."""
    E = _emission_scores(model, feature_indices(model.vocabulary, doc))
    return _path_score(model.transition, E, [TAG_INDEX[t] for t in tags])


def viterbi(model: CrfModel, doc: Document) -> tuple[list[int], float]:
    """Raw argmax path (tag indices) and its score; ties go to the lowest tag index."""
    trans = model.transition
    E = _emission_scores(model, feature_indices(model.vocabulary, doc))
    L = E.shape[0]
    if L == 0:
        return [], float(trans[START, STOP])
    inner = trans[:NUM_TAGS, :NUM_TAGS]
    delta = trans[START, :NUM_TAGS] + E[0]
    back = np.zeros((L, NUM_TAGS), dtype=np.intp)
    for t in range(1, L):
        cand = delta[:, None] + inner
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(NUM_TAGS)] + E[t]
    final = delta + trans[:NUM_TAGS, STOP]
    best = int(np.argmax(final))
    score = float(final[best])
    path = [best]
    for t in range(L - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return path, score


def decode(model: CrfModel, doc: Document) -> list[str]:
    path, _ = viterbi(model, doc)
    return normalize_iob1([TAGS[i] for i in path])


def tag_document(model: CrfModel, doc: Document) -> Document:
    return doc.with_tags(decode(model, doc))


# --------------------------------------------------------------------------
# likelihood and gradient


@dataclass
class _SparseGrad:
    """Gradient of the NLL restricted to the parameters one document touches."""

    loss: float
    trans: np.ndarray  # (10, 10)
    feats: list[np.ndarray]  # per-token emission row indices
    token_grads: np.ndarray  # (L, 9), applied to every row in feats[t]


def _nll_sparse(model: CrfModel, feats: list[np.ndarray], gold: Sequence[int]) -> _SparseGrad:
    trans = model.transition
    E = _emission_scores(model, feats)
    L = E.shape[0]
    alpha, log_z = _forward(trans, E)
    gold_score = _path_score(trans, E, gold)
    g_trans = np.zeros_like(trans)
    if L == 0:
        return _SparseGrad(log_z - gold_score, g_trans, feats, np.zeros((0, NUM_TAGS)))
    beta = _backward(trans, E)
    unary = np.exp(alpha + beta - log_z)
    token_grads = unary.copy()
    token_grads[np.arange(L), gold] -= 1.0

    inner = trans[:NUM_TAGS, :NUM_TAGS]
    g_inner = g_trans[:NUM_TAGS, :NUM_TAGS]
    for t in range(1, L):
        pair = alpha[t - 1][:, None] + inner + (E[t] + beta[t])[None, :] - log_z
        g_inner += np.exp(pair)
        g_inner[gold[t - 1], gold[t]] -= 1.0
    g_trans[START, :NUM_TAGS] = unary[0]
    g_trans[START, gold[0]] -= 1.0
    g_trans[:NUM_TAGS, STOP] = unary[-1]
    g_trans[gold[-1], STOP] -= 1.0
    return _SparseGrad(log_z - gold_score, g_trans, feats, token_grads)


def _densify(model: CrfModel, sg: _SparseGrad) -> np.ndarray:
    grad = np.zeros_like(model.params)
    grad[:TRANS_SIZE] = sg.trans.ravel()
    g_emit = grad[TRANS_SIZE:].reshape(len(model.vocabulary), NUM_TAGS)
    for idx, g in zip(sg.feats, sg.token_grads):
        g_emit[idx] += g
    return grad


def _gold_indices(doc: Document) -> list[int]:
    if doc.tags is None:
        raise ContractError("document has no gold tags")
    return [TAG_INDEX[t] for t in doc.tags]


def neg_log_likelihood_and_gradient(model: CrfModel, doc: Document) -> tuple[float, np.ndarray]:
    """-log p(gold | doc) and its gradient with respect to ``model.params``."""
    sg = _nll_sparse(model, feature_indices(model.vocabulary, doc), _gold_indices(doc))
    return sg.loss, _densify(model, sg)


# --------------------------------------------------------------------------
# training


def _extend_model(model: CrfModel, corpus: Sequence[Document]) -> CrfModel:
    vocab = build_vocabulary(corpus, base=model.vocabulary)
    params = np.zeros(TRANS_SIZE + NUM_TAGS * len(vocab))
    params[: model.num_params] = model.params
    return CrfModel(vocab, params)


def train(
    corpus: Sequence[Document],
    config: TrainConfig = TrainConfig(),
    ewc=None,
    init: CrfModel | None = None,
) -> CrfModel:
    """SGD on mean NLL + l2*||theta||^2 (+ EWC penalty when ``ewc`` is given and lambda > 0).

    With ``init`` the run continues from that model; features first seen in
    ``corpus`` are appended with zero weight.  The EWC quadratic term is applied
    as an exact proximal step, which stays stable for any lr * lambda * F.
    """
    corpus = list(corpus)
    if not corpus:
        raise ContractError("training corpus is empty")
    for doc in corpus:
        _gold_indices(doc)

    model = build_model(corpus) if init is None else _extend_model(init, corpus)
    theta = model.params
    emit = model.emission

    anchor = fisher = None
    if ewc is not None and config.ewc_lambda > 0:
        from .continual import pad_state

        state = pad_state(ewc, model.num_params)
        anchor, fisher = state.theta_star, state.fisher
        if not np.any(fisher):
            anchor = fisher = None

    feats = [feature_indices(model.vocabulary, d) for d in corpus]
    golds = [_gold_indices(d) for d in corpus]
    rng = np.random.default_rng(config.seed & 0xFFFFFFFFFFFFFFFF)

    # overflow surfaces as a non-finite loss, reported below
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            lr = config.learning_rate / (1.0 + epoch)
            decay = 1.0 - 2.0 * lr * config.l2
            if fisher is not None:
                step = lr * config.ewc_lambda * fisher
                pull = step * anchor
                denom = 1.0 + step
            for i in rng.permutation(len(corpus)):
                sg = _nll_sparse(model, feats[i], golds[i])
                if not math.isfinite(sg.loss):
                    raise TrainingDivergenceError(epoch, int(i))
                if config.l2:
                    theta *= decay
                theta[:TRANS_SIZE] -= lr * sg.trans.ravel()
                for idx, g in zip(sg.feats, sg.token_grads):
                    emit[idx] -= lr * g
                if fisher is not None:
                    theta += pull
                    theta /= denom
            if not model.is_finite():
                raise TrainingDivergenceError(epoch, len(corpus) - 1)
    return model


def build_model(corpus: Sequence[Document]) -> CrfModel:
    return CrfModel.zeros(build_vocabulary(corpus))


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class TagScore:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @property
    def support(self) -> int:
        return self.tp + self.fn


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float, list[str]]:
    undefined = []
    if tp + fp:
        p = tp / (tp + fp)
    else:
        p = 0.0
        undefined.append("precision")
    if tp + fn:
        r = tp / (tp + fn)
    else:
        r = 0.0
        undefined.append("recall")
    if p + r:
        f = 2 * p * r / (p + r)
    else:
        f = 0.0
        undefined.append("f1")
    return p, r, f, undefined


@dataclass(frozen=True)
class EvalReport:
    per_tag: dict[str, TagScore]
    micro_precision: float
    micro_recall: float
    micro_f1: float
    macro_f1: float
    token_count: int
    entity_token_count: int
    undefined: tuple[str, ...] = field(default=())

    def format(self) -> str:
        lines = [f"{'tag':<10}{'f1':>10}{'precision':>11}{'recall':>10}{'support':>9}"]
        for tag in ENTITY_TAGS:
            s = self.per_tag[tag]
            lines.append(f"{tag:<10}{s.f1:>10.6f}{s.precision:>11.6f}{s.recall:>10.6f}{s.support:>9d}")
        lines.append(f"{'micro':<10}{self.micro_f1:>10.6f}{self.micro_precision:>11.6f}{self.micro_recall:>10.6f}")
        lines.append(f"{'macro':<10}{self.macro_f1:>10.6f}")
        lines.append(f"tokens={self.token_count} entity_tokens={self.entity_token_count}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "per_tag": {t: {"precision": s.precision, "recall": s.recall, "f1": s.f1, "support": s.support}
                        for t, s in self.per_tag.items()},
            "micro_precision": self.micro_precision,
            "micro_recall": self.micro_recall,
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "token_count": self.token_count,
            "entity_token_count": self.entity_token_count,
            "undefined": list(self.undefined),
        }


def score_tags(gold: Iterable[Sequence[str]], predicted: Iterable[Sequence[str]]) -> EvalReport:
    counts = {t: [0, 0, 0] for t in ENTITY_TAGS}  # tp, fp, fn
    n_tokens = 0
    n_entity = 0
    for g_seq, p_seq in zip(gold, predicted, strict=True):
        if len(g_seq) != len(p_seq):
            raise ContractError("gold and predicted lengths differ")
        for g, p in zip(g_seq, p_seq):
            n_tokens += 1
            if g != "O":
                n_entity += 1
            if g == p:
                if g != "O":
                    counts[g][0] += 1
                continue
            if p != "O":
                counts[p][1] += 1
            if g != "O":
                counts[g][2] += 1
    per_tag = {}
    undefined: list[str] = []
    for tag, (tp, fp, fn) in counts.items():
        p, r, f, und = _prf(tp, fp, fn)
        per_tag[tag] = TagScore(p, r, f, tp, fp, fn)
        undefined += [f"{tag}.{m}" for m in und]
    tp = sum(c[0] for c in counts.values())
    fp = sum(c[1] for c in counts.values())
    fn = sum(c[2] for c in counts.values())
    mp, mr, mf, und = _prf(tp, fp, fn)
    undefined += [f"micro.{m}" for m in und]
    macro = sum(s.f1 for s in per_tag.values()) / len(per_tag)
    return EvalReport(per_tag, mp, mr, mf, macro, n_tokens, n_entity, tuple(undefined))


def evaluate(model: CrfModel, corpus: Iterable[Document]) -> EvalReport:
    corpus = list(corpus)
    return score_tags([_tags(d) for d in corpus], [decode(model, d) for d in corpus])


def _tags(doc: Document) -> tuple[str, ...]:
    if doc.tags is None:
        raise ContractError("evaluation corpus must be tagged")
    return doc.tags


# --------------------------------------------------------------------------
# persistence


def _encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _decode_array(s: str, n: int) -> np.ndarray:
    raw = base64.b64decode(s, validate=True)
    if len(raw) != 8 * n:
        raise ModelFormatError(f"array holds {len(raw)} bytes, expected {8 * n}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def model_to_bytes(model: CrfModel) -> bytes:
    payload = _encode_array(model.params)
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "tag_order": list(model.tag_order),
        "features": model.vocabulary.features(),
        "params": payload,
        "sha256": hashlib.sha256(payload.encode("ascii")).hexdigest(),
    }
    return json.dumps(doc, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def model_from_bytes(data: bytes) -> CrfModel:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"corrupt model file: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a maskup CRF model file")
    if doc.get("version") != MODEL_VERSION:
        raise VersionError(f"unsupported model version {doc.get('version')!r}")
    try:
        if tuple(doc["tag_order"]) != TAGS:
            raise ModelFormatError(f"unexpected tag order {doc['tag_order']}")
        if hashlib.sha256(doc["params"].encode("ascii")).hexdigest() != doc["sha256"]:
            raise ModelFormatError("parameter checksum mismatch")
        vocab = FeatureVocabulary(doc["features"], frozen=True)
        if len(vocab) != len(doc["features"]):
            raise ModelFormatError("duplicate features")
        params = _decode_array(doc["params"], TRANS_SIZE + NUM_TAGS * len(vocab))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError(f"corrupt model file: {e}") from e
    model = CrfModel(vocab, params)
    if not model.is_finite():
        raise ModelFormatError("model contains non-finite weights")
    return model


def save_model(model: CrfModel, path: str | os.PathLike) -> None:
    atomic_write(path, model_to_bytes(model))


def load_model(path: str | os.PathLike) -> CrfModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
