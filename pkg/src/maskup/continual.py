"""Elastic weight consolidation for the CRF tagger, plus user rectifications.

The consolidated state stores the previous optimum and a diagonal (empirical)
Fisher estimate.  Later training adds

    sum_i (lambda / 2) * F_i * (theta_i - theta_star_i) ** 2

to the loss.  Multiple tasks are folded in by summing Fisher vectors and keeping
only the newest anchor.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Sequence

import numpy as np

from ._io import atomic_write
from .docmodel import LABELS, Document, EntitySpan, make_span, normalize_iob1, tokenize
from .errors import ContractError, ModelFormatError, ValidationError, VersionError
from .tagger import CrfModel, TrainConfig, decode, neg_log_likelihood_and_gradient, train

STATE_FORMAT = "maskup-ewc"
STATE_VERSION = 1


@dataclass(frozen=True, eq=False)
class EwcState:
    theta_star: np.ndarray
    fisher: np.ndarray
    source_task_id: str = "task"
    sample_count: int = 1

    def __post_init__(self):
        theta = np.asarray(self.theta_star, dtype=np.float64)
        fisher = np.asarray(self.fisher, dtype=np.float64)
        if theta.ndim != 1 or theta.shape != fisher.shape:
            raise ContractError(f"theta_star {theta.shape} and fisher {fisher.shape} must be equal-length vectors")
        if not (np.all(np.isfinite(fisher)) and np.all(fisher >= 0)):
            raise ContractError("fisher entries must be finite and non-negative")
        if not np.all(np.isfinite(theta)):
            raise ContractError("theta_star must be finite")
        if self.sample_count < 1:
            raise ContractError("sample_count must be positive")
        theta.flags.writeable = False
        fisher.flags.writeable = False
        object.__setattr__(self, "theta_star", theta)
        object.__setattr__(self, "fisher", fisher)

    def __len__(self) -> int:
        return self.theta_star.size

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EwcState)
            and self.source_task_id == other.source_task_id
            and self.sample_count == other.sample_count
            and np.array_equal(self.theta_star, other.theta_star)
            and np.array_equal(self.fisher, other.fisher)
        )


def pad_state(state: EwcState, size: int) -> EwcState:
    """Extend to ``size`` parameters; new entries get theta_star = 0 and F = 0."""
    n = len(state)
    if size < n:
        raise ContractError(f"cannot shrink EWC state from {n} to {size} parameters")
    if size == n:
        return state
    theta = np.zeros(size)
    fisher = np.zeros(size)
    theta[:n] = state.theta_star
    fisher[:n] = state.fisher
    return EwcState(theta, fisher, state.source_task_id, state.sample_count)


def estimate_fisher(model: CrfModel, corpus: Sequence[Document], task_id: str = "task") -> EwcState:
    """Empirical diagonal Fisher: mean squared gold-label log-likelihood gradient."""
    corpus = list(corpus)
    if not corpus:
        raise ContractError("cannot estimate Fisher information from an empty corpus")
    fisher = np.zeros(model.num_params)
    for doc in corpus:
        _, grad = neg_log_likelihood_and_gradient(model, doc)
        fisher += grad * grad
    fisher /= len(corpus)
    return EwcState(model.params.copy(), fisher, task_id, len(corpus))


def ewc_penalty_and_gradient(theta: np.ndarray, state: EwcState, lam: float) -> tuple[float, np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != state.theta_star.shape:
        raise ContractError(f"theta has {theta.size} entries, state has {len(state)}")
    if lam < 0:
        raise ContractError("lambda must be non-negative")
    diff = theta - state.theta_star
    weighted = state.fisher * diff
    penalty = float(np.sum((lam / 2.0) * weighted * diff))
    return penalty, lam * weighted


def accumulate(old: EwcState, new: EwcState) -> EwcState:
    """Fold a newer task's state into an older one (Fisher summed, newest anchor kept)."""
    size = max(len(old), len(new))
    old, new = pad_state(old, size), pad_state(new, size)
    return EwcState(new.theta_star.copy(), old.fisher + new.fisher, new.source_task_id,
                    old.sample_count + new.sample_count)


def continual_update(
    model: CrfModel,
    state: EwcState,
    new_corpus: Sequence[Document],
    config: TrainConfig = TrainConfig(ewc_lambda=100.0),
    task_id: str = "update",
) -> tuple[CrfModel, EwcState]:
    if len(state) != model.num_params:
        raise ContractError(f"EWC state has {len(state)} parameters, model has {model.num_params}")
    updated = train(new_corpus, config, ewc=state, init=model)
    new_state = estimate_fisher(updated, new_corpus, task_id)
    return updated, accumulate(state, new_state)


# --------------------------------------------------------------------------
# persistence


def state_to_bytes(state: EwcState) -> bytes:
    def enc(a):
        return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")

    theta, fisher = enc(state.theta_star), enc(state.fisher)
    doc = {
        "format": STATE_FORMAT,
        "version": STATE_VERSION,
        "source_task_id": state.source_task_id,
        "sample_count": state.sample_count,
        "size": len(state),
        "theta_star": theta,
        "fisher": fisher,
        "sha256": hashlib.sha256((theta + fisher).encode("ascii")).hexdigest(),
    }
    return json.dumps(doc, separators=(",", ":")).encode("utf-8")


def state_from_bytes(data: bytes) -> EwcState:
    try:
        doc = json.loads(data.decode("utf-8"))
        if not isinstance(doc, dict) or doc.get("format") != STATE_FORMAT:
            raise ModelFormatError("not a maskup EWC state file")
        if doc.get("version") != STATE_VERSION:
            raise VersionError(f"unsupported EWC state version {doc.get('version')!r}")
        if hashlib.sha256((doc["theta_star"] + doc["fisher"]).encode("ascii")).hexdigest() != doc["sha256"]:
            raise ModelFormatError("EWC state checksum mismatch")
        n = int(doc["size"])
        theta = np.frombuffer(base64.b64decode(doc["theta_star"], validate=True), dtype="<f8")
        fisher = np.frombuffer(base64.b64decode(doc["fisher"], validate=True), dtype="<f8")
        if theta.size != n or fisher.size != n:
            raise ModelFormatError("EWC state size mismatch")
        return EwcState(theta.astype(np.float64), fisher.astype(np.float64),
                        str(doc["source_task_id"]), int(doc["sample_count"]))
    except ModelFormatError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError, ContractError) as e:
        raise ModelFormatError(f"corrupt EWC state file: {e}") from e


def save_state(state: EwcState, path: str | os.PathLike) -> None:
    atomic_write(path, state_to_bytes(state))


def load_state(path: str | os.PathLike) -> EwcState:
    with open(path, "rb") as fh:
        return state_from_bytes(fh.read())


# --------------------------------------------------------------------------
# rectifications


@dataclass(frozen=True)
class CorrectionRecord:
    text: str
    accepted: tuple[EntitySpan, ...] = ()
    rejected: tuple[EntitySpan, ...] = ()
    added: tuple[EntitySpan, ...] = ()
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def __post_init__(self):
        for name in ("accepted", "rejected", "added"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        n = len(tokenize(self.text))
        seen: dict[int, str] = {}
        for name in ("accepted", "rejected", "added"):
            for sp in getattr(self, name):
                if sp.label not in LABELS or not 0 <= sp.token_start < sp.token_end <= n:
                    raise ValidationError(f"{name} span {sp} invalid for {n}-token text")
                for i in range(sp.token_start, sp.token_end):
                    if i in seen and seen[i] != name:
                        raise ValidationError(f"token {i} is both {seen[i]} and {name}")
                    seen[i] = name

    @classmethod
    def from_json(cls, line: str | dict) -> "CorrectionRecord":
        obj = json.loads(line) if isinstance(line, str) else line
        try:
            text = obj["text"]
            tokens = tokenize(text)

            def spans(key):
                out = []
                for s in obj.get(key, []):
                    out.append(make_span(tokens, s["label"], int(s["token_start"]), int(s["token_end"])))
                return tuple(out)

            kwargs = {}
            if "timestamp" in obj:
                kwargs["timestamp"] = str(obj["timestamp"])
            return cls(text, spans("accepted"), spans("rejected"), spans("added"), **kwargs)
        except (KeyError, TypeError) as e:
            raise ValidationError(f"malformed correction record: {e}") from e

    def to_json(self) -> str:
        def spans(seq):
            return [{"label": s.label, "token_start": s.token_start, "token_end": s.token_end} for s in seq]

        return json.dumps({
            "text": self.text,
            "accepted": spans(self.accepted),
            "rejected": spans(self.rejected),
            "added": spans(self.added),
            "timestamp": self.timestamp,
        }, ensure_ascii=False)


def read_corrections(path: str | os.PathLike) -> list[CorrectionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(CorrectionRecord.from_json(line))
            except (json.JSONDecodeError, ValidationError) as e:
                raise ValidationError(f"line {lineno}: {e}") from e
    return records


def corrections_to_corpus(records: Iterable[CorrectionRecord], model: CrfModel) -> list[Document]:
    """Turn user rectifications into gold-tagged documents for an EWC update."""
    corpus = []
    for n, rec in enumerate(records):
        doc = Document.from_text(rec.text)
        tags = decode(model, doc)
        for sp in rec.rejected:
            for i in range(sp.token_start, sp.token_end):
                tags[i] = "O"
        for sp in (*rec.accepted, *rec.added):
            # a user span replaces any predicted entity it cuts into
            lo, hi = sp.token_start, sp.token_end
            while lo > 0 and tags[lo].startswith("I-"):
                lo -= 1
            while hi < len(tags) and tags[hi].startswith("I-"):
                hi += 1
            for i in range(lo, hi):
                tags[i] = "O"
        for sp in (*rec.accepted, *rec.added):
            for i in range(sp.token_start, sp.token_end):
                tags[i] = ("B-" if i == sp.token_start else "I-") + sp.label
        try:
            corpus.append(doc.with_tags(normalize_iob1(tags)))
        except ValidationError as e:
            raise ValidationError(f"correction record {n} ({rec.text[:40]!r}): {e}") from e
    return corpus
