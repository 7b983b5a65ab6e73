"""Synthetic gazetteer corpora and the full-vs-selective encryption benchmark."""

from __future__ import annotations

import csv
import io
import json
import os
import random
import statistics
import struct
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

from . import gazetteers as gz
from ._io import atomic_write
from .docmodel import Document, EntitySpan
from .errors import ContractError
from .selenc import CounterNonces, RandomNonces, derive_key, encrypt_full, mask

WARMUP = 3
# index, byte_start, byte_end (u32 each) + label code (u8) per encrypted span
SPAN_HEADER = struct.Struct(">IIIB")
_LABEL_CODE = {"PER": 0, "ORG": 1, "LOC": 2, "MISC": 3}


def _fill(template: str, rng: random.Random, gaz: gz.Gazetteers) -> tuple[list[str], list[str]]:
    words: list[str] = []
    tags: list[str] = []
    for piece in template.split():
        if piece.startswith("{") and piece.endswith("}"):
            label = piece[1:-1]
            choices = gaz.for_label(label)
            if not choices:
                raise ContractError(f"empty gazetteer for {label}")
            ent = rng.choice(choices).split()
            words += ent
            tags += [f"B-{label}"] + [f"I-{label}"] * (len(ent) - 1)
        else:
            words.append(piece)
            tags.append("O")
    return words, tags


def _entity_only(rng: random.Random, gaz: gz.Gazetteers) -> tuple[list[str], list[str]]:
    label = rng.choice(("PER", "ORG", "LOC", "MISC"))
    return _fill("{%s}" % label, rng, gaz)


def _byte_counts(words: Sequence[str], tags: Sequence[str]) -> tuple[int, int]:
    """(total, entity) bytes of ``words`` joined by single spaces."""
    total = sum(len(w.encode("utf-8")) for w in words) + max(len(words) - 1, 0)
    ent = 0
    run = 0
    for w, t in zip(words, tags):
        if t.startswith("B-"):
            ent += run
            run = len(w.encode("utf-8"))
        elif t.startswith("I-"):
            run += 1 + len(w.encode("utf-8"))
        else:
            ent += run
            run = 0
    return total, ent + run


class SentenceSource:
    """Draws labelled sentences, steering toward a target entity byte fraction."""

    def __init__(self, rng: random.Random, gazetteers: gz.Gazetteers = gz.DEFAULT,
                 entity_fraction: float | None = None, templates: Sequence[str] = gz.TEMPLATES):
        if entity_fraction is not None and not 0.0 <= entity_fraction <= 1.0:
            raise ContractError("entity_fraction must lie in [0, 1]")
        for label in ("PER", "ORG", "LOC", "MISC"):
            if any("{%s}" % label in t for t in templates) and not gazetteers.for_label(label):
                raise ContractError(f"empty gazetteer for {label}")
        self.rng = rng
        self.gaz = gazetteers
        self.target = entity_fraction
        self.templates = tuple(templates)
        self.total = 0
        self.entity = 0

    def __call__(self) -> tuple[list[str], list[str]]:
        if self.target is None:
            words, tags = _fill(self.rng.choice(self.templates), self.rng, self.gaz)
        elif self.target == 0.0 or (self.total and self.entity / self.total >= self.target):
            words, tags = self.rng.choice(gz.FILLER).split(), None
            tags = ["O"] * len(words)
        elif self.target > 0.5:
            words, tags = _entity_only(self.rng, self.gaz)
        else:
            words, tags = _fill(self.rng.choice(self.templates), self.rng, self.gaz)
        total, ent = _byte_counts(words, tags)
        self.total += total + 1
        self.entity += ent
        return words, tags


def generate_corpus(seed: int, sentence_count: int, gazetteers: gz.Gazetteers = gz.DEFAULT,
                    entity_fraction: float | None = None,
                    templates: Sequence[str] = gz.TEMPLATES) -> list[Document]:
    """One tagged Document per generated sentence; gold tags are correct by construction."""
    src = SentenceSource(random.Random(seed), gazetteers, entity_fraction, templates)
    return [Document.from_words(*src()) for _ in range(sentence_count)]


def bundled_corpus(sentence_count: int = 2000, seed: int = 0) -> list[Document]:
    return generate_corpus(seed, sentence_count)


def entity_byte_fraction(docs: Sequence[Document]) -> float:
    total = sum(len(d.raw) for d in docs)
    ent = sum(sp.byte_length for d in docs for sp in d.spans())
    return ent / total if total else 0.0


def shift_tasks(seed: int, train_size: int = 300, test_size: int = 200):
    """Two-task continual-learning setup with disjoint person gazetteers.

    Returns ``(task_a_train, task_a_test, task_b_train, task_b_test)``.  Task B
    also moves to a different register (persons and organizations only), so an
    unconstrained update drifts away from what task A needs.
    """
    a = generate_corpus(seed, train_size + test_size, gz.TASK_A, templates=gz.TEMPLATES)
    b = generate_corpus(seed + 1, train_size + test_size, gz.TASK_B, templates=gz.SHIFT_TEMPLATES)
    return a[:train_size], a[train_size:], b[:train_size], b[train_size:]


# --------------------------------------------------------------------------
# benchmark


@dataclass(frozen=True)
class BenchConfig:
    document_count: int = 30
    document_bytes: int = 4096
    entity_byte_fraction: float = 0.10
    repetitions: int = 5
    seed: int = 0
    nonce_mode: str = "counter"

    def __post_init__(self):
        if self.document_count < 1 or self.document_bytes < 1 or self.repetitions < 1:
            raise ContractError("document_count, document_bytes and repetitions must be positive")
        if not 0.0 <= self.entity_byte_fraction <= 1.0:
            raise ContractError("entity_byte_fraction must lie in [0, 1]")
        if self.nonce_mode not in ("counter", "random"):
            raise ContractError("nonce_mode must be 'counter' or 'random'")


def generate_documents(config: BenchConfig, gazetteers: gz.Gazetteers = gz.DEFAULT) -> list[Document]:
    """Benchmark articles of roughly ``document_bytes`` each (sentences joined by spaces)."""
    rng = random.Random(config.seed)
    docs = []
    for _ in range(config.document_count):
        src = SentenceSource(rng, gazetteers, config.entity_byte_fraction)
        words: list[str] = []
        tags: list[str] = []
        size = -1
        while size < config.document_bytes:
            w, t = src()
            words += w
            tags += t
            size += 1 + sum(len(x.encode("utf-8")) for x in w) + len(w) - 1
        docs.append(Document.from_words(words, tags))
    return docs


@dataclass(frozen=True)
class ArmStats:
    mean_ms: float
    median_ms: float
    bytes_encrypted: int
    output_bytes: float  # memory proxy, mean per document


@dataclass(frozen=True)
class DocStats:
    document_bytes: int
    entity_bytes: int
    spans: int
    full_bytes_encrypted: int
    selective_bytes_encrypted: int
    full_output_bytes: int
    selective_output_bytes: int


@dataclass(frozen=True)
class BenchReport:
    arms: dict[str, ArmStats] = field(default_factory=dict)
    time_ratio: float | None = None
    memory_ratio: float | None = None
    byte_ratio: float | None = None
    tagging_mean_ms: float | None = None
    documents: tuple[DocStats, ...] = ()
    config: BenchConfig | None = None

    def rows(self) -> list[tuple[str, str, str]]:
        out = []
        for arm, s in self.arms.items():
            out += [
                (arm, "mean_ms", _num(s.mean_ms)),
                (arm, "median_ms", _num(s.median_ms)),
                (arm, "bytes_encrypted", _num(s.bytes_encrypted)),
                (arm, "output_bytes", _num(s.output_bytes)),
            ]
        if self.arms:
            for name in ("time_ratio", "memory_ratio", "byte_ratio"):
                value = getattr(self, name)
                if value is not None:
                    out.append(("selective/full", name, _num(value)))
        if self.tagging_mean_ms is not None:
            out.append(("tagging", "mean_ms", _num(self.tagging_mean_ms)))
        return out

    def to_dict(self) -> dict:
        return {
            "arms": {k: asdict(v) for k, v in self.arms.items()},
            "time_ratio": self.time_ratio,
            "memory_ratio": self.memory_ratio,
            "byte_ratio": self.byte_ratio,
            "tagging_mean_ms": self.tagging_mean_ms,
            "config": None if self.config is None else asdict(self.config),
            "documents": [asdict(d) for d in self.documents],
        }


def _num(v) -> str:
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def selective_output_size(masked) -> int:
    """Serialized size of the encrypted span records (the selective memory proxy)."""
    return sum(SPAN_HEADER.size + len(s.nonce) + len(s.ciphertext) + len(s.auth_tag) for s in masked.spans)


def _timed(fn, *args):
    t0 = time.perf_counter()
    result = fn(*args)
    return result, (time.perf_counter() - t0) * 1e3


def _nonces(mode: str):
    return CounterNonces() if mode == "counter" else RandomNonces()


def run_bench(config: BenchConfig = BenchConfig(), model=None,
              gazetteers: gz.Gazetteers = gz.DEFAULT) -> BenchReport:
    """Time whole-document vs. span-only AES-GCM over generated articles.

    Spans come from the generator's gold tags.  When ``model`` is given, tagging
    time is measured on the same documents and reported separately.
    """
    docs = generate_documents(config, gazetteers)
    key = derive_key(f"bench-{config.seed}", config.seed.to_bytes(16, "big", signed=False))
    spans = [d.spans() for d in docs]

    for _ in range(WARMUP):
        encrypt_full(docs[0].text, key, _nonces(config.nonce_mode))
        mask(docs[0].text, spans[0], key, _nonces(config.nonce_mode), "bench")

    full_times: list[float] = []
    sel_times: list[float] = []
    per_doc: list[DocStats] = []
    for doc, doc_spans in zip(docs, spans):
        ft, st = [], []
        for _ in range(config.repetitions):
            blob, t = _timed(encrypt_full, doc.text, key, _nonces(config.nonce_mode))
            ft.append(t)
            masked, t = _timed(mask, doc.text, doc_spans, key, _nonces(config.nonce_mode), "bench")
            st.append(t)
        full_times.append(statistics.fmean(ft))
        sel_times.append(statistics.fmean(st))
        per_doc.append(DocStats(
            document_bytes=len(doc.raw),
            entity_bytes=sum(sp.byte_length for sp in doc_spans),
            spans=len(doc_spans),
            full_bytes_encrypted=len(blob) - 28,
            selective_bytes_encrypted=masked.encrypted_bytes,
            full_output_bytes=len(blob),
            selective_output_bytes=selective_output_size(masked),
        ))

    tagging = None
    if model is not None:
        from .tagger import decode

        tagging = statistics.fmean(_timed(decode, model, d)[1] for d in docs)

    n = len(per_doc)
    full = ArmStats(statistics.fmean(full_times), statistics.median(full_times),
                    sum(d.full_bytes_encrypted for d in per_doc),
                    sum(d.full_output_bytes for d in per_doc) / n)
    sel = ArmStats(statistics.fmean(sel_times), statistics.median(sel_times),
                   sum(d.selective_bytes_encrypted for d in per_doc),
                   sum(d.selective_output_bytes for d in per_doc) / n)
    return BenchReport(
        arms={"full": full, "selective": sel},
        time_ratio=sel.mean_ms / full.mean_ms if full.mean_ms else None,
        memory_ratio=sel.output_bytes / full.output_bytes if full.output_bytes else None,
        byte_ratio=sel.bytes_encrypted / full.bytes_encrypted if full.bytes_encrypted else None,
        tagging_mean_ms=tagging,
        documents=tuple(per_doc),
        config=config,
    )


def report_to_csv(report: BenchReport | None, path: str | os.PathLike | None = None,
                  include_timing: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("arm", "metric", "value"))
    for row in (report.rows() if report is not None else []):
        if include_timing or not (row[1].endswith("_ms") or row[1] == "time_ratio"):
            writer.writerow(row)
    text = buf.getvalue()
    if path is not None:
        atomic_write(path, text.encode("utf-8"))
    return text


def report_to_json(report: BenchReport, path: str | os.PathLike | None = None) -> str:
    text = json.dumps(report.to_dict(), indent=2)
    if path is not None:
        atomic_write(path, text.encode("utf-8"))
    return text
