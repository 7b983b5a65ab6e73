"""Selective span encryption under a per-user 128-bit AES-GCM session key."""

from __future__ import annotations

import base64
import hashlib
import json
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .docmodel import LABELS, EntitySpan
from .errors import ContractError, FormatError, IntegrityError, ValidationError

KEY_SIZE = 16
SALT_SIZE = 16
NONCE_SIZE = 12
TAG_SIZE = 16
MASKED_VERSION = 1
DEFAULT_POLICY = frozenset(LABELS)
REDACTED_LABEL = "###"


def derive_key(password: str, salt: bytes) -> bytes:
    """First 16 bytes of SHA-256(salt || SHA-256(salt || utf8(password)))."""
    if not password:
        raise ContractError("password must be non-empty")
    if len(salt) != SALT_SIZE:
        raise ContractError(f"salt must be {SALT_SIZE} bytes")
    inner = hashlib.sha256(salt + password.encode("utf-8")).digest()
    return hashlib.sha256(salt + inner).digest()[:KEY_SIZE]


def new_salt() -> bytes:
    return os.urandom(SALT_SIZE)


class NonceSource(Protocol):
    def __call__(self) -> bytes: ...


class RandomNonces:
    def __call__(self) -> bytes:
        return os.urandom(NONCE_SIZE)


class CounterNonces:
    """Big-endian counter nonces.  Deterministic; for tests and golden files only.

    Reusing a counter source's sequence under the same key across documents
    reuses GCM nonces, so never use this for real data.
    """

    def __init__(self, start: int = 0):
        self.value = start

    def __call__(self) -> bytes:
        nonce = self.value.to_bytes(NONCE_SIZE, "big")
        self.value += 1
        return nonce


def _check_key(key: bytes) -> AESGCM:
    if len(key) != KEY_SIZE:
        raise ContractError(f"session key must be {KEY_SIZE} bytes, got {len(key)}")
    return AESGCM(key)


def span_aad(user_id: str, index: int) -> bytes:
    return user_id.encode("utf-8") + struct.pack(">I", index)


def placeholder(label: str, index: int) -> str:
    return f"[MASKED:{label}:{index}]"


@dataclass(frozen=True)
class EncryptedSpan:
    index: int
    label: str
    byte_start: int
    byte_end: int
    nonce: bytes
    ciphertext: bytes
    auth_tag: bytes

    def to_dict(self) -> dict:
        b64 = lambda b: base64.b64encode(b).decode("ascii")  # noqa: E731
        return {
            "index": self.index,
            "label": self.label,
            "byte_start": self.byte_start,
            "byte_end": self.byte_end,
            "nonce": b64(self.nonce),
            "ciphertext": b64(self.ciphertext),
            "tag": b64(self.auth_tag),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncryptedSpan":
        unb64 = lambda s: base64.b64decode(s, validate=True)  # noqa: E731
        return cls(int(d["index"]), str(d["label"]), int(d["byte_start"]), int(d["byte_end"]),
                   unb64(d["nonce"]), unb64(d["ciphertext"]), unb64(d["tag"]))


@dataclass(frozen=True)
class MaskedDocument:
    user_id: str
    masked_text: str
    spans: tuple[EncryptedSpan, ...]
    wrapped_key: bytes = b""
    format_version: int = MASKED_VERSION
    redact_label: bool = False

    def to_json(self) -> str:
        doc = {
            "version": self.format_version,
            "user_id": self.user_id,
            "masked_text": self.masked_text,
            "wrapped_key": base64.b64encode(self.wrapped_key).decode("ascii"),
            "spans": [s.to_dict() for s in self.spans],
        }
        if self.redact_label:
            doc["redact_label"] = True
        return json.dumps(doc, ensure_ascii=False, indent=2)

    @classmethod
    def from_json(cls, data: str | bytes) -> "MaskedDocument":
        try:
            doc = json.loads(data)
            if doc["version"] != MASKED_VERSION:
                raise FormatError(f"unsupported masked-document version {doc['version']!r}")
            return cls(
                str(doc["user_id"]),
                str(doc["masked_text"]),
                tuple(EncryptedSpan.from_dict(s) for s in doc["spans"]),
                base64.b64decode(doc["wrapped_key"], validate=True),
                MASKED_VERSION,
                bool(doc.get("redact_label", False)),
            )
        except FormatError:
            raise
        except (ValueError, KeyError, TypeError) as e:
            raise FormatError(f"malformed masked document: {e}") from e

    @property
    def encrypted_bytes(self) -> int:
        return sum(len(s.ciphertext) for s in self.spans)


def _sorted_checked(spans: Iterable[EntitySpan], text_len: int) -> list[EntitySpan]:
    ordered = sorted(spans, key=lambda s: (s.byte_start, s.byte_end))
    prev_end = 0
    for sp in ordered:
        if sp.label not in LABELS:
            raise ValidationError(f"unknown entity label {sp.label!r}")
        if not 0 <= sp.byte_start < sp.byte_end <= text_len:
            raise ValidationError(f"span bytes ({sp.byte_start},{sp.byte_end}) out of range for {text_len}-byte text")
        if sp.byte_start < prev_end:
            raise ValidationError(f"overlapping spans at byte {sp.byte_start}")
        prev_end = sp.byte_end
    return ordered


def mask(
    text: str,
    spans: Sequence[EntitySpan],
    key: bytes,
    nonce_source: NonceSource | None = None,
    user_id: str = "",
    wrapped_key: bytes = b"",
    redact_label: bool = False,
) -> MaskedDocument:
    """Encrypt each span's bytes and replace it with a placeholder; the rest is copied."""
    aead = _check_key(key)
    nonce_source = nonce_source or RandomNonces()
    raw = text.encode("utf-8")
    ordered = _sorted_checked(spans, len(raw))
    pieces: list[bytes] = []
    out: list[EncryptedSpan] = []
    used: set[bytes] = set()
    cursor = 0
    for index, sp in enumerate(ordered):
        nonce = nonce_source()
        if len(nonce) != NONCE_SIZE:
            raise ContractError(f"nonce source produced {len(nonce)} bytes")
        if nonce in used:
            raise IntegrityError("nonce reuse within one document", span_index=index)
        used.add(nonce)
        sealed = aead.encrypt(nonce, raw[sp.byte_start:sp.byte_end], span_aad(user_id, index))
        out.append(EncryptedSpan(index, sp.label, sp.byte_start, sp.byte_end,
                                 nonce, sealed[:-TAG_SIZE], sealed[-TAG_SIZE:]))
        pieces.append(raw[cursor:sp.byte_start])
        pieces.append(placeholder(REDACTED_LABEL if redact_label else sp.label, index).encode("ascii"))
        cursor = sp.byte_end
    pieces.append(raw[cursor:])
    # span boundaries fall on token boundaries, so the pieces stay valid UTF-8
    masked_text = b"".join(pieces).decode("utf-8")
    return MaskedDocument(user_id, masked_text, tuple(out), wrapped_key, MASKED_VERSION, redact_label)


def unmask(masked: MaskedDocument, key: bytes) -> str:
    aead = _check_key(key)
    src = masked.masked_text.encode("utf-8")
    out: list[bytes] = []
    cursor = 0  # into src
    prev_end = 0  # into the original text
    for expected_index, sp in enumerate(masked.spans):
        if sp.index != expected_index:
            raise FormatError(f"span index {sp.index} out of order (expected {expected_index})")
        gap = sp.byte_start - prev_end
        if gap < 0 or sp.byte_end <= sp.byte_start:
            raise FormatError(f"span {sp.index} has invalid offsets")
        label = REDACTED_LABEL if masked.redact_label else sp.label
        marker = placeholder(label, sp.index).encode("ascii")
        at = cursor + gap
        if src[at:at + len(marker)] != marker:
            raise FormatError(f"placeholder for span {sp.index} not found at expected position")
        if len(sp.nonce) != NONCE_SIZE or len(sp.auth_tag) != TAG_SIZE:
            raise IntegrityError(f"span {sp.index}: bad nonce or tag length", span_index=sp.index)
        try:
            plain = aead.decrypt(sp.nonce, sp.ciphertext + sp.auth_tag, span_aad(masked.user_id, sp.index))
        except InvalidTag:
            raise IntegrityError(f"authentication failed for span {sp.index}", span_index=sp.index) from None
        if len(plain) != sp.byte_end - sp.byte_start:
            raise IntegrityError(f"span {sp.index} length does not match its offsets", span_index=sp.index)
        out.append(src[cursor:at])
        out.append(plain)
        cursor = at + len(marker)
        prev_end = sp.byte_end
    out.append(src[cursor:])
    try:
        return b"".join(out).decode("utf-8")
    except UnicodeDecodeError as e:
        raise IntegrityError(f"recovered text is not valid UTF-8: {e}") from e


def encrypt_full(text: str, key: bytes, nonce_source: NonceSource | None = None) -> bytes:
    """Whole-document AES-128-GCM: nonce || ciphertext || tag."""
    aead = _check_key(key)
    nonce = (nonce_source or RandomNonces())()
    return nonce + aead.encrypt(nonce, text.encode("utf-8"), None)


def decrypt_full(blob: bytes, key: bytes) -> str:
    aead = _check_key(key)
    if len(blob) < NONCE_SIZE + TAG_SIZE:
        raise IntegrityError("ciphertext too short")
    try:
        plain = aead.decrypt(blob[:NONCE_SIZE], blob[NONCE_SIZE:], None)
    except InvalidTag:
        raise IntegrityError("authentication failed for full-document ciphertext") from None
    return plain.decode("utf-8")


def select_sensitive(spans: Iterable[EntitySpan], policy: Iterable[str] = DEFAULT_POLICY) -> list[EntitySpan]:
    policy = set(policy)
    return [s for s in spans if s.label in policy]


def parse_policy(value: str) -> frozenset[str]:
    labels = frozenset(p.strip().upper() for p in value.split(",") if p.strip())
    unknown = labels - set(LABELS)
    if unknown:
        raise ContractError(f"unknown policy labels: {', '.join(sorted(unknown))}")
    return labels
