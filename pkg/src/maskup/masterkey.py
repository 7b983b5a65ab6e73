"""Authority key escrow: RSA-2048 OAEP wrapping of session keys and the keystore file."""

from __future__ import annotations

import base64
import hashlib
import json
import os
import random
import threading
from dataclasses import dataclass
from typing import Any

import gmpy2
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from ._io import atomic_write
from .errors import ContractError, KeystoreError, KeystoreIntegrityError, NotFoundError, UnwrapError
from .selenc import KEY_SIZE, SALT_SIZE

RSA_BITS = 2048
PUBLIC_EXPONENT = 65537
WRAPPED_SIZE = RSA_BITS // 8
KEYSTORE_VERSION = 1


@dataclass(frozen=True)
class AuthorityKeypair:
    public_key: rsa.RSAPublicKey
    private_key: rsa.RSAPrivateKey | None
    key_id: str

    def public_pem(self) -> bytes:
        return public_key_pem(self.public_key)

    def private_pem(self) -> bytes:
        if self.private_key is None:
            raise ContractError("keypair has no private half")
        return self.private_key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )


def public_key_pem(public_key: rsa.RSAPublicKey) -> bytes:
    return public_key.public_bytes(serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo)


def key_id_of(public_key: rsa.RSAPublicKey) -> str:
    der = public_key.public_bytes(serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo)
    return hashlib.sha256(der).digest()[:8].hex()


def _seeded_prime(rng: random.Random, bits: int) -> int:
    while True:
        # top two bits set so p*q has exactly 2*bits bits
        cand = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        p = int(gmpy2.next_prime(cand))
        if p.bit_length() == bits and gmpy2.gcd(PUBLIC_EXPONENT, p - 1) == 1:
            return p


def _keypair_from_seed(seed: int) -> rsa.RSAPrivateKey:
    rng = random.Random(seed)
    half = RSA_BITS // 2
    while True:
        p = _seeded_prime(rng, half)
        q = _seeded_prime(rng, half)
        if p != q:
            break
    if p < q:
        p, q = q, p
    phi = (p - 1) * (q - 1)
    d = pow(PUBLIC_EXPONENT, -1, phi)
    pub = rsa.RSAPublicNumbers(PUBLIC_EXPONENT, p * q)
    priv = rsa.RSAPrivateNumbers(
        p, q, d,
        rsa.rsa_crt_dmp1(d, p),
        rsa.rsa_crt_dmq1(d, q),
        rsa.rsa_crt_iqmp(p, q),
        pub,
    )
    return priv.private_key()


def authority_keygen(seed: int | None = None) -> AuthorityKeypair:
    """Generate an RSA-2048 keypair.

    ``seed`` selects a reproducible test-mode key built from a seeded PRNG.
    Such keys are predictable and must never guard real data.
    """
    if seed is None:
        private = rsa.generate_private_key(public_exponent=PUBLIC_EXPONENT, key_size=RSA_BITS)
    else:
        private = _keypair_from_seed(seed)
    public = private.public_key()
    return AuthorityKeypair(public, private, key_id_of(public))


def load_public_key(path: str | os.PathLike) -> AuthorityKeypair:
    with open(path, "rb") as fh:
        key = serialization.load_pem_public_key(fh.read())
    if not isinstance(key, rsa.RSAPublicKey) or key.key_size != RSA_BITS:
        raise ContractError(f"{path}: expected an RSA-{RSA_BITS} public key")
    return AuthorityKeypair(key, None, key_id_of(key))


def load_private_key(path: str | os.PathLike) -> AuthorityKeypair:
    with open(path, "rb") as fh:
        key = serialization.load_pem_private_key(fh.read(), password=None)
    if not isinstance(key, rsa.RSAPrivateKey) or key.key_size != RSA_BITS:
        raise ContractError(f"{path}: expected an RSA-{RSA_BITS} private key")
    return AuthorityKeypair(key.public_key(), key, key_id_of(key.public_key()))


def save_keypair(pair: AuthorityKeypair, public_path, private_path=None) -> None:
    atomic_write(public_path, pair.public_pem())
    if private_path is not None:
        atomic_write(private_path, pair.private_pem())
        os.chmod(private_path, 0o600)


def _oaep(user_id: str) -> padding.OAEP:
    return padding.OAEP(
        mgf=padding.MGF1(algorithm=hashes.SHA256()),
        algorithm=hashes.SHA256(),
        label=user_id.encode("utf-8"),
    )


def wrap_session_key(session_key: bytes, public_key: rsa.RSAPublicKey, user_id: str) -> bytes:
    if len(session_key) != KEY_SIZE:
        raise ContractError(f"session key must be {KEY_SIZE} bytes, got {len(session_key)}")
    if public_key.key_size != RSA_BITS:
        raise ContractError(f"authority key must be RSA-{RSA_BITS}, got {public_key.key_size} bits")
    return public_key.encrypt(session_key, _oaep(user_id))


def authority_unwrap(wrapped: bytes, private_key: rsa.RSAPrivateKey, user_id: str) -> bytes:
    if len(wrapped) != WRAPPED_SIZE:
        raise UnwrapError(f"wrapped key must be {WRAPPED_SIZE} bytes, got {len(wrapped)}")
    try:
        key = private_key.decrypt(wrapped, _oaep(user_id))
    except ValueError:
        raise UnwrapError("session key unwrap failed (wrong key, wrong user, or tampered blob)") from None
    if len(key) != KEY_SIZE:
        raise UnwrapError("unwrapped key has the wrong length")
    return key


# --------------------------------------------------------------------------
# keystore


@dataclass(frozen=True)
class KeyRecord:
    salt: bytes
    wrapped_key: bytes
    authority_key_id: str
    verifier: bytes = b""


def _b64(b: bytes) -> str:
    return base64.b64encode(b).decode("ascii")


class Keystore:
    """Map user_id -> (salt, wrapped session key), persisted as one JSON file.

    Holds no plaintext keys or passwords.  ``flush`` replaces the file
    atomically; concurrent readers always see a complete version.
    """

    def __init__(self, path: str | os.PathLike | None = None, authority_key_id: str | None = None):
        self.path = None if path is None else os.fspath(path)
        self.authority_key_id = authority_key_id
        self._users: dict[str, KeyRecord] = {}
        self._lock = threading.Lock()

    @classmethod
    def open(cls, path: str | os.PathLike) -> "Keystore":
        store = cls(path)
        if os.path.exists(path):
            with open(path, "rb") as fh:
                store._load(fh.read())
        return store

    def _load(self, data: bytes) -> None:
        try:
            doc = json.loads(data.decode("utf-8"))
            if doc["version"] != KEYSTORE_VERSION:
                raise KeystoreIntegrityError(f"unsupported keystore version {doc['version']!r}")
            self.authority_key_id = doc["authority_key_id"]
            for uid, rec in doc["users"].items():
                salt = base64.b64decode(rec["salt"], validate=True)
                wrapped = base64.b64decode(rec["wrapped_key"], validate=True)
                verifier = base64.b64decode(rec.get("verifier", ""), validate=True)
                if len(salt) != SALT_SIZE:
                    raise KeystoreIntegrityError(f"user {uid!r}: bad salt length")
                self._users[uid] = KeyRecord(salt, wrapped, self.authority_key_id, verifier)
        except KeystoreIntegrityError:
            raise
        except (UnicodeDecodeError, ValueError, KeyError, TypeError, AttributeError) as e:
            raise KeystoreIntegrityError(f"corrupt keystore {self.path}: {e}") from e

    def put(self, user_id: str, salt: bytes, wrapped_key: bytes, key_id: str,
            verifier: bytes = b"", overwrite: bool = False) -> None:
        if len(salt) != SALT_SIZE:
            raise ContractError(f"salt must be {SALT_SIZE} bytes")
        with self._lock:
            if self.authority_key_id is None:
                self.authority_key_id = key_id
            elif key_id != self.authority_key_id:
                raise KeystoreError(f"store is bound to authority {self.authority_key_id}, got {key_id}")
            if user_id in self._users and not overwrite:
                raise KeystoreError(f"user {user_id!r} already present")
            self._users[user_id] = KeyRecord(bytes(salt), bytes(wrapped_key), key_id, bytes(verifier))

    def get(self, user_id: str) -> KeyRecord:
        try:
            return self._users[user_id]
        except KeyError:
            raise NotFoundError(f"unknown user {user_id!r}") from None

    def __contains__(self, user_id: str) -> bool:
        return user_id in self._users

    def __len__(self) -> int:
        return len(self._users)

    def users(self) -> list[str]:
        return sorted(self._users)

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": KEYSTORE_VERSION,
            "authority_key_id": self.authority_key_id,
            "users": {
                uid: {"salt": _b64(r.salt), "wrapped_key": _b64(r.wrapped_key), "verifier": _b64(r.verifier)}
                for uid, r in sorted(self._users.items())
            },
        }

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), indent=2).encode("utf-8")

    def flush(self) -> None:
        if self.path is None:
            raise ContractError("in-memory keystore has no path")
        with self._lock:
            atomic_write(self.path, self.to_bytes())


def keystore_put(store: Keystore, user_id: str, salt: bytes, wrapped_key: bytes, key_id: str,
                 overwrite: bool = False) -> None:
    store.put(user_id, salt, wrapped_key, key_id, overwrite=overwrite)


def keystore_get(store: Keystore, user_id: str) -> KeyRecord:
    return store.get(user_id)
