"""``maskup`` command line: train, tag, mask, unmask, escrow and benchmark.

Exit codes: 0 success, 2 usage/config, 3 crypto/integrity, 4 model/data.
"""

from __future__ import annotations

import argparse
import getpass
import json
import logging
import os
import sys
from dataclasses import dataclass

from . import bench, continual, masterkey, selenc, tagger
from ._io import atomic_write
from .docmodel import Document, read_conll, write_conll
from .errors import (
    AuthError,
    ContractError,
    CryptoError,
    KeystoreError,
    KeystoreIntegrityError,
    MaskupError,
    ModelFormatError,
    NotFoundError,
    ValidationError,
)

log = logging.getLogger("maskup")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CRYPTO = 3
EXIT_DATA = 4

PASSWORD_ENV = "MASKUP_PASSWORD"
VERIFIER_PLAINTEXT = b"maskup-password-verifier-v1"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class CliConfig:
    model: str | None = None
    keystore: str | None = None
    authority_pub: str | None = None
    authority_priv: str | None = None
    policy: frozenset[str] = selenc.DEFAULT_POLICY
    ewc_lambda: float = 100.0
    seed: int = 0
    nonce_mode: str = "random"
    out: str | None = None

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "CliConfig":
        policy = selenc.DEFAULT_POLICY
        if getattr(args, "policy", None) is not None:
            try:
                policy = selenc.parse_policy(args.policy)
            except ContractError as e:
                raise CliError(str(e), EXIT_USAGE) from e
        return cls(
            model=getattr(args, "model", None),
            keystore=getattr(args, "keystore", None),
            authority_pub=getattr(args, "authority_pub", None),
            authority_priv=getattr(args, "authority_priv", None),
            policy=policy,
            ewc_lambda=getattr(args, "ewc_lambda", 100.0),
            seed=getattr(args, "seed", 0),
            nonce_mode=getattr(args, "nonce_mode", "random"),
            out=getattr(args, "out", None),
        )

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            flags = ", ".join("--" + n.replace("_", "-") for n in missing)
            raise CliError(f"missing required option(s): {flags}", EXIT_USAGE)


def _require_file(path: str, what: str) -> None:
    if not os.path.isfile(path):
        raise CliError(f"{what} not found: {path}", EXIT_USAGE)


def _password() -> str:
    pw = os.environ.get(PASSWORD_ENV)
    if pw is None:
        if not sys.stdin.isatty():
            raise CliError(f"set {PASSWORD_ENV} or run interactively", EXIT_USAGE)
        pw = getpass.getpass("password: ")
    if not pw:
        raise CliError("empty password", EXIT_USAGE)
    return pw


def _nonce_source(mode: str):
    if mode == "counter":
        log.warning("counter nonces are deterministic; use only for tests")
        return selenc.CounterNonces()
    return selenc.RandomNonces()


def _load_model(path: str) -> tagger.CrfModel:
    _require_file(path, "model")
    return tagger.load_model(path)


def _load_corpus(path: str) -> list[Document]:
    _require_file(path, "corpus")
    return read_conll(path)


# --------------------------------------------------------------------------
# commands


def cmd_corpus(args) -> int:
    docs = bench.generate_corpus(args.seed, args.sentences, entity_fraction=args.entity_fraction)
    if not args.out:
        raise CliError("missing required option(s): --out", EXIT_USAGE)
    tmp = args.out + ".partial"
    write_conll(docs, tmp)
    os.replace(tmp, args.out)
    print(f"wrote {len(docs)} sentences to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = CliConfig.from_args(args)
    cfg.require("out")
    corpus = _load_corpus(args.corpus)
    dev = _load_corpus(args.dev) if args.dev else None
    config = tagger.TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate, l2=args.l2, seed=cfg.seed)
    model = tagger.train(corpus, config)
    tagger.save_model(model, cfg.out)
    if args.ewc_out:
        continual.save_state(continual.estimate_fisher(model, corpus, args.task_id), args.ewc_out)
    print(f"trained on {len(corpus)} sentences, {len(model.vocabulary)} features -> {cfg.out}")
    if dev is not None:
        print(tagger.evaluate(model, dev).format())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = CliConfig.from_args(args)
    cfg.require("model")
    report = tagger.evaluate(_load_model(cfg.model), _load_corpus(args.corpus))
    print(json.dumps(report.to_dict(), indent=2) if args.json else report.format())
    return EXIT_OK


def cmd_tag(args) -> int:
    cfg = CliConfig.from_args(args)
    cfg.require("model")
    model = _load_model(cfg.model)
    _require_file(args.input, "input")
    with open(args.input, "rb") as fh:
        doc = Document.from_text(fh.read())
    doc = tagger.tag_document(model, doc)
    for tok, tag in zip(doc.tokens, doc.tags):
        print(f"{tok.text}\t{tag}\t{tok.start}\t{tok.end}")
    return EXIT_OK


def _session_key(store: masterkey.Keystore, user: str, password: str, authority) -> tuple[bytes, bytes]:
    """Session key and wrapped key for ``user``, enrolling them on first use."""
    if user in store:
        rec = store.get(user)
        if rec.authority_key_id != authority.key_id:
            raise CliError(f"keystore is bound to authority {rec.authority_key_id}, "
                           f"--authority-pub is {authority.key_id}", EXIT_USAGE)
        key = selenc.derive_key(password, rec.salt)
        _check_verifier(rec, key, user)
        return key, rec.wrapped_key
    salt = selenc.new_salt()
    key = selenc.derive_key(password, salt)
    wrapped = masterkey.wrap_session_key(key, authority.public_key, user)
    verifier = selenc.encrypt_full(VERIFIER_PLAINTEXT.decode("ascii"), key)
    store.put(user, salt, wrapped, authority.key_id, verifier=verifier)
    store.flush()
    return key, wrapped


def _check_verifier(rec: masterkey.KeyRecord, key: bytes, user: str) -> None:
    if not rec.verifier:
        return
    try:
        ok = selenc.decrypt_full(rec.verifier, key).encode("ascii") == VERIFIER_PLAINTEXT
    except CryptoError:
        ok = False
    if not ok:
        raise AuthError(f"wrong password for user {user!r}")


def cmd_mask(args) -> int:
    cfg = CliConfig.from_args(args)
    cfg.require("model", "keystore", "authority_pub", "out")
    _require_file(args.input, "input")
    _require_file(cfg.authority_pub, "authority public key")
    password = _password()
    model = _load_model(cfg.model)
    authority = masterkey.load_public_key(cfg.authority_pub)
    with open(args.input, "rb") as fh:
        raw = fh.read()
    try:
        doc = Document.from_text(raw)
    except UnicodeDecodeError as e:
        raise CliError(f"input is not valid UTF-8: {e}", EXIT_DATA) from e
    spans = selenc.select_sensitive(tagger.tag_document(model, doc).spans(), cfg.policy)
    store = masterkey.Keystore.open(cfg.keystore)
    key, wrapped = _session_key(store, args.user, password, authority)
    masked = selenc.mask(doc.text, spans, key, _nonce_source(cfg.nonce_mode), args.user, wrapped,
                         redact_label=args.redact_label)
    atomic_write(cfg.out, masked.to_json().encode("utf-8"))
    print(f"masked {len(masked.spans)} span(s), {masked.encrypted_bytes} bytes -> {cfg.out}", file=sys.stderr)
    return EXIT_OK


def _read_masked(path: str) -> selenc.MaskedDocument:
    _require_file(path, "masked document")
    with open(path, "rb") as fh:
        return selenc.MaskedDocument.from_json(fh.read())


def _emit(text: str) -> None:
    sys.stdout.buffer.write(text.encode("utf-8"))
    sys.stdout.flush()


def cmd_unmask(args) -> int:
    cfg = CliConfig.from_args(args)
    cfg.require("keystore")
    masked = _read_masked(args.masked)
    password = _password()
    _require_file(cfg.keystore, "keystore")
    rec = masterkey.Keystore.open(cfg.keystore).get(masked.user_id)
    key = selenc.derive_key(password, rec.salt)
    _check_verifier(rec, key, masked.user_id)
    _emit(selenc.unmask(masked, key))
    return EXIT_OK


def cmd_master_unmask(args) -> int:
    cfg = CliConfig.from_args(args)
    cfg.require("authority_priv")
    masked = _read_masked(args.masked)
    _require_file(cfg.authority_priv, "authority private key")
    authority = masterkey.load_private_key(cfg.authority_priv)
    key = masterkey.authority_unwrap(masked.wrapped_key, authority.private_key, masked.user_id)
    _emit(selenc.unmask(masked, key))
    return EXIT_OK


def cmd_keygen(args) -> int:
    cfg = CliConfig.from_args(args)
    cfg.require("authority_pub", "authority_priv")
    pair = masterkey.authority_keygen(args.key_seed)
    masterkey.save_keypair(pair, cfg.authority_pub, cfg.authority_priv)
    print(pair.key_id)
    return EXIT_OK


def cmd_ewc_update(args) -> int:
    cfg = CliConfig.from_args(args)
    cfg.require("model", "out")
    if bool(args.corrections) == bool(args.corpus):
        raise CliError("give exactly one of --corrections or --corpus", EXIT_USAGE)
    model = _load_model(cfg.model)
    _require_file(args.ewc_state, "EWC state")
    state = continual.load_state(args.ewc_state)
    if len(state) != model.num_params:
        raise CliError(f"EWC state has {len(state)} parameters, model has {model.num_params}", EXIT_USAGE)
    if args.corrections:
        _require_file(args.corrections, "corrections")
        corpus = continual.corrections_to_corpus(continual.read_corrections(args.corrections), model)
    else:
        corpus = _load_corpus(args.corpus)
    if not corpus:
        print("no-op: no corrections or sentences to learn from")
        return EXIT_OK
    if cfg.ewc_lambda == 0:
        log.warning("--lambda 0: consolidation is disabled, old tasks may be forgotten")
    config = tagger.TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate, l2=args.l2,
                                seed=cfg.seed, ewc_lambda=cfg.ewc_lambda)
    new_model, new_state = continual.continual_update(model, state, corpus, config, args.task_id)
    state_out = args.state_out or cfg.out + ".ewc.json"
    # stage both files before renaming either
    model_bytes = tagger.model_to_bytes(new_model)
    state_bytes = continual.state_to_bytes(new_state)
    tmp_model, tmp_state = cfg.out + ".partial", state_out + ".partial"
    try:
        atomic_write(tmp_model, model_bytes)
        atomic_write(tmp_state, state_bytes)
        os.replace(tmp_model, cfg.out)
        os.replace(tmp_state, state_out)
    finally:
        for p in (tmp_model, tmp_state):
            if os.path.exists(p):
                os.unlink(p)
    print(f"updated on {len(corpus)} sentence(s): {cfg.out}, {state_out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = CliConfig.from_args(args)
    try:
        config = bench.BenchConfig(args.documents, args.document_bytes, args.entity_fraction,
                                   args.repetitions, cfg.seed, args.nonce_mode or "counter")
    except ContractError as e:
        raise CliError(str(e), EXIT_USAGE) from e
    model = _load_model(cfg.model) if cfg.model else None
    report = bench.run_bench(config, model)
    if cfg.out:
        bench.report_to_csv(report, cfg.out)
    if args.json_out:
        bench.report_to_json(report, args.json_out)
    full, sel = report.arms["full"], report.arms["selective"]
    print(f"full:      {full.mean_ms:.4f} ms/doc, {full.output_bytes:.1f} bytes/doc")
    print(f"selective: {sel.mean_ms:.4f} ms/doc, {sel.output_bytes:.1f} bytes/doc")
    print(f"selective/full time ratio: {report.time_ratio:.4f}")
    print(f"selective/full memory ratio: {report.memory_ratio:.4f}")
    print(f"selective/full byte ratio: {report.byte_ratio:.4f}")
    if report.tagging_mean_ms is not None:
        print(f"tagging: {report.tagging_mean_ms:.4f} ms/doc (excluded from the ratios)")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maskup", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *flags):
        if "model" in flags:
            sp.add_argument("--model")
        if "keystore" in flags:
            sp.add_argument("--keystore")
        if "pub" in flags:
            sp.add_argument("--authority-pub")
        if "priv" in flags:
            sp.add_argument("--authority-priv")
        if "seed" in flags:
            sp.add_argument("--seed", type=int, default=0)
        if "out" in flags:
            sp.add_argument("--out")
        if "train" in flags:
            sp.add_argument("--epochs", type=int, default=10)
            sp.add_argument("--learning-rate", type=float, default=0.1)
            sp.add_argument("--l2", type=float, default=1e-4)
            sp.add_argument("--task-id", default="task")

    sp = sub.add_parser("corpus", help="write the synthetic gazetteer corpus in CoNLL format")
    common(sp, "seed", "out")
    sp.add_argument("--sentences", type=int, default=2000)
    sp.add_argument("--entity-fraction", type=float, default=None)
    sp.set_defaults(func=cmd_corpus)

    sp = sub.add_parser("train", help="train a CRF tagger on a CoNLL corpus")
    sp.add_argument("corpus")
    common(sp, "seed", "out", "train")
    sp.add_argument("--dev", help="held-out CoNLL file to evaluate after training")
    sp.add_argument("--ewc-out", help="also write the EWC state (Fisher estimate) for this corpus")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="per-tag precision/recall/F1 on a CoNLL corpus")
    sp.add_argument("corpus")
    common(sp, "model")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("tag", help="print token tags for a text file")
    sp.add_argument("input")
    common(sp, "model")
    sp.set_defaults(func=cmd_tag)

    sp = sub.add_parser("mask", help="encrypt the sensitive spans of a text file")
    sp.add_argument("input")
    sp.add_argument("--user", required=True)
    common(sp, "model", "keystore", "pub", "out")
    sp.add_argument("--policy", default="PER,ORG,LOC,MISC")
    sp.add_argument("--nonce-mode", choices=("random", "counter"), default="random")
    sp.add_argument("--redact-label", action="store_true", help="hide entity classes in placeholders")
    sp.set_defaults(func=cmd_mask)

    sp = sub.add_parser("unmask", help="recover a masked document with the user password")
    sp.add_argument("masked")
    common(sp, "keystore")
    sp.set_defaults(func=cmd_unmask)

    sp = sub.add_parser("master-unmask", help="recover a masked document with the authority private key")
    sp.add_argument("masked")
    common(sp, "priv")
    sp.set_defaults(func=cmd_master_unmask)

    sp = sub.add_parser("keygen", help="generate the authority RSA keypair")
    common(sp, "pub", "priv")
    sp.add_argument("--key-seed", type=int, default=None, help="reproducible test-mode key (insecure)")
    sp.set_defaults(func=cmd_keygen)

    sp = sub.add_parser("ewc-update", help="continual update from corrections or a corpus")
    common(sp, "model", "seed", "out", "train")
    sp.add_argument("--ewc-state", required=True)
    sp.add_argument("--state-out")
    sp.add_argument("--corrections")
    sp.add_argument("--corpus")
    sp.add_argument("--lambda", dest="ewc_lambda", type=float, default=100.0)
    sp.set_defaults(func=cmd_ewc_update)

    sp = sub.add_parser("bench", help="full vs. selective encryption benchmark")
    common(sp, "model", "seed", "out")
    sp.add_argument("--documents", type=int, default=30)
    sp.add_argument("--document-bytes", type=int, default=4096)
    sp.add_argument("--entity-fraction", type=float, default=0.10)
    sp.add_argument("--repetitions", type=int, default=5)
    sp.add_argument("--nonce-mode", choices=("random", "counter"), default="counter")
    sp.add_argument("--json-out")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (CryptoError, KeystoreIntegrityError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CRYPTO
    except NotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CRYPTO
    except (ContractError, KeystoreError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelFormatError, ValidationError, MaskupError, UnicodeDecodeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
