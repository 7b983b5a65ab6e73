import base64
import json
import logging

import pytest

from maskup import continual, tagger
from maskup.cli import main
from maskup.continual import CorrectionRecord
from maskup.docmodel import Document, make_span


@pytest.fixture(scope="module")
def env(tmp_path_factory, small_model, small_corpus):
    d = tmp_path_factory.mktemp("cli")
    tagger.save_model(small_model, d / "model.json")
    continual.save_state(continual.estimate_fisher(small_model, small_corpus[:50], "A"), d / "model.ewc.json")
    assert main(["keygen", "--key-seed", "5", "--authority-pub", str(d / "a.pub"),
                 "--authority-priv", str(d / "a.key")]) == 0
    return d


@pytest.fixture
def password(monkeypatch):
    monkeypatch.setenv("MASKUP_PASSWORD", "s3cret")
    return "s3cret"


def run_mask(env, tmp_path, text, user="alice", extra=()):
    src = tmp_path / f"{user}.txt"
    src.write_bytes(text.encode("utf-8"))
    out = tmp_path / f"{user}.masked.json"
    code = main(["mask", str(src), "--user", user, "--model", str(env / "model.json"),
                 "--keystore", str(tmp_path / "ks.json"), "--authority-pub", str(env / "a.pub"),
                 "--out", str(out), *extra])
    return code, out


class TestCorpusTrain:
    def test_corpus_and_train_deterministic(self, tmp_path, capsys):
        corpus = tmp_path / "c.conll"
        assert main(["corpus", "--sentences", "60", "--seed", "3", "--out", str(corpus)]) == 0
        for name in ("m1.json", "m2.json"):
            assert main(["train", str(corpus), "--epochs", "2", "--seed", "4", "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "m1.json").read_bytes() == (tmp_path / "m2.json").read_bytes()

    def test_train_with_dev_and_ewc(self, tmp_path, capsys):
        corpus = tmp_path / "c.conll"
        main(["corpus", "--sentences", "40", "--out", str(corpus)])
        code = main(["train", str(corpus), "--epochs", "1", "--dev", str(corpus), "--ewc-out",
                     str(tmp_path / "s.json"), "--out", str(tmp_path / "m.json")])
        assert code == 0
        assert "micro" in capsys.readouterr().out
        assert len(continual.load_state(tmp_path / "s.json")) == tagger.load_model(tmp_path / "m.json").num_params

    def test_missing_corpus(self, tmp_path, capsys):
        assert main(["train", str(tmp_path / "nope.conll"), "--out", str(tmp_path / "m.json")]) == 2
        assert "corpus not found" in capsys.readouterr().err
        assert not (tmp_path / "m.json").exists()

    def test_missing_out(self, tmp_path):
        assert main(["corpus", "--sentences", "2"]) == 2

    def test_evaluate_json(self, env, tmp_path, capsys):
        corpus = tmp_path / "c.conll"
        main(["corpus", "--sentences", "30", "--seed", "77", "--out", str(corpus)])
        capsys.readouterr()
        assert main(["evaluate", str(corpus), "--model", str(env / "model.json"), "--json"]) == 0
        assert json.loads(capsys.readouterr().out)["micro_f1"] > 0.8

    def test_tag(self, env, tmp_path, capsys):
        p = tmp_path / "t.txt"
        p.write_text("Kofi went home")
        assert main(["tag", str(p), "--model", str(env / "model.json")]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert [ln.split("\t")[0] for ln in lines] == ["Kofi", "went", "home"]

    def test_corrupt_model(self, tmp_path):
        (tmp_path / "m.json").write_text("{}")
        (tmp_path / "t.txt").write_text("x")
        assert main(["tag", str(tmp_path / "t.txt"), "--model", str(tmp_path / "m.json")]) == 4


class TestMaskFlow:
    def test_round_trip_both_paths(self, env, tmp_path, password, capsysbinary):
        text = "Dr. Zoë Ångström visited Λονδίνο 🚀 with Kofi Mensah of Northwind Labs.\n\nAnother line."
        code, out = run_mask(env, tmp_path, text)
        assert code == 0
        capsysbinary.readouterr()
        assert main(["unmask", str(out), "--keystore", str(tmp_path / "ks.json")]) == 0
        assert capsysbinary.readouterr().out.decode("utf-8") == text
        assert main(["master-unmask", str(out), "--authority-priv", str(env / "a.key")]) == 0
        assert capsysbinary.readouterr().out.decode("utf-8") == text

    def test_empty_file(self, env, tmp_path, password, capsysbinary):
        code, out = run_mask(env, tmp_path, "")
        assert code == 0
        assert json.loads(out.read_text())["spans"] == []
        capsysbinary.readouterr()
        assert main(["unmask", str(out), "--keystore", str(tmp_path / "ks.json")]) == 0
        assert capsysbinary.readouterr().out == b""

    def test_salt_reused_per_user(self, env, tmp_path, password):
        run_mask(env, tmp_path, "Kofi Mensah")
        salt = json.loads((tmp_path / "ks.json").read_text())["users"]["alice"]["salt"]
        run_mask(env, tmp_path, "Ana Lima")
        assert json.loads((tmp_path / "ks.json").read_text())["users"]["alice"]["salt"] == salt

    def test_wrong_password(self, env, tmp_path, password, monkeypatch, capsys):
        _, out = run_mask(env, tmp_path, "Kofi Mensah")
        monkeypatch.setenv("MASKUP_PASSWORD", "wrong")
        assert main(["unmask", str(out), "--keystore", str(tmp_path / "ks.json")]) == 3
        assert "wrong password" in capsys.readouterr().err
        code, _ = run_mask(env, tmp_path, "Ana Lima")
        assert code == 3

    def test_tampered_document(self, env, tmp_path, password):
        _, out = run_mask(env, tmp_path, "Kofi Mensah met Ana Lima in Accra")
        doc = json.loads(out.read_text())
        assert doc["spans"]
        ct = bytearray(base64.b64decode(doc["spans"][0]["ciphertext"]))
        ct[0] ^= 1
        doc["spans"][0]["ciphertext"] = base64.b64encode(bytes(ct)).decode()
        out.write_text(json.dumps(doc))
        assert main(["unmask", str(out), "--keystore", str(tmp_path / "ks.json")]) == 3
        assert main(["master-unmask", str(out), "--authority-priv", str(env / "a.key")]) == 3

    def test_wrong_authority_key(self, env, tmp_path, password):
        _, out = run_mask(env, tmp_path, "Kofi Mensah")
        main(["keygen", "--key-seed", "6", "--authority-pub", str(tmp_path / "b.pub"),
              "--authority-priv", str(tmp_path / "b.key")])
        assert main(["master-unmask", str(out), "--authority-priv", str(tmp_path / "b.key")]) == 3

    def test_policy_and_redaction(self, env, tmp_path, password):
        _, out = run_mask(env, tmp_path, "Aaliyah Abernathy moved to San Francisco last year .",
                          extra=("--policy", "LOC", "--redact-label"))
        doc = json.loads(out.read_text())
        assert doc["masked_text"] == "Aaliyah Abernathy moved to [MASKED:###:0] last year ."

    def test_bad_policy(self, env, tmp_path, password):
        code, _ = run_mask(env, tmp_path, "x", extra=("--policy", "EMAIL"))
        assert code == 2

    def test_no_password_non_tty(self, env, tmp_path, monkeypatch):
        monkeypatch.delenv("MASKUP_PASSWORD", raising=False)
        monkeypatch.setattr("sys.stdin", open("/dev/null"))
        code, _ = run_mask(env, tmp_path, "Kofi")
        assert code == 2

    def test_unknown_user_in_keystore(self, env, tmp_path, password):
        _, out = run_mask(env, tmp_path, "Kofi")
        doc = json.loads(out.read_text())
        doc["user_id"] = "ghost"
        out.write_text(json.dumps(doc))
        assert main(["unmask", str(out), "--keystore", str(tmp_path / "ks.json")]) == 3


class TestEwcUpdate:
    def args(self, env, tmp_path, *extra):
        return ["ewc-update", "--model", str(env / "model.json"), "--ewc-state", str(env / "model.ewc.json"),
                "--out", str(tmp_path / "new.json"), "--epochs", "1", *extra]

    def test_corrections(self, env, tmp_path, capsys):
        text = "my cousin bruno called"
        toks = Document.from_text(text).tokens
        rec = CorrectionRecord(text, added=[make_span(toks, "PER", 2, 3)])
        (tmp_path / "c.jsonl").write_text(rec.to_json() + "\n")
        assert main(self.args(env, tmp_path, "--corrections", str(tmp_path / "c.jsonl"))) == 0
        new = tagger.load_model(tmp_path / "new.json")
        state = continual.load_state(str(tmp_path / "new.json") + ".ewc.json")
        assert len(state) == new.num_params
        assert state.sample_count == 51

    def test_empty_corrections_noop(self, env, tmp_path, capsys):
        (tmp_path / "c.jsonl").write_text("")
        assert main(self.args(env, tmp_path, "--corrections", str(tmp_path / "c.jsonl"))) == 0
        assert "no-op" in capsys.readouterr().out
        assert not (tmp_path / "new.json").exists()

    def test_lambda_zero_warns(self, env, tmp_path, caplog, small_corpus):
        from maskup.docmodel import write_conll

        write_conll(small_corpus[:5], tmp_path / "c.conll")
        with caplog.at_level(logging.WARNING, logger="maskup"):
            assert main(self.args(env, tmp_path, "--corpus", str(tmp_path / "c.conll"), "--lambda", "0")) == 0
        assert any("lambda 0" in r.getMessage() for r in caplog.records)

    def test_dimension_mismatch(self, env, tmp_path, small_corpus):
        from maskup.docmodel import write_conll
        import numpy as np

        continual.save_state(continual.EwcState(np.zeros(3), np.zeros(3)), tmp_path / "bad.json")
        write_conll(small_corpus[:5], tmp_path / "c.conll")
        argv = self.args(env, tmp_path, "--corpus", str(tmp_path / "c.conll"))
        argv[argv.index("--ewc-state") + 1] = str(tmp_path / "bad.json")
        assert main(argv) == 2

    def test_needs_one_source(self, env, tmp_path):
        assert main(self.args(env, tmp_path)) == 2


class TestBench:
    def test_output_lines(self, tmp_path, capsys):
        code = main(["bench", "--documents", "2", "--document-bytes", "600", "--repetitions", "1",
                     "--out", str(tmp_path / "b.csv"), "--json-out", str(tmp_path / "b.json")])
        assert code == 0
        out = capsys.readouterr().out
        for what in ("time", "memory", "byte"):
            assert f"selective/full {what} ratio:" in out
        assert (tmp_path / "b.csv").read_text().startswith("arm,metric,value\n")

    def test_zero_fraction(self, capsys):
        assert main(["bench", "--documents", "1", "--document-bytes", "300", "--repetitions", "1",
                     "--entity-fraction", "0"]) == 0
        assert "byte ratio: 0.0000" in capsys.readouterr().out

    def test_bad_fraction(self):
        assert main(["bench", "--entity-fraction", "2"]) == 2
