import json
from importlib import resources

import jsonschema
import pytest

from shp.cli import CONFIG_ENV, main
from shp.trace import Trace, save_csv

from .helpers import pdu


def schema(name):
    return json.loads((resources.files("shp") / "schemas" / f"{name}.schema.json").read_text())


def validate(doc, name):
    jsonschema.Draft202012Validator(schema(name)).validate(doc)


def read_json(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def corpora(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpora")
    assert main(["corpus", "--out", str(root / "clean"), "--count", "2", "--duration", "120"]) == 0
    assert main(["corpus", "--out", str(root / "covert"), "--count", "2", "--duration", "120",
                 "--covert", "--bitlength", "8", "--seed", "50"]) == 0
    return root


def test_default_simulate_golden(tmp_path):
    assert main(["simulate", "--out", str(tmp_path)]) == 0
    rep = read_json(tmp_path / "report.json")
    validate(rep, "report")
    assert rep["fragments_failed"] == 0 and rep["message_complete"]
    man = read_json(tmp_path / "manifest.json")
    validate(man, "manifest")
    validate(man["config"], "config")
    assert [o["path"] for o in man["outputs"]] == ["report.json"]
    assert len(man["inputs"]) == 2


def test_simulate_is_deterministic(tmp_path):
    args = ["simulate", "--synthetic", "--duration", "20", "--message-bits", "512",
            "--receiver-jitter", "0.002", "--receiver-loss", "0.05", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == \
        (tmp_path / "b" / "report.json").read_bytes()


def test_simulate_csv_and_events(tmp_path):
    assert main(["simulate", "--out", str(tmp_path), "--format", "csv", "--events"]) == 0
    header, row = (tmp_path / "report.csv").read_text().splitlines()
    assert set(header.split(",")) == set(schema("report")["required"])
    assert "," in row
    assert (tmp_path / "events.csv").read_text().splitlines()[0] == \
        "ts_us,side,type,rehash,oood,watchdog"


def test_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--trace", str(tmp_path / "missing.pcap")]) == 3
    assert main(["simulate", "--bitlength", "9"]) == 2
    assert main(["simulate", "--no-such-flag"]) == 2
    assert main([]) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["simulate", "--config", str(tmp_path / "bad.json")]) == 2
    (tmp_path / "v.json").write_text(json.dumps({"schema_version": 99}))
    assert main(["simulate", "--config", str(tmp_path / "v.json")]) == 2
    (tmp_path / "empty.txt").write_text("")
    assert main(["simulate", "--message", str(tmp_path / "empty.txt")]) == 2


def test_config_precedence(tmp_path, monkeypatch):
    env_cfg = tmp_path / "env.json"
    env_cfg.write_text(json.dumps({"bitlength": 3, "ecc": "hamming"}))
    file_cfg = tmp_path / "file.json"
    file_cfg.write_text(json.dumps({"schema_version": 1, "bitlength": 4}))
    monkeypatch.setenv(CONFIG_ENV, str(env_cfg))

    def used(*extra):
        out = tmp_path / "o"
        assert main(["simulate", "--synthetic", "--duration", "5", "--message-bits", "64",
                     "--out", str(out), *extra]) == 0
        return read_json(out / "manifest.json")["config"]

    assert (used()["bitlength"], used()["ecc"]) == (3, "hamming")
    assert (used("--config", str(file_cfg))["bitlength"], used("--config", str(file_cfg))["ecc"]) \
        == (4, "none")
    assert used("--config", str(file_cfg), "--bitlength", "8")["bitlength"] == 8


def test_message_file_bits_or_bytes(tmp_path):
    (tmp_path / "bits.txt").write_text("1011\n0010\n")
    assert main(["simulate", "--message", str(tmp_path / "bits.txt"), "--out",
                 str(tmp_path / "a")]) == 0
    assert read_json(tmp_path / "a" / "report.json")["message_bits"] == 8
    (tmp_path / "raw.bin").write_bytes(b"hi")
    assert main(["simulate", "--message", str(tmp_path / "raw.bin"), "--out",
                 str(tmp_path / "b")]) == 0
    assert read_json(tmp_path / "b" / "report.json")["message_bits"] == 16


def test_entropy_constant_interval(tmp_path):
    save_csv(Trace([pdu(i * 10_000) for i in range(500)]), tmp_path / "c.csv")
    assert main(["entropy", "--trace", str(tmp_path / "c.csv"), "--sources", "IPD",
                 "--out", str(tmp_path), "--format", "json"]) == 0
    rows = read_json(tmp_path / "entropy.json")
    assert len(rows) == 7 and all(r["entropy_bits"] == 0.0 for r in rows)


def test_entropy_csv_and_bad_input(tmp_path):
    assert main(["entropy", "--out", str(tmp_path), "--epsilons", "3,6"]) == 0
    lines = (tmp_path / "entropy.csv").read_text().splitlines()
    assert lines[0] == "source,epsilon,samples,entropy_bits" and len(lines) == 1 + 6 * 2
    assert main(["entropy", "--sources", "XYZ"]) == 2
    assert main(["entropy", "--epsilons", "a"]) == 2


def test_detect_outputs(corpora, tmp_path):
    out = tmp_path / "d"
    assert main(["detect", "--clean", str(corpora / "clean"), "--suspect",
                 str(corpora / "covert"), "--out", str(out)]) == 0
    card = read_json(out / "scorecard.json")
    validate(card, "scorecard")
    assert 0.0 <= card["markov_auc"] <= 1.0
    for name in ("roc.csv", "kappa_violin.csv", "ks_values.csv", "ipd_cdf.csv", "manifest.json"):
        assert (out / name).exists()
    validate(read_json(out / "manifest.json"), "manifest")


def test_detect_same_corpus_warns(corpora, capsys):
    clean = str(corpora / "clean")
    assert main(["detect", "--clean", clean, "--suspect", clean, "--methods", "ks"]) == 0
    captured = capsys.readouterr()
    assert "identical" in captured.err
    card = json.loads(captured.out)
    assert card["ks"]["shp-non"]["values"] == []


def test_detect_usage_errors(corpora, tmp_path):
    clean = str(corpora / "clean")
    assert main(["detect", "--clean", clean, "--suspect", clean, "--methods", ""]) == 2
    assert main(["detect", "--clean", clean, "--suspect", clean, "--methods", "foo"]) == 2
    assert main(["detect", "--clean", clean, "--suspect", str(tmp_path / "none")]) == 3
    assert main(["detect", "--clean", clean, "--suspect", str(tmp_path)]) == 2


def test_corpus_requires_out():
    assert main(["corpus", "--count", "1", "--duration", "5"]) == 2


def test_search_log_and_rerun(tmp_path):
    args = ["search", "--budget", "32", "--population", "32", "--duration", "2",
            "--message-bits", "1024", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    lines = (tmp_path / "a" / "search_log.jsonl").read_text().splitlines()
    assert len(lines) == 32
    for line in lines:
        validate(json.loads(line), "search_record")
    top = read_json(tmp_path / "a" / "top.json")
    assert top["evaluations"] == 32 and len(top["top"]) == 10
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("search_log.jsonl", "top.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    validate(read_json(tmp_path / "a" / "manifest.json"), "manifest")


def test_search_budget_below_population():
    assert main(["search", "--budget", "4", "--population", "8"]) == 2
