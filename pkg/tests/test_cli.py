import json
import subprocess
import sys

import pytest

from genret import __version__
from genret.cli import main
from genret.ensemble import RankedList
from genret.jsonl import read_jsonl, read_meta
from genret.synthetic import BRIDGE_CORPUS, BRIDGE_QUERIES, SAMUEL


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return str(path)


@pytest.fixture
def work(tmp_path):
    corpus = write_jsonl(tmp_path / "corpus.jsonl", [{"id": f"d{i}", "text": t} for i, t in enumerate(BRIDGE_CORPUS)])
    single = [{"qid": f"s{i}", "query": t.split()[0], "gold": [t]} for i, t in enumerate(BRIDGE_CORPUS)]
    return tmp_path, corpus, write_jsonl(tmp_path / "single.jsonl", single), \
        write_jsonl(tmp_path / "bridge.jsonl", BRIDGE_QUERIES)


def run(*argv):
    return main([str(a) for a in argv])


def test_build_index_samuel_stats(tmp_path, capsys):
    corpus = write_jsonl(tmp_path / "c.jsonl", [{"text": t} for t in SAMUEL])
    assert run("build-index", "--corpus", corpus, "--out", tmp_path / "ix.json") == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["N"] == 2 and stats["max_depth"] == 3 and stats["num_prefix_keys"] == 4
    doc = json.loads((tmp_path / "ix.json").read_text())
    assert doc["meta"]["version"] == __version__ and doc["meta"]["seed"] == 0


def test_malformed_corpus_line(tmp_path, capsys):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"text": "a"}\n{"text": \n')
    assert run("build-index", "--corpus", p, "--out", tmp_path / "ix.json") == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("genret: error: InputFormatError: ") and "bad.jsonl:2:" in err[-1]


def test_oracle_end_to_end_recall_1(work, capsys):
    tmp, corpus, single, _ = work
    ix, preds, rep = tmp / "ix.json", tmp / "p.jsonl", tmp / "r.json"
    assert run("build-index", "--corpus", corpus, "--out", ix) == 0
    assert run("retrieve", "--index", ix, "--queries", single, "--scorer", "oracle", "--out", preds) == 0
    assert run("eval", "--preds", preds, "--gold", single, "--metrics", "recall@1,f1", "--out", rep) == 0
    report = json.loads(rep.read_text())
    assert report["aggregate"]["recall@1"] == 1.0 and report["aggregate"]["f1"] == 1.0
    assert report["meta"]["subcommand"] == "eval"
    assert "genret 0.1.0 retrieve:" in capsys.readouterr().err


def test_dynamic_run_reports_missing_done(work):
    tmp, corpus, _, bridge = work
    ix, preds = tmp / "ix.json", tmp / "p.jsonl"
    run("build-index", "--corpus", corpus, "--add-done", "--out", ix)
    assert run("retrieve", "--index", ix, "--queries", bridge, "--scorer", "oracle", "--out", preds) == 0
    meta = read_meta(preds)
    assert meta["missing_done_rate"] == 0.0
    recs = {r["qid"]: r for r in read_jsonl(preds)}
    assert recs["q3"]["done"] and len(recs["q3"]["retrieved"]) == 3
    assert run("retrieve", "--index", ix, "--queries", bridge, "--scorer", "oracle", "--max-steps", "2",
               "--out", preds) == 0
    assert read_meta(preds)["missing_done_rate"] == 1.0


def test_dynamic_without_done_entry_fails(work, capsys):
    tmp, corpus, _, bridge = work
    run("build-index", "--corpus", corpus, "--out", tmp / "ix.json")
    assert run("retrieve", "--index", tmp / "ix.json", "--queries", bridge, "--out", tmp / "p.jsonl") == 2
    assert "ConfigError" in capsys.readouterr().err


def test_ensemble_and_similarity(work):
    tmp, corpus, single, _ = work
    ix = tmp / "ix.json"
    run("build-index", "--corpus", corpus, "--out", ix)
    run("retrieve", "--index", ix, "--queries", single, "--scorer", "ngram", "--memorize", "--beam", "3",
        "--out", tmp / "a.jsonl")
    run("retrieve", "--index", ix, "--queries", single, "--retriever", "be", "--beam", "3", "--out", tmp / "b.jsonl")
    assert run("ensemble", "--a", tmp / "a.jsonl", "--b", tmp / "b.jsonl", "--k", "4", "--out", tmp / "e.jsonl") == 0
    for rec in read_jsonl(tmp / "e.jsonl"):
        RankedList(rec["qid"], tuple(r["text"] for r in rec["ranked"]))
        assert 1 <= len(rec["ranked"]) <= 4
    assert "memorization" in read_meta(tmp / "a.jsonl")
    assert run("similarity", "--a", tmp / "a.jsonl", "--b", tmp / "a.jsonl", "--k", "3", "--out", tmp / "s.json") == 0
    assert json.loads((tmp / "s.json").read_text())["similarity"] == 1.0


def test_memorize_then_scorer_file(work):
    tmp, corpus, single, _ = work
    ix = tmp / "ix.json"
    run("build-index", "--corpus", corpus, "--out", ix)
    assert run("memorize", "--index", ix, "--ngram-order", "3", "--out", tmp / "s.json") == 0
    doc = json.loads((tmp / "s.json").read_text())
    assert doc["order"] == 3 and doc["meta"]["memorization"]["loglik_per_token_after"] > \
        doc["meta"]["memorization"]["uniform_loglik_per_token"]
    assert run("retrieve", "--index", ix, "--queries", single, "--scorer", "ngram", "--scorer-file",
               tmp / "s.json", "--out", tmp / "p.jsonl") == 0


def test_jobs_do_not_change_output(work):
    tmp, corpus, single, _ = work
    ix = tmp / "ix.json"
    run("build-index", "--corpus", corpus, "--out", ix)
    for jobs in ("1", "4"):
        run("retrieve", "--index", ix, "--queries", single, "--beam", "4", "--jobs", jobs, "--out", tmp / f"j{jobs}.jsonl")
    assert (tmp / "j1.jsonl").read_bytes() == (tmp / "j4.jsonl").read_bytes()
    assert [r["qid"] for r in read_jsonl(tmp / "j1.jsonl")] == [f"s{i}" for i in range(10)]


def test_config_file_and_seed_override(work, monkeypatch, capsys):
    tmp, corpus, single, _ = work
    ix = tmp / "ix.json"
    run("build-index", "--corpus", corpus, "--out", ix)
    cfg = tmp / "cfg.json"
    cfg.write_text(json.dumps({"beam": 3, "seed": 4}))
    assert run("retrieve", "--config", cfg, "--index", ix, "--queries", single, "--out", tmp / "p.jsonl") == 0
    meta = read_meta(tmp / "p.jsonl")
    assert meta["config"]["beam"] == 3 and meta["seed"] == 4
    assert len(read_jsonl(tmp / "p.jsonl")[0]["ranked"]) == 3
    monkeypatch.setenv("GENRET_SEED", "99")
    run("retrieve", "--config", cfg, "--index", ix, "--queries", single, "--out", tmp / "p.jsonl")
    assert read_meta(tmp / "p.jsonl")["seed"] == 99
    cfg.write_text(json.dumps({"beem": 3}))
    assert run("retrieve", "--config", cfg, "--index", ix, "--queries", single, "--out", tmp / "p.jsonl") == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_bad_query_file(work, capsys):
    tmp, corpus, _, _ = work
    run("build-index", "--corpus", corpus, "--out", tmp / "ix.json")
    q = write_jsonl(tmp / "q.jsonl", [{"qid": 1, "query": "x", "extra": True}])
    assert run("retrieve", "--index", tmp / "ix.json", "--queries", q, "--out", tmp / "p.jsonl") == 2
    assert capsys.readouterr().err.strip().splitlines()[-1].startswith("genret: error: InputFormatError")


def test_bench_cli(tmp_path):
    out = tmp_path / "b.json"
    assert run("bench", "--scenario", "decode", "--n", "20", "--shared", "4", "--reps", "2", "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["results"]["early"]["steps_scored"][0] == 5 and rep["meta"]["subcommand"] == "bench"


def test_console_script_version():
    out = subprocess.run([sys.executable, "-m", "genret.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == f"genret {__version__}"
