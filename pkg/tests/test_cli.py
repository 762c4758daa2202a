"""End-to-end tests of the command line interface.

A small synthetic workspace is built once per module; commands run through
``cli.main`` in-process so exit codes and console output are easy to check.
"""

import json
import subprocess
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from relrank.autodiff import save_params
from relrank.cli import main
from relrank.config import load_config
from relrank.embeddings import load_embeddings
from relrank.index import oracle_rerank
from relrank.models import build_model
from relrank.rerank import PairBuilder, rerank_candidates
from relrank.synthetic import generate_world, write_world
from relrank.text import TextPipeline, process_corpus, process_queries
from relrank.trec import read_qrels, read_run, write_run


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Workspace with corpus, splits, config, index, and BM25 candidates."""
    root = tmp_path_factory.mktemp("cli")
    world = generate_world(seed=3, n_docs=120, n_queries=20, n_concepts=30,
                           dim=6, n_filler=15, doc_len=12,
                           threshold_scale=1.15)
    write_world(world, root)
    qids = sorted(q["id"] for q in world.queries)
    for name, ids in (("train", qids[:12]), ("dev", qids[12:16]),
                      ("test", qids[16:])):
        (root / f"{name}.split").write_text("".join(i + "\n" for i in ids))
    config = {
        "corpus": "corpus.jsonl", "embeddings": "embeddings.txt",
        "queries": "queries.jsonl", "qrels": "qrels.txt",
        "index": "work/index.rrix", "checkpoints": "work/ckpt",
        "outputs": "work/out",
        "model": "pooled-drmm-mv", "extra_features": True,
        "n_candidates": 10, "seed": 0,
        "train_split": "train.split", "dev_split": "dev.split",
        "eval_split": "test.split",
        "training": {"epochs": 2, "patience": 2, "learning_rate": 0.01},
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(config, indent=2))
    assert main(["index", str(cfg_path)]) == 0
    assert main(["retrieve", str(cfg_path)]) == 0
    return SimpleNamespace(root=root, cfg=str(cfg_path), world=world,
                           qids=qids, out=root / "work" / "out",
                           ckpt_dir=root / "work" / "ckpt")


@pytest.fixture(scope="module")
def trained(ws):
    assert main(["train", ws.cfg]) == 0
    ckpt = ws.ckpt_dir / "pooled-drmm-mv+extra-seed0.rrcp"
    assert ckpt.exists()
    return ckpt


def read_meta(path):
    with open(str(path) + ".meta.json", encoding="utf-8") as fh:
        return json.load(fh)


class TestIndexCommand:
    def test_artifact_and_sidecar(self, ws):
        index_path = ws.root / "work" / "index.rrix"
        assert index_path.exists()
        meta = read_meta(index_path)
        assert meta["seed"] == 0
        assert len(meta["config_hash"]) == 64
        assert set(meta["input_hashes"]) == {"corpus"}
        assert meta["documents"] == 120

    def test_rerun_is_byte_identical(self, ws):
        index_path = ws.root / "work" / "index.rrix"
        before = index_path.read_bytes()
        assert main(["index", ws.cfg]) == 0
        assert index_path.read_bytes() == before

    def test_empty_corpus_fails_with_config_error(self, tmp_path, capsys):
        (tmp_path / "corpus.jsonl").write_text("")
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({
            "corpus": "corpus.jsonl", "embeddings": "e", "queries": "q",
            "qrels": "r", "index": "i", "checkpoints": "c", "outputs": "o",
        }))
        assert main(["index", str(cfg)]) == 2
        assert "error[config]" in capsys.readouterr().err


class TestRetrieveCommand:
    def test_run_file_shape(self, ws):
        run_path = ws.out / "bm25.run"
        lists = {rl.query_id: rl for rl in read_run(run_path)}
        assert sorted(lists) == ws.qids
        assert all(len(rl.entries) == 10 for rl in lists.values())
        meta = read_meta(run_path)
        assert meta["n_candidates"] == 10
        assert set(meta["input_hashes"]) == {"index", "queries"}

    def test_rerun_is_byte_identical(self, ws):
        run_path = ws.out / "bm25.run"
        before = run_path.read_bytes()
        assert main(["retrieve", ws.cfg]) == 0
        assert run_path.read_bytes() == before

    def test_candidate_count_override(self, ws):
        assert main(["retrieve", ws.cfg, "--set", "candidates=pool3.run",
                     "--set", "n_candidates=3"]) == 0
        lists = read_run(ws.root / "pool3.run")
        assert all(len(rl.entries) == 3 for rl in lists)


class TestTrainCommand:
    def test_artifacts(self, ws, trained):
        log_path = trained.with_suffix(".log.jsonl")
        assert log_path.exists()
        meta = read_meta(trained)
        assert meta["model"] == "pooled-drmm-mv+extra"
        assert meta["epochs_run"] == 2
        assert 1 <= meta["best_epoch"] <= 2
        records = [json.loads(line) for line in
                   log_path.read_text().splitlines()]
        assert len(records) == 2
        assert all(set(r) == {"epoch", "train_loss", "dev_map"}
                   for r in records)

    def test_retrain_is_byte_identical(self, ws, trained):
        before = trained.read_bytes()
        log_before = trained.with_suffix(".log.jsonl").read_bytes()
        assert main(["train", ws.cfg]) == 0
        assert trained.read_bytes() == before
        assert trained.with_suffix(".log.jsonl").read_bytes() == log_before

    def test_missing_split_is_config_error(self, ws, capsys):
        assert main(["train", ws.cfg, "--set", "train_split=null"]) == 2
        assert "train_split" in capsys.readouterr().err

    def test_overlapping_splits_rejected(self, ws, capsys):
        assert main(["train", ws.cfg, "--set", "dev_split=train.split"]) == 2
        assert "overlap" in capsys.readouterr().err


class TestRerankCommand:
    def test_untrained_combiner_gives_constant_scores(self, ws):
        # A fresh linear combiner has zero weights and bias, so every score
        # is 0.0 and candidates fall back to the doc-id tie-break order.
        rng = np.random.default_rng(0)
        model = build_model("bm25-extra", 6, rng)
        ckpt = ws.root / "zero.rrcp"
        save_params(ckpt, model.params)
        out = ws.root / "zero.run"
        assert main(["rerank", ws.cfg, "--set", "model=bm25-extra",
                     "--checkpoint", str(ckpt), "--output", str(out)]) == 0
        for rl in read_run(out):
            assert [c.score for c in rl.entries] == [0.0] * len(rl.entries)
            doc_ids = [c.doc_id for c in rl.entries]
            assert doc_ids == sorted(doc_ids)

    def test_oracle_flag_matches_module_oracle(self, ws):
        assert main(["rerank", ws.cfg, "--oracle"]) == 0
        qrels = read_qrels(ws.root / "qrels.txt")
        candidates = {rl.query_id: rl
                      for rl in read_run(ws.out / "bm25.run")}
        produced = {rl.query_id: rl for rl in read_run(ws.out / "oracle.run")}
        assert sorted(produced) == ws.qids[16:]  # eval split only
        for qid, rl in produced.items():
            expected = oracle_rerank(candidates[qid], qrels)
            assert [c.doc_id for c in rl.entries] == \
                [c.doc_id for c in expected.entries]

    def test_pipeline_matches_module_by_module_invocation(self, ws, trained):
        assert main(["rerank", ws.cfg]) == 0
        run_path = ws.out / "pooled-drmm-mv+extra-seed0.run"

        pipeline = TextPipeline()
        build = process_corpus(ws.root / "corpus.jsonl", pipeline)
        queries = process_queries(ws.root / "queries.jsonl", pipeline,
                                  build.vocabulary)
        emb = load_embeddings(ws.root / "embeddings.txt", build.vocabulary)
        candidates = {rl.query_id: rl
                      for rl in read_run(ws.out / "bm25.run")}
        builder = PairBuilder(queries, build.documents, candidates, emb,
                              build.idf, with_extra=True)
        model = build_model("pooled-drmm-mv", emb.dim,
                            np.random.default_rng(0), extra_features=True)
        from relrank.autodiff import load_params
        model.params.load_from(load_params(trained))
        expected = rerank_candidates(model, builder,
                                     {q: candidates[q] for q in ws.qids[16:]})
        manual = ws.root / "manual.run"
        write_run(manual, expected, tag=model.name)
        assert run_path.read_bytes() == manual.read_bytes()

    def test_missing_checkpoint_is_config_error(self, ws, capsys):
        assert main(["rerank", ws.cfg, "--seed", "77"]) == 2
        assert "checkpoint not found" in capsys.readouterr().err


class TestEvalCommand:
    def test_single_run_report(self, ws, capsys):
        run = str(ws.out / "bm25.run")
        assert main(["eval", ws.cfg, run]) == 0
        out = capsys.readouterr().out
        assert "mean" in out and "ap" in out
        payload = json.loads((ws.out / "bm25.metrics.json").read_text())
        assert payload["run"] == "bm25"
        assert set(payload["per_query"]) <= set(ws.qids[16:])
        assert (ws.out / "bm25.metrics.json.meta.json").exists()

    def test_two_runs_add_significance(self, ws, trained, capsys):
        assert main(["rerank", ws.cfg]) == 0
        capsys.readouterr()
        run = str(ws.out / "pooled-drmm-mv+extra-seed0.run")
        base = str(ws.out / "bm25.run")
        assert main(["eval", ws.cfg, run, base,
                     "--permutations", "500"]) == 0
        out = capsys.readouterr().out
        assert "map difference" in out and "permutations" in out
        payload = json.loads(
            (ws.out / "pooled-drmm-mv+extra-seed0.metrics.json").read_text())
        sig = payload["significance"]
        assert sig["permutations"] == 500
        assert 0.0 < sig["p_value"] <= 1.0
        assert payload["baseline"]["run"] == "bm25"

    def test_missing_run_file(self, ws, capsys):
        assert main(["eval", ws.cfg, str(ws.out / "nope.run")]) == 2
        assert "error[config]" in capsys.readouterr().err

    def test_malformed_run_is_data_error(self, ws, tmp_path, capsys):
        bad = tmp_path / "bad.run"
        bad.write_text("q1 Q0 d1 1 not-a-number tag\n")
        assert main(["eval", ws.cfg, str(bad)]) == 3
        assert "error[data]" in capsys.readouterr().err


class TestInspectCommand:
    def pick_pair(self, ws):
        rl = read_run(ws.out / "bm25.run")
        by_id = {r.query_id: r for r in rl}
        qid = ws.qids[16]
        return qid, by_id[qid].entries[0].doc_id

    def test_stdout_dump(self, ws, trained, capsys):
        qid, did = self.pick_pair(ws)
        assert main(["inspect", ws.cfg, qid, did, "--budget", "6"]) == 0
        dump = json.loads(capsys.readouterr().out)
        assert dump["query_id"] == qid and dump["doc_id"] == did
        assert dump["doc_terms_shown"] <= 6
        exact = np.array(dump["views"]["exact"])
        assert set(np.unique(exact)) <= {0.0, 1.0}
        assert len(dump["views"]["context"]) == len(dump["query_terms"])

    def test_output_file_with_sidecar(self, ws, trained):
        qid, did = self.pick_pair(ws)
        out = ws.root / "dump.json"
        assert main(["inspect", ws.cfg, qid, did,
                     "--output", str(out)]) == 0
        dump = json.loads(out.read_text())
        assert "views" in dump
        assert read_meta(out)["seed"] == 0

    def test_unknown_query_is_data_error(self, ws, trained, capsys):
        assert main(["inspect", ws.cfg, "zzz", "d00001"]) == 3
        assert "error[data]" in capsys.readouterr().err

    def test_histogram_model_has_no_views(self, ws, capsys):
        rng = np.random.default_rng(0)
        model = build_model("drmm", 6, rng, extra_features=True)
        ckpt = ws.root / "hist.rrcp"
        save_params(ckpt, model.params)
        qid, did = self.pick_pair(ws)
        assert main(["inspect", ws.cfg, qid, did,
                     "--set", "model=drmm",
                     "--checkpoint", str(ckpt)]) == 2
        assert "no context encodings" in capsys.readouterr().err


class TestXvalCommand:
    def test_folds_partition_the_queries(self, ws):
        assert main(["xval", ws.cfg, "--folds", "4"]) == 0
        root = ws.out / "xval"
        seen = []
        for i in range(4):
            fold = root / f"fold{i}"
            cfg = load_config(fold / "config.json")
            train = set(Path(cfg.train_split).read_text().split())
            dev = set(Path(cfg.dev_split).read_text().split())
            test = set(Path(cfg.eval_split).read_text().split())
            assert not (train & dev) and not (train & test) and not (dev & test)
            assert train | dev | test == set(ws.qids)
            assert cfg.candidates_path == str(ws.out / "bm25.run")
            seen.extend(sorted(test))
        assert sorted(seen) == ws.qids  # each query tests exactly once
        assert (root / "xval.meta.json").exists()

    def test_fold_config_trains(self, ws):
        fold_cfg = ws.out / "xval" / "fold0" / "config.json"
        assert main(["train", str(fold_cfg), "--set",
                     "training.epochs=1"]) == 0
        ckpts = list((ws.out / "xval" / "fold0" / "checkpoints").glob("*.rrcp"))
        assert len(ckpts) == 1

    def test_rerun_is_deterministic(self, ws):
        fold0 = ws.out / "xval" / "fold0" / "config.json"
        before = fold0.read_bytes()
        assert main(["xval", ws.cfg, "--folds", "4"]) == 0
        assert fold0.read_bytes() == before

    def test_too_few_folds(self, ws, capsys):
        assert main(["xval", ws.cfg, "--folds", "1"]) == 2
        assert "error[config]" in capsys.readouterr().err

    def test_more_folds_than_queries(self, ws, capsys):
        assert main(["xval", ws.cfg, "--folds", "21"]) == 3
        assert "error[data]" in capsys.readouterr().err


class TestRepeatCommand:
    def test_summary_over_seeds(self, ws, capsys):
        # Moving outputs also moves the implied candidates path, so pin it.
        assert main(["repeat", ws.cfg, "--seeds", "2",
                     "--set", "model=bm25-extra",
                     "--set", "outputs=work/repeat",
                     "--set", "candidates=work/out/bm25.run"]) == 0
        out = capsys.readouterr().out
        assert "mean" in out and "std" in out
        summary = json.loads(
            (ws.root / "work" / "repeat" /
             "repeat-bm25-extra.summary.json").read_text())
        assert summary["seeds"] == [0, 1]
        assert set(summary["per_seed"]) == {"0", "1"}
        for block in (summary["mean"], summary["std"]):
            assert set(block) == {"map", "p20", "ndcg20"}
        for seed in ("0", "1"):
            assert Path(summary["runs"][seed]).exists()

    def test_zero_seeds_rejected(self, ws, capsys):
        assert main(["repeat", ws.cfg, "--seeds", "0"]) == 2
        assert "error[config]" in capsys.readouterr().err


class TestErrorReporting:
    def test_bad_config_json(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text("{broken")
        assert main(["index", str(cfg)]) == 2
        err = capsys.readouterr().err
        assert err.startswith("error[config]:")

    def test_unknown_override_key(self, ws, capsys):
        assert main(["index", ws.cfg, "--set", "learning_rate=1"]) == 2
        assert "unknown config keys" in capsys.readouterr().err


class TestConsoleScript:
    def test_help_lists_subcommands(self):
        proc = subprocess.run(["relrank", "--help"], capture_output=True,
                              text=True)
        assert proc.returncode == 0
        for name in ("index", "retrieve", "train", "rerank", "eval",
                     "inspect", "xval", "repeat"):
            assert name in proc.stdout
