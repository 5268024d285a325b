"""End-to-end command tests: config plumbing, every subcommand, exit
codes, determinism, and the timestamp discipline."""

import json
import re

import numpy as np
import pytest

from moltext import cli
from moltext.dataset import load_splits

_ISO_STAMP = re.compile(r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}")


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Shared prepared corpus, stub predictions for all splits, and a
    briefly trained checkpoint (12 pairs -> 9/1/2 split)."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    preds = root / "llm"
    model_dir = root / "model"
    assert cli.main(["prepare", "--out", str(data), "--synthetic-n", "12",
                     "--seed", "7"]) == 0
    for split in ("train", "validation", "test"):
        assert cli.main(["run-llm", "--out", str(preds), "--data-dir", str(data),
                         "--split", split, "--k", "3", "--r", "2",
                         "--seed", "0"]) == 0
    assert cli.main(["train", "--out", str(model_dir), "--data-dir", str(data),
                     "--predictions", str(preds), "--d", "16", "--heads", "2",
                     "--head-dim", "8", "--r", "2", "--batch-size", "4",
                     "--epochs", "2", "--max-len", "48", "--seed", "0"]) == 0
    return {
        "root": root,
        "data": data,
        "predictions": preds,
        "model_dir": model_dir,
        "checkpoint": model_dir / "checkpoint.bin",
    }


def _eval_args(pipeline, out, *extra):
    return [
        "evaluate", "--out", str(out), "--data-dir", str(pipeline["data"]),
        "--predictions", str(pipeline["predictions"]),
        "--checkpoint", str(pipeline["checkpoint"]), "--r", "2",
        "--max-len", "48", *extra,
    ]


class TestConfigPlumbing:
    def test_missing_required_key(self, capsys):
        assert cli.main(["prepare", "--synthetic-n", "8"]) == 2
        assert "missing required key 'out'" in capsys.readouterr().err

    def test_unknown_config_file_key(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("out=x\nwibble=1\n")
        assert cli.main(["prepare", "--config", str(cfg)]) == 2
        assert "unknown config key 'wibble'" in capsys.readouterr().err

    def test_malformed_config_line(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("out\n")
        assert cli.main(["prepare", "--config", str(cfg)]) == 2
        assert "malformed config line 1" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["prepare", "--config", str(tmp_path / "nope.cfg")]) == 2

    def test_bad_int_value(self, tmp_path, capsys):
        assert cli.main(["prepare", "--out", str(tmp_path / "o"),
                         "--synthetic-n", "eight"]) == 2
        assert "bad value for 'synthetic_n'" in capsys.readouterr().err

    def test_bad_choice(self, tmp_path, capsys):
        assert cli.main(["run-llm", "--out", str(tmp_path / "o"),
                         "--data-dir", str(tmp_path), "--direction", "both"]) == 2
        assert "bad value for 'direction'" in capsys.readouterr().err

    def test_cli_overrides_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"out={tmp_path / 'a'}\nsynthetic_n=8\nseed=1\n")
        assert cli.main(["prepare", "--config", str(cfg),
                         "--synthetic-n", "12"]) == 0
        echoed = (tmp_path / "a" / "run.config").read_text()
        assert "synthetic_n=12" in echoed
        assert "seed=1" in echoed

    def test_config_comments_and_blank_lines(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"# corpus prep\n\nout={tmp_path / 'b'}\nsynthetic_n=6\n")
        assert cli.main(["prepare", "--config", str(cfg)]) == 0

    def test_run_config_echo_is_sorted_and_typed(self, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["prepare", "--out", str(out), "--synthetic-n", "6",
                         "--fractions", "0.5,0.25,0.25"]) == 0
        lines = (out / "run.config").read_text().splitlines()
        assert lines[0] == "command=prepare"
        keys = [line.split("=", 1)[0] for line in lines[1:]]
        assert keys == sorted(keys)
        assert "fractions=0.5,0.25,0.25" in lines
        assert f"out={out}" in lines

    def test_no_subcommand(self):
        assert cli.main([]) == 2

    def test_unknown_subcommand(self):
        assert cli.main(["frobnicate"]) == 2

    def test_help_exits_zero(self):
        assert cli.main(["prepare", "--help"]) == 0


class TestPrepare:
    def test_synthetic_split_sizes(self, tmp_path, capsys):
        out = tmp_path / "data"
        assert cli.main(["prepare", "--out", str(out), "--synthetic-n", "12",
                         "--seed", "7"]) == 0
        assert capsys.readouterr().out.splitlines()[-1] == (
            "train=9 validation=1 test=2 quarantined=0"
        )
        splits = load_splits(out)
        assert {name: len(c) for name, c in splits.items()} == {
            "train": 9, "validation": 1, "test": 2,
        }

    def test_corpus_source_with_quarantine(self, tmp_path, capsys):
        corpus = tmp_path / "pairs.tsv"
        corpus.write_text(
            "CID\tSMILES\tdescription\n"
            "A1\tCCO\tan alcohol\n"
            "A2\tnot_smiles(((\ta broken row\n"
            "A3\tCC\tan alkane\n"
            "A4\tCNC\tan amine\n"
            "A5\tC=O\tan aldehyde group\n"
        )
        out = tmp_path / "data"
        assert cli.main(["prepare", "--out", str(out), "--corpus", str(corpus),
                         "--fractions", "0.5,0.25,0.25"]) == 0
        assert "quarantined=1" in capsys.readouterr().out
        assert (tmp_path / "pairs.tsv.quarantine.txt").exists()

    def test_both_sources_rejected(self, tmp_path, capsys):
        assert cli.main(["prepare", "--out", str(tmp_path / "o"),
                         "--corpus", "x.tsv", "--synthetic-n", "4"]) == 2
        assert "exactly one of" in capsys.readouterr().err

    def test_neither_source_rejected(self, tmp_path):
        assert cli.main(["prepare", "--out", str(tmp_path / "o")]) == 2

    def test_unusable_corpus_is_data_error(self, tmp_path):
        corpus = tmp_path / "bad.tsv"
        corpus.write_text("A1\tnot_a_molecule(((\tbroken\n")
        assert cli.main(["prepare", "--out", str(tmp_path / "o"),
                         "--corpus", str(corpus)]) == 3

    def test_missing_corpus_file_is_data_error(self, tmp_path):
        assert cli.main(["prepare", "--out", str(tmp_path / "o"),
                         "--corpus", str(tmp_path / "absent.tsv")]) == 3

    def test_rerun_is_byte_identical(self, tmp_path):
        out = tmp_path / "data"
        args = ["prepare", "--out", str(out), "--synthetic-n", "10", "--seed", "3"]
        assert cli.main(args) == 0
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        assert cli.main(args) == 0
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert first == second


class TestRunLlm:
    def test_predictions_cover_split_with_r_candidates(self, pipeline):
        path = pipeline["predictions"] / "predictions.train.jsonl"
        records = [json.loads(line) for line in path.read_text().splitlines()]
        split_ids = [r.pair_id for r in load_splits(pipeline["data"])["train"]]
        assert [rec["id"] for rec in records] == split_ids
        for rec in records:
            assert len(rec["ranked_smiles"]) == 2
            assert isinstance(rec["explanation"], str)

    def test_stub_top_candidate_is_true_target(self, pipeline):
        path = pipeline["predictions"] / "predictions.test.jsonl"
        records = {r["id"]: r for r in map(json.loads,
                                           path.read_text().splitlines())}
        for rec in load_splits(pipeline["data"])["test"]:
            assert records[rec.pair_id]["ranked_smiles"][0] == rec.smiles

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        out = tmp_path / "llm"
        args = ["run-llm", "--out", str(out), "--data-dir",
                str(pipeline["data"]), "--split", "test", "--k", "3",
                "--r", "2", "--seed", "0"]
        assert cli.main(args) == 0
        first = (out / "predictions.test.jsonl").read_bytes()
        config_first = (out / "run.config").read_bytes()
        assert cli.main(args) == 0
        assert (out / "predictions.test.jsonl").read_bytes() == first
        assert (out / "run.config").read_bytes() == config_first

    def test_replay_reproduces_stub_run(self, pipeline, tmp_path):
        recorded = tmp_path / "rec"
        args = ["--data-dir", str(pipeline["data"]), "--split", "test",
                "--k", "3", "--r", "2", "--seed", "0"]
        assert cli.main(["run-llm", "--out", str(recorded), *args]) == 0
        replayed = tmp_path / "rep"
        assert cli.main(["run-llm", "--out", str(replayed), *args,
                         "--llm-provider", "replay",
                         "--replay-log", str(recorded / "llm_log.jsonl")]) == 0
        assert (
            (replayed / "predictions.test.jsonl").read_bytes()
            == (recorded / "predictions.test.jsonl").read_bytes()
        )

    def test_unparseable_response_counted_not_fatal(self, pipeline, tmp_path,
                                                    capsys):
        recorded = tmp_path / "rec"
        args = ["--data-dir", str(pipeline["data"]), "--split", "test",
                "--k", "3", "--r", "2", "--seed", "0"]
        assert cli.main(["run-llm", "--out", str(recorded), *args]) == 0
        log = recorded / "llm_log.jsonl"
        records = [json.loads(line) for line in log.read_text().splitlines()]
        records[0]["raw_response"] = "I am sorry, I cannot help with that."
        log.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        capsys.readouterr()
        replayed = tmp_path / "rep"
        assert cli.main(["run-llm", "--out", str(replayed), *args,
                         "--llm-provider", "replay",
                         "--replay-log", str(log)]) == 0
        assert "unparseable=1" in capsys.readouterr().out
        first = json.loads(
            (replayed / "predictions.test.jsonl").read_text().splitlines()[0]
        )
        assert first["ranked_smiles"] == []

    def test_scaffold_sampling_text2mol(self, pipeline, tmp_path):
        assert cli.main(["run-llm", "--out", str(tmp_path / "o"),
                         "--data-dir", str(pipeline["data"]), "--split", "test",
                         "--sampling", "scaffold", "--k", "3", "--r", "2"]) == 0

    def test_scaffold_sampling_mol2text(self, pipeline, tmp_path):
        assert cli.main(["run-llm", "--out", str(tmp_path / "o"),
                         "--data-dir", str(pipeline["data"]), "--split", "test",
                         "--direction", "mol2text", "--sampling", "scaffold",
                         "--k", "3", "--r", "2"]) == 0

    def test_zero_shot_prompting(self, pipeline, tmp_path):
        assert cli.main(["run-llm", "--out", str(tmp_path / "o"),
                         "--data-dir", str(pipeline["data"]), "--split", "test",
                         "--k", "0", "--r", "2"]) == 0

    def test_k_exceeding_pool_is_config_error(self, pipeline, tmp_path):
        assert cli.main(["run-llm", "--out", str(tmp_path / "o"),
                         "--data-dir", str(pipeline["data"]), "--split", "train",
                         "--k", "20", "--r", "2"]) == 2

    def test_replay_requires_log_key(self, pipeline, tmp_path, capsys):
        assert cli.main(["run-llm", "--out", str(tmp_path / "o"),
                         "--data-dir", str(pipeline["data"]),
                         "--llm-provider", "replay"]) == 2
        assert "replay mode requires replay_log" in capsys.readouterr().err

    def test_replay_requires_existing_log(self, pipeline, tmp_path):
        assert cli.main(["run-llm", "--out", str(tmp_path / "o"),
                         "--data-dir", str(pipeline["data"]),
                         "--llm-provider", "replay",
                         "--replay-log", str(tmp_path / "absent.jsonl")]) == 2

    def test_live_requires_credential_env_name(self, pipeline, tmp_path, capsys):
        assert cli.main(["run-llm", "--out", str(tmp_path / "o"),
                         "--data-dir", str(pipeline["data"]),
                         "--llm-provider", "live",
                         "--llm-endpoint", "http://localhost:1"]) == 2
        assert "live mode requires credential_env" in capsys.readouterr().err

    def test_live_requires_credential_value(self, pipeline, tmp_path,
                                            monkeypatch, capsys):
        monkeypatch.delenv("MOLTEXT_API_KEY", raising=False)
        assert cli.main(["run-llm", "--out", str(tmp_path / "o"),
                         "--data-dir", str(pipeline["data"]),
                         "--llm-provider", "live",
                         "--llm-endpoint", "http://localhost:1",
                         "--credential-env", "MOLTEXT_API_KEY"]) == 2
        assert "MOLTEXT_API_KEY is not set" in capsys.readouterr().err

    def test_live_mode_hits_refusing_seam_in_tests(self, pipeline, tmp_path,
                                                   monkeypatch):
        monkeypatch.setenv("MOLTEXT_API_KEY", "value-for-test")
        with pytest.raises(AssertionError, match="network use refused"):
            cli.main(["run-llm", "--out", str(tmp_path / "o"),
                      "--data-dir", str(pipeline["data"]), "--k", "3",
                      "--r", "2", "--llm-provider", "live",
                      "--llm-endpoint", "http://localhost:1",
                      "--credential-env", "MOLTEXT_API_KEY"])

    def test_missing_data_dir_is_data_error(self, tmp_path):
        assert cli.main(["run-llm", "--out", str(tmp_path / "o"),
                         "--data-dir", str(tmp_path / "nowhere")]) == 3


class TestTrain:
    def test_artifacts_written(self, pipeline, capsys):
        model_dir = pipeline["model_dir"]
        assert (model_dir / "checkpoint.bin").exists()
        assert (model_dir / "run.config").exists()
        history = [
            json.loads(line)
            for line in (model_dir / "metrics.jsonl").read_text().splitlines()
        ]
        assert len(history) == 2
        for rec in history:
            assert set(rec) == {"epoch", "lr", "train_loss", "val_loss"}

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        out = tmp_path / "model"
        args = ["train", "--out", str(out), "--data-dir", str(pipeline["data"]),
                "--predictions", str(pipeline["predictions"]), "--d", "16",
                "--heads", "2", "--head-dim", "8", "--r", "2",
                "--batch-size", "4", "--epochs", "2", "--max-len", "48",
                "--seed", "0"]
        assert cli.main(args) == 0
        checkpoint = (out / "checkpoint.bin").read_bytes()
        metrics = (out / "metrics.jsonl").read_bytes()
        assert cli.main(args) == 0
        assert (out / "checkpoint.bin").read_bytes() == checkpoint
        assert (out / "metrics.jsonl").read_bytes() == metrics

    def test_missing_predictions_is_data_error(self, pipeline, tmp_path, capsys):
        assert cli.main(["train", "--out", str(tmp_path / "o"),
                         "--data-dir", str(pipeline["data"]),
                         "--predictions", str(tmp_path / "empty")]) == 3
        assert "missing predictions file" in capsys.readouterr().err

    def test_bad_dims_is_config_error(self, pipeline, tmp_path, capsys):
        assert cli.main(["train", "--out", str(tmp_path / "o"),
                         "--data-dir", str(pipeline["data"]),
                         "--predictions", str(pipeline["predictions"]),
                         "--d", "16", "--heads", "3", "--head-dim", "8"]) == 2
        assert "heads * head_dim" in capsys.readouterr().err

    def test_divergence_exits_5_with_finite_checkpoint(self, pipeline, tmp_path,
                                                       capsys):
        out = tmp_path / "model"
        with np.errstate(over="ignore", invalid="ignore"):
            rc = cli.main(["train", "--out", str(out),
                           "--data-dir", str(pipeline["data"]),
                           "--predictions", str(pipeline["predictions"]),
                           "--d", "16", "--heads", "2", "--head-dim", "8",
                           "--r", "2", "--batch-size", "4", "--epochs", "2",
                           "--max-len", "48", "--lr", "1e160"])
        assert rc == 5
        assert "diverged" in capsys.readouterr().err
        assert (out / "checkpoint.bin").exists()
        from moltext.decoder import ModelParams
        model = ModelParams.load(out / "checkpoint.bin")
        for tensor in model.blocks().values():
            assert np.all(np.isfinite(tensor.data))


class TestEvaluate:
    def test_report_artifacts(self, pipeline, tmp_path, capsys):
        out = tmp_path / "eval"
        assert cli.main(_eval_args(pipeline, out)) == 0
        table = (out / "report.txt").read_text()
        assert table.splitlines()[0].startswith("BLEU")
        record = json.loads((out / "report.jsonl").read_text())
        assert record["kind"] == "text2mol"
        assert record["counts"]["pairs"] == 2
        stdout = capsys.readouterr().out
        assert "BLEU" in stdout

    def test_generations_match_split_ids(self, pipeline, tmp_path):
        out = tmp_path / "eval"
        assert cli.main(_eval_args(pipeline, out)) == 0
        lines = (out / "generations.test.jsonl").read_text().splitlines()
        ids = [json.loads(line)["id"] for line in lines]
        assert ids == [r.pair_id for r in load_splits(pipeline["data"])["test"]]
        for line in lines:
            rec = json.loads(line)
            assert set(rec) == {"id", "reference", "candidate", "bleu", "exact",
                                "levenshtein", "valid"}

    def test_jsonl_format_prints_record(self, pipeline, tmp_path, capsys):
        out = tmp_path / "eval"
        assert cli.main(_eval_args(pipeline, out, "--format", "jsonl")) == 0
        last = capsys.readouterr().out.strip().splitlines()[-1]
        assert json.loads(last)["kind"] == "text2mol"

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        out = tmp_path / "eval"
        args = _eval_args(pipeline, out, "--dump-attention", "true")
        assert cli.main(args) == 0
        names = ("report.txt", "report.jsonl", "generations.test.jsonl",
                 "attention.test.jsonl", "run.config")
        first = {n: (out / n).read_bytes() for n in names}
        assert cli.main(args) == 0
        assert {n: (out / n).read_bytes() for n in names} == first

    def test_attention_dump_weights_normalized(self, pipeline, tmp_path):
        out = tmp_path / "eval"
        assert cli.main(_eval_args(pipeline, out, "--dump-attention", "true")) == 0
        for line in (out / "attention.test.jsonl").read_text().splitlines():
            rec = json.loads(line)
            assert set(rec) == {"id", "layer1", "layer2"}
            for layer in ("layer1", "layer2"):
                assert len(rec[layer]) == 2  # one trace per head
                for weights in rec[layer]:
                    assert sum(weights) == pytest.approx(1.0, abs=1e-9)

    def test_train_split_evaluation(self, pipeline, tmp_path):
        out = tmp_path / "eval"
        assert cli.main(_eval_args(pipeline, out, "--split", "train")) == 0
        record = json.loads((out / "report.jsonl").read_text())
        assert record["counts"]["pairs"] == 9

    def test_r_mismatch_is_load_error(self, pipeline, tmp_path, capsys):
        out = tmp_path / "eval"
        args = [a if a != "2" else "3" for a in _eval_args(pipeline, out)]
        assert cli.main(args) == 3
        assert "trained with r=2" in capsys.readouterr().err

    def test_missing_checkpoint_is_data_error(self, pipeline, tmp_path):
        args = ["evaluate", "--out", str(tmp_path / "o"),
                "--data-dir", str(pipeline["data"]),
                "--predictions", str(pipeline["predictions"]),
                "--checkpoint", str(tmp_path / "absent.bin"), "--r", "2"]
        assert cli.main(args) == 3

    def test_ablate_flag_delegates_to_harness(self, pipeline, tmp_path):
        out = tmp_path / "eval"
        assert cli.main(_eval_args(pipeline, out, "--ablate", "true")) == 0
        assert (out / "ablation.txt").exists()
        assert not (out / "report.txt").exists()


class TestAblate:
    def test_five_labeled_rows(self, pipeline, tmp_path, capsys):
        out = tmp_path / "abl"
        assert cli.main(["ablate", "--out", str(out),
                         "--data-dir", str(pipeline["data"]),
                         "--predictions", str(pipeline["predictions"]),
                         "--checkpoint", str(pipeline["checkpoint"]),
                         "--r", "2", "--max-len", "48"]) == 0
        lines = (out / "ablation.txt").read_text().splitlines()
        assert len(lines) == 7  # header + rule + 5 variants
        labels = [line.split("  ")[0].strip() for line in lines[2:]]
        assert labels == ["full", "w/o y_exp", "w/o y_org", "w/o y_pred",
                          "w/o HMHA"]
        records = [json.loads(line) for line in
                   (out / "ablation.jsonl").read_text().splitlines()]
        assert [r["mode"] for r in records] == labels
        for rec in records:
            assert rec["kind"] == "text2mol"
        stdout = capsys.readouterr().out
        assert "w/o HMHA" in stdout

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        out = tmp_path / "abl"
        args = ["ablate", "--out", str(out), "--data-dir",
                str(pipeline["data"]), "--predictions",
                str(pipeline["predictions"]), "--checkpoint",
                str(pipeline["checkpoint"]), "--r", "2", "--max-len", "48"]
        assert cli.main(args) == 0
        first = (out / "ablation.txt").read_bytes()
        jsonl = (out / "ablation.jsonl").read_bytes()
        assert cli.main(args) == 0
        assert (out / "ablation.txt").read_bytes() == first
        assert (out / "ablation.jsonl").read_bytes() == jsonl


class TestGenerate:
    def test_single_query_prints_and_writes(self, pipeline, tmp_path, capsys):
        description = load_splits(pipeline["data"])["train"].records[0].description
        out = tmp_path / "gen"
        assert cli.main(["generate", "--out", str(out),
                         "--checkpoint", str(pipeline["checkpoint"]),
                         "--query", description, "--r", "2",
                         "--max-len", "48"]) == 0
        printed = [line for line in capsys.readouterr().out.splitlines()
                   if not line.startswith("#")][-1]
        assert (out / "generation.txt").read_text() == printed + "\n"

    def test_inline_candidates_accepted(self, pipeline, tmp_path):
        out = tmp_path / "gen"
        assert cli.main(["generate", "--out", str(out),
                         "--checkpoint", str(pipeline["checkpoint"]),
                         "--query", "a small organic molecule",
                         "--candidates", "CCO;CC",
                         "--explanation", "two plausible alkane-like answers",
                         "--r", "2", "--max-len", "48"]) == 0

    def test_deterministic(self, pipeline, tmp_path, capsys):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert cli.main(["generate", "--out", str(out),
                             "--checkpoint", str(pipeline["checkpoint"]),
                             "--query", "a ring with three carbon atoms",
                             "--r", "2", "--max-len", "48"]) == 0
        assert ((out_a / "generation.txt").read_bytes()
                == (out_b / "generation.txt").read_bytes())

    def test_missing_checkpoint(self, tmp_path):
        assert cli.main(["generate", "--out", str(tmp_path / "o"),
                         "--checkpoint", str(tmp_path / "absent.bin"),
                         "--query", "anything"]) == 3


@pytest.fixture(scope="module")
def m2t(pipeline, tmp_path_factory):
    root = tmp_path_factory.mktemp("m2t")
    preds = root / "llm"
    model_dir = root / "model"
    for split in ("train", "validation", "test"):
        assert cli.main(["run-llm", "--out", str(preds),
                         "--data-dir", str(pipeline["data"]),
                         "--direction", "mol2text", "--split", split,
                         "--k", "3", "--r", "2", "--seed", "0"]) == 0
    assert cli.main(["train", "--out", str(model_dir),
                     "--data-dir", str(pipeline["data"]),
                     "--predictions", str(preds),
                     "--direction", "mol2text", "--d", "16", "--heads", "2",
                     "--head-dim", "8", "--r", "2", "--batch-size", "4",
                     "--epochs", "1", "--max-len", "200", "--seed", "0"]) == 0
    return {"predictions": preds, "checkpoint": model_dir / "checkpoint.bin"}


class TestMol2Text:
    def test_evaluate_emits_text_metrics(self, pipeline, m2t, tmp_path, capsys):
        out = tmp_path / "eval"
        assert cli.main(["evaluate", "--out", str(out),
                         "--data-dir", str(pipeline["data"]),
                         "--predictions", str(m2t["predictions"]),
                         "--checkpoint", str(m2t["checkpoint"]),
                         "--direction", "mol2text", "--r", "2",
                         "--max-len", "200"]) == 0
        table = (out / "report.txt").read_text()
        assert table.splitlines()[0].startswith("BLEU-2")
        assert "METEOR" in table
        record = json.loads((out / "report.jsonl").read_text())
        assert record["kind"] == "mol2text"

    def test_ablate_uses_text_columns(self, pipeline, m2t, tmp_path):
        out = tmp_path / "abl"
        assert cli.main(["ablate", "--out", str(out),
                         "--data-dir", str(pipeline["data"]),
                         "--predictions", str(m2t["predictions"]),
                         "--checkpoint", str(m2t["checkpoint"]),
                         "--direction", "mol2text", "--r", "2",
                         "--max-len", "200"]) == 0
        header = (out / "ablation.txt").read_text().splitlines()[0]
        assert "ROUGE-L" in header
        assert "Morgan FTS" not in header


class TestTimestampDiscipline:
    def test_stdout_stamps_only_behind_hash(self, pipeline, tmp_path, capsys):
        out = tmp_path / "eval"
        assert cli.main(_eval_args(pipeline, out)) == 0
        for line in capsys.readouterr().out.splitlines():
            if _ISO_STAMP.search(line):
                assert line.startswith("#"), line

    def test_output_files_carry_no_timestamps(self, pipeline):
        for directory in (pipeline["data"], pipeline["predictions"],
                          pipeline["model_dir"]):
            for path in directory.iterdir():
                if path.name == "llm_log.jsonl":
                    continue  # the capture log records request times by design
                if path.suffix == ".bin":
                    continue
                assert not _ISO_STAMP.search(path.read_text()), path
