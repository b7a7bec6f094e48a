import json

import pytest

from conformrec.cli import EXIT_CONFIG, EXIT_OK, main


@pytest.fixture()
def corpus(tmp_path):
    out = tmp_path / "corpus.tsv"
    code = main(
        [
            "synthesize",
            "--users", "30",
            "--items", "25",
            "--mean-len", "7",
            "--conformity", "0.5",
            "--zipf", "1.2",
            "--seed", "4",
            "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    return out


@pytest.fixture()
def config_file(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(
        "\n".join(
            [
                "# desk-scale settings",
                "embed_dim = 8",
                "heads = 2",
                "ffn_hidden = 16",
                "t_max = 10",
                "transformer_layers = 1",
                "batch_size = 16",
                "max_epochs = 1",
                "dropout = 0.0",
                "k = 3",
            ]
        )
    )
    return cfg


class TestSynthesize:
    def test_writes_corpus_and_labels(self, corpus):
        lines = corpus.read_text().strip().split("\n")
        assert all(len(l.split("\t")) == 3 for l in lines)
        labels = (corpus.parent / (corpus.name + ".labels")).read_text().strip().split("\n")
        assert len(labels) == len(lines)

    def test_byte_identical_rerun(self, tmp_path):
        args = [
            "synthesize", "--users", "10", "--items", "9", "--mean-len", "5",
            "--conformity", "0.3", "--zipf", "1.1", "--seed", "2",
        ]
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        assert main(args + ["--out", str(a)]) == EXIT_OK
        assert main(args + ["--out", str(b)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()


class TestTrainEvaluate:
    def test_train_then_evaluate_and_export(self, tmp_path, corpus, config_file, capsys):
        out_dir = tmp_path / "run"
        code = main(
            ["train", "--config", str(config_file), "--data", str(corpus), "--out-dir", str(out_dir), "--seed", "7", "--quiet"]
        )
        assert code == EXIT_OK
        summary = json.loads(capsys.readouterr().out.strip().split("\n")[-1])
        assert "best_valid_ndcg10" in summary
        assert (out_dir / "checkpoint.pt").exists()
        assert (out_dir / "idmap.json").exists()
        assert (out_dir / "metrics.json").exists()

        code = main(["evaluate", "--checkpoint", str(out_dir / "checkpoint.pt"), "--data", str(corpus)])
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert "HR" in report and "NDCG" in report and "slices" in report

        emb = tmp_path / "emb.tsv"
        code = main(["export-embeddings", "--checkpoint", str(out_dir / "checkpoint.pt"), "--view", "fused", "--out", str(emb)])
        assert code == EXIT_OK
        assert emb.exists()
        emb2 = tmp_path / "emb2.tsv"
        main(["export-embeddings", "--checkpoint", str(out_dir / "checkpoint.pt"), "--view", "fused", "--out", str(emb2)])
        assert emb.read_bytes() == emb2.read_bytes()

    def test_missing_config_exits_2(self, corpus):
        assert main(["train", "--config", "/nonexistent.cfg", "--data", str(corpus)]) == EXIT_CONFIG

    def test_unknown_flag_exits_2(self, corpus):
        assert main(["train", "--data", str(corpus), "--frobnicate"]) == EXIT_CONFIG

    def test_unknown_config_key_exits_2(self, tmp_path, corpus):
        bad = tmp_path / "bad.cfg"
        bad.write_text("definitely_not_a_key = 3\n")
        assert main(["train", "--config", str(bad), "--data", str(corpus)]) == EXIT_CONFIG

    def test_missing_data_exits_2(self, config_file):
        assert main(["train", "--config", str(config_file), "--data", "/no/such/file.tsv"]) == EXIT_CONFIG

    def test_nan_abort_exits_3(self, tmp_path, corpus, config_file):
        from conformrec.cli import EXIT_RUNTIME

        out_dir = tmp_path / "run_abort"
        code = main(
            [
                "train", "--config", str(config_file), "--data", str(corpus),
                "--out-dir", str(out_dir), "--lr", "1e18", "--epochs", "4", "--quiet",
            ]
        )
        assert code == EXIT_RUNTIME
        assert (out_dir / "checkpoint.pt").exists()  # last-good checkpoint saved

    def test_ablate_flag_round_trips(self, tmp_path, corpus, config_file):
        out_dir = tmp_path / "run_ablate"
        code = main(
            [
                "train", "--config", str(config_file), "--data", str(corpus),
                "--out-dir", str(out_dir), "--ablate", "cl", "--quiet",
            ]
        )
        assert code == EXIT_OK
        log = (out_dir / "loss_log.jsonl").read_text().strip().split("\n")
        entries = [json.loads(l) for l in log]
        assert all(e["L_u"] == 0.0 and e["L_v"] == 0.0 for e in entries)


class TestTheoryCheck:
    def test_outputs_and_summary(self, tmp_path, capsys):
        out_dir = tmp_path / "theory"
        code = main(["theory-check", "--tau", "0.4", "--out-dir", str(out_dir)])
        assert code == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["all_passed"]
        assert (out_dir / "contribution_curves.csv").exists()
        assert (out_dir / "scaling_bands.csv").exists()


class TestUsage:
    def test_no_subcommand_exits_2(self):
        assert main([]) == EXIT_CONFIG

    def test_unknown_subcommand_exits_2(self):
        assert main(["definitely-not-a-command"]) == EXIT_CONFIG
