"""End-to-end command-line behaviour: exit codes, artifacts, reproducibility."""

import json
import os

import pytest

from sml import baselines, data, evaluation, index, synth
from sml.cli import main


def write_events_csv(path, sessions):
    """sessions: list of (session_id, [item ids]) with synthetic timestamps."""
    lines = ["session_id,timestamp,item_id"]
    t = 0
    for sid, items in sessions:
        for item in items:
            lines.append(f"{sid},{t},{item}")
            t += 1
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture
def corpus_csv(tmp_path):
    # ten sessions cycling through eight items; every item occurs often
    sessions = [(f"s{k}", [f"i{(k + j) % 8}" for j in range(3 + k % 3)])
                for k in range(10)]
    path = tmp_path / "events.csv"
    write_events_csv(path, sessions)
    return path


def run_preprocess(tmp_path, corpus_csv, out_name="out"):
    out_dir = tmp_path / out_name
    code = main(["preprocess", "--input", str(corpus_csv),
                 "--out-dir", str(out_dir), "--min-item-count", "1",
                 "--test-fraction", "0.2"])
    assert code == 0
    return out_dir


class TestExitCodes:
    def test_no_arguments_is_usage_error(self):
        assert main([]) == 1

    def test_unknown_subcommand_is_usage_error(self):
        assert main(["frobnicate"]) == 1

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "preprocess" in capsys.readouterr().out

    def test_missing_required_flag_is_usage_error(self):
        assert main(["train", "--train", "x.jsonl"]) == 1

    def test_missing_input_file_is_data_error(self, tmp_path):
        code = main(["preprocess", "--input", str(tmp_path / "nope.csv"),
                     "--out-dir", str(tmp_path / "out")])
        assert code == 2

    def test_missing_model_file_is_data_error(self, tmp_path):
        code = main(["recommend", "--model", str(tmp_path / "nope.bin"),
                     "--items", "i0"])
        assert code == 2

    def test_bad_seed_env_is_usage_error(self, monkeypatch):
        monkeypatch.setenv("SML_SEED", "not-a-number")
        assert main(["--help"]) == 1


class TestSeedEnv:
    def test_env_sets_default_seed(self, monkeypatch):
        from sml.cli import build_parser
        monkeypatch.setenv("SML_SEED", "42")
        args = build_parser().parse_args(
            ["train", "--train", "x", "--model-out", "y"])
        assert args.seed == 42

    def test_explicit_flag_wins(self, monkeypatch):
        from sml.cli import build_parser
        monkeypatch.setenv("SML_SEED", "42")
        args = build_parser().parse_args(
            ["train", "--train", "x", "--model-out", "y", "--seed", "7"])
        assert args.seed == 7


class TestPreprocess:
    def test_writes_expected_artifacts(self, tmp_path, corpus_csv):
        out_dir = run_preprocess(tmp_path, corpus_csv)
        for name in ("train.jsonl", "test.jsonl", "summary.json"):
            assert (out_dir / name).exists()

    def test_summary_counts_match_hand_count(self, tmp_path, corpus_csv, capsys):
        out_dir = run_preprocess(tmp_path, corpus_csv)
        summary = json.loads((out_dir / "summary.json").read_text())
        # 10 sessions with lengths 3,4,5,3,4,5,3,4,5,3 -> 39 events
        assert summary["input"] == {"events": 39, "sessions": 10, "items": 8}
        assert summary["preprocessed"]["sessions"] == 10
        assert summary["train"]["sessions"] == 8
        assert summary["test"]["sessions"] <= 2
        assert json.loads(capsys.readouterr().out) == summary

    def test_rerun_is_byte_identical(self, tmp_path, corpus_csv):
        a = run_preprocess(tmp_path, corpus_csv, "a")
        b = run_preprocess(tmp_path, corpus_csv, "b")
        for name in ("train.jsonl", "test.jsonl", "summary.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_header_only_input_is_data_error(self, tmp_path):
        src = tmp_path / "empty.csv"
        src.write_text("session_id,timestamp,item_id\n")
        assert main(["preprocess", "--input", str(src),
                     "--out-dir", str(tmp_path / "out")]) == 2


class TestStats:
    def test_writes_tsvs(self, tmp_path, corpus_csv, capsys):
        out_dir = run_preprocess(tmp_path, corpus_csv)
        stats_dir = tmp_path / "stats"
        code = main(["stats", "--sessions", str(out_dir / "train.jsonl"),
                     "--out-dir", str(stats_dir)])
        assert code == 0
        hist = (stats_dir / "length_histogram.tsv").read_text()
        assert hist.startswith("length\tcount")
        assert (stats_dir / "repeat_fractions.tsv").exists()
        assert "sessions\t8" in capsys.readouterr().out


def train_args(out_dir, model_name="model.bin", **extra):
    base = ["train", "--train", str(out_dir / "train.jsonl"),
            "--model-out", str(out_dir / model_name),
            "--dim", "8", "--max-epochs", "2", "--batch-size", "4",
            "--samples-per-session", "2", "--eval-n", "5",
            "--validation-fraction", "0.2", "--seed", "3"]
    for flag, value in extra.items():
        base += [flag] if value is True else [flag, str(value)]
    return base


class TestTrain:
    def test_produces_loadable_model_and_history(self, tmp_path, corpus_csv,
                                                 capsys):
        out_dir = run_preprocess(tmp_path, corpus_csv)
        assert main(train_args(out_dir)) == 0
        out = capsys.readouterr().out
        assert "model\tSML-MaxPool-Triplet" in out
        model, vocab = index.load_model(str(out_dir / "model.bin"))
        assert model.config.embedding_dim == 8
        assert len(vocab) == 8
        history = (out_dir / "model.bin.history.csv").read_text().splitlines()
        assert history[0] == "epoch,train_loss,val_rec20,lr"
        assert len(history) == 3

    def test_fixed_seed_gives_identical_model_bytes(self, tmp_path, corpus_csv):
        out_dir = run_preprocess(tmp_path, corpus_csv)
        assert main(train_args(out_dir, "a.bin")) == 0
        assert main(train_args(out_dir, "b.bin")) == 0
        assert ((out_dir / "a.bin").read_bytes()
                == (out_dir / "b.bin").read_bytes())

    def test_loss_and_encoder_flags_reach_the_name(self, tmp_path, corpus_csv,
                                                   capsys):
        out_dir = run_preprocess(tmp_path, corpus_csv)
        code = main(train_args(out_dir, **{"--encoder": "AvgPool",
                                           "--loss": "BPR"}))
        assert code == 0
        assert "model\tSML-AvgPool-BPR" in capsys.readouterr().out

    def test_invalid_flag_combination_is_usage_error(self, tmp_path, corpus_csv):
        out_dir = run_preprocess(tmp_path, corpus_csv)
        # a conv filter wider than the session window is contradictory
        code = main(train_args(out_dir, **{"--encoder": "TextCNN",
                                           "--conv-filter-sizes": "1,20"}))
        assert code == 1


class TestEvaluate:
    def test_baseline_requires_train_flag(self, tmp_path, corpus_csv):
        out_dir = run_preprocess(tmp_path, corpus_csv)
        code = main(["evaluate", "--method", "POP",
                     "--test", str(out_dir / "test.jsonl")])
        assert code == 1

    def test_unknown_method_is_usage_error(self, tmp_path, corpus_csv):
        out_dir = run_preprocess(tmp_path, corpus_csv)
        code = main(["evaluate", "--method", "ORACLE",
                     "--test", str(out_dir / "test.jsonl"),
                     "--train", str(out_dir / "train.jsonl")])
        assert code == 1

    @pytest.mark.parametrize("method", ["POP", "SPOP", "MARKOV1", "SKNN",
                                        "VSKNN"])
    def test_baseline_report_matches_library_call(self, tmp_path, corpus_csv,
                                                  capsys, method):
        out_dir = run_preprocess(tmp_path, corpus_csv)
        report_path = tmp_path / "report.json"
        code = main(["evaluate", "--method", method,
                     "--test", str(out_dir / "test.jsonl"),
                     "--train", str(out_dir / "train.jsonl"),
                     "--n", "4", "--report-out", str(report_path)])
        assert code == 0
        got = json.loads(report_path.read_text())

        train_ds = data.dataset_from_sessions(
            data.read_sessions_jsonl(str(out_dir / "train.jsonl")))
        test_ds = data.dataset_from_sessions(
            data.read_sessions_jsonl(str(out_dir / "test.jsonl")),
            train_ds.vocab)
        fit = {"POP": baselines.fit_pop, "SPOP": baselines.fit_spop,
               "MARKOV1": baselines.fit_markov,
               "SKNN": lambda ds: baselines.fit_sknn(ds, k=100),
               "VSKNN": lambda ds: baselines.VSknnRecommender(
                   baselines.fit_sknn(ds, k=100))}[method]
        want = evaluation.evaluate(fit(train_ds), test_ds, n=4)
        assert got["method"] == method
        for key, value in want.as_dict().items():
            assert got[key] == value, key
        table = capsys.readouterr().out
        assert f"method\t{method}" in table
        assert "recall@4\t" in table

    def test_sml_method_round_trip(self, tmp_path, corpus_csv, capsys):
        out_dir = run_preprocess(tmp_path, corpus_csv)
        assert main(train_args(out_dir)) == 0
        capsys.readouterr()
        report_path = tmp_path / "sml_report.json"
        code = main(["evaluate",
                     "--method", f"SML:{out_dir / 'model.bin'}",
                     "--test", str(out_dir / "test.jsonl"),
                     "--n", "4", "--report-out", str(report_path)])
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["points"] >= 1
        assert 0.0 <= report["recall"] <= 1.0

    def test_report_bytes_are_reproducible(self, tmp_path, corpus_csv):
        out_dir = run_preprocess(tmp_path, corpus_csv)
        paths = []
        for name in ("r1.json", "r2.json"):
            path = tmp_path / name
            assert main(["evaluate", "--method", "POP",
                         "--test", str(out_dir / "test.jsonl"),
                         "--train", str(out_dir / "train.jsonl"),
                         "--report-out", str(path)]) == 0
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()


class TestRecommend:
    def _trained(self, tmp_path, corpus_csv):
        out_dir = run_preprocess(tmp_path, corpus_csv)
        assert main(train_args(out_dir)) == 0
        return out_dir / "model.bin"

    def test_prints_rank_id_score_lines(self, tmp_path, corpus_csv, capsys):
        model_path = self._trained(tmp_path, corpus_csv)
        capsys.readouterr()
        code = main(["recommend", "--model", str(model_path),
                     "--items", "i0,i1", "--n", "5"])
        assert code == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert len(lines) == 5
        for rank, line in enumerate(lines, start=1):
            cells = line.split("\t")
            assert int(cells[0]) == rank
            assert cells[1].startswith("i")
            float(cells[2])

    def test_matches_library_recommender(self, tmp_path, corpus_csv, capsys):
        model_path = self._trained(tmp_path, corpus_csv)
        capsys.readouterr()
        assert main(["recommend", "--model", str(model_path),
                     "--items", "i2,i3", "--n", "4"]) == 0
        got = [line.split("\t")[1] for line in
               capsys.readouterr().out.strip().split("\n")]

        model, vocab = index.load_model(str(model_path))
        rec = index.SmlRecommender.from_model(model)
        prefix = [vocab.index["i2"], vocab.index["i3"]]
        want = [vocab.ids[i] for i in rec.recommend(prefix, 4)]
        assert got == want

    def test_unknown_items_are_listed_and_skipped(self, tmp_path, corpus_csv,
                                                  capsys):
        model_path = self._trained(tmp_path, corpus_csv)
        capsys.readouterr()
        code = main(["recommend", "--model", str(model_path),
                     "--items", "i0,zzz", "--n", "3"])
        captured = capsys.readouterr()
        assert code == 0
        assert "zzz" in captured.err
        assert len(captured.out.strip().split("\n")) == 3

    def test_all_unknown_items_is_data_error(self, tmp_path, corpus_csv,
                                             capsys):
        model_path = self._trained(tmp_path, corpus_csv)
        capsys.readouterr()
        assert main(["recommend", "--model", str(model_path),
                     "--items", "zzz,yyy"]) == 2

    def test_empty_items_is_usage_error(self, tmp_path, corpus_csv):
        model_path = self._trained(tmp_path, corpus_csv)
        assert main(["recommend", "--model", str(model_path),
                     "--items", ","]) == 1
