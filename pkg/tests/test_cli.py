import json

import pytest

from cnir import __version__
from cnir.cli import dispatch
from cnir.schemas.corpus import JudgmentSet, RankedList
from cnir.services.corpus_io import read_run, write_qrels, write_run
from cnir.services.dataset import INDEX_FILE, QRELS_FILE
from conftest import SMALL_SYNTH

SMALL = [f"--set={key}={value}" for key, value in {
    "seed": 3, "feature_maps": 4, "window_sizes": "1,2", "term_hidden": 4, "score_hidden": 4,
    "kernels": 5, "pretrain_epochs": 1, "max_epochs": 1, "batch_size": 4, "m": 2,
}.items()]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    code = dispatch([
        "gen-synth", "--out", str(out), "--seed", str(SMALL_SYNTH["seed"]),
        "--n-queries", str(SMALL_SYNTH["n_queries"]), "--n-docs", str(SMALL_SYNTH["n_docs"]),
        "--vocab-size", str(SMALL_SYNTH["vocab_size"]), "--synonym-pairs", str(SMALL_SYNTH["synonym_pairs"]),
    ])
    assert code == 0
    return out


@pytest.fixture
def run_files(tmp_path):
    judgments = JudgmentSet(grades={"q1": {"a": 1, "b": 0}, "q2": {"c": 2}}, max_grade=2)
    write_qrels(judgments, tmp_path / "qrels.txt")
    write_run(
        [
            RankedList(query_id="q1", entries=(("a", 2.0), ("b", 1.0))),
            RankedList(query_id="q2", entries=(("x", 2.0), ("c", 1.0))),
        ],
        tmp_path / "run.txt",
    )
    return tmp_path


class TestParsing:
    def test_version(self, capsys):
        assert dispatch(["--version"]) == 0
        assert f"cnir {__version__}" in capsys.readouterr().out

    def test_missing_command(self):
        assert dispatch([]) == 1

    def test_unknown_flag(self, run_files):
        assert dispatch(["eval", "--run", str(run_files / "run.txt"), "--bogus"]) == 1

    def test_unknown_config_key(self, run_files):
        args = ["eval", "--run", str(run_files / "run.txt"), "--qrels", str(run_files / "qrels.txt")]
        assert dispatch(args + ["--set", "no_such_key=1"]) == 1

    def test_bad_config_value(self, run_files):
        args = ["eval", "--run", str(run_files / "run.txt"), "--qrels", str(run_files / "qrels.txt")]
        assert dispatch(args + ["--set", "k=0"]) == 1


class TestEval:
    def test_happy_path(self, run_files, capsys):
        out = run_files / "metrics.json"
        per_query = run_files / "per_query.tsv"
        code = dispatch([
            "eval", "--run", str(run_files / "run.txt"), "--qrels", str(run_files / "qrels.txt"),
            "--per-query", str(per_query), "-o", str(out),
        ])
        assert code == 0
        means = json.loads(out.read_text())[str(run_files / "run.txt")]
        assert means["map"] == pytest.approx(0.75)
        assert means["evaluated"] == 2
        assert len(per_query.read_text().splitlines()) == 3
        assert "Evaluation" in capsys.readouterr().out

    def test_malformed_qrels(self, run_files):
        (run_files / "bad.txt").write_text("q1 0 a\n")
        assert dispatch(["eval", "--run", str(run_files / "run.txt"), "--qrels", str(run_files / "bad.txt")]) == 2

    def test_missing_qrels(self, run_files, capsys):
        code = dispatch(["eval", "--run", str(run_files / "run.txt"), "--qrels", str(run_files / "nope.txt")])
        assert code == 2
        assert "nope.txt" in capsys.readouterr().err.replace("\n", "")

    def test_missing_run(self, run_files):
        assert dispatch(["eval", "--run", str(run_files / "nope.txt"), "--qrels", str(run_files / "qrels.txt")]) == 2

    @pytest.mark.parametrize("flag", ["-o", "--per-query"])
    def test_unwritable_output(self, run_files, flag):
        target = run_files / "no" / "such" / "dir" / "out"
        code = dispatch([
            "eval", "--run", str(run_files / "run.txt"), "--qrels", str(run_files / "qrels.txt"),
            flag, str(target),
        ])
        assert code == 2
        assert not target.exists()


class TestCollectionCommands:
    def test_gen_synth_files(self, data_dir):
        for name in ("corpus.jsonl", QRELS_FILE, "queries_train.tsv", "kg_edges.tsv", "synth.conf"):
            assert (data_dir / name).is_file()

    def test_index(self, data_dir):
        assert dispatch(["index", "--data", str(data_dir)]) == 0
        assert (data_dir / INDEX_FILE).is_file()

    def test_rank_bm25_baselines(self, data_dir, tmp_path):
        for method in ("none", "tfidf", "rm"):
            output = tmp_path / f"{method}.txt"
            code = dispatch([
                "rank", "--data", str(data_dir), "--method", method, "--ranker", "bm25",
                "--split", "train", "-o", str(output), *SMALL,
            ])
            assert code == 0
            runs = read_run(output)
            assert len(runs) == SMALL_SYNTH["n_queries"] - 6

    def test_reformulate_tfidf(self, data_dir, tmp_path):
        output = tmp_path / "tfidf.tsv"
        assert dispatch(["reformulate", "--data", str(data_dir), "--method", "tfidf", "-o", str(output)]) == 0
        rows = [line.split("\t") for line in output.read_text().splitlines()]
        assert len(rows) == 3
        assert all(len(text.split()) > 2 for _, text in rows)

    def test_rl_without_policy(self, data_dir, tmp_path):
        args = ["reformulate", "--data", str(data_dir), "--method", "rl", "-o", str(tmp_path / "x.tsv")]
        assert dispatch(args + ["--set", f"output_dir={tmp_path}"]) == 1

    def test_knrm_without_checkpoint(self, data_dir, tmp_path):
        args = ["rank", "--data", str(data_dir), "-o", str(tmp_path / "x.txt"), "--set", f"output_dir={tmp_path}"]
        assert dispatch(args) == 1

    def test_missing_data_dir(self, tmp_path):
        assert dispatch(["rank", "--data", str(tmp_path / "nothing"), "-o", str(tmp_path / "x.txt")]) == 2

    @pytest.mark.slow
    def test_end_to_end(self, data_dir, tmp_path):
        common = ["--data", str(data_dir), "--set", f"output_dir={tmp_path / 'runs'}", *SMALL]
        assert dispatch(["pretrain", *common]) == 0
        assert dispatch(["train", *common]) == 0
        runs = []
        for method in ("none", "rl"):
            output = tmp_path / f"{method}.txt"
            assert dispatch(["rank", *common, "--method", method, "-o", str(output)]) == 0
            runs += ["--run", str(output)]
        report = tmp_path / "report.json"
        assert dispatch(["eval", *runs, "--qrels", str(data_dir / QRELS_FILE), "-o", str(report)]) == 0
        assert set(json.loads(report.read_text())) == {str(tmp_path / "none.txt"), str(tmp_path / "rl.txt")}
