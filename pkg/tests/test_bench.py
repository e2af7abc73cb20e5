import dataclasses
import json
import subprocess
import sys

import pytest

from ouroboros import (InputError, PhrasePool, RunFailure,
                       ablation, ingest_corpus, load_config_file,
                       locality_experiment, locality_order, make_config,
                       run_benchmark, tune)
from ouroboros.bench import CSV_COLUMNS

from corpora import (reference_corpus_text, tagged_corpus_text, write_corpus)


@pytest.fixture
def reference_corpus(tmp_path):
    return write_corpus(tmp_path, "reference.txt", reference_corpus_text())


@pytest.fixture
def tagged_corpus(tmp_path):
    return write_corpus(tmp_path, "tagged.txt", tagged_corpus_text())


def small_config(corpus, **overrides):
    base = dict(corpus=corpus, tokenizer="whitespace",
                target_spec="ngram:order=3",
                draft_spec="perturbed:epsilon=0.05",
                gamma=4, beta=5, k=3, window=8, ngram=3, max_new=16, seed=1)
    base.update(overrides)
    return make_config(None, **base)


class TestIngest:
    def test_byte_tokenizer_maps_bytes(self, tmp_path):
        path = write_corpus(tmp_path, "c.txt", "ab\n")
        corpus = ingest_corpus(path, "byte")
        assert corpus.prompts == [[97, 98]]
        assert corpus.vocab_size == 257
        assert corpus.eos_id == 256

    def test_whitespace_ids_by_first_occurrence(self, tmp_path):
        path = write_corpus(tmp_path, "c.txt", "x y x\n")
        corpus = ingest_corpus(path, "whitespace")
        assert corpus.prompts == [[0, 1, 0]]
        assert corpus.eos_id == 2

    def test_identical_lines_tokenize_identically(self, tmp_path):
        path = write_corpus(tmp_path, "c.txt", "a b c\na b c\n")
        corpus = ingest_corpus(path, "whitespace")
        assert corpus.prompts[0] == corpus.prompts[1]

    def test_empty_file_rejected(self, tmp_path):
        path = write_corpus(tmp_path, "c.txt", "\n\n")
        with pytest.raises(InputError):
            ingest_corpus(path, "byte")

    def test_oversized_line_names_its_line(self, tmp_path):
        path = write_corpus(tmp_path, "c.txt", "ok\n" + "x" * 10000 + "\n")
        with pytest.raises(InputError, match="line 2"):
            ingest_corpus(path, "byte")

    def test_unknown_tokenizer_rejected(self, tmp_path):
        path = write_corpus(tmp_path, "c.txt", "a\n")
        with pytest.raises(InputError):
            ingest_corpus(path, "bpe")

    def test_tagged_lines_carry_tasks(self, tmp_path):
        path = write_corpus(tmp_path, "c.txt",
                            "task:a|x y\ntask:b|y z\n")
        corpus = ingest_corpus(path, "whitespace", tagged=True)
        assert corpus.tasks == ["a", "b"]
        assert corpus.prompts[0] == [0, 1]

    def test_untagged_line_rejected_in_tagged_mode(self, tmp_path):
        path = write_corpus(tmp_path, "c.txt", "task:a|x y\nplain line\n")
        with pytest.raises(InputError, match="line 2"):
            ingest_corpus(path, "whitespace", tagged=True)


class TestConfig:
    def test_file_parsing_with_comments(self, tmp_path):
        path = tmp_path / "bench.cfg"
        path.write_text("# comment\ngamma = 7\ncorpus = c.txt  # inline\n",
                        encoding="utf-8")
        values = load_config_file(path)
        assert values == {"gamma": "7", "corpus": "c.txt"}

    def test_bad_line_rejected(self, tmp_path):
        path = tmp_path / "bench.cfg"
        path.write_text("gamma 7\n", encoding="utf-8")
        with pytest.raises(InputError, match="line 1"):
            load_config_file(path)

    def test_flags_override_file_values(self):
        cfg = make_config({"gamma": "7", "beta": "3"}, gamma=9)
        assert cfg.gamma == 9
        assert cfg.beta == 3

    def test_boolean_and_list_coercion(self):
        cfg = make_config({"harvest": "no", "engines": "vanilla,ouroboros",
                           "temperature": "0.5"})
        assert cfg.harvest is False
        assert cfg.engines == ("vanilla", "ouroboros")
        assert cfg.temperature == 0.5

    def test_unknown_key_rejected(self):
        with pytest.raises(InputError):
            make_config({"gama": "7"})

    def test_validation_catches_unknown_engine(self, reference_corpus):
        cfg = small_config(reference_corpus, engines=("vanila",))
        with pytest.raises(InputError):
            cfg.validate()


class TestRunBenchmark:
    def test_row_accounting(self, tmp_path):
        path = write_corpus(tmp_path, "c.txt", reference_corpus_text(n_lines=2))
        cfg = small_config(path, engines=("vanilla", "ouroboros"))
        report = run_benchmark(cfg)
        assert len(report.rows) == 2 * 2

    def test_vanilla_rows_have_unit_block_efficiency(self, reference_corpus):
        report = run_benchmark(small_config(reference_corpus))
        for row in report.rows:
            if row["engine"] == "vanilla":
                assert row["eta"] == 1.0
                assert row["modeled_speedup"] == 1.0

    def test_csv_schema(self, reference_corpus, tmp_path):
        out = tmp_path / "r.csv"
        cfg = small_config(reference_corpus, out_csv=str(out))
        run_benchmark(cfg)
        lines = out.read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == 1 + len(ingest_corpus(reference_corpus,
                                                   "whitespace").prompts) * 4

    def test_identical_seeds_give_identical_reports(self, reference_corpus,
                                                    tmp_path):
        out = tmp_path / "report.json"
        cfg = small_config(reference_corpus, out_json=str(out))
        run_benchmark(cfg)
        first = json.loads(out.read_text())
        run_benchmark(cfg)
        second = json.loads(out.read_text())
        first.pop("timestamp"), second.pop("timestamp")
        assert first == second

    def test_pool_file_roundtrips_through_a_run(self, reference_corpus,
                                                tmp_path):
        pool_path = tmp_path / "pool.txt"
        cfg = small_config(reference_corpus, pool_file=str(pool_path),
                           engines=("ouroboros",))
        run_benchmark(cfg)
        assert pool_path.exists()
        saved = PhrasePool.load(pool_path)
        assert len(saved) > 0
        # a second run preloads the saved pool and still succeeds
        report = run_benchmark(cfg)
        assert len(report.rows) == 8

    def test_run_failure_names_entry_and_engine(self, reference_corpus):
        # a 4-token vocabulary cannot host the corpus prompts
        cfg = small_config(reference_corpus, target_spec="counter:vocab=4",
                           draft_spec="perturbed:epsilon=0.0",
                           engines=("vanilla",))
        with pytest.raises(RunFailure, match=r"entry=0 engine=vanilla"):
            run_benchmark(cfg)


class TestAblation:
    def test_ladder_rungs_present(self, reference_corpus):
        report = ablation(small_config(reference_corpus))
        engines = {row["engine"] for row in report.rows}
        assert engines == {"ouroboros:base", "ouroboros:+phrase_draft",
                           "ouroboros:+lengthening", "ouroboros:+harvest",
                           "ouroboros:+reuse"}

    def test_base_rung_has_unit_reduction(self, reference_corpus):
        report = ablation(small_config(reference_corpus))
        for row in report.rows:
            if row["engine"] == "ouroboros:base":
                assert row["c"] == 1.0


class TestTune:
    def test_mock_objective_finds_the_minimum(self, reference_corpus):
        cfg = small_config(reference_corpus, seed=5)
        picked = tune(cfg, "LH", objective=lambda g, w, b, k: abs(g - 6))
        assert picked.gamma == 6
        assert picked.k == 3

    def test_constant_objective_keeps_sampled_candidates(self,
                                                         reference_corpus):
        import numpy as np
        cfg = small_config(reference_corpus, seed=5)
        picked = tune(cfg, "LH", objective=lambda g, w, b, k: 1.0)
        rng = np.random.default_rng(5)
        w_hat = int(rng.integers(15, 21))
        b_hat = int(rng.integers(5, 8))
        g_hat = int(rng.integers(2, 7))
        assert (picked.gamma, picked.window, picked.beta) == (g_hat, w_hat, b_hat)

    def test_hh_range_is_wider(self, reference_corpus):
        cfg = small_config(reference_corpus, seed=2)
        picked = tune(cfg, "HH", objective=lambda g, w, b, k: -g)
        assert picked.gamma == 14

    def test_k_is_always_three(self, reference_corpus):
        cfg = small_config(reference_corpus, seed=0)
        for task in ("HH", "LH"):
            assert tune(cfg, task, objective=lambda g, w, b, k: g * w * b).k == 3

    def test_real_objective_runs_on_a_slice(self, reference_corpus):
        cfg = small_config(reference_corpus, max_new=8, tune_slice=2)
        picked = tune(cfg, "LH")
        assert 2 <= picked.gamma <= 6
        assert 15 <= picked.window <= 20
        assert 5 <= picked.beta <= 7

    def test_empty_slice_rejected(self, reference_corpus):
        cfg = small_config(reference_corpus, tune_slice=0)
        with pytest.raises(InputError):
            tune(cfg, "LH")

    def test_unknown_task_type_rejected(self, reference_corpus):
        with pytest.raises(InputError):
            tune(small_config(reference_corpus), "XX")


class TestLocality:
    def test_cn_blocks_order(self):
        tasks = ["a"] * 20 + ["b"] * 20 + ["c"] * 20 + ["d"] * 20
        order = locality_order(tasks, 10, seed=0)
        got_tasks = [tasks[i] for i in order]
        assert got_tasks == (["a"] * 10 + ["b"] * 10 + ["c"] * 10 + ["d"] * 10) * 2
        assert sorted(order) == list(range(80))

    def test_cn_twenty_groups_whole_tasks(self):
        tasks = ["a"] * 20 + ["b"] * 20
        order = locality_order(tasks, 20, seed=0)
        assert [tasks[i] for i in order] == ["a"] * 20 + ["b"] * 20

    def test_shuffle_is_a_seeded_permutation(self):
        tasks = ["a"] * 10 + ["b"] * 10
        order1 = locality_order(tasks, "shuffle", seed=3)
        order2 = locality_order(tasks, "shuffle", seed=3)
        assert order1 == order2
        assert sorted(order1) == list(range(20))
        assert order1 != list(range(20))

    def test_bad_cn_rejected(self):
        with pytest.raises(InputError):
            locality_order(["a"], "sometimes", seed=0)
        with pytest.raises(InputError):
            locality_order(["a"], 0, seed=0)

    def test_reuse_cuts_draft_forwards(self, tagged_corpus):
        cfg = make_config(None, corpus=tagged_corpus, tokenizer="whitespace",
                          target_spec="ngram:order=3",
                          draft_spec="perturbed:epsilon=0.05",
                          gamma=4, beta=5, k=3, window=8, ngram=4,
                          max_new=24, seed=3, prompt_warmup=False)
        on = locality_experiment(cfg, 20)
        off = locality_experiment(dataclasses.replace(cfg, reuse=False), 20)
        assert (sum(r["draft_fwd"] for r in on.rows)
                < sum(r["draft_fwd"] for r in off.rows))

    def test_report_carries_ordering_metadata(self, tagged_corpus):
        cfg = make_config(None, corpus=tagged_corpus, tokenizer="whitespace",
                          target_spec="ngram:order=2",
                          draft_spec="perturbed:epsilon=0.0",
                          gamma=2, max_new=6, seed=0)
        report = locality_experiment(cfg, 20)
        assert report.aggregates["locality"]["cn"] == 20
        assert len(report.rows) == 80
        assert all("task" in row for row in report.rows)

    def test_missing_cn_rejected(self, tagged_corpus):
        cfg = make_config(None, corpus=tagged_corpus, max_new=4)
        with pytest.raises(InputError):
            locality_experiment(cfg)


class TestCli:
    def run_cli(self, *args):
        return subprocess.run([sys.executable, "-m", "ouroboros.cli", *args],
                              capture_output=True, text=True)

    def test_run_subcommand_writes_reports(self, reference_corpus, tmp_path):
        csv_path = tmp_path / "out.csv"
        json_path = tmp_path / "out.json"
        proc = self.run_cli(
            "run", "--corpus", reference_corpus, "--tokenizer", "whitespace",
            "--target-spec", "ngram:order=3",
            "--draft-spec", "perturbed:epsilon=0.05",
            "--gamma", "4", "--beta", "5", "--max-new", "12",
            "--out-csv", str(csv_path), "--out-json", str(json_path))
        assert proc.returncode == 0, proc.stderr
        assert csv_path.exists() and json_path.exists()
        assert "ouroboros" in proc.stdout

    def test_config_file_with_flag_override(self, reference_corpus, tmp_path):
        cfg_path = tmp_path / "bench.cfg"
        cfg_path.write_text(
            f"corpus = {reference_corpus}\ntokenizer = whitespace\n"
            "target_spec = ngram:order=3\ndraft_spec = perturbed:epsilon=0.0\n"
            "gamma = 3\nmax_new = 8\nengines = vanilla\n", encoding="utf-8")
        proc = self.run_cli("run", "--config", str(cfg_path), "--max-new", "4")
        assert proc.returncode == 0, proc.stderr

    def test_usage_error_exits_one(self):
        proc = self.run_cli("run", "--gamma", "not-a-number")
        assert proc.returncode == 1

    def test_config_error_exits_one(self):
        proc = self.run_cli("run", "--corpus", "does-not-exist.txt")
        assert proc.returncode == 1
        assert "error" in proc.stderr

    def test_runtime_failure_exits_two(self, reference_corpus):
        proc = self.run_cli(
            "run", "--corpus", reference_corpus, "--tokenizer", "whitespace",
            "--target-spec", "counter:vocab=4",
            "--draft-spec", "perturbed:epsilon=0.0",
            "--engines", "vanilla", "--max-new", "4")
        assert proc.returncode == 2
        assert "entry=0" in proc.stderr and "vanilla" in proc.stderr

    def test_tune_prints_chosen_hyperparameters(self, reference_corpus):
        proc = self.run_cli(
            "tune", "--corpus", reference_corpus, "--tokenizer", "whitespace",
            "--target-spec", "ngram:order=3",
            "--draft-spec", "perturbed:epsilon=0.05",
            "--max-new", "8", "--task-type", "LH", "--seed", "4")
        assert proc.returncode == 0, proc.stderr
        assert "gamma=" in proc.stdout and "k=3" in proc.stdout

    def test_locality_subcommand(self, tagged_corpus, tmp_path):
        proc = self.run_cli(
            "locality", "--corpus", tagged_corpus, "--tokenizer", "whitespace",
            "--target-spec", "ngram:order=3",
            "--draft-spec", "perturbed:epsilon=0.05",
            "--cn", "20", "--max-new", "8",
            "--out-json", str(tmp_path / "loc.json"))
        assert proc.returncode == 0, proc.stderr

    def test_ablate_subcommand(self, reference_corpus):
        proc = self.run_cli(
            "ablate", "--corpus", reference_corpus, "--tokenizer", "whitespace",
            "--target-spec", "ngram:order=3",
            "--draft-spec", "perturbed:epsilon=0.05", "--max-new", "8")
        assert proc.returncode == 0, proc.stderr
        assert "+phrase_draft" in proc.stdout
