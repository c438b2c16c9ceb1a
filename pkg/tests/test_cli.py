import json
import os

import pytest

from archskills.cli import build_parser, main
from archskills.store import read_json, write_jsonl

import e2e_fixture


PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@pytest.fixture(scope="module")
def cli_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    expect = e2e_fixture.build_workspace(root)
    return {"root": root, "expect": expect}


@pytest.fixture(scope="module")
def completed_pipeline(cli_root):
    """Drive all three phases through the CLI once, in order."""
    root = cli_root["root"]
    codes = {}
    codes["discover"] = main(
        ["discover", "--config", str(root / "discover.yaml"), "--run-dir", str(root / "cli_discover")]
    )
    codes["learn"] = main(
        ["learn", "--config", str(root / "learn.yaml"), "--run-dir", str(root / "cli_learn")]
    )
    e2e_fixture.write_eval_scenario(root)
    codes["eval"] = main(
        ["eval", "--config", str(root / "eval.yaml"), "--run-dir", str(root / "cli_eval")]
    )
    return {**cli_root, "codes": codes}


class TestParser:
    def test_subcommand_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_config_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["discover"])

    def test_known_subcommands(self):
        parser = build_parser()
        for command in ("discover", "learn", "eval", "cluster", "metrics", "snapshot"):
            extra = []
            if command in ("cluster", "metrics"):
                extra = ["--embeddings", "e.jsonl"]
            args = parser.parse_args([command, "--config", "c.yaml"] + extra)
            assert args.command == command


class TestPipelineCommands:
    def test_exit_codes(self, completed_pipeline):
        assert completed_pipeline["codes"] == {"discover": 0, "learn": 0, "eval": 0}

    def test_discover_artifacts(self, completed_pipeline, capsys):
        root = completed_pipeline["root"]
        report = read_json(root / "cli_discover" / "discover_report.json")
        expect = completed_pipeline["expect"]["discover"]
        assert report["clusters"] == expect["clusters"]
        assert report["failed"] == []
        assert (root / "cli_discover" / "cluster_sizes.png").read_bytes()[:8] == PNG_MAGIC

    def test_eval_report_matches_expectation(self, completed_pipeline):
        root = completed_pipeline["root"]
        report = read_json(root / "cli_eval" / "eval_report.json")
        assert report["micro_pass_at_1"] == completed_pipeline["expect"]["eval"]["micro"]
        assert report["macro_pass_at_1"] == completed_pipeline["expect"]["eval"]["macro"]

    def test_stdout_names_run_dir(self, tmp_path, capsys):
        # A fresh workspace so the shared library is left alone; stdout
        # should carry the phase banner and artifact names.
        root = tmp_path
        e2e_fixture.build_workspace(root)
        run_dir = root / "stdout_check"
        code = main(
            ["discover", "--config", str(root / "discover.yaml"), "--run-dir", str(run_dir)]
        )
        captured = capsys.readouterr()
        assert code == 0
        assert f"[discover] run dir: {run_dir}" in captured.out
        assert "wrote discover_report.json" in captured.out

    def test_snapshot_command(self, completed_pipeline, capsys):
        root = completed_pipeline["root"]
        code = main(["snapshot", "--config", str(root / "eval.yaml")])
        assert code == 0
        version = completed_pipeline["expect"]["learn"]["version_after"]
        library_dir = completed_pipeline["expect"]["library_dir"]
        assert os.path.isdir(os.path.join(library_dir, f"snapshots/v{version}"))


class TestEvalAggregateCommand:
    def test_results_mode(self, tmp_path, capsys):
        config = tmp_path / "min.yaml"
        config.write_text(f"runs_dir: {tmp_path / 'runs'}\n", encoding="utf-8")
        results = tmp_path / "results.jsonl"
        write_jsonl(
            results,
            [
                {"benchmark": "a", "correct": True},
                {"benchmark": "a", "correct": True},
                {"benchmark": "b", "correct": False},
            ],
        )
        run_dir = tmp_path / "agg"
        code = main(
            [
                "eval",
                "--config",
                str(config),
                "--results",
                str(results),
                "--run-dir",
                str(run_dir),
            ]
        )
        assert code == 0
        report = read_json(run_dir / "eval_report.json")
        assert report["micro_pass_at_1"] == 2 / 3
        assert (run_dir / "pass_rates.png").read_bytes()[:8] == PNG_MAGIC


class TestClusterAndMetricsCommands:
    def _embeddings(self, tmp_path):
        path = tmp_path / "embeddings.jsonl"
        write_jsonl(
            path,
            [
                {"id": "a1", "embedding": [1.0, 0.0], "label": "a"},
                {"id": "a2", "embedding": [0.9999, 0.0141], "label": "a"},
                {"id": "b1", "embedding": [0.0, 1.0], "label": "b"},
            ],
        )
        return path

    def _config(self, tmp_path):
        config = tmp_path / "min.yaml"
        config.write_text(f"runs_dir: {tmp_path / 'runs'}\n", encoding="utf-8")
        return config

    def test_cluster_command(self, tmp_path):
        run_dir = tmp_path / "out"
        code = main(
            [
                "cluster",
                "--config",
                str(self._config(tmp_path)),
                "--embeddings",
                str(self._embeddings(tmp_path)),
                "--run-dir",
                str(run_dir),
            ]
        )
        assert code == 0
        report = read_json(run_dir / "cluster_report.json")
        assert report["clusters"] == 2
        assert report["ari"] == 1.0

    def test_cluster_sweep_command(self, tmp_path):
        run_dir = tmp_path / "out"
        code = main(
            [
                "cluster",
                "--config",
                str(self._config(tmp_path)),
                "--embeddings",
                str(self._embeddings(tmp_path)),
                "--sweep",
                "0.000001,0.05,1.9",
                "--run-dir",
                str(run_dir),
            ]
        )
        assert code == 0
        rows = read_json(run_dir / "sweep_report.json")["rows"]
        assert [row["clusters"] for row in rows] == [3, 2, 1]
        assert (run_dir / "sweep.png").read_bytes()[:8] == PNG_MAGIC

    def test_metrics_command(self, tmp_path):
        run_dir = tmp_path / "out"
        code = main(
            [
                "metrics",
                "--config",
                str(self._config(tmp_path)),
                "--embeddings",
                str(self._embeddings(tmp_path)),
                "--ks",
                "1,2",
                "--run-dir",
                str(run_dir),
            ]
        )
        assert code == 0
        payload = read_json(run_dir / "metrics.json")
        # b1 is a singleton so only the two a-points are queries.
        assert payload["query_count"] == 2
        assert payload["skipped_queries"] == 1
        assert payload["hit_at"]["1"] == 1.0
        assert (run_dir / "metrics.csv").exists()


class TestErrorPaths:
    def test_missing_config_exits_2(self, tmp_path, capsys):
        code = main(["discover", "--config", str(tmp_path / "absent.yaml")])
        captured = capsys.readouterr()
        assert code == 2
        assert "error:" in captured.err

    def test_eval_with_empty_library_exits_2(self, tmp_path, capsys):
        from archskills.skills import SkillLibrary, save_library

        library_dir = tmp_path / "library"
        save_library(SkillLibrary(), library_dir)
        dataset = tmp_path / "eval.jsonl"
        write_jsonl(dataset, [{"problem_id": "e1", "problem": "text", "answer": 1.0}])
        chat = tmp_path / "chat.jsonl"
        write_jsonl(chat, [])
        config = tmp_path / "eval.yaml"
        config.write_text(
            "\n".join(
                [
                    f"eval_dataset: {dataset}",
                    f"library_dir: {library_dir}",
                    f"runs_dir: {tmp_path / 'runs'}",
                    "chat:",
                    "  kind: mock",
                    f"  scenario: {chat}",
                ]
            ),
            encoding="utf-8",
        )
        code = main(["eval", "--config", str(config)])
        captured = capsys.readouterr()
        assert code == 2
        assert "non-empty skill library" in captured.err

    def test_invalid_config_value_exits_2(self, tmp_path, capsys):
        config = tmp_path / "bad.yaml"
        config.write_text("alpha: 3.0\n", encoding="utf-8")
        code = main(["discover", "--config", str(config)])
        assert code == 2
        assert "alpha" in capsys.readouterr().err

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        config = tmp_path / "bad.yaml"
        config.write_text("alpa: 0.5\n", encoding="utf-8")
        code = main(["discover", "--config", str(config)])
        assert code == 2
