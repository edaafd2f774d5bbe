import json
import socket
import threading
import time

import pytest
from click.testing import CliRunner

from bubblesim.catalog import save_catalog
from bubblesim.cli import main
from bubblesim.simulation import INCOMPLETE_SENTINEL


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def catalog_path(small_catalog, tmp_path):
    path = tmp_path / "catalog.jsonl"
    save_catalog(small_catalog, path)
    return str(path)


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "n_users": 2, "items_per_iteration": 2, "n_iterations": 3, "seed": 9,
    }), encoding="utf-8")
    return str(path)


class TestRunCommand:
    def test_successful_run(self, runner, catalog_path, config_path, tmp_path):
        out = tmp_path / "run"
        result = runner.invoke(main, [
            "run", "--config", config_path, "--catalog", catalog_path, "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert (out / "metrics.csv").exists()
        summary_lines = (out / "summary.csv").read_text().strip().split("\n")
        assert len(summary_lines) == 1 + 3 * 3  # header + iterations x levels
        # one stdout summary line per iteration
        data_lines = [l for l in result.output.splitlines() if l.strip() and l.strip()[0].isdigit()]
        assert len(data_lines) == 3

    def test_missing_config_is_exit_1(self, runner, catalog_path, tmp_path):
        result = runner.invoke(main, [
            "run", "--config", "/does/not/exist.json",
            "--catalog", catalog_path, "--out", str(tmp_path / "x"),
        ])
        assert result.exit_code == 1

    def test_rerun_same_seed_byte_identical(self, runner, catalog_path, config_path, tmp_path):
        outputs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            result = runner.invoke(main, [
                "run", "--config", config_path, "--catalog", catalog_path, "--out", str(out),
            ])
            assert result.exit_code == 0
            outputs.append(out)
        assert (outputs[0] / "metrics.csv").read_bytes() == (outputs[1] / "metrics.csv").read_bytes()
        assert (outputs[0] / "records.jsonl").read_bytes() == (outputs[1] / "records.jsonl").read_bytes()

    def test_runtime_failure_is_exit_2_with_sentinel(self, runner, catalog_path, tmp_path):
        config = tmp_path / "big.json"
        config.write_text(json.dumps({"n_users": 2, "n_iterations": 500}), encoding="utf-8")
        out = tmp_path / "fail"
        result = runner.invoke(main, [
            "run", "--config", str(config), "--catalog", catalog_path, "--out", str(out),
        ])
        assert result.exit_code == 2
        assert (out / INCOMPLETE_SENTINEL).exists()

    def test_backend_override_validates(self, runner, catalog_path, config_path, tmp_path):
        result = runner.invoke(main, [
            "run", "--config", config_path, "--catalog", catalog_path,
            "--out", str(tmp_path / "x"), "--backend", "llm",
        ])
        # llm backend without endpoint settings is a usage error
        assert result.exit_code == 1


class TestSweepCommand:
    def test_sweep_counts(self, runner, catalog_path, config_path, tmp_path):
        out = tmp_path / "sweep"
        result = runner.invoke(main, [
            "sweep", "--config", config_path, "--catalog", catalog_path,
            "--out", str(out), "--axis", "cscmr",
            "--values", "0,25,50,75,100", "--seeds", "1,2",
        ])
        assert result.exit_code == 0, result.output
        run_dirs = [p for p in out.iterdir() if p.is_dir()]
        assert len(run_dirs) == 10
        lines = (out / "sweep_summary.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 5 * 2 * 3  # values x seeds x iterations

    def test_unknown_axis_is_exit_1(self, runner, catalog_path, tmp_path):
        result = runner.invoke(main, [
            "sweep", "--catalog", catalog_path, "--out", str(tmp_path / "s"),
            "--axis", "nope", "--values", "1", "--seeds", "1",
        ])
        assert result.exit_code == 1

    def test_bad_seeds_are_exit_1(self, runner, catalog_path, tmp_path):
        result = runner.invoke(main, [
            "sweep", "--catalog", catalog_path, "--out", str(tmp_path / "s"),
            "--axis", "cscmr", "--values", "0", "--seeds", "one,two",
        ])
        assert result.exit_code == 1


class TestMetricsCommand:
    def run_once(self, runner, catalog_path, config_path, out):
        result = runner.invoke(main, [
            "run", "--config", config_path, "--catalog", catalog_path, "--out", str(out),
        ])
        assert result.exit_code == 0

    def test_recompute_identical(self, runner, catalog_path, config_path, tmp_path):
        out = tmp_path / "run"
        self.run_once(runner, catalog_path, config_path, out)
        result = runner.invoke(main, ["metrics", "--run", str(out)])
        assert result.exit_code == 0
        assert "identical to" in result.output

    def test_window_flip_flagged(self, runner, catalog_path, config_path, tmp_path):
        out = tmp_path / "run"
        self.run_once(runner, catalog_path, config_path, out)
        result = runner.invoke(main, ["metrics", "--run", str(out), "--window", "cumulative"])
        assert result.exit_code == 0
        assert "OVERRIDDEN" in result.output
        assert (out / "metrics.cumulative.positive.csv").exists()

    def test_corrupt_log_is_exit_2(self, runner, catalog_path, config_path, tmp_path):
        out = tmp_path / "run"
        self.run_once(runner, catalog_path, config_path, out)
        records = out / "records.jsonl"
        records.write_text(records.read_text()[:50] + "\n", encoding="utf-8")
        result = runner.invoke(main, ["metrics", "--run", str(out)])
        assert result.exit_code == 2


class TestFixtureCommand:
    def test_writes_fixture(self, runner, tmp_path):
        out = tmp_path / "cat.jsonl"
        result = runner.invoke(main, [
            "fixture", "--seed", "7", "--n-items", "100", "--shape", "4,2,2",
            "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert out.exists()
        assert "100 items" in result.output

    def test_invalid_shape_is_exit_1(self, runner, tmp_path):
        result = runner.invoke(main, [
            "fixture", "--seed", "7", "--n-items", "10", "--shape", "4,two",
            "--out", str(tmp_path / "x.jsonl"),
        ])
        assert result.exit_code == 1

    def test_negative_shape_is_exit_1(self, runner, tmp_path):
        result = runner.invoke(main, [
            "fixture", "--seed", "7", "--n-items", "10", "--shape", "4,-1,2",
            "--out", str(tmp_path / "x.jsonl"),
        ])
        assert result.exit_code == 1


@pytest.fixture(scope="module")
def live_server():
    import uvicorn

    from bubblesim.service import app

    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline:
            pytest.skip("uvicorn did not start")
        time.sleep(0.05)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


class TestRemoteServer:
    def test_run_through_live_service(self, runner, catalog_path, config_path, tmp_path, live_server):
        out = tmp_path / "remote_run"
        result = runner.invoke(main, [
            "--server", live_server,
            "run", "--config", config_path, "--catalog", catalog_path, "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert (out / "metrics.csv").exists()

    def test_remote_usage_error_is_exit_1(self, runner, catalog_path, tmp_path, live_server):
        result = runner.invoke(main, [
            "--server", live_server,
            "metrics", "--run", str(tmp_path / "missing"),
        ])
        assert result.exit_code == 1

    def test_remote_matches_local_bytes(self, runner, catalog_path, config_path, tmp_path, live_server):
        local, remote = tmp_path / "local", tmp_path / "remote"
        assert runner.invoke(main, [
            "run", "--config", config_path, "--catalog", catalog_path, "--out", str(local),
        ]).exit_code == 0
        assert runner.invoke(main, [
            "--server", live_server,
            "run", "--config", config_path, "--catalog", catalog_path, "--out", str(remote),
        ]).exit_code == 0
        assert (local / "records.jsonl").read_bytes() == (remote / "records.jsonl").read_bytes()
        assert (local / "metrics.csv").read_bytes() == (remote / "metrics.csv").read_bytes()
