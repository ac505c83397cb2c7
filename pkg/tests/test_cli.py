import asyncio
import json
import threading
from pathlib import Path

import jsonschema
import pandas as pd
import pytest

from src.Cli import EXIT_DOMAIN_ERROR, EXIT_OK, EXIT_USAGE, dispatch
from src.EdgeAgent import EdgeAgent
from src.Settings import AgentConfig
from src.Simulator import COMPARE_COLUMNS, SWEEP_COLUMNS

SCHEMAS = Path(__file__).resolve().parent.parent / "docs" / "schemas"
GOLDEN = Path(__file__).resolve().parent / "golden"


def _run_json(capsys, *argv):
    code = dispatch(["--format", "json", *argv])
    assert code == EXIT_OK
    return json.loads(capsys.readouterr().out)


def _conforms(schema_name, document):
    jsonschema.validate(document, json.loads((SCHEMAS / f"{schema_name}.schema.json").read_text()))


@pytest.fixture
def running_edge(bundled_model, published_predictors):
    """Fixture providing the port of a kernels-mode edge agent served from a background event loop."""
    loop = asyncio.new_event_loop()
    thread = threading.Thread(target=loop.run_forever, daemon=True)
    thread.start()
    edge = EdgeAgent(AgentConfig(role="edge", host="127.0.0.1", port=0), model=bundled_model, predictors=published_predictors)
    _, port = asyncio.run_coroutine_threadsafe(edge.start(), loop).result(timeout=5)
    yield port
    asyncio.run_coroutine_threadsafe(edge.stop(), loop).result(timeout=5)
    loop.call_soon_threadsafe(loop.stop)
    thread.join(timeout=5)
    loop.close()


class TestPlanCommand:
    """Test suite for `edgent plan`."""

    def test_feasible_plan_json(self, capsys):
        """Test a generous budget prints a feasible plan with every schema key."""
        document = _run_json(capsys, "plan", "--bandwidth-kbps", "500", "--latency-ms", "1000")
        assert document["feasible"] is True
        _conforms("plan", document)
        assert document["bandwidth_kbps"] == 500.0
        assert document["predicted_latency_ms"] <= 1000.0

    def test_plan_matches_golden(self, capsys):
        """Test the bundled model at 500 kbps and 1000 ms keeps its recorded exit and partition."""
        document = _run_json(capsys, "plan", "--bandwidth-kbps", "500", "--latency-ms", "1000")
        golden = json.loads((GOLDEN / "plan_500kbps_1000ms.json").read_text())
        assert {key: document[key] for key in golden} == golden

    def test_infeasible_plan_is_not_an_error(self, capsys):
        """Test an impossible budget still exits 0 and reports feasible false."""
        document = _run_json(capsys, "plan", "--bandwidth-kbps", "500", "--latency-ms", "0.001")
        assert document["feasible"] is False
        assert document["predicted_latency_ms"] > 0.001
        _conforms("plan", document)

    def test_infeasible_accuracy_is_best_effort_exit(self, capsys, bundled_model):
        """Test an infeasible plan reports the accuracy of the best-effort exit it names."""
        document = _run_json(capsys, "plan", "--bandwidth-kbps", "500", "--latency-ms", "0.001")
        assert document["accuracy"] == bundled_model.exit(document["exit"]).accuracy

    def test_json_flag_on_subcommand(self, capsys):
        """Test --json after the subcommand selects JSON output."""
        assert dispatch(["plan", "--bandwidth-kbps", "500", "--latency-ms", "1000", "--json"]) == EXIT_OK
        assert "breakdown" in json.loads(capsys.readouterr().out)

    def test_table_output(self, capsys):
        """Test the default table output names the plan columns."""
        assert dispatch(["plan", "--bandwidth-kbps", "500", "--latency-ms", "1000"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "partition" in out and "edge_compute_ms" in out

    def test_missing_model_file(self, capsys, tmp_path):
        """Test a missing model file is a domain error with a message on stderr."""
        code = dispatch(["plan", "--model", str(tmp_path / "none.json"), "--bandwidth-kbps", "500", "--latency-ms", "1000"])
        assert code == EXIT_DOMAIN_ERROR
        captured = capsys.readouterr()
        assert captured.out == ""
        assert captured.err.startswith("error:")


class TestUsage:
    """Test suite for argument errors and help."""

    @pytest.mark.parametrize("argv", [
        [],
        ["bogus"],
        ["plan", "--bandwidth-kbps", "500"],
        ["plan", "--bandwidth-kbps", "-5", "--latency-ms", "10"],
        ["simulate", "--scenario", "edge-only", "--jitter", "1.5"],
    ])
    def test_usage_errors(self, argv, capsys):
        """Test malformed command lines exit 2."""
        assert dispatch(argv) == EXIT_USAGE

    def test_help(self, capsys):
        """Test --help exits 0."""
        assert dispatch(["--help"]) == EXIT_OK
        assert "plan" in capsys.readouterr().out

    def test_bad_seed_env(self, capsys, monkeypatch):
        """Test a non-integer EDGENT_SEED is a domain error."""
        monkeypatch.setenv("EDGENT_SEED", "abc")
        assert dispatch(["plan", "--bandwidth-kbps", "500", "--latency-ms", "1000"]) == EXIT_DOMAIN_ERROR


class TestSimulateCommand:
    """Test suite for `edgent simulate`."""

    def test_edge_only_defaults(self, capsys):
        """Test the default edge-only points at 1000 and 50 kbps."""
        document = _run_json(capsys, "simulate", "--scenario", "edge-only")
        _conforms("simulate", document)
        latencies = [point["latency_ms"] for point in document["points"]]
        assert latencies == pytest.approx([125.352, 2317.04])

    def test_plan_scenario_without_jitter(self, capsys):
        """Test a simulated plan equals its prediction when jitter is zero."""
        document = _run_json(capsys, "simulate", "--scenario", "plan", "--bandwidth-kbps", "400", "--force-exit", "3")
        point = document["points"][0]
        assert point["exit"] == 3
        assert point["latency_ms"] == pytest.approx(point["predicted_latency_ms"])
        _conforms("simulate", document)

    def test_plan_scenario_forced_partition(self, capsys):
        """Test --force-partition alone picks the largest exit whose chain reaches it."""
        document = _run_json(
            capsys, "simulate", "--scenario", "plan", "--bandwidth-kbps", "1000", "--force-partition", "13"
        )
        _conforms("simulate", document)
        point = document["points"][0]
        assert (point["exit"], point["partition"]) == (5, 13)

    def test_plan_scenario_forced_partition_over_budget(self, capsys):
        """Test a forced partition that misses the budget is still simulated as the best effort."""
        document = _run_json(
            capsys, "simulate", "--scenario", "plan", "--bandwidth-kbps", "1000", "--latency-ms", "1",
            "--force-partition", "13"
        )
        assert document["points"][0]["partition"] == 13
        assert document["points"][0]["latency_ms"] > 1.0

    def test_seeded_jitter_is_reproducible(self, capsys):
        """Test the same --seed gives the same jittered latencies."""
        argv = ["--seed", "7", "simulate", "--scenario", "edge-only", "--jitter", "0.2"]
        first = _run_json(capsys, *argv)
        second = _run_json(capsys, *argv)
        assert first["points"] == second["points"]
        assert first["seed"] == 7



class TestDeviceCommand:
    """Test suite for `edgent device`."""

    def test_device_only_run(self, capsys):
        """Test partition 0 runs locally and prints a schema-conforming report."""
        document = _run_json(
            capsys, "device", "--connect", "127.0.0.1:9", "--budget-ms", "1e6", "--force-exit", "1", "--force-partition", "0"
        )
        _conforms("device", document)
        assert (document["exit"], document["partition"]) == (1, 0)
        assert document["edge_timings"] == {}

    def test_split_run_against_edge(self, capsys, running_edge):
        """Test a split run reports the edge's timings alongside its own."""
        document = _run_json(
            capsys, "device", "--connect", f"127.0.0.1:{running_edge}", "--budget-ms", "1e6",
            "--force-exit", "2", "--force-partition", "5"
        )
        _conforms("device", document)
        assert (document["exit"], document["partition"]) == (2, 5)
        assert set(document["edge_timings"]) == {"edge_compute_ms", "edge_send_ms"}
        assert document["probed"] is False

    def test_infeasible_forced_exit(self, capsys):
        """Test a forced exit that misses the budget is a domain error."""
        argv = ["device", "--connect", "127.0.0.1:9", "--budget-ms", "0.001", "--force-exit", "1"]
        assert dispatch(argv) == EXIT_DOMAIN_ERROR

class TestReportCommands:
    """Test suite for the sweep, compare, profile and fit subcommands."""

    def test_sweep_writes_csv(self, capsys, tmp_path):
        """Test a bandwidth sweep writes a CSV and a plot script."""
        out = tmp_path / "sweep.csv"
        document = _run_json(
            capsys, "sweep", "--axis", "bandwidth", "--from", "50", "--to", "1500", "--steps", "5",
            "--out", str(out), "--gnuplot"
        )
        _conforms("sweep", document)
        assert len(document["rows"]) == 5
        assert list(pd.read_csv(out).columns) == SWEEP_COLUMNS
        assert (tmp_path / "sweep.csv.gp").exists()

    def test_sweep_csv_stdout(self, capsys):
        """Test CSV output prints one line per grid point after the header."""
        assert dispatch(["--format", "csv", "sweep", "--axis", "budget", "--from", "100", "--to", "1000", "--steps", "4"]) == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 5
        assert lines[0].startswith("axis_value,exit,partition")

    def test_bad_sweep_range(self, capsys):
        """Test a reversed range is a domain error."""
        assert dispatch(["sweep", "--axis", "bandwidth", "--from", "500", "--to", "50"]) == EXIT_DOMAIN_ERROR

    def test_compare(self, capsys, tmp_path):
        """Test compare prints the four strategies per budget and writes its CSV."""
        out = tmp_path / "compare.csv"
        document = _run_json(capsys, "compare", "--steps", "4", "--out", str(out))
        _conforms("compare", document)
        assert len(document["rows"]) == 4
        assert list(pd.read_csv(out).columns) == COMPARE_COLUMNS

    def test_profile_then_fit(self, capsys, tmp_path):
        """Test a small profile feeds a fit whose file plans successfully."""
        measurements = tmp_path / "edge.csv"
        profiled = _run_json(capsys, "profile", "--suite", "small", "--out", str(measurements))
        _conforms("profile", profiled)
        assert set(profiled["kinds"]) == {"conv", "relu", "pool", "lrn", "dropout", "fc", "loading"}

        predictors = tmp_path / "predictors.json"
        fitted = _run_json(
            capsys, "fit", "--measurements", str(measurements), "--side", "edge", "--out", str(predictors)
        )
        _conforms("fit", fitted)
        assert set(fitted["regressions"]) == set(profiled["kinds"])

        document = _run_json(
            capsys, "plan", "--predictors", str(predictors), "--bandwidth-kbps", "1000", "--latency-ms", "1e6"
        )
        assert document["feasible"] is True
