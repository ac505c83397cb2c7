import time

import numpy as np
import pytest

from src.Planner import (
    TERM_FIELDS,
    Infeasible,
    LatencyBreakdown,
    PartitionPlan,
    PlanRequest,
    best_partition,
    brute_force_plan,
    evaluate,
    exit_candidates,
    forced_plan,
    partition_latencies,
    plan,
    segment_timings,
    transfer_ms
)
from src.exceptions import PlanIndexException, PlanRequestException
from tests.conftest import build_model, constant_predictors, random_model_and_predictors


def _request(model, predictors, bandwidth_bps, budget_ms, **options):
    return PlanRequest.build(
        model=model,
        predictors=predictors,
        bandwidth_bps=bandwidth_bps,
        latency_budget_ms=budget_ms,
        **options
    )


def _selected(outcome):
    chosen = outcome if outcome.feasible else outcome.best
    return outcome.feasible, chosen.exit_index, chosen.partition, chosen.predicted_latency_ms


class TestTransfer:
    """Test suite for the transfer-time formula."""

    def test_one_megabit(self):
        """Test 8000 bytes over 1 Mbps take 64 ms."""
        assert transfer_ms(8000, 1e6) == pytest.approx(64.0)

    def test_zero_bytes(self):
        """Test an empty payload is free."""
        assert transfer_ms(0, 1e3) == 0.0


class TestEvaluate:
    """Test suite for single (exit, partition) latency prediction."""

    def test_three_layer_chain(self, three_layer_chain, three_layer_predictors):
        """Test every partition of the 3-layer chain at 1 Mbps."""
        latencies = [
            evaluate(three_layer_chain, three_layer_predictors, 1, p, 1e6).predicted_latency_ms
            for p in range(4)
        ]
        assert latencies == pytest.approx([60.0, 147.0, 105.0, 70.0])

    def test_breakdown_terms(self, three_layer_chain, three_layer_predictors):
        """Test the p=1 breakdown splits into edge, device, input and intermediate terms."""
        breakdown = evaluate(three_layer_chain, three_layer_predictors, 1, 1, 1e6).breakdown
        assert breakdown.edge_compute_ms == pytest.approx(1.0)
        assert breakdown.device_compute_ms == pytest.approx(50.0)
        assert breakdown.input_transfer_ms == pytest.approx(64.0)
        assert breakdown.intermediate_transfer_ms == pytest.approx(32.0)
        assert breakdown.loading_ms == 0.0
        assert breakdown.result_transfer_ms == 0.0

    def test_device_only_has_no_transfer(self, three_layer_chain, three_layer_predictors):
        """Test p=0 charges neither input nor intermediate transfer."""
        breakdown = evaluate(three_layer_chain, three_layer_predictors, 1, 0, 1e3).breakdown
        assert breakdown.input_transfer_ms == 0.0
        assert breakdown.intermediate_transfer_ms == 0.0

    def test_edge_only_has_no_intermediate(self, three_layer_chain, three_layer_predictors):
        """Test p=N charges the input upload but no intermediate transfer."""
        breakdown = evaluate(three_layer_chain, three_layer_predictors, 1, 3, 1e6).breakdown
        assert breakdown.intermediate_transfer_ms == 0.0
        assert breakdown.device_compute_ms == 0.0

    def test_predicted_latency_is_sum_of_terms(self, bundled_model, published_predictors):
        """Test the total equals the breakdown summed in term order."""
        result = evaluate(bundled_model, published_predictors, 3, 7, 3e5, include_loading=True)
        assert result.predicted_latency_ms == sum(result.breakdown.terms())
        assert len(result.breakdown.terms()) == len(TERM_FIELDS)

    def test_result_transfer(self, three_layer_chain, three_layer_predictors):
        """Test counting the result adds transfer of the final output when the edge takes part."""
        edge_only = evaluate(three_layer_chain, three_layer_predictors, 1, 3, 1e6, count_result_transfer=True)
        device_only = evaluate(three_layer_chain, three_layer_predictors, 1, 0, 1e6, count_result_transfer=True)
        assert edge_only.predicted_latency_ms == pytest.approx(74.0)
        assert device_only.predicted_latency_ms == pytest.approx(60.0)

    def test_loading_terms(self, minimal_model):
        """Test loading charges the device for layers p+1..N and the edge for 1..p."""
        predictors = constant_predictors(device={"relu": 1.0}, edge={"relu": 1.0}, loading=(0.01, 0.02))
        device_only = evaluate(minimal_model, predictors, 1, 0, 1e9, include_loading=True)
        edge_only = evaluate(minimal_model, predictors, 1, 1, 1e9, include_loading=True)
        assert device_only.breakdown.loading_ms == pytest.approx(10.0)
        assert edge_only.breakdown.loading_ms == pytest.approx(20.0)

    def test_input_bytes_override(self, three_layer_chain, three_layer_predictors):
        """Test a smaller upload payload lowers the input transfer term."""
        result = evaluate(three_layer_chain, three_layer_predictors, 1, 3, 1e6, input_bytes=1000)
        assert result.breakdown.input_transfer_ms == pytest.approx(8.0)

    def test_partition_out_of_range(self, three_layer_chain, three_layer_predictors):
        """Test p > N raises."""
        with pytest.raises(PlanIndexException):
            evaluate(three_layer_chain, three_layer_predictors, 1, 4, 1e6)

    def test_exit_out_of_range(self, three_layer_chain, three_layer_predictors):
        """Test an unknown exit raises."""
        with pytest.raises(PlanIndexException):
            evaluate(three_layer_chain, three_layer_predictors, 2, 0, 1e6)

    def test_segment_timings(self, three_layer_chain, three_layer_predictors):
        """Test per-layer predictions follow chain order."""
        timings = segment_timings(three_layer_chain, three_layer_predictors, 1)
        assert timings.device_ms == (10.0, 20.0, 30.0)
        assert timings.edge_ms == (1.0, 2.0, 3.0)
        assert timings.output_bytes == (4000, 1000, 500)
        assert len(timings) == 3


class TestBestPartition:
    """Test suite for the per-exit partition search."""

    def test_slow_link_prefers_device(self, three_layer_chain, three_layer_predictors):
        """Test at 1 Mbps the device-only partition wins."""
        result = best_partition(three_layer_chain, three_layer_predictors, 1, 1e6)
        assert (result.partition, result.predicted_latency_ms) == (0, pytest.approx(60.0))

    def test_fast_link_prefers_edge(self, three_layer_chain, three_layer_predictors):
        """Test at 10 Mbps the edge-only partition wins."""
        result = best_partition(three_layer_chain, three_layer_predictors, 1, 1e7)
        assert (result.partition, result.predicted_latency_ms) == (3, pytest.approx(12.4))

    def test_unbounded_link(self, three_layer_chain, three_layer_predictors):
        """Test transfers vanish as bandwidth grows without bound."""
        result = best_partition(three_layer_chain, three_layer_predictors, 1, 1e15)
        assert result.partition == 3
        assert result.predicted_latency_ms == pytest.approx(6.0)

    def test_ties_go_to_smaller_partition(self):
        """Test equal latencies select the smaller p."""
        model = build_model([("only", "relu", 1000, 1000)], [(["only"], 0.5)], input_bytes=1000)
        predictors = constant_predictors(device={"relu": 500.0}, edge={"relu": 0.0})
        candidates = [evaluate(model, predictors, 1, p, 16000.0).predicted_latency_ms for p in (0, 1)]
        assert candidates[0] == candidates[1] == 500.0
        assert best_partition(model, predictors, 1, 16000.0).partition == 0


class TestPlan:
    """Test suite for the joint exit and partition search."""

    def test_tight_budget_selects_early_exit(self, two_exit_model, two_exit_predictors):
        """Test a 100 ms budget rules out exit 2 (120 ms) and keeps exit 1 (40 ms)."""
        outcome = plan(_request(two_exit_model, two_exit_predictors, 1e6, 100.0))
        assert isinstance(outcome, PartitionPlan)
        assert (outcome.exit_index, outcome.partition) == (1, 0)
        assert outcome.predicted_latency_ms == pytest.approx(40.0)
        assert outcome.accuracy == 0.6

    def test_loose_budget_selects_last_exit(self, two_exit_model, two_exit_predictors):
        """Test a 1000 ms budget selects the most accurate exit."""
        outcome = plan(_request(two_exit_model, two_exit_predictors, 1e6, 1000.0))
        assert (outcome.exit_index, outcome.partition) == (2, 0)
        assert outcome.predicted_latency_ms == pytest.approx(120.0)

    def test_budget_is_inclusive(self, two_exit_model, two_exit_predictors):
        """Test a latency equal to the budget is feasible."""
        outcome = plan(_request(two_exit_model, two_exit_predictors, 1e6, 120.0))
        assert outcome.feasible and outcome.exit_index == 2

    def test_infeasible_returns_best(self, two_exit_model, two_exit_predictors):
        """Test an impossible budget reports the smallest-latency pair."""
        outcome = plan(_request(two_exit_model, two_exit_predictors, 1e6, 1.0))
        assert isinstance(outcome, Infeasible)
        assert not outcome.feasible
        assert (outcome.best.exit_index, outcome.best.partition) == (1, 0)
        assert outcome.best.predicted_latency_ms == pytest.approx(40.0)
        assert outcome.latency_budget_ms == 1.0

    def test_infeasible_tie_prefers_larger_exit(self):
        """Test equal best latencies across exits report the larger exit."""
        model = build_model(
            [("a", "relu", 8000, 4000), ("b", "lrn", 4000, 1000)],
            [(["a"], 0.5), (["a", "b"], 0.6)],
            input_bytes=8000,
        )
        predictors = constant_predictors(device={"relu": 40.0}, edge={"relu": 1000.0, "lrn": 1000.0})
        outcome = plan(_request(model, predictors, 1e6, 1.0))
        assert outcome.best.exit_index == 2
        assert _selected(outcome) == _selected(brute_force_plan(_request(model, predictors, 1e6, 1.0)))

    def test_request_validation(self, two_exit_model, two_exit_predictors):
        """Test bandwidth and budget must be positive."""
        with pytest.raises(PlanRequestException):
            _request(two_exit_model, two_exit_predictors, 0.0, 100.0)
        with pytest.raises(PlanRequestException):
            _request(two_exit_model, two_exit_predictors, 1e6, -5.0)

    def test_payload_bytes(self, two_exit_model, two_exit_predictors):
        """Test the upload size defaults to the model input."""
        assert _request(two_exit_model, two_exit_predictors, 1e6, 1.0).payload_bytes == 8000
        assert _request(two_exit_model, two_exit_predictors, 1e6, 1.0, input_bytes=10).payload_bytes == 10

    def test_exit_candidates_cover_every_pair(self, bundled_model, published_predictors):
        """Test candidates hold N_i + 1 partitions for each exit."""
        candidates = exit_candidates(_request(bundled_model, published_predictors, 5e5, 1000.0))
        assert {index: len(rows) for index, rows in candidates.items()} == {1: 13, 2: 17, 3: 20, 4: 21, 5: 23}

    def test_candidates_match_evaluate(self, bundled_model, published_predictors):
        """Test the shared kernel gives the same numbers through every entry point."""
        request = _request(bundled_model, published_predictors, 5e5, 1000.0, include_loading=True)
        candidates = exit_candidates(request)
        for exit_index, rows in candidates.items():
            for p, terms in enumerate(rows):
                single = evaluate(bundled_model, published_predictors, exit_index, p, 5e5, include_loading=True)
                assert single.predicted_latency_ms == sum(terms)

    def test_partition_latencies_is_the_kernel(self, three_layer_chain, three_layer_predictors):
        """Test the kernel returns one term tuple per partition."""
        rows = partition_latencies(segment_timings(three_layer_chain, three_layer_predictors, 1),
                                   three_layer_predictors, 8000, 1e6)
        assert [sum(row) for row in rows] == pytest.approx([60.0, 147.0, 105.0, 70.0])
        assert LatencyBreakdown(**dict(zip(TERM_FIELDS, rows[2]))).total() == pytest.approx(105.0)


class TestPlanOracle:
    """Test suite checking the search against exhaustive enumeration."""

    def test_random_models(self):
        """Test plan and brute force agree on 1000 seeded random models."""
        rng = np.random.default_rng(2024)
        for trial in range(1000):
            model, predictors = random_model_and_predictors(rng)
            request = _request(
                model,
                predictors,
                bandwidth_bps=float(10 ** rng.uniform(4, 9)),
                budget_ms=float(rng.uniform(1.0, 400.0)),
                include_loading=bool(rng.integers(0, 2)),
                count_result_transfer=bool(rng.integers(0, 2)),
            )
            assert _selected(plan(request)) == _selected(brute_force_plan(request)), f"trial {trial}"

    @pytest.mark.parametrize("budget_ms", [100.0, 300.0, 1000.0, 3000.0])
    def test_bundled_bandwidth_grid(self, bundled_model, published_predictors, budget_ms):
        """Test agreement on the bundled model over 30 bandwidths from 50 kbps to 1.5 Mbps."""
        for bandwidth_kbps in np.linspace(50.0, 1500.0, 30):
            request = _request(bundled_model, published_predictors, bandwidth_kbps * 1000.0, budget_ms)
            assert _selected(plan(request)) == _selected(brute_force_plan(request))


class TestPlanTrends:
    """Test suite for monotone trends of the selection."""

    def test_exit_non_decreasing_in_bandwidth(self, bundled_model, published_predictors):
        """Test the selected exit never drops as bandwidth grows."""
        exits = []
        for bandwidth_kbps in np.linspace(50.0, 1500.0, 30):
            outcome = plan(_request(bundled_model, published_predictors, bandwidth_kbps * 1000.0, 1000.0))
            exits.append(outcome.exit_index if outcome.feasible else 0)
        assert exits == sorted(exits)

    def test_exit_non_decreasing_in_budget(self, bundled_model, published_predictors):
        """Test the selected exit never drops as the budget grows."""
        exits = []
        for budget_ms in np.linspace(1.0, 1000.0, 40):
            outcome = plan(_request(bundled_model, published_predictors, 5e5, float(budget_ms)))
            exits.append(outcome.exit_index if outcome.feasible else 0)
        assert exits == sorted(exits)

    def test_random_models_monotone_in_bandwidth(self):
        """Test nested feasibility on random models."""
        rng = np.random.default_rng(99)
        for _ in range(50):
            model, predictors = random_model_and_predictors(rng)
            budget = float(rng.uniform(1.0, 300.0))
            exits = []
            for bandwidth in np.logspace(4, 9, 12):
                outcome = plan(_request(model, predictors, float(bandwidth), budget))
                exits.append(outcome.exit_index if outcome.feasible else 0)
            assert exits == sorted(exits)

    def test_planner_is_fast(self, bundled_model, published_predictors):
        """Test the median planning time on the bundled model stays under a millisecond."""
        request = _request(bundled_model, published_predictors, 5e5, 1000.0)
        samples = []
        for _ in range(1000):
            start = time.perf_counter()
            plan(request)
            samples.append(time.perf_counter() - start)
        assert float(np.median(samples)) * 1000.0 < 1.0


class TestForcedPlan:
    """Test suite for planning with the exit, the partition or both pinned."""

    def test_nothing_forced_is_the_joint_search(self, two_exit_model, two_exit_predictors):
        """Test no pins gives the same answer as plan."""
        request = _request(two_exit_model, two_exit_predictors, 1e6, 100.0)
        assert forced_plan(request) == plan(request)

    def test_both_forced(self, two_exit_model, two_exit_predictors):
        """Test a pinned pair is evaluated as given."""
        outcome = forced_plan(_request(two_exit_model, two_exit_predictors, 1e6, 200.0), 2, 0)
        assert (outcome.feasible, outcome.exit_index, outcome.partition) == (True, 2, 0)
        assert outcome.predicted_latency_ms == pytest.approx(120.0)

    def test_exit_forced_searches_partitions(self, two_exit_model, two_exit_predictors):
        """Test a pinned exit gets its best partition."""
        outcome = forced_plan(_request(two_exit_model, two_exit_predictors, 1e6, 200.0), force_exit=1)
        assert (outcome.exit_index, outcome.partition) == (1, 0)
        assert outcome.predicted_latency_ms == pytest.approx(40.0)

    def test_partition_forced_prefers_largest_exit(self, two_exit_model, two_exit_predictors):
        """Test a pinned partition takes the largest exit meeting the budget."""
        outcome = forced_plan(_request(two_exit_model, two_exit_predictors, 1e6, 1e6), force_partition=1)
        assert (outcome.feasible, outcome.exit_index, outcome.partition) == (True, 2, 1)

    def test_partition_forced_skips_short_exits(self, two_exit_model, two_exit_predictors):
        """Test exits whose chain is shorter than the pinned partition are not candidates."""
        outcome = forced_plan(_request(two_exit_model, two_exit_predictors, 1e6, 1e6), force_partition=2)
        assert (outcome.exit_index, outcome.partition) == (2, 2)

    def test_forced_miss_is_infeasible(self, two_exit_model, two_exit_predictors):
        """Test pinned choices missing the budget return the fastest candidate as best effort."""
        outcome = forced_plan(_request(two_exit_model, two_exit_predictors, 1e6, 100.0), force_partition=1)
        assert isinstance(outcome, Infeasible)
        assert (outcome.best.exit_index, outcome.best.partition) == (1, 1)
        both = forced_plan(_request(two_exit_model, two_exit_predictors, 1e6, 100.0), 2, 0)
        assert not both.feasible
        assert both.best.predicted_latency_ms == pytest.approx(120.0)

    def test_partition_beyond_every_exit(self, two_exit_model, two_exit_predictors):
        """Test a partition longer than every chain is an index error."""
        with pytest.raises(PlanIndexException):
            forced_plan(_request(two_exit_model, two_exit_predictors, 1e6, 1e6), force_partition=4)
