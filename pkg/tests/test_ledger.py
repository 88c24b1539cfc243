from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nf1bsim.errors import DomainError, InsufficientHorizonError, StructuralError
from nf1bsim.ledger import (
    assign_versions,
    backward_span,
    closed_form_v,
    decompose_sequences,
    forward_span,
    ledger_violations,
    measure_version_difference,
    mini_batches_entered,
    overlap_condition,
    retention_timeline,
    staleness_report,
)
from nf1bsim.schedule import PIPEDREAM, TIMEPREST, Kind, ScheduleGrid, SimConfig, build_schedule

configs = st.builds(
    SimConfig,
    workers=st.integers(2, 7),
    micro_batches=st.integers(2, 6),
    mini_batches=st.integers(1, 14),
)


def _ledger(W, N, M, mode=TIMEPREST):
    grid = build_schedule(SimConfig(W, N, M), mode)
    return grid, assign_versions(grid)


@pytest.mark.parametrize("W,N,v", [(4, 2, 2), (4, 4, 1), (3, 2, 1), (5, 2, 2), (2, 2, 1)])
def test_closed_form_v(W, N, v):
    assert closed_form_v(W, N) == v


def test_spans_and_overlap():
    assert forward_span(4, 2, 1) == 5
    assert forward_span(4, 2, 2) == 6
    assert forward_span(2, 2, 1) == 3
    assert [backward_span(w) for w in (2, 4, 5)] == [2, 4, 5]
    assert overlap_condition(4, 2) and overlap_condition(5, 3)
    assert not overlap_condition(4, 4)


@pytest.mark.parametrize("call", [lambda: closed_form_v(1, 2), lambda: forward_span(4, 1), lambda: backward_span(1)])
def test_closed_forms_reject_out_of_domain(call):
    with pytest.raises(DomainError):
        call()


def test_mini_batches_entered_floor_inclusion():
    for W in range(2, 9):
        for N in range(2, 9):
            entered = mini_batches_entered(W, N)
            if W <= N + 1:
                assert entered in (1, 2)
            else:
                assert entered >= 2


def test_pins_for_4_4():
    _, ledger = _ledger(4, 4, 4)
    assert ledger.pinned_versions[(3, 1)] == 0
    assert ledger.pinned_versions[(3, 2)] == 0
    assert ledger.pinned_versions[(3, 3)] == 1
    assert ledger.pinned_versions[(3, 4)] == 1


def test_4_2_mini_batch_3_reads_version_1_after_pinning_0():
    _, ledger = _ledger(4, 2, 7)
    assert ledger.pinned_versions[(3, 1)] == ledger.pinned_versions[(3, 2)] == 0
    assert ledger.consumed_by(3) == 1
    assert ledger.consumed_by(4) == 2


@settings(max_examples=40, deadline=None)
@given(configs, st.sampled_from([TIMEPREST, PIPEDREAM]))
def test_first_mini_batch_uses_initial_weights(config, mode):
    ledger = assign_versions(build_schedule(config, mode))
    assert ledger.consumed_by(1) == 0
    assert all(v == 0 for (k, _), v in ledger.pinned_versions.items() if k == 1)


@settings(max_examples=60, deadline=None)
@given(configs, st.sampled_from([TIMEPREST, PIPEDREAM]))
def test_ledger_invariants(config, mode):
    ledger = assign_versions(build_schedule(config, mode))
    assert ledger_violations(ledger) == []


@pytest.mark.parametrize("W,N,v", [(4, 2, 2), (4, 4, 1), (5, 3, 2)])
def test_measured_version_difference(W, N, v):
    _, ledger = _ledger(W, N, 2 * (W + N))
    assert measure_version_difference(ledger) == v


def test_short_epoch_is_insufficient():
    _, ledger = _ledger(4, 2, 1)
    with pytest.raises(InsufficientHorizonError):
        measure_version_difference(ledger)


def test_sequences_for_figure_configs():
    assert decompose_sequences(_ledger(4, 2, 7)[1]).sequences == [[1, 3, 5, 7], [2, 4, 6]]
    assert decompose_sequences(_ledger(4, 4, 4)[1]).sequences == [[1, 2, 3, 4]]
    assert decompose_sequences(_ledger(2, 2, 6)[1]).sequences == [[1, 2, 3, 4, 5, 6]]


@settings(max_examples=40, deadline=None)
@given(configs)
def test_sequences_partition_with_step_v(config):
    ledger = assign_versions(build_schedule(config))
    try:
        dec = decompose_sequences(ledger)
    except InsufficientHorizonError:
        return
    members = sorted(j for seq in dec.sequences for j in seq)
    assert members == list(range(1, config.mini_batches + 1))
    for seq in dec.sequences:
        assert all(b - a == dec.version_difference_measured for a, b in zip(seq, seq[1:]))


def test_assign_versions_rejects_invalid_grid():
    grid = build_schedule(SimConfig(2, 2, 2))
    broken = ScheduleGrid(grid.config, grid.mode, tuple(t for t in grid.tasks if t.kind is Kind.FORWARD))
    with pytest.raises(StructuralError):
        assign_versions(broken)


def test_retention_2_2_4_hand_trace():
    grid, ledger = _ledger(2, 2, 4)
    tl = retention_timeline(ledger, grid)
    # stage 1 reads each version once and replaces it in place; the top stage keeps
    # the previous version alive while micro-batches pinned to it still pass through
    assert tl.peak_concurrent == {1: 1, 2: 2}
    assert max(tl.peak_concurrent.values()) == 2


@pytest.mark.parametrize("mode", [TIMEPREST, PIPEDREAM])
def test_single_mini_batch_retains_one_version(mode):
    grid, ledger = _ledger(3, 2, 1, mode)
    tl = retention_timeline(ledger, grid)
    assert set(tl.peak_concurrent.values()) == {1}


@settings(max_examples=40, deadline=None)
@given(configs, st.sampled_from([TIMEPREST, PIPEDREAM]))
def test_versions_outlive_their_forward_readers(config, mode):
    grid = build_schedule(config, mode)
    ledger = assign_versions(grid)
    tl = retention_timeline(ledger, grid)
    freed = {(s, lt.version): lt.freed_at for s, lts in tl.lifetimes.items() for lt in lts}
    for x in ledger.consumptions:
        f = freed[(x.task.stage, x.version)]
        if x.task.is_forward:
            assert f is None or f > x.task.slot
        else:
            assert f is None or f >= x.task.slot


def test_retention_rejects_mismatched_inputs():
    grid, _ = _ledger(3, 2, 4)
    _, other = _ledger(3, 2, 5)
    with pytest.raises(StructuralError):
        retention_timeline(other, grid)


@settings(max_examples=40, deadline=None)
@given(configs)
def test_timeprest_staleness_is_zero(config):
    assert staleness_report(assign_versions(build_schedule(config))).all_zero


def test_1f1b_staleness_w_minus_one():
    _, ledger = _ledger(4, 2, 8, PIPEDREAM)
    assert staleness_report(ledger).steady_state == 3


@pytest.mark.parametrize("mode", [TIMEPREST, PIPEDREAM])
def test_single_mini_batch_staleness_zero(mode):
    _, ledger = _ledger(4, 2, 1, mode)
    assert staleness_report(ledger).per_backward == {1: 0}
    assert staleness_report(ledger).steady_state == 0


def test_pipedream_backward_reuses_forward_pin():
    _, ledger = _ledger(2, 2, 6, PIPEDREAM)
    for k in range(1, 7):
        assert ledger.consumed_by(k) == ledger.pinned_versions[(k, 1)]
    assert [ledger.consumed_by(k) for k in range(3, 7)] == [1, 2, 3, 4]
