from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nf1bsim.errors import DomainError
from nf1bsim.schedule import (
    PIPEDREAM,
    TIMEPREST,
    Kind,
    ScheduleGrid,
    SimConfig,
    Task,
    backward_cadence,
    build_1f1b_schedule,
    build_nf1b_schedule,
    build_schedule,
    measured_backward_span,
    measured_forward_span,
    micro_label,
    task_label,
    uncontended_prefix,
    validate_schedule,
)

configs = st.builds(
    SimConfig,
    workers=st.integers(2, 7),
    micro_batches=st.integers(2, 6),
    mini_batches=st.integers(1, 12),
)


def _grid(W, N, M, mode=TIMEPREST):
    return build_schedule(SimConfig(W, N, M), mode)


@pytest.mark.parametrize(
    "field,kwargs",
    [
        ("workers", dict(workers=1, micro_batches=2, mini_batches=3)),
        ("micro_batches", dict(workers=4, micro_batches=1, mini_batches=3)),
        ("mini_batches", dict(workers=4, micro_batches=2, mini_batches=0)),
        ("backward_cost_factor", dict(workers=4, micro_batches=2, mini_batches=3, backward_cost_factor=0.5)),
    ],
)
def test_config_domain_errors_name_the_field(field, kwargs):
    with pytest.raises(DomainError) as exc:
        SimConfig(**kwargs)
    assert exc.value.field == field


def test_workers_domain_message_cites_bound():
    with pytest.raises(DomainError, match="W >= 2"):
        SimConfig(1, 2, 3)


def test_micro_labels():
    assert [micro_label(i) for i in (1, 2, 26, 27, 28)] == ["A", "B", "Z", "AA", "AB"]
    assert task_label(Task(1, 1, Kind.FORWARD, 3, 2)) == "3B"
    assert task_label(Task(9, 1, Kind.BACKWARD, 12)) == "B12"


def test_4_2_7_first_micro_batches_walk_the_diagonal():
    g = _grid(4, 2, 7)
    assert g.forward_slots(1, 1) == {1: 1, 2: 2, 3: 3, 4: 4}
    assert g.forward_slots(1, 2) == {1: 2, 2: 3, 3: 4, 4: 5}


def test_4_2_7_first_backward_runs_top_down_from_slot_6():
    g = _grid(4, 2, 7)
    assert g.backward_slots(1) == {4: 6, 3: 7, 2: 8, 1: 9}


def test_single_mini_batch_horizon():
    g = _grid(2, 2, 1)
    assert g.horizon == 5
    assert validate_schedule(g).ok


def test_1f1b_shapes():
    g = build_1f1b_schedule(SimConfig(4, 2, 4))
    assert g.forward_slots(1, 1) == {1: 1, 2: 2, 3: 3, 4: 4}
    assert g.backward_slots(1)[4] == 5
    one = build_1f1b_schedule(SimConfig(2, 2, 1))
    assert one.horizon == 4
    assert one.forward_slots(1, 1) == {1: 1, 2: 2}
    assert one.backward_slots(1) == {2: 3, 1: 4}


def test_1f1b_alternates_in_steady_state():
    g = build_1f1b_schedule(SimConfig(4, 2, 8))
    for stage in range(1, 5):
        seq = list(g.on_stage(stage))
        assert [t.kind for t in seq[:4 - stage + 1]] == [Kind.FORWARD] * (4 - stage + 1)
        # every forward admitted after the warm-up is sandwiched between backwards
        for i, t in enumerate(seq):
            if t.is_forward and t.mini > 4:
                assert seq[i - 1].kind is Kind.BACKWARD and seq[i + 1].kind is Kind.BACKWARD


def test_1f1b_ignores_micro_batches():
    a = build_1f1b_schedule(SimConfig(3, 2, 5))
    b = build_1f1b_schedule(SimConfig(3, 7, 5))
    assert a.tasks == b.tasks


def test_cadence_n_plus_one():
    for N in (2, 4):
        g = _grid(4, N, 8)
        for stage in range(1, 5):
            gaps = backward_cadence(g, stage)
            assert gaps and set(gaps) == {N + 1}


def test_uncontended_prefix_spans():
    g = _grid(4, 2, 7)
    prefix = uncontended_prefix(g)
    assert prefix[:2] == [1, 2]
    assert measured_forward_span(g, 1) == 5
    assert measured_forward_span(g, 2) == 6


def test_forward_waits_while_the_next_stage_runs_a_backward():
    # 2A sits on stage 3 at slot 5 and reaches stage 4 at slot 7, because B1
    # holds stage 4 at slot 6: a legal wait.
    g = _grid(4, 2, 7)
    assert g.forward_slots(2, 1)[3] == 5
    assert g.forward_slots(2, 1)[4] == 7
    assert g.at(4, 6).kind is Kind.BACKWARD


def test_continuity_violation_when_the_wait_is_not_forced():
    g = _grid(4, 2, 7)
    tasks = [t for t in g.tasks if not (t.stage == 4 and t.slot == 6)]
    broken = ScheduleGrid(g.config, g.mode, tuple(tasks))
    report = validate_schedule(broken)
    assert "stage-continuity" in report.kinds()
    assert any("2A" in v.message for v in report.violations if v.kind == "stage-continuity")


def test_completeness_violation_for_missing_backward():
    g = _grid(3, 2, 4)
    tasks = [t for t in g.tasks if not (t.kind is Kind.BACKWARD and t.mini == 4)]
    report = validate_schedule(ScheduleGrid(g.config, g.mode, tuple(tasks)))
    assert "completeness" in report.kinds()


def test_exclusivity_violation():
    g = _grid(2, 2, 2)
    extra = Task(1, 1, Kind.FORWARD, 2, 2)
    report = validate_schedule(ScheduleGrid(g.config, g.mode, g.tasks + (extra,)))
    assert "exclusivity" in report.kinds()


@settings(max_examples=60, deadline=None)
@given(configs, st.sampled_from([TIMEPREST, PIPEDREAM]))
def test_generated_grids_self_validate(config, mode):
    g = build_schedule(config, mode)
    assert validate_schedule(g).violations == []


@settings(max_examples=60, deadline=None)
@given(configs)
def test_backward_spans_exactly_w(config):
    g = build_nf1b_schedule(config)
    for k in range(1, config.mini_batches + 1):
        assert measured_backward_span(g, k) == config.workers
        slots = g.backward_slots(k)
        assert [slots[s] for s in range(config.workers, 0, -1)] == list(
            range(slots[config.workers], slots[config.workers] + config.workers)
        )


@settings(max_examples=60, deadline=None)
@given(configs)
def test_backward_priority_and_exclusivity(config):
    g = build_nf1b_schedule(config)
    seen = set()
    for t in g.tasks:
        assert (t.stage, t.slot) not in seen
        seen.add((t.stage, t.slot))
    assert not {"backward-priority", "exclusivity"} & validate_schedule(g).kinds()


@settings(max_examples=30, deadline=None)
@given(configs)
def test_determinism(config):
    assert build_nf1b_schedule(config).tasks == build_nf1b_schedule(config).tasks


@settings(max_examples=40, deadline=None)
@given(configs)
def test_uncontended_forward_span(config):
    g = build_nf1b_schedule(config)
    W, N = config.workers, config.micro_batches
    for k in uncontended_prefix(g):
        if k > 2:
            break
        assert measured_forward_span(g, k) == W + N - 2 + k
