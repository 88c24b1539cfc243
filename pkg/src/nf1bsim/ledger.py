"""Weight-version bookkeeping over a schedule, plus the closed-form timing model.

Version ``k`` is the parameter snapshot produced by the backward pass of
mini-batch ``k``; version 0 is the initial weights. A backward commits its
version on each stage as it passes that stage. A version is *complete* once
the backward that produced it has left stage 1; a micro-batch is pinned at
injection to the newest complete version, and uses it on every stage.

Backward consumption differs by mode:

* ``timeprest``: a backward reads the newest complete version at the slot it
  is released on the top stage, and uses that same version on every stage.
* ``pipedream``: a backward reads the version its own forward was pinned to
  (horizontal stashing).
"""

from __future__ import annotations

import bisect
from collections import Counter
from dataclasses import dataclass, field

from .errors import DomainError, InsufficientHorizonError, StructuralError
from .schedule import PIPEDREAM, TIMEPREST, ScheduleGrid, Task, validate_schedule


# --- closed forms -----------------------------------------------------------


def _check_domain(W: int, N: int | None = None) -> None:
    if isinstance(W, bool) or not isinstance(W, int) or W < 2:
        raise DomainError("workers", W, "W >= 2")
    if N is not None and (isinstance(N, bool) or not isinstance(N, int) or N < 2):
        raise DomainError("micro_batches", N, "N >= 2")


def closed_form_v(W: int, N: int) -> int:
    """Version difference predicted from worker and micro-batch counts."""
    _check_domain(W, N)
    return (W + N - 2) // N


def forward_span(W: int, N: int, k: int = 1) -> int:
    """Time-points needed by the forward pass of the k-th mini-batch."""
    _check_domain(W, N)
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        raise DomainError("k", k, "k >= 1")
    return W + N - 2 + k


def backward_span(W: int) -> int:
    _check_domain(W)
    return W


def overlap_condition(W: int, N: int) -> bool:
    """True when the backwards of consecutive mini-batches overlap (v > 1).

    Mini-batch 2 starts N slots after mini-batch 1, so the backward of 1
    (which ends at ``f1 + b``) overlaps the backward of 2 exactly when
    ``f1 + b - N > f2``.
    """
    f1, f2, b = forward_span(W, N, 1), forward_span(W, N, 2), backward_span(W)
    return f1 + b - N > f2


def mini_batches_entered(W: int, N: int) -> int:
    """Mini-batches fully injected before the first forward pass ends."""
    _check_domain(W, N)
    return (W + N - 1) // N


# --- ledger -----------------------------------------------------------------


@dataclass(frozen=True)
class Commit:
    version: int
    committed_by: int
    slot: int
    stage: int


@dataclass(frozen=True)
class Consumption:
    task: Task
    version: int


@dataclass
class VersionLedger:
    mode: str
    workers: int
    mini_batches: int
    micro_batches: int
    commits: list[Commit]
    consumptions: list[Consumption]
    pinned_versions: dict[tuple[int, int], int]
    backward_versions: dict[int, int]
    release_slots: dict[int, int]
    finish_slots: dict[int, int]
    _finish_sorted: list[int] = field(init=False, repr=False)

    def __post_init__(self):
        self._finish_sorted = [self.finish_slots[k] for k in sorted(self.finish_slots)]

    def latest_complete(self, slot: int) -> int:
        """Newest version fully committed strictly before ``slot``."""
        # backwards finish in mini-batch order, so finish slots are sorted
        return bisect.bisect_left(self._finish_sorted, slot)

    def latest_on_stage(self, stage: int, slot: int) -> int:
        """Newest version committed on ``stage`` strictly before ``slot``."""
        best = 0
        for c in self.commits:
            if c.stage == stage and c.slot < slot and c.version > best:
                best = c.version
        return best

    def consumed_by(self, mini: int) -> int:
        return self.backward_versions[mini]

    def stage_commits(self, stage: int) -> list[Commit]:
        return [c for c in self.commits if c.stage == stage]

    def to_dict(self) -> dict:
        return {
            "commits": [
                {"version": c.version, "committed_by": c.committed_by, "slot": c.slot, "stage": c.stage}
                for c in self.commits
            ],
            "consumptions": [
                {
                    "worker": x.task.stage,
                    "slot": x.task.slot,
                    "kind": x.task.kind.value,
                    "mini": x.task.mini,
                    "micro": x.task.micro,
                    "version": x.version,
                }
                for x in self.consumptions
            ],
            "pins": [
                {"mini": k, "micro": m, "version": v} for (k, m), v in sorted(self.pinned_versions.items())
            ],
        }


def assign_versions(grid: ScheduleGrid, config=None) -> VersionLedger:
    report = validate_schedule(grid, config)
    if not report.ok:
        first = report.violations[0]
        raise StructuralError(f"cannot assign versions to an invalid grid: {first.kind}: {first.message}")
    W, M, N = grid.workers, grid.config.mini_batches, grid.micro_batches

    commits = sorted(
        (Commit(t.mini, t.mini, t.slot, t.stage) for t in grid.tasks if not t.is_forward),
        key=lambda c: (c.slot, c.stage),
    )
    release = {k: grid.release_slot(k) for k in range(1, M + 1)}
    finish = {k: grid.finish_slot(k) for k in range(1, M + 1)}
    finish_sorted = [finish[k] for k in range(1, M + 1)]

    def latest_complete(slot):
        return bisect.bisect_left(finish_sorted, slot)

    pins = {(k, m): latest_complete(grid.injection_slot(k, m)) for k in range(1, M + 1) for m in range(1, N + 1)}
    if grid.mode == TIMEPREST:
        consumed = {k: latest_complete(release[k]) for k in range(1, M + 1)}
    elif grid.mode == PIPEDREAM:
        consumed = {k: pins[(k, 1)] for k in range(1, M + 1)}
    else:
        raise StructuralError(f"unknown grid mode {grid.mode!r}")

    consumptions = [
        Consumption(t, pins[(t.mini, t.micro)] if t.is_forward else consumed[t.mini]) for t in grid.tasks
    ]
    return VersionLedger(grid.mode, W, M, N, commits, consumptions, pins, consumed, release, finish)


def ledger_violations(ledger: VersionLedger) -> list[str]:
    """Problems with a ledger's internal consistency; empty means sound."""
    out = []
    for stage in range(1, ledger.workers + 1):
        versions = [c.version for c in sorted(ledger.stage_commits(stage), key=lambda c: c.slot)]
        if versions != sorted(set(versions)):
            out.append(f"stage {stage}: commit versions not strictly increasing")
        if sorted(versions) != list(range(1, ledger.mini_batches + 1)):
            out.append(f"stage {stage}: expected exactly one commit per backward")
    for x in ledger.consumptions:
        t = x.task
        if t.is_forward:
            if x.version != ledger.pinned_versions[(t.mini, t.micro)]:
                out.append(f"forward {t.mini}/{t.micro} on stage {t.stage} left its pinned version")
        else:
            if x.version != ledger.backward_versions[t.mini]:
                out.append(f"backward {t.mini} changed version between stages")
            if ledger.mode == TIMEPREST and x.version != ledger.latest_complete(ledger.release_slots[t.mini]):
                out.append(f"backward {t.mini} did not read the newest complete version")
    return out


# --- version difference and sequences ---------------------------------------


def version_differences(ledger: VersionLedger) -> dict[int, int]:
    """mini-batch id -> (id - id of the version its backward consumed)."""
    return {k: k - v for k, v in sorted(ledger.backward_versions.items())}


def measure_version_difference(ledger: VersionLedger) -> int:
    """Steady-state version difference observed in the ledger.

    Warm-up mini-batches (whose backward can only see the initial weights)
    are excluded. Raises when nothing remains or the remainder disagrees.
    """
    diffs = {k - v for k, v in ledger.backward_versions.items() if v >= 1}
    if not diffs:
        raise InsufficientHorizonError(
            f"no backward consumed a committed version (M={ledger.mini_batches}); extend the epoch"
        )
    if len(diffs) > 1:
        raise InsufficientHorizonError(f"version difference not steady: observed {sorted(diffs)}")
    return diffs.pop()


@dataclass
class SequenceDecomposition:
    sequences: list[list[int]]
    version_difference_measured: int


def decompose_sequences(ledger: VersionLedger, M: int | None = None) -> SequenceDecomposition:
    """Chain mini-batches by "the backward of j consumed the version made by i"."""
    v = measure_version_difference(ledger)
    M = ledger.mini_batches if M is None else M
    chains: list[list[int]] = []
    tail_of: dict[int, int] = {}  # last member -> chain index
    for j in range(1, M + 1):
        parent = ledger.backward_versions[j]
        idx = tail_of.pop(parent, None) if parent else None
        if idx is None:
            chains.append([j])
            idx = len(chains) - 1
        else:
            chains[idx].append(j)
        tail_of[j] = idx
    return SequenceDecomposition(chains, v)


# --- retention --------------------------------------------------------------


@dataclass(frozen=True)
class Lifetime:
    version: int
    retained_from: int
    freed_at: int | None  # None: still live when the epoch ends


@dataclass
class RetentionTimeline:
    horizon: int
    lifetimes: dict[int, list[Lifetime]]
    peak_concurrent: dict[int, int]

    def live(self, stage: int, slot: int) -> set[int]:
        return {
            lt.version
            for lt in self.lifetimes[stage]
            if lt.retained_from <= slot and (lt.freed_at is None or slot < lt.freed_at)
        }

    def counts(self, stage: int) -> list[int]:
        """Retained versions on ``stage`` for slots 1..horizon."""
        return [len(self.live(stage, t)) for t in range(1, self.horizon + 1)]


def retention_timeline(ledger: VersionLedger, grid: ScheduleGrid) -> RetentionTimeline:
    """Per-stage live ranges of weight versions.

    A version on a stage stays resident until it has been superseded there
    and every task that reads it on that stage has run. A forward reader keeps
    it through its own slot; a backward reader may overwrite it in place, so
    it is released in the reader's slot. Under the ``pipedream`` ledger the
    backward reads the stashed forward version, which is what extends
    lifetimes (horizontal stashing).
    """
    if grid.mode != ledger.mode or grid.workers != ledger.workers or grid.config.mini_batches != ledger.mini_batches:
        raise StructuralError("ledger and grid describe different runs")
    lifetimes: dict[int, list[Lifetime]] = {}
    peaks: dict[int, int] = {}
    T = grid.horizon
    for stage in range(1, grid.workers + 1):
        commit_slot = {0: 0}
        for c in ledger.stage_commits(stage):
            commit_slot[c.version] = c.slot
        fwd_last: dict[int, int] = {}
        bwd_last: dict[int, int] = {}
        for x in ledger.consumptions:
            if x.task.stage != stage:
                continue
            bucket = fwd_last if x.task.is_forward else bwd_last
            bucket[x.version] = max(bucket.get(x.version, 0), x.task.slot)
        versions = sorted(commit_slot)
        if len(versions) != len(set(commit_slot.values())):
            raise StructuralError(f"stage {stage}: two versions committed in the same slot")
        out = []
        for i, v in enumerate(versions):
            if i + 1 == len(versions):
                out.append(Lifetime(v, commit_slot[v], None))
                continue
            free = max(commit_slot[versions[i + 1]], fwd_last.get(v, -1) + 1, bwd_last.get(v, -1))
            out.append(Lifetime(v, commit_slot[v], free))
        lifetimes[stage] = out
    timeline = RetentionTimeline(T, lifetimes, {})
    for stage in lifetimes:
        peaks[stage] = max(timeline.counts(stage), default=1)
    timeline.peak_concurrent = peaks
    return timeline


# --- staleness --------------------------------------------------------------


@dataclass
class StalenessReport:
    mode: str
    per_backward: dict[int, int]
    steady_state: int

    @property
    def all_zero(self) -> bool:
        return not any(self.per_backward.values())


def staleness_report(ledger: VersionLedger) -> StalenessReport:
    """Commits a backward could have used but did not, measured at release.

    What counts as usable follows each system's visibility rule: TiMePReSt
    only reads complete versions, so the reference is the newest complete
    version; PipeDream updates each stage in place, so the reference is the
    newest version already written on the top stage.
    """
    per = {}
    for k, used in sorted(ledger.backward_versions.items()):
        slot = ledger.release_slots[k]
        if ledger.mode == TIMEPREST:
            usable = ledger.latest_complete(slot)
        else:
            usable = ledger.latest_on_stage(ledger.workers, slot)
        per[k] = usable - used
    settled = [per[k] for k, used in ledger.backward_versions.items() if used >= 1]
    if settled:
        steady = Counter(settled).most_common(1)[0][0]
    else:
        steady = per[max(per)]
    return StalenessReport(ledger.mode, per, steady)
