"""Discrete-slot pipeline schedules: nF1B (micro-batched forwards) and 1F1B.

Both schedules come out of one slot-stepping engine. Every stage owns a FIFO
of forward work and a FIFO of backward work; in each slot a stage runs a
ready backward if it has one and otherwise its oldest ready forward. Work
produced in slot ``t`` becomes ready on the neighbouring stage in ``t + 1``.

Slots and stages are 1-based.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import DomainError

TIMEPREST = "timeprest"
PIPEDREAM = "pipedream"
MODES = (TIMEPREST, PIPEDREAM)


@dataclass(frozen=True)
class SimConfig:
    workers: int
    micro_batches: int
    mini_batches: int
    backward_cost_factor: float = 2.0
    samples_per_mini_batch: int = 32
    seed: int = 0

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        _require_int(self.workers, "workers", 2, "W >= 2")
        _require_int(self.micro_batches, "micro_batches", 2, "N >= 2")
        _require_int(self.mini_batches, "mini_batches", 1, "M >= 1")
        _require_int(self.samples_per_mini_batch, "samples_per_mini_batch", 1, ">= 1")
        _require_int(self.seed, "seed", 0, "unsigned integer")
        if not self.backward_cost_factor >= 1:
            raise DomainError("backward_cost_factor", self.backward_cost_factor, ">= 1")

    def to_dict(self) -> dict:
        return {
            "workers": self.workers,
            "micro_batches": self.micro_batches,
            "mini_batches": self.mini_batches,
            "backward_cost_factor": self.backward_cost_factor,
            "samples_per_mini_batch": self.samples_per_mini_batch,
            "seed": self.seed,
        }


def _require_int(value, name: str, lo: int, bound: str) -> None:
    if isinstance(value, bool) or not isinstance(value, int) or value < lo:
        raise DomainError(name, value, bound)


class Kind(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True, order=True)
class Task:
    """One cell of the grid. ``micro`` is 0 for backward tasks."""

    slot: int
    stage: int
    kind: Kind
    mini: int
    micro: int = 0

    @property
    def is_forward(self) -> bool:
        return self.kind is Kind.FORWARD

    @property
    def unit(self) -> tuple:
        """Identity of the unit of work, independent of where it ran."""
        return (self.kind, self.mini, self.micro)


def micro_label(micro: int) -> str:
    """1 -> 'A', 26 -> 'Z', 27 -> 'AA'."""
    out = ""
    while micro > 0:
        micro, rem = divmod(micro - 1, 26)
        out = chr(ord("A") + rem) + out
    return out


def task_label(task: Task) -> str:
    if task.is_forward:
        return f"{task.mini}{micro_label(task.micro)}"
    return f"B{task.mini}"


@dataclass
class ScheduleGrid:
    """Worker x slot occupancy of one epoch.

    ``tasks`` may be any iterable; duplicates are kept so that a hand-built
    grid can be checked by :func:`validate_schedule`.
    """

    config: SimConfig
    mode: str
    tasks: tuple[Task, ...]
    _cells: dict = field(init=False, repr=False, compare=False)
    _units: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.tasks = tuple(sorted(self.tasks))
        self._cells = {}
        self._units = {}
        for t in self.tasks:
            self._cells.setdefault((t.stage, t.slot), []).append(t)
            self._units.setdefault(t.unit, {}).setdefault(t.stage, []).append(t.slot)

    @property
    def workers(self) -> int:
        return self.config.workers

    @property
    def micro_batches(self) -> int:
        """Micro-batches per mini-batch actually used by this grid."""
        return self.config.micro_batches if self.mode == TIMEPREST else 1

    @property
    def horizon(self) -> int:
        return max((t.slot for t in self.tasks), default=0)

    def at(self, stage: int, slot: int) -> Task | None:
        cell = self._cells.get((stage, slot))
        return cell[0] if cell else None

    def cell_tasks(self, stage: int, slot: int) -> list[Task]:
        return list(self._cells.get((stage, slot), ()))

    def slots_of(self, kind: Kind, mini: int, micro: int = 0) -> dict[int, int]:
        """stage -> slot for one unit of work (first occurrence per stage)."""
        per_stage = self._units.get((kind, mini, micro), {})
        return {s: min(slots) for s, slots in per_stage.items()}

    def forward_slots(self, mini: int, micro: int) -> dict[int, int]:
        return self.slots_of(Kind.FORWARD, mini, micro)

    def backward_slots(self, mini: int) -> dict[int, int]:
        return self.slots_of(Kind.BACKWARD, mini)

    def release_slot(self, mini: int) -> int:
        """Slot at which the backward of ``mini`` runs on the last stage."""
        return self.backward_slots(mini)[self.workers]

    def finish_slot(self, mini: int) -> int:
        """Slot at which the backward of ``mini`` completes on stage 1."""
        return self.backward_slots(mini)[1]

    def injection_slot(self, mini: int, micro: int) -> int:
        return self.forward_slots(mini, micro)[1]

    def on_stage(self, stage: int) -> Iterator[Task]:
        return (t for t in self.tasks if t.stage == stage)

    def busy(self, stage: int, slot: int) -> bool:
        return (stage, slot) in self._cells


def _run_engine(config: SimConfig, micro: int, admission: int | None) -> list[Task]:
    W, M = config.workers, config.mini_batches
    pending = deque((k, m) for k in range(1, M + 1) for m in range(1, micro + 1))
    fwd = {s: deque() for s in range(2, W + 1)}  # (ready_slot, mini, micro)
    bwd = {s: deque() for s in range(1, W + 1)}  # (ready_slot, mini)
    arrived = dict.fromkeys(range(1, M + 1), 0)
    admitted: set[int] = set()
    finished: set[int] = set()
    tasks: list[Task] = []
    remaining = M * micro * W + M * W
    slot = 0
    while remaining:
        slot += 1
        produced = []
        for s in range(1, W + 1):
            if bwd[s] and bwd[s][0][0] <= slot:
                _, k = bwd[s].popleft()
                tasks.append(Task(slot, s, Kind.BACKWARD, k))
                if s > 1:
                    produced.append((bwd[s - 1], (slot + 1, k)))
                else:
                    finished.add(k)
                continue
            if s == 1:
                if not pending:
                    continue
                k, m = pending[0]
                if admission is not None and k not in admitted:
                    if len(admitted - finished) >= admission:
                        continue
                pending.popleft()
                admitted.add(k)
            else:
                queue = fwd[s]
                if not queue or queue[0][0] > slot:
                    continue
                _, k, m = queue.popleft()
            tasks.append(Task(slot, s, Kind.FORWARD, k, m))
            if s < W:
                produced.append((fwd[s + 1], (slot + 1, k, m)))
            else:
                arrived[k] += 1
                if arrived[k] == micro:
                    # loss averaging barrier: release once every micro-batch is in
                    produced.append((bwd[W], (slot + 1, k)))
        for queue, item in produced:
            queue.append(item)
        remaining = M * micro * W + M * W - len(tasks)
    return tasks


def build_nf1b_schedule(config: SimConfig) -> ScheduleGrid:
    """TiMePReSt schedule: N micro-batch forwards per mini-batch, one backward."""
    config.check()
    tasks = _run_engine(config, config.micro_batches, admission=None)
    return ScheduleGrid(config, TIMEPREST, tuple(tasks))


def build_1f1b_schedule(config: SimConfig) -> ScheduleGrid:
    """PipeDream schedule at mini-batch granularity; ``micro_batches`` is ignored.

    Stage 1 admits at most ``workers`` mini-batches that have not finished
    their backward pass, which yields the usual warm-up followed by a strict
    forward/backward alternation.
    """
    config.check()
    tasks = _run_engine(config, 1, admission=config.workers)
    return ScheduleGrid(config, PIPEDREAM, tuple(tasks))


def build_schedule(config: SimConfig, mode: str = TIMEPREST) -> ScheduleGrid:
    if mode == TIMEPREST:
        return build_nf1b_schedule(config)
    if mode == PIPEDREAM:
        return build_1f1b_schedule(config)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


# --- validation -------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


def validate_schedule(grid: ScheduleGrid, config: SimConfig | None = None) -> ValidationReport:
    """Check a grid against the structural rules of its mode.

    Rules: at most one task per cell; every expected unit present exactly once
    per stage; forwards climb the stages in increasing slots and wait only
    while the next stage is occupied; backwards descend one stage per slot,
    starting the slot after the last micro-batch reaches the top stage;
    injection follows mini-batch/micro-batch order; a stage never runs a
    forward while a backward is waiting for it.
    """
    config = config or grid.config
    W, M = config.workers, config.mini_batches
    N = config.micro_batches if grid.mode == TIMEPREST else 1
    out: list[Violation] = []

    def add(kind, msg):
        out.append(Violation(kind, msg))

    for (stage, slot), cell in sorted(grid._cells.items()):
        if len(cell) > 1:
            labels = ", ".join(task_label(t) for t in cell)
            add("exclusivity", f"worker {stage} slot {slot} holds {len(cell)} tasks ({labels})")
        if not 1 <= stage <= W or slot < 1:
            add("range", f"task {task_label(cell[0])} at worker {stage} slot {slot} is off-grid")

    expected = {(Kind.FORWARD, k, m) for k in range(1, M + 1) for m in range(1, N + 1)}
    expected |= {(Kind.BACKWARD, k, 0) for k in range(1, M + 1)}
    for unit, per_stage in grid._units.items():
        label = task_label(Task(0, 0, *unit))
        if unit not in expected:
            add("completeness", f"unexpected task {label}")
            continue
        for stage, slots in per_stage.items():
            if len(slots) > 1:
                add("completeness", f"{label} appears {len(slots)} times on worker {stage}")
    for unit in sorted(expected, key=lambda u: (u[1], u[0] is Kind.BACKWARD, u[2])):
        label = task_label(Task(0, 0, *unit))
        have = grid._units.get(unit, {})
        missing = [s for s in range(1, W + 1) if s not in have]
        if missing:
            add("completeness", f"{label} missing on worker(s) {missing}")

    for k in range(1, M + 1):
        for m in range(1, N + 1):
            slots = grid.forward_slots(k, m)
            label = f"{k}{micro_label(m)}"
            for s in range(1, W):
                if s not in slots or s + 1 not in slots:
                    continue
                a, b = slots[s], slots[s + 1]
                if b <= a:
                    add("stage-continuity", f"{label} reaches worker {s + 1} at slot {b}, not after worker {s} (slot {a})")
                    continue
                idle = [t for t in range(a + 1, b) if not grid.busy(s + 1, t)]
                if idle:
                    add(
                        "stage-continuity",
                        f"{label} waits at worker {s + 1} from slot {a + 1} to {b} although slot(s) {idle} were idle",
                    )
        bslots = grid.backward_slots(k)
        for s in range(W, 1, -1):
            if s in bslots and s - 1 in bslots and bslots[s - 1] != bslots[s] + 1:
                add(
                    "stage-continuity",
                    f"B{k} on worker {s - 1} at slot {bslots[s - 1]}, expected {bslots[s] + 1}",
                )
        tops = [grid.forward_slots(k, m).get(W) for m in range(1, N + 1)]
        if W in bslots and all(t is not None for t in tops):
            if bslots[W] != max(tops) + 1:
                add("release", f"B{k} starts at slot {bslots[W]}, expected {max(tops) + 1} on worker {W}")

    order = [(k, m) for k in range(1, M + 1) for m in range(1, N + 1)]
    inj = [grid.forward_slots(k, m).get(1) for k, m in order]
    for (prev, a), (cur, b) in zip(zip(order, inj), zip(order[1:], inj[1:])):
        if a is not None and b is not None and b <= a:
            add("injection-order", f"{cur[0]}{micro_label(cur[1])} enters before {prev[0]}{micro_label(prev[1])}")

    for k in range(1, M + 1):
        bslots = grid.backward_slots(k)
        for s in range(W - 1, 0, -1):
            if s in bslots and s + 1 in bslots:
                ready = bslots[s + 1] + 1
                for t in range(ready, bslots[s]):
                    task = grid.at(s, t)
                    if task is not None and task.is_forward:
                        add(
                            "backward-priority",
                            f"worker {s} ran {task_label(task)} at slot {t} while B{k} was waiting",
                        )
    return ValidationReport(out)


# --- measurements used by the timing checks ---------------------------------


def measured_forward_span(grid: ScheduleGrid, mini: int) -> int:
    """Slots from the first injection of ``mini`` to its last top-stage forward."""
    N, W = grid.micro_batches, grid.workers
    first = grid.injection_slot(mini, 1)
    last = max(grid.forward_slots(mini, m)[W] for m in range(1, N + 1))
    return last - first + 1


def measured_backward_span(grid: ScheduleGrid, mini: int) -> int:
    slots = grid.backward_slots(mini)
    return max(slots.values()) - min(slots.values()) + 1


def uncontended_prefix(grid: ScheduleGrid) -> list[int]:
    """Mini-batches injected back-to-back before stage 1 runs any backward.

    These are the mini-batches whose forward timing is governed purely by
    pipeline fill, the regime in which the closed-form spans are stated.
    """
    N, M = grid.micro_batches, grid.config.mini_batches
    first_b = min((t.slot for t in grid.on_stage(1) if not t.is_forward), default=None)
    out = []
    for k in range(1, M + 1):
        slots = [grid.injection_slot(k, m) for m in range(1, N + 1)]
        if slots != list(range((k - 1) * N + 1, k * N + 1)):
            break
        if first_b is not None and slots[-1] > first_b:
            break
        out.append(k)
    return out


def backward_cadence(grid: ScheduleGrid, stage: int) -> list[int]:
    """Gaps between successive backwards on ``stage`` while forwards remain.

    A gap is included only when the later backward runs before the stage's
    last forward, i.e. while there is still forward work to interleave.
    """
    slots = sorted(t.slot for t in grid.on_stage(stage) if not t.is_forward)
    last_f = max((t.slot for t in grid.on_stage(stage) if t.is_forward), default=0)
    return [b - a for a, b in zip(slots, slots[1:]) if b < last_f]


def iter_units(grid: ScheduleGrid) -> Iterable[tuple]:
    return grid._units.keys()
