"""Epoch metrics under a slot cost model, and parameter sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DomainError, InsufficientHorizonError
from .ledger import (
    VersionLedger,
    assign_versions,
    closed_form_v,
    measure_version_difference,
    decompose_sequences,
    retention_timeline,
)
from .schedule import MODES, PIPEDREAM, TIMEPREST, ScheduleGrid, SimConfig, build_schedule


@dataclass(frozen=True)
class CostModel:
    """Wall-time of slots and transfers.

    Forward cost is linear in the samples processed; a backward always covers
    the full mini-batch and costs ``backward_cost_factor`` times a full-size
    forward. Transfers cost ``comm_cost_per_value`` per transmitted value,
    where a sample carries ``activation_width`` values across a boundary.
    """

    forward_cost_per_sample: float = 1.0
    backward_cost_factor: float = 2.0
    comm_cost_per_value: float = 0.001
    activation_width: int = 16
    parameter_count_per_stage: int = 1024

    def __post_init__(self):
        if not self.forward_cost_per_sample > 0:
            raise DomainError("forward_cost_per_sample", self.forward_cost_per_sample, "> 0")
        if not self.backward_cost_factor >= 1:
            raise DomainError("backward_cost_factor", self.backward_cost_factor, ">= 1")
        if not self.comm_cost_per_value >= 0:
            raise DomainError("comm_cost_per_value", self.comm_cost_per_value, ">= 0")
        for name in ("activation_width", "parameter_count_per_stage"):
            if getattr(self, name) < 1:
                raise DomainError(name, getattr(self, name), ">= 1")

    @classmethod
    def for_config(cls, config: SimConfig, **overrides) -> "CostModel":
        overrides.setdefault("backward_cost_factor", config.backward_cost_factor)
        return cls(**overrides)

    def forward_slot_cost(self, samples: float) -> float:
        return self.forward_cost_per_sample * samples

    def backward_slot_cost(self, samples: float) -> float:
        return self.backward_cost_factor * self.forward_slot_cost(samples)

    def comm_cost(self, values: float) -> float:
        return self.comm_cost_per_value * values


@dataclass
class MetricsReport:
    mode: str
    makespan: float
    throughput: float
    idle_fraction: float
    comm_forward: int
    comm_backward: int
    peak_retained_versions: dict[int, int]
    peak_stashed_activations: dict[int, float]
    memory_footprint: dict[int, float]
    slot_costs: list[float] = field(repr=False, default_factory=list)

    @property
    def comm_events(self) -> int:
        return self.comm_forward + self.comm_backward


def task_cost(task, grid: ScheduleGrid, cost: CostModel) -> float:
    S = grid.config.samples_per_mini_batch
    W = grid.workers
    if task.is_forward:
        samples = S / grid.micro_batches
        c = cost.forward_slot_cost(samples)
        if task.stage < W:
            c += cost.comm_cost(samples * cost.activation_width)
        return c
    c = cost.backward_slot_cost(S)
    if task.stage > 1:
        c += cost.comm_cost(S * cost.activation_width)
    return c


def stashed_activations(grid: ScheduleGrid) -> dict[int, list[float]]:
    """Samples held as stored activations per stage and slot.

    A forward keeps its activations from its slot until the backward of its
    mini-batch has run on that stage.
    """
    S, N = grid.config.samples_per_mini_batch, grid.micro_batches
    per = {s: [0.0] * (grid.horizon + 2) for s in range(1, grid.workers + 1)}
    for t in grid.tasks:
        if not t.is_forward:
            continue
        end = grid.backward_slots(t.mini)[t.stage]
        for slot in range(t.slot, end + 1):
            per[t.stage][slot] += S / N
    return {s: v[1 : grid.horizon + 1] for s, v in per.items()}


def epoch_metrics(grid: ScheduleGrid, ledger: VersionLedger | None = None, cost: CostModel | None = None) -> MetricsReport:
    """Makespan, throughput, bubbles, transfers and memory for one epoch.

    Slots are globally synchronous: a slot lasts as long as its most
    expensive task, and the makespan is the sum of slot durations.
    """
    ledger = ledger or assign_versions(grid)
    cost = cost or CostModel.for_config(grid.config)
    W, T = grid.workers, grid.horizon
    slot_costs = []
    busy = 0
    for slot in range(1, T + 1):
        here = [grid.at(s, slot) for s in range(1, W + 1)]
        here = [t for t in here if t is not None]
        busy += len(here)
        slot_costs.append(max((task_cost(t, grid, cost) for t in here), default=0.0))
    makespan = float(sum(slot_costs))
    comm_f = sum(1 for t in grid.tasks if t.is_forward and t.stage < W)
    comm_b = sum(1 for t in grid.tasks if not t.is_forward and t.stage > 1)
    retention = retention_timeline(ledger, grid)
    acts = stashed_activations(grid)
    peak_act = {s: max(v, default=0.0) for s, v in acts.items()}
    memory = {
        s: retention.peak_concurrent[s] * cost.parameter_count_per_stage + peak_act[s] * cost.activation_width
        for s in range(1, W + 1)
    }
    return MetricsReport(
        mode=grid.mode,
        makespan=makespan,
        throughput=1.0 / makespan,
        idle_fraction=1.0 - busy / (W * T),
        comm_forward=comm_f,
        comm_backward=comm_b,
        peak_retained_versions=dict(retention.peak_concurrent),
        peak_stashed_activations=peak_act,
        memory_footprint=memory,
        slot_costs=slot_costs,
    )


# --- sweeps -----------------------------------------------------------------

SWEEP_COLUMNS = (
    "workers",
    "micro_batches",
    "mode",
    "mini_batches",
    "closed_form_v",
    "measured_v",
    "sequences",
    "makespan",
    "throughput",
    "idle_fraction",
    "comm_forward",
    "comm_backward",
    "peak_versions",
    "error",
)


def sweep_row(W: int, N: int, mode: str, M: int | None = None, cost_overrides: dict | None = None, **config_kw) -> dict:
    row = dict.fromkeys(SWEEP_COLUMNS, "")
    row.update(workers=W, micro_batches=N, mode=mode)
    try:
        M = 2 * (W + N) if M is None else M
        row["mini_batches"] = M
        config = SimConfig(W, N, M, **config_kw)
        grid = build_schedule(config, mode)
        ledger = assign_versions(grid)
        report = epoch_metrics(grid, ledger, CostModel.for_config(config, **(cost_overrides or {})))
    except (DomainError, ValueError) as exc:
        row["error"] = str(exc)
        return row
    if mode == TIMEPREST:
        row["closed_form_v"] = closed_form_v(W, N)
    try:
        row["measured_v"] = measure_version_difference(ledger)
        row["sequences"] = len(decompose_sequences(ledger).sequences)
    except InsufficientHorizonError:
        pass
    row.update(
        makespan=report.makespan,
        throughput=report.throughput,
        idle_fraction=report.idle_fraction,
        comm_forward=report.comm_forward,
        comm_backward=report.comm_backward,
        peak_versions=max(report.peak_retained_versions.values()),
    )
    return row


def sweep(workers, micro_batches, modes=(TIMEPREST,), mini_batches: int | None = None, **kw) -> list[dict]:
    """One row per (W, N, mode), sorted by those keys.

    Invalid cells are reported in the ``error`` column instead of raising.
    """
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
    rows = [sweep_row(W, N, mode, mini_batches, **kw) for W in workers for N in micro_batches for mode in modes]
    mode_rank = {m: i for i, m in enumerate(MODES)}
    rows.sort(key=lambda r: (r["workers"], r["micro_batches"], mode_rank[r["mode"]]))
    return rows


def makespan_monotonicity_exceptions(rows: list[dict]) -> list[tuple[int, str, int, int]]:
    """(W, mode, N_lo, N_hi) pairs where makespan grew with N at fixed W."""
    out = []
    keyed = {}
    for r in rows:
        if r["error"]:
            continue
        keyed.setdefault((r["workers"], r["mode"]), []).append((r["micro_batches"], r["makespan"]))
    for (W, mode), pts in sorted(keyed.items()):
        pts.sort()
        for (n0, m0), (n1, m1) in zip(pts, pts[1:]):
            if m1 > m0:
                out.append((W, mode, n0, n1))
    return out
