"""Slot-level simulator for nF1B pipeline schedules and their weight versions."""

__version__ = "0.1.0"

from .errors import DomainError, InsufficientHorizonError, IntegrityError, StructuralError
from .ledger import (
    VersionLedger,
    assign_versions,
    closed_form_v,
    decompose_sequences,
    measure_version_difference,
    retention_timeline,
    staleness_report,
)
from .metrics import CostModel, MetricsReport, epoch_metrics, sweep
from .render import render_timeline
from .schedule import MODES, PIPEDREAM, TIMEPREST, ScheduleGrid, SimConfig, build_schedule, validate_schedule
