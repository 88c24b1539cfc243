"""Exception types shared across the package."""


class DomainError(ValueError):
    """A configuration value lies outside its admissible domain."""

    def __init__(self, field: str, value, bound: str):
        self.field = field
        self.value = value
        self.bound = bound
        super().__init__(f"domain violation: {field}={value!r} (requires {bound})")


class StructuralError(ValueError):
    """A grid, ledger or model does not have the shape an operation needs."""


class InsufficientHorizonError(ValueError):
    """The simulated epoch is too short to observe steady-state behaviour."""


class IntegrityError(RuntimeError):
    """A checkpoint is corrupt, truncated or missing."""

    def __init__(self, message: str, stage: int | None = None, epoch: int | None = None):
        self.stage = stage
        self.epoch = epoch
        where = []
        if stage is not None:
            where.append(f"stage {stage}")
        if epoch is not None:
            where.append(f"epoch {epoch}")
        suffix = f" [{', '.join(where)}]" if where else ""
        super().__init__(message + suffix)
