"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inconsistent tables, missing augmentation mapping, or an invalid config."""


class DatasetError(ValueError):
    """Base class for dataset loading problems."""


class DatasetParseError(DatasetError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DatasetValidationError(DatasetError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptyDatasetError(DatasetError):
    pass


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient becomes non-finite during training."""

    def __init__(self, step, tuple_indices, what="loss"):
        idx = ", ".join(str(i) for i in tuple_indices)
        super().__init__(f"non-finite {what} at step {step} (tuples: {idx})")
        self.step = step
        self.tuple_indices = list(tuple_indices)
