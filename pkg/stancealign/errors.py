class StanceAlignError(Exception):
    pass


class ConfigError(StanceAlignError, ValueError):
    pass


class DatasetLoadError(StanceAlignError, ValueError):
    pass


class RecodeError(StanceAlignError, ValueError):
    pass


class SplitError(StanceAlignError, ValueError):
    pass


class MappingError(StanceAlignError, ValueError):
    pass


class UnsupportedOperationError(StanceAlignError, ValueError):
    pass


class TrainingDataError(StanceAlignError, ValueError):
    pass


class CorpusError(StanceAlignError, ValueError):
    def __init__(self, message: str, question_ids=()):
        super().__init__(message)
        self.question_ids = list(question_ids)


class MetricError(StanceAlignError, ValueError):
    pass


class DimensionError(StanceAlignError, ValueError):
    pass


class RankError(StanceAlignError, ValueError):
    pass


class DecompositionError(StanceAlignError, ValueError):
    pass


class ReportError(StanceAlignError, ValueError):
    pass


class NumericError(StanceAlignError, ValueError):
    pass


class PolicyStateError(StanceAlignError, RuntimeError):
    pass


class PolicyContractError(StanceAlignError, RuntimeError):
    pass


class TrainingDivergedError(StanceAlignError, RuntimeError):
    def __init__(self, message: str, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class GenerationError(StanceAlignError, RuntimeError):
    pass


class DegenerateTestError(StanceAlignError, RuntimeError):
    """Zero variance where a spread is needed; ``p_value`` holds the fallback decision when there is one."""

    def __init__(self, message: str, p_value=None):
        super().__init__(message)
        self.p_value = p_value


class AdapterError(StanceAlignError, RuntimeError):
    pass
