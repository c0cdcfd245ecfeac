"""
Exception hierarchy for the type-aware query answering engine.

Every error raised on purpose by the package derives from TempCqaError so
the command-line front end can report it without a traceback.
"""


class TempCqaError(Exception):
    """Base class for all engine errors."""


class KGParseError(TempCqaError):
    """A malformed line in a TSV or JSONL input file."""

    def __init__(self, path, line_number, message):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{self.path}:{line_number}: {message}")


class ArtifactIOError(TempCqaError):
    """Reading or writing an artifact file failed."""


class KGLoadError(ArtifactIOError):
    """A required input file or directory could not be read."""


class UnknownEntityError(TempCqaError, KeyError):
    def __init__(self, entity):
        self.entity = entity
        super().__init__(f"unknown entity: {entity!r}")

    def __str__(self):
        return self.args[0]


class UnknownRelationError(TempCqaError, KeyError):
    def __init__(self, relation):
        self.relation = relation
        super().__init__(f"unknown relation: {relation!r}")

    def __str__(self):
        return self.args[0]


class QuerySemanticsError(TempCqaError):
    """A query refers to anchors or relations the graph does not know."""


class UnsupportedStructureError(TempCqaError):
    """Negation and other structures outside the nine positive forms."""


class GenerationExhaustedError(TempCqaError):
    def __init__(self, structure, attempts, produced):
        self.structure = structure
        self.attempts = attempts
        self.produced = produced
        super().__init__(
            f"could not sample a {structure} query after {attempts} attempts "
            f"({produced} queries produced so far)"
        )


class PreconditionError(TempCqaError, ValueError):
    pass


class DimensionError(TempCqaError, ValueError):
    pass


class ConfigurationError(TempCqaError, ValueError):
    pass


class GradientStateError(TempCqaError, RuntimeError):
    pass


class ContractError(TempCqaError):
    """Inputs are individually valid but violate a regime or leakage contract."""


class TrainingDivergedError(TempCqaError):
    def __init__(self, step, batch_path):
        self.step = step
        self.batch_path = str(batch_path)
        super().__init__(f"non-finite loss at step {step}; batch saved to {self.batch_path}")


class UndefinedMetricError(TempCqaError, ValueError):
    pass
