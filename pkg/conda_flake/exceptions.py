"""
Errors specific to conda flake.
"""

from __future__ import annotations

from typing import Iterable

from conda.exceptions import CondaError


class CondaFlakeError(CondaError):
    pass


class NumericFailure(CondaFlakeError):
    pass


class RankDeficientError(NumericFailure):
    pass


class DataValidationError(CondaFlakeError):
    pass


class DimensionMismatchError(DataValidationError):
    pass


class ZeroRowError(DataValidationError):
    def __init__(self, rows: Iterable[int]):
        self.rows = tuple(int(row) for row in rows)
        shown = ", ".join(str(row) for row in self.rows[:20])
        if len(self.rows) > 20:
            shown += ", ..."
        super().__init__(f"All-zero rows are not allowed (rows: {shown})")


class DataFormatError(DataValidationError):
    pass


class GramError(CondaFlakeError):
    pass


class IncompleteGramError(GramError):
    def __init__(self, missing: Iterable[tuple]):
        self.missing = tuple(missing)
        pairs = ", ".join(f"({a}, {b})" for a, b in self.missing)
        super().__init__(f"Gram matrix is missing blocks for segment pairs: {pairs}")


class UnknownPartyError(GramError):
    pass


class DuplicatePartyError(GramError):
    pass


class UpdateMismatchError(GramError):
    pass


class KernelParameterError(CondaFlakeError):
    pass


class TrainingError(CondaFlakeError):
    pass


class SingleClassError(TrainingError):
    pass


class ConvergenceError(TrainingError):
    pass


class StratificationError(TrainingError):
    pass


class DegenerateLabelsError(TrainingError):
    pass


class ProtocolError(CondaFlakeError):
    pass


class FrameError(ProtocolError):
    pass


class RegistryError(ProtocolError):
    pass


class EnvelopeError(ProtocolError):
    pass


class SignatureError(EnvelopeError):
    pass


class DecryptionError(EnvelopeError):
    pass


class HandshakeTimeout(ProtocolError):
    pass


class MissingPartyError(ProtocolError):
    pass


class SessionAborted(ProtocolError):
    pass


class ExperimentError(CondaFlakeError):
    pass


class ConfigError(ExperimentError):
    pass


class SpawnError(ExperimentError):
    pass
