#!/usr/bin/env python3
"""
ClickCFA - Error Types

Every error raised by the library derives from ClickCFAError and carries the
exit code main.py reports for it.
"""

from typing import Optional


class ClickCFAError(Exception):
    """Base class for all ClickCFA errors."""

    exit_code = 1


class UsageError(ClickCFAError):
    """Invalid command line usage or recipe combination."""

    exit_code = 1


class DataError(ClickCFAError):
    """Problems with input data (logs, sessions, splits, clusters)."""

    exit_code = 2


class MalformedRecordError(DataError):
    """A raw player record violates the record schema."""


class EmptyEncodingError(DataError):
    """A session has no click before the first quiz answer."""


class InvalidScoreError(DataError):
    """Awarded points exceed the maximum points of a question."""


class CorpusRejectedError(DataError):
    """More than half of the lines of a log are malformed."""


class InvalidSplitError(DataError):
    """A fold or meta split cannot be produced from the given sessions."""


class InvalidArchetypeError(DataError):
    """A synthetic archetype is not a valid Markov generator."""


class ClusteringError(DataError):
    """k-means cannot run on the given points."""


class ShapeError(DataError, ValueError):
    """Tensor shapes do not agree."""


class TrainingDivergedError(ClickCFAError):
    """A NaN or infinite value appeared during optimisation."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        stage: str = "train",
        epoch: Optional[int] = None,
        iteration: Optional[int] = None
    ):
        location = [stage]
        if epoch is not None:
            location.append(f"epoch {epoch}")
        if iteration is not None:
            location.append(f"iteration {iteration}")
        super().__init__(f"{message} ({', '.join(location)})")
        self.stage = stage
        self.epoch = epoch
        self.iteration = iteration
