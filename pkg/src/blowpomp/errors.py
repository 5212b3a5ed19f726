"""Exception types shared across the package."""

from __future__ import annotations

__all__ = [
    "AllWeightsDegenerate",
    "BlowpompError",
    "Divergence",
    "IndivisibleLag",
    "InsufficientHistory",
    "InvalidSigma",
    "MalformedRow",
    "MissingFile",
    "NegativeCount",
    "NonInvertible",
    "NonPositiveParameter",
    "NonStationary",
    "NonUniformSpacing",
    "OptimFailed",
    "ParticleDepletion",
    "WindowTooShort",
    "ZeroCount",
]


class BlowpompError(Exception):
    """Base class for all package-specific failures."""


class MissingFile(BlowpompError):
    pass


class MalformedRow(BlowpompError):
    def __init__(self, line_number, message):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class NonUniformSpacing(BlowpompError):
    pass


class NegativeCount(BlowpompError):
    pass


class IndivisibleLag(BlowpompError):
    pass


class WindowTooShort(BlowpompError):
    pass


class NonPositiveParameter(BlowpompError):
    pass


class InvalidSigma(BlowpompError):
    pass


class ParticleDepletion(BlowpompError):
    """All particle weights vanished at one observation step.

    Carries the 0-based index of the failing step and whatever
    diagnostics the filter had accumulated up to that point.
    """

    def __init__(self, step_index, partial=None, iteration=None):
        where = f"observation step {step_index}"
        if iteration is not None:
            where += f" of filtering iteration {iteration}"
        super().__init__(f"all particle weights degenerate at {where}")
        self.step_index = step_index
        self.partial = partial
        self.iteration = iteration


class AllWeightsDegenerate(BlowpompError):
    pass


class Divergence(BlowpompError):
    pass


class ZeroCount(BlowpompError):
    def __init__(self, index):
        super().__init__(f"count at position {index} is 0; log transform undefined")
        self.index = index


class NonStationary(BlowpompError):
    pass


class NonInvertible(BlowpompError):
    pass


class OptimFailed(BlowpompError):
    pass


class InsufficientHistory(BlowpompError):
    pass
