"""Domain exceptions.

Everything raised on bad inputs or unsatisfiable requests derives from
:class:`ConceptLabError`, so the CLI can map domain failures to exit code 1
while genuine usage errors stay with argparse's exit code 2.
"""


class ConceptLabError(Exception):
    """Base class for all domain errors."""


# -- world construction -----------------------------------------------------

class NonPositiveWeight(ConceptLabError):
    pass


class WeightSumMismatch(ConceptLabError):
    pass


class NonSPDCovariance(ConceptLabError):
    pass


class UnknownTagInConcept(ConceptLabError):
    pass


class UnknownConcept(ConceptLabError):
    pass


class EmptySupport(ConceptLabError):
    """No mixture component shares a tag with the prompt."""


# -- sampling / search ------------------------------------------------------

class BadParameter(ConceptLabError):
    pass


class BadSwitchIndex(ConceptLabError):
    pass


class EmptyBatch(ConceptLabError):
    pass


# -- mining ------------------------------------------------------------------

class OutOfRange(ConceptLabError):
    pass


class EmptyReply(ConceptLabError):
    pass


class GeneratorUnavailable(ConceptLabError):
    pass


class UnsplittablePatternName(ConceptLabError):
    pass


class UnboundPair(ConceptLabError):
    pass
