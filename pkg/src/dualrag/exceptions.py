"""Exception hierarchy shared across the package."""


class DualRAGError(Exception):
    """Base class for every error raised by dualrag."""


class OutlineError(DualRAGError):
    pass


class DuplicateIteration(OutlineError):
    """An entity already holds a fragment for this iteration."""


class UnknownEntity(OutlineError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class MissingSlot(DualRAGError, KeyError):
    def __init__(self, slot):
        super().__init__(slot)
        self.slot = slot

    def __str__(self):
        return f"unbound prompt slot {{{self.slot}}}"


class UnscriptedRequest(DualRAGError, LookupError):
    def __init__(self, tag):
        super().__init__(tag)
        self.tag = tag

    def __str__(self):
        return f"no scripted response for tag {self.tag!r}"


class TransportError(DualRAGError):
    """Network-level failure talking to a remote endpoint."""


class BudgetExceeded(TransportError):
    """Retries exhausted."""


class ProtocolError(DualRAGError):
    """The remote endpoint answered with something we cannot use."""


class ParseError(DualRAGError, ValueError):
    def __init__(self, message, raw_text=""):
        super().__init__(message)
        self.raw_text = raw_text


class JudgeParseError(ParseError):
    pass


class DuplicateDocId(DualRAGError, ValueError):
    pass


class EmptyQuery(DualRAGError, ValueError):
    pass


class EmptyPlan(DualRAGError, ValueError):
    pass


class NoEvidence(DualRAGError, ValueError):
    pass


class FormatError(DualRAGError, ValueError):
    pass
