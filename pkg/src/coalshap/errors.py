"""Exception taxonomy shared across the toolkit."""


class CoalshapError(Exception):
    """Base class for all toolkit errors."""


# --- volume formats ---

class MagicMismatch(CoalshapError):
    pass


class TruncatedPayload(CoalshapError):
    pass


class BadHeader(CoalshapError):
    pass


class IllegalLabel(CoalshapError):
    pass


class UnknownLabel(CoalshapError):
    pass


class IoFailure(CoalshapError):
    pass


# --- metrics ---

class DimMismatch(CoalshapError):
    pass


class SubjectSkipped(CoalshapError):
    """Raised when a metric policy says the whole subject must be dropped."""


# --- shapley ---

class ExactModeOverflow(CoalshapError):
    """Exact enumeration refused; too many channels."""


class ValueFnFailure(CoalshapError):
    def __init__(self, bitmask, cause):
        super().__init__(f"value function failed on coalition {bitmask}: {cause}")
        self.bitmask = bitmask
        self.cause = cause


class ChannelCountMismatch(CoalshapError):
    pass


# --- adapters ---

class AdapterFailure(CoalshapError):
    pass


class MissingPrediction(AdapterFailure):
    def __init__(self, subject_id, bitmask):
        super().__init__(f"no prediction for subject {subject_id!r}, coalition {bitmask}")
        self.subject_id = subject_id
        self.bitmask = bitmask


class AdapterTimeout(AdapterFailure):
    pass


class ProtocolViolation(AdapterFailure):
    pass


class NonzeroExit(AdapterFailure):
    def __init__(self, code, stderr_excerpt=""):
        super().__init__(f"adapter exited with code {code}: {stderr_excerpt}")
        self.code = code
        self.stderr_excerpt = stderr_excerpt


# --- statistics ---

class DomainError(CoalshapError):
    pass


class DegenerateSample(CoalshapError):
    pass


class SampleTooSmall(CoalshapError):
    pass


class LengthMismatch(CoalshapError):
    pass


class InsufficientGroups(CoalshapError):
    pass


# --- clustering ---

class TooFewPoints(CoalshapError):
    pass


class SingleCluster(CoalshapError):
    pass


# --- pipeline ---

class MissingStage(CoalshapError):
    def __init__(self, stage):
        super().__init__(f"required stage output missing: {stage}")
        self.stage = stage
