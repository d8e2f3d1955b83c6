"""Exception hierarchy shared across the runtime."""


class PmfrError(Exception):
    """Base class for all runtime errors."""


class InvalidEntry(PmfrError):
    """A knowledge entry violates its invariants; nothing was committed."""


class EvaluatorBackendFailure(PmfrError):
    """The adequacy evaluator backend is unreachable. Callers fail open."""


class ModelBackendFailure(PmfrError):
    """A chat-model backend call failed (timeout, connection, HTTP error)."""


class AllToolsFailed(PmfrError):
    """Every registered search tool errored during acquisition."""


class EmptyFacts(PmfrError):
    """Synopsis requested for an empty consolidated-fact set."""


class DuplicateInflight(PmfrError):
    """A refinement task for this topic is already running in this session."""


class IllegalTransition(PmfrError):
    """A refinement task was driven along an undeclared state transition."""


class EmptyInput(PmfrError):
    """An operation that needs input (a query, a latency list) got none."""


class TurnInFlight(PmfrError):
    """A turn is already being handled for this session."""


class UnknownSession(PmfrError):
    """No session exists under the given id."""


class CapacityExceeded(PmfrError):
    """The service is at its configured session limit."""


class ScriptParseError(PmfrError):
    """A session script file could not be parsed."""


class ConfigError(PmfrError):
    """A configuration file is invalid; the message names the offending key."""
