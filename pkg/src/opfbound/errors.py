"""Exception hierarchy shared by the pipeline stages."""


class OpfBoundError(Exception):
    """Base class; the CLI maps these to structured error reports."""

    code = "error"


class ParseError(OpfBoundError):
    code = "parse_error"


class ValidationError(OpfBoundError):
    code = "validation_error"


class DegenerateBranch(OpfBoundError):
    code = "degenerate_branch"


class NoConvergence(OpfBoundError):
    code = "no_convergence"


class InfeasibleStart(OpfBoundError):
    code = "infeasible_start"


class ConventionMismatch(OpfBoundError):
    code = "convention_mismatch"


class DisconnectedGraph(OpfBoundError):
    code = "disconnected_graph"


class ModelError(OpfBoundError):
    code = "model_error"


class StitchError(OpfBoundError):
    code = "stitch_error"


class ExhaustedEscalation(OpfBoundError):
    code = "exhausted_escalation"


class EmptyVector(OpfBoundError):
    code = "empty_vector"
