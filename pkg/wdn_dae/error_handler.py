"""Error Handler Module
====================

Exception hierarchy for the WDN DAE toolkit and helpers that turn failures
into short messages for the command line.
"""

import os

import numpy as np


class WdnError(Exception):
    """Base exception for WDN DAE toolkit errors."""
    pass


class FileLoadError(WdnError):
    """Raised when an input file cannot be loaded."""

    def __init__(self, filepath, reason=None):
        self.filepath = filepath
        self.reason = reason
        message = f"Could not load file: {filepath}"
        if reason:
            message += f"\nReason: {reason}"
        super().__init__(message)


class ConfigError(WdnError):
    """Raised when a configuration file is unreadable or has unknown keys."""

    def __init__(self, source, reason=None):
        self.source = source
        self.reason = reason
        message = f"Invalid configuration: {source}"
        if reason:
            message += f"\nReason: {reason}"
        super().__init__(message)


class PreconditionError(WdnError):
    """Raised when an operation is called outside its admissible inputs."""

    def __init__(self, operation, reason):
        self.operation = operation
        self.reason = reason
        super().__init__(f"{operation}: {reason}")


# --- parsing -----------------------------------------------------------------

class UnresolvedReference(WdnError):
    """Raised when a link endpoint or curve/pattern id is not declared."""

    def __init__(self, owner, reference, line=None, suggestion=None):
        self.owner = owner
        self.reference = reference
        self.line = line
        self.suggestion = suggestion
        message = f"'{owner}' references undeclared id '{reference}'"
        if line is not None:
            message += f" (line {line})"
        if suggestion:
            message += f"\nDid you mean: {suggestion}?"
        super().__init__(message)


class UnsupportedUnits(WdnError):
    """Raised when the flow-unit token is not a known EPANET unit."""

    def __init__(self, token, supported):
        self.token = token
        self.supported = supported
        super().__init__(
            f"Unsupported flow units '{token}'. Supported: {', '.join(supported)}"
        )


class MalformedLine(WdnError):
    """Raised when a data row has the wrong arity or an unreadable value."""

    def __init__(self, section, line, content, reason=None):
        self.section = section
        self.line = line
        self.content = content
        self.reason = reason
        message = f"Malformed line {line} in [{section}]: '{content}'"
        if reason:
            message += f"\nReason: {reason}"
        super().__init__(message)


class MissingSection(WdnError):
    """Raised when the input declares no nodes or no links."""

    def __init__(self, what):
        self.what = what
        super().__init__(f"Network input has no {what}")


class UnsupportedFeature(WdnError):
    """Raised for INP features outside the supported subset."""

    def __init__(self, feature, element=None, line=None):
        self.feature = feature
        self.element = element
        self.line = line
        message = f"Unsupported feature: {feature}"
        if element:
            message += f" (element '{element}')"
        if line is not None:
            message += f" at line {line}"
        super().__init__(message)


# --- model construction ------------------------------------------------------

class DegenerateGeometry(WdnError):
    """Raised when a link or tank has zero length, diameter or area."""

    def __init__(self, element, quantity, value):
        self.element = element
        self.quantity = quantity
        self.value = value
        super().__init__(f"'{element}' has degenerate {quantity} = {value}")


class EmptyNetwork(WdnError):
    """Raised when there is nothing to build a model from."""

    def __init__(self, reason="network has no links"):
        self.reason = reason
        super().__init__(f"Empty network: {reason}")


class SpeedBelowFloor(WdnError):
    """Raised when a pump curve is evaluated below the speed floor."""

    def __init__(self, speed, floor, pump=None):
        self.speed = speed
        self.floor = floor
        self.pump = pump
        name = f"Pump '{pump}'" if pump else "Pump"
        super().__init__(
            f"{name} evaluated at speed {speed:g} below floor {floor:g}; "
            f"switch it off through the open-fraction channel instead"
        )


class UnsupportedValveMode(WdnError):
    """Raised when a regulating valve is asked to work in active mode."""

    def __init__(self, valve, kind):
        self.valve = valve
        self.kind = kind
        super().__init__(
            f"Valve '{valve}' ({kind}) in active regulating mode; only the open-mode surrogate is supported"
        )


# --- solvers -----------------------------------------------------------------

class NewtonDivergence(WdnError):
    """Raised when Newton's method hits its iteration cap."""

    def __init__(self, context, iterations, residual, time=None):
        self.context = context
        self.iterations = iterations
        self.residual = residual
        self.time = time
        message = f"Newton did not converge in {context} after {iterations} iterations (residual {residual:.3e})"
        if time is not None:
            message += f" at t = {time:g} s"
        super().__init__(message)


class SingularAlgebraicJacobian(WdnError):
    """Raised when the algebraic variables cannot be solved for."""

    def __init__(self, rcond, threshold):
        self.rcond = rcond
        self.threshold = threshold
        super().__init__(
            f"Algebraic Jacobian is singular (reciprocal condition {rcond:.3e} <= {threshold:.1e})"
        )


class InsufficientSamples(WdnError):
    """Raised when a trajectory does not bracket the requested instant."""

    def __init__(self, t, needed, available):
        self.t = t
        self.needed = needed
        self.available = available
        super().__init__(
            f"Need {needed} samples on each side of t = {t:g} s, found {available}"
        )


class WindowTooWide(WdnError):
    """Raised when a smoothing window does not fit between breakpoints."""

    def __init__(self, tau_s, min_gap):
        self.tau_s = tau_s
        self.min_gap = min_gap
        super().__init__(
            f"Smoothing width {tau_s:g} s must be smaller than the shortest breakpoint gap {min_gap:g} s"
        )


class NotAnEquilibrium(WdnError):
    """Raised when linearizing away from an operating point."""

    def __init__(self, residual, tolerance):
        self.residual = residual
        self.tolerance = tolerance
        super().__init__(
            f"State is not an equilibrium: residual {residual:.3e} > {tolerance:.1e}"
        )


class SingularAlgebraicPivot(WdnError):
    """Raised when junction heads cannot be eliminated from the linear model."""

    def __init__(self, rcond):
        self.rcond = rcond
        super().__init__(
            f"Junction elimination pivot is singular (reciprocal condition {rcond:.3e}); "
            f"a component without reservoir or tank?"
        )


class SingularStepMatrix(WdnError):
    """Raised when E - dt*A cannot be factored."""

    def __init__(self, dt):
        self.dt = dt
        super().__init__(f"Implicit Euler step matrix is singular for dt = {dt:g}")


class SingularJx(WdnError):
    """Raised when the equilibrium Jacobian cannot be inverted."""

    def __init__(self, rcond):
        self.rcond = rcond
        super().__init__(f"Equilibrium Jacobian is singular (reciprocal condition {rcond:.3e})")


class GridMismatch(WdnError):
    """Raised when two trajectories share no time span."""

    def __init__(self, span_a, span_b):
        self.span_a = span_a
        self.span_b = span_b
        super().__init__(
            f"Trajectory horizons are disjoint: [{span_a[0]:g}, {span_a[1]:g}] vs [{span_b[0]:g}, {span_b[1]:g}]"
        )


_BUILTIN_MESSAGES = [
    (FileNotFoundError, "File not found. Check the path given to --inp/--a/--b.", False),
    (PermissionError, "Permission denied while reading or writing output files.", False),
    (np.linalg.LinAlgError, "Linear algebra failure", True),  # before ValueError, its base
    (FloatingPointError, "Floating point failure", True),
    (ValueError, "Invalid value", True),
]


def handle_error(error, user_friendly=True):
    """
    Turn an exception into a one-line message for the command line.

    Toolkit errors carry their own context and are shown with their class
    name; library errors are mapped through ``_BUILTIN_MESSAGES``.
    """
    if isinstance(error, WdnError):
        return f"[{type(error).__name__}] {error}"
    if not user_friendly:
        return f"{type(error).__name__}: {error}"
    for kind, text, with_detail in _BUILTIN_MESSAGES:
        if isinstance(error, kind):
            return f"{text}: {error}" if with_detail and str(error) else text
    return f"Unexpected {type(error).__name__}: {error}"


def validate_file_path(filepath, suffixes=None):
    """
    Check that ``filepath`` names a readable, non-empty file.

    Args:
        filepath: Path to check
        suffixes: Accepted extensions (case-insensitive), any if None

    Raises:
        FileLoadError: Naming the first failed check
    """
    if not filepath:
        raise FileLoadError(filepath, "No file path provided")
    checks = [
        (os.path.exists, "File does not exist"),
        (os.path.isfile, "Path is not a file"),
        (lambda p: os.access(p, os.R_OK), "File is not readable (permission denied)"),
        (lambda p: os.path.getsize(p) > 0, "File is empty"),
    ]
    for check, reason in checks:
        if not check(filepath):
            raise FileLoadError(filepath, reason)
    if suffixes and os.path.splitext(filepath)[1].lower() not in {s.lower() for s in suffixes}:
        raise FileLoadError(filepath, f"Expected one of {', '.join(suffixes)}")
