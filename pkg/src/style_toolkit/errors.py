"""Exception hierarchy shared across the toolkit.

Domain errors derive from :class:`ToolkitError` so the CLI and service can
map them to exit code 1 / structured HTTP errors without catching bare
``Exception``.
"""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all domain errors raised by this package."""

    code = "toolkit_error"


class GeometryMismatchError(ToolkitError):
    """A latent code, direction, or model does not conform to the expected geometry."""

    code = "geometry_mismatch"


class BackendUnavailableError(ToolkitError):
    """A required backend component (weights, runtime) is not available."""

    code = "backend_unavailable"


class IdentityUnavailableError(BackendUnavailableError):
    """Identity loss was requested but the backend has no identity embedder."""

    code = "identity_unavailable"

    def __init__(self, message: str = "identity loss unavailable: backend has no identity embedder"):
        super().__init__(message)


class InverterUnavailableError(BackendUnavailableError):
    """Image inversion was requested but the backend has no inverter."""

    code = "inverter_unavailable"


class DegeneratePromptError(ToolkitError):
    """Target and neutral prompts embed to the same point; no direction exists."""

    code = "degenerate_prompt"


class DivergenceError(ToolkitError):
    """An iterative run produced a non-finite loss.

    Carries the partial trace/history recorded up to the failing step so the
    caller can diagnose what happened.
    """

    code = "divergence"

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history


class StoreIntegrityError(ToolkitError):
    """An artifact was re-put under the same key with different content."""

    code = "store_integrity"


class ArtifactNotFoundError(ToolkitError):
    """Requested artifact key does not exist in the store."""

    code = "artifact_not_found"
