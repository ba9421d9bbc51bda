"""Exception hierarchy shared across the controller modules."""

from __future__ import annotations


class WindctlError(Exception):
    """Base class for all controller errors."""

    code = "error"

    def to_dict(self) -> dict:
        return {"error": self.code, "detail": str(self)}


class ScenarioError(WindctlError):
    """Scenario document failed to parse or violates a structural invariant."""

    code = "scenario-error"

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(message if field is None else f"{field}: {message}")


class UnknownEntityError(WindctlError):
    code = "unknown-entity"


class InstabilityError(WindctlError):
    """Aggregate arrival rate exceeds the service rate at a hop."""

    code = "instability"

    def __init__(self, message: str, hop: int | None = None):
        self.hop = hop
        super().__init__(message)


class AdmissionError(WindctlError):
    """Flow admission rejected; `constraint` names what was binding."""

    code = "admission-rejected"

    def __init__(self, message: str, constraint: str):
        self.constraint = constraint
        super().__init__(message)

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["constraint"] = self.constraint
        return d


class IsolationError(WindctlError):
    code = "isolation-error"


class CapacityError(WindctlError):
    """Table full, slots exhausted, label pool exhausted and similar."""

    code = "capacity-exhausted"


class AuthenticationError(WindctlError):
    code = "authentication-failed"


class TokenExpiredError(WindctlError):
    code = "token-expired"


class TokenInvalidError(WindctlError):
    code = "token-invalid"


class AuthorizationError(WindctlError):
    """Intent denied; `field` names the violated profile field."""

    code = "authorization-denied"

    def __init__(self, message: str, field: str):
        self.field = field
        super().__init__(message)

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["field"] = self.field
        return d


class MalformedIntentError(WindctlError):
    code = "malformed-intent"


class ConfigurationError(WindctlError):
    code = "configuration-error"


class StoreUnavailableError(WindctlError):
    """No majority reachable; the caller may retry."""

    code = "unavailable"


class SyncTimeoutError(WindctlError):
    """Adaptive-shard propagation could not complete within the deadline."""

    code = "sync-forced-timeout"


class ReserveFailedError(WindctlError):
    """Inter-domain segment reservation failed at a specific domain."""

    code = "reserve-failed"

    def __init__(self, domain: str, reason: str):
        self.domain = domain
        self.reason = reason
        super().__init__(f"reserve failed at {domain}: {reason}")

    def to_dict(self) -> dict:
        d = super().to_dict()
        d.update({"domain": self.domain, "reason": self.reason})
        return d
