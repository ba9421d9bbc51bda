"""Accounts, token issuance/validation (local and federated), intent
authorization against access profiles, and intra/inter-domain request
splitting.

Tokens are opaque random 128-bit strings held server-side; the federated
identity provider is an in-process stub with an injectable verdict table.
Every decision lands in an append-only audit log.
"""

from __future__ import annotations

import json
import secrets
from dataclasses import dataclass, field

from .errors import (
    AuthenticationError,
    AuthorizationError,
    ConfigurationError,
    MalformedIntentError,
    TokenExpiredError,
    TokenInvalidError,
)
from .netcalc import ArrivalCurve

DEFAULT_TOKEN_LIFETIME_S = 3600.0


@dataclass
class Token:
    value: str
    subject: str
    issuer: str  # "local" | "federated"
    issued_at: float
    expires_at: float
    scope: frozenset[str] = frozenset({"intents"})

    def __post_init__(self):
        if self.expires_at <= self.issued_at:
            raise ValueError("token must expire after issuance")


@dataclass
class AccessProfile:
    tenant: str
    allowed_endpoint_pairs: set[frozenset[str]]
    max_bandwidth_bps: float
    min_delay_req_s: float
    allowed_protections: set[str]

    def __post_init__(self):
        if not self.allowed_endpoint_pairs:
            raise ConfigurationError(
                f"profile for {self.tenant!r} needs at least one endpoint pair"
            )

    @classmethod
    def from_dict(cls, tenant: str, doc: dict) -> "AccessProfile":
        return cls(
            tenant=tenant,
            allowed_endpoint_pairs={
                frozenset(pair) for pair in doc["allowed_endpoint_pairs"]
            },
            max_bandwidth_bps=float(doc["max_bandwidth_bps"]),
            min_delay_req_s=float(doc.get("min_delay_req_s", 0.0)),
            allowed_protections=set(
                doc.get("allowed_protections", ["none"])
            ),
        )


@dataclass
class Intent:
    intent_id: str
    endpoints: tuple[str, str]
    arrival: ArrivalCurve
    delay_req_s: float | None
    protection: str = "none"
    flow_class: str = "real-time"
    schedule: tuple[float, float] | None = None
    service: str | None = None
    chain: list[str] | None = None

    def validate(self) -> None:
        if not self.endpoints[0] or not self.endpoints[1]:
            raise MalformedIntentError("intent endpoints must be non-empty")
        if self.schedule is not None and self.schedule[0] >= self.schedule[1]:
            raise MalformedIntentError("schedule start must precede end")


@dataclass
class AuditRecord:
    at: float
    subject: str
    operation: str
    verdict: str
    detail: str = ""

    def to_line(self) -> str:
        return json.dumps(
            {
                "at": self.at,
                "subject": self.subject,
                "operation": self.operation,
                "verdict": self.verdict,
                "detail": self.detail,
            },
            sort_keys=True,
        )


class IdentityProviderStub:
    """In-process stand-in for the federated identity provider."""

    def __init__(self):
        self.verdicts: dict[str, str] = {}  # federated credential -> subject

    def register(self, credential: str, subject: str) -> None:
        self.verdicts[credential] = subject

    def validate(self, credential: str) -> str | None:
        return self.verdicts.get(credential)


class SecurityManager:
    """Token issuance and validation plus the account table."""

    def __init__(self, clock=None):
        import time

        self.clock = clock or time.time
        self.accounts: dict[str, str] = {}
        self.tokens: dict[str, Token] = {}
        self.idp = IdentityProviderStub()
        self.audit: list[AuditRecord] = []

    def add_account(self, subject: str, password: str) -> None:
        self.accounts[subject] = password

    def _record(self, subject: str, operation: str, verdict: str,
                detail: str = "") -> None:
        self.audit.append(
            AuditRecord(self.clock(), subject, operation, verdict, detail)
        )

    def authenticate(self, credentials: dict) -> Token:
        """Issue a bearer token for valid local or federated credentials."""
        now = self.clock()
        if credentials.get("federated"):
            subject = self.idp.validate(credentials.get("idp_token", ""))
            if subject is None:
                self._record("?", "authenticate", "denied", "federated")
                raise AuthenticationError("identity provider rejected credential")
            issuer = "federated"
        else:
            subject = credentials.get("username", "")
            password = credentials.get("password", "")
            if self.accounts.get(subject) != password or not subject:
                self._record(subject or "?", "authenticate", "denied")
                raise AuthenticationError("unknown account or wrong password")
            issuer = "local"
        token = Token(
            value=secrets.token_hex(16),
            subject=subject,
            issuer=issuer,
            issued_at=now,
            expires_at=now + DEFAULT_TOKEN_LIFETIME_S,
        )
        self.tokens[token.value] = token
        self._record(subject, "authenticate", "ok", issuer)
        return token

    def validate_token(self, token_value: str) -> str:
        token = self.tokens.get(token_value)
        if token is None:
            raise TokenInvalidError("unknown or tampered token")
        if self.clock() > token.expires_at:
            raise TokenExpiredError(f"token for {token.subject} expired")
        if token.issuer == "federated":
            # round-trip through the identity provider stub
            if token.subject not in self.idp.verdicts.values():
                raise TokenInvalidError("identity provider no longer vouches")
        return token.subject

    def dump_audit_ndjson(self) -> str:
        return "\n".join(r.to_line() for r in self.audit) + (
            "\n" if self.audit else ""
        )


class ReferenceMonitor:
    """NBI front door: proxies credentials to the security manager, checks
    intents against access profiles and splits inter-domain requests."""

    def __init__(self, sm: SecurityManager, domain_resolver, gateway_resolver):
        """domain_resolver(address) -> domain id;
        gateway_resolver(tenant) -> gateway address or None."""
        self.sm = sm
        self.profiles: dict[str, AccessProfile] = {}
        self.domain_resolver = domain_resolver
        self.gateway_resolver = gateway_resolver

    def add_profile(self, profile: AccessProfile) -> None:
        self.profiles[profile.tenant] = profile

    def authenticate(self, credentials: dict) -> Token:
        return self.sm.authenticate(credentials)

    def authorize_intent(self, token_value: str, intent: Intent) -> str:
        """Returns the authenticated tenant or raises AuthorizationError
        naming the violated profile field."""
        subject = self.sm.validate_token(token_value)
        intent.validate()
        profile = self.profiles.get(subject)
        verdict = "ok"
        try:
            if profile is None:
                raise AuthorizationError(
                    f"no access profile for {subject!r}", field="profile"
                )
            if frozenset(intent.endpoints) not in profile.allowed_endpoint_pairs:
                raise AuthorizationError(
                    f"endpoint pair {intent.endpoints} not allowed",
                    field="allowedEndpointPairs",
                )
            if intent.arrival.rate > profile.max_bandwidth_bps:
                raise AuthorizationError(
                    f"rate {intent.arrival.rate} exceeds profile cap",
                    field="maxBandwidth",
                )
            if (
                intent.delay_req_s is not None
                and intent.delay_req_s < profile.min_delay_req_s
            ):
                raise AuthorizationError(
                    f"delay requirement {intent.delay_req_s} below profile floor",
                    field="minDelayReq",
                )
            if intent.protection not in profile.allowed_protections:
                raise AuthorizationError(
                    f"protection {intent.protection!r} not allowed",
                    field="allowedProtections",
                )
        except AuthorizationError as e:
            verdict = f"denied:{e.field}"
            raise
        finally:
            self.sm._record(subject, f"intent:{intent.intent_id}", verdict)
        return subject

    def split_request(self, intent: Intent, tenant: str):
        """(intra part, inter part or None).

        For cross-domain endpoints the intra leg ends at the tenant VTN's
        gateway interface; the inter part carries only endpoint domains and
        the QoS metrics.
        """
        src_domain = self.domain_resolver(intent.endpoints[0])
        dst_domain = self.domain_resolver(intent.endpoints[1])
        if src_domain == dst_domain:
            return intent, None
        gateway = self.gateway_resolver(tenant)
        if gateway is None:
            raise ConfigurationError(
                f"tenant {tenant!r} VTN has no gateway interface configured"
            )
        intra = Intent(
            intent_id=f"{intent.intent_id}:intra",
            endpoints=(intent.endpoints[0], gateway),
            arrival=intent.arrival,
            delay_req_s=intent.delay_req_s,
            protection=intent.protection,
            flow_class=intent.flow_class,
            schedule=intent.schedule,
            service=intent.service,
            chain=intent.chain,
        )
        inter = {
            "intent_id": intent.intent_id,
            "src_domain": src_domain,
            "dst_domain": dst_domain,
            "src_endpoint": intent.endpoints[0],
            "dst_endpoint": intent.endpoints[1],
            "rate_bps": intent.arrival.rate,
            "burst_bits": intent.arrival.burst,
            "delay_req_s": intent.delay_req_s,
            "protection": intent.protection,
        }
        return intra, inter
