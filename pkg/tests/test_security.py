import pytest

from windctl.errors import (
    AuthenticationError,
    AuthorizationError,
    ConfigurationError,
    TokenExpiredError,
    TokenInvalidError,
)
from windctl.netcalc import ArrivalCurve
from windctl.security import (
    AccessProfile,
    Intent,
    ReferenceMonitor,
    SecurityManager,
)


class FakeClock:
    def __init__(self):
        self.now = 1000.0

    def __call__(self):
        return self.now


@pytest.fixture
def sm():
    sm = SecurityManager(clock=FakeClock())
    sm.add_account("opergrid", "grid-pass")
    return sm


@pytest.fixture
def rfm(sm):
    domains = {"scada": "park", "turb4": "park", "remote": "far"}
    monitor = ReferenceMonitor(
        sm,
        domain_resolver=lambda a: domains[a],
        gateway_resolver=lambda t: "GW1" if t == "opergrid" else None,
    )
    monitor.add_profile(
        AccessProfile(
            tenant="opergrid",
            allowed_endpoint_pairs={frozenset(("scada", "turb4")),
                                    frozenset(("scada", "remote"))},
            max_bandwidth_bps=1_000_000,
            min_delay_req_s=0.001,
            allowed_protections={"none", "one-plus-one"},
        )
    )
    return monitor


def intent(rate=100_000, delay=0.03, protection="none",
           endpoints=("scada", "turb4"), schedule=None):
    return Intent(
        intent_id="i1",
        endpoints=endpoints,
        arrival=ArrivalCurve(rate, 8000),
        delay_req_s=delay,
        protection=protection,
        schedule=schedule,
    )


class TestAuthentication:
    def test_known_account_gets_token(self, sm):
        token = sm.authenticate({"username": "opergrid", "password": "grid-pass"})
        assert token.subject == "opergrid"
        assert token.issuer == "local"
        assert sm.validate_token(token.value) == "opergrid"

    def test_wrong_password_rejected(self, sm):
        with pytest.raises(AuthenticationError):
            sm.authenticate({"username": "opergrid", "password": "nope"})

    def test_federated_credential_roundtrips_through_idp(self, sm):
        sm.idp.register("idp-blob-123", "orchestrator")
        token = sm.authenticate({"federated": True, "idp_token": "idp-blob-123"})
        assert token.issuer == "federated"
        assert sm.validate_token(token.value) == "orchestrator"

    def test_federated_unknown_rejected(self, sm):
        with pytest.raises(AuthenticationError):
            sm.authenticate({"federated": True, "idp_token": "bogus"})

    def test_expired_token(self, sm):
        token = sm.authenticate({"username": "opergrid", "password": "grid-pass"})
        sm.clock.now += 3601
        with pytest.raises(TokenExpiredError):
            sm.validate_token(token.value)

    def test_tampered_token(self, sm):
        sm.authenticate({"username": "opergrid", "password": "grid-pass"})
        with pytest.raises(TokenInvalidError):
            sm.validate_token("deadbeef" * 4)

    def test_audit_log_lines(self, sm):
        sm.authenticate({"username": "opergrid", "password": "grid-pass"})
        with pytest.raises(AuthenticationError):
            sm.authenticate({"username": "opergrid", "password": "x"})
        dump = sm.dump_audit_ndjson()
        lines = dump.strip().split("\n")
        assert len(lines) == 2
        assert '"verdict": "ok"' in lines[0]
        assert '"verdict": "denied"' in lines[1]


class TestAuthorization:
    def _token(self, rfm):
        return rfm.authenticate(
            {"username": "opergrid", "password": "grid-pass"}
        ).value

    def test_intent_within_profile_accepted(self, rfm):
        assert rfm.authorize_intent(self._token(rfm), intent()) == "opergrid"

    def test_bandwidth_cap_names_field(self, rfm):
        with pytest.raises(AuthorizationError) as exc:
            rfm.authorize_intent(self._token(rfm), intent(rate=2_000_000))
        assert exc.value.field == "maxBandwidth"

    def test_delay_floor_names_field(self, rfm):
        with pytest.raises(AuthorizationError) as exc:
            rfm.authorize_intent(self._token(rfm), intent(delay=0.0001))
        assert exc.value.field == "minDelayReq"

    def test_protection_not_allowed(self, rfm):
        with pytest.raises(AuthorizationError) as exc:
            rfm.authorize_intent(
                self._token(rfm), intent(protection="fast-failover")
            )
        assert exc.value.field == "allowedProtections"

    def test_foreign_pair_denied(self, rfm):
        with pytest.raises(AuthorizationError) as exc:
            rfm.authorize_intent(
                self._token(rfm), intent(endpoints=("turb4", "remote"))
            )
        assert exc.value.field == "allowedEndpointPairs"

    def test_scheduled_intent_accepted(self, rfm):
        ok = rfm.authorize_intent(
            self._token(rfm), intent(schedule=(10.0, 20.0))
        )
        assert ok == "opergrid"


class TestSplit:
    def test_local_endpoints_pass_through(self, rfm):
        i = intent()
        intra, inter = rfm.split_request(i, "opergrid")
        assert intra is i
        assert inter is None

    def test_remote_endpoint_splits_at_gateway(self, rfm):
        i = intent(endpoints=("scada", "remote"))
        intra, inter = rfm.split_request(i, "opergrid")
        assert intra.endpoints == ("scada", "GW1")
        assert inter["src_domain"] == "park"
        assert inter["dst_domain"] == "far"

    def test_split_is_lossless(self, rfm):
        i = intent(endpoints=("scada", "remote"))
        intra, inter = rfm.split_request(i, "opergrid")
        # original endpoints and QoS recoverable from the two parts
        assert (inter["src_endpoint"], inter["dst_endpoint"]) == i.endpoints
        assert inter["rate_bps"] == i.arrival.rate
        assert inter["burst_bits"] == i.arrival.burst
        assert inter["delay_req_s"] == i.delay_req_s
        assert intra.arrival == i.arrival

    def test_no_gateway_is_configuration_error(self, rfm, sm):
        sm.add_account("other", "pw")
        rfm.add_profile(
            AccessProfile(
                tenant="other",
                allowed_endpoint_pairs={frozenset(("scada", "remote"))},
                max_bandwidth_bps=1e6,
                min_delay_req_s=0,
                allowed_protections={"none"},
            )
        )
        with pytest.raises(ConfigurationError):
            rfm.split_request(intent(endpoints=("scada", "remote")), "other")
