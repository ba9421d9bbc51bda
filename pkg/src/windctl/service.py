"""HTTP-style service boundary.

A Router dispatches ApiRequest values against role-gated endpoint tables
(NBI for controllers, /qor/* for the orchestrator); a thin stdlib HTTP
adapter exposes the same router over TCP. Every mutating endpoint requires a
bearer token, responses carry a request id, and repeated request ids replay
the cached response instead of re-executing the mutation.
"""

from __future__ import annotations

import itertools
import json
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .errors import MalformedIntentError, TokenInvalidError, WindctlError
from .netcalc import ArrivalCurve
from .security import Intent

_STATUS = {
    "authentication-failed": 401,
    "token-expired": 401,
    "token-invalid": 401,
    "authorization-denied": 403,
    "unknown-entity": 404,
    "malformed-intent": 400,
    "scenario-error": 400,
    "admission-rejected": 409,
    "reserve-failed": 409,
    "capacity-exhausted": 409,
    "isolation-error": 409,
    "configuration-error": 400,
}


@dataclass
class ApiRequest:
    method: str
    path: str
    headers: dict = field(default_factory=dict)
    body: dict | None = None


@dataclass
class ApiResponse:
    status: int
    body: dict
    request_id: str = ""


@dataclass
class Route:
    method: str
    pattern: re.Pattern
    handler: object
    needs_token: bool = True
    mutating: bool = False


class Router:
    """Role-gated endpoint table over one controller or one orchestrator."""

    def __init__(self, role: str, controller=None, qor=None,
                 deployment=None, portal_dir: str | None = None):
        if role not in ("industrial-controller", "nsp-controller", "qor"):
            raise WindctlError(f"unknown role {role!r}")
        self.role = role
        self.controller = controller
        self.qor = qor
        self.deployment = deployment
        self.portal_dir = portal_dir
        self._req_ids = itertools.count(1)
        self._idempotency: dict[str, ApiResponse] = {}
        self._lock = threading.Lock()
        self.routes: list[Route] = []
        if role in ("industrial-controller", "nsp-controller"):
            self._add_nbi_routes()
        if role == "qor":
            self._add_qor_routes()

    def _route(self, method, pattern, handler, needs_token=True,
               mutating=False):
        self.routes.append(
            Route(method, re.compile(f"^{pattern}$"), handler, needs_token,
                  mutating)
        )

    # -- dispatch -----------------------------------------------------------

    def dispatch(self, request: ApiRequest) -> ApiResponse:
        request_id = request.headers.get("X-Request-Id") or f"req-{next(self._req_ids)}"
        with self._lock:
            cached = self._idempotency.get(request_id)
        if cached is not None:
            return cached
        try:
            response = self._dispatch_inner(request, request_id)
        except WindctlError as e:
            body = e.to_dict()
            body["request_id"] = request_id
            response = ApiResponse(
                _STATUS.get(e.code, 500), body, request_id
            )
        if request.method != "GET":
            with self._lock:
                self._idempotency[request_id] = response
        return response

    def _dispatch_inner(self, request: ApiRequest, request_id: str) -> ApiResponse:
        for route in self.routes:
            if route.method != request.method:
                continue
            m = route.pattern.match(request.path.split("?", 1)[0])
            if not m:
                continue
            subject = None
            if route.needs_token:
                token = self._bearer(request)
                subject = self._validate(token)
            body = route.handler(request, m, subject)
            body["request_id"] = request_id
            return ApiResponse(200, body, request_id)
        return ApiResponse(
            404,
            {"error": "not-found", "detail": request.path,
             "request_id": request_id},
            request_id,
        )

    def _bearer(self, request: ApiRequest) -> str:
        auth = request.headers.get("Authorization", "")
        if not auth.startswith("Bearer "):
            raise TokenInvalidError("missing bearer token")
        return auth[len("Bearer "):]

    def _validate(self, token: str) -> str:
        if self.role == "qor":
            return self.qor.security.validate_token(token)
        return self.controller.sm.validate_token(token)

    @staticmethod
    def _query(request: ApiRequest) -> dict:
        if "?" not in request.path:
            return {}
        out = {}
        for pair in request.path.split("?", 1)[1].split("&"):
            if "=" in pair:
                k, v = pair.split("=", 1)
                out[k] = v
        return out

    # -- NBI -----------------------------------------------------------------

    def _add_nbi_routes(self):
        self._route("POST", "/nbi/auth", self._nbi_auth, needs_token=False,
                    mutating=True)
        self._route("POST", "/nbi/intents", self._nbi_submit, mutating=True)
        self._route("GET", "/nbi/intents/([^/]+)/kpis", self._nbi_kpis)
        self._route("GET", "/nbi/intents/([^/]+)", self._nbi_get_intent)
        self._route("POST", "/nbi/vnfs", self._nbi_vnf, mutating=True)
        self._route("POST", "/nbi/chains/([^/]+)/map", self._nbi_map_chain,
                    mutating=True)
        self._route("POST", "/nbi/chains", self._nbi_chain, mutating=True)
        self._route("POST", "/nbi/sensors/bind", self._nbi_bind,
                    mutating=True)
        self._route("POST", "/nbi/sim/run", self._nbi_sim_run, mutating=True)

    def _nbi_auth(self, request, m, subject):
        token = self.controller.nbi_authenticate(request.body or {})
        return {
            "token": token.value,
            "subject": token.subject,
            "issuer": token.issuer,
            "expires_at": token.expires_at,
        }

    def _nbi_submit(self, request, m, subject):
        body = request.body or {}
        for key in ("src", "dst", "rate_bps", "burst_bits"):
            if key not in body:
                raise MalformedIntentError(f"missing field {key!r}")
        schedule = None
        if body.get("schedule") is not None:
            schedule = (
                float(body["schedule"]["start_s"]),
                float(body["schedule"]["end_s"]),
            )
        intent = Intent(
            intent_id=body.get("intent_id", f"intent-{next(self._req_ids)}"),
            endpoints=(body["src"], body["dst"]),
            arrival=ArrivalCurve(float(body["rate_bps"]),
                                 float(body["burst_bits"])),
            delay_req_s=(
                float(body["delay_req_s"])
                if body.get("delay_req_s") is not None
                else None
            ),
            protection=body.get("protection", "none"),
            flow_class=body.get("class", "real-time"),
            schedule=schedule,
            service=body.get("service"),
        )
        token = self._bearer(request)
        record = self.controller.submit_intent(token, intent)
        return record.to_dict()

    def _nbi_get_intent(self, request, m, subject):
        return self.controller.get_intent(m.group(1)).to_dict()

    def _nbi_kpis(self, request, m, subject):
        window = float(self._query(request).get("window_s", 1.0))
        return self.controller.get_kpis(m.group(1), window)

    def _nbi_vnf(self, request, m, subject):
        body = request.body or {}
        token = self._bearer(request)
        return self.controller.nbi_instantiate_vnf(
            token, body.get("kind", ""), body.get("preferred_host")
        )

    def _nbi_chain(self, request, m, subject):
        token = self._bearer(request)
        return self.controller.nbi_create_chain(
            token, (request.body or {}).get("vnf_ids", [])
        )

    def _nbi_map_chain(self, request, m, subject):
        token = self._bearer(request)
        return self.controller.nbi_map_chain(
            token, m.group(1), (request.body or {}).get("service")
        )

    def _nbi_bind(self, request, m, subject):
        token = self._bearer(request)
        return self.controller.nbi_bind_sensor(
            token, (request.body or {}).get("sensor", "")
        )

    def _nbi_sim_run(self, request, m, subject):
        if self.deployment is None:
            raise WindctlError("no deployment attached to this service")
        result = self.deployment.run(capture_trace=True)
        return {"metrics": result.metrics.to_dict()}

    # -- QOR -----------------------------------------------------------------

    def _add_qor_routes(self):
        self._route("POST", "/qor/auth", self._qor_auth, needs_token=False,
                    mutating=True)
        self._route("POST", "/qor/domains", self._qor_register, mutating=True)
        self._route("PUT", "/qor/domains/([^/]+)/offers", self._qor_offers_put,
                    mutating=True)
        self._route("POST", "/qor/paths/([^/]+)/instantiate",
                    self._qor_instantiate, mutating=True)
        self._route("POST", "/qor/paths", self._qor_compute, mutating=True)
        self._route("POST", "/qor/monitoring", self._qor_monitoring,
                    mutating=True)
        self._route("GET", "/qor/offers", self._qor_offers_get)
        self._route("GET", "/qor/paths", self._qor_paths_get)
        self._route("GET", "/qor/monitoring/recent", self._qor_monitoring_get)

    def _qor_auth(self, request, m, subject):
        token = self.qor.security.authenticate(request.body or {})
        return {
            "token": token.value,
            "subject": token.subject,
            "expires_at": token.expires_at,
        }

    def _qor_register(self, request, m, subject):
        token = self._bearer(request)
        reg = self.qor.register_domain(request.body or {}, token)
        return {"registration_id": reg}

    def _qor_offers_put(self, request, m, subject):
        token = self._bearer(request)
        offers = (request.body or {}).get("offers", [])
        self.qor.announce_offers(m.group(1), offers, token)
        return {"domain": m.group(1), "offers": len(offers)}

    def _qor_compute(self, request, m, subject):
        body = request.body or {}
        if "delay_budget_ms" in body:
            budget_s = float(body["delay_budget_ms"]) / 1e3
        else:
            budget_s = float(body["delay_budget_s"])
        if "bandwidth_mbps" in body:
            bandwidth = float(body["bandwidth_mbps"]) * 1e6
        else:
            bandwidth = float(body["bandwidth_bps"])
        path = self.qor.compute_e2e_path(
            body["src_domain"], body["dst_domain"], budget_s, bandwidth
        )
        if path is None:
            return {"path": None, "detail": "no feasible chain of offers"}
        return {"path": path.to_dict()}

    def _qor_instantiate(self, request, m, subject):
        body = request.body or {}
        flow = None
        if body.get("flow_src") and body.get("flow_dst"):
            flow = (body["flow_src"], body["flow_dst"])
        path = self.qor.instantiate_path(m.group(1), flow)
        return {"path": path.to_dict()}

    def _qor_monitoring(self, request, m, subject):
        body = dict(request.body or {})
        domain = body.pop("domain", subject)
        token = self._bearer(request)
        self.qor.report_monitoring(domain, body, token)
        return {"accepted": True}

    def _qor_offers_get(self, request, m, subject):
        return {
            "offers": {
                domain: [o.to_dict() for o in offers]
                for domain, offers in sorted(self.qor.offers.items())
            }
        }

    def _qor_paths_get(self, request, m, subject):
        return {
            "paths": [
                self.qor.paths[pid].to_dict() for pid in sorted(self.qor.paths)
            ]
        }

    def _qor_monitoring_get(self, request, m, subject):
        return {"reports": self.qor.recent_monitoring()}


class _Handler(BaseHTTPRequestHandler):
    router: Router = None  # set per server

    def log_message(self, *args):  # quiet
        pass

    def _serve_portal(self) -> bool:
        if self.router.portal_dir is None or not self.path.startswith("/portal"):
            return False
        rel = self.path[len("/portal"):].split("?", 1)[0].lstrip("/") or "index.html"
        root = Path(self.router.portal_dir).resolve()
        target = (root / rel).resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            self.send_response(404)
            self.end_headers()
            return True
        ctype = {
            ".html": "text/html",
            ".js": "application/javascript",
            ".css": "text/css",
        }.get(target.suffix, "application/octet-stream")
        data = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)
        return True

    def _handle(self, method: str):
        if method == "GET" and self._serve_portal():
            return
        length = int(self.headers.get("Content-Length", 0) or 0)
        raw = self.rfile.read(length) if length else b""
        try:
            body = json.loads(raw) if raw else None
        except json.JSONDecodeError:
            self._reply(ApiResponse(400, {"error": "bad-json"}))
            return
        request = ApiRequest(
            method=method,
            path=self.path,
            headers={k: v for k, v in self.headers.items()},
            body=body,
        )
        self._reply(self.router.dispatch(request))

    def _reply(self, response: ApiResponse):
        data = json.dumps(response.body).encode()
        self.send_response(response.status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        if response.request_id:
            self.send_header("X-Request-Id", response.request_id)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers",
                         "Authorization, Content-Type, X-Request-Id")
        self.send_header("Access-Control-Allow-Methods",
                         "GET, POST, PUT, OPTIONS")
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        self._handle("GET")

    def do_POST(self):
        self._handle("POST")

    def do_PUT(self):
        self._handle("PUT")

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers",
                         "Authorization, Content-Type, X-Request-Id")
        self.send_header("Access-Control-Allow-Methods",
                         "GET, POST, PUT, OPTIONS")
        self.end_headers()


@dataclass
class ServeConfig:
    role: str = "qor"
    port: int = 8460
    host: str = "127.0.0.1"
    scenario_path: str | None = None
    domain: str | None = None
    portal_dir: str | None = None
    accounts: dict = field(default_factory=dict)


def build_router(config: ServeConfig) -> Router:
    """Assemble the service for a role, optionally on a full deployment."""
    from .interdomain import Qor
    from .runner import Deployment
    from .topology import load_scenario

    deployment = None
    if config.scenario_path:
        text = Path(config.scenario_path).read_text()
        graph, workload = load_scenario(text)
        deployment = Deployment.build(graph, workload)
        deployment.process_intents()

    if config.role == "qor":
        if deployment is not None and deployment.qor is not None:
            qor = deployment.qor
        else:
            qor = Qor()
        qor.security.add_account("admin", "admin")
        for user, password in config.accounts.items():
            qor.security.add_account(user, password)
        return Router("qor", qor=qor, deployment=deployment,
                      portal_dir=config.portal_dir)

    if deployment is None:
        raise WindctlError("controller roles need a scenario")
    domain = config.domain or sorted(deployment.controllers)[0]
    controller = deployment.controllers[domain]
    return Router(config.role, controller=controller, deployment=deployment)


OFFER_HEARTBEAT_S = 30.0


def _start_offer_heartbeat(router: Router) -> None:
    """Full-state offer re-announcement every 30 s (push-on-change happens
    at announce time; this is the periodic refresh)."""
    deployment = router.deployment
    if deployment is None or not getattr(deployment, "qons", None):
        return

    def beat():
        for domain in sorted(deployment.qons):
            qon = deployment.qons[domain]
            if deployment.graph.domains[domain].kind == "nsp":
                try:
                    qon.announce()
                except Exception:
                    pass  # transient auth/registry hiccups retry next beat
        timer = threading.Timer(OFFER_HEARTBEAT_S, beat)
        timer.daemon = True
        timer.start()

    timer = threading.Timer(OFFER_HEARTBEAT_S, beat)
    timer.daemon = True
    timer.start()


def serve(config: ServeConfig) -> ThreadingHTTPServer:
    """Start the HTTP service; returns the server (caller joins/forever)."""
    router = build_router(config)
    handler = type("BoundHandler", (_Handler,), {"router": router})
    server = ThreadingHTTPServer((config.host, config.port), handler)
    server.router = router
    if config.role == "qor":
        _start_offer_heartbeat(router)
    return server
