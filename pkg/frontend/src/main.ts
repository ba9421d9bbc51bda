// Portal wiring: login, manual orchestrator actions and the 2 s poll loop.

import { ApiError, QorApi } from "./api.js";
import { DEFAULT_POLL_MS, PortalState, startPolling } from "./state.js";
import {
  renderMonitoringFeed,
  renderNotice,
  renderOffersTable,
  renderPathsTable,
  renderStaleBanner,
} from "./render.js";
import type { PathRequestForm } from "./types.js";

export class Portal {
  state = new PortalState();
  private stop: (() => void) | null = null;

  constructor(
    public api: QorApi,
    public root: HTMLElement,
    public pollMs: number = DEFAULT_POLL_MS,
  ) {}

  async login(username: string, password: string): Promise<void> {
    await this.api.login(username, password);
    this.startPolling();
  }

  startPolling(): void {
    this.stop?.();
    this.stop = startPolling(
      this.api,
      this.state,
      () => this.render(),
      this.pollMs,
    );
  }

  async submitPathRequest(form: PathRequestForm): Promise<void> {
    try {
      const path = await this.api.requestPath(form);
      if (path === null) {
        this.showNotice("no feasible path for this budget and bandwidth",
                        "warn");
      } else {
        this.showNotice(`computed ${path.path_id} via ${path.offers.join(", ")}`);
      }
    } catch (error) {
      this.showNotice(
        error instanceof ApiError ? error.message : String(error), "error",
      );
    }
    await this.refreshNow();
  }

  async instantiate(pathId: string): Promise<void> {
    try {
      const path = await this.api.instantiate(pathId);
      this.showNotice(`${path.path_id} is now ${path.state}`);
    } catch (error) {
      this.showNotice(
        error instanceof ApiError ? error.message : String(error), "error",
      );
    }
    await this.refreshNow();
  }

  async refreshNow(): Promise<void> {
    const { pollOnce } = await import("./state.js");
    await pollOnce(this.api, this.state);
    this.render();
  }

  private showNotice(text: string, kind: string = "info"): void {
    const zone = this.root.querySelector(".notices");
    if (zone) {
      zone.innerHTML = "";
      zone.appendChild(renderNotice(text, kind));
    }
  }

  render(): void {
    const now = Date.now();
    const banner = this.root.querySelector(".banner-zone");
    if (banner) {
      banner.innerHTML = "";
      if (this.state.stale(now, this.pollMs)) {
        banner.appendChild(
          renderStaleBanner(this.state.lastSuccess, this.state.lastError),
        );
      }
    }
    const advertised = (offerId: string): number | null => {
      for (const offers of Object.values(this.state.offers)) {
        for (const offer of offers) {
          if (offer.offer_id === offerId) return offer.delay_s;
        }
      }
      return null;
    };
    this.mount(".offers-zone",
               renderOffersTable(this.state.offers,
                                 this.state.flaggedOfferIds()));
    this.mount(
      ".paths-zone",
      renderPathsTable(this.state.paths, (pathId) => {
        void this.instantiate(pathId);
      }),
    );
    this.mount(".monitoring-zone",
               renderMonitoringFeed(this.state.reports, advertised));
  }

  private mount(selector: string, node: HTMLElement): void {
    const zone = this.root.querySelector(selector);
    if (zone) {
      zone.innerHTML = "";
      zone.appendChild(node);
    }
  }
}

function wireForms(portal: Portal, root: HTMLElement): void {
  const loginForm = root.querySelector<HTMLFormElement>("#login-form");
  loginForm?.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const data = new FormData(loginForm);
    void portal
      .login(String(data.get("username")), String(data.get("password")))
      .catch((error) => {
        const zone = root.querySelector(".notices");
        if (zone) {
          zone.innerHTML = "";
          zone.appendChild(renderNotice(String(error), "error"));
        }
      });
  });
  const pathForm = root.querySelector<HTMLFormElement>("#path-form");
  pathForm?.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const data = new FormData(pathForm);
    void portal.submitPathRequest({
      src_domain: String(data.get("src_domain")),
      dst_domain: String(data.get("dst_domain")),
      delay_budget_ms: Number(data.get("delay_budget_ms")),
      bandwidth_mbps: Number(data.get("bandwidth_mbps")),
    });
  });
}

export function boot(root: HTMLElement, base: string = ""): Portal {
  const portal = new Portal(new QorApi(base), root);
  wireForms(portal, root);
  return portal;
}

declare global {
  interface Window {
    qorPortal?: Portal;
  }
}

if (typeof document !== "undefined") {
  const root = document.getElementById("portal-root");
  if (root) {
    window.qorPortal = boot(root);
  }
}
