// Browser bootstrap: wires the API client, trajectory view, condition-gated
// recommendation panel, and the decision form. All state lives here; the
// render modules are pure. Study cases arrive in server order with the
// server-fixed condition per case.

import { ApiClient, newIdempotencyKey } from "./api.js";
import {
  DecisionDraft,
  DecisionSubmitter,
  canSubmit,
  legalChoices,
  requiredLikertFields,
} from "./decision.js";
import { renderRecommendation } from "./recommendation.js";
import { currentDoses, renderTrajectory } from "./trajectory.js";
import { Choice, RecommendationResponse, StudyCase, TrajectoryPayload } from "./types.js";
import { h, renderToString, VNode } from "./vdom.js";

interface AppState {
  cases: StudyCase[];
  caseIndex: number;
  trajectory?: TrajectoryPayload;
  bin: number;
  recommendation?: RecommendationResponse;
  draft?: DecisionDraft;
  message: string;
}

export class StudyApp {
  state: AppState = { cases: [], caseIndex: 0, bin: 0, message: "" };
  private submitter: DecisionSubmitter;

  constructor(
    private api: ApiClient,
    private root: HTMLElement,
    private participant = { id: "anonymous", role: "attending", years: "5-10" }
  ) {
    this.submitter = new DecisionSubmitter(api, newIdempotencyKey);
  }

  async start(): Promise<void> {
    this.state.cases = await this.api.getCases();
    await this.loadCase(0);
  }

  get activeCase(): StudyCase | undefined {
    return this.state.cases[this.state.caseIndex];
  }

  async loadCase(index: number): Promise<void> {
    const c = this.state.cases[index];
    if (!c) return;
    this.state.caseIndex = index;
    this.state.trajectory = await this.api.getTrajectory(c.patient_id);
    this.state.bin = c.bin;
    this.state.recommendation = await this.api.getRecommendation(
      c.patient_id, c.bin, c.condition);
    this.state.draft = {
      participant_id: this.participant.id,
      role: this.participant.role,
      years_experience: this.participant.years,
      case_id: c.case_id,
      condition: c.condition,
    };
    this.state.message = "";
    this.render();
  }

  async setBin(bin: number): Promise<void> {
    const c = this.activeCase;
    if (!c || !this.state.trajectory) return;
    const max = this.state.trajectory.timesteps.length - 1;
    this.state.bin = Math.max(0, Math.min(max, bin));
    this.render();
  }

  private decisionForm(): VNode {
    const c = this.activeCase!;
    const draft = this.state.draft!;
    const doses = currentDoses(this.state.trajectory!, c.bin);
    const locked = this.submitter.isLocked(c.case_id);
    const choiceRow = (channel: "fluid" | "vaso", current: number) =>
      h(
        "div",
        { class: `choice-row choice-${channel}` },
        h("span", {}, channel === "fluid" ? "IV fluids" : "Vasopressor"),
        legalChoices(current).map((choice: Choice) =>
          h("button", {
            class:
              (channel === "fluid" ? draft.fluid_choice : draft.vaso_choice) === choice
                ? "choice selected"
                : "choice",
            "data-action": `choose-${channel}-${choice}`,
          }, choice.replace("_", " "))
        )
      );
    const likertRow = (field: string, label: string) =>
      h(
        "div",
        { class: `likert-row likert-${field}` },
        h("span", {}, label),
        [1, 2, 3, 4, 5, 6, 7].map((v) =>
          h("button", {
            class:
              (draft as unknown as Record<string, unknown>)[field] === v
                ? "likert selected"
                : "likert",
            "data-action": `likert-${field}-${v}`,
          }, String(v))
        )
      );
    const likertLabels: Record<string, string> = {
      confidence: "Confidence in your treatment choice",
      difficulty: "How challenging was this case",
      usefulness: "Usefulness of the AI recommendation",
      ai_confidence_effect: "Effect of the AI on your confidence",
    };
    return h(
      "form",
      { class: "decision-form" },
      choiceRow("fluid", doses.fluid),
      choiceRow("vaso", doses.vaso),
      requiredLikertFields(c.condition).map((f) => likertRow(f, likertLabels[f])),
      h("button", {
        class: "submit",
        "data-action": "submit",
        disabled: !canSubmit(draft) || locked ? "disabled" : "",
      }, locked ? "submitted" : "submit decision"),
      this.state.message
        ? h("div", { class: "form-message", role: "alert" }, this.state.message)
        : null
    );
  }

  view(): VNode {
    const c = this.activeCase;
    if (!c || !this.state.trajectory || !this.state.recommendation) {
      return h("div", { class: "loading" }, "loading study cases...");
    }
    return h(
      "div",
      { class: "study-app" },
      h("header", {},
        h("h2", {}, `${c.pseudonym || c.patient_id}`),
        h("p", { class: "vignette" }, c.vignette),
        h("span", { class: "case-progress" },
          `case ${this.state.caseIndex + 1} of ${this.state.cases.length}`)),
      h("main", { class: "columns" },
        h("div", { class: "left" }, renderTrajectory(this.state.trajectory, this.state.bin)),
        h("div", { class: "right" },
          renderRecommendation(this.state.recommendation, c.condition),
          this.decisionForm()))
    );
  }

  render(): void {
    this.root.innerHTML = renderToString(this.view());
    this.root.querySelectorAll<HTMLElement>("[data-action]").forEach((el) => {
      el.addEventListener("click", (ev) => {
        ev.preventDefault();
        void this.dispatch(el.dataset.action!);
      });
    });
  }

  async dispatch(action: string): Promise<void> {
    const draft = this.state.draft;
    if (action === "step-prev") return this.setBin(this.state.bin - 1);
    if (action === "step-next") return this.setBin(this.state.bin + 1);
    if (!draft) return;
    const choose = action.match(/^choose-(fluid|vaso)-(.+)$/);
    if (choose) {
      if (choose[1] === "fluid") draft.fluid_choice = choose[2] as Choice;
      else draft.vaso_choice = choose[2] as Choice;
      this.render();
      return;
    }
    const likert = action.match(/^likert-(\w+)-(\d)$/);
    if (likert) {
      (draft as unknown as Record<string, unknown>)[likert[1]] = Number(likert[2]);
      this.render();
      return;
    }
    if (action === "submit") {
      const outcome = await this.submitter.submit(draft);
      this.state.message = outcome.ok
        ? "decision recorded"
        : outcome.fieldError ?? "submission failed";
      if (outcome.ok && this.state.caseIndex + 1 < this.state.cases.length) {
        await this.loadCase(this.state.caseIndex + 1);
        return;
      }
      this.render();
    }
  }
}

export function mount(baseUrl: string, rootId = "app"): StudyApp {
  const root = document.getElementById(rootId);
  if (!root) throw new Error(`no element #${rootId}`);
  const app = new StudyApp(new ApiClient(baseUrl), root);
  void app.start();
  return app;
}
