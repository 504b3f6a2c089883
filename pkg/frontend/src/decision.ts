// Decision draft state and submission. The choice set mirrors the server's
// legality rule (decrease hidden when nothing is running), submission stays
// disabled until every Likert field the condition requires is set, and a
// case locks client-side after a successful submit. Retries reuse the same
// idempotency key so the server appends exactly one record.

import { ApiClient, ApiValidationError } from "./api.js";
import { Choice, Condition, DecisionAck, DecisionBody } from "./types.js";

export interface DecisionDraft {
  participant_id: string;
  role: string;
  years_experience: string;
  case_id: string;
  condition: Condition;
  fluid_choice?: Choice;
  vaso_choice?: Choice;
  confidence?: number;
  difficulty?: number;
  usefulness?: number;
  ai_confidence_effect?: number;
}

export function legalChoices(currentDose: number): Choice[] {
  // the end/decrease option is removed when the treatment is not running
  return currentDose > 0
    ? ["increase", "decrease", "no_change"]
    : ["increase", "no_change"];
}

export function requiredLikertFields(condition: Condition): string[] {
  return condition === "no_ai"
    ? ["confidence", "difficulty"]
    : ["confidence", "difficulty", "usefulness", "ai_confidence_effect"];
}

export function missingFields(draft: DecisionDraft): string[] {
  const missing: string[] = [];
  if (!draft.fluid_choice) missing.push("fluid_choice");
  if (!draft.vaso_choice) missing.push("vaso_choice");
  for (const field of requiredLikertFields(draft.condition)) {
    const value = (draft as unknown as Record<string, unknown>)[field];
    if (typeof value !== "number" || value < 1 || value > 7) missing.push(field);
  }
  return missing;
}

export function canSubmit(draft: DecisionDraft): boolean {
  return missingFields(draft).length === 0;
}

export function toBody(draft: DecisionDraft, idempotencyKey: string): DecisionBody {
  const body: DecisionBody = {
    participant_id: draft.participant_id,
    role: draft.role,
    years_experience: draft.years_experience,
    case_id: draft.case_id,
    condition: draft.condition,
    fluid_choice: draft.fluid_choice!,
    vaso_choice: draft.vaso_choice!,
    confidence: draft.confidence!,
    difficulty: draft.difficulty!,
    idempotency_key: idempotencyKey,
  };
  if (draft.condition !== "no_ai") {
    body.usefulness = draft.usefulness!;
    body.ai_confidence_effect = draft.ai_confidence_effect!;
  }
  return body;
}

export interface SubmitOutcome {
  ok: boolean;
  recordId?: number;
  duplicate?: boolean;
  fieldError?: string;
}

export class DecisionSubmitter {
  private keys = new Map<string, string>();
  private inFlight = new Map<string, Promise<SubmitOutcome>>();
  private submitted = new Set<string>();

  constructor(private api: ApiClient, private makeKey: () => string) {}

  isLocked(caseId: string): boolean {
    return this.submitted.has(caseId);
  }

  /** Submit a completed draft. Double-clicks and retries reuse one
   * idempotency key per case, so the server stores exactly one record. */
  submit(draft: DecisionDraft): Promise<SubmitOutcome> {
    if (!canSubmit(draft)) {
      return Promise.resolve({
        ok: false,
        fieldError: `missing fields: ${missingFields(draft).join(", ")}`,
      });
    }
    if (this.submitted.has(draft.case_id)) {
      return Promise.resolve({ ok: false, fieldError: "case already submitted" });
    }
    const pending = this.inFlight.get(draft.case_id);
    if (pending) return pending;

    let key = this.keys.get(draft.case_id);
    if (!key) {
      key = this.makeKey();
      this.keys.set(draft.case_id, key);
    }
    const run = this.post(draft, key).finally(() => {
      this.inFlight.delete(draft.case_id);
    });
    this.inFlight.set(draft.case_id, run);
    return run;
  }

  private async post(draft: DecisionDraft, key: string): Promise<SubmitOutcome> {
    let ack: DecisionAck;
    try {
      ack = await this.api.postDecision(toBody(draft, key));
    } catch (err) {
      if (err instanceof ApiValidationError) {
        return { ok: false, fieldError: err.detail };
      }
      // network failure: one retry with the same idempotency key
      try {
        ack = await this.api.postDecision(toBody(draft, key));
      } catch (second) {
        if (second instanceof ApiValidationError) {
          return { ok: false, fieldError: second.detail };
        }
        throw second;
      }
    }
    this.submitted.add(draft.case_id);
    return { ok: true, recordId: ack.record_id, duplicate: ack.duplicate };
  }
}
