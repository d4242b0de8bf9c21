// Usability questionnaire form model: ten answers, each 1..5, submit only
// when complete. The displayed score always comes back from the service.

import type { ClientMsg } from "./protocol.js";

export const SUS_ITEMS = 10;

export class SusForm {
  answers: Array<number | null> = new Array(SUS_ITEMS).fill(null);
  serverScore: number | null = null;

  setAnswer(index: number, value: number): void {
    if (index < 0 || index >= SUS_ITEMS) {
      throw new RangeError(`question index ${index} out of range`);
    }
    if (!Number.isInteger(value) || value < 1 || value > 5) {
      throw new RangeError(`answer must be an integer in 1..5, got ${value}`);
    }
    this.answers[index] = value;
  }

  get complete(): boolean {
    return this.answers.every((a) => a !== null);
  }

  toMessage(): ClientMsg {
    if (!this.complete) {
      throw new Error("form is incomplete; submission is blocked");
    }
    return { type: "sus", answers: this.answers.map((a) => a as number) };
  }
}
