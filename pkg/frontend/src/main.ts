/**
 * Entry point: ask for an assessor id once (kept in localStorage), then run
 * the review session against the same origin that served this page.
 */

import { ApiClient } from "./api.js";
import { Session } from "./session.js";
import { bindKeys, render } from "./ui.js";

const STORAGE_KEY = "assessor_id";

function askAssessorId(root: HTMLElement, onReady: (id: string) => void): void {
  root.replaceChildren();
  const form = document.createElement("form");
  form.className = "login";
  const label = document.createElement("label");
  label.textContent = "Assessor id";
  const input = document.createElement("input");
  input.name = "assessor";
  input.required = true;
  input.autofocus = true;
  label.appendChild(input);
  const submit = document.createElement("button");
  submit.type = "submit";
  submit.textContent = "Start judging";
  form.append(label, submit);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const id = input.value.trim();
    if (!id) return;
    window.localStorage.setItem(STORAGE_KEY, id);
    onReady(id);
  });
  root.appendChild(form);
}

function boot(root: HTMLElement, assessorId: string): void {
  const api = new ApiClient("");
  const session = new Session(api, assessorId, (state) => render(root, state, session));
  bindKeys(session);
  void session.start();
}

function main(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const stored = window.localStorage.getItem(STORAGE_KEY);
  if (stored) {
    boot(root, stored);
  } else {
    askAssessorId(root, (id) => boot(root, id));
  }
}

main();
