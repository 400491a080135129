/**
 * DOM rendering and input wiring for the review session.
 *
 * The session owns all state; this module just redraws on every state
 * change and translates clicks and key presses (R = relevant,
 * N = not relevant, Escape = back to the topic list) into session calls.
 */

import type { Session, SessionState, View } from "./session.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function progressBar(judged: number, total: number): HTMLElement {
  const wrap = el("div", "progress");
  const fill = el("div", "progress-fill");
  const pct = total > 0 ? Math.round((100 * judged) / total) : 0;
  fill.style.width = `${pct}%`;
  wrap.appendChild(fill);
  wrap.appendChild(el("span", "progress-text", `${judged} / ${total}`));
  return wrap;
}

function renderTopics(view: Extract<View, { kind: "topics" }>, session: Session): HTMLElement {
  const root = el("section", "topics");
  root.appendChild(el("h2", undefined, "Topics"));
  if (view.allDone) {
    root.appendChild(
      el("p", "done", "All assigned documents are judged. Thank you!"),
    );
  }
  const list = el("ul", "topic-list");
  for (const topic of view.topics) {
    const item = el("li");
    const button = el("button", "topic-open");
    button.disabled = topic.judged >= topic.total;
    button.appendChild(el("span", "topic-id", topic.topic_id));
    button.appendChild(el("span", "topic-query", topic.query_text));
    button.appendChild(
      el("span", "topic-count", `${topic.judged}/${topic.total}`),
    );
    button.addEventListener("click", () => void session.openTopic(topic.topic_id));
    item.appendChild(button);
    list.appendChild(item);
  }
  root.appendChild(list);
  return root;
}

function renderJudging(view: Extract<View, { kind: "judging" }>, session: Session): HTMLElement {
  const { task } = view;
  const root = el("section", "judging");

  const header = el("div", "task-header");
  header.appendChild(el("h2", undefined, task.query_text || task.topic_id));
  header.appendChild(
    el("span", "task-position", `document ${task.position} of ${task.total_in_topic}`),
  );
  root.appendChild(header);

  const doc = el("article", "document");
  doc.appendChild(el("h3", "doc-title", task.doc_title || task.doc_id));
  if (task.error) {
    doc.appendChild(el("p", "doc-error", task.error));
  } else {
    doc.appendChild(el("p", "doc-text", task.doc_text));
  }
  doc.appendChild(el("p", "doc-id", task.doc_id));
  root.appendChild(doc);

  const controls = el("div", "controls");
  const relevant = el("button", "label-relevant", "Relevant (R)");
  relevant.addEventListener("click", () => void session.judge(1));
  const notRelevant = el("button", "label-nonrelevant", "Not relevant (N)");
  notRelevant.addEventListener("click", () => void session.judge(0));
  const back = el("button", "leave-topic", "Back to topics (Esc)");
  back.addEventListener("click", () => void session.leaveTopic());
  controls.append(relevant, notRelevant, back);
  root.appendChild(controls);
  return root;
}

function renderView(state: SessionState, session: Session): HTMLElement {
  switch (state.view.kind) {
    case "loading":
      return el("p", "loading", `${state.view.message}…`);
    case "topics":
      return renderTopics(state.view, session);
    case "judging":
      return renderJudging(state.view, session);
    case "fatal": {
      const root = el("section", "fatal");
      root.appendChild(el("h2", undefined, "Something went wrong"));
      root.appendChild(el("p", undefined, state.view.message));
      const reload = el("button", undefined, "Reload");
      reload.addEventListener("click", () => window.location.reload());
      root.appendChild(reload);
      return root;
    }
  }
}

export function render(root: HTMLElement, state: SessionState, session: Session): void {
  root.replaceChildren();

  const bar = el("header", "top-bar");
  bar.appendChild(el("span", "app-title", "Relevance review"));
  bar.appendChild(el("span", "assessor", state.assessorId));
  if (state.progress) {
    bar.appendChild(progressBar(state.progress.judged, state.progress.total));
  }
  root.appendChild(bar);

  if (state.banner) {
    const banner = el("div", "banner");
    banner.appendChild(el("span", undefined, state.banner));
    const dismiss = el("button", "dismiss", "×");
    dismiss.addEventListener("click", () => session.dismissBanner());
    banner.appendChild(dismiss);
    root.appendChild(banner);
  }

  const main = el("main", state.busy ? "busy" : undefined);
  main.appendChild(renderView(state, session));
  root.appendChild(main);
}

/** Bind the global keyboard shortcuts for judging. */
export function bindKeys(session: Session, target: Pick<Document, "addEventListener"> = document): void {
  target.addEventListener("keydown", (event) => {
    const key = (event as KeyboardEvent).key;
    if (key === "r" || key === "R") void session.judge(1);
    else if (key === "n" || key === "N") void session.judge(0);
    else if (key === "Escape") void session.leaveTopic();
  });
}
