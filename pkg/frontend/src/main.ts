// Boot glue for index.html: ask for a reader id once, remember it, then
// hand the page over to ReaderApp. Kept free of logic worth testing.

import { ApiClient } from "./api.js";
import { createApp } from "./app.js";
import { PendingStore } from "./storage.js";

const READER_KEY = "bpequant-reader/last-reader-id";

export async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (root === null) throw new Error("index.html must provide #app");

  let readerId = window.localStorage.getItem(READER_KEY) ?? "";
  while (readerId.trim() === "") {
    readerId = window.prompt("reader id for this session:") ?? "";
  }
  readerId = readerId.trim();
  window.localStorage.setItem(READER_KEY, readerId);

  const app = createApp({
    root,
    api: new ApiClient(),
    store: new PendingStore(),
    readerId,
  });
  try {
    await app.start();
  } catch (error) {
    root.textContent = `could not reach the study service: ${String(error)}`;
  }
}
