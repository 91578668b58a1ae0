import { createApp } from "./app";
import { ReviewClient } from "./api";
import { VerdictQueue } from "./queue";

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app mount point");
}

const app = createApp({
  root,
  client: new ReviewClient(""),
  queue: new VerdictQueue(window.localStorage),
  storage: window.localStorage,
});

void app.start();
