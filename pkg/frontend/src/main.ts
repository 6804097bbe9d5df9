import { WorkbenchClient } from "./api.js";
import { WorkbenchApp } from "./app.js";

// Same-origin by default: the page is expected to be served next to the
// workbench API (or proxied to it).
const app = new WorkbenchApp(new WorkbenchClient(""));

app.init().catch((err) => {
  const status = document.getElementById("status-line");
  if (status) {
    status.textContent = `failed to load project: ${err?.message ?? err}`;
    status.classList.add("error");
  }
});
