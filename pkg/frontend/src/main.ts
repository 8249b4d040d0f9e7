/** Entry point: mount the workbench against the configured service URL. */

import { mountWorkbench } from "./app.js";

const root = document.getElementById("workbench");
if (root) {
  // one base-URL setting; empty string means same origin
  const baseUrl = root.dataset.serviceUrl ?? "";
  const app = mountWorkbench(root, baseUrl);
  void app.start();
}
