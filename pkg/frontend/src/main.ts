import { ApiClient, resolveBaseUrl } from "./api.js";
import { DashboardApp } from "./app.js";

const root = document.getElementById("app");
if (root) {
  new DashboardApp(root, new ApiClient(resolveBaseUrl(document)));
}
