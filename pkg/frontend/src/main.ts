import { HttpSearchApi } from "./api.js";
import { createApp } from "./app.js";

const baseUrl =
  (window as { __TAXOINDEX_API__?: string }).__TAXOINDEX_API__ ??
  "http://127.0.0.1:8300";

const root = document.getElementById("app");
if (root) {
  createApp({ root, api: new HttpSearchApi(baseUrl) });
}
