import { defineConfig } from "vite";

export default defineConfig({
  build: { outDir: "dist", target: "es2022" },
  server: {
    proxy: {
      // the exploration API served by the Python process
      "/sessions": "http://127.0.0.1:8000",
      "/meshes": "http://127.0.0.1:8000",
      "/meta": "http://127.0.0.1:8000",
    },
  },
  test: {
    environment: "node",
  },
});
