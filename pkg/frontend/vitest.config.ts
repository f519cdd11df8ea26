import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // the service round-trip test uploads a scene and waits for preprocessing
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
