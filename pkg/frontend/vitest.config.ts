import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // the integration test boots the Python review service and runs the
    // judging pipeline against the produced log
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
