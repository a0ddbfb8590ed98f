import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    setupFiles: ["tests/setup.ts"],
    include: ["tests/**/*.test.ts"],
    // the scripted flow boots the real HTTP service, which imports the
    // numeric stack; give hooks and tests room for that
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
