import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    // The round-trip suite spawns the python workbench server and really
    // trains, so individual tests can legitimately take a while.
    testTimeout: 180_000,
    hookTimeout: 180_000,
    // Tests within a file run sequentially; the round-trip file relies on it.
    fileParallelism: false,
  },
});
