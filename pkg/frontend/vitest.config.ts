import { defineConfig } from "vitest/config";

// each test file spawns its own python bridge; keep them sequential so the
// memory measurements are not polluted by sibling processes
export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    fileParallelism: false,
    testTimeout: 180_000,
    hookTimeout: 60_000,
  },
});
