import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    include: ['tests/**/*.test.ts'],
    // every test shells out to the CLI; allow for slow cold caches
    testTimeout: 60_000,
  },
});
