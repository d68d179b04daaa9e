import { defineConfig } from 'vitest/config'

export default defineConfig({
  test: {
    include: ['test/**/*.test.ts'],
    // a single 224x224 forward pass costs seconds on the pure-JS backend
    testTimeout: 240_000,
    hookTimeout: 240_000,
  },
})
