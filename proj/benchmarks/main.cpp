#include <benchmark/benchmark.h>

// The packaged benchmark_main archive is built with an incompatible LTO
// version, so the entry point lives here.
BENCHMARK_MAIN();
