// Serial vs OpenMP convolution kernels. The parallel path pays off on
// large feature maps; at the desk-scale model sizes used by the training
// loop the serial path wins, which is why the acceptance runs pin
// OMP_NUM_THREADS=1 and parallelize across whole runs instead.

#include <benchmark/benchmark.h>

#include "evade/conv.hpp"
#include "evade/rng.hpp"

using namespace evade;

namespace {

struct Case {
  int N, Cin, H, W, Cout, K, stride;
};

constexpr Case kSmall{16, 16, 8, 8, 12, 3, 2};    // training-loop scale
constexpr Case kMedium{8, 32, 32, 32, 32, 3, 1};  // mid-size feature maps
constexpr Case kLarge{8, 48, 48, 48, 48, 3, 1};   // large maps, OMP territory

template <typename T>
void run_forward(benchmark::State& state, const Case& c, bool parallel) {
  Rng rng(1);
  const auto x = Tensor<T>::randn({c.N, c.Cin, c.H, c.W}, rng);
  const auto f = Tensor<T>::randn({c.Cout, c.Cin, c.K, c.K}, rng);
  const bool saved = kernels::parallel_enabled();
  kernels::parallel_enabled() = parallel;
  for (auto _ : state) {
    auto y = conv2d(x, f, c.stride, Padding::kSame);
    benchmark::DoNotOptimize(y.data());
  }
  kernels::parallel_enabled() = saved;
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c.N) * c.Cout * c.H *
                          c.W * c.Cin * c.K * c.K / (c.stride * c.stride));
}

template <typename T>
void run_backward_input(benchmark::State& state, const Case& c, bool parallel) {
  Rng rng(2);
  const auto g = kernels::make_geom(c.N, c.Cin, c.H, c.W, c.Cout, c.K, c.stride, Padding::kSame);
  const auto gy = Tensor<T>::randn({c.N, c.Cout, g.Hout, g.Wout}, rng);
  const auto f = Tensor<T>::randn({c.Cout, c.Cin, c.K, c.K}, rng);
  const bool saved = kernels::parallel_enabled();
  kernels::parallel_enabled() = parallel;
  for (auto _ : state) {
    Tensor<T> gx({c.N, c.Cin, c.H, c.W});
    kernels::conv_backward_input(gy.data(), f.data(), gx.data(), g);
    benchmark::DoNotOptimize(gx.data());
  }
  kernels::parallel_enabled() = saved;
}

void fwd_small_serial(benchmark::State& s) { run_forward<float>(s, kSmall, false); }
void fwd_small_omp(benchmark::State& s) { run_forward<float>(s, kSmall, true); }
void fwd_medium_serial(benchmark::State& s) { run_forward<float>(s, kMedium, false); }
void fwd_medium_omp(benchmark::State& s) { run_forward<float>(s, kMedium, true); }
void fwd_large_serial(benchmark::State& s) { run_forward<float>(s, kLarge, false); }
void fwd_large_omp(benchmark::State& s) { run_forward<float>(s, kLarge, true); }
void bwd_large_serial(benchmark::State& s) { run_backward_input<float>(s, kLarge, false); }
void bwd_large_omp(benchmark::State& s) { run_backward_input<float>(s, kLarge, true); }

}  // namespace

BENCHMARK(fwd_small_serial);
BENCHMARK(fwd_small_omp);
BENCHMARK(fwd_medium_serial);
BENCHMARK(fwd_medium_omp);
BENCHMARK(fwd_large_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(fwd_large_omp)->Unit(benchmark::kMillisecond);
BENCHMARK(bwd_large_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(bwd_large_omp)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
