// OpenMP kernels against their serial references: the scenario-matrix
// runner and the training sweep.

#include <benchmark/benchmark.h>

#include "biscuit/matrix.hpp"
#include "biscuit/scenario.hpp"
#include "biscuit/training.hpp"

using namespace biscuit;

namespace {

const Node& node() {
  static const Node n = make_node(reference_suite(), TrainOptions{});
  return n;
}

const std::vector<Scenario>& scenarios() {
  static const std::vector<Scenario> s = [] {
    MatrixConfig c = default_matrix_config();
    c.seeds = {1, 2};
    return build_scenarios(c, node());
  }();
  return s;
}

std::vector<InstrumentedProgram> programs() {
  std::vector<InstrumentedProgram> out;
  for (const auto& p : reference_suite()) out.push_back(hoist(p));
  out.push_back(hoist(nest_suite(7, 24, 20, 0.05)));
  return out;
}

void BM_MatrixSerial(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(run_matrix_serial(node(), scenarios()));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(scenarios().size()));
}

void BM_MatrixParallel(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(run_matrix(node(), scenarios(), 0));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(scenarios().size()));
}

void BM_Train(benchmark::State& st) {
  auto ps = programs();
  TrainOptions opt;
  opt.parallel = st.range(0) != 0;
  for (auto _ : st) benchmark::DoNotOptimize(train(ps, opt));
}

}  // namespace

BENCHMARK(BM_MatrixSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_MatrixParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Train)->Arg(0)->Arg(1)->ArgNames({"parallel"})->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
