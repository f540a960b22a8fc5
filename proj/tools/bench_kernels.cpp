// Times the OpenMP kernels against their serial references and reports the
// speedup plus the numeric agreement. The invariance sweep and the abstract
// value iteration use the same arithmetic in the same order on both paths,
// so those must agree bitwise; the factored value iteration is compared to
// the dense-composition reference, a genuinely different algorithm, so those
// agree within solver tolerance instead.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "milab/abstraction.hpp"
#include "milab/planning.hpp"
#include "milab/sampling.hpp"

namespace {

using namespace milab;

double time_of(const std::function<void()>& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void report(const char* name, double serial_s, double parallel_s, double agreement) {
  std::printf("%-34s serial %8.3fs  parallel %8.3fs  speedup %5.2fx  max diff %.3g\n", name,
              serial_s, parallel_s, serial_s / parallel_s, agreement);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
  std::printf("built without OpenMP; both columns run serially\n");
#endif

  {
    // Worst case for the invariance sweep: a maximally coarse abstraction
    // groups all 729 states per variable, so every pair gets compared.
    SynthSpec spec;
    spec.d = 6;
    spec.domain_sizes.assign(6, 3);
    spec.action_count = 2;
    spec.max_parents = 2;
    const FactoredCdp cdp = synth_random_cdp(spec, 7);
    const AbstractionPhi coarse{std::vector<std::vector<int>>(6)};
    std::vector<double> eps_serial, eps_parallel;
    const double ts = time_of([&] { eps_serial = epsilon_model_invariance_serial(cdp, coarse); });
    const double tp = time_of([&] { eps_parallel = epsilon_model_invariance(cdp, coarse); });
    double diff = 0.0;
    for (int i = 0; i < 6; ++i) diff = std::max(diff, std::abs(eps_serial[i] - eps_parallel[i]));
    report("invariance defect sweep", ts, tp, diff);
  }

  {
    // Factored value iteration (keyed contraction, threaded) vs the dense
    // row-composition reference.
    SynthSpec spec;
    spec.d = 3;
    spec.domain_sizes.assign(3, 9);
    spec.action_count = 3;
    spec.max_parents = 2;
    const FactoredCdp cdp = synth_random_cdp(spec, 11);
    ValueIterationResult serial, parallel;
    const double ts = time_of([&] { serial = value_iteration_serial(cdp); });
    const double tp = time_of([&] { parallel = value_iteration(cdp); });
    double diff = 0.0;
    for (std::size_t i = 0; i < serial.q.q.size(); ++i)
      diff = std::max(diff, std::abs(serial.q.q[i] - parallel.q.q[i]));
    report("factored value iteration", ts, tp, diff);
  }

  {
    // Dense abstract value iteration, parallel vs serial sweep.
    SynthSpec spec;
    spec.d = 5;
    spec.domain_sizes.assign(5, 4);
    spec.action_count = 2;
    spec.max_parents = 2;
    const FactoredCdp cdp = synth_random_cdp(spec, 13);
    AbstractionPhi phi;
    phi.index_sets.assign(5, std::vector<int>{0, 1, 2, 3, 4});
    const BlockWeights weights = BlockWeights::uniform(cdp.shape(), phi);
    const AbstractMdp mdp = build_abstract_mdp(cdp, phi, weights);
    ValueIterationResult serial, parallel;
    const double ts = time_of([&] { serial = value_iteration_serial(mdp); });
    const double tp = time_of([&] { parallel = value_iteration(mdp); });
    double diff = 0.0;
    for (std::size_t i = 0; i < serial.q.q.size(); ++i)
      diff = std::max(diff, std::abs(serial.q.q[i] - parallel.q.q[i]));
    report("abstract value iteration", ts, tp, diff);
  }

  return 0;
}
