#include <benchmark/benchmark.h>

#include <vector>

#include "imbibe/absorption.hpp"
#include "imbibe/rng.hpp"
#include "imbibe/smc.hpp"
#include "imbibe/solver.hpp"

namespace {

using namespace imbibe;

const NNParams kNN{0.219, 1.0, 0.0025};
const BkPParams kBkP{0.219, 1.0, 5e-5, 0.45, 1.98, 1.0};

ExperimentSetup make_setup(double hours) {
    ExperimentSetup s;
    s.L = 5.0;
    s.h0 = 0.3;
    s.T_final = hours * 3600.0;
    s.n0 = 0.2851;
    s.k_log = -2.0;
    s.theta_ext = external_moisture(25.0, 0.7);
    s.measurement_times.clear();
    for (int i = 1; i <= 20; ++i)
        s.measurement_times.push_back(s.T_final * i / 20.0);
    return s;
}

void BM_NNBPrime(benchmark::State& state) {
    double s = 0.3;
    for (auto _ : state) {
        benchmark::DoNotOptimize(nn_b_prime(kNN, s));
        s += 1e-9;
    }
}
BENCHMARK(BM_NNBPrime);

void BM_BkPB(benchmark::State& state) {
    double s = 0.3;
    for (auto _ : state) {
        benchmark::DoNotOptimize(bkp_b(kBkP, s));
        s += 1e-9;
    }
}
BENCHMARK(BM_BkPB);

void BM_MaxDiffusivityBkP(benchmark::State& state) {
    AbsorptionModel m{kBkP};
    for (auto _ : state) benchmark::DoNotOptimize(max_diffusivity(m));
}
BENCHMARK(BM_MaxDiffusivityBkP);

void BM_SimulateNN(benchmark::State& state) {
    auto setup = make_setup(6.0);
    AbsorptionModel m{kNN};
    int nz = static_cast<int>(state.range(0));
    auto grid = stable_grid(setup, m, nz, 0.9);
    for (auto _ : state) benchmark::DoNotOptimize(simulate(setup, m, grid));
}
BENCHMARK(BM_SimulateNN)->Arg(40)->Arg(60)->Arg(100);

void BM_SimulateBkP(benchmark::State& state) {
    auto setup = make_setup(6.0);
    AbsorptionModel m{kBkP};
    int nz = static_cast<int>(state.range(0));
    auto grid = stable_grid(setup, m, nz, 0.9);
    for (auto _ : state) benchmark::DoNotOptimize(simulate(setup, m, grid));
}
BENCHMARK(BM_SimulateBkP)->Arg(40)->Arg(100);

void BM_SystematicResample(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    Population pop;
    pop.particles.resize(n);
    SubstreamRng seed_rng(123, 0, 0);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        pop.particles[i].theta = {seed_rng.uniform(), seed_rng.uniform()};
        pop.particles[i].weight = 0.5 + seed_rng.uniform();
        total += pop.particles[i].weight;
    }
    for (auto& p : pop.particles) p.weight /= total;
    std::uint64_t k = 0;
    for (auto _ : state) {
        SubstreamRng rng(7, 1, k++);
        benchmark::DoNotOptimize(systematic_resample(pop, rng));
    }
}
BENCHMARK(BM_SystematicResample)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
