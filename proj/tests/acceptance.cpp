// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>

#include <unistd.h>

#include "energy_instances.hpp"
#include "energyformer/checkpoint.hpp"
#include "energyformer/pipeline.hpp"
#include "energyformer/synth.hpp"
#include "metrics_oracle.hpp"
#include "primitive_cases.hpp"

using namespace ef;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

void gradient_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  double worst_primitive = 0;
  std::string worst_name;
  std::size_t primitive_trials = 0;
  for (const auto& [name, make] : primitive_cases::all())
    for (int i = 0; i < 50; ++i) {
      const primitive_cases::Case c = make(rng);
      const double e = oracle::gradient_error(c.loss, c.inputs);
      if (!(e <= worst_primitive)) {
        worst_primitive = e;
        worst_name = name;
      }
      ++primitive_trials;
    }
  std::uniform_int_distribution<std::size_t> tokens(3, 8);
  double worst_energy = 0;
  for (int i = 0; i < 50; ++i) {
    const auto in = instances::make_energy_instance(1000 + i, tokens(rng), i % 2 ? 8 : 4, i % 4 < 2 ? 1 : 2);
    worst_energy = std::max(worst_energy, instances::energy_gradient_error(in));
  }
  const double s = seconds_since(t0);
  report(worst_primitive < 1e-5 && worst_energy < 1e-4 && s < 60, "gradient-suite",
         std::to_string(primitive_trials) + " primitive trials, worst " + fmt("%.2e", worst_primitive) + " (" + worst_name +
             "); 50 energy instances, worst " + fmt("%.2e; %.1f s", worst_energy, s));
}

void energy_descent() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> tokens(3, 10);
  int ok = 0;
  double smallest_alpha = 1;
  for (int i = 0; i < 50; ++i) {
    const auto in = instances::make_energy_instance(2000 + i, tokens(rng), i % 2 ? 8 : 16, i % 3 ? 2 : 4);
    const double alpha = instances::find_descent_step(in, 8);
    if (alpha > 0 && instances::descends(instances::trace(in, alpha, 8))) ++ok;
    smallest_alpha = std::min(smallest_alpha, alpha);
  }
  const double s = seconds_since(t0);
  report(ok == 50 && s < 30, "energy-descent",
         std::to_string(ok) + "/50 instances non-increasing over T=8, smallest step " + fmt("%.3g; %.1f s", smallest_alpha, s));
}

void closed_forms() {
  std::mt19937_64 rng(3);
  int exact = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t d = 1 + i % 4;
    const Tensor k = oracle::random_tensor({1, 2, d}, rng, -3, 3), q = oracle::random_tensor({1, 2, d}, rng, -3, 3);
    Tape t;
    Var A = energy::attention_scores(t.constant(k), t.constant(q));
    const Tensor& a = A.value();
    exact += energy::attention_energy(A, 1.0).value().item() == -(a.at({0, 1, 0}) + a.at({0, 0, 1}));
  }
  double uniform_err = 0;
  for (std::size_t N = 2; N <= 12; ++N)
    for (double beta : {0.1, 0.5, 1.0, 4.0}) {
      const std::size_t H = 1 + N % 4;
      Tape t;
      const double e = energy::attention_energy(t.constant(Tensor({H, N, N}, 0.37)), beta).value().item();
      const double expect = -(static_cast<double>(H * N) / beta) * std::log(static_cast<double>(N - 1)) - static_cast<double>(H * N) * 0.37;
      uniform_err = std::max(uniform_err, std::abs(e - expect));
    }
  double limit_err = 0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t N = 2 + i % 7;
    const Tensor A = oracle::random_tensor({2, N, N}, rng, -1, 1);
    Tape t;
    const double e = energy::attention_energy(t.constant(A), 1e3).value().item();
    double limit = 0;
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t c = 0; c < N; ++c) {
        double m = -1e300;
        for (std::size_t b = 0; b < N; ++b)
          if (b != c) m = std::max(m, A.at({h, b, c}));
        limit -= m;
      }
    limit_err = std::max(limit_err, std::abs(e - limit));
  }
  report(exact == 100 && uniform_err < 1e-10 && limit_err < 1e-2, "closed-form-oracles",
         std::to_string(exact) + "/100 two-token energies exact; uniform " + fmt("%.1e; beta=1e3 limit %.1e", uniform_err, limit_err));
}

void fope_properties() {
  std::mt19937_64 rng(4);
  fope::Config cfg;
  cfg.head_dim = 8;
  bool bit_identical = true;
  for (int i = 0; i < 20; ++i) {
    Tape t;
    Var coeffs = t.constant(oracle::random_tensor({4, 2}, rng));
    const std::size_t patch_tokens = 9 + 16 * static_cast<std::size_t>(i);
    const fope::PhaseVars ph = fope::sequence_phase(coeffs, cfg, patch_tokens);
    const Tensor q = oracle::random_tensor({2, patch_tokens + 1, 8}, rng);
    const Tensor y = fope::apply(t.constant(q), ph).value();
    const auto w = fope::dominant_frequencies(8);
    const double floor = fope::floor_frequency(patch_tokens);
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t n = 0; n <= patch_tokens; ++n)
        for (std::size_t m = 0; m < 4; ++m)
          if (n == 0 || w[m] < floor)
            for (std::size_t c : {2 * m, 2 * m + 1}) {
              const double a = q.at({h, n, c}), b = y.at({h, n, c});
              bit_identical = bit_identical && std::memcmp(&a, &b, sizeof a) == 0;
            }
  }
  double rel_err = 0;
  std::uniform_int_distribution<std::size_t> pos(0, 500);
  for (int i = 0; i < 50; ++i) {
    const Tensor q = oracle::random_tensor({1, 8}, rng), k = oracle::random_tensor({1, 8}, rng);
    const std::size_t n1 = pos(rng), n2 = pos(rng), shift = pos(rng);
    auto dot = [&](std::size_t a, std::size_t b) {
      Tape t;
      Var coeffs = t.constant(Tensor({4, 2}, 0.0));
      const Tensor rq = fope::apply(t.constant(q), fope::build_phase(coeffs, cfg, {a}, 100000)).value();
      const Tensor rk = fope::apply(t.constant(k), fope::build_phase(coeffs, cfg, {b}, 100000)).value();
      double s = 0;
      for (std::size_t j = 0; j < 8; ++j) s += rq[j] * rk[j];
      return s;
    };
    rel_err = std::max(rel_err, std::abs(dot(n1, n2) - dot(n1 + shift, n2 + shift)));
  }
  double grad_err = 0;
  for (int i = 0; i < 20; ++i) {
    const Tensor coeffs = oracle::random_tensor({4, 2}, rng, -0.5, 0.5);
    const Tensor q = oracle::random_tensor({2, 10, 8}, rng);
    const bool conj = i % 2;
    auto f = [&](const std::vector<Var>& v) { return oracle::probe(fope::apply(v[1], fope::sequence_phase(v[0], cfg, 9), conj)); };
    grad_err = std::max(grad_err, oracle::gradient_error(f, {coeffs, q}));
  }
  report(bit_identical && rel_err < 1e-10 && grad_err < 1e-5, "fope-properties",
         std::string("floor rule ") + (bit_identical ? "bit-identical" : "NOT bit-identical") +
             fmt("; relative-position drift %.1e; coefficient gradient %.1e", rel_err, grad_err));
}

void permutation() {
  std::mt19937_64 rng(5);
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t N = 4 + i % 6;
    const auto in = instances::make_energy_instance(5000 + i, N, 8, 2, false);
    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin() + 1, perm.end(), rng);
    Tensor xp(in.x0.shape());
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t j = 0; j < 8; ++j) xp.at({r, j}) = in.x0.at({perm[r], j});
    Tape t;
    BoundParameters p(t, in.params, false);
    const energy::Weights w = instances::bind(p, in);
    const auto a = energy::forward(t.constant(in.x0), w, true), b = energy::forward(t.constant(xp), w, true);
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t j = 0; j < 8; ++j) worst = std::max(worst, std::abs(b.x.value().at({r, j}) - a.x.value().at({perm[r], j})));
    worst = std::max(worst, std::abs(a.trace.back().total - b.trace.back().total));
  }
  report(worst < 1e-10, "permutation-equivariance", fmt("20 instances, worst deviation %.1e", worst));
}

void metrics() {
  bool examples = true;
  auto check = [&](std::vector<std::vector<std::uint64_t>> rows, double oa, double aa, double kappa) {
    const Metrics m = compute_metrics(ConfusionMatrix::from_rows(rows));
    examples = examples && m.oa == oa && m.aa == aa && m.kappa == kappa;
  };
  check({{2, 0}, {0, 2}}, 1, 1, 1);
  check({{1, 1}, {1, 1}}, 0.5, 0.5, 0);
  check({{3, 1}, {0, 4}}, 0.875, 0.875, 0.75);
  std::mt19937_64 rng(6);
  int exact = 0;
  for (int i = 0; i < 200; ++i) {
    const ConfusionMatrix cm = metrics_oracle::random_confusion(rng);
    const Metrics m = compute_metrics(cm);
    const auto e = metrics_oracle::direct(cm);
    exact += m.oa == e.oa && m.aa == e.aa && m.kappa == e.kappa;
  }
  report(examples && exact == 200, "metrics-oracle",
         std::string("worked examples ") + (examples ? "exact" : "WRONG") + ", " + std::to_string(exact) + "/200 random matrices exact");
}

struct E2E {
  ExperimentResult result;
  double seconds;
};

E2E end_to_end(EncoderKind kind, const SynthScene& scene) {
  RunConfig cfg;  // defaults: S = 9, fraction 0.05
  cfg.model.encoder = kind;
  const auto t0 = Clock::now();
  ExperimentResult r = run_experiment(scene.cube, scene.labels, cfg);
  return {std::move(r), seconds_since(t0)};
}

std::string report_csv(EvalReport r) {
  r.train_time_seconds = 0;  // wall clock is not part of the comparison
  std::ostringstream s;
  write_report_csv(r, s);
  return s.str();
}

std::filesystem::path temp(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ef_accept_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

int main() {
  gradient_suite();
  energy_descent();
  closed_forms();
  fope_properties();
  permutation();
  metrics();

  SynthConfig sc;  // G = 4, 32 x 32 x 16, sigma 0.02, seed 7
  const SynthScene scene = synthesize(sc);
  const E2E energy = end_to_end(EncoderKind::energy, scene);
  const Metrics& em = energy.result.report.metrics;
  const E2E standard = end_to_end(EncoderKind::standard, scene);
  const Metrics& sm = standard.result.report.metrics;
  report(em.oa >= 0.95 && em.kappa >= 0.90 && energy.seconds < 600 && sm.oa >= 0.90, "end-to-end-synthetic",
         fmt("energy OA %.4f kappa %.4f in %.1f s; ", em.oa, em.kappa, energy.seconds) +
             fmt("standard attention + FF OA %.4f kappa %.4f in %.1f s", sm.oa, sm.kappa, standard.seconds));

  {
    const E2E again = end_to_end(EncoderKind::energy, scene);
    const bool same_ckpt = encode_checkpoint(again.result.model) == encode_checkpoint(energy.result.model);
    const bool same_report = report_csv(again.result.report) == report_csv(energy.result.report);
    const bool same_loss = again.result.training.epoch_loss == energy.result.training.epoch_loss;
    report(same_ckpt && same_report && same_loss, "determinism",
           std::string("second seeded run: checkpoint ") + (same_ckpt ? "identical" : "differs") + ", report " +
               (same_report ? "identical" : "differs") + ", loss curve " + (same_loss ? "identical" : "differs"));
  }

  {
    bool ok = true;
    const auto cube_path = temp("cube.hsic"), label_path = temp("labels.hsil"), ckpt_path = temp("model.efck");
    write_cube(scene.cube, cube_path);
    write_labels(scene.labels, label_path);
    ok = ok && read_cube(cube_path) == scene.cube && read_labels(label_path) == scene.labels;
    std::mt19937_64 rng(8);
    for (int i = 0; i < 20 && ok; ++i) {
      HsiCube c(1 + i % 5, 1 + i % 3, 1 + i % 7);
      for (float& v : c.values) v = std::uniform_real_distribution<float>(-1e30f, 1e30f)(rng);
      ok = decode_cube(encode_cube(c)) == c;
    }
    save_checkpoint(energy.result.model, ckpt_path);
    const Model loaded = load_checkpoint(ckpt_path);
    ok = ok && encode_checkpoint(loaded) == encode_checkpoint(energy.result.model);
    const EvalReport re = evaluate(loaded, normalize(scene.cube), scene.labels, energy.result.split.test);
    ok = ok && report_csv(re) == report_csv(energy.result.report);
    for (const auto& p : {cube_path, label_path, ckpt_path}) std::filesystem::remove(p);
    report(ok, "format-round-trips",
           ok ? "HSIC1/HSIL1 files and checkpoint save/load bit-exact, reloaded model reproduces the report"
              : "mismatch after save/load");
  }

  std::printf("%d failing criteria\n", failures);
  return failures == 0 ? 0 : 1;
}
