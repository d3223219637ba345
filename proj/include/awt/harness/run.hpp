#pragma once

// Two-phase experiment driver: mask search, adversarial training of the
// masked network, evaluation, and artifact emission.

#include <filesystem>
#include <functional>
#include <iostream>
#include <string>

#include "awt/analysis.hpp"
#include "awt/harness/checkpoint.hpp"
#include "awt/harness/config.hpp"
#include "awt/harness/datasets.hpp"
#include "awt/harness/metrics_io.hpp"

namespace awt::harness {

namespace files {
inline constexpr const char* mask_checkpoint = "mask.ckpt";
inline constexpr const char* trained_checkpoint = "trained.ckpt";
inline constexpr const char* search_trace = "search_trace.csv";
inline constexpr const char* train_trace = "train_trace.csv";
inline constexpr const char* eval_summary = "eval_summary.csv";
inline constexpr const char* toy_table = "toy_table.csv";
inline constexpr const char* lemma_check = "lemma_check.csv";
inline constexpr const char* theorem_check = "theorem_check.csv";
}  // namespace files

struct ExperimentData {
  Dataset train;
  Dataset test;
};

inline ExperimentData load_data(const ExperimentConfig& c) {
  switch (c.dataset) {
    case DatasetKind::mnist: {
      const auto tr = load_mnist_idx(c.resolve(c.data.images), c.resolve(c.data.labels));
      const auto te = load_mnist_idx(c.resolve(c.data.test_images), c.resolve(c.data.test_labels));
      return {to_classification(tr, 10), to_classification(te, 10)};
    }
    case DatasetKind::mnist_subset: {
      const auto all = to_classification(
          load_mnist_idx(c.resolve(c.data.images), c.resolve(c.data.labels)), 10);
      const auto split = seeded_split(all.size(), c.data.train_size, c.data.test_size, c.seed);
      return {all.subset(split.train), all.subset(split.test)};
    }
    case DatasetKind::gaussian_toy: return {sample_toy(c.toy(), 0), sample_toy(c.toy(), 1)};
    case DatasetKind::blobs: {
      Rng tr(c.seed, 0x626c6f), te(c.seed, 0x626c70);
      return {make_blobs(c.data.samples, c.data.classes, c.data.spread, tr),
              make_blobs(c.data.test_size, c.data.classes, c.data.spread, te)};
    }
    case DatasetKind::xor_: return {make_xor(c.data.copies), make_xor(c.data.copies)};
  }
  throw ConfigError("unsupported dataset");
}

inline Provenance provenance(const ExperimentConfig& c) { return {c.seed, config_hash(c)}; }

// ---------------------------------------------------------------------------
// Phase one

struct PhaseOneResult {
  Params start;  // theta0, or the dense teacher on the toy problem
  Mask mask;
  MetricsTrace trace;
};

inline PhaseOneResult phase_one(const ExperimentConfig& c, const ExperimentData& d) {
  PhaseOneResult r;
  if (c.is_toy()) {
    r.start = toy_teacher(c.toy(), d.train, c.toy_options());
  } else {
    Rng init_rng(c.seed, 0x696e);
    r.start = init_params(c.mlp(), init_rng);
  }
  const double rho = c.search.awt.density;
  switch (c.search.method) {
    case MaskMethod::awt: {
      auto s = awt_search(r.start, d.train, c.search.awt);
      r.mask = std::move(s.mask);
      r.trace = std::move(s.trace);
      return r;
    }
    case MaskMethod::random: {
      Rng mask_rng(c.seed, 0x726d);
      r.mask = random_mask(r.start.spec, rho, mask_rng);
      break;
    }
    case MaskMethod::dense:
      r.mask = Mask{Vector::Ones(r.start.theta.size()), 1.0};
      break;
  }
  r.trace.add(0, {{"density", r.mask.density}});
  return r;
}

// ---------------------------------------------------------------------------
// Phase two

/// Eval-protocol attack with the configured budget and step count.
inline AttackConfig eval_attack(const ExperimentConfig& c, std::size_t steps) {
  AttackConfig a = eval_attack_config(c.eval.epsilon, c.seed);
  a.steps = steps;
  a.step_size = 2.5 * c.eval.epsilon / static_cast<double>(steps);
  if (c.is_toy()) {
    a.norm = NormOrder::l2;
    a.clip_box.reset();
  }
  return a;
}

inline LossKind eval_loss(const ExperimentConfig& c) {
  // A squared-loss attack on a signed single output pushes large-margin
  // points away from the boundary.
  return c.output_dim() == 1 ? LossKind::logistic : LossKind::cross_entropy;
}

struct PhaseTwoResult {
  Params params;  // pruned coordinates zeroed
  MetricsTrace trace;
};

inline PhaseTwoResult phase_two(const ExperimentConfig& c, const ExperimentData& d,
                                const Params& start, const Mask& mask) {
  Params p0 = start;
  p0.theta = effective_params(start, &mask);
  std::vector<std::pair<std::size_t, EvalResult>> tests;
  EpochCallback cb;
  if (c.train.test_every > 0) {
    const AttackConfig a = eval_attack(c, c.train.test_attack_steps);
    cb = [&, a](std::size_t epoch, const Params& p) {
      if (epoch % c.train.test_every == 0)
        tests.emplace_back(epoch, evaluate(p, &mask, d.test, a, eval_loss(c)));
    };
  }
  auto tr = adversarial_train(p0, &mask, d.train, c.train.train, cb);
  PhaseTwoResult r;
  r.params = tr.params;
  r.params.theta = effective_params(tr.params, &mask);
  std::size_t t = 0;
  for (const auto& rec : tr.trace.records()) {
    auto vals = rec.values;
    if (t < tests.size() && tests[t].first == rec.index) {
      vals.emplace_back("test_clean_acc", tests[t].second.clean_acc);
      vals.emplace_back("test_robust_acc", *tests[t].second.robust_acc);
      ++t;
    }
    r.trace.add(rec.index, std::move(vals));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

inline Table evaluation_table(const ExperimentConfig& c, const ExperimentData& d,
                              const Params& p, const Mask& mask) {
  Table t;
  t.columns = {"model", "density", "epsilon", "clean_acc", "robust_acc"};
  const std::string name = to_string(c.search.method);
  if (c.is_toy()) {
    const auto la = linear_accuracy(p.theta, d.test, c.eval.epsilon);
    t.columns.insert(t.columns.end(), {"robust_acc_closed_form", "cos"});
    t.rows.push_back({name, {mask.density, c.eval.epsilon, la.clean, la.robust,
                             closed_form_adv_acc(p.theta, c.toy()), cosine(p.theta, c.toy().mean())}});
  } else {
    const auto e = evaluate(p, &mask, d.test, eval_attack(c, c.eval.steps), eval_loss(c));
    t.rows.push_back({name, {mask.density, c.eval.epsilon, e.clean_acc, *e.robust_acc}});
  }
  return t;
}

inline Table toy_table(const ToyResult& r) {
  Table t;
  t.columns = {"model", "acc", "angle", "cos", "rob", "rob_mc", "acc_analytic"};
  for (const auto& row : r.rows)
    t.rows.push_back({row.name, {row.acc, row.angle, row.cos, row.rob, row.rob_mc, row.acc_analytic}});
  return t;
}

// ---------------------------------------------------------------------------
// Artifacts

inline std::filesystem::path prepare_output(const ExperimentConfig& c) {
  std::error_code ec;
  std::filesystem::create_directories(c.output, ec);
  if (ec) throw IoError("cannot create output directory " + c.output.string() + ": " + ec.message());
  return c.output;
}

inline void save_phase_one(const ExperimentConfig& c, const PhaseOneResult& r) {
  const auto dir = prepare_output(c);
  save_checkpoint((dir / files::mask_checkpoint).string(),
                  {r.start, r.mask, c.seed, config_hash(c), Phase::mask_search});
  emit_metrics(r.trace, (dir / files::search_trace).string(), provenance(c));
}

inline void save_phase_two(const ExperimentConfig& c, const PhaseTwoResult& r, const Mask& mask) {
  const auto dir = prepare_output(c);
  save_checkpoint((dir / files::trained_checkpoint).string(),
                  {r.params, mask, c.seed, config_hash(c), Phase::trained});
  emit_metrics(r.trace, (dir / files::train_trace).string(), provenance(c));
}

inline void save_evaluation(const ExperimentConfig& c, const Table& t) {
  emit_table(t, (prepare_output(c) / files::eval_summary).string(), provenance(c));
}

/// Both phases and the evaluation. On the toy problem the full table
/// (Bayes, SVM, dense adversarial training, AWT) is written as well.
inline void run_experiment(const ExperimentConfig& c) {
  const ExperimentData d = load_data(c);
  if (c.is_toy() && c.search.method == MaskMethod::awt) {
    const auto toy = run_toy_experiment(c.toy(), c.search.awt.density, c.toy_options());
    const Params teacher{MlpSpec{{c.data.dimension, 1}, false}, toy.rows[2].theta};
    save_phase_one(c, {teacher, toy.awt_mask, toy.search_trace});
    save_phase_two(c, {toy.awt_params, toy.train_trace}, toy.awt_mask);
    save_evaluation(c, evaluation_table(c, d, toy.awt_params, toy.awt_mask));
    emit_table(toy_table(toy), (prepare_output(c) / files::toy_table).string(), provenance(c));
    return;
  }
  const auto one = phase_one(c, d);
  save_phase_one(c, one);
  const auto two = phase_two(c, d, one.start, one.mask);
  save_phase_two(c, two, one.mask);
  save_evaluation(c, evaluation_table(c, d, two.params, one.mask));
}

/// Lemma and theorem checks on the toy problem; one CSV each.
inline bool run_bounds(const ExperimentConfig& c, std::size_t lemma_points = 5000) {
  if (!c.is_toy()) throw ConfigError("bounds: requires dataset = gaussian_toy");
  const auto dir = prepare_output(c);
  LemmaOptions lo;
  lo.test_points = lemma_points;
  lo.derivatives.seed = c.seed;
  const auto lemma = run_toy_lemma_check(c.toy(), lo);
  Table lt;
  lt.columns = {"check", "points", "points_holding", "max_deviation", "bound", "C1", "C2", "holds"};
  lt.rows.push_back({"lemma",
                     {double(lemma.report.points), double(lemma.report.points_holding),
                      lemma.report.max_deviation, lemma.report.bound, lemma.bounds.C1,
                      lemma.bounds.C2, lemma.report.holds ? 1.0 : 0.0}});
  emit_table(lt, (dir / files::lemma_check).string(), provenance(c));

  TheoremOptions to;
  to.toy = c.toy_options();
  to.epochs = c.train.train.epochs;
  to.derivatives.seed = c.seed;
  const auto thm = run_toy_theorem_check(c.toy(), c.search.awt.density, to);
  MetricsTrace tt;
  for (const auto& r : thm.report.records)
    tt.add(r.epoch, {{"lhs", r.lhs}, {"rhs", r.rhs}, {"alpha", thm.report.alpha}, {"Cq", thm.report.Cq}});
  emit_metrics(tt, (dir / files::theorem_check).string(), provenance(c));
  return lemma.report.holds && thm.report.holds;
}

/// Runs `body` and maps failures to exit statuses: 2 for configuration
/// errors, 3 for IO and format errors, 1 otherwise.
inline int guarded(const std::function<int()>& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

/// Loads the config at `path`, applies optional overrides, runs the
/// experiment and returns the process exit status.
inline int run(const std::string& path, std::optional<std::uint64_t> seed = std::nullopt,
               std::optional<std::filesystem::path> out = std::nullopt,
               std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        ExperimentConfig c = load_config(path);
        if (seed) c.seed = *seed;
        if (out) c.output = *out;
        c.finalize();
        run_experiment(c);
        return 0;
      },
      err);
}

}  // namespace awt::harness
