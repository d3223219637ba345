// Command-line front end: `awt <subcommand> [--config F] [--seed S] [--threads N] [--out DIR]`.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "awt/awt.hpp"

using namespace awt;
using namespace awt::harness;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  int threads = 1;
};

void add_common(CLI::App* app, CommonFlags& f, bool config_required) {
  auto* c = app->add_option("--config", f.config, "experiment INI file");
  if (config_required) c->required();
  app->add_option("--seed", f.seed, "override [experiment] seed");
  app->add_option("--out", f.out, "override [experiment] output directory");
  app->add_option("--threads", f.threads, "Eigen worker threads")->check(CLI::PositiveNumber);
}

ExperimentConfig load(const CommonFlags& f, const char* fallback_dataset = nullptr) {
  ExperimentConfig c;
  if (!f.config.empty()) {
    c = load_config(f.config);
  } else {
    std::istringstream is(std::string("[experiment]\ndataset = ") + fallback_dataset + "\n");
    c = parse_config(is, std::filesystem::current_path());
  }
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.output = std::filesystem::absolute(*f.out);
  c.finalize();
  return c;
}

Checkpoint load_matching(const ExperimentConfig& c, const std::string& path) {
  auto ck = load_checkpoint(path);
  if (ck.config_hash != config_hash(c))
    std::cerr << "warning: " << path << " was written under a different configuration\n";
  if (!(ck.params.spec == (c.is_toy() ? MlpSpec{{c.data.dimension, 1}, false} : c.mlp())))
    throw ConfigError(path + ": architecture does not match [model]");
  if (!ck.mask) throw FormatError(path + ": checkpoint carries no mask");
  return ck;
}

void print_table(const Table& t) {
  for (std::size_t j = 0; j < t.columns.size(); ++j)
    std::printf(j ? " %12s" : "%-8s", t.columns[j].c_str());
  std::printf("\n");
  for (const auto& [name, vals] : t.rows) {
    std::printf("%-8s", name.c_str());
    for (const auto& v : vals) std::printf(" %12.4f", v.value_or(std::nan("")));
    std::printf("\n");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial winning tickets: mask search at initialization and robust training"};
  app.require_subcommand(1);
  CommonFlags f;
  std::string checkpoint;
  double density = 0.1;
  std::size_t points = 5000, batch = 16;
  std::string kind = "mtk", kernel_file;

  auto* run_cmd = app.add_subcommand("run", "mask search, adversarial training and evaluation");
  add_common(run_cmd, f, true);
  auto* search_cmd = app.add_subcommand("awt-search", "phase one only: write mask.ckpt");
  add_common(search_cmd, f, true);
  auto* train_cmd = app.add_subcommand("train", "phase two from a mask checkpoint");
  add_common(train_cmd, f, true);
  train_cmd->add_option("--checkpoint", checkpoint, "phase-one checkpoint (default <out>/mask.ckpt)");
  auto* eval_cmd = app.add_subcommand("eval", "robust evaluation of a trained checkpoint");
  add_common(eval_cmd, f, true);
  eval_cmd->add_option("--checkpoint", checkpoint, "trained checkpoint (default <out>/trained.ckpt)");
  auto* toy_cmd = app.add_subcommand("toy", "Gaussian toy table (Bayes, SVM, Adv.Tr, AWT)");
  add_common(toy_cmd, f, false);
  toy_cmd->add_option("--density", density, "AWT density when no config is given");
  auto* bounds_cmd = app.add_subcommand("bounds", "deviation lemma and dynamics bound on the toy");
  add_common(bounds_cmd, f, false);
  bounds_cmd->add_option("--points", points, "held-out points for the lemma check");
  auto* ntk_cmd = app.add_subcommand("ntk", "dump an empirical kernel on test inputs");
  add_common(ntk_cmd, f, true);
  ntk_cmd->add_option("--checkpoint", checkpoint, "checkpoint (default <out>/trained.ckpt)");
  ntk_cmd->add_option("--kind", kind, "ntk, mtk or diag")->check(CLI::IsMember({"ntk", "mtk", "diag"}));
  ntk_cmd->add_option("--batch", batch, "number of test inputs")->check(CLI::PositiveNumber);
  ntk_cmd->add_option("--file", kernel_file, "output file (default <out>/kernel.bin)");

  CLI11_PARSE(app, argc, argv);
  Eigen::setNbThreads(f.threads);

  return guarded([&]() -> int {
    if (run_cmd->parsed()) {
      run_experiment(load(f));
      return 0;
    }
    if (toy_cmd->parsed() || bounds_cmd->parsed()) {
      ExperimentConfig c = load(f, "gaussian_toy");
      if (f.config.empty()) {
        c.search.awt.density = density;
        c.finalize();
        c.validate();
      }
      if (!c.is_toy() || c.search.method != MaskMethod::awt)
        throw ConfigError("this command needs dataset = gaussian_toy and search.method = awt");
      if (bounds_cmd->parsed()) {
        const bool ok = run_bounds(c, points);
        std::cout << "bounds " << (ok ? "hold" : "violated") << "; see " << c.output.string() << '\n';
        return ok ? 0 : 1;
      }
      run_experiment(c);
      std::cout << std::ifstream(c.output / files::toy_table).rdbuf();
      return 0;
    }
    const ExperimentConfig c = load(f);
    const ExperimentData d = load_data(c);
    if (search_cmd->parsed()) {
      save_phase_one(c, phase_one(c, d));
      return 0;
    }
    if (train_cmd->parsed()) {
      const auto ck = load_matching(
          c, checkpoint.empty() ? (c.output / files::mask_checkpoint).string() : checkpoint);
      save_phase_two(c, phase_two(c, d, ck.params, *ck.mask), *ck.mask);
      return 0;
    }
    const auto ck = load_matching(
        c, checkpoint.empty() ? (c.output / files::trained_checkpoint).string() : checkpoint);
    if (eval_cmd->parsed()) {
      const auto t = evaluation_table(c, d, ck.params, *ck.mask);
      save_evaluation(c, t);
      print_table(t);
      return 0;
    }
    const auto n = std::min<std::size_t>(batch, d.test.size());
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const Matrix X = gather_rows(d.test.inputs, idx);
    KernelMatrix K;
    if (kind == "ntk") {
      K = empirical_ntk(ck.params, &*ck.mask, X);
    } else {
      const Matrix Xt = iterative_attack(ck.params, &*ck.mask, X, gather_rows(d.test.targets, idx),
                                         eval_loss(c), eval_attack(c, c.eval.steps));
      K = kind == "mtk" ? empirical_mtk(ck.params, &*ck.mask, X, Xt)
                        : diag_mtk(ck.params, &*ck.mask, X, Xt);
    }
    const auto path = kernel_file.empty() ? prepare_output(c) / "kernel.bin"
                                          : std::filesystem::path(kernel_file);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    write_kernel(os, K);
    std::cout << to_string(K.tag) << ' ' << K.rows() << 'x' << K.cols() << " -> " << path.string()
              << '\n';
    return 0;
  });
}
