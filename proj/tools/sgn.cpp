#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgn/bench.hpp"
#include "sgn/io.hpp"
#include "sgn/verify.hpp"

namespace fs = std::filesystem;
using sgn::ordered_json;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kBadInput = 2, kAborted = 3 };

constexpr std::uint64_t kSampleStream = 0x5A3B1E;

// Everything but train.epochs must agree for a resume to be a continuation.
bool resumable(const sgn::RunConfig& a, const sgn::RunConfig& b) {
  auto ja = sgn::to_json(a), jb = sgn::to_json(b);
  ja["train"].erase("epochs");
  jb["train"].erase("epochs");
  return ja == jb;
}

struct TrainArgs {
  std::string config, out, resume;
};

int cmd_train(const TrainArgs& a) {
  const sgn::RunConfig cfg = sgn::load_run_config(a.config);
  const sgn::Dataset ds = sgn::make_dataset(cfg);
  ds.validate();

  sgn::TrainState start;
  if (!a.resume.empty()) {
    sgn::Checkpoint ck = sgn::load_checkpoint(a.resume);
    if (!resumable(ck.config, cfg))
      throw sgn::ConfigError("checkpoint '" + a.resume + "' was written for a different configuration");
    start = std::move(ck.state);
  } else {
    start.model = sgn::make_initial_model(cfg);
    start.rng = sgn::Rng(cfg.train.seed).state();
  }

  fs::create_directories(a.out);
  const fs::path dir(a.out);
  std::ofstream log(dir / "train_log.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("cannot write " + (dir / "train_log.jsonl").string());

  const std::size_t first = start.epochs_done;
  const auto result = sgn::train_from(std::move(start), ds.points, cfg.train);
  for (const auto& e : result.log.epochs) {
    log << sgn::to_json(e).dump() << '\n';
    std::fprintf(stderr, "epoch %zu  elbo %.6f ± %.6f\n", e.epoch, e.elbo_mean, e.elbo_stderr);
  }

  sgn::save_checkpoint({cfg, result.state}, (dir / "checkpoint.json").string());

  sgn::Rng rng = sgn::Rng(cfg.seed).split(kSampleStream);
  sgn::Dataset samples;
  samples.name = "samples";
  samples.dim = result.model.data_dim;
  samples.points = sgn::generate(result.model, rng, cfg.samples);
  sgn::write_csv(samples, (dir / "samples.csv").string());

  std::printf("trained epochs %zu..%zu, checkpoint %s\n", first, result.state.epochs_done,
              (dir / "checkpoint.json").c_str());
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data;
  bool exact = false, grid = false;
  std::size_t iw = 0;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
  const sgn::Checkpoint ck = sgn::load_checkpoint(a.checkpoint);
  const sgn::SgnModel& m = ck.state.model;
  if (a.exact && !m.exact()) throw sgn::ConfigError("--exact requires an ExactAffine model");
  if (a.iw > 0 && m.exact()) throw sgn::ConfigError("--iw requires a Gaussian-decoder model");
  if (a.grid && !(m.exact() && m.data_dim == 2)) throw sgn::ConfigError("--grid requires a 2-D ExactAffine model");
  if (a.data.empty() && !a.grid) throw sgn::ConfigError("--data is required unless --grid is given");

  if (!a.data.empty()) {
    const sgn::Dataset ds = sgn::read_csv(a.data);
    if (!ds.empty() && ds.dim != m.data_dim)
      throw sgn::DataError(a.data + ": dimension " + std::to_string(ds.dim) + " differs from model data_dim " +
                           std::to_string(m.data_dim));
    const std::string mode = a.exact ? "exact" : a.iw > 0 ? "iw" : "elbo";
    sgn::Rng rng(a.seed);
    double sum = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& x = ds.points[i];
      double v;
      if (a.exact)
        v = sgn::exact_log_likelihood(m, x);
      else if (a.iw > 0)
        v = sgn::iw_log_likelihood(m, x, rng, a.iw);
      else
        v = sgn::elbo(m, x, rng, ck.config.eval_mc_samples).elbo;
      sum += v;
      std::cout << ordered_json{{"index", i}, {"log_likelihood", v}}.dump() << '\n';
    }
    const double mean = ds.empty() ? 0.0 : sum / static_cast<double>(ds.size());
    std::cout << ordered_json{{"mode", mode}, {"n", ds.size()}, {"mean", mean}}.dump() << '\n';
  }
  if (a.grid) std::cout << ordered_json{{"grid_mass", sgn::exact_grid_mass(m)}}.dump() << '\n';
  return kOk;
}

struct VerifyArgs {
  std::string profile = "quick", report;
  bool json = false, inject_fault = false;
};

int cmd_verify(const VerifyArgs& a) {
  const auto profile = a.profile == "full" ? sgn::VerifyProfile::Full : sgn::VerifyProfile::Quick;
  sgn::testing::flip_second_half_kick.store(a.inject_fault);
  const auto reports = sgn::run_all(profile);
  sgn::testing::flip_second_half_kick.store(false);

  std::string lines;
  for (const auto& r : reports) lines += r.to_json().dump() + "\n";
  if (!a.report.empty()) {
    std::ofstream out(a.report, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + a.report + "'");
    out << lines;
  }
  std::cout << (a.json ? lines : sgn::format_summary(reports));
  for (const auto& r : reports)
    if (!r.pass) return kVerifyFailed;
  return kOk;
}

struct BenchArgs {
  sgn::BenchConfig cfg;
  std::string out = "bench.csv";
};

int cmd_bench(const BenchArgs& a) {
  const auto r = sgn::run_bench(a.cfg);
  std::ofstream out(a.out, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + a.out + "'");
  out << sgn::bench_csv(r);
  std::cout << sgn::bench_summary(r).dump(1) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Symplectic generative networks: train, evaluate, verify, benchmark"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model from a JSON config");
  train->add_option("--config", ta.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--resume", ta.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Log-likelihood of a CSV dataset under a checkpoint");
  eval->add_option("--checkpoint", ea.checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", ea.data, "CSV with header x0,...")->check(CLI::ExistingFile);
  auto* exact = eval->add_flag("--exact", ea.exact, "Exact likelihood (ExactAffine models)");
  eval->add_option("--iw", ea.iw, "Importance-weighted bound with S samples")->check(CLI::PositiveNumber)->excludes(exact);
  eval->add_flag("--grid", ea.grid, "Integrate the exact density over [-6,6]^2 at spacing 0.05");
  eval->add_option("--seed", ea.seed, "Seed for sampled estimates");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Run the numerical property checks");
  verify->add_option("--profile", va.profile)->check(CLI::IsMember({"quick", "full"}));
  verify->add_option("--report", va.report, "Write JSON lines here");
  verify->add_flag("--json", va.json, "Print JSON lines instead of the table");
  verify->add_flag("--inject-fault", va.inject_fault)->group("");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Time flows and the dense-Jacobian baseline");
  bench->add_option("--dims", ba.cfg.dims)->delimiter(',');
  bench->add_option("--times", ba.cfg.times)->delimiter(',');
  bench->add_option("--steps", ba.cfg.steps)->delimiter(',');
  bench->add_option("--repeats", ba.cfg.repeats)->check(CLI::PositiveNumber);
  bench->add_option("--out", ba.out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadInput;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*verify) return cmd_verify(va);
    if (*bench) return cmd_bench(ba);
  } catch (const sgn::TrainingAborted& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kAborted;
  } catch (const std::invalid_argument& e) {  // ConfigError, DataError
    std::fprintf(stderr, "error: %s\n", e.what());
    return kBadInput;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kBadInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kAborted;
  }
  return kOk;
}
