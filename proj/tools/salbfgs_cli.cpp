// Command-line front end: synthetic stream generation, pooled training,
// adaptive streaming, forgetting least squares, and model evaluation.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "salbfgs/salbfgs.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string batch_dir;
  std::string model_out;
  std::string model_in;
  std::string loss = "logistic";
  double l2 = 1e-3;
  std::size_t memory = 10;
  std::size_t max_iters = 200;
  double grad_tol = 1e-6;
  unsigned threads = 1;
  unsigned hash_bits = 0;  // 0: take the dimension from the data
};

salbfgs::CostConfig make_cost(const CommonOpts& opts) {
  salbfgs::CostConfig cost;
  cost.loss = opts.loss == "squared" ? salbfgs::LossKind::squared
                                     : salbfgs::LossKind::logistic;
  cost.reg = salbfgs::RegKind::l2;
  cost.reg_strength = opts.l2;
  return cost;
}

// Model dimension: an input model pins it, otherwise --hash-bits, otherwise
// the smallest dimension covering the data.
std::size_t resolve_dim(const salbfgs::Stream& stream, const CommonOpts& opts,
                        const salbfgs::ModelFile* warm) {
  if (warm) {
    const std::int64_t max_index = salbfgs::max_feature_index(stream);
    if (max_index >= static_cast<std::int64_t>(warm->theta.size()))
      throw salbfgs::dimension_error(
          "data uses feature index " + std::to_string(max_index) +
          " but the input model has dimension " +
          std::to_string(warm->theta.size()));
    return warm->theta.size();
  }
  if (opts.hash_bits > 0) {
    if (opts.hash_bits < 8 || opts.hash_bits > 30)
      throw salbfgs::config_error("--hash-bits must be in [8, 30]");
    return std::size_t{1} << opts.hash_bits;
  }
  const std::int64_t max_index = salbfgs::max_feature_index(stream);
  if (max_index < 0) throw salbfgs::io_error("stream has no features");
  return static_cast<std::size_t>(max_index) + 1;
}

void write_summary(const std::string& model_out, const json& summary) {
  const fs::path path = model_out + ".summary.json";
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw salbfgs::io_error("cannot write " + tmp.string());
    out << summary.dump(2) << '\n';
    out.flush();
    if (!out) throw salbfgs::io_error("write failure on " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw salbfgs::io_error("cannot rename " + tmp.string());
  }
}

int cmd_synth(const std::string& batch_dir, const salbfgs::DriftSpec& spec) {
  const salbfgs::Stream stream = salbfgs::generate_drift_stream(spec);
  salbfgs::write_stream(batch_dir, stream);
  std::cout << "wrote " << stream.size() << " batches to " << batch_dir
            << "\n";
  return 0;
}

int cmd_train(const CommonOpts& opts) {
  const auto started = std::chrono::steady_clock::now();
  const salbfgs::Stream stream = salbfgs::read_batch_dir(opts.batch_dir);
  salbfgs::validate_stream(stream);

  salbfgs::ModelFile warm;
  const bool have_warm = !opts.model_in.empty();
  if (have_warm) warm = salbfgs::read_model(opts.model_in);
  const std::size_t dim = resolve_dim(stream, opts, have_warm ? &warm : nullptr);

  salbfgs::LbfgsConfig lbfgs;
  lbfgs.max_iterations = opts.max_iters;
  lbfgs.grad_tolerance = opts.grad_tol;
  salbfgs::EvalPlan plan{opts.threads};

  salbfgs::CostOracle oracle = salbfgs::make_batches_oracle(
      std::span<const salbfgs::Batch>(stream.batches), make_cost(opts), plan);
  salbfgs::ParameterVector theta0 =
      have_warm ? warm.theta : salbfgs::ParameterVector(dim, 0.0);
  const salbfgs::OptimizeResult result =
      salbfgs::minimize(oracle, std::move(theta0), lbfgs, opts.memory);

  salbfgs::write_model(opts.model_out, result.theta, opts.hash_bits);

  std::size_t examples = 0;
  for (const auto& b : stream.batches) examples += b.size();
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  write_summary(opts.model_out,
                json{{"command", "train"},
                     {"batches", stream.size()},
                     {"examples", examples},
                     {"dim", dim},
                     {"iterations", result.iterations},
                     {"cost_evals", result.cost_evals},
                     {"grad_evals", result.grad_evals},
                     {"example_grad_evals", result.grad_evals * examples},
                     {"final_grad_norm", result.final_grad_norm},
                     {"converged", result.converged},
                     {"seconds", seconds}});
  std::cout << "trained batches=" << stream.size() << " examples=" << examples
            << " dim=" << dim << " iterations=" << result.iterations
            << " grad_evals=" << result.grad_evals
            << " converged=" << (result.converged ? 1 : 0) << "\n";
  return 0;
}

// Deletes a partially written trace when the run fails, so failures leave no
// partial outputs while successful runs still stream the trace batch by
// batch.
class TraceWriter {
 public:
  explicit TraceWriter(const fs::path& path) : path_(path), out_(path) {
    if (!out_) throw salbfgs::io_error("cannot write " + path.string());
  }
  ~TraceWriter() {
    if (!committed_) {
      out_.close();
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  void append(const salbfgs::BatchRecord& r) {
    out_ << "t=" << r.t << " i_before=" << salbfgs::format_double(r.i_before)
         << " i_after=" << salbfgs::format_double(r.i_after)
         << " retrained=" << (r.retrained ? 1 : 0) << " m_old=" << r.m_old
         << " m_new=" << r.m_new << " grad_evals=" << r.grad_evals << '\n';
    out_.flush();
    if (!out_) throw salbfgs::io_error("write failure on " + path_.string());
  }
  void commit() { committed_ = true; }

 private:
  fs::path path_;
  std::ofstream out_;
  bool committed_ = false;
};

int cmd_stream(const CommonOpts& opts, std::size_t m_max,
               std::size_t m_old_min, std::size_t reservoir,
               std::uint64_t seed, const std::string& mismatch_mode,
               bool reset_memory, unsigned parallel_samplings) {
  const auto started = std::chrono::steady_clock::now();
  const salbfgs::Stream stream = salbfgs::read_batch_dir(opts.batch_dir);
  salbfgs::validate_stream(stream);

  salbfgs::ModelFile warm;
  const bool have_warm = !opts.model_in.empty();
  if (have_warm) warm = salbfgs::read_model(opts.model_in);
  const std::size_t dim = resolve_dim(stream, opts, have_warm ? &warm : nullptr);

  salbfgs::DriverConfig cfg;
  cfg.cost = make_cost(opts);
  cfg.lbfgs.max_iterations = opts.max_iters;
  cfg.lbfgs.grad_tolerance = opts.grad_tol;
  cfg.sampler.m_max = m_max;
  cfg.sampler.m_old_min = m_old_min;
  cfg.sampler.reservoir_capacity = reservoir;
  cfg.memory_capacity = opts.memory;
  cfg.mode = mismatch_mode == "thresholded"
                 ? salbfgs::MismatchMode::thresholded
                 : salbfgs::MismatchMode::absolute;
  cfg.seed = seed;
  cfg.reset_memory = reset_memory;
  cfg.plan = salbfgs::EvalPlan{opts.threads};

  salbfgs::DriverState state = salbfgs::make_driver_state(dim, cfg);
  if (have_warm) state.theta = warm.theta;

  TraceWriter trace(opts.model_out + ".trace");
  std::vector<double> per_batch_seconds;
  json samplings = json::array();

  for (const salbfgs::Batch& batch : stream.batches) {
    if (parallel_samplings >= 2 &&
        salbfgs::peek_retrain(state, batch, cfg).retrain) {
      std::vector<std::uint64_t> seeds;
      for (unsigned k = 0; k < parallel_samplings; ++k)
        seeds.push_back(salbfgs::derive_seed(
            cfg.seed, 0x70617261ull + batch.time_index * 131 + k));
      const salbfgs::DispersionReport report = salbfgs::parallel_samplings(
          state, batch, std::span<const std::uint64_t>(seeds), cfg);
      json heldout = json::array();
      json converged = json::array();
      for (const auto& inst : report.instances) {
        heldout.push_back(inst.heldout_mismatch);
        converged.push_back(inst.converged);
      }
      samplings.push_back(json{{"t", batch.time_index},
                               {"dispersion", report.dispersion},
                               {"heldout_mismatch", heldout},
                               {"converged", converged}});
    }
    const salbfgs::BatchRecord record =
        salbfgs::process_batch(state, batch, cfg);
    per_batch_seconds.push_back(record.seconds);
    trace.append(record);
  }

  salbfgs::write_model(opts.model_out, state.theta, opts.hash_bits);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  json summary{{"command", "stream"},
               {"batches", stream.size()},
               {"dim", dim},
               {"retrains", state.retrains},
               {"grad_evals", state.grad_evals},
               {"example_grad_evals", state.example_grad_evals},
               {"last_converged", state.last_converged},
               {"per_batch_seconds", per_batch_seconds},
               {"seconds", seconds}};
  if (!samplings.empty()) summary["parallel_samplings"] = samplings;
  write_summary(opts.model_out, summary);
  trace.commit();
  std::cout << "processed batches=" << stream.size()
            << " retrains=" << state.retrains
            << " grad_evals=" << state.grad_evals << "\n";
  return 0;
}

int cmd_eval(const std::string& batch_dir, const std::string& model_in) {
  const salbfgs::Stream stream = salbfgs::read_batch_dir(batch_dir);
  salbfgs::validate_stream(stream);
  const salbfgs::ModelFile model = salbfgs::read_model(model_in);

  const std::span<const salbfgs::Batch> batches(stream.batches);
  const double auc_value = salbfgs::auc(batches, model.theta);
  const double err_abs = salbfgs::error_rate(model.theta, batches,
                                             salbfgs::MismatchMode::absolute);
  const double err_thr = salbfgs::error_rate(
      model.theta, batches, salbfgs::MismatchMode::thresholded);
  std::size_t examples = 0;
  for (const auto& b : stream.batches) examples += b.size();
  std::cout << "auc=" << salbfgs::format_double(auc_value)
            << " error_absolute=" << salbfgs::format_double(err_abs)
            << " error_thresholded=" << salbfgs::format_double(err_thr)
            << " examples=" << examples << "\n";
  return 0;
}

int cmd_ls_stream(const std::string& batch_dir, double mu, bool ridge,
                  const std::string& model_out) {
  const salbfgs::Stream stream = salbfgs::read_batch_dir(batch_dir);
  salbfgs::validate_stream(stream);
  const std::int64_t max_index = salbfgs::max_feature_index(stream);
  if (max_index < 0) throw salbfgs::io_error("stream has no features");
  const std::size_t dim = static_cast<std::size_t>(max_index) + 1;

  const salbfgs::ForgetWeight weight{mu};
  weight.validate();

  std::vector<std::pair<Eigen::MatrixXd, Eigen::VectorXd>> seen;
  salbfgs::ForgettingState state;
  Eigen::VectorXd theta;
  for (const salbfgs::Batch& batch : stream.batches) {
    auto [X, Y] = salbfgs::densify(batch, dim);
    if (batch.time_index == 0)
      state = salbfgs::init_state(X, Y);
    else
      salbfgs::update_state(state, X, Y, weight);
    seen.emplace_back(std::move(X), std::move(Y));

    bool ridged = false;
    try {
      theta = salbfgs::solve_theta(state);
    } catch (const salbfgs::singular_matrix_error&) {
      if (!ridge) throw;
      theta = salbfgs::solve_theta(state, {true, 1e-8});
      ridged = true;
    }
    const double err = salbfgs::fit_error(
        theta,
        std::span<const std::pair<Eigen::MatrixXd, Eigen::VectorXd>>(seen));
    std::cout << "t=" << batch.time_index
              << " fit_error=" << salbfgs::format_double(err)
              << " ridged=" << (ridged ? 1 : 0) << "\n";
  }

  if (!model_out.empty()) {
    salbfgs::ParameterVector weights(theta.data(), theta.data() + theta.size());
    salbfgs::write_model(model_out, weights, 0);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive linear-model training over time-indexed batch streams"};
  app.require_subcommand(1);

  CommonOpts opts;
  salbfgs::DriftSpec drift;
  std::string mismatch_mode = "absolute";
  std::size_t m_max = 100000;
  std::size_t m_old_min = 100;
  std::size_t reservoir = 200000;
  std::uint64_t seed = 42;
  bool reset_memory = false;
  unsigned parallel = 0;
  double mu = 1.0;
  bool ridge = false;
  std::vector<std::size_t> drift_times;
  std::vector<double> drift_magnitudes;

  auto add_common_model_opts = [&](CLI::App* cmd, bool with_optimizer) {
    cmd->add_option("--batch-dir", opts.batch_dir, "Directory of batch files")
        ->required();
    cmd->add_option("--loss", opts.loss, "Loss function")
        ->check(CLI::IsMember({"logistic", "squared"}))
        ->capture_default_str();
    cmd->add_option("--l2", opts.l2, "l2 regularization strength")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    cmd->add_option("--threads", opts.threads, "Evaluation worker threads")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--hash-bits", opts.hash_bits,
                    "Model dimension as a power of two (0: from data)")
        ->capture_default_str();
    if (with_optimizer) {
      cmd->add_option("--memory", opts.memory, "Curvature memory size")
          ->check(CLI::PositiveNumber)
          ->capture_default_str();
      cmd->add_option("--max-iters", opts.max_iters,
                      "Optimizer iteration limit")
          ->check(CLI::PositiveNumber)
          ->capture_default_str();
      cmd->add_option("--grad-tol", opts.grad_tol,
                      "Gradient infinity-norm tolerance")
          ->check(CLI::NonNegativeNumber)
          ->capture_default_str();
    }
  };

  CLI::App* synth = app.add_subcommand(
      "synth", "Generate a synthetic drifting classification stream");
  synth->add_option("--batch-dir", opts.batch_dir, "Output directory")
      ->required();
  synth->add_option("--dim", drift.dimension, "Feature dimension")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--batches", drift.num_batches, "Number of batches")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--batch-size", drift.batch_size, "Examples per batch")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--sparsity", drift.sparsity,
                    "Nonzero features per example")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--theta-scale", drift.theta_scale,
                    "Scale of the hidden parameter vector")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth->add_option("--drift-time", drift_times,
                    "Batch index at which a drift occurs (repeatable)");
  synth->add_option("--drift-magnitude", drift_magnitudes,
                    "Fraction of coordinates flipped per drift (repeatable)");
  synth->add_option("--seed", drift.seed, "Generator seed")
      ->capture_default_str();

  CLI::App* train =
      app.add_subcommand("train", "Batch training over all batches at once");
  add_common_model_opts(train, true);
  train->add_option("--model-out", opts.model_out, "Output model path")
      ->required();
  train->add_option("--model-in", opts.model_in, "Warm-start model path");

  CLI::App* stream_cmd = app.add_subcommand(
      "stream", "Adaptive streaming with drift-triggered retraining");
  add_common_model_opts(stream_cmd, true);
  stream_cmd->add_option("--model-out", opts.model_out, "Output model path")
      ->required();
  stream_cmd->add_option("--model-in", opts.model_in, "Warm-start model path");
  stream_cmd->add_option("--m-max", m_max, "Cap on new examples per retrain")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  stream_cmd
      ->add_option("--m-old-min", m_old_min,
                   "Floor on old examples per retrain")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  stream_cmd->add_option("--reservoir", reservoir, "Reservoir capacity")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  stream_cmd->add_option("--seed", seed, "Subsampling seed")
      ->capture_default_str();
  stream_cmd
      ->add_option("--mismatch-mode", mismatch_mode, "Mismatch statistic")
      ->check(CLI::IsMember({"absolute", "thresholded"}))
      ->capture_default_str();
  stream_cmd->add_flag("--reset-memory", reset_memory,
                       "Drop curvature memory at each retrain");
  stream_cmd->add_option(
      "--parallel-samplings", parallel,
      "Run this many independent subsamplings per retrain and report their "
      "dispersion");

  CLI::App* eval =
      app.add_subcommand("eval", "Evaluate a model on a batch directory");
  eval->add_option("--batch-dir", opts.batch_dir, "Directory of batch files")
      ->required();
  eval->add_option("--model-in", opts.model_in, "Model path")->required();

  CLI::App* ls = app.add_subcommand(
      "ls-stream", "Forgetting least squares over the batch stream");
  ls->add_option("--batch-dir", opts.batch_dir, "Directory of batch files")
      ->required();
  ls->add_option("--mu", mu, "Forgetting weight (1: keep the full past)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  ls->add_flag("--ridge", ridge,
               "Fall back to a small ridge term when the normal equations "
               "are singular");
  ls->add_option("--model-out", opts.model_out, "Optional output model path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*synth) {
      if (drift_times.size() != drift_magnitudes.size())
        throw salbfgs::config_error(
            "--drift-time and --drift-magnitude counts must match");
      for (std::size_t i = 0; i < drift_times.size(); ++i)
        drift.drifts.push_back({drift_times[i], drift_magnitudes[i]});
      return cmd_synth(opts.batch_dir, drift);
    }
    if (*train) return cmd_train(opts);
    if (*stream_cmd)
      return cmd_stream(opts, m_max, m_old_min, reservoir, seed, mismatch_mode,
                        reset_memory, parallel);
    if (*eval) return cmd_eval(opts.batch_dir, opts.model_in);
    if (*ls) return cmd_ls_stream(opts.batch_dir, mu, ridge, opts.model_out);
  } catch (const salbfgs::config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const salbfgs::io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const salbfgs::parse_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const salbfgs::dimension_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const salbfgs::sequencing_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const salbfgs::undefined_metric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const salbfgs::numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 70;
  }
  return 0;
}
