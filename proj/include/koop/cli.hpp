#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "koop/checkpoint.hpp"
#include "koop/dataset.hpp"
#include "koop/evalkit.hpp"
#include "koop/model.hpp"
#include "koop/simwell.hpp"
#include "koop/trainer.hpp"

namespace koop::cli {

inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kRuntime = 2;

/// Worker threads allowed by KOOP_THREADS (default 1).
inline std::size_t thread_cap() {
  if (const char* env = std::getenv("KOOP_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  return 1;
}

namespace detail {

inline void require_file(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw FormatError("file not found: " + path);
}

inline nlohmann::json read_json_file(const std::string& path) {
  require_file(path);
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

inline void banner(std::ostream& err, const std::string& command, const nlohmann::json& effective) {
  nlohmann::json j{{"command", command}, {"effective_config", effective}};
  err << j.dump() << '\n';
}

}  // namespace detail

/// Parses argv and runs one command. Exit code 0 on success, 1 for usage
/// errors, 2 for runtime failures (missing files, bad data, divergence).
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Lifted dynamics models: Traditional, Convex and Extended Koopman", "koop"};
  app.require_subcommand(1);

  // gen-well
  auto* gen = app.add_subcommand("gen-well", "Simulate the random-control double-well dataset");
  std::uint64_t gen_steps = 100000, gen_seed = 42;
  std::string gen_out;
  std::vector<double> gen_range{-5.0, 5.0};
  gen->add_option("--steps", gen_steps, "Number of timesteps")->required();
  gen->add_option("--seed", gen_seed, "PRNG seed")->required();
  gen->add_option("--out", gen_out, "Output dataset path (KOOPDS1)")->required();
  gen->add_option("--range", gen_range, "Control range LO HI")->expected(2);

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  std::string tr_model, tr_data, tr_config, tr_out;
  tr->add_option("--model", tr_model, "traditional|convex|extended")
      ->required()
      ->check(CLI::IsMember({"traditional", "convex", "extended"}));
  tr->add_option("--data", tr_data, "Dataset path")->required();
  tr->add_option("--config", tr_config, "JSON config (train fields plus optional \"model\" object)");
  tr->add_option("--out", tr_out, "Checkpoint output path")->required();

  // predict
  auto* pr = app.add_subcommand("predict", "Roll out one or more models from a dataset window");
  std::vector<std::string> pr_ckpts;
  std::string pr_data, pr_csv, pr_svg;
  std::size_t pr_start = 0, pr_horizon = 120;
  pr->add_option("--ckpt", pr_ckpts, "Checkpoint(s), at most one per model kind")->required();
  pr->add_option("--data", pr_data, "Dataset path")->required();
  pr->add_option("--start-index", pr_start, "Index of the newest observation in the history window")->required();
  pr->add_option("--horizon", pr_horizon, "Prediction steps")->required();
  pr->add_option("--csv", pr_csv, "CSV output path")->required();
  pr->add_option("--svg", pr_svg, "SVG plot output path");

  // eval
  auto* ev = app.add_subcommand("eval", "Divergence horizons on held-out windows");
  std::vector<std::string> ev_ckpts;
  std::string ev_data, ev_out;
  std::size_t ev_windows = 20, ev_horizon = 120;
  double ev_tau = 0.5;
  std::uint64_t ev_seed = 2024;
  ev->add_option("--ckpt", ev_ckpts, "Checkpoint(s)")->required();
  ev->add_option("--data", ev_data, "Dataset path")->required();
  ev->add_option("--windows", ev_windows, "Held-out windows");
  ev->add_option("--tau", ev_tau, "Position divergence threshold");
  ev->add_option("--horizon", ev_horizon, "Rollout length");
  ev->add_option("--seed", ev_seed, "Window sampling seed");
  ev->add_option("--out", ev_out, "HorizonReport CSV path (stdout if omitted)");

  // inspect
  auto* in = app.add_subcommand("inspect", "Print a checkpoint's config JSON");
  std::string in_ckpt;
  in->add_option("--ckpt", in_ckpt, "Checkpoint path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (gen->parsed()) {
      WellGenOptions opt;
      opt.n_steps = gen_steps;
      opt.seed = gen_seed;
      opt.control_lo = gen_range[0];
      opt.control_hi = gen_range[1];
      detail::banner(err, "gen-well",
                     {{"steps", gen_steps}, {"seed", gen_seed}, {"out", gen_out},
                      {"range", gen_range}, {"init", "x0~U(-1.5,1.5), v0=0"}, {"dt", kWellDt}});
      write_dataset(gen_out, gen_dataset(opt));
      return kOk;
    }

    if (tr->parsed()) {
      detail::require_file(tr_data);
      nlohmann::json cfg_json = nlohmann::json::object();
      if (!tr_config.empty()) cfg_json = detail::read_json_file(tr_config);
      ModelConfig mc;
      mc.kind = parse_model_kind(tr_model);
      if (cfg_json.contains("model")) {
        from_json(cfg_json.at("model"), mc);
        cfg_json.erase("model");
      }
      mc.kind = parse_model_kind(tr_model);
      TrainConfig tc;
      tc.loss_csv = tr_out + ".loss.csv";
      from_json(cfg_json, tc);
      tc.checkpoint_path = tr_out;
      mc.control_bound = tc.control_bound;
      const TrajectoryDataset ds = read_dataset(tr_data);
      mc.obs_dim = ds.obs_dim();
      mc.control_dim = ds.control_dim();
      nlohmann::json eff = tc;
      eff["model"] = mc;
      eff["data"] = tr_data;
      detail::banner(err, "train", eff);
      Model<float> model = make_model<float>(mc);
      TrainResult res = train(model, ds, tc, [&](const LossReport& r) {
        err << "step " << r.step + 1 << " n=" << r.n << " dynamics=" << r.dynamics << " cyc=" << r.cyc
            << " bound=" << r.bound << " val_rms=" << r.val_rms << '\n';
      });
      save_checkpoint(model, tr_out);
      out << nlohmann::json{{"steps", res.steps_run},
                            {"early_stopped", res.early_stopped},
                            {"seconds", res.seconds},
                            {"final_val_rms", res.final_val_rms}}
                 .dump()
          << '\n';
      return kOk;
    }

    if (pr->parsed()) {
      for (const auto& c : pr_ckpts) detail::require_file(c);
      detail::require_file(pr_data);
      const TrajectoryDataset ds = read_dataset(pr_data);
      detail::banner(err, "predict",
                     {{"ckpt", pr_ckpts}, {"data", pr_data}, {"start_index", pr_start},
                      {"horizon", pr_horizon}, {"csv", pr_csv}, {"svg", pr_svg}});
      if (pr_horizon < 1) throw ConfigError("--horizon must be >= 1");
      if (pr_start + pr_horizon >= ds.size())
        throw ConfigError("--start-index + --horizon runs past the dataset (" + std::to_string(ds.size()) + " records)");
      std::vector<RolloutResult> results;
      for (const auto& path : pr_ckpts) {
        Model<float> m = load_checkpoint(path);
        RolloutResult r = rollout(m, ds.window(pr_start, m.config.history), ds.control_slice(pr_start, pr_horizon));
        r.truth = ds.obs_slice(pr_start + 1, pr_horizon);
        for (const auto& prev : results)
          if (prev.kind == r.kind) throw ConfigError("predict: two checkpoints of kind " + to_string(r.kind));
        results.push_back(std::move(r));
      }
      emit_csv(results, pr_csv);
      if (!pr_svg.empty()) emit_svg(results, pr_svg);
      return kOk;
    }

    if (ev->parsed()) {
      for (const auto& c : ev_ckpts) detail::require_file(c);
      detail::require_file(ev_data);
      if (!(ev_tau > 0)) throw ConfigError("--tau must be positive");
      const TrajectoryDataset ds = read_dataset(ev_data);
      detail::banner(err, "eval",
                     {{"ckpt", ev_ckpts}, {"data", ev_data}, {"windows", ev_windows}, {"tau", ev_tau},
                      {"horizon", ev_horizon}, {"seed", ev_seed}, {"threads", thread_cap()}});
      std::vector<HorizonReport> reports(ev_ckpts.size());
      std::vector<std::string> errors(ev_ckpts.size());
      auto work = [&](std::size_t i) {
        try {
          Model<float> m = load_checkpoint(ev_ckpts[i]);
          EvalWindows w = make_eval_windows(ds, m.config.history, ev_horizon, ev_windows, ev_seed);
          reports[i] = horizon_report(evaluate_rollouts(m, w), ev_tau, ev_ckpts[i]);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      };
      const std::size_t threads = std::min(thread_cap(), ev_ckpts.size());
      if (threads <= 1) {
        for (std::size_t i = 0; i < ev_ckpts.size(); ++i) work(i);
      } else {
        std::vector<std::thread> pool;
        std::mutex mu;
        std::size_t next = 0;
        for (std::size_t t = 0; t < threads; ++t)
          pool.emplace_back([&] {
            for (;;) {
              std::size_t i;
              {
                std::lock_guard lock(mu);
                if (next >= ev_ckpts.size()) return;
                i = next++;
              }
              work(i);
            }
          });
        for (auto& th : pool) th.join();
      }
      for (std::size_t i = 0; i < errors.size(); ++i)
        if (!errors[i].empty()) throw FormatError(ev_ckpts[i] + ": " + errors[i]);
      const std::string csv = horizon_csv(reports);
      if (ev_out.empty()) out << csv;
      else write_file(ev_out, csv);
      return kOk;
    }

    if (in->parsed()) {
      detail::require_file(in_ckpt);
      const Model<float> m = load_checkpoint(in_ckpt);
      detail::banner(err, "inspect", {{"ckpt", in_ckpt}});
      nlohmann::json j = checkpoint_header(m);
      j["parameters"] = m.params.scalar_count();
      out << j.dump(2) << '\n';
      return kOk;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  err << app.help();
  return kUsage;
}

}  // namespace koop::cli
