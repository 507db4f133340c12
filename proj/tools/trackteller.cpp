// Command-line front end: scenario generation, training, tracking,
// evaluation, and the component-ablation ladder.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "trackteller/io.hpp"
#include "trackteller/pipeline.hpp"
#include "trackteller/trainer.hpp"

using namespace trackteller;
namespace fs = std::filesystem;
namespace pl = trackteller::pipeline;
namespace tio = trackteller::io;
using nlohmann::json;

namespace {

int worker_count() {
  if (const char* env = std::getenv("TRACKTELLER_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(std::min(hw, 8u)) : 4;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  int workers = std::min<std::size_t>(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct CommonArgs {
  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double tau = -1.0;  // <0 means "use config"
  std::vector<std::string> toggle_args;
};

pl::Toggles parse_toggles(const std::vector<std::string>& args) {
  pl::Toggles toggles;
  for (const auto& arg : args) {
    auto eq = arg.find('=');
    if (eq == std::string::npos)
      throw ConfigError(arg, "expected --toggle name=on|off");
    std::string name = arg.substr(0, eq);
    std::string value = arg.substr(eq + 1);
    bool on;
    if (value == "on")
      on = true;
    else if (value == "off")
      on = false;
    else
      throw ConfigError(name, "toggle value must be on or off");
    bool found = false;
    for (const auto& [fname, field] : pl::toggle_fields())
      if (fname == name) {
        toggles.*field = on;
        found = true;
      }
    if (!found) throw ConfigError(name, "unknown toggle");
  }
  return toggles;
}

tio::RunConfig config_for(const CommonArgs& args) {
  tio::RunConfig cfg;
  if (!args.config_path.empty()) cfg = tio::load_config(args.config_path);
  if (args.seed_set) cfg.world.seed = args.seed;
  return cfg;
}

std::uint64_t sequence_seed(std::uint64_t dataset_seed, std::size_t i) {
  return numcore::Rng(dataset_seed).child("seq").child(i).next_u64();
}

// ---------------------------------------------------------------------------

int cmd_generate(const CommonArgs& args, int n_sequences) {
  tio::RunConfig cfg = config_for(args);
  cfg.world.validate();
  fs::path out(args.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  {  // probe writability before any work
    std::ofstream probe(out / ".write_probe");
    if (!probe) throw IoError("output directory not writable: " + out.string());
  }
  fs::remove(out / ".write_probe");
  tio::write_manifest(out, "generate", cfg, cfg.world.seed, pl::Toggles{});

  std::vector<std::string> names(n_sequences);
  parallel_for(static_cast<std::size_t>(n_sequences), [&](std::size_t i) {
    auto seq = scenekit::simulate_sequence(cfg.world, sequence_seed(cfg.world.seed, i));
    auto data = pl::encode_features(std::move(seq), cfg.world);
    char buf[32];
    std::snprintf(buf, sizeof buf, "seq_%05zu", i);
    names[i] = buf;
    tio::write_sequence_bundle(out / buf, data, static_cast<int>(i));
  });

  json index;
  index["n_sequences"] = n_sequences;
  index["seed"] = cfg.world.seed;
  index["config"] = tio::config_json(cfg);
  index["sequences"] = names;
  tio::write_text(out / "index.json", index.dump(2) + "\n");
  std::cout << "generated " << n_sequences << " sequences under " << out.string()
            << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_dir) {
  auto dataset = tio::load_dataset(data_dir);
  tio::RunConfig cfg =
      args.config_path.empty() ? dataset.cfg : tio::load_config(args.config_path);
  cfg.world = dataset.cfg.world;  // the data fixes the world geometry
  pl::Toggles toggles = parse_toggles(args.toggle_args);
  cfg.model.toggles = toggles;
  std::uint64_t seed = args.seed_set ? args.seed : cfg.world.seed;
  cfg.train.seed = seed;

  fs::path out(args.out);
  fs::create_directories(out);
  numcore::ParamStore ps;
  pl::init_params(ps, cfg.world, cfg.model, seed);
  tio::write_manifest(out, "train", cfg, seed, toggles, ps.content_hash(),
                      ps.total_scalars());
  std::cout << "parameters: " << ps.count() << " tensors, " << ps.total_scalars()
            << " scalars\n";

  std::ofstream loss_log(out / "loss.ndjson");
  if (!loss_log) throw IoError("cannot write: " + (out / "loss.ndjson").string());
  auto log = [&](const pl::StepLog& s) {
    json j;
    j["step"] = s.step;
    j["epoch"] = s.epoch;
    j["cls"] = s.loss.cls;
    j["bbox"] = s.loss.bbox;
    j["mem"] = s.loss.mem;
    j["fut"] = s.loss.fut;
    j["ground"] = s.loss.ground;
    j["total"] = s.loss.total;
    loss_log << j.dump() << "\n";
  };

  pl::TrainResult result;
  try {
    result = pl::train(ps, dataset.sequences, cfg.world, cfg.model, cfg.train, log);
  } catch (const NumericError& e) {
    json j;
    j["error"] = e.what();
    loss_log << j.dump() << "\n";
    throw;
  }

  ps.save((out / "params.ttps").string());
  tio::write_text(out / "params_best.ttps", result.best_params);
  std::cout << "steps: " << result.steps << "  first loss: " << result.first_loss
            << "  final loss: " << result.final_loss
            << "  best: " << result.best_loss << " @ step " << result.best_step
            << "\n";
  return 0;
}

int cmd_track(const CommonArgs& args, const std::string& data_dir,
              const std::string& params_path) {
  auto dataset = tio::load_dataset(data_dir);
  tio::RunConfig cfg =
      args.config_path.empty() ? dataset.cfg : tio::load_config(args.config_path);
  cfg.world = dataset.cfg.world;
  cfg.model.toggles = parse_toggles(args.toggle_args);
  if (args.tau >= 0) cfg.model.tau = args.tau;

  auto ps = numcore::ParamStore::load(params_path);
  std::vector<std::string> missing;
  for (const auto& name : pl::expected_param_names(cfg.world, cfg.model))
    if (!ps.has(name)) missing.push_back(name);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += " " + m;
    throw CompatError("parameter file missing required tensors:" + list);
  }

  fs::path out(args.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  tio::write_manifest(out.has_parent_path() ? out.parent_path() : fs::path("."),
                      "track", cfg, cfg.world.seed, cfg.model.toggles,
                      ps.content_hash(), ps.total_scalars());

  std::vector<std::string> chunks(dataset.sequences.size());
  parallel_for(dataset.sequences.size(), [&](std::size_t i) {
    auto result = pl::run_sequence(dataset.sequences[i], ps, cfg.world, cfg.model,
                                   /*with_loss=*/false);
    std::ostringstream os;
    for (const auto& r : pl::to_track_records(result, dataset.prompt_ids[i]))
      os << tio::track_record_json(r).dump() << "\n";
    chunks[i] = os.str();
  });
  std::ostringstream all;
  for (const auto& c : chunks) all << c;
  tio::write_text(out, all.str());
  std::cout << "wrote predictions to " << out.string() << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& pred_path,
             const std::string& gt_dir) {
  tio::RunConfig cfg = config_for(args);
  auto preds = tio::read_track_records(pred_path);
  auto gts = tio::load_all_gt(gt_dir);
  if (args.tau >= 0) cfg.eval.tau_list = {args.tau};
  auto report = metrics::evaluate(preds, gts, cfg.eval);

  fs::path out(args.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  tio::write_text(out.string() + ".json", tio::report_json(report).dump(2) + "\n");
  tio::write_text(out.string() + ".txt", tio::report_table(report));
  std::cout << tio::report_table(report);
  return 0;
}

struct LadderRow {
  std::string name;
  pl::Toggles toggles;
};

std::vector<LadderRow> ablation_ladder() {
  std::vector<LadderRow> rows;
  pl::Toggles t{false, false, false, false, false};
  rows.push_back({"ug-img", t});
  t.lidar_fusion = true;
  rows.push_back({"ug-lid", t});
  t.lsm = true;
  rows.push_back({"lsm", t});
  t.lgd = true;
  rows.push_back({"lgd", t});
  t.historical_reasoning = true;
  rows.push_back({"hr", t});
  t.temporal_grounding_prediction = true;
  rows.push_back({"tgp", t});
  return rows;
}

int cmd_ablate(const CommonArgs& args, const std::string& data_dir) {
  auto dataset = tio::load_dataset(data_dir);
  tio::RunConfig cfg =
      args.config_path.empty() ? dataset.cfg : tio::load_config(args.config_path);
  cfg.world = dataset.cfg.world;
  std::uint64_t seed = args.seed_set ? args.seed : cfg.world.seed;

  fs::path out(args.out);
  fs::create_directories(out);
  tio::write_manifest(out, "ablate", cfg, seed, pl::Toggles{});

  auto gts = tio::load_all_gt(data_dir);
  json table = json::array();
  std::ostringstream human;
  human << "row      AMOTA^   Recall^  AMOTP_v  TID_v    FAF_v   (at tau="
        << (args.tau >= 0 ? args.tau : 0.3) << ")\n";
  double report_tau = args.tau >= 0 ? args.tau : 0.3;

  for (const auto& row : ablation_ladder()) {
    tio::RunConfig row_cfg = cfg;
    row_cfg.model.toggles = row.toggles;
    fs::path row_dir = out / ("row_" + row.name);
    fs::create_directories(row_dir);
    numcore::ParamStore ps;
    pl::init_params(ps, row_cfg.world, row_cfg.model, seed);
    tio::write_manifest(row_dir, "ablate:" + row.name, row_cfg, seed, row.toggles,
                        ps.content_hash(), ps.total_scalars());
    auto trained =
        pl::train(ps, dataset.sequences, row_cfg.world, row_cfg.model, row_cfg.train);

    std::vector<std::string> chunks(dataset.sequences.size());
    parallel_for(dataset.sequences.size(), [&](std::size_t i) {
      auto result = pl::run_sequence(dataset.sequences[i], ps, row_cfg.world,
                                     row_cfg.model, false);
      std::ostringstream os;
      for (const auto& r : pl::to_track_records(result, dataset.prompt_ids[i]))
        os << tio::track_record_json(r).dump() << "\n";
      chunks[i] = os.str();
    });
    std::ostringstream all;
    for (const auto& c : chunks) all << c;
    tio::write_text(row_dir / "predictions.ndjson", all.str());

    auto preds = tio::read_track_records((row_dir / "predictions.ndjson").string());
    auto report = metrics::evaluate(preds, gts, row_cfg.eval);
    tio::write_text((row_dir / "report.json").string(),
                    tio::report_json(report).dump(2) + "\n");
    tio::write_text((row_dir / "report.txt").string(), tio::report_table(report));

    json entry;
    entry["row"] = row.name;
    entry["toggles"] = tio::toggles_json(row.toggles);
    entry["final_loss"] = trained.final_loss;
    entry["report"] = tio::report_json(report);
    table.push_back(entry);

    const metrics::MetricRow* shown = nullptr;
    for (const auto& r : report.rows)
      if (std::fabs(r.tau - report_tau) < 1e-9) shown = &r;
    if (!shown && !report.rows.empty()) shown = &report.rows.back();
    auto cell = [](const std::optional<double>& v) {
      char buf[16];
      if (v)
        std::snprintf(buf, sizeof buf, "%-8.4f", *v);
      else
        std::snprintf(buf, sizeof buf, "%-8s", "-");
      return std::string(buf);
    };
    char name[16];
    std::snprintf(name, sizeof name, "%-8s", row.name.c_str());
    if (shown)
      human << name << " " << cell(shown->amota) << " " << cell(shown->recall)
            << " " << cell(shown->amotp) << " " << cell(shown->tid) << " "
            << cell(shown->faf) << "\n";
  }

  json combined;
  combined["rows"] = table;
  tio::write_text(out / "ablation.json", combined.dump(2) + "\n");
  tio::write_text(out / "ablation.txt", human.str());
  std::cout << human.str();
  return 0;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"language-grounded temporal 3d tracking on synthetic scenes"};
  app.require_subcommand(1);

  CommonArgs args;
  int n_sequences = 8;
  std::string data_dir, params_path, pred_path, gt_dir;

  auto add_common = [&](CLI::App* cmd, bool with_toggles = true) {
    cmd->add_option("--config", args.config_path, "config file (key = value lines)");
    cmd->add_option("--out", args.out, "output path")->required();
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t v) {
          args.seed = v;
          args.seed_set = true;
        },
        "seed override");
    cmd->add_option("--tau", args.tau, "score filtering threshold");
    if (with_toggles)
      cmd->add_option("--toggle", args.toggle_args,
                      "component toggle, name=on|off (repeatable)");
  };

  auto* gen = app.add_subcommand("generate", "synthesize a scenario dataset");
  add_common(gen, false);
  gen->add_option("--n", n_sequences, "number of sequences");

  auto* train = app.add_subcommand("train", "optimize parameters on a dataset");
  add_common(train);
  train->add_option("--data", data_dir, "dataset directory")->required();

  auto* track = app.add_subcommand("track", "run grounded tracking inference");
  add_common(track);
  track->add_option("--data", data_dir, "dataset directory")->required();
  track->add_option("--params", params_path, "parameter file")->required();

  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  add_common(eval, false);
  eval->add_option("--pred", pred_path, "predictions ndjson")->required();
  eval->add_option("--gt", gt_dir, "dataset directory with ground truth")->required();

  auto* ablate = app.add_subcommand("ablate", "train and evaluate the component ladder");
  add_common(ablate, false);
  ablate->add_option("--data", data_dir, "dataset directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) return cmd_generate(args, n_sequences);
  if (train->parsed()) return cmd_train(args, data_dir);
  if (track->parsed()) return cmd_track(args, data_dir, params_path);
  if (eval->parsed()) return cmd_eval(args, pred_path, gt_dir);
  if (ablate->parsed()) return cmd_ablate(args, data_dir);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 6;
  } catch (const CompatError& e) {
    std::cerr << "compatibility error: " << e.what() << "\n";
    return 5;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
