#pragma once

#include <cctype>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trackteller/metrics.hpp"
#include "trackteller/pipeline.hpp"
#include "trackteller/trainer.hpp"

namespace trackteller::io {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// configuration file: one "key = value" per line, '#' comments

struct RunConfig {
  scenekit::WorldConfig world;
  pipeline::ModelConfig model;
  pipeline::TrainConfig train;
  metrics::EvalConfig eval = metrics::EvalConfig::defaults();
};

namespace detail {

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (...) {
      throw ConfigError(key, "bad list element '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(key, "empty list");
  return out;
}

inline double parse_num(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    while (used < v.size() && std::isspace(static_cast<unsigned char>(v[used])))
      ++used;
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (...) {
    throw ConfigError(key, "bad numeric value '" + v + "'");
  }
}

inline void apply_key(RunConfig& cfg, const std::string& key,
                      const std::string& value) {
  auto num = [&]() { return parse_num(key, value); };
  auto integer = [&]() { return static_cast<int>(parse_num(key, value)); };

  if (key == "n_objects") cfg.world.n_objects = integer();
  else if (key == "T") cfg.world.T = integer();
  else if (key == "n_views") cfg.world.n_views = integer();
  else if (key == "n_patches") cfg.world.n_patches = integer();
  else if (key == "d_img") cfg.world.d_img = integer();
  else if (key == "bev_h") cfg.world.bev_h = integer();
  else if (key == "bev_w") cfg.world.bev_w = integer();
  else if (key == "d_pc") cfg.world.d_pc = integer();
  else if (key == "occlusion_rate") cfg.world.occlusion_rate = num();
  else if (key == "prompt_kind_mix") {
    auto list = parse_list(key, value);
    if (list.size() != 3) throw ConfigError(key, "needs exactly 3 weights");
    cfg.world.prompt_kind_mix = {list[0], list[1], list[2]};
  } else if (key == "seed") cfg.world.seed = static_cast<std::uint64_t>(num());
  else if (key == "M") cfg.model.m = integer();
  else if (key == "n_decoder_layers") cfg.model.n_decoder_layers = integer();
  else if (key == "D") cfg.model.d = integer();
  else if (key == "heads") cfg.model.heads = integer();
  else if (key == "K") cfg.model.k = integer();
  else if (key == "nms_radius") cfg.model.nms_radius = num();
  else if (key == "tau") cfg.model.tau = num();
  else if (key == "d_txt") cfg.model.d_txt = integer();
  else if (key == "ffn_hidden") cfg.model.ffn_hidden = integer();
  else if (key == "head_hidden") cfg.model.head_hidden = integer();
  else if (key == "lr") cfg.train.lr = num();
  else if (key == "epochs") cfg.train.epochs = integer();
  else if (key == "batch_sequences") cfg.train.batch_sequences = integer();
  else if (key == "weights.cls") cfg.train.loss.weights.cls = num();
  else if (key == "weights.bbox") cfg.train.loss.weights.bbox = num();
  else if (key == "weights.mem") cfg.train.loss.weights.mem = num();
  else if (key == "weights.fut") cfg.train.loss.weights.fut = num();
  else if (key == "weights.ground") cfg.train.loss.weights.ground = num();
  else if (key == "focal_alpha") cfg.train.loss.focal_alpha = num();
  else if (key == "focal_gamma") cfg.train.loss.focal_gamma = num();
  else if (key == "match_gate_m") cfg.train.loss.match_gate = num();
  else if (key == "eval.match_radius") cfg.eval.match_radius = num();
  else if (key == "eval.recall_points") {
    int n = integer();
    if (n < 1) throw ConfigError(key, "must be >= 1");
    cfg.eval = metrics::EvalConfig::defaults(n);
  } else if (key == "eval.tau_list") cfg.eval.tau_list = parse_list(key, value);
  else throw ConfigError(key, "unknown key");
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(line, "expected 'key = value'");
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    detail::apply_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

inline json config_json(const RunConfig& cfg) {
  json j;
  j["n_objects"] = cfg.world.n_objects;
  j["T"] = cfg.world.T;
  j["n_views"] = cfg.world.n_views;
  j["n_patches"] = cfg.world.n_patches;
  j["d_img"] = cfg.world.d_img;
  j["bev_h"] = cfg.world.bev_h;
  j["bev_w"] = cfg.world.bev_w;
  j["d_pc"] = cfg.world.d_pc;
  j["occlusion_rate"] = cfg.world.occlusion_rate;
  j["prompt_kind_mix"] = cfg.world.prompt_kind_mix;
  j["seed"] = cfg.world.seed;
  j["M"] = cfg.model.m;
  j["n_decoder_layers"] = cfg.model.n_decoder_layers;
  j["D"] = cfg.model.d;
  j["heads"] = cfg.model.heads;
  j["K"] = cfg.model.k;
  j["nms_radius"] = cfg.model.nms_radius;
  j["tau"] = cfg.model.tau;
  j["d_txt"] = cfg.model.d_txt;
  j["ffn_hidden"] = cfg.model.ffn_hidden;
  j["head_hidden"] = cfg.model.head_hidden;
  j["lr"] = cfg.train.lr;
  j["epochs"] = cfg.train.epochs;
  j["batch_sequences"] = cfg.train.batch_sequences;
  j["weights.cls"] = cfg.train.loss.weights.cls;
  j["weights.bbox"] = cfg.train.loss.weights.bbox;
  j["weights.mem"] = cfg.train.loss.weights.mem;
  j["weights.fut"] = cfg.train.loss.weights.fut;
  j["weights.ground"] = cfg.train.loss.weights.ground;
  j["focal_alpha"] = cfg.train.loss.focal_alpha;
  j["focal_gamma"] = cfg.train.loss.focal_gamma;
  j["match_gate_m"] = cfg.train.loss.match_gate;
  j["eval.match_radius"] = cfg.eval.match_radius;
  j["eval.tau_list"] = cfg.eval.tau_list;
  return j;
}

inline RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("n_objects", cfg.world.n_objects);
  get("T", cfg.world.T);
  get("n_views", cfg.world.n_views);
  get("n_patches", cfg.world.n_patches);
  get("d_img", cfg.world.d_img);
  get("bev_h", cfg.world.bev_h);
  get("bev_w", cfg.world.bev_w);
  get("d_pc", cfg.world.d_pc);
  get("occlusion_rate", cfg.world.occlusion_rate);
  get("prompt_kind_mix", cfg.world.prompt_kind_mix);
  get("seed", cfg.world.seed);
  get("M", cfg.model.m);
  get("n_decoder_layers", cfg.model.n_decoder_layers);
  get("D", cfg.model.d);
  get("heads", cfg.model.heads);
  get("K", cfg.model.k);
  get("nms_radius", cfg.model.nms_radius);
  get("tau", cfg.model.tau);
  get("d_txt", cfg.model.d_txt);
  get("ffn_hidden", cfg.model.ffn_hidden);
  get("head_hidden", cfg.model.head_hidden);
  get("lr", cfg.train.lr);
  get("epochs", cfg.train.epochs);
  get("batch_sequences", cfg.train.batch_sequences);
  get("weights.cls", cfg.train.loss.weights.cls);
  get("weights.bbox", cfg.train.loss.weights.bbox);
  get("weights.mem", cfg.train.loss.weights.mem);
  get("weights.fut", cfg.train.loss.weights.fut);
  get("weights.ground", cfg.train.loss.weights.ground);
  get("focal_alpha", cfg.train.loss.focal_alpha);
  get("focal_gamma", cfg.train.loss.focal_gamma);
  get("match_gate_m", cfg.train.loss.match_gate);
  get("eval.match_radius", cfg.eval.match_radius);
  get("eval.tau_list", cfg.eval.tau_list);
  return cfg;
}

// ---------------------------------------------------------------------------
// NDJSON records

inline json object_state_json(int t, const scenekit::ObjectState& o) {
  json j;
  j["t"] = t;
  j["id"] = o.id;
  j["class"] = scenekit::to_string(o.cls);
  j["color"] = scenekit::to_string(o.color);
  j["x"] = o.x;
  j["y"] = o.y;
  j["z"] = o.z;
  j["w"] = o.w;
  j["l"] = o.l;
  j["h"] = o.h;
  j["yaw"] = o.yaw;
  j["vx"] = o.vx;
  j["vy"] = o.vy;
  j["visible"] = o.visible;
  return j;
}

inline scenekit::ObjectState object_state_from_json(const json& j, long line) {
  try {
    scenekit::ObjectState o;
    o.id = j.at("id").get<int>();
    auto cls = scenekit::class_from_string(j.at("class").get<std::string>());
    auto color = scenekit::color_from_string(j.at("color").get<std::string>());
    if (!cls || !color) throw SchemaError(line, "unknown class or color");
    o.cls = *cls;
    o.color = *color;
    o.x = j.at("x").get<double>();
    o.y = j.at("y").get<double>();
    o.z = j.at("z").get<double>();
    o.w = j.at("w").get<double>();
    o.l = j.at("l").get<double>();
    o.h = j.at("h").get<double>();
    o.yaw = j.at("yaw").get<double>();
    o.vx = j.at("vx").get<double>();
    o.vy = j.at("vy").get<double>();
    o.visible = j.at("visible").get<bool>();
    return o;
  } catch (const json::exception& e) {
    throw SchemaError(line, e.what());
  }
}

inline json track_record_json(const metrics::TrackRecord& r) {
  json j;
  j["t"] = r.t;
  j["track_id"] = r.track_id;
  j["x"] = r.box.x;
  j["y"] = r.box.y;
  j["z"] = r.box.z;
  j["w"] = r.box.w;
  j["l"] = r.box.l;
  j["h"] = r.box.h;
  j["yaw"] = r.box.yaw;
  j["score"] = r.score;
  j["prompt_id"] = r.prompt_id;
  j["selected"] = r.selected;
  return j;
}

inline metrics::TrackRecord track_record_from_json(const json& j, long line) {
  try {
    metrics::TrackRecord r;
    r.t = j.at("t").get<int>();
    r.track_id = j.at("track_id").get<int>();
    r.box.x = j.at("x").get<double>();
    r.box.y = j.at("y").get<double>();
    r.box.z = j.at("z").get<double>();
    r.box.w = j.at("w").get<double>();
    r.box.l = j.at("l").get<double>();
    r.box.h = j.at("h").get<double>();
    r.box.yaw = j.at("yaw").get<double>();
    r.score = j.at("score").get<double>();
    r.prompt_id = j.at("prompt_id").get<int>();
    r.selected = j.value("selected", false);
    return r;
  } catch (const json::exception& e) {
    throw SchemaError(line, e.what());
  }
}

inline json gt_record_json(const metrics::GtRecord& g) {
  json j;
  j["t"] = g.t;
  j["object_id"] = g.object_id;
  j["x"] = g.box.x;
  j["y"] = g.box.y;
  j["z"] = g.box.z;
  j["w"] = g.box.w;
  j["l"] = g.box.l;
  j["h"] = g.box.h;
  j["yaw"] = g.box.yaw;
  j["prompt_id"] = g.prompt_id;
  j["is_target"] = g.is_target;
  return j;
}

inline metrics::GtRecord gt_record_from_json(const json& j, long line) {
  try {
    metrics::GtRecord g;
    g.t = j.at("t").get<int>();
    g.object_id = j.at("object_id").get<int>();
    g.box.x = j.at("x").get<double>();
    g.box.y = j.at("y").get<double>();
    g.box.z = j.at("z").get<double>();
    g.box.w = j.at("w").get<double>();
    g.box.l = j.at("l").get<double>();
    g.box.h = j.at("h").get<double>();
    g.box.yaw = j.at("yaw").get<double>();
    g.prompt_id = j.at("prompt_id").get<int>();
    g.is_target = j.at("is_target").get<bool>();
    return g;
  } catch (const json::exception& e) {
    throw SchemaError(line, e.what());
  }
}

template <typename Record, typename FromJson>
std::vector<Record> read_ndjson(const std::string& path, FromJson&& from) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<Record> out;
  std::string line;
  long line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw SchemaError(line_no, "invalid json");
    out.push_back(from(j, line_no));
  }
  return out;
}

inline std::vector<metrics::TrackRecord> read_track_records(const std::string& path) {
  return read_ndjson<metrics::TrackRecord>(path, track_record_from_json);
}

inline std::vector<metrics::GtRecord> read_gt_records(const std::string& path) {
  return read_ndjson<metrics::GtRecord>(path, gt_record_from_json);
}

// ---------------------------------------------------------------------------
// sequence bundles

inline void write_text(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write: " + path.string());
  f << content;
  if (!f) throw IoError("write failed: " + path.string());
}

inline std::string frame_key(int t, const char* kind) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame%04d.%s", t, kind);
  return buf;
}

// Directory layout: frames.ndjson (object states), prompt.json, gt.ndjson,
// features.ttps (encoder outputs in the parameter-store binary format).
inline void write_sequence_bundle(const fs::path& dir,
                                  const pipeline::SequenceData& data,
                                  int prompt_id) {
  fs::create_directories(dir);
  const auto& seq = data.seq;

  std::ostringstream frames;
  for (const auto& frame : seq.frames)
    for (const auto& o : frame.objects)
      frames << object_state_json(frame.t, o).dump() << "\n";
  write_text(dir / "frames.ndjson", frames.str());

  json prompt;
  prompt["text"] = seq.prompt.text;
  prompt["kind"] = scenekit::to_string(seq.prompt.kind);
  prompt["tokens"] = seq.prompt.tokens;
  prompt["target_ids"] = std::vector<int>(seq.prompt.target_ids.begin(),
                                          seq.prompt.target_ids.end());
  prompt["predicate"] = seq.prompt.predicate.to_text();
  prompt["seed"] = seq.seed;
  prompt["prompt_id"] = prompt_id;
  write_text(dir / "prompt.json", prompt.dump(2) + "\n");

  std::ostringstream gt;
  for (const auto& g : pipeline::to_gt_records(seq, prompt_id))
    gt << gt_record_json(g).dump() << "\n";
  write_text(dir / "gt.ndjson", gt.str());

  numcore::ParamStore features;
  for (int t = 0; t < seq.T(); ++t) {
    if (t < static_cast<int>(data.f_pc.size()))
      features.declare_raw(frame_key(t, "pc"), data.f_pc[t].shape(),
                           data.f_pc[t].data());
    features.declare_raw(frame_key(t, "img"), data.f_img[t].shape(),
                         data.f_img[t].data());
  }
  std::ofstream ttps(dir / "features.ttps", std::ios::binary);
  if (!ttps) throw IoError("cannot write: " + (dir / "features.ttps").string());
  features.serialize(ttps, /*with_adam=*/false);
}

inline pipeline::SequenceData read_sequence_bundle(const fs::path& dir,
                                                   int* prompt_id = nullptr) {
  pipeline::SequenceData data;
  auto states = read_ndjson<std::pair<int, scenekit::ObjectState>>(
      (dir / "frames.ndjson").string(), [](const json& j, long line) {
        return std::make_pair(j.at("t").get<int>(),
                              object_state_from_json(j, line));
      });
  int max_t = -1;
  for (const auto& [t, o] : states) max_t = std::max(max_t, t);
  data.seq.frames.resize(max_t + 1);
  for (int t = 0; t <= max_t; ++t) data.seq.frames[t].t = t;
  for (const auto& [t, o] : states) data.seq.frames[t].objects.push_back(o);

  std::ifstream pf(dir / "prompt.json");
  if (!pf) throw IoError("cannot open: " + (dir / "prompt.json").string());
  json prompt = json::parse(pf, nullptr, false);
  if (prompt.is_discarded()) throw SchemaError(1, "invalid prompt.json");
  data.seq.prompt.text = prompt.at("text").get<std::string>();
  data.seq.prompt.tokens = prompt.at("tokens").get<std::vector<int>>();
  for (int id : prompt.at("target_ids").get<std::vector<int>>())
    data.seq.prompt.target_ids.insert(id);
  data.seq.prompt.predicate =
      scenekit::Predicate::from_text(prompt.at("predicate").get<std::string>());
  data.seq.seed = prompt.at("seed").get<std::uint64_t>();
  std::string kind = prompt.at("kind").get<std::string>();
  for (int k = 0; k < 3; ++k)
    if (kind == scenekit::to_string(static_cast<scenekit::PromptKind>(k)))
      data.seq.prompt.kind = static_cast<scenekit::PromptKind>(k);
  if (prompt_id) *prompt_id = prompt.value("prompt_id", 0);

  std::ifstream ttps(dir / "features.ttps", std::ios::binary);
  if (!ttps) throw IoError("cannot open: " + (dir / "features.ttps").string());
  auto features = numcore::ParamStore::deserialize(ttps, (dir / "features.ttps").string());
  for (int t = 0; t <= max_t; ++t) {
    if (features.has(frame_key(t, "pc"))) {
      const auto& f = features.param(frame_key(t, "pc"));
      data.f_pc.push_back(numcore::Tensor::from(f.shape(), f.data()));
    }
    const auto& fi = features.param(frame_key(t, "img"));
    data.f_img.push_back(numcore::Tensor::from(fi.shape(), fi.data()));
  }
  return data;
}

// ---------------------------------------------------------------------------
// datasets

struct Dataset {
  RunConfig cfg;
  std::vector<pipeline::SequenceData> sequences;
  std::vector<int> prompt_ids;
  std::vector<std::string> dirs;
  fs::path root;
};

inline Dataset load_dataset(const fs::path& root) {
  std::ifstream f(root / "index.json");
  if (!f) throw IoError("cannot open dataset index: " + (root / "index.json").string());
  json index = json::parse(f, nullptr, false);
  if (index.is_discarded()) throw SchemaError(1, "invalid index.json");
  Dataset ds;
  ds.root = root;
  ds.cfg = config_from_json(index.at("config"));
  for (const auto& name : index.at("sequences")) {
    int prompt_id = 0;
    ds.sequences.push_back(
        read_sequence_bundle(root / name.get<std::string>(), &prompt_id));
    ds.prompt_ids.push_back(prompt_id);
    ds.dirs.push_back(name.get<std::string>());
  }
  return ds;
}

inline std::vector<metrics::GtRecord> load_all_gt(const fs::path& root) {
  std::ifstream f(root / "index.json");
  if (!f) throw IoError("cannot open dataset index: " + (root / "index.json").string());
  json index = json::parse(f, nullptr, false);
  if (index.is_discarded()) throw SchemaError(1, "invalid index.json");
  std::vector<metrics::GtRecord> out;
  for (const auto& name : index.at("sequences")) {
    auto part = read_gt_records((root / name.get<std::string>() / "gt.ndjson").string());
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// reports

inline json report_json(const metrics::EvalReport& report) {
  json rows = json::array();
  for (const auto& row : report.rows) {
    json r;
    r["tau"] = row.tau;
    auto put = [&r](const char* key, const std::optional<double>& v) {
      if (v)
        r[key] = *v;
      else
        r[key] = nullptr;
    };
    put("amota", row.amota);
    put("amotp", row.amotp);
    put("recall", row.recall);
    put("tid", row.tid);
    put("faf", row.faf);
    if (!row.reason.empty()) r["reason"] = row.reason;
    rows.push_back(r);
  }
  json j;
  j["rows"] = rows;
  return j;
}

inline std::string report_table(const metrics::EvalReport& report) {
  std::ostringstream os;
  os << "tau     AMOTA^   Recall^  AMOTP_v  TID_v    FAF_v\n";
  auto cell = [&](const std::optional<double>& v) {
    char buf[16];
    if (v)
      std::snprintf(buf, sizeof buf, "%-8.4f", *v);
    else
      std::snprintf(buf, sizeof buf, "%-8s", "-");
    return std::string(buf);
  };
  for (const auto& row : report.rows) {
    char tau[16];
    std::snprintf(tau, sizeof tau, "%-7.2f", row.tau);
    os << tau << " " << cell(row.amota) << " " << cell(row.recall) << " "
       << cell(row.amotp) << " " << cell(row.tid) << " " << cell(row.faf);
    if (!row.reason.empty()) os << " (" << row.reason << ")";
    os << "\n";
  }
  os << "note: FAF is false positives per frame at the tau-filtered "
        "operating point.\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// run manifests

inline json toggles_json(const pipeline::Toggles& t) {
  json j;
  for (const auto& [name, field] : pipeline::toggle_fields()) j[name] = t.*field;
  return j;
}

// Written before any data output; carries everything needed to replay the
// command.
inline void write_manifest(const fs::path& dir, const std::string& command,
                           const RunConfig& cfg, std::uint64_t seed,
                           const pipeline::Toggles& toggles,
                           const std::string& param_hash = "",
                           std::size_t n_params = 0) {
  json j;
  j["command"] = command;
  j["config"] = config_json(cfg);
  j["seed"] = seed;
  j["toggles"] = toggles_json(toggles);
  if (!param_hash.empty()) j["param_hash"] = param_hash;
  if (n_params) j["n_params"] = n_params;
  j["created_unix"] = static_cast<long>(std::time(nullptr));
  fs::create_directories(dir);
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

}  // namespace trackteller::io
