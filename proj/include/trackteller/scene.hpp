#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "trackteller/errors.hpp"
#include "trackteller/rng.hpp"

namespace trackteller::scenekit {

using numcore::Rng;

constexpr double kPi = 3.14159265358979323846;
constexpr double kFrameDt = 0.5;      // seconds between frames
constexpr double kOccludedLidarKeep = 0.3;  // fraction of points kept while occluded

enum class ObjClass : int { car = 0, truck, pedestrian, cyclist, barrier, cone };
enum class Color : int { white = 0, black, red, blue, yellow, none };
constexpr int kNumClasses = 6;
constexpr int kNumColors = 6;

inline const char* to_string(ObjClass c) {
  static const char* names[] = {"car", "truck", "pedestrian", "cyclist", "barrier", "cone"};
  return names[static_cast<int>(c)];
}
inline const char* to_string(Color c) {
  static const char* names[] = {"white", "black", "red", "blue", "yellow", "none"};
  return names[static_cast<int>(c)];
}

inline std::optional<ObjClass> class_from_string(const std::string& s) {
  for (int i = 0; i < kNumClasses; ++i)
    if (s == to_string(static_cast<ObjClass>(i))) return static_cast<ObjClass>(i);
  return std::nullopt;
}
inline std::optional<Color> color_from_string(const std::string& s) {
  for (int i = 0; i < kNumColors; ++i)
    if (s == to_string(static_cast<Color>(i))) return static_cast<Color>(i);
  return std::nullopt;
}

inline double wrap_pi(double a) {
  return a - 2.0 * kPi * std::floor((a + kPi) / (2.0 * kPi));
}

struct ObjectState {
  int id = 0;
  ObjClass cls = ObjClass::car;
  Color color = Color::none;
  double x = 0, y = 0, z = 0;   // center, meters
  double w = 1, l = 1, h = 1;   // size, meters
  double yaw = 0;               // [-pi, pi)
  double vx = 0, vy = 0;        // m/s
  bool visible = true;

  double speed() const { return std::hypot(vx, vy); }
};

struct LidarPoint {
  double x = 0, y = 0, z = 0, intensity = 0;
};

struct EgoPose {
  double x = 0, y = 0, theta = 0;
};

struct FrameSample {
  int t = 0;
  std::vector<LidarPoint> points;
  std::vector<ObjectState> objects;
  EgoPose ego_pose;

  const ObjectState* find(int id) const {
    for (const auto& o : objects)
      if (o.id == id) return &o;
    return nullptr;
  }
};

enum class PromptKind : int { appearance = 0, spatial, temporal };

inline const char* to_string(PromptKind k) {
  static const char* names[] = {"appearance", "spatial", "temporal"};
  return names[static_cast<int>(k)];
}

// Machine-checkable target description. Re-evaluating it over the
// ground-truth trajectories must reproduce the prompt's target set.
struct Predicate {
  enum class Kind : int {
    color_class = 0,  // class with given color
    side_class,       // class on the left/right of the ego axis (sign of y, final frame)
    front_class,      // class ahead/behind (sign of x, final frame)
    stopped,          // speed(T-3) > 1 and speed(T-1) < 0.2
    accelerated,      // speed(T-1) - speed(T-3) > 1
    turned_left,      // yaw increased by > pi/6 over the last 4 frames
    turned_right,     // yaw decreased by > pi/6 over the last 4 frames
    crossed,          // y changed sign within the last 4 frames
  };
  Kind kind = Kind::color_class;
  ObjClass cls = ObjClass::car;
  Color color = Color::none;
  int side = 1;  // +1 left/ahead, -1 right/behind

  std::set<int> evaluate(const std::vector<FrameSample>& frames) const {
    std::set<int> out;
    if (frames.empty()) return out;
    const int last = static_cast<int>(frames.size()) - 1;
    for (const auto& obj : frames[last].objects) {
      if (obj.cls != cls) continue;
      if (holds_for(obj.id, frames)) out.insert(obj.id);
    }
    return out;
  }

  bool holds_for(int id, const std::vector<FrameSample>& frames) const {
    const int last = static_cast<int>(frames.size()) - 1;
    const ObjectState* now = frames[last].find(id);
    if (!now || now->cls != cls) return false;
    auto sign = [](double v) { return v >= 0 ? 1 : -1; };
    auto state_at = [&](int t) { return frames[t].find(id); };
    switch (kind) {
      case Kind::color_class:
        return now->color == color;
      case Kind::side_class:
        return sign(now->y) == side;
      case Kind::front_class:
        return sign(now->x) == side;
      case Kind::stopped: {
        const ObjectState* past = state_at(std::max(0, last - 2));
        return past && past->speed() > 1.0 && now->speed() < 0.2;
      }
      case Kind::accelerated: {
        const ObjectState* past = state_at(std::max(0, last - 2));
        return past && now->speed() - past->speed() > 1.0;
      }
      case Kind::turned_left: {
        const ObjectState* past = state_at(std::max(0, last - 3));
        return past && wrap_pi(now->yaw - past->yaw) > kPi / 6.0;
      }
      case Kind::turned_right: {
        const ObjectState* past = state_at(std::max(0, last - 3));
        return past && wrap_pi(now->yaw - past->yaw) < -kPi / 6.0;
      }
      case Kind::crossed: {
        for (int t = std::max(1, last - 3); t <= last; ++t) {
          const ObjectState* prev = state_at(t - 1);
          const ObjectState* cur = state_at(t);
          if (prev && cur && sign(prev->y) != sign(cur->y)) return true;
        }
        return false;
      }
    }
    return false;
  }

  std::string to_text() const {
    std::ostringstream os;
    static const char* kind_names[] = {"color_class", "side_class", "front_class",
                                       "stopped",     "accelerated", "turned_left",
                                       "turned_right", "crossed"};
    os << kind_names[static_cast<int>(kind)] << ":class=" << to_string(cls);
    if (kind == Kind::color_class) os << ",color=" << to_string(color);
    if (kind == Kind::side_class || kind == Kind::front_class)
      os << ",side=" << side;
    return os.str();
  }

  static Predicate from_text(const std::string& s) {
    Predicate p;
    auto colon = s.find(':');
    if (colon == std::string::npos) throw Error("bad predicate: " + s);
    std::string kind_name = s.substr(0, colon);
    static const char* kind_names[] = {"color_class", "side_class", "front_class",
                                       "stopped",     "accelerated", "turned_left",
                                       "turned_right", "crossed"};
    bool found = false;
    for (int i = 0; i < 8; ++i)
      if (kind_name == kind_names[i]) {
        p.kind = static_cast<Kind>(i);
        found = true;
      }
    if (!found) throw Error("bad predicate kind: " + kind_name);
    std::stringstream rest(s.substr(colon + 1));
    std::string item;
    while (std::getline(rest, item, ',')) {
      auto eq = item.find('=');
      if (eq == std::string::npos) throw Error("bad predicate field: " + item);
      std::string key = item.substr(0, eq), val = item.substr(eq + 1);
      if (key == "class") {
        auto c = class_from_string(val);
        if (!c) throw Error("bad predicate class: " + val);
        p.cls = *c;
      } else if (key == "color") {
        auto c = color_from_string(val);
        if (!c) throw Error("bad predicate color: " + val);
        p.color = *c;
      } else if (key == "side") {
        p.side = std::stoi(val);
      }
    }
    return p;
  }
};

struct PromptSpec {
  std::vector<int> tokens;
  PromptKind kind = PromptKind::appearance;
  std::set<int> target_ids;
  Predicate predicate;
  std::string text;
};

struct Sequence {
  std::vector<FrameSample> frames;
  PromptSpec prompt;
  std::uint64_t seed = 0;

  int T() const { return static_cast<int>(frames.size()); }
};

// ---------------------------------------------------------------------------
// vocabulary

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = {
      "follow", "track",  "the",     "white",     "black",   "red",
      "blue",   "yellow", "car",     "truck",     "pedestrian", "cyclist",
      "barrier", "cone",  "on",      "left",      "right",   "ahead",
      "behind", "that",   "just",    "stopped",   "accelerated", "turned",
      "crossed"};
  return words;
}

inline int word_id(const std::string& w) {
  const auto& v = vocabulary();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] == w) return static_cast<int>(i);
  throw VocabError(w);
}

constexpr std::size_t kMaxPromptTokens = 16;

inline std::vector<int> tokenize(const std::string& text) {
  std::vector<int> ids;
  std::stringstream ss(text);
  std::string w;
  while (ss >> w) ids.push_back(word_id(w));
  if (ids.size() > kMaxPromptTokens)
    throw DomainError("prompt longer than " + std::to_string(kMaxPromptTokens) +
                      " tokens: \"" + text + "\"");
  return ids;
}

inline std::string detokenize(const std::vector<int>& ids) {
  const auto& v = vocabulary();
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= static_cast<int>(v.size()))
      throw VocabError("#" + std::to_string(ids[i]));
    if (i) out += ' ';
    out += v[ids[i]];
  }
  return out;
}

// ---------------------------------------------------------------------------
// world configuration

struct WorldConfig {
  int n_objects = 6;
  int T = 8;
  int n_views = 4;
  int n_patches = 25;  // per view, p*p grid
  int d_img = 32;
  int bev_h = 10;
  int bev_w = 20;
  int d_pc = 16;
  double occlusion_rate = 0.25;
  std::array<double, 3> prompt_kind_mix = {0.34, 0.33, 0.33};
  std::uint64_t seed = 0;

  // metric extents of the sensed area (meters)
  double x_min = -25, x_max = 25;
  double y_min = -10, y_max = 10;
  double patch_r_min = 1.0, patch_r_max = 30.0;
  int clutter_points = 20;
  double speed_scale = 1.0;    // multiplies sampled speeds; 0 freezes the scene
  double motion_noise = 0.05;  // per-frame acceleration noise sigma

  void validate() const {
    if (n_objects < 2 || n_objects > 32)
      throw ConfigError("n_objects", "must be in [2, 32]");
    if (T < 2 || T > 32) throw ConfigError("T", "must be in [2, 32]");
    if (n_views < 1) throw ConfigError("n_views", "must be >= 1");
    int p = static_cast<int>(std::lround(std::sqrt(double(n_patches))));
    if (p * p != n_patches || p < 1)
      throw ConfigError("n_patches", "must be a perfect square >= 1");
    if (d_img < 13) throw ConfigError("d_img", "must be >= 13");
    if (bev_h < 1 || bev_w < 1) throw ConfigError("bev_h", "grid must be >= 1x1");
    if (d_pc < 1) throw ConfigError("d_pc", "must be >= 1");
    if (occlusion_rate < 0 || occlusion_rate > 1)
      throw ConfigError("occlusion_rate", "must be in [0, 1]");
    double mix = prompt_kind_mix[0] + prompt_kind_mix[1] + prompt_kind_mix[2];
    if (prompt_kind_mix[0] < 0 || prompt_kind_mix[1] < 0 ||
        prompt_kind_mix[2] < 0 || mix <= 0)
      throw ConfigError("prompt_kind_mix", "must be nonnegative with positive sum");
  }

  int patch_side() const {
    return static_cast<int>(std::lround(std::sqrt(double(n_patches))));
  }
  int total_patches() const { return n_views * n_patches; }
  int bev_cells() const { return bev_h * bev_w; }
};

// ---------------------------------------------------------------------------
// simulation

namespace detail {

struct ClassTraits {
  double w, l, h;
  double v_min, v_max;  // sampled cruise speed range
  double v_cap;         // hard physical cap
  double intensity;
};

inline const ClassTraits& traits(ObjClass c) {
  static const ClassTraits table[] = {
      {1.9, 4.5, 1.6, 1.5, 6.0, 20.0, 0.40},  // car
      {2.5, 7.0, 3.0, 1.5, 5.0, 15.0, 0.45},  // truck
      {0.7, 0.7, 1.8, 0.5, 2.0, 2.5, 0.30},   // pedestrian
      {0.7, 1.8, 1.5, 1.0, 4.0, 8.0, 0.35},   // cyclist
      {0.4, 2.5, 1.1, 0.0, 0.0, 0.0, 0.50},   // barrier
      {0.3, 0.3, 0.7, 0.0, 0.0, 0.0, 0.60},   // cone
  };
  return table[static_cast<int>(c)];
}

enum class Behavior : int { cruise = 0, stop, accelerate, turn_left, turn_right, cross };

inline ObjClass sample_class(Rng& rng) {
  double u = rng.uniform();
  if (u < 0.45) return ObjClass::car;
  if (u < 0.60) return ObjClass::truck;
  if (u < 0.75) return ObjClass::pedestrian;
  if (u < 0.85) return ObjClass::cyclist;
  if (u < 0.93) return ObjClass::barrier;
  return ObjClass::cone;
}

inline bool is_vehicle(ObjClass c) {
  return c == ObjClass::car || c == ObjClass::truck;
}
inline bool is_static(ObjClass c) {
  return c == ObjClass::barrier || c == ObjClass::cone;
}

}  // namespace detail

// Constant-velocity motion with small acceleration noise, plus scripted
// short maneuvers (stop / accelerate / turn / cross) so that
// motion-dependent prompts have satisfying objects. Deterministic in
// (config, seed).
inline Sequence simulate_sequence(const WorldConfig& cfg, std::uint64_t seed);

// Samples a prompt of the requested kind whose predicate is satisfied by
// at least one object; target_ids is the full satisfier set.
inline PromptSpec generate_prompt(const Sequence& seq, PromptKind kind, Rng rng);

namespace detail {

struct TrajectorySpec {
  ObjectState init;
  Behavior behavior = Behavior::cruise;
  int occl_start = -1, occl_len = 0;
};

inline TrajectorySpec sample_object(const WorldConfig& cfg, int id, Rng stream,
                                    bool force_car, bool force_maneuver) {
  TrajectorySpec spec;
  ObjectState& o = spec.init;
  o.id = id;
  o.cls = force_car ? ObjClass::car : sample_class(stream);
  const auto& tr = traits(o.cls);
  o.color = is_vehicle(o.cls)
                ? static_cast<Color>(stream.uniform_int(5))
                : Color::none;
  double jitter = 0.9 + 0.2 * stream.uniform();
  o.w = tr.w * jitter;
  o.l = tr.l * jitter;
  o.h = tr.h * jitter;
  o.z = o.h / 2.0;
  o.x = stream.uniform(cfg.x_min + 5.0, cfg.x_max - 5.0);
  o.y = stream.uniform(cfg.y_min + 2.0, cfg.y_max - 2.0);
  double dir = stream.uniform(-kPi, kPi);
  double speed = is_static(o.cls)
                     ? 0.0
                     : cfg.speed_scale * stream.uniform(tr.v_min, tr.v_max);
  o.vx = speed * std::cos(dir);
  o.vy = speed * std::sin(dir);
  o.yaw = speed > 0.05 ? dir : stream.uniform(-kPi, kPi);

  if (!is_static(o.cls) && cfg.speed_scale > 0) {
    double u = stream.uniform();
    if (force_maneuver && is_vehicle(o.cls)) {
      Behavior opts[] = {Behavior::stop, Behavior::accelerate, Behavior::turn_left,
                         Behavior::turn_right, Behavior::cross};
      spec.behavior = opts[stream.uniform_int(5)];
    } else if (is_vehicle(o.cls)) {
      if (u < 0.55)
        spec.behavior = Behavior::cruise;
      else if (u < 0.67)
        spec.behavior = Behavior::stop;
      else if (u < 0.79)
        spec.behavior = Behavior::accelerate;
      else if (u < 0.86)
        spec.behavior = Behavior::turn_left;
      else if (u < 0.93)
        spec.behavior = Behavior::turn_right;
      else
        spec.behavior = Behavior::cross;
    }
  }

  if (spec.behavior == Behavior::cross) {
    // start on one side, velocity tuned to cross y=0 near frame T-2.5
    int side = stream.uniform() < 0.5 ? 1 : -1;
    o.y = side * stream.uniform(2.0, 6.0);
    double t_cross = std::max(1.5, cfg.T - 2.5);
    o.vy = -o.y / (kFrameDt * t_cross) * cfg.speed_scale;
    o.vx = stream.uniform(-1.5, 1.5) * cfg.speed_scale;
    o.yaw = o.speed() > 0.05 ? std::atan2(o.vy, o.vx) : o.yaw;
  }
  return spec;
}

}  // namespace detail

inline Sequence simulate_sequence(const WorldConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng root = Rng(seed).child("sim");

  // prompt kind for this sequence; temporal templates need at least 4
  // frames of history, shorter sequences fall back to appearance
  std::array<double, 3> mix = cfg.prompt_kind_mix;
  if (cfg.T < 4) {
    mix[0] += mix[2];
    mix[2] = 0.0;
    if (mix[0] + mix[1] <= 0) mix[0] = 1.0;
  }
  double mix_sum = mix[0] + mix[1] + mix[2];
  double u = root.child("promptkind").uniform() * mix_sum;
  PromptKind kind = u < mix[0] ? PromptKind::appearance
                               : (u < mix[0] + mix[1] ? PromptKind::spatial
                                                      : PromptKind::temporal);

  // object specs; object 0 is a car, and carries a maneuver when the
  // sequence needs a temporal prompt
  std::vector<detail::TrajectorySpec> specs;
  specs.reserve(cfg.n_objects);
  for (int i = 0; i < cfg.n_objects; ++i) {
    specs.push_back(detail::sample_object(
        cfg, i, root.child("obj").child(static_cast<std::uint64_t>(i)),
        /*force_car=*/i == 0,
        /*force_maneuver=*/i == 0 && kind == PromptKind::temporal));
  }

  // occlusion windows (contiguous)
  for (int i = 0; i < cfg.n_objects; ++i) {
    Rng occ = root.child("occl").child(static_cast<std::uint64_t>(i));
    if (occ.uniform() < cfg.occlusion_rate) {
      int max_len = std::max(1, cfg.T / 2);
      specs[i].occl_len = 1 + static_cast<int>(occ.uniform_int(max_len));
      specs[i].occl_start =
          static_cast<int>(occ.uniform_int(cfg.T - specs[i].occl_len + 1));
    }
  }

  Sequence seq;
  seq.seed = seed;
  seq.frames.resize(cfg.T);

  // roll trajectories
  std::vector<ObjectState> state;
  for (const auto& s : specs) state.push_back(s.init);
  for (int t = 0; t < cfg.T; ++t) {
    FrameSample& frame = seq.frames[t];
    frame.t = t;
    frame.objects = state;
    for (auto& o : frame.objects) {
      const auto& spec = specs[o.id];
      o.visible = !(spec.occl_start >= 0 && t >= spec.occl_start &&
                    t < spec.occl_start + spec.occl_len);
    }

    // lidar points for this frame
    for (const auto& o : frame.objects) {
      Rng pts = root.child("points").child(static_cast<std::uint64_t>(t))
                    .child(static_cast<std::uint64_t>(o.id));
      int base = 8 + static_cast<int>(pts.uniform_int(8));
      int k = o.visible ? base
                        : std::max(1, static_cast<int>(std::lround(
                                       base * kOccludedLidarKeep)));
      double c = std::cos(o.yaw), s = std::sin(o.yaw);
      for (int p = 0; p < k; ++p) {
        double lu = pts.uniform(-o.l / 2, o.l / 2);
        double lv = pts.uniform(-o.w / 2, o.w / 2);
        LidarPoint pt;
        pt.x = o.x + lu * c - lv * s;
        pt.y = o.y + lu * s + lv * c;
        pt.z = pts.uniform(0.0, o.h);
        pt.intensity = std::clamp(
            detail::traits(o.cls).intensity + pts.gauss(0.0, 0.05), 0.0, 1.0);
        frame.points.push_back(pt);
      }
    }
    Rng clutter = root.child("clutter").child(static_cast<std::uint64_t>(t));
    for (int p = 0; p < cfg.clutter_points; ++p) {
      LidarPoint pt;
      pt.x = clutter.uniform(cfg.x_min, cfg.x_max);
      pt.y = clutter.uniform(cfg.y_min, cfg.y_max);
      pt.z = clutter.uniform(0.0, 0.3);
      pt.intensity = std::clamp(0.05 + clutter.gauss(0.0, 0.02), 0.0, 1.0);
      frame.points.push_back(pt);
    }

    if (t + 1 == cfg.T) break;

    // advance state
    for (auto& o : state) {
      const auto& spec = specs[o.id];
      const auto& tr = detail::traits(o.cls);
      if (!detail::is_static(o.cls)) {
        Rng noise = root.child("traj").child(static_cast<std::uint64_t>(o.id))
                        .child(static_cast<std::uint64_t>(t));
        o.vx += noise.gauss(0.0, cfg.motion_noise) * kFrameDt;
        o.vy += noise.gauss(0.0, cfg.motion_noise) * kFrameDt;

        int next_t = t + 1;
        switch (spec.behavior) {
          case detail::Behavior::stop:
            if (next_t >= cfg.T - 2) {
              o.vx *= 0.1;
              o.vy *= 0.1;
            }
            break;
          case detail::Behavior::accelerate:
            if (next_t >= cfg.T - 2) {
              o.vx *= 1.8;
              o.vy *= 1.8;
            }
            break;
          case detail::Behavior::turn_left:
          case detail::Behavior::turn_right:
            if (next_t >= cfg.T - 3) {
              double dyaw = (spec.behavior == detail::Behavior::turn_left ? 1 : -1) *
                            kPi / 8.0;
              double c = std::cos(dyaw), s = std::sin(dyaw);
              double nvx = o.vx * c - o.vy * s;
              double nvy = o.vx * s + o.vy * c;
              o.vx = nvx;
              o.vy = nvy;
            }
            break;
          default:
            break;
        }
        double sp = o.speed();
        if (sp > tr.v_cap) {
          o.vx *= tr.v_cap / sp;
          o.vy *= tr.v_cap / sp;
        }
        if (o.speed() > 0.05) o.yaw = wrap_pi(std::atan2(o.vy, o.vx));
      }
      o.x += o.vx * kFrameDt;
      o.y += o.vy * kFrameDt;
    }
  }

  // prompt with bounded retries
  Rng prompt_root = root.child("prompt");
  for (std::uint64_t attempt = 0;; ++attempt) {
    try {
      seq.prompt = generate_prompt(seq, kind, prompt_root.child(attempt));
      break;
    } catch (const GenError&) {
      if (attempt >= 31) throw;
    }
  }
  return seq;
}

inline PromptSpec generate_prompt(const Sequence& seq, PromptKind kind, Rng rng) {
  const auto& frames = seq.frames;
  if (frames.empty()) throw GenError("empty sequence");
  const auto& last_objs = frames.back().objects;

  auto finish = [&](Predicate pred, const std::string& text) {
    std::set<int> ids = pred.evaluate(frames);
    if (ids.empty()) throw GenError("no object satisfies: " + text);
    PromptSpec p;
    p.kind = kind;
    p.predicate = pred;
    p.target_ids = std::move(ids);
    p.text = text;
    p.tokens = tokenize(text);
    return p;
  };

  std::string verb = rng.uniform() < 0.5 ? "follow" : "track";

  switch (kind) {
    case PromptKind::appearance: {
      std::vector<const ObjectState*> colored;
      for (const auto& o : last_objs)
        if (o.color != Color::none) colored.push_back(&o);
      if (colored.empty()) throw GenError("no colored object for appearance prompt");
      const ObjectState* pick = colored[rng.uniform_int(colored.size())];
      Predicate pred;
      pred.kind = Predicate::Kind::color_class;
      pred.cls = pick->cls;
      pred.color = pick->color;
      return finish(pred, verb + " the " + to_string(pick->color) + " " +
                              to_string(pick->cls));
    }
    case PromptKind::spatial: {
      const ObjectState& pick = last_objs[rng.uniform_int(last_objs.size())];
      bool lateral = rng.uniform() < 0.5;
      Predicate pred;
      pred.cls = pick.cls;
      if (lateral) {
        pred.kind = Predicate::Kind::side_class;
        pred.side = pick.y >= 0 ? 1 : -1;
        return finish(pred, verb + " the " + std::string(to_string(pick.cls)) +
                                " on the " + (pred.side > 0 ? "left" : "right"));
      }
      pred.kind = Predicate::Kind::front_class;
      pred.side = pick.x >= 0 ? 1 : -1;
      return finish(pred, verb + " the " + std::string(to_string(pick.cls)) +
                              " " + (pred.side > 0 ? "ahead" : "behind"));
    }
    case PromptKind::temporal: {
      struct Option {
        Predicate::Kind kind;
        std::string phrase;
      };
      static const Option options[] = {
          {Predicate::Kind::stopped, "stopped"},
          {Predicate::Kind::accelerated, "accelerated"},
          {Predicate::Kind::turned_left, "turned left"},
          {Predicate::Kind::turned_right, "turned right"},
          {Predicate::Kind::crossed, "crossed"},
      };
      // collect (class, predicate) combinations that hold
      std::vector<std::pair<Predicate, std::string>> satisfied;
      for (const auto& opt : options) {
        for (const auto& o : last_objs) {
          Predicate pred;
          pred.kind = opt.kind;
          pred.cls = o.cls;
          if (pred.holds_for(o.id, frames)) {
            satisfied.emplace_back(pred, verb + " the " +
                                             std::string(to_string(o.cls)) +
                                             " that just " + opt.phrase);
            break;  // one entry per (kind, class) is enough
          }
        }
      }
      if (satisfied.empty()) throw GenError("no object satisfies a temporal template");
      auto& pick = satisfied[rng.uniform_int(satisfied.size())];
      return finish(pick.first, pick.second);
    }
  }
  throw GenError("unknown prompt kind");
}

}  // namespace trackteller::scenekit
