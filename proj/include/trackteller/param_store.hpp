#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "trackteller/errors.hpp"
#include "trackteller/rng.hpp"
#include "trackteller/tensor.hpp"

namespace trackteller::numcore {

using GradMap = std::map<std::string, std::vector<double>>;

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named map of trainable tensors with deterministic (lexicographic)
// iteration order. Also owns the Adam side-table so optimizer state
// travels with the parameters through save/load.
class ParamStore {
 public:
  // Declares a parameter initialized uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
  // The draw stream is keyed by name, so values do not depend on
  // declaration order. fan_in defaults to the last dimension.
  Tensor& declare(const std::string& name, Shape shape, const Rng& rng,
                  std::size_t fan_in = 0) {
    if (fan_in == 0) fan_in = shape.empty() ? 1 : shape.back();
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Rng stream = rng.child(name);
    std::vector<double> v(numel(shape));
    for (auto& e : v) e = stream.uniform(-bound, bound);
    return declare_raw(name, std::move(shape), std::move(v));
  }

  Tensor& declare_zeros(const std::string& name, Shape shape) {
    return declare_raw(name, std::move(shape),
                       std::vector<double>(numel(shape), 0.0));
  }

  Tensor& declare_raw(const std::string& name, Shape shape,
                      std::vector<double> values) {
    if (params_.count(name)) throw ParamError(name, "already registered");
    if (name.rfind("__", 0) == 0) throw ParamError(name, "reserved prefix");
    auto [it, ok] =
        params_.emplace(name, Tensor::from(std::move(shape), std::move(values),
                                           /*requires_grad=*/true));
    (void)ok;
    return it->second;
  }

  Tensor& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ParamError(name, "not registered");
    return it->second;
  }
  const Tensor& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ParamError(name, "not registered");
    return it->second;
  }

  bool has(const std::string& name) const { return params_.count(name) > 0; }
  std::size_t count() const { return params_.size(); }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& [k, t] : params_) n += t.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& [k, t] : params_) t.zero_grad();
  }

  // Applies one Adam update with bias correction. Every parameter must
  // have an entry in grads.
  void step_adam(const GradMap& grads, const AdamConfig& cfg) {
    ++adam_step_;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam_step_));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam_step_));
    for (auto& [name, t] : params_) {
      auto git = grads.find(name);
      if (git == grads.end()) throw ParamError(name, "missing gradient");
      const auto& g = git->second;
      if (g.size() != t.size()) throw ParamError(name, "gradient size mismatch");
      auto& slot = adam_[name];
      if (slot.m.size() != t.size()) {
        slot.m.assign(t.size(), 0.0);
        slot.v.assign(t.size(), 0.0);
      }
      auto& w = t.mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g[i];
        slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        double mhat = slot.m[i] / bc1;
        double vhat = slot.v[i] / bc2;
        w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      }
    }
  }

  std::int64_t adam_step() const { return adam_step_; }

  // -------------------------------------------------------------------------
  // Flat binary format: magic "TTPS", version u32, entry count u64, then
  // per entry: name length u32 + UTF-8 name + rank u32 + dims u64 each +
  // little-endian f64 payload. Adam state is stored as reserved
  // "__adam_..." entries in the same container.

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    serialize(f, /*with_adam=*/true);
    if (!f) throw IoError("write failed: " + path);
  }

  void serialize(std::ostream& f, bool with_adam) const {
    write_bytes(f, "TTPS", 4);
    write_u32(f, 1);
    std::uint64_t n = params_.size();
    if (with_adam) n += 2 * adam_.size() + 1;
    write_u64(f, n);
    for (const auto& [name, t] : params_) write_entry(f, name, t.shape(), t.data());
    if (with_adam) {
      for (const auto& [name, slot] : adam_) {
        write_entry(f, "__adam_m__" + name, {slot.m.size()}, slot.m);
        write_entry(f, "__adam_v__" + name, {slot.v.size()}, slot.v);
      }
      write_entry(f, "__adam_step__", {1},
                  {static_cast<double>(adam_step_)});
    }
  }

  static ParamStore load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    return deserialize(f, path);
  }

  static ParamStore deserialize(std::istream& f, const std::string& ctx) {
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "TTPS", 4) != 0)
      throw IoError("bad magic in " + ctx);
    std::uint32_t version = read_u32(f);
    if (version != 1)
      throw IoError("unsupported version " + std::to_string(version) + " in " + ctx);
    std::uint64_t n = read_u64(f);
    ParamStore ps;
    for (std::uint64_t e = 0; e < n; ++e) {
      std::uint32_t name_len = read_u32(f);
      std::string name(name_len, '\0');
      f.read(name.data(), name_len);
      std::uint32_t rank = read_u32(f);
      Shape shape(rank);
      for (auto& d : shape) d = read_u64(f);
      std::vector<double> data(numel(shape));
      for (auto& x : data) x = read_f64(f);
      if (!f) throw IoError("truncated entry '" + name + "' in " + ctx);
      if (name == "__adam_step__") {
        ps.adam_step_ = static_cast<std::int64_t>(data.at(0));
      } else if (name.rfind("__adam_m__", 0) == 0) {
        ps.adam_[name.substr(10)].m = std::move(data);
      } else if (name.rfind("__adam_v__", 0) == 0) {
        ps.adam_[name.substr(10)].v = std::move(data);
      } else {
        ps.params_.emplace(name, Tensor::from(std::move(shape), std::move(data),
                                              /*requires_grad=*/true));
      }
    }
    return ps;
  }

  // FNV-1a over the serialized parameter payload (optimizer state
  // excluded); stable content id for run manifests.
  std::string content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ull;
      }
    };
    for (const auto& [name, t] : params_) {
      mix(name.data(), name.size());
      for (auto d : t.shape()) mix(&d, sizeof d);
      for (double x : t.data()) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, 8);
        mix(&bits, 8);
      }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

 private:
  struct AdamSlot {
    std::vector<double> m, v;
  };

  static void write_bytes(std::ostream& f, const char* p, std::size_t n) {
    f.write(p, static_cast<std::streamsize>(n));
  }
  static void write_u32(std::ostream& f, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    f.write(b, 4);
  }
  static void write_u64(std::ostream& f, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    f.write(b, 8);
  }
  static void write_f64(std::ostream& f, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    write_u64(f, v);
  }
  static void write_entry(std::ostream& f, const std::string& name,
                          const Shape& shape, const std::vector<double>& data) {
    write_u32(f, static_cast<std::uint32_t>(name.size()));
    write_bytes(f, name.data(), name.size());
    write_u32(f, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) write_u64(f, d);
    for (double x : data) write_f64(f, x);
  }
  static std::uint32_t read_u32(std::istream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  static std::uint64_t read_u64(std::istream& f) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  static double read_f64(std::istream& f) {
    std::uint64_t v = read_u64(f);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }

  std::map<std::string, Tensor> params_;
  std::map<std::string, AdamSlot> adam_;
  std::int64_t adam_step_ = 0;
};

// Runs reverse-mode accumulation and returns a copy of every registered
// parameter's gradient (zeros for parameters the loss does not reach).
inline GradMap backward(const Tensor& loss, ParamStore& ps) {
  ps.zero_grad();
  backward(loss);
  GradMap out;
  for (auto& [name, t] : ps) {
    if (t.grad().empty())
      out.emplace(name, std::vector<double>(t.size(), 0.0));
    else
      out.emplace(name, t.grad());
  }
  return out;
}

}  // namespace trackteller::numcore
