#pragma once

// Run configuration. On disk it is a flat `key = value` file with dotted keys
// and `#` comments; command-line overrides use the same keys.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "switokd/error.hpp"
#include "switokd/nn.hpp"
#include "switokd/optimizer.hpp"

namespace switokd {

enum class Strategy { vanilla, kd_offline, dml, kdcl, switokd };
enum class Topology { pair, one_teacher_two_students, two_teachers_one_student };
enum class Role { teacher, student };
/// Test and ablation hook: replaces the adaptive decision in switokd runs.
enum class ModeOverride { automatic, learning, expert, alternate };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::vanilla: return "vanilla";
    case Strategy::kd_offline: return "kd-offline";
    case Strategy::dml: return "dml";
    case Strategy::kdcl: return "kdcl";
    case Strategy::switokd: return "switokd";
  }
  return "?";
}

inline std::string to_string(Topology t) {
  switch (t) {
    case Topology::pair: return "pair";
    case Topology::one_teacher_two_students: return "1t2s";
    case Topology::two_teachers_one_student: return "2t1s";
  }
  return "?";
}

inline std::string to_string(Role r) { return r == Role::teacher ? "teacher" : "student"; }

inline std::string to_string(ModeOverride m) {
  switch (m) {
    case ModeOverride::automatic: return "auto";
    case ModeOverride::learning: return "learning";
    case ModeOverride::expert: return "expert";
    case ModeOverride::alternate: return "alternate";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  for (auto v : {Strategy::vanilla, Strategy::kd_offline, Strategy::dml, Strategy::kdcl,
                 Strategy::switokd})
    if (s == to_string(v)) return v;
  throw ConfigError("strategy", "unknown strategy '" + std::string(s) +
                                    "' (vanilla, kd-offline, dml, kdcl, switokd)");
}

inline Topology parse_topology(std::string_view s) {
  for (auto v : {Topology::pair, Topology::one_teacher_two_students,
                 Topology::two_teachers_one_student})
    if (s == to_string(v)) return v;
  throw ConfigError("topology", "unknown topology '" + std::string(s) + "' (pair, 1t2s, 2t1s)");
}

inline ModeOverride parse_mode_override(std::string_view s) {
  for (auto v : {ModeOverride::automatic, ModeOverride::learning, ModeOverride::expert,
                 ModeOverride::alternate})
    if (s == to_string(v)) return v;
  throw ConfigError("mode_override",
                    "unknown value '" + std::string(s) + "' (auto, learning, expert, alternate)");
}

struct NetworkConfig {
  std::string name;
  Role role = Role::student;
  std::vector<std::size_t> hidden;
  std::vector<Network::ConvLayer> conv;
  OptimizerSettings optimizer;
  std::optional<std::uint64_t> init_seed;
  std::filesystem::path checkpoint;  // pre-trained weights (kd-offline teacher)
};

struct DataConfig {
  std::string source = "blobs";  // blobs | idx | cifar10 | cifar100
  std::size_t classes = 4;
  std::size_t per_class = 100;                  // samples per class, train + test
  std::optional<std::size_t> test_per_class;    // default per_class / 5
  std::size_t dims = 16;
  double spread = 0.5;
  std::optional<std::uint64_t> seed;  // defaults to the run seed
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::vector<std::filesystem::path> train_files;
  std::filesystem::path test_file;
  bool augment = false;  // flip/crop, image data only
  std::size_t limit = 0; // keep only the first N samples of each split when > 0
};

struct TrainConfig {
  Strategy strategy = Strategy::switokd;
  Topology topology = Topology::pair;
  double alpha = 1.0;
  double beta = 1.0;
  double tau = 1.0;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::vector<std::size_t> milestones;  // epochs at which every learning rate is multiplied by gamma
  double lr_gamma = 0.1;
  ModeOverride mode_override = ModeOverride::automatic;
  DataConfig data;
  NetworkConfig teacher{"teacher", Role::teacher, {64, 64}, {}, {}, {}, {}};
  NetworkConfig student{"student", Role::student, {16}, {}, {}, {}, {}};
  std::optional<NetworkConfig> teacher2;  // 2t1s; defaults to a copy of `teacher`
  std::optional<NetworkConfig> student2;  // 1t2s; defaults to a copy of `student`

  /// Networks taking part in this topology, in member order.
  std::vector<NetworkConfig> networks() const {
    const auto second = [](const std::optional<NetworkConfig>& n, const NetworkConfig& base,
                           const char* name) {
      NetworkConfig c = n.value_or(base);
      c.name = name;
      c.role = base.role;
      if (!n) c.init_seed.reset();
      return c;
    };
    switch (topology) {
      case Topology::pair: return {teacher, student};
      case Topology::one_teacher_two_students:
        return {teacher, student, second(student2, student, "student2")};
      case Topology::two_teachers_one_student:
        return {teacher, second(teacher2, teacher, "teacher2"), student};
    }
    return {};
  }

  void validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("alpha", "must be non-negative");
    if (!(beta >= 0.0)) throw ConfigError("beta", "must be non-negative");
    if (!(tau > 0.0)) throw ConfigError("tau", "must be positive");
    if (epochs < 1) throw ConfigError("epochs", "must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size", "must be at least 1");
    if (!(lr_gamma > 0.0)) throw ConfigError("schedule.gamma", "must be positive");
    if (topology != Topology::pair && strategy != Strategy::switokd)
      throw ConfigError("topology", to_string(topology) + " requires strategy = switokd");
    if (strategy == Strategy::kd_offline) {
      if (alpha > 1.0) throw ConfigError("alpha", "kd-offline weights CE by alpha and KL by 1 - alpha, so alpha must be in [0, 1]");
      if (teacher.checkpoint.empty())
        throw ConfigError("teacher.checkpoint", "kd-offline needs a pre-trained teacher checkpoint");
    }
    if (mode_override != ModeOverride::automatic && strategy != Strategy::switokd)
      throw ConfigError("mode_override", "only applies to strategy = switokd");
    for (const auto& n : networks()) {
      const auto& o = n.optimizer;
      if (!(o.learning_rate >= 0.0)) throw ConfigError(n.name + ".lr", "must be non-negative");
      if (!(o.momentum >= 0.0 && o.momentum < 1.0))
        throw ConfigError(n.name + ".momentum", "must lie in [0, 1)");
      if (!(o.weight_decay >= 0.0)) throw ConfigError(n.name + ".weight_decay", "must be non-negative");
      for (std::size_t h : n.hidden)
        if (h == 0) throw ConfigError(n.name + ".hidden", "layer widths must be positive");
      for (const auto& c : n.conv)
        if (c.channels == 0 || c.kernel == 0 || c.stride == 0)
          throw ConfigError(n.name + ".conv", "channels, kernel and stride must be positive");
    }
    if (data.source == "blobs") {
      if (data.classes < 2) throw ConfigError("data.classes", "must be at least 2");
      if (data.per_class < 1) throw ConfigError("data.per_class", "must be at least 1");
      if (data.test_per_class && *data.test_per_class >= data.per_class)
        throw ConfigError("data.test_per_class", "must be smaller than data.per_class");
      if (data.dims < 1 || data.classes > 2 * data.dims)
        throw ConfigError("data.classes", "blobs support at most 2 * data.dims classes");
      if (!(data.spread >= 0.0)) throw ConfigError("data.spread", "must be non-negative");
    } else if (data.source == "idx") {
      if (data.train_images.empty() || data.train_labels.empty() || data.test_images.empty() ||
          data.test_labels.empty())
        throw ConfigError("data.train_images", "idx source needs train/test image and label paths");
    } else if (data.source == "cifar10" || data.source == "cifar100") {
      if (data.train_files.empty() || data.test_file.empty())
        throw ConfigError("data.train_files", "cifar source needs data.train_files and data.test_file");
    } else {
      throw ConfigError("data.source", "unknown source '" + data.source + "' (blobs, idx, cifar10, cifar100)");
    }
  }
};

// --- key/value text format -------------------------------------------------

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline KeyValues parse_key_values(std::istream& in, const std::string& origin = "config") {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw FormatError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'", lineno);
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty())
      throw FormatError(origin + ":" + std::to_string(lineno) + ": empty key", lineno);
    kv[key] = trim(std::string_view(body).substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path.string());
  return parse_key_values(in, path.string());
}

/// Parses `key=value` override strings onto `kv`.
inline void apply_overrides(KeyValues& kv, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError(o, "override must look like key=value");
    kv[trim(std::string_view(o).substr(0, eq))] = trim(std::string_view(o).substr(eq + 1));
  }
}

inline std::string format_number(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError(key, "expected a number, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split(v, ',')) out.push_back(parse_uint(key, item));
  return out;
}

template <class T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + f(items[i]);
  return out;
}

inline OptimizerKind parse_optimizer(const std::string& key, const std::string& v) {
  if (v == "sgd") return OptimizerKind::sgd;
  if (v == "adam") return OptimizerKind::adam;
  throw ConfigError(key, "unknown optimizer '" + v + "' (sgd, adam)");
}

// conv spec "channels:kernel:stride", comma separated
inline std::vector<Network::ConvLayer> parse_conv(const std::string& key, const std::string& v) {
  std::vector<Network::ConvLayer> out;
  for (const auto& item : split(v, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() != 3) throw ConfigError(key, "conv layers look like channels:kernel:stride");
    out.push_back({parse_uint(key, parts[0]), parse_uint(key, parts[1]), parse_uint(key, parts[2])});
  }
  return out;
}

inline bool apply_network_key(NetworkConfig& n, const std::string& field, const std::string& key,
                              const std::string& v) {
  if (field == "hidden") n.hidden = parse_sizes(key, v);
  else if (field == "conv") n.conv = parse_conv(key, v);
  else if (field == "optimizer") n.optimizer.kind = parse_optimizer(key, v);
  else if (field == "lr") n.optimizer.learning_rate = parse_double(key, v);
  else if (field == "momentum") n.optimizer.momentum = parse_double(key, v);
  else if (field == "weight_decay") n.optimizer.weight_decay = parse_double(key, v);
  else if (field == "init_seed") n.init_seed = parse_uint(key, v);
  else if (field == "checkpoint") n.checkpoint = v;
  else return false;
  return true;
}

} // namespace detail

/// Builds and validates a config. Unknown keys are rejected by name.
inline TrainConfig config_from_key_values(const KeyValues& kv) {
  using namespace detail;
  TrainConfig c;
  // Shared optimizer defaults first, so per-network keys override them.
  OptimizerSettings shared;
  for (const auto& [key, v] : kv) {
    if (key == "optimizer") shared.kind = parse_optimizer(key, v);
    else if (key == "lr") shared.learning_rate = parse_double(key, v);
    else if (key == "momentum") shared.momentum = parse_double(key, v);
    else if (key == "weight_decay") shared.weight_decay = parse_double(key, v);
  }
  c.teacher.optimizer = c.student.optimizer = shared;
  bool has_teacher2 = false, has_student2 = false;

  for (const auto& [key, v] : kv) {
    if (key == "optimizer" || key == "lr" || key == "momentum" || key == "weight_decay") continue;
    if (key == "strategy") c.strategy = parse_strategy(v);
    else if (key == "topology") c.topology = parse_topology(v);
    else if (key == "alpha") c.alpha = parse_double(key, v);
    else if (key == "beta") c.beta = parse_double(key, v);
    else if (key == "tau") c.tau = parse_double(key, v);
    else if (key == "epochs") c.epochs = parse_uint(key, v);
    else if (key == "batch_size") c.batch_size = parse_uint(key, v);
    else if (key == "seed") c.seed = parse_uint(key, v);
    else if (key == "mode_override") c.mode_override = parse_mode_override(v);
    else if (key == "schedule.milestones") c.milestones = parse_sizes(key, v);
    else if (key == "schedule.gamma") c.lr_gamma = parse_double(key, v);
    else if (key == "data.source") c.data.source = v;
    else if (key == "data.classes") c.data.classes = parse_uint(key, v);
    else if (key == "data.per_class") c.data.per_class = parse_uint(key, v);
    else if (key == "data.test_per_class") c.data.test_per_class = parse_uint(key, v);
    else if (key == "data.dims") c.data.dims = parse_uint(key, v);
    else if (key == "data.spread") c.data.spread = parse_double(key, v);
    else if (key == "data.seed") c.data.seed = parse_uint(key, v);
    else if (key == "data.train_images") c.data.train_images = v;
    else if (key == "data.train_labels") c.data.train_labels = v;
    else if (key == "data.test_images") c.data.test_images = v;
    else if (key == "data.test_labels") c.data.test_labels = v;
    else if (key == "data.train_files") {
      c.data.train_files.clear();
      for (const auto& f : split(v, ',')) c.data.train_files.emplace_back(f);
    } else if (key == "data.test_file") c.data.test_file = v;
    else if (key == "data.augment") c.data.augment = parse_bool(key, v);
    else if (key == "data.limit") c.data.limit = parse_uint(key, v);
    else {
      const auto dot = key.find('.');
      const std::string prefix = key.substr(0, dot);
      const std::string field = dot == std::string::npos ? "" : key.substr(dot + 1);
      NetworkConfig scratch;  // second networks are assembled after the primaries
      bool ok = false;
      if (prefix == "teacher") ok = apply_network_key(c.teacher, field, key, v);
      else if (prefix == "student") ok = apply_network_key(c.student, field, key, v);
      else if (prefix == "teacher2") ok = has_teacher2 = apply_network_key(scratch, field, key, v);
      else if (prefix == "student2") ok = has_student2 = apply_network_key(scratch, field, key, v);
      if (!ok) throw ConfigError(key, "unknown configuration key");
    }
  }
  // Second networks inherit every unset field from their primary counterpart.
  const auto derive = [&kv](const NetworkConfig& base, const std::string& prefix) {
    NetworkConfig n = base;
    n.init_seed.reset();
    for (const auto& [key, v] : kv)
      if (key.rfind(prefix + ".", 0) == 0)
        apply_network_key(n, key.substr(prefix.size() + 1), key, v);
    n.name = prefix;
    return n;
  };
  if (has_teacher2) c.teacher2 = derive(c.teacher, "teacher2");
  if (has_student2) c.student2 = derive(c.student, "student2");
  c.validate();
  return c;
}

/// Dataset descriptor: the data.* keys, with the data seed resolved.
inline KeyValues data_key_values(const TrainConfig& c) {
  const auto& d = c.data;
  KeyValues kv;
  kv["data.source"] = d.source;
  kv["data.augment"] = d.augment ? "true" : "false";
  kv["data.limit"] = std::to_string(d.limit);
  if (d.source == "blobs") {
    kv["data.classes"] = std::to_string(d.classes);
    kv["data.per_class"] = std::to_string(d.per_class);
    kv["data.test_per_class"] = std::to_string(d.test_per_class.value_or(d.per_class / 5));
    kv["data.dims"] = std::to_string(d.dims);
    kv["data.spread"] = format_number(d.spread);
    kv["data.seed"] = std::to_string(d.seed.value_or(c.seed));
  } else if (d.source == "idx") {
    kv["data.train_images"] = d.train_images.string();
    kv["data.train_labels"] = d.train_labels.string();
    kv["data.test_images"] = d.test_images.string();
    kv["data.test_labels"] = d.test_labels.string();
  } else {
    std::string files;
    for (const auto& f : d.train_files) files += (files.empty() ? "" : ",") + f.string();
    kv["data.train_files"] = files;
    kv["data.test_file"] = d.test_file.string();
  }
  return kv;
}

namespace detail {
inline void network_to_key_values(KeyValues& kv, const NetworkConfig& n, const std::string& p) {
  kv[p + ".hidden"] = join<std::size_t>(n.hidden, [](const std::size_t& h) { return std::to_string(h); });
  if (!n.conv.empty())
    kv[p + ".conv"] = join<Network::ConvLayer>(n.conv, [](const Network::ConvLayer& c) {
      return std::to_string(c.channels) + ":" + std::to_string(c.kernel) + ":" +
             std::to_string(c.stride);
    });
  kv[p + ".optimizer"] = to_string(n.optimizer.kind);
  kv[p + ".lr"] = format_number(n.optimizer.learning_rate);
  kv[p + ".momentum"] = format_number(n.optimizer.momentum);
  kv[p + ".weight_decay"] = format_number(n.optimizer.weight_decay);
  if (n.init_seed) kv[p + ".init_seed"] = std::to_string(*n.init_seed);
  if (!n.checkpoint.empty()) kv[p + ".checkpoint"] = n.checkpoint.string();
}
} // namespace detail

/// Every field written out explicitly; parsing the result gives back the same config.
inline KeyValues to_key_values(const TrainConfig& c) {
  using namespace detail;
  KeyValues kv;
  kv["strategy"] = to_string(c.strategy);
  kv["topology"] = to_string(c.topology);
  kv["alpha"] = format_number(c.alpha);
  kv["beta"] = format_number(c.beta);
  kv["tau"] = format_number(c.tau);
  kv["epochs"] = std::to_string(c.epochs);
  kv["batch_size"] = std::to_string(c.batch_size);
  kv["seed"] = std::to_string(c.seed);
  kv["mode_override"] = to_string(c.mode_override);
  kv["schedule.milestones"] =
      join<std::size_t>(c.milestones, [](const std::size_t& m) { return std::to_string(m); });
  kv["schedule.gamma"] = format_number(c.lr_gamma);
  for (const auto& [k, v] : data_key_values(c)) kv[k] = v;
  network_to_key_values(kv, c.teacher, "teacher");
  network_to_key_values(kv, c.student, "student");
  if (c.teacher2) network_to_key_values(kv, *c.teacher2, "teacher2");
  if (c.student2) network_to_key_values(kv, *c.student2, "student2");
  return kv;
}

inline void write_key_values(std::ostream& out, const KeyValues& kv) {
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

} // namespace switokd
