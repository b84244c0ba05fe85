#pragma once

// On-disk run artifacts.
//
//   iterations.jsonl  one object per iteration:
//       {"iteration", "epoch", ["G", "r", "epsilon", "delta", "mode"]  (pair topology only),
//        "pairs": [{"pair": "teacher/student", "iteration", "G", "r", "epsilon", "delta", "mode"}],
//        "losses": {"<network>": {"ce", "kl", "total", "updated"}}}
//   epochs.csv        epoch,network,role,train_accuracy,test_accuracy
//   timeline CSV      iteration,mode,G,delta,epsilon  then "# key,value" summary lines
//   manifest.json     config snapshot, dataset descriptor, version, timestamps, artifact list

#include <algorithm>
#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "switokd/config.hpp"
#include "switokd/error.hpp"
#include "switokd/gap.hpp"
#include "switokd/trainer.hpp"

namespace switokd {

inline constexpr const char* kCodeVersion = "switokd 0.1.0";
inline constexpr const char* kIterationsFile = "iterations.jsonl";
inline constexpr const char* kEpochsFile = "epochs.csv";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kConfigSnapshotFile = "config.txt";

using ojson = nlohmann::ordered_json;

inline ojson gap_state_json(const GapState& s) {
  return ojson{{"iteration", s.iteration}, {"G", s.gap},         {"r", s.r},
               {"epsilon", s.epsilon},     {"delta", s.delta},   {"mode", to_string(s.mode)}};
}

inline ojson step_json(const StepRecord& rec, const std::vector<Member>& members,
                       const std::vector<ModeTimeline>& timelines) {
  ojson j;
  j["iteration"] = rec.iteration;
  j["epoch"] = rec.epoch;
  if (rec.pairs.size() == 1) {
    const auto& s = rec.pairs.front();
    j["G"] = s.gap;
    j["r"] = s.r;
    j["epsilon"] = s.epsilon;
    j["delta"] = s.delta;
    j["mode"] = to_string(s.mode);
  }
  ojson pairs = ojson::array();
  for (std::size_t p = 0; p < rec.pairs.size(); ++p) {
    ojson e{{"pair", timelines[p].name}};
    e.update(gap_state_json(rec.pairs[p]));
    pairs.push_back(std::move(e));
  }
  j["pairs"] = std::move(pairs);
  ojson losses = ojson::object();
  for (std::size_t m = 0; m < members.size(); ++m) {
    const auto& l = rec.losses[m];
    losses[members[m].name] =
        ojson{{"ce", l.ce}, {"kl", l.kl}, {"total", l.total}, {"updated", l.updated}};
  }
  j["losses"] = std::move(losses);
  return j;
}

// --- epoch CSV ---------------------------------------------------------------

inline constexpr const char* kEpochCsvHeader = "epoch,network,role,train_accuracy,test_accuracy";

inline void write_epoch_row(std::ostream& out, const EpochRecord& r) {
  out << r.epoch << ',' << r.network << ',' << to_string(r.role) << ','
      << format_number(r.train_accuracy) << ',' << format_number(r.test_accuracy) << '\n';
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double csv_double(const std::string& s, const std::string& origin, std::size_t line) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw FormatError(origin + ":" + std::to_string(line) + ": bad number '" + s + "'", line);
  return v;
}

inline std::size_t csv_size(const std::string& s, const std::string& origin, std::size_t line) {
  std::size_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw FormatError(origin + ":" + std::to_string(line) + ": bad integer '" + s + "'", line);
  return v;
}

} // namespace detail

inline std::vector<EpochRecord> read_epoch_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != kEpochCsvHeader)
    throw FormatError(path.string() + ":1: unexpected header", 1);
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != 5)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 5 columns",
                        lineno);
    if (cells[2] != "teacher" && cells[2] != "student")
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad role", lineno);
    out.push_back({detail::csv_size(cells[0], path.string(), lineno), cells[1],
                   cells[2] == "teacher" ? Role::teacher : Role::student,
                   detail::csv_double(cells[3], path.string(), lineno),
                   detail::csv_double(cells[4], path.string(), lineno)});
  }
  return out;
}

// --- iteration log -----------------------------------------------------------

/// Gap states of one pair from an iteration log. Pair-topology logs carry the
/// state at top level; multi-network logs are read from "pairs"[pair].
inline std::vector<GapState> read_timeline(const std::filesystem::path& path, std::size_t pair = 0,
                                           std::string* pair_name = nullptr) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  std::vector<GapState> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    try {
      const auto j = nlohmann::json::parse(line);
      GapState s;
      if (j.contains("pairs")) {
        const auto& pairs = j.at("pairs");
        if (pair >= pairs.size())
          throw FormatError(where + ": no pair " + std::to_string(pair), lineno);
        from_json(pairs.at(pair), s);
        if (pair_name) *pair_name = pairs.at(pair).value("pair", "");
      } else {
        if (pair != 0) throw FormatError(where + ": no pair " + std::to_string(pair), lineno);
        from_json(j, s);
      }
      if (!out.empty() && s.iteration <= out.back().iteration)
        throw FormatError(where + ": iterations not strictly increasing", lineno);
      out.push_back(s);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what(), lineno);
    } catch (const DomainError& e) {
      throw FormatError(where + ": " + e.what(), lineno);
    }
  }
  if (out.empty()) throw FormatError(path.string() + ": no iterations", 0);
  return out;
}

/// Pair names ("teacher/student") in the first record of an iteration log.
inline std::vector<std::string> read_pair_names(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::string line;
  if (!in || !std::getline(in, line)) throw FormatError("cannot read " + path.string(), 0);
  try {
    std::vector<std::string> out;
    for (const auto& p : nlohmann::json::parse(line).at("pairs")) out.push_back(p.at("pair"));
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ":1: " + e.what(), 1);
  }
}

struct TimelineSummary {
  std::size_t iterations = 0;
  std::size_t learning = 0;
  std::size_t expert = 0;
  std::size_t switch_count = 0;

  double learning_fraction() const {
    return iterations ? static_cast<double>(learning) / static_cast<double>(iterations) : 0.0;
  }
  double expert_fraction() const {
    return iterations ? static_cast<double>(expert) / static_cast<double>(iterations) : 0.0;
  }
};

inline TimelineSummary summarize(const std::vector<GapState>& states) {
  ModeTimeline t{"", states};
  return {states.size(), t.count(Mode::learning), t.count(Mode::expert), t.switch_count()};
}

inline void write_timeline_csv(std::ostream& out, const std::vector<GapState>& states) {
  out << "iteration,mode,G,delta,epsilon\n";
  for (const auto& s : states)
    out << s.iteration << ',' << to_string(s.mode) << ',' << format_number(s.gap) << ','
        << format_number(s.delta) << ',' << format_number(s.epsilon) << '\n';
  const auto sum = summarize(states);
  out << "# iterations," << sum.iterations << '\n'
      << "# switch_count," << sum.switch_count << '\n'
      << "# learning_fraction," << format_number(sum.learning_fraction()) << '\n'
      << "# expert_fraction," << format_number(sum.expert_fraction()) << '\n';
}

struct TimelineCsv {
  std::vector<GapState> states;  // iteration, mode, G, delta, epsilon filled
  std::map<std::string, double> summary;
};

inline TimelineCsv read_timeline_csv(std::istream& in, const std::string& origin = "timeline") {
  TimelineCsv out;
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != "iteration,mode,G,delta,epsilon")
    throw FormatError(origin + ":1: unexpected header", 1);
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.front() == '#') {
      const auto cells = detail::split_csv(trim(line.substr(1)));
      if (cells.size() != 2) throw FormatError(origin + ":" + std::to_string(lineno) + ": bad summary line", lineno);
      out.summary[cells[0]] = detail::csv_double(cells[1], origin, lineno);
      continue;
    }
    const auto cells = detail::split_csv(line);
    if (cells.size() != 5)
      throw FormatError(origin + ":" + std::to_string(lineno) + ": expected 5 columns", lineno);
    GapState s;
    s.iteration = detail::csv_size(cells[0], origin, lineno);
    try {
      s.mode = parse_mode(cells[1]);
    } catch (const DomainError& e) {
      throw FormatError(origin + ":" + std::to_string(lineno) + ": " + e.what(), lineno);
    }
    s.gap = detail::csv_double(cells[2], origin, lineno);
    s.delta = detail::csv_double(cells[3], origin, lineno);
    s.epsilon = detail::csv_double(cells[4], origin, lineno);
    out.states.push_back(s);
  }
  return out;
}

// --- manifest ----------------------------------------------------------------

struct RunManifest {
  KeyValues config;
  KeyValues dataset;
  std::string code_version = kCodeVersion;
  std::string started;
  std::string finished;
  std::string status = "ok";  // ok | aborted
  std::vector<std::string> artifacts;  // paths relative to the run directory
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

inline ojson manifest_json(const RunManifest& m) {
  return ojson{{"code_version", m.code_version}, {"started", m.started},
               {"finished", m.finished},         {"status", m.status},
               {"config", m.config},             {"dataset", m.dataset},
               {"artifacts", m.artifacts}};
}

inline RunManifest read_manifest(const std::filesystem::path& run_dir) {
  const auto path = run_dir / kManifestFile;
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  try {
    const auto j = nlohmann::json::parse(in);
    RunManifest m;
    m.config = j.at("config").get<KeyValues>();
    m.dataset = j.at("dataset").get<KeyValues>();
    m.code_version = j.at("code_version").get<std::string>();
    m.started = j.at("started").get<std::string>();
    m.finished = j.at("finished").get<std::string>();
    m.status = j.at("status").get<std::string>();
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what(), 0);
  }
}

} // namespace switokd
