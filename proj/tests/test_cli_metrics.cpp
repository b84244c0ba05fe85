#include <gtest/gtest.h>

#include <sys/wait.h>

#include <map>

#include "support.hpp"

using namespace switokd;
using testing_support::read_text;
using testing_support::TempDir;
using testing_support::write_text;

namespace {

const char* kSmallConfig =
    "# three-class blobs, small networks\n"
    "strategy = dml\n"
    "epochs = 2\n"
    "batch_size = 16\n"
    "seed = 4\n"
    "data.classes = 3\n"
    "data.per_class = 30\n"
    "data.dims = 4\n"
    "data.spread = 0.5\n"
    "teacher.hidden = 8\n"
    "student.hidden = 4\n";

fs::path small_config(const TempDir& dir, const std::string& name = "small.txt",
                      const std::string& extra = "") {
  const auto p = dir / name;
  write_text(p, std::string(kSmallConfig) + extra);
  return p;
}

int train_run(const fs::path& config, const fs::path& out, const std::vector<std::string>& overrides = {}) {
  std::ostringstream o, e;
  const int code = cmd_train(config, overrides, out, o, e);
  EXPECT_EQ(code, kExitOk) << e.str();
  return code;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(SWITOKD_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[e.path().string()] = read_text(e.path());
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  t.header = detail::split_csv(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(detail::split_csv(line));
  return t;
}

// Independent recount straight from the JSONL: (iterations, learning, switches).
struct Recount {
  std::size_t iterations = 0, learning = 0, switches = 0;
};

Recount recount(const fs::path& jsonl, std::size_t pair = 0) {
  Recount r;
  std::ifstream in(jsonl);
  std::string line, prev;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    const std::string mode = j.at("pairs").at(pair).at("mode");
    ++r.iterations;
    r.learning += mode == "learning";
    r.switches += !prev.empty() && mode != prev;
    prev = mode;
  }
  return r;
}

void write_synthetic_log(const fs::path& p, const std::string& modes) {
  std::ofstream out(p);
  for (std::size_t i = 0; i < modes.size(); ++i)
    out << nlohmann::json{{"iteration", i}, {"G", 0.1 * static_cast<double>(i)}, {"r", 0.5},
                          {"epsilon", 0.6}, {"delta", 0.2}, {"mode", modes[i] == 'L' ? "learning" : "expert"}}
               .dump()
        << '\n';
}

} // namespace

TEST(Train, AllArtifactsExistAndParse) {
  TempDir dir("train");
  const auto run = dir / "run";
  ASSERT_EQ(train_run(small_config(dir), run), kExitOk);

  for (const char* f : {"config.txt", "epochs.csv", "iterations.jsonl", "manifest.json", "teacher.ckpt", "student.ckpt"})
    EXPECT_TRUE(fs::exists(run / f)) << f;

  const RunManifest m = read_manifest(run);
  EXPECT_EQ(m.status, "ok");
  EXPECT_EQ(m.code_version, kCodeVersion);
  EXPECT_FALSE(m.started.empty());
  EXPECT_FALSE(m.finished.empty());
  EXPECT_EQ(read_key_values(run / "config.txt"), m.config);
  EXPECT_EQ(m.dataset.at("data.per_class"), "30");
  EXPECT_EQ(config_from_key_values(m.config).strategy, Strategy::dml);

  const auto epochs = read_epoch_csv(run / "epochs.csv");
  ASSERT_EQ(epochs.size(), 4u);
  for (const auto& e : epochs) {
    EXPECT_GE(e.test_accuracy, 0.0);
    EXPECT_LE(e.test_accuracy, 1.0);
  }
  const auto states = read_timeline(run / "iterations.jsonl");
  EXPECT_EQ(states.size(), 2u * 5u);  // 72 training samples / 16 per batch
  std::ifstream in(run / "iterations.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"iteration", "epoch", "G", "r", "epsilon", "delta", "mode", "pairs", "losses"})
      EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_TRUE(j.at("losses").at("student").contains("kl"));
  }
  EXPECT_EQ(load_checkpoint(run / "student.ckpt").output_dim(), 3u);
}

TEST(Train, ManifestListsExactlyTheFilesOnDisk) {
  TempDir dir("manifest");
  const auto run = dir / "run";
  ASSERT_EQ(train_run(small_config(dir), run, {"strategy=switokd"}), kExitOk);
  std::vector<std::string> on_disk;
  for (const auto& e : fs::recursive_directory_iterator(run))
    if (e.is_regular_file()) on_disk.push_back(fs::relative(e.path(), run).generic_string());
  std::sort(on_disk.begin(), on_disk.end());
  auto listed = read_manifest(run).artifacts;
  listed.push_back(kManifestFile);
  std::sort(listed.begin(), listed.end());
  EXPECT_EQ(listed, on_disk);
}

TEST(Train, OverrideIsReflectedInManifest) {
  TempDir dir("override");
  ASSERT_EQ(train_run(small_config(dir), dir / "run", {"strategy=switokd", "tau=2"}), kExitOk);
  const auto m = read_manifest(dir / "run");
  EXPECT_EQ(m.config.at("strategy"), "switokd");
  EXPECT_EQ(m.config.at("tau"), "2");
}

TEST(Train, RerunIsByteIdentical) {
  TempDir dir("rerun");
  const auto cfg = small_config(dir);
  ASSERT_EQ(train_run(cfg, dir / "a", {"strategy=switokd"}), kExitOk);
  ASSERT_EQ(train_run(cfg, dir / "b", {"strategy=switokd"}), kExitOk);
  EXPECT_EQ(read_text(dir / "a/epochs.csv"), read_text(dir / "b/epochs.csv"));
  EXPECT_EQ(read_text(dir / "a/iterations.jsonl"), read_text(dir / "b/iterations.jsonl"));
}

TEST(Train, InvalidConfigExitsWithFieldMessage) {
  TempDir dir("invalid");
  std::ostringstream o, e;
  EXPECT_EQ(cmd_train(small_config(dir, "bad.txt", "tau = -1\n"), {}, dir / "run", o, e), kExitValidation);
  EXPECT_NE(e.str().find("tau"), std::string::npos) << e.str();
  EXPECT_FALSE(fs::exists(dir / "run"));

  std::ostringstream o2, e2;
  EXPECT_EQ(cmd_train(dir / "missing.txt", {}, dir / "run", o2, e2), kExitValidation);
  std::ostringstream o3, e3;
  EXPECT_EQ(cmd_train(small_config(dir), {"student.depth=3"}, dir / "run", o3, e3), kExitValidation);
  EXPECT_NE(e3.str().find("student.depth"), std::string::npos) << e3.str();
}

TEST(Train, AbortExitsWithIterationIndex) {
  TempDir dir("abort");
  std::ostringstream o, e;
  const int code = cmd_train(small_config(dir), {"optimizer=sgd", "momentum=0", "lr=1e300"}, dir / "run", o, e);
  EXPECT_EQ(code, kExitRuntime);
  EXPECT_NE(e.str().find("aborted at iteration"), std::string::npos) << e.str();
  const auto m = read_manifest(dir / "run");
  EXPECT_EQ(m.status, "aborted");
  for (const auto& a : m.artifacts) EXPECT_TRUE(fs::exists(dir / "run" / a)) << a;
}

TEST(Compare, RunAgainstItselfGivesIdenticalRows) {
  TempDir dir("self");
  ASSERT_EQ(train_run(small_config(dir), dir / "run", {"strategy=switokd"}), kExitOk);
  CompareOptions opts;
  opts.inputs = {dir / "run", dir / "run"};
  std::ostringstream out, err;
  ASSERT_EQ(cmd_compare(opts, out, err), kExitOk) << err.str();
  const auto t = parse_csv(out.str());
  EXPECT_EQ(t.header, detail::split_csv(kCompareHeader));
  ASSERT_EQ(t.rows.size(), 4u);
  for (std::size_t i = 0; i < 2; ++i)
    EXPECT_EQ(std::vector<std::string>(t.rows[i].begin() + 1, t.rows[i].end()),
              std::vector<std::string>(t.rows[i + 2].begin() + 1, t.rows[i + 2].end()));
}

TEST(Compare, VanillaVersusSwitokdSchema) {
  TempDir dir("schema");
  const auto cfg = small_config(dir);
  write_text(dir / "vanilla.txt", read_text(cfg) + "strategy = vanilla\n");
  write_text(dir / "switokd.txt", read_text(cfg) + "strategy = switokd\n");
  CompareOptions opts;
  opts.inputs = {dir / "vanilla.txt", dir / "switokd.txt"};
  opts.runs_dir = dir / "runs";
  std::ostringstream out, err;
  ASSERT_EQ(cmd_compare(opts, out, err), kExitOk) << err.str();
  const auto t = parse_csv(out.str());
  ASSERT_EQ(t.rows.size(), 4u);
  std::map<std::string, int> per_run;
  for (const auto& r : t.rows) {
    ASSERT_EQ(r.size(), 8u);
    ++per_run[r[0]];
    for (std::size_t c : {4u, 5u, 7u}) {
      const double v = std::stod(r[c]);
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_EQ(per_run["vanilla"], 2);
  EXPECT_EQ(per_run["switokd"], 2);
  EXPECT_TRUE(fs::exists(dir / "runs/switokd/manifest.json"));
}

TEST(Compare, ThreeStrategiesEqualManualJoin) {
  TempDir dir("join");
  const auto cfg = small_config(dir);
  for (const char* s : {"vanilla", "dml", "switokd"})
    ASSERT_EQ(train_run(cfg, dir / s, {std::string("strategy=") + s}), kExitOk);
  CompareOptions opts;
  opts.inputs = {dir / "vanilla", dir / "dml", dir / "switokd"};
  std::ostringstream out, err;
  ASSERT_EQ(cmd_compare(opts, out, err), kExitOk) << err.str();
  const auto t = parse_csv(out.str());
  ASSERT_EQ(t.rows.size(), 6u);

  for (const auto& row : t.rows) {
    const fs::path run = dir / row[0];
    // Manual join: last and best test accuracy of this network from the epoch CSV.
    const auto csv = parse_csv(read_text(run / "epochs.csv"));
    double last = -1, best = -1;
    for (const auto& r : csv.rows)
      if (r[1] == row[2]) last = std::stod(r[4]), best = std::max(best, std::stod(r[4]));
    EXPECT_DOUBLE_EQ(std::stod(row[4]), last);
    EXPECT_DOUBLE_EQ(std::stod(row[5]), best);
    EXPECT_EQ(row[1], row[0]);
    const auto rc = recount(run / "iterations.jsonl");
    EXPECT_EQ(std::stoul(row[6]), rc.switches);
    EXPECT_DOUBLE_EQ(std::stod(row[7]), static_cast<double>(rc.iterations - rc.learning) / static_cast<double>(rc.iterations));
  }
}

TEST(Compare, MismatchedDatasetsNeedExplicitOverride) {
  TempDir dir("mismatch");
  small_config(dir, "a.txt");
  small_config(dir, "b.txt", "data.spread = 0.9\n");
  small_config(dir, "c.txt", "seed = 5\ndata.seed = 4\n");
  CompareOptions opts;
  opts.inputs = {dir / "a.txt", dir / "b.txt"};
  opts.runs_dir = dir / "runs";
  std::ostringstream out, err;
  EXPECT_EQ(cmd_compare(opts, out, err), kExitValidation);
  EXPECT_NE(err.str().find("data"), std::string::npos) << err.str();
  EXPECT_FALSE(fs::exists(dir / "runs"));

  opts.inputs = {dir / "a.txt", dir / "c.txt"};
  std::ostringstream out2, err2;
  EXPECT_EQ(cmd_compare(opts, out2, err2), kExitValidation);
  EXPECT_NE(err2.str().find("seed"), std::string::npos) << err2.str();

  opts.allow_mismatch = true;
  opts.inputs = {dir / "a.txt", dir / "b.txt"};
  std::ostringstream out3, err3;
  EXPECT_EQ(cmd_compare(opts, out3, err3), kExitOk) << err3.str();
}

TEST(GradCheck, DefaultPassesAndFaultFails) {
  GradCheckOptions o;
  std::ostringstream out, err;
  EXPECT_EQ(cmd_grad_check(o, out, err), kExitOk) << out.str();
  EXPECT_NE(out.str().find("PASS"), std::string::npos);

  o.inject_fault = true;
  std::ostringstream out2, err2;
  EXPECT_EQ(cmd_grad_check(o, out2, err2), kExitValidation);
  EXPECT_NE(out2.str().find("FAIL"), std::string::npos);

  o.inject_fault = false;
  o.tau = 5.0;
  EXPECT_TRUE(run_grad_check(o).passed);
  o.tau = -1.0;
  std::ostringstream out3, err3;
  EXPECT_EQ(cmd_grad_check(o, out3, err3), kExitValidation);
}

TEST(GradCheck, EveryStrategyAndTopology) {
  for (auto s : {Strategy::vanilla, Strategy::kd_offline, Strategy::dml, Strategy::kdcl, Strategy::switokd}) {
    GradCheckOptions o;
    o.strategy = s;
    o.alpha = s == Strategy::kd_offline ? 0.5 : 0.8;
    o.beta = 1.3;
    o.tau = 2.0;
    const auto sum = run_grad_check(o);
    EXPECT_TRUE(sum.passed) << to_string(s) << " " << sum.worst_logit << " " << sum.worst_parameter;
    EXPECT_GT(sum.checked, 0u);
  }
  for (auto t : {Topology::one_teacher_two_students, Topology::two_teachers_one_student}) {
    GradCheckOptions o;
    o.topology = t;
    EXPECT_TRUE(run_grad_check(o).passed) << to_string(t);
  }
}

TEST(Timeline, AllLearningRunHasNoExpertFraction) {
  TempDir dir("all-learning");
  ASSERT_EQ(train_run(small_config(dir), dir / "run", {"strategy=switokd", "mode_override=learning"}), kExitOk);
  std::ostringstream out, err;
  ASSERT_EQ(cmd_timeline(dir / "run", 0, out, err), kExitOk) << err.str();
  std::istringstream in(out.str());
  const auto csv = read_timeline_csv(in);
  EXPECT_EQ(csv.summary.at("expert_fraction"), 0.0);
  EXPECT_EQ(csv.summary.at("switch_count"), 0.0);
  EXPECT_EQ(csv.summary.at("learning_fraction"), 1.0);
}

TEST(Timeline, SyntheticAlternatingLogCountsThreeSwitches) {
  TempDir dir("synthetic");
  write_synthetic_log(dir / "log.jsonl", "LELE");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_timeline(dir / "log.jsonl", 0, out, err), kExitOk) << err.str();
  std::istringstream in(out.str());
  const auto csv = read_timeline_csv(in);
  EXPECT_EQ(csv.summary.at("switch_count"), 3.0);
  EXPECT_EQ(csv.summary.at("iterations"), 4.0);
  EXPECT_EQ(csv.summary.at("expert_fraction"), 0.5);
  ASSERT_EQ(csv.states.size(), 4u);
  EXPECT_EQ(csv.states[1].mode, Mode::expert);
  EXPECT_DOUBLE_EQ(csv.states[3].gap, 0.30000000000000004);
}

TEST(Timeline, RealRunMatchesIndependentRecount) {
  TempDir dir("recount");
  ASSERT_EQ(train_run(small_config(dir), dir / "run", {"strategy=switokd", "epochs=6", "data.spread=1.5"}), kExitOk);
  std::ostringstream out, err;
  ASSERT_EQ(cmd_timeline(dir / "run", 0, out, err), kExitOk) << err.str();
  std::istringstream in(out.str());
  const auto csv = read_timeline_csv(in);
  const auto rc = recount(dir / "run/iterations.jsonl");
  EXPECT_EQ(csv.summary.at("iterations"), static_cast<double>(rc.iterations));
  EXPECT_EQ(csv.summary.at("switch_count"), static_cast<double>(rc.switches));
  EXPECT_DOUBLE_EQ(csv.summary.at("learning_fraction"), static_cast<double>(rc.learning) / static_cast<double>(rc.iterations));
  EXPECT_EQ(csv.states, [&] {
    auto s = read_timeline(dir / "run/iterations.jsonl");
    for (auto& x : s) x.r = 0.0;  // r is not a timeline column
    return s;
  }());
}

TEST(Timeline, MultiNetworkRunSelectsPair) {
  TempDir dir("multi");
  ASSERT_EQ(train_run(small_config(dir), dir / "run", {"strategy=switokd", "topology=1t2s"}), kExitOk);
  std::string name;
  const auto second = read_timeline(dir / "run/iterations.jsonl", 1, &name);
  EXPECT_EQ(name, "teacher/student2");
  const auto rc = recount(dir / "run/iterations.jsonl", 1);
  EXPECT_EQ(summarize(second).switch_count, rc.switches);
  std::ostringstream out, err;
  EXPECT_EQ(cmd_timeline(dir / "run", 2, out, err), kExitValidation);
  EXPECT_NE(err.str().find("no pair 2"), std::string::npos);
}

TEST(Timeline, CorruptLogReportsLineNumber) {
  TempDir dir("corrupt");
  write_synthetic_log(dir / "log.jsonl", "LLLL");
  std::string text = read_text(dir / "log.jsonl");
  const auto third = text.find('\n', text.find('\n') + 1) + 1;
  text.insert(third + 5, "}{oops");
  write_text(dir / "log.jsonl", text);
  try {
    read_timeline(dir / "log.jsonl");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.position(), 3u);
  }
  std::ostringstream out, err;
  EXPECT_EQ(cmd_timeline(dir / "log.jsonl", 0, out, err), kExitValidation);
  EXPECT_NE(err.str().find("log.jsonl:3"), std::string::npos) << err.str();

  write_synthetic_log(dir / "order.jsonl", "LL");
  const std::string ordered = read_text(dir / "order.jsonl");
  write_text(dir / "order.jsonl", ordered + ordered.substr(0, ordered.find('\n') + 1));
  EXPECT_THROW(read_timeline(dir / "order.jsonl"), FormatError);

  std::ostringstream out2, err2;
  EXPECT_EQ(cmd_timeline(dir / "nothing-here", 0, out2, err2), kExitValidation);
}

TEST(Metrics, TimelineCsvRoundTrip) {
  std::vector<GapState> states;
  testing_support::Gen gen(3);
  for (std::size_t i = 0; i < 50; ++i)
    states.push_back({i, gen.uniform(0, 2), 0.0, gen.uniform(0.36, 1), gen.uniform(-1, 1),
                      gen.index(2) ? Mode::learning : Mode::expert});
  std::stringstream ss;
  write_timeline_csv(ss, states);
  const auto back = read_timeline_csv(ss);
  EXPECT_EQ(back.states, states);
  EXPECT_EQ(back.summary.at("switch_count"), static_cast<double>(summarize(states).switch_count));
}

TEST(Metrics, EpochCsvRejectsMalformedRows) {
  TempDir dir("epochs");
  write_text(dir / "e.csv", std::string(kEpochCsvHeader) + "\n0,teacher,teacher,0.5,0.25\n1,student,pupil,0.5,0.5\n");
  try {
    read_epoch_csv(dir / "e.csv");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.position(), 3u);
  }
  write_text(dir / "h.csv", "epoch,net\n");
  EXPECT_THROW(read_epoch_csv(dir / "h.csv"), FormatError);
}

TEST(Idempotence, SubcommandsNeverModifyInputs) {
  TempDir dir("idem");
  const auto cfg = small_config(dir);
  ASSERT_EQ(train_run(cfg, dir / "run", {"strategy=switokd"}), kExitOk);
  const auto before = snapshot(dir.path());

  CompareOptions opts;
  opts.inputs = {dir / "run"};
  std::ostringstream o1, e1, o2, e2, o3, e3;
  EXPECT_EQ(cmd_compare(opts, o1, e1), kExitOk);
  EXPECT_EQ(cmd_timeline(dir / "run", 0, o2, e2), kExitOk);
  EXPECT_EQ(cmd_grad_check(GradCheckOptions{}, o3, e3), kExitOk);
  EXPECT_EQ(snapshot(dir.path()), before);
}

TEST(Binary, ExitCodes) {
  TempDir dir("binary");
  const auto cfg = small_config(dir);
  const std::string q = "'" + dir.path().string();
  EXPECT_EQ(run_cli("grad-check"), 0);
  EXPECT_EQ(run_cli("grad-check --tau 5"), 0);
  EXPECT_EQ(run_cli("grad-check --inject-fault"), 1);
  EXPECT_EQ(run_cli("grad-check --strategy bogus"), 1);
  EXPECT_EQ(run_cli("no-such-command"), 1);
  EXPECT_EQ(run_cli("train " + q + "/missing.txt'"), 1);
  EXPECT_EQ(run_cli("train " + q + "/small.txt' --tau -1 -o " + q + "/bad'"), 1);
  EXPECT_EQ(run_cli("train " + q + "/small.txt' --optimizer sgd --set momentum=0 --lr 1e300 -o " + q + "/nan'"), 2);
  EXPECT_EQ(run_cli("train " + q + "/small.txt' --strategy switokd -o " + q + "/ok'"), 0);
  EXPECT_EQ(run_cli("timeline " + q + "/ok' -o " + q + "/timeline.csv'"), 0);
  EXPECT_TRUE(fs::exists(dir / "timeline.csv"));
  EXPECT_EQ(run_cli("timeline " + q + "/missing' -o " + q + "/none.csv'"), 1);
  EXPECT_FALSE(fs::exists(dir / "none.csv"));
  EXPECT_EQ(run_cli("compare " + q + "/ok' " + q + "/ok' -o " + q + "/cmp.csv'"), 0);
  EXPECT_EQ(parse_csv(read_text(dir / "cmp.csv")).rows.size(), 4u);
}
