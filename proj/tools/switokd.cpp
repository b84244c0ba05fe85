// switokd: train, compare, grad-check and timeline subcommands.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "switokd/commands.hpp"

namespace {

using namespace switokd;

// Flags that mirror config keys; each one becomes a key=value override.
struct ConfigFlags {
  std::optional<std::string> strategy, topology, mode_override, optimizer;
  std::optional<double> alpha, beta, tau, lr;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> set;

  void attach(CLI::App& app) {
    app.add_option("--strategy", strategy, "vanilla | kd-offline | dml | kdcl | switokd");
    app.add_option("--topology", topology, "pair | 1t2s | 2t1s");
    app.add_option("--mode-override", mode_override, "auto | learning | expert | alternate");
    app.add_option("--optimizer", optimizer, "sgd | adam (all networks)");
    app.add_option("--alpha", alpha, "student KL weight");
    app.add_option("--beta", beta, "teacher KL weight");
    app.add_option("--tau", tau, "softmax temperature");
    app.add_option("--lr", lr, "learning rate (all networks)");
    app.add_option("--epochs", epochs);
    app.add_option("--batch-size", batch_size);
    app.add_option("--seed", seed);
    app.add_option("--set", set, "any config key, as key=value (repeatable)");
  }

  std::vector<std::string> overrides() const {
    std::vector<std::string> out;
    const auto put = [&](const char* key, const auto& v) {
      if (!v) return;
      if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, std::string>)
        out.push_back(std::string(key) + "=" + *v);
      else if constexpr (std::is_floating_point_v<std::decay_t<decltype(*v)>>)
        out.push_back(std::string(key) + "=" + format_number(*v));
      else
        out.push_back(std::string(key) + "=" + std::to_string(*v));
    };
    put("strategy", strategy);
    put("topology", topology);
    put("mode_override", mode_override);
    put("optimizer", optimizer);
    put("alpha", alpha);
    put("beta", beta);
    put("tau", tau);
    put("lr", lr);
    put("epochs", epochs);
    put("batch_size", batch_size);
    put("seed", seed);
    out.insert(out.end(), set.begin(), set.end());
    return out;
  }
};

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Switchable online knowledge distillation at desk scale"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train one configuration and write a run directory");
  std::string train_config;
  std::string train_out;
  ConfigFlags train_flags;
  train->add_option("config", train_config, "key=value config file")->required();
  train->add_option("-o,--out", train_out, "run directory (default runs/<config name>)");
  train_flags.attach(*train);

  auto* compare = app.add_subcommand("compare", "train or read several runs and tabulate them");
  std::vector<std::string> compare_inputs;
  std::string compare_runs = "runs";
  std::string compare_out;
  bool allow_mismatch = false;
  ConfigFlags compare_flags;
  compare->add_option("inputs", compare_inputs, "config files or run directories")->required();
  compare->add_option("--runs-dir", compare_runs, "where config inputs are trained");
  compare->add_option("-o,--out", compare_out, "CSV output file (default stdout)");
  compare->add_flag("--allow-mismatch", allow_mismatch, "compare runs on different data or seeds");
  compare_flags.attach(*compare);

  auto* grad = app.add_subcommand("grad-check", "check analytic loss gradients against finite differences");
  GradCheckOptions gopts;
  std::string g_strategy = "switokd", g_topology = "pair";
  grad->add_option("--strategy", g_strategy, "vanilla | kd-offline | dml | kdcl | switokd");
  grad->add_option("--topology", g_topology, "pair | 1t2s | 2t1s");
  grad->add_option("--tau", gopts.tau);
  grad->add_option("--alpha", gopts.alpha);
  grad->add_option("--beta", gopts.beta);
  grad->add_option("--seed", gopts.seed);
  grad->add_option("--instances", gopts.instances);
  grad->add_option("--tolerance", gopts.tolerance);
  grad->add_flag("--inject-fault", gopts.inject_fault, "double the analytic KL gradient");

  auto* timeline = app.add_subcommand("timeline", "mode timeline CSV of a run");
  std::string timeline_source;
  std::size_t timeline_pair = 0;
  std::string timeline_out;
  timeline->add_option("run", timeline_source, "run directory or iterations.jsonl")->required();
  timeline->add_option("--pair", timeline_pair, "pair index for three-network runs");
  timeline->add_option("-o,--out", timeline_out, "CSV output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  // Output files are opened only after validation succeeds, so a failing
  // command never truncates an existing file.
  const auto with_output = [](const std::string& path, auto&& body) -> int {
    if (path.empty()) return body(std::cout);
    std::ostringstream buffer;
    const int code = body(buffer);
    if (code != kExitOk) return code;
    std::ofstream out(path);
    if (!out) {
      std::cerr << "error: cannot write " << path << '\n';
      return kExitRuntime;
    }
    out << buffer.str();
    return code;
  };

  if (*train) {
    const fs::path out_dir = train_out.empty() ? fs::path("runs") / fs::path(train_config).stem() : fs::path(train_out);
    return cmd_train(train_config, train_flags.overrides(), out_dir, std::cout, std::cerr);
  }
  if (*compare) {
    CompareOptions opts;
    for (const auto& i : compare_inputs) opts.inputs.emplace_back(i);
    opts.runs_dir = compare_runs;
    opts.overrides = compare_flags.overrides();
    opts.allow_mismatch = allow_mismatch;
    return with_output(compare_out, [&](std::ostream& out) { return cmd_compare(opts, out, std::cerr); });
  }
  if (*grad) {
    const int code = guarded(std::cerr, [&] {
      gopts.strategy = parse_strategy(g_strategy);
      gopts.topology = parse_topology(g_topology);
      return static_cast<int>(kExitOk);
    });
    if (code != kExitOk) return code;
    return cmd_grad_check(gopts, std::cout, std::cerr);
  }
  return with_output(timeline_out, [&](std::ostream& out) {
    return cmd_timeline(timeline_source, timeline_pair, out, std::cerr);
  });
}
