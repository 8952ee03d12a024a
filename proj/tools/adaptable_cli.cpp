// Command-line front end. Talks to the engine exclusively through the C API.

#include <adaptable/adaptable.h>

#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
  bool quiet = false;
};

int report_failure(const char* what, at_status st) {
  std::fprintf(stderr, "adaptable: %s failed (%s): %s\n", what, at_status_string(st), at_last_error());
  return static_cast<int>(st) == 0 ? 1 : static_cast<int>(st);
}

int run_verb(const std::string& verb, const Options& opt) {
  at_set_warnings(opt.quiet ? 0 : 1);
  at_run* run = nullptr;
  at_status st = at_run_open(opt.config.c_str(), opt.out.empty() ? nullptr : opt.out.c_str(), &run);
  if (st != AT_OK) return report_failure("loading config", st);

  if (opt.seed) {
    st = at_run_set_seed(run, *opt.seed);
    if (st != AT_OK) {
      at_run_close(run);
      return report_failure("--seed", st);
    }
  }
  if (!opt.mode.empty()) {
    const at_mode m = opt.mode == "full"         ? AT_MODE_FULL
                      : opt.mode == "align_only" ? AT_MODE_ALIGN_ONLY
                                                 : AT_MODE_SOURCE_ONLY;
    st = at_run_set_mode(run, m);
    if (st != AT_OK) {
      at_run_close(run);
      return report_failure("--mode", st);
    }
  }

  st = at_run_stage(run, verb.c_str());
  if (st != AT_OK) {
    const int code = report_failure(verb.c_str(), st);
    at_run_close(run);
    return code;
  }

  if (verb == "evaluate" || verb == "pipeline") {
    size_t needed = 0;
    if (at_run_summary_json(run, nullptr, 0, &needed) == AT_OK) {
      std::vector<char> buf(needed);
      if (at_run_summary_json(run, buf.data(), buf.size(), &needed) == AT_OK && !opt.quiet) {
        std::fputs(buf.data(), stdout);
      }
    }
  }
  std::fprintf(stderr, "adaptable: %s done, artifacts in %s\n", verb.c_str(), at_run_output_dir(run));
  at_run_close(run);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming test-time adaptation for tabular classifiers"};
  app.set_version_flag("--version", std::string(at_version()));
  app.require_subcommand(1, 1);

  Options opt;
  const std::vector<std::pair<std::string, std::string>> verbs{
      {"train", "Fit the source classifier on the source split"},
      {"calibrate", "Post-train the shift-aware calibrator on the frozen source model"},
      {"simulate", "Build the shifted target streams"},
      {"adapt", "Run the label distribution handler over each stream"},
      {"evaluate", "Score the adapted predictions and write summary.json"},
      {"pipeline", "Run every stage in order"},
  };
  for (const auto& [name, help] : verbs) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Use this single seed instead of the config's list");
    sub->add_option("--out", opt.out, "Output directory (overrides ADAPTABLE_OUT_DIR and the config)");
    sub->add_option("--mode", opt.mode, "Use this single handler mode instead of the config's list")
        ->check(CLI::IsMember({"full", "align_only", "source_only"}));
    sub->add_flag("-q,--quiet", opt.quiet, "Suppress warnings and the summary printout");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string verb = app.get_subcommands().front()->get_name();
  return run_verb(verb, opt);
}
