#pragma once

#include <string>
#include <vector>

#include "promptkd/config.hpp"
#include "promptkd/corpus.hpp"
#include "promptkd/experiment.hpp"

namespace promptkd {

// Resolved assets directory: flag > config key > compiled-in default.
std::string resolve_assets_dir(const Config& cfg, const std::string& flag_value);

SyntheticSpec synthetic_spec_from_config(const Config& cfg);
PipelineConfig pipeline_config_from_config(const Config& cfg, int threads);

// Loads train/dev/test corpus files from a directory produced by `prepare`.
Corpus load_corpus_dir(const std::string& dir, const SenseHierarchy& hierarchy);

struct PrepareArgs {
  std::string corpus_path;   // existing corpus file to validate, or
  std::string config_path;   // config with a synthetic.* section
  std::string out_dir;
  std::string assets_dir;    // optional override
};
int cmd_prepare(const PrepareArgs& args);

struct RunArgs {
  std::string config_path;
  std::string mode;  // pipeline | ablation | sweep-temperature | verbalizers | injection
  std::string out_dir;
  std::string seed_override;      // optional
  std::string variants_override;  // ablation variant list / verbalizer list
  std::string values_override;    // temperature list
  std::string assets_dir;         // optional override
  int threads = 1;
};
int cmd_run(const RunArgs& args);

struct ReportArgs {
  std::vector<std::string> run_dirs;
  std::string out_dir;
};
int cmd_report(const ReportArgs& args);

int cli_main(int argc, char** argv);

}  // namespace promptkd
