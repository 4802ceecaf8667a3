#include "promptkd/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "promptkd/distillation.hpp"
#include "promptkd/prompting.hpp"
#include "promptkd/vocab.hpp"

#ifndef PROMPTKD_DEFAULT_DATA_DIR
#define PROMPTKD_DEFAULT_DATA_DIR "data"
#endif

namespace promptkd {

namespace fs = std::filesystem;

std::string resolve_assets_dir(const Config& cfg, const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  return cfg.get_str("data.assets_dir", PROMPTKD_DEFAULT_DATA_DIR);
}

SyntheticSpec synthetic_spec_from_config(const Config& cfg) {
  SyntheticSpec spec;
  spec.seed = cfg.get_u64("synthetic.seed", spec.seed);
  spec.n_train = cfg.get_int("synthetic.n_train", spec.n_train);
  spec.n_dev = cfg.get_int("synthetic.n_dev", spec.n_dev);
  spec.n_test = cfg.get_int("synthetic.n_test", spec.n_test);
  spec.content_vocab_size = cfg.get_int("synthetic.content_vocab_size", spec.content_vocab_size);
  spec.connectives_per_third_sense =
      cfg.get_int("synthetic.connectives_per_third_sense", spec.connectives_per_third_sense);
  spec.noise_rate = cfg.get_double("synthetic.noise_rate", spec.noise_rate);
  spec.arg_len_min = cfg.get_int("synthetic.arg_len_min", spec.arg_len_min);
  spec.arg_len_max = cfg.get_int("synthetic.arg_len_max", spec.arg_len_max);
  return spec;
}

PipelineConfig pipeline_config_from_config(const Config& cfg, int threads) {
  PipelineConfig p;
  p.encoder.d_model = cfg.get_int("encoder.d_model", p.encoder.d_model);
  p.encoder.n_layers = cfg.get_int("encoder.n_layers", p.encoder.n_layers);
  p.encoder.n_heads = cfg.get_int("encoder.n_heads", p.encoder.n_heads);
  p.encoder.d_ff = cfg.get_int("encoder.d_ff", p.encoder.d_ff);
  p.encoder.max_len = cfg.get_int("encoder.max_len", p.encoder.max_len);
  p.encoder.dropout_rate = cfg.get_double("encoder.dropout", p.encoder.dropout_rate);
  p.encoder.tie_output = cfg.get_bool("encoder.tie_output", p.encoder.tie_output);

  const std::string kind = cfg.get_str("template.kind", "continuous");
  if (kind == "continuous") p.tmpl.kind = TemplateKind::kContinuousStudent;
  else if (kind == "discrete") p.tmpl.kind = TemplateKind::kDiscreteStudent;
  else throw std::runtime_error("template.kind must be continuous or discrete");
  p.tmpl.m = cfg.get_int("template.m", p.tmpl.m);
  p.tmpl.arg1_max = cfg.get_int("template.arg1_max", p.tmpl.arg1_max);
  p.tmpl.total_len = cfg.get_int("template.total_len", p.tmpl.total_len);
  check(p.encoder.max_len >= p.tmpl.total_len, "encoder.max_len below template.total_len");

  p.granularity = granularity_from_name(cfg.get_str("answers.granularity", "paper21"));

  p.pretrain.epochs = cfg.get_int("pretrain.epochs", p.pretrain.epochs);
  p.pretrain.lr = cfg.get_double("pretrain.lr", p.pretrain.lr);
  p.pretrain.mask_rate = cfg.get_double("pretrain.mask_rate", p.pretrain.mask_rate);
  p.pretrain.batch_size = cfg.get_int("pretrain.batch_size", p.pretrain.batch_size);

  p.train.lr_grid = cfg.get_doubles("train.lr_grid", p.train.lr_grid);
  p.train.batch_size = cfg.get_int("train.batch_size", p.train.batch_size);
  p.train.max_epochs = cfg.get_int("train.max_epochs", p.train.max_epochs);
  p.train.weight_decay = cfg.get_double("train.weight_decay", p.train.weight_decay);
  p.train.kd.temperature = cfg.get_double("kd.temperature", p.train.kd.temperature);
  p.train.kd.alpha = cfg.get_double("kd.alpha", p.train.kd.alpha);
  p.train.kd.beta = cfg.get_double("kd.beta", p.train.kd.beta);
  p.train.kd.t_squared_scaling = cfg.get_bool("kd.t_squared_scaling", false);
  p.train.threads = threads;

  p.seed = cfg.get_u64("run.seed", 0);
  p.vocab_min_count = cfg.get_int("run.vocab_min_count", 1);
  return p;
}

Corpus load_corpus_dir(const std::string& dir, const SenseHierarchy& hierarchy) {
  Corpus merged;
  for (const char* name : {"train.jsonl", "dev.jsonl", "test.jsonl"}) {
    const std::string path = dir + "/" + name;
    check(fs::exists(path), "missing corpus file: " + path);
    Corpus part = load_corpus(path, hierarchy);
    merged.instances.insert(merged.instances.end(), part.instances.begin(),
                            part.instances.end());
  }
  std::set<std::string> ids;
  for (const Instance& inst : merged.instances)
    check(ids.insert(inst.id).second, "duplicate id across corpus files: " + inst.id);
  return merged;
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  check(out.good(), "cannot write " + path);
  out << text;
}

void write_split_files(const Corpus& corpus, const std::string& dir) {
  for (Split split : {Split::kTrain, Split::kDev, Split::kTest}) {
    Corpus part;
    for (const Instance& inst : corpus.instances)
      if (inst.split == split) part.instances.push_back(inst);
    save_corpus(part, dir + "/" + split_name(split) + ".jsonl");
  }
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const std::string& config_path, const Config& cfg,
                    const std::vector<uint64_t>& seeds) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config_path"] = config_path;
  j["out_dir"] = out_dir;
  const auto now = std::chrono::system_clock::now();
  j["timestamp_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
  j["seeds"] = seeds;
  write_text(out_dir + "/manifest.json", j.dump(2) + "\n");
  write_text(out_dir + "/resolved.cfg", cfg.to_string());
}

int run_guarded(const std::string& stage, const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int cmd_prepare(const PrepareArgs& args) {
  return run_guarded("prepare", [&]() {
    check(!args.out_dir.empty(), "prepare needs --out");
    check(args.corpus_path.empty() != args.config_path.empty(),
          "prepare needs exactly one of --corpus or --synthetic");
    Config cfg = args.config_path.empty() ? Config() : Config::load(args.config_path);
    const std::string assets = resolve_assets_dir(cfg, args.assets_dir);
    const SenseHierarchy hierarchy = SenseHierarchy::load(assets + "/sense_hierarchy.tsv");

    Corpus corpus;
    if (!args.corpus_path.empty()) {
      corpus = load_corpus(args.corpus_path, hierarchy);
    } else {
      corpus = generate_synthetic(synthetic_spec_from_config(cfg), hierarchy);
    }
    fs::create_directories(args.out_dir);
    write_split_files(corpus, args.out_dir);
    const std::string stats = stats_to_csv(corpus_stats(corpus));
    write_text(args.out_dir + "/stats.csv", stats);
    std::cout << stats;
    return 0;
  });
}

namespace {

struct RunContext {
  Config cfg;
  SenseHierarchy hierarchy;
  MappingTable mapping;
  Corpus corpus;
  PipelineConfig pipeline;
};

RunContext make_run_context(const RunArgs& args) {
  RunContext ctx;
  ctx.cfg = Config::load(args.config_path);
  if (!args.seed_override.empty()) ctx.cfg.set("run.seed", args.seed_override);
  const std::string assets = resolve_assets_dir(ctx.cfg, args.assets_dir);
  ctx.hierarchy = SenseHierarchy::load(assets + "/sense_hierarchy.tsv");
  ctx.mapping = MappingTable::load(assets + "/mapping_table.tsv");
  const std::string data_dir = ctx.cfg.get_str("data.dir", "");
  ctx.corpus = data_dir.empty()
                   ? generate_synthetic(synthetic_spec_from_config(ctx.cfg), ctx.hierarchy)
                   : load_corpus_dir(data_dir, ctx.hierarchy);
  ctx.pipeline = pipeline_config_from_config(ctx.cfg, args.threads);
  return ctx;
}

void write_record(const std::string& out_dir, const RunRecord& record) {
  fs::create_directories(out_dir + "/records");
  write_text(out_dir + "/records/" + record.variant + "_" + std::to_string(record.seed) +
                 ".json",
             record_to_json(record) + "\n");
}

}  // namespace

int cmd_run(const RunArgs& args) {
  return run_guarded("run:" + args.mode, [&]() {
    check(!args.out_dir.empty(), "run needs --out");
    RunContext ctx = make_run_context(args);
    fs::create_directories(args.out_dir);
    write_manifest(args.out_dir, "run --mode " + args.mode, args.config_path, ctx.cfg,
                   {ctx.pipeline.seed});

    std::ostringstream summary;
    summary << summary_csv_header();
    std::vector<RunRecord> records;

    if (args.mode == "pipeline") {
      PipelineConfig pcfg = ctx.pipeline;
      pcfg.out_dir = args.out_dir + "/checkpoints";
      const PipelineResult result = run_pipeline(ctx.corpus, ctx.hierarchy, ctx.mapping, pcfg);
      records = {result.teacher, result.response, result.feature, result.fused};
    } else if (args.mode == "ablation") {
      const std::vector<std::string> variants = !args.variants_override.empty()
          ? split_commas(args.variants_override)
          : ctx.cfg.get_strings("ablation.variants",
                                {"full", "RD", "FD", "RD-FD", "CPT", "VAS"});
      for (const std::string& v : variants)
        records.push_back(run_ablation(AblationSpec::from_name(v), ctx.corpus, ctx.hierarchy,
                                       ctx.mapping, ctx.pipeline));
    } else if (args.mode == "sweep-temperature") {
      std::vector<double> values = ctx.cfg.get_doubles("sweep.values", {10, 15, 20});
      if (!args.values_override.empty()) {
        values.clear();
        for (const std::string& v : split_commas(args.values_override))
          values.push_back(std::stod(v));
      }
      for (auto& [t, rec] :
           sweep_temperature(values, ctx.corpus, ctx.hierarchy, ctx.mapping, ctx.pipeline))
        records.push_back(rec);
    } else if (args.mode == "verbalizers") {
      const std::vector<std::string> names = !args.variants_override.empty()
          ? split_commas(args.variants_override)
          : ctx.cfg.get_strings("verbalizers.granularities",
                                {"top4", "second20", "paper21", "third31", "substantive"});
      std::vector<AnswerGranularity> grans;
      for (const std::string& n : names) grans.push_back(granularity_from_name(n));
      for (const VerbalizerResult& r :
           compare_verbalizers(grans, ctx.corpus, ctx.hierarchy, ctx.mapping, ctx.pipeline)) {
        RunRecord rec = r.record;
        rec.variant = granularity_name(r.granularity) + "_" + r.mode;
        records.push_back(rec);
      }
    } else if (args.mode == "injection") {
      AblationSpec spec;
      spec.knowledge_injection = true;
      records.push_back(
          run_ablation(spec, ctx.corpus, ctx.hierarchy, ctx.mapping, ctx.pipeline));
    } else {
      throw std::runtime_error("unknown mode: " + args.mode);
    }

    for (const RunRecord& rec : records) {
      summary << summary_csv_row(rec);
      write_record(args.out_dir, rec);
    }
    write_text(args.out_dir + "/summary.csv", summary.str());
    std::cout << summary.str();
    return 0;
  });
}

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open " + path);
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (first) {
      table.header = fields;
      first = false;
    } else {
      check(fields.size() == table.header.size(), "ragged csv row in " + path);
      table.rows.push_back(fields);
    }
  }
  check(!table.header.empty(), "empty csv: " + path);
  return table;
}

int column_index(const CsvTable& t, const std::string& name) {
  for (size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return static_cast<int>(i);
  return -1;
}

}  // namespace

int cmd_report(const ReportArgs& args) {
  return run_guarded("report", [&]() {
    check(!args.run_dirs.empty(), "report needs at least one run directory");
    check(!args.out_dir.empty(), "report needs --out");
    fs::create_directories(args.out_dir);

    std::ostringstream merged;
    bool wrote_header = false;
    for (const std::string& dir : args.run_dirs) {
      const std::string path = dir + "/summary.csv";
      check(fs::exists(path), "run directory has no summary.csv: " + dir);
      const CsvTable table = read_csv(path);
      if (!wrote_header) {
        for (size_t i = 0; i < table.header.size(); ++i)
          merged << (i ? "," : "") << table.header[i];
        merged << "\n";
        wrote_header = true;
      }
      for (const auto& row : table.rows) {
        for (size_t i = 0; i < row.size(); ++i) merged << (i ? "," : "") << row[i];
        merged << "\n";
      }

      // Chart data: one x/y series per metric whenever the sweep column
      // takes several values.
      const int t_col = column_index(table, "T");
      const int acc_col = column_index(table, "acc");
      const int f1_col = column_index(table, "macro_f1");
      if (t_col >= 0 && acc_col >= 0 && f1_col >= 0) {
        std::set<std::string> distinct;
        for (const auto& row : table.rows) distinct.insert(row[static_cast<size_t>(t_col)]);
        if (distinct.size() >= 2) {
          const std::string base = fs::path(dir).filename().string();
          std::ostringstream acc_series, f1_series;
          acc_series << "T,acc\n";
          f1_series << "T,macro_f1\n";
          for (const auto& row : table.rows) {
            acc_series << row[static_cast<size_t>(t_col)] << ","
                       << row[static_cast<size_t>(acc_col)] << "\n";
            f1_series << row[static_cast<size_t>(t_col)] << ","
                      << row[static_cast<size_t>(f1_col)] << "\n";
          }
          write_text(args.out_dir + "/" + base + "_series_acc.csv", acc_series.str());
          write_text(args.out_dir + "/" + base + "_series_macro_f1.csv", f1_series.str());
        }
      }
    }
    write_text(args.out_dir + "/merged.csv", merged.str());
    std::cout << merged.str();
    return 0;
  });
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Continuous prompt templates with connective knowledge distillation "
               "for implicit discourse relation recognition"};
  app.require_subcommand(1);

  int threads = 1;
  if (const char* env = std::getenv("PROMPTKD_THREADS")) threads = std::max(1, std::atoi(env));

  PrepareArgs prepare;
  auto* prep = app.add_subcommand("prepare", "Validate or synthesize a corpus");
  prep->add_option("--corpus", prepare.corpus_path, "existing corpus file to validate");
  prep->add_option("--synthetic", prepare.config_path, "config with a synthetic.* section");
  prep->add_option("--out", prepare.out_dir, "output directory")->required();
  prep->add_option("--data-dir", prepare.assets_dir, "assets directory override");

  RunArgs run;
  run.threads = threads;
  auto* runc = app.add_subcommand("run", "Run an experiment");
  runc->add_option("--config", run.config_path, "config file")->required();
  runc->add_option("--mode", run.mode,
                   "pipeline | ablation | sweep-temperature | verbalizers | injection")
      ->required();
  runc->add_option("--out", run.out_dir, "run directory")->required();
  runc->add_option("--seed", run.seed_override, "seed override");
  runc->add_option("--variants", run.variants_override, "ablation variants / verbalizers");
  runc->add_option("--values", run.values_override, "temperature values");
  runc->add_option("--data-dir", run.assets_dir, "assets directory override");

  ReportArgs report;
  auto* rep = app.add_subcommand("report", "Merge run summaries and emit chart data");
  rep->add_option("dirs", report.run_dirs, "run directories")->required();
  rep->add_option("--out", report.out_dir, "report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (prep->parsed()) return cmd_prepare(prepare);
  if (runc->parsed()) return cmd_run(run);
  if (rep->parsed()) return cmd_report(report);
  return 1;
}

}  // namespace promptkd
