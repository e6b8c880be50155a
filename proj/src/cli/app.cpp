#include "nuner/cli/app.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <stop_token>
#include <thread>

#include "nuner/annotator/annotator.hpp"
#include "nuner/cli/ablation.hpp"
#include "nuner/cli/config.hpp"
#include "nuner/corpus/dataset.hpp"
#include "nuner/corpus/synth.hpp"
#include "nuner/encoder/checkpoint.hpp"
#include "nuner/encoder/gradcheck.hpp"
#include "nuner/fewshot/fewshot.hpp"
#include "nuner/numerics/gradcheck.hpp"
#include "nuner/pretrain/pretrain.hpp"

namespace nuner::cli {

namespace {

namespace fsys = std::filesystem;
using nlohmann::json;

volatile std::sig_atomic_t g_signalled = 0;

extern "C" void on_stop_signal(int) { g_signalled = 1; }

/// Turns SIGINT/SIGTERM into a stop request for as long as it is alive.
class SignalStop {
 public:
  SignalStop() {
    g_signalled = 0;
    struct sigaction sa {};
    sa.sa_handler = on_stop_signal;
    sigemptyset(&sa.sa_mask);
    sigaction(SIGINT, &sa, &old_int_);
    sigaction(SIGTERM, &sa, &old_term_);
    watcher_ = std::jthread([this](std::stop_token st) {
      while (!st.stop_requested()) {
        if (g_signalled) {
          source_.request_stop();
          return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
    });
  }
  ~SignalStop() {
    watcher_.request_stop();
    watcher_.join();
    sigaction(SIGINT, &old_int_, nullptr);
    sigaction(SIGTERM, &old_term_, nullptr);
  }
  std::stop_token token() const { return source_.get_token(); }

 private:
  std::stop_source source_;
  struct sigaction old_int_ {}, old_term_ {};
  std::jthread watcher_;
};

struct PathOption {
  const char* key;
  const char* flag;
  const char* help;
  bool input;
  bool required;
};

/// One subcommand: its path options, flag overrides and the work to run.
struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::vector<PathOption> path_options;
  std::map<std::string, std::string> path_values;
  /// Applied after --config and --set, so named flags win.
  std::vector<std::function<void(json&)>> overrides;
  std::function<int(RunConfig&, const fsys::path& run_dir)> body;
  /// Checks that need the resolved config, run before the run directory exists.
  std::function<void(RunConfig&)> prepare;
};

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::vector<std::string> sets;
};

void write_text(const fsys::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_json(const fsys::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

const std::string& path_of(const RunConfig& c, const std::string& key) {
  const auto it = c.paths.find(key);
  if (it == c.paths.end()) throw ConfigError("missing path '" + key + "'");
  return it->second;
}

std::optional<std::string> optional_path(const RunConfig& c, const std::string& key) {
  const auto it = c.paths.find(key);
  if (it == c.paths.end() || it->second.empty()) return std::nullopt;
  return it->second;
}

template <typename T>
void add_flag_override(Command& cmd, const std::string& flag, const std::string& help, std::string section,
                       std::string key) {
  auto value = std::make_shared<std::optional<T>>();
  cmd.app->add_option(flag, *value, help);
  cmd.overrides.push_back([value, section, key](json& doc) {
    if (*value) doc[section][key] = **value;
  });
}

void log_line(const std::string& msg) { std::cerr << msg << std::endl; }

// data ----------------------------------------------------------------------

int data_annotate(RunConfig& c, const fsys::path& run_dir, bool resume) {
  ann::AnnotationJob job;
  job.input = path_of(c, "input");
  job.output = path_of(c, "output");
  job.ledger = path_of(c, "ledger");
  job.failures = path_of(c, "failures");
  job.config = c.annotator;
  (void)resume;
  const ann::ChatClient client(c.annotator);
  ann::AnnotationSummary summary;
  {
    SignalStop stop;
    summary = ann::annotate_corpus(job, client, stop.token());
  }
  const json report = ann::summary_to_json(summary);
  write_json(run_dir / "summary.json", report);
  std::printf("annotate: %zu total, %zu already done, %zu completed, %zu failed, %zu retries%s\n", summary.total,
              summary.already_done, summary.completed, summary.failed, summary.retries,
              summary.interrupted ? ", interrupted" : "");
  std::printf("ingest: %zu skipped lines, %zu unaligned annotations\n", summary.skipped_lines,
              summary.unaligned_annotations);
  return summary.interrupted ? kExitFailure : kExitOk;
}

json ingestion_counters(const corpus::Dataset& d) {
  const corpus::IngestStats s = d.ingestion.value_or(corpus::IngestStats{});
  return {{"records", s.sentences},
          {"sentences", d.size()},
          {"annotations", d.annotation_count()},
          {"skipped_lines", s.skipped_lines},
          {"unaligned_annotations", s.unaligned_annotations},
          {"duplicate_annotations", s.duplicate_annotations},
          {"removed_count", s.removed_sentences}};
}

int data_build(RunConfig& c, const fsys::path& run_dir) {
  const auto records = corpus::read_dump(path_of(c, "dump"));
  const corpus::Dataset d = corpus::build_dataset(records);
  const fsys::path output = optional_path(c, "output").value_or((run_dir / "dataset.jsonl").string());
  corpus::write_dataset(output, d);
  const json counters = ingestion_counters(d);
  write_json(run_dir / "counters.json", counters);
  std::printf("%-24s %s\n", "dataset", output.string().c_str());
  for (const auto& [k, v] : counters.items()) std::printf("%-24s %s\n", k.c_str(), v.dump().c_str());
  return kExitOk;
}

int data_stats(RunConfig& c, const fsys::path& run_dir) {
  const corpus::Dataset d = corpus::read_dataset(path_of(c, "dataset"));
  const json stats = corpus::dataset_stats(d, 50);
  write_json(run_dir / "stats.json", stats);
  for (const char* key : {"total_sentences", "total_annotations", "skipped_lines", "dropped_unaligned_annotations",
                          "removed_sentences", "vocab_size"}) {
    if (stats.contains(key)) std::printf("%-30s %s\n", key, stats[key].dump().c_str());
  }
  std::printf("\n%5s  %-32s %8s\n", "rank", "concept", "count");
  std::size_t rank = 1;
  for (const auto& entry : stats["top_concepts"]) {
    std::printf("%5zu  %-32s %8s\n", rank++, entry["concept"].get<std::string>().c_str(),
                entry["count"].dump().c_str());
  }
  std::printf("\n%8s %10s %10s %10s\n", "rank", "count", "log10 r", "log10 c");
  for (const auto& row : stats["frequency_rank"]) {
    std::printf("%8s %10s %10.4f %10.4f\n", row["rank"].dump().c_str(), row["count"].dump().c_str(),
                row["log10_rank"].get<double>(), row["log10_count"].get<double>());
  }
  return kExitOk;
}

int data_synth(RunConfig& c, const fsys::path& run_dir) {
  const auto world = corpus::make_world(c.world);
  const auto pretrain = corpus::make_pretrain_corpus(world, c.synth.pretrain_sentences, c.seed);
  const auto train = corpus::make_ner_task(world, c.synth.ner_train_sentences, fs::derive_seed(c.seed, 0, 1));
  const auto test = corpus::make_ner_task(world, c.synth.ner_test_sentences, fs::derive_seed(c.seed, 0, 2));
  corpus::write_dataset(run_dir / "pretrain.jsonl", pretrain);
  corpus::write_dataset(run_dir / "ner_train.jsonl", train);
  corpus::write_dataset(run_dir / "ner_test.jsonl", test);
  std::printf("%-16s %8zu sentences %8zu annotations\n", "pretrain.jsonl", pretrain.size(),
              pretrain.annotation_count());
  std::printf("%-16s %8zu sentences %8zu annotations\n", "ner_train.jsonl", train.size(), train.annotation_count());
  std::printf("%-16s %8zu sentences %8zu annotations\n", "ner_test.jsonl", test.size(), test.annotation_count());
  std::string types;
  for (const auto& t : world.task_types) types += (types.empty() ? "" : ", ") + t;
  std::printf("entity types: %s\n", types.c_str());
  return kExitOk;
}

// train ---------------------------------------------------------------------

int train_mlm(RunConfig& c, const fsys::path& run_dir) {
  std::vector<std::string> texts;
  for (auto& s : ann::read_annotation_input(path_of(c, "corpus"))) texts.push_back(std::move(s.text));
  const auto result = pre::mlm_run(texts, c.mlm, c.encoder);
  const fsys::path ckpt = run_dir / "checkpoint.nck";
  enc::save_checkpoint(ckpt, result.base);
  std::ofstream metrics(run_dir / "metrics.jsonl", std::ios::binary);
  std::printf("%6s %12s %12s\n", "epoch", "train_loss", "masked_acc");
  std::printf("%6s %12.6f %12s\n", "init", result.initial_loss, "-");
  for (const auto& e : result.epochs) {
    metrics << json{{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"masked_accuracy", e.masked_accuracy},
                    {"wall_time_s", e.wall_time_s}}
                   .dump()
            << '\n';
    std::printf("%6zu %12.6f %12.4f\n", e.epoch, e.train_loss, e.masked_accuracy);
  }
  write_json(run_dir / "summary.json", {{"checkpoint", ckpt.string()},
                                        {"initial_loss", result.initial_loss},
                                        {"parameters", result.base.parameter_count()},
                                        {"digest", enc::checkpoint_digest(result.base)}});
  std::printf("checkpoint %s\n", ckpt.string().c_str());
  return kExitOk;
}

int train_pretrain(RunConfig& c, const fsys::path& run_dir) {
  const corpus::Dataset d = corpus::read_dataset(path_of(c, "dataset"));
  std::optional<enc::Checkpoint> init;
  if (const auto p = optional_path(c, "init_checkpoint")) init = enc::load_checkpoint(*p);
  std::printf("%6s %12s %12s %12s %9s\n", "epoch", "train_loss", "val_loss", "lr_end", "seconds");
  const auto result = pre::pretrain_run(d, c.pretrain, c.encoder, init, [](const pre::EpochMetrics& m) {
    std::printf("%6zu %12.6f %12.6f %12.4g %9.2f\n", m.epoch, m.train_loss, m.val_loss, m.lr_end, m.wall_time_s);
    std::fflush(stdout);
    return true;
  });
  const fsys::path ckpt = run_dir / "checkpoint.nck";
  enc::save_checkpoint(ckpt, result.text);
  enc::save_checkpoint(run_dir / "concept.nck", result.concept_encoder);
  pre::write_metrics_jsonl(run_dir / "metrics.jsonl", result.metrics);
  const std::string digest = enc::checkpoint_digest(result.text);
  write_json(run_dir / "summary.json", {{"checkpoint", ckpt.string()},
                                        {"digest", digest},
                                        {"parameters", result.text.parameter_count()},
                                        {"steps", result.text.metadata.step},
                                        {"train_sentences", result.train_ids.size()},
                                        {"validation_sentences", result.validation_ids.size()}});
  std::printf("checkpoint %s\nsha256 %s\n", ckpt.string().c_str(), digest.c_str());
  return kExitOk;
}

// eval ----------------------------------------------------------------------

fs::NerDataset read_ner(const std::string& path) { return fs::to_ner_dataset(corpus::read_dataset(path)); }

int eval_fewshot(RunConfig& c, const fsys::path& run_dir) {
  const auto checkpoint = enc::load_checkpoint(path_of(c, "checkpoint"));
  const auto train = read_ner(path_of(c, "train"));
  const auto test = read_ner(path_of(c, "test"));
  const auto table = fs::run_protocol(checkpoint, train, test, c.fewshot);
  const std::string text = fs::protocol_to_text(table);
  write_json(run_dir / "report.json", fs::protocol_to_json(table));
  write_text(run_dir / "report.txt", text);
  std::fputs(text.c_str(), stdout);
  return kExitOk;
}

AblationInputs ablation_inputs(RunConfig& c) {
  AblationInputs in;
  in.pretrain = c.pretrain;
  in.encoder = c.encoder;
  if (const auto p = optional_path(c, "init_checkpoint")) in.init = enc::load_checkpoint(*p);
  in.train_pool = read_ner(path_of(c, "train"));
  in.test = read_ner(path_of(c, "test"));
  in.protocol = c.fewshot;
  in.k = c.ablation.k;
  return in;
}

int eval_ablation(RunConfig& c, const fsys::path& run_dir, bool concepts) {
  const corpus::Dataset d = corpus::read_dataset(path_of(c, "dataset"));
  const AblationInputs inputs = ablation_inputs(c);
  const auto report = concepts ? ablate_concepts(d, c.ablation.concept_n, inputs, log_line)
                               : ablate_size(d, c.ablation.sizes, inputs, log_line);
  const std::string text = ablation_to_text(report);
  write_json(run_dir / "report.json", ablation_to_json(report));
  write_text(run_dir / "report.txt", text);
  std::fputs(text.c_str(), stdout);
  return kExitOk;
}

// gradcheck -----------------------------------------------------------------

json grad_report_json(const num::GradCheckReport& r) {
  return {{"max_relative_error", r.max_relative_error},
          {"tolerance", r.tolerance},
          {"passed", r.passed},
          {"coordinates_checked", r.coordinates_checked},
          {"total_coordinates", r.total_coordinates},
          {"worst_parameter", r.worst_parameter},
          {"worst_index", r.worst_index}};
}

int gradcheck(RunConfig& c, const fsys::path& run_dir, std::size_t max_coordinates) {
  bool ok = true;
  json ops = json::array();
  std::printf("%-24s %12s %10s %s\n", "op", "max rel err", "coords", "result");
  for (const auto& check : num::op_gradient_suite(1e-6, c.seed)) {
    ok = ok && check.report.passed;
    json j = grad_report_json(check.report);
    j["op"] = check.op;
    ops.push_back(j);
    std::printf("%-24s %12.3e %10zu %s\n", check.op.c_str(), check.report.max_relative_error,
                check.report.coordinates_checked, check.report.passed ? "ok" : "FAIL");
  }
  num::GradCheckOptions options;
  options.tolerance = 1e-4;
  options.seed = c.seed;
  options.max_coordinates = max_coordinates == 0 ? std::numeric_limits<std::size_t>::max() : max_coordinates;
  const auto block = enc::block_gradient_check(c.encoder, options);
  ok = ok && block.passed;
  std::printf("%-24s %12.3e %10zu %s\n", "encoder block", block.max_relative_error, block.coordinates_checked,
              block.passed ? "ok" : "FAIL");
  write_json(run_dir / "report.json", {{"ops", ops}, {"encoder_block", grad_report_json(block)}, {"passed", ok}});
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Concept-annotated pre-training and few-shot NER evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand every subcommand's help");
  Common common;

  std::vector<std::unique_ptr<Command>> commands;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "YAML config with one section per module")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Global seed; every module seed derives from it");
    sub->add_option("--out", common.out, "Base directory for timestamped run directories");
    sub->add_option("--set", common.sets, "Override a config key: section.key=value")->take_all();
  };
  auto make = [&](CLI::App* parent, const std::string& name, const std::string& help,
                  std::vector<PathOption> paths) -> Command& {
    auto cmd = std::make_unique<Command>();
    cmd->name = parent == &app ? name : parent->get_name() + "-" + name;
    cmd->app = parent->add_subcommand(name, help);
    cmd->path_options = std::move(paths);
    for (const auto& p : cmd->path_options) cmd->app->add_option(p.flag, cmd->path_values[p.key], p.help);
    add_common(cmd->app);
    commands.push_back(std::move(cmd));
    return *commands.back();
  };

  auto* data = app.add_subcommand("data", "Annotation, dataset building and corpus statistics");
  data->require_subcommand(1);
  auto* train = app.add_subcommand("train", "Masked-LM or concept pre-training");
  train->require_subcommand(1);
  auto* eval = app.add_subcommand("eval", "Few-shot evaluation and ablations");
  eval->require_subcommand(1);

  bool resume = false;
  Command& annotate = make(data, "annotate", "Annotate raw sentences through a chat-completion endpoint",
                           {{"input", "--input", "Sentences: dataset JSONL or one per line", true, true},
                            {"output", "--output", "Annotation records (JSONL, appended)", false, true},
                            {"ledger", "--ledger", "Progress ledger (default: <output>.ledger)", false, false},
                            {"failures", "--failures", "Failed requests (default: <output>.failures.jsonl)", false,
                             false}});
  annotate.app->add_flag("--resume", resume, "Continue into an existing output, skipping finished ids");
  add_flag_override<std::size_t>(annotate, "--max-concurrent", "Requests in flight", "annotator", "max_concurrent");
  add_flag_override<std::string>(annotate, "--base-url", "Chat-completion base URL", "annotator", "base_url");
  add_flag_override<std::string>(annotate, "--model", "Model name", "annotator", "model_name");
  annotate.prepare = [&resume](RunConfig& c) {
    const std::string output = path_of(c, "output");
    if (!c.paths.count("ledger")) c.paths["ledger"] = output + ".ledger";
    if (!c.paths.count("failures")) c.paths["failures"] = output + ".failures.jsonl";
    std::error_code ec;
    if (!resume && fsys::exists(output) && fsys::file_size(output, ec) > 0) {
      throw ConfigError("output " + output + " already has records; pass --resume to continue it");
    }
    // Fails with ConfigError when the key variable is unset.
    ann::ChatClient probe(c.annotator);
  };
  annotate.body = [&resume](RunConfig& c, const fsys::path& dir) { return data_annotate(c, dir, resume); };

  Command& build = make(data, "build", "Parse, align and filter an annotation dump into a dataset",
                        {{"dump", "--input", "Annotation records written by data annotate", true, true},
                         {"output", "--output", "Dataset JSONL (default: in the run directory)", false, false}});
  build.body = data_build;

  Command& stats = make(data, "stats", "Concept-frequency statistics of a dataset",
                        {{"dataset", "--dataset", "Dataset JSONL", true, true}});
  stats.body = data_stats;

  Command& synth = make(data, "synth", "Write a synthetic pre-training corpus and NER task", {});
  synth.body = data_synth;

  Command& mlm = make(train, "mlm", "Masked-LM pre-training of a base encoder",
                      {{"corpus", "--corpus", "Sentences: dataset JSONL or one per line", true, true}});
  add_flag_override<std::size_t>(mlm, "--epochs", "Training epochs", "mlm", "epochs");
  mlm.body = train_mlm;

  Command& pretrain = make(train, "pretrain", "Contrastive concept pre-training",
                           {{"dataset", "--dataset", "Annotated dataset JSONL", true, true},
                            {"init_checkpoint", "--init-checkpoint", "Start from this encoder", true, false}});
  add_flag_override<std::size_t>(pretrain, "--epochs", "Training epochs", "pretrain", "epochs");
  add_flag_override<std::size_t>(pretrain, "--batch-size", "Sentences per step", "pretrain", "batch_size");
  add_flag_override<double>(pretrain, "--lr", "Peak learning rate", "pretrain", "lr_max");
  pretrain.body = train_pretrain;

  const std::vector<PathOption> eval_paths = {
      {"checkpoint", "--checkpoint", "Encoder checkpoint", true, true},
      {"train", "--train", "Downstream training pool (dataset JSONL with entity types)", true, true},
      {"test", "--test", "Downstream test set", true, true}};
  Command& fewshot = make(eval, "fewshot", "Few-shot protocol over k values", eval_paths);
  auto add_protocol_flags = [](Command& cmd) {
    add_flag_override<std::size_t>(cmd, "--runs", "Sampled training sets per k", "fewshot", "runs_per_k");
    add_flag_override<std::string>(cmd, "--mode", "k2k or words", "fewshot", "mode");
    add_flag_override<std::string>(cmd, "--head", "linear (frozen encoder) or finetune", "fewshot", "head");
  };
  {
    auto ks = std::make_shared<std::vector<std::size_t>>();
    fewshot.app->add_option("--k", *ks, "Shot counts, e.g. 1,4,16")->delimiter(',');
    fewshot.overrides.push_back([ks](json& doc) {
      if (!ks->empty()) doc["fewshot"]["k_values"] = *ks;
    });
  }
  add_protocol_flags(fewshot);
  fewshot.body = eval_fewshot;

  const std::vector<PathOption> ablation_paths = {
      {"dataset", "--dataset", "Pre-training dataset JSONL", true, true},
      {"train", "--train", "Downstream training pool", true, true},
      {"test", "--test", "Downstream test set", true, true},
      {"init_checkpoint", "--init-checkpoint", "Start every pre-training run from this encoder", true, false}};
  auto add_ablation_flags = [&](Command& cmd, const char* list_flag, const char* list_key, const char* help) {
    auto values = std::make_shared<std::vector<std::size_t>>();
    cmd.app->add_option(list_flag, *values, help)->delimiter(',');
    cmd.overrides.push_back([values, list_key](json& doc) {
      if (!values->empty()) doc["ablation"][list_key] = *values;
    });
    add_flag_override<std::size_t>(cmd, "--k", "Shot count of each evaluation", "ablation", "k");
    add_flag_override<std::size_t>(cmd, "--epochs", "Pre-training epochs", "pretrain", "epochs");
    add_protocol_flags(cmd);
  };
  Command& ablate_concepts_cmd =
      make(eval, "ablate-concepts", "Pre-train on the top-n concepts for each n, then evaluate", ablation_paths);
  add_ablation_flags(ablate_concepts_cmd, "--n", "concept_n", "Concept counts, e.g. 4,16 (0 = all)");
  ablate_concepts_cmd.body = [](RunConfig& c, const fsys::path& dir) { return eval_ablation(c, dir, true); };
  Command& ablate_size_cmd =
      make(eval, "ablate-size", "Pre-train on subsamples of each size, then evaluate", ablation_paths);
  add_ablation_flags(ablate_size_cmd, "--sizes", "sizes", "Corpus sizes, e.g. 500,2000");
  ablate_size_cmd.body = [](RunConfig& c, const fsys::path& dir) { return eval_ablation(c, dir, false); };

  std::size_t max_coordinates = 0;
  Command& grad = make(&app, "gradcheck", "Finite-difference check of every op and one encoder block", {});
  grad.app->add_option("--max-coordinates", max_coordinates, "Sample this many block coordinates (0 = all)");
  grad.body = [&max_coordinates](RunConfig& c, const fsys::path& dir) { return gradcheck(c, dir, max_coordinates); };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  Command* chosen = nullptr;
  for (auto& cmd : commands) {
    if (cmd->app->parsed()) chosen = cmd.get();
  }
  if (chosen == nullptr) return kExitUsage;

  RunConfig config;
  fsys::path run_dir;
  try {
    json doc = common.config_path.empty() ? json::object() : load_config_document(common.config_path);
    if (doc.is_null()) doc = json::object();
    for (const auto& s : common.sets) apply_override(doc, s);
    for (const auto& o : chosen->overrides) o(doc);
    if (common.seed) doc["seed"] = *common.seed;
    for (const auto& p : chosen->path_options) {
      const std::string& v = chosen->path_values[p.key];
      if (!v.empty()) doc["paths"][p.key] = fsys::absolute(v).lexically_normal().string();
    }
    config = run_config_from_json(doc);
    // Only the paths this command uses are echoed.
    std::map<std::string, std::string> used;
    for (const auto& p : chosen->path_options) {
      const auto it = config.paths.find(p.key);
      if (it != config.paths.end()) used[p.key] = it->second;
    }
    config.paths = std::move(used);
    config.resolve();
    for (const auto& p : chosen->path_options) {
      const auto it = config.paths.find(p.key);
      if (it == config.paths.end()) {
        if (p.required) throw ConfigError(std::string("missing required ") + p.flag);
        continue;
      }
      if (p.input && !fsys::exists(it->second)) {
        throw ConfigError(std::string(p.flag) + ": no such file: " + it->second);
      }
    }
    if (chosen->prepare) chosen->prepare(config);
  } catch (const ConfigError& e) {
    std::cerr << "nuner " << chosen->name << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const ann::ConfigError& e) {
    std::cerr << "nuner " << chosen->name << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "nuner " << chosen->name << ": configuration error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    run_dir = make_run_directory(common.out, chosen->name);
    write_text(run_dir / "config.yaml", to_yaml(run_config_to_json(config)));
    std::cerr << "run directory " << run_dir.string() << "\n";
    return chosen->body(config, run_dir);
  } catch (const std::exception& e) {
    std::cerr << "nuner " << chosen->name << ": " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace nuner::cli
