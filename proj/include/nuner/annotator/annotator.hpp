#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "nuner/corpus/annotations.hpp"

namespace nuner::ann {

struct AnnotatorConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model_name = "gpt-3.5-turbo-0301";
  std::string api_key_env = "OPENAI_API_KEY";
  std::size_t max_concurrent = 4;
  std::size_t max_retries = 5;
  double initial_backoff_s = 1.0;
  double max_backoff_s = 60.0;
  double request_timeout_s = 60.0;
  double temperature = 0.0;

  /// Throws std::invalid_argument.
  void validate() const;
};

nlohmann::json annotator_config_to_json(const AnnotatorConfig& config);
/// Unknown keys throw std::invalid_argument.
AnnotatorConfig annotator_config_from_json(const nlohmann::json& j);

/// The annotation prompt with its placeholder, byte for byte.
const std::string& prompt_template();

/// Throws std::invalid_argument for an empty sentence.
std::string render_prompt(std::string_view sentence_text);

/// Delay before retry number `retry` (0-based): initial * 2^retry, capped.
double backoff_delay(double initial_s, std::size_t retry, double cap_s = 60.0);

/// Missing or empty API key variable.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ChatResult {
  bool ok = false;
  std::string content;
  /// Last HTTP status; 0 for a connection-level failure.
  int status = 0;
  std::size_t retries = 0;
  std::string error;
  bool interrupted = false;
};

/// POSTs {base_url}/chat/completions. 429, 5xx and connection failures are
/// retried with exponential backoff; other 4xx fail immediately.
class ChatClient {
 public:
  /// Reads the key from config.api_key_env; throws ConfigError when unset.
  explicit ChatClient(AnnotatorConfig config);
  ChatClient(AnnotatorConfig config, std::string api_key);
  ChatClient(const ChatClient&) = delete;
  ChatClient& operator=(const ChatClient&) = delete;

  ChatResult complete(const std::string& prompt, std::stop_token stop = {}) const;
  const AnnotatorConfig& config() const { return config_; }

 private:
  AnnotatorConfig config_;
  std::string api_key_;
  /// scheme://host[:port] and the path prefix of base_url.
  std::string origin_;
  std::string path_;
};

struct SentenceOutcome {
  std::string id;
  std::string text;
  std::string completion;
  std::optional<corpus::SentenceIngest> ingest;
  std::size_t retries = 0;
  int status = 0;
  std::string error;
  /// Abandoned because of a stop request; neither done nor failed.
  bool interrupted = false;

  bool ok() const { return ingest.has_value(); }
};

/// Renders, requests and aligns one sentence. Failures are returned, not thrown.
SentenceOutcome annotate_sentence(const ChatClient& client, const std::string& id, const std::string& text,
                                  std::stop_token stop = {});

struct InputSentence {
  std::string id;
  std::string text;
};

/// Dataset JSONL (first line a dataset header) or plain text with one
/// sentence per line; plain lines get ids "line-N" (1-based, blank lines
/// skipped but counted).
std::vector<InputSentence> read_annotation_input(const std::filesystem::path& path);

struct AnnotationJob {
  std::filesystem::path input;
  std::filesystem::path output;
  std::filesystem::path ledger;
  /// Defaults to `output` with ".failures.jsonl" appended.
  std::optional<std::filesystem::path> failures;
  AnnotatorConfig config;
};

struct AnnotationSummary {
  std::size_t total = 0;
  std::size_t already_done = 0;
  std::size_t completed = 0;
  std::size_t failed = 0;
  std::size_t skipped_lines = 0;
  std::size_t unaligned_annotations = 0;
  std::size_t retries = 0;
  bool interrupted = false;
};

nlohmann::json summary_to_json(const AnnotationSummary& summary);

/// Output record of one annotated sentence; read back by corpus::read_dump.
nlohmann::json outcome_to_json(const SentenceOutcome& outcome);

/// Annotates every input id not yet in the ledger with at most
/// max_concurrent requests in flight. Each result is appended to the output
/// and then to the ledger. On start the ledger is reconciled with the output
/// (a complete output record counts as done; a torn last line is removed).
/// A stop request lets in-flight requests finish and then returns.
/// The client's configuration governs; job.config is not consulted.
AnnotationSummary annotate_corpus(const AnnotationJob& job, const ChatClient& client, std::stop_token stop = {});
/// Builds the client from job.config (throws ConfigError without a key).
AnnotationSummary annotate_corpus(const AnnotationJob& job, std::stop_token stop = {});

}  // namespace nuner::ann
