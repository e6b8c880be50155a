#include "nuner/annotator/annotator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <httplib.h>

#include "nuner/corpus/dataset.hpp"

namespace nuner::ann {

namespace detail {
extern const char kPromptTemplate[];
}

namespace {

constexpr std::string_view kPlaceholder = "{sentence}";

using json = nlohmann::json;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

// Sleeps for `seconds` unless a stop is requested first; returns false when stopped.
bool interruptible_sleep(double seconds, std::stop_token stop) {
  std::mutex m;
  std::condition_variable_any cv;
  std::unique_lock lock(m);
  const auto duration = std::chrono::duration<double>(seconds);
  return !cv.wait_for(lock, stop, std::chrono::duration_cast<std::chrono::nanoseconds>(duration),
                      [] { return false; }) &&
         !stop.stop_requested();
}

bool retryable(int status) { return status == 0 || status == 429 || status >= 500; }

// Complete lines of a file; a trailing fragment without a newline is cut off
// the file so appends start on a fresh line.
std::vector<std::string> complete_lines_and_repair(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  if (!std::filesystem::exists(path)) return lines;
  std::string content;
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    content = ss.str();
  }
  const std::size_t end = content.rfind('\n');
  const std::size_t keep = end == std::string::npos ? 0 : end + 1;
  if (keep != content.size()) std::filesystem::resize_file(path, keep);
  std::size_t pos = 0;
  while (pos < keep) {
    const std::size_t nl = content.find('\n', pos);
    lines.push_back(content.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

std::ofstream open_append(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for appending");
  return out;
}

}  // namespace

void AnnotatorConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("annotator config: " + m); };
  if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0) {
    fail("base_url must start with http:// or https://");
  }
  if (model_name.empty()) fail("model_name is empty");
  if (api_key_env.empty()) fail("api_key_env is empty");
  if (max_concurrent == 0) fail("max_concurrent must be at least 1");
  if (!(initial_backoff_s >= 0.0)) fail("initial_backoff must be non-negative");
  if (!(max_backoff_s >= 0.0) || max_backoff_s > 60.0) fail("max_backoff must be in [0, 60] seconds");
  if (!(request_timeout_s > 0.0)) fail("request_timeout must be positive");
  if (!(temperature >= 0.0)) fail("temperature must be non-negative");
}

json annotator_config_to_json(const AnnotatorConfig& c) {
  return {{"base_url", c.base_url},
          {"model_name", c.model_name},
          {"api_key_env", c.api_key_env},
          {"max_concurrent", c.max_concurrent},
          {"max_retries", c.max_retries},
          {"initial_backoff_s", c.initial_backoff_s},
          {"max_backoff_s", c.max_backoff_s},
          {"request_timeout_s", c.request_timeout_s},
          {"temperature", c.temperature}};
}

AnnotatorConfig annotator_config_from_json(const json& j) {
  AnnotatorConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "base_url") c.base_url = v.get<std::string>();
    else if (key == "model_name") c.model_name = v.get<std::string>();
    else if (key == "api_key_env") c.api_key_env = v.get<std::string>();
    else if (key == "max_concurrent") c.max_concurrent = v.get<std::size_t>();
    else if (key == "max_retries") c.max_retries = v.get<std::size_t>();
    else if (key == "initial_backoff_s") c.initial_backoff_s = v.get<double>();
    else if (key == "max_backoff_s") c.max_backoff_s = v.get<double>();
    else if (key == "request_timeout_s") c.request_timeout_s = v.get<double>();
    else if (key == "temperature") c.temperature = v.get<double>();
    else throw std::invalid_argument("annotator config: unknown key " + key);
  }
  return c;
}

const std::string& prompt_template() {
  static const std::string text(detail::kPromptTemplate);
  return text;
}

std::string render_prompt(std::string_view sentence_text) {
  if (sentence_text.empty()) throw std::invalid_argument("render_prompt: empty sentence");
  std::string out = prompt_template();
  const std::size_t at = out.find(kPlaceholder);
  out.replace(at, kPlaceholder.size(), sentence_text);
  return out;
}

double backoff_delay(double initial_s, std::size_t retry, double cap_s) {
  return std::min(cap_s, initial_s * std::ldexp(1.0, static_cast<int>(std::min<std::size_t>(retry, 62))));
}

ChatClient::ChatClient(AnnotatorConfig config)
    : ChatClient(config, [&] {
        const char* key = std::getenv(config.api_key_env.c_str());
        if (!key || !*key) {
          throw ConfigError("API key environment variable " + config.api_key_env + " is not set");
        }
        return std::string(key);
      }()) {}

ChatClient::ChatClient(AnnotatorConfig config, std::string api_key)
    : config_(std::move(config)), api_key_(std::move(api_key)) {
  config_.validate();
  const std::size_t scheme_end = config_.base_url.find("://") + 3;
  const std::size_t slash = config_.base_url.find('/', scheme_end);
  origin_ = config_.base_url.substr(0, slash);
  path_ = slash == std::string::npos ? "" : config_.base_url.substr(slash);
  while (!path_.empty() && path_.back() == '/') path_.pop_back();
}

ChatResult ChatClient::complete(const std::string& prompt, std::stop_token stop) const {
  // One connection object per call keeps concurrent callers independent.
  httplib::Client http(origin_);
  const auto timeout = std::chrono::duration<double>(config_.request_timeout_s);
  http.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  http.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  http.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  http.set_bearer_token_auth(api_key_);
  const json body = {{"model", config_.model_name},
                     {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                     {"temperature", config_.temperature}};
  const std::string payload = body.dump();
  const std::string target = path_ + "/chat/completions";

  ChatResult result;
  for (std::size_t attempt = 0;; ++attempt) {
    if (stop.stop_requested()) {
      result.interrupted = true;
      result.error = "interrupted";
      return result;
    }
    auto res = http.Post(target, payload, "application/json");
    if (!res) {
      result.status = 0;
      result.error = "connection error: " + httplib::to_string(res.error());
    } else {
      result.status = res->status;
      if (res->status >= 200 && res->status < 300) {
        try {
          const json reply = json::parse(res->body);
          const json& content = reply.at("choices").at(0).at("message").at("content");
          result.content = content.is_null() ? std::string() : content.get<std::string>();
          result.ok = true;
          result.error.clear();
        } catch (const std::exception& e) {
          result.error = std::string("malformed completion response: ") + e.what();
        }
        return result;
      }
      result.error = "HTTP " + std::to_string(res->status);
    }
    if (!retryable(result.status) || attempt >= config_.max_retries) return result;
    if (!interruptible_sleep(backoff_delay(config_.initial_backoff_s, attempt, config_.max_backoff_s), stop)) {
      result.interrupted = true;
      result.error = "interrupted";
      return result;
    }
    ++result.retries;
  }
}

SentenceOutcome annotate_sentence(const ChatClient& client, const std::string& id, const std::string& text,
                                  std::stop_token stop) {
  SentenceOutcome out;
  out.id = id;
  out.text = text;
  if (trim(text).empty()) {
    out.error = "empty sentence";
    return out;
  }
  ChatResult r = client.complete(render_prompt(text), stop);
  out.retries = r.retries;
  out.status = r.status;
  out.interrupted = r.interrupted;
  if (!r.ok) {
    out.error = r.error;
    return out;
  }
  out.completion = r.content;
  out.ingest = corpus::ingest_completion(id, text, r.content);
  return out;
}

std::vector<InputSentence> read_annotation_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open input " + path.string());
  std::string first;
  while (std::getline(in, first) && trim(first).empty()) {
  }
  bool dataset = false;
  if (!trim(first).empty() && trim(first).front() == '{') {
    const json header = json::parse(first, nullptr, false);
    dataset = header.is_object() && header.value("format", "") == corpus::kDatasetFormat;
  }
  std::vector<InputSentence> out;
  if (dataset) {
    for (auto& s : corpus::read_dataset(path).sentences) out.push_back({std::move(s.id), std::move(s.text)});
    return out;
  }
  in.clear();
  in.seekg(0);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    out.push_back({"line-" + std::to_string(n), line});
  }
  return out;
}

json summary_to_json(const AnnotationSummary& s) {
  return {{"total", s.total},
          {"already_done", s.already_done},
          {"completed", s.completed},
          {"failed", s.failed},
          {"skipped_lines", s.skipped_lines},
          {"unaligned_annotations", s.unaligned_annotations},
          {"retries", s.retries},
          {"interrupted", s.interrupted}};
}

json outcome_to_json(const SentenceOutcome& o) {
  json j = {{"id", o.id}, {"text", o.text}, {"completion", o.completion}, {"retries", o.retries}};
  if (o.ingest) {
    j["annotations"] = corpus::sentence_to_json(o.ingest->sentence).at("annotations");
    j["skipped_lines"] = o.ingest->skipped_lines;
    j["unaligned"] = o.ingest->unaligned;
  }
  return j;
}

AnnotationSummary annotate_corpus(const AnnotationJob& job, std::stop_token stop) {
  const ChatClient client(job.config);
  return annotate_corpus(job, client, stop);
}

AnnotationSummary annotate_corpus(const AnnotationJob& job, const ChatClient& client, std::stop_token stop) {
  const std::vector<InputSentence> inputs = read_annotation_input(job.input);
  {
    std::unordered_set<std::string> seen;
    for (const auto& s : inputs) {
      if (!seen.insert(s.id).second) throw std::invalid_argument("annotate: duplicate input id " + s.id);
    }
  }

  std::unordered_set<std::string> done;
  for (auto& id : complete_lines_and_repair(job.ledger)) {
    if (!trim(id).empty()) done.insert(trim(id));
  }
  std::vector<std::string> recovered;
  for (const auto& line : complete_lines_and_repair(job.output)) {
    const json j = json::parse(line, nullptr, false);
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) continue;
    const std::string id = j["id"].get<std::string>();
    if (done.insert(id).second) recovered.push_back(id);
  }
  const std::filesystem::path failures_path =
      job.failures.value_or(std::filesystem::path(job.output.string() + ".failures.jsonl"));
  complete_lines_and_repair(failures_path);

  std::ofstream ledger = open_append(job.ledger);
  for (const auto& id : recovered) ledger << id << '\n';
  ledger.flush();
  std::ofstream output = open_append(job.output);
  std::ofstream failures;

  AnnotationSummary summary;
  summary.total = inputs.size();
  std::vector<const InputSentence*> pending;
  for (const auto& s : inputs) {
    if (done.contains(s.id)) ++summary.already_done;
    else pending.push_back(&s);
  }

  std::mutex writer;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (!stop.stop_requested()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      SentenceOutcome o = annotate_sentence(client, pending[i]->id, pending[i]->text, stop);
      std::lock_guard lock(writer);
      summary.retries += o.retries;
      if (o.interrupted) {
        summary.interrupted = true;
      } else if (o.ok()) {
        output << outcome_to_json(o).dump() << '\n';
        output.flush();
        ledger << o.id << '\n';
        ledger.flush();
        ++summary.completed;
        summary.skipped_lines += o.ingest->skipped_lines;
        summary.unaligned_annotations += o.ingest->unaligned;
      } else {
        if (!failures.is_open()) failures = open_append(failures_path);
        failures << json{{"id", o.id}, {"text", o.text}, {"status", o.status}, {"retries", o.retries},
                         {"error", o.error}}
                        .dump()
                 << '\n';
        failures.flush();
        ++summary.failed;
      }
    }
  };
  const std::size_t workers = std::min(client.config().max_concurrent, pending.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (!output || !ledger) throw std::runtime_error("annotate: write to output or ledger failed");
  if (summary.completed + summary.failed < pending.size()) summary.interrupted = true;
  return summary;
}

}  // namespace nuner::ann
