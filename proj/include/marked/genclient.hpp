#pragma once

// Prompt grids, an OpenAI-compatible generation client with retries and a
// resumable JSONL cache, and refusal scanning.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "marked/corpus.hpp"

namespace marked {

enum class TemplateKind { persona, story, sentiment_modified };
std::string_view to_string(TemplateKind k);

/// Placeholders: {<axis name>} (rendered with the axis display name),
/// {pronoun} (object form), {pronoun_subject}, {pronoun_be}. The literal
/// "a(n)" becomes "a" or "an" depending on the word that follows.
struct PromptTemplate {
  std::string id;
  std::string text;
  TemplateKind kind = TemplateKind::persona;
};

/// persona_1..persona_6, story_1, story_2, sentiment_like, sentiment_dislike.
const std::vector<PromptTemplate>& bundled_templates();
/// "persona", "story", "sentiment_modified", "all", or a comma-separated list of ids.
std::vector<PromptTemplate> select_templates(std::string_view spec);

struct GenerationParams {
  std::string model;
  double temperature = 1.0;
  int max_tokens = 256;
};

/// 150 for the gpt-4 family, 256 otherwise.
int default_max_tokens(std::string_view model);

struct GenerationJob {
  GroupSelector group;
  std::string template_id;
  int sample_index = 0;
  std::string rendered_prompt;
  GenerationParams params;

  /// Cache key and persona id; a pure function of group, template, index, model and params.
  std::string key() const;
};

std::string render_prompt(const PromptTemplate& tpl, const GroupSelector& group, const AxisSchema& schema);

/// groups x templates x samples jobs, groups being every full combination of
/// the schema's axis values.
std::vector<GenerationJob> render_grid(const AxisSchema& schema, std::span<const PromptTemplate> templates,
                                       int samples_per_prompt, const GenerationParams& params);

enum class ApiMode { chat, completions };

struct BackoffSchedule {
  std::chrono::milliseconds initial{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max{30000};

  std::chrono::milliseconds delay(int attempt) const;
};

struct EndpointConfig {
  std::string base_url = "https://api.openai.com/v1";
  /// Name of the environment variable holding the key; never the key itself.
  std::string api_key_env_var = "OPENAI_API_KEY";
  std::chrono::seconds timeout{120};
  int max_retries = 5;
  BackoffSchedule backoff;
  int max_concurrency = 4;
  ApiMode mode = ApiMode::chat;

  static EndpointConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

struct RunStats {
  std::size_t jobs = 0;
  std::size_t cached = 0;
  std::size_t completed = 0;
  std::size_t failed = 0;
  /// HTTP attempts, retries included.
  std::size_t requests = 0;
  /// Highest number of simultaneously in-flight requests observed.
  std::size_t peak_in_flight = 0;
};

struct RunResult {
  PersonaCorpus corpus;
  RunStats stats;
};

/// Executes every job not already in the cache file, appending each result
/// to the cache as one persona record. Jobs that exhaust their retries go to
/// the failures file as {"key", "error"} records. Authentication failures
/// abort the run with NetworkError. The returned corpus holds the jobs'
/// personas in job order.
RunResult run_jobs(const std::vector<GenerationJob>& jobs, const EndpointConfig& endpoint, const AxisSchema& schema,
                   const std::filesystem::path& cache_path, const std::filesystem::path& failures_path);

/// Replaces every occurrence of the secret.
std::string redact(std::string text, std::string_view secret);

struct RefusalRow {
  std::string template_id;
  std::string model;
  std::size_t n = 0;
  std::size_t refused = 0;
  double pct = 0.0;
};

/// Per (template, model): percentage of raw outputs containing any marker,
/// case-insensitively.
std::vector<RefusalRow> refusal_scan(const PersonaCorpus& corpus, std::span<const std::string> markers);
void write_refusal_tsv(std::ostream& os, std::span<const RefusalRow> rows);

}  // namespace marked
