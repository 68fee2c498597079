// SPDX-License-Identifier: Apache-2.0
//
// HTTP client for an external text generator or judge. Requests are JSON
// POSTs; replies are JSON objects. Requests to the same endpoint are
// serialized; transport failures are retried a bounded number of times.
#pragma once

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "oculus/report/dsl.hpp"
#include "oculus/report/engine.hpp"

namespace oculus::report {

struct EndpointConfig {
  std::string url;  // http://host:port/path
  double timeout_seconds = 30.0;
  std::size_t max_response_bytes = 1 << 20;
  int max_retries = 2;
  double retry_backoff_seconds = 0.2;
};

namespace external_detail {

struct ParsedUrl {
  std::string origin;  // scheme://host:port
  std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos || url.substr(0, scheme_end) != "http")
    throw ConfigError("endpoint url must start with http:// (got '" + url + "')");
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.origin = path_start == std::string::npos ? url : url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (out.origin.size() <= scheme_end + 3) throw ConfigError("endpoint url has no host: '" + url + "'");
  return out;
}

inline std::mutex& endpoint_mutex(const std::string& url) {
  static std::mutex registry_guard;
  static std::map<std::string, std::unique_ptr<std::mutex>> registry;
  std::lock_guard lock(registry_guard);
  auto& m = registry[url];
  if (!m) m = std::make_unique<std::mutex>();
  return *m;
}

}  // namespace external_detail

/// POSTs `body` and returns the parsed JSON reply. Throws TransportError when
/// the endpoint cannot be reached or answers with a non-2xx status after all
/// retries, ValidationError when the reply is oversized or not JSON.
inline nlohmann::json post_json(const EndpointConfig& cfg, const nlohmann::json& body) {
  const auto url = external_detail::parse_url(cfg.url);
  std::lock_guard lock(external_detail::endpoint_mutex(cfg.url));
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::duration<double>(cfg.timeout_seconds);
  const auto sec = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(timeout - sec);
  client.set_connection_timeout(sec.count(), usec.count());
  client.set_read_timeout(sec.count(), usec.count());
  client.set_write_timeout(sec.count(), usec.count());

  std::string last_error;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::duration<double>(cfg.retry_backoff_seconds * attempt));
    std::string received;
    bool oversized = false;
    httplib::Request req;
    req.method = "POST";
    req.path = url.path;
    req.body = body.dump();
    req.set_header("Content-Type", "application/json");
    req.content_receiver = [&](const char* data, std::size_t len, std::uint64_t, std::uint64_t) {
      if (received.size() + len > cfg.max_response_bytes) {
        oversized = true;
        return false;
      }
      received.append(data, len);
      return true;
    };
    auto res = client.send(req);
    if (oversized)
      throw ValidationError("reply from " + cfg.url + " exceeds " + std::to_string(cfg.max_response_bytes) + " bytes");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_error = "HTTP status " + std::to_string(res->status);
      if (res->status >= 500) continue;
      break;
    }
    try {
      return nlohmann::json::parse(received);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("reply from " + cfg.url + " is not JSON: " + e.what());
    }
  }
  throw TransportError("request to " + cfg.url + " failed: " + last_error);
}

/// Sends {"prompt": ...} and returns the reply's "text" field verbatim.
inline std::string external_generator(const std::string& prompt, const EndpointConfig& cfg) {
  const auto reply = post_json(cfg, {{"prompt", prompt}});
  if (!reply.is_object() || !reply.contains("text") || !reply.at("text").is_string())
    throw ValidationError("reply from " + cfg.url + " has no string field 'text'");
  return reply.at("text").get<std::string>();
}

/// Prompt describing one patient to an external report generator.
inline std::string generator_prompt(const BiomarkerVector& b, DiagnosisLabel g, const EyeGuidelineRules& rules) {
  std::string out = "Write a grounded eye report in the FINDING/INFER/DIAGNOSIS format.\nbiomarkers:\n";
  for (std::size_t i = 0; i < kNumBiomarkers; ++i) {
    const auto& s = biomarker_spec(i);
    out += std::string(s.name) + ' ' + dsl_detail::format_value(b[i]) + ' ' + std::string(s.unit) + " reference " +
           dsl_detail::format_value(rules.ranges[i].low) + ".." + dsl_detail::format_value(rules.ranges[i].high) + '\n';
  }
  out += "label: " + std::string(to_string(g));
  return out;
}

enum class ReportSource { rule_engine, external };

struct GeneratedReport {
  ReportAST ast;
  ReportSource source = ReportSource::rule_engine;
  std::string fallback_reason;  // set when the rule engine stood in
};

/// External generation with optional rule-engine fallback. Only transport
/// failures fall back; a reachable endpoint that answers with a malformed
/// report raises ValidationError so that no sample is emitted from it.
inline GeneratedReport generate_report(const BiomarkerVector& b, DiagnosisLabel g, const EyeGuidelineRules& rules,
                                       const std::optional<EndpointConfig>& endpoint, bool fallback) {
  if (!endpoint) return {eye_guideline_report(b, g, rules), ReportSource::rule_engine, {}};
  std::string text;
  try {
    text = external_generator(generator_prompt(b, g, rules), *endpoint);
  } catch (const TransportError& e) {
    if (!fallback) throw;
    return {eye_guideline_report(b, g, rules), ReportSource::rule_engine, e.what()};
  }
  try {
    return {parse_report(text), ReportSource::external, {}};
  } catch (const ParseError& e) {
    throw ValidationError(std::string("external generator returned a non-conforming report: ") + e.what());
  }
}

}  // namespace oculus::report
