// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <atomic>

#include "oculus/report/external.hpp"
#include "support/stub_server.hpp"

using namespace oculus;
using namespace oculus::report;
using oculus::testing::StubServer;

namespace {

const char* kCanned =
    "FINDING cup_disc_ratio 0.72 unitless high\nFINDING rnfl_average 74.00 um low\n"
    "INFER glaucomatous_optic_neuropathy 0,1\nDIAGNOSIS Glaucoma";

EndpointConfig config_for(const std::string& url) {
  EndpointConfig cfg;
  cfg.url = url;
  cfg.timeout_seconds = 2.0;
  cfg.max_retries = 1;
  cfg.retry_backoff_seconds = 0.01;
  return cfg;
}

}  // namespace

TEST(ExternalGenerator, CannedReplyParsesToCannedAst) {
  std::string seen_prompt;
  StubServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen_prompt = nlohmann::json::parse(req.body).at("prompt").get<std::string>();
    res.set_content(nlohmann::json{{"text", kCanned}}.dump(), "application/json");
  });
  const auto b = BiomarkerVector::midpoints();
  const auto out = generate_report(b, DiagnosisLabel::Glaucoma, default_rules(), config_for(server.url()), false);
  EXPECT_EQ(out.source, ReportSource::external);
  EXPECT_EQ(out.ast, parse_report(kCanned));
  EXPECT_NE(seen_prompt.find("label: Glaucoma"), std::string::npos);
  EXPECT_NE(seen_prompt.find("cup_disc_ratio 0.40 unitless"), std::string::npos);
}

TEST(ExternalGenerator, MalformedReplySurfacesValidationError) {
  StubServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(nlohmann::json{{"text", "FINDING nonsense\nDIAGNOSIS Normal"}}.dump(), "application/json");
  });
  EXPECT_THROW(generate_report(BiomarkerVector::midpoints(), DiagnosisLabel::Normal, default_rules(),
                               config_for(server.url()), true),
               ValidationError);
}

TEST(ExternalGenerator, ReplyWithoutTextFieldIsRejected) {
  StubServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"answer\": 1}", "application/json");
  });
  EXPECT_THROW(external_generator("hi", config_for(server.url())), ValidationError);
}

TEST(ExternalGenerator, OversizedReplyIsRejected) {
  StubServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(nlohmann::json{{"text", std::string(4096, 'a')}}.dump(), "application/json");
  });
  auto cfg = config_for(server.url());
  cfg.max_response_bytes = 1024;
  EXPECT_THROW(external_generator("hi", cfg), ValidationError);
}

TEST(ExternalGenerator, UnreachableEndpointFallsBackToRuleEngine) {
  const auto b = BiomarkerVector::midpoints();
  const auto cfg = config_for(oculus::testing::dead_url());
  const auto out = generate_report(b, DiagnosisLabel::Normal, default_rules(), cfg, true);
  EXPECT_EQ(out.source, ReportSource::rule_engine);
  EXPECT_FALSE(out.fallback_reason.empty());
  EXPECT_EQ(out.ast, eye_guideline_report(b, DiagnosisLabel::Normal, default_rules()));
  EXPECT_THROW(generate_report(b, DiagnosisLabel::Normal, default_rules(), cfg, false), TransportError);
}

TEST(ExternalGenerator, ServerErrorsAreRetriedThenReported) {
  std::atomic<int> calls{0};
  StubServer server([&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 503;
  });
  EXPECT_THROW(external_generator("hi", config_for(server.url())), TransportError);
  EXPECT_EQ(calls.load(), 2);
}

TEST(ExternalGenerator, RejectsNonHttpUrls) {
  EXPECT_THROW(external_generator("hi", config_for("ftp://example.org/x")), ConfigError);
}
