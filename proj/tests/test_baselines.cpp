#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "vulnmt/baselines.hpp"
#include "vulnmt/synthetic.hpp"

using namespace vulnmt;
using namespace vulnmt::baselines;

namespace {

corpus::ComponentRecord component(const std::string& src) { return {"c.c", src, corpus::Label::NonVulnerable, std::nullopt, {}}; }

FeatureVector fv(std::map<std::string, double> values) { return {"x", std::move(values)}; }

}  // namespace

TEST(TokenCounts, Counting) {
    const auto c = token_counts("int x; int y;");
    EXPECT_EQ(c.at("int"), 2);
    EXPECT_EQ(c.at("x"), 1);
    EXPECT_EQ(c.at("y"), 1);
    EXPECT_FALSE(c.count(";"));
    const auto f = bow_features(component("int x; int y;"));
    EXPECT_EQ(f.values.at("bow:int"), frequency_bin(2, 10));
    EXPECT_EQ(f.values.at("bow:x"), 0);
}

TEST(TokenCounts, DoublingDoubles) {
    const auto once = token_counts(fixtures::kIgmpVulnerable);
    const auto twice = token_counts(fixtures::kIgmpVulnerable + fixtures::kIgmpVulnerable);
    ASSERT_EQ(once.size(), twice.size());
    for (const auto& [tok, n] : once) EXPECT_EQ(twice.at(tok), 2 * n) << tok;
}

TEST(FrequencyBin, Edges) {
    EXPECT_EQ(frequency_bin(1, 10), 0);
    EXPECT_EQ(frequency_bin(2, 10), 1);
    EXPECT_EQ(frequency_bin(1024, 10), 9);
    EXPECT_EQ(frequency_bin(100000, 10), 9);
    for (long n : {1L, 5L, 500L}) EXPECT_EQ(frequency_bin(n, 1), 0);
    for (long n = 1; n < 2000; ++n) EXPECT_LE(frequency_bin(n, 10), frequency_bin(n + 1, 10));
    EXPECT_THROW(bow_features(component("int x;"), 0), ConfigError);
}

TEST(Imports, NoIncludesNoFeatures) {
    EXPECT_TRUE(import_features(component("int x;")).values.empty());
    const auto f = import_features(component("#include <linux/igmp.h>\nint x;"));
    EXPECT_EQ(f.values.at("imp:linux/igmp.h"), 1.0);
}

TEST(Calls, IgmpCalls) {
    const auto calls = called_functions(fixtures::kIgmpVulnerable);
    for (const char* want : {"mod_timer", "atomic_inc", "net_random"}) EXPECT_TRUE(calls.count(want)) << want;
    EXPECT_FALSE(calls.count("igmp_start_timer"));  // defined in the same file
    EXPECT_EQ(call_features(component(fixtures::kIgmpVulnerable)).values.at("call:mod_timer"), 1.0);
}

TEST(StaticMetrics, EmptyFile) {
    const auto m = static_metrics("");
    EXPECT_EQ(m.loc, 0);
    EXPECT_EQ(m.cyclomatic, 0);
    EXPECT_EQ(m.maxNesting, 0);
    EXPECT_EQ(m.nFunctions, 0);
}

TEST(StaticMetrics, HandCount) {
    const auto m = static_metrics("int f(void){ if(a){ if(b){} } return 0; }");
    EXPECT_EQ(m.cyclomatic, 3);
    EXPECT_EQ(m.maxNesting, 3);
    EXPECT_EQ(m.loc, 1);
    EXPECT_EQ(m.nFunctions, 1);
}

TEST(StaticMetrics, FixAddsOneBranch) {
    EXPECT_EQ(static_metrics(fixtures::kIgmpFixed).cyclomatic, static_metrics(fixtures::kIgmpVulnerable).cyclomatic + 1);
}

TEST(Classifier, SeparableToySet) {
    std::vector<std::pair<FeatureVector, bool>> data;
    for (int k = 0; k < 10; ++k) {
        data.emplace_back(fv({{"a", 1.0 + k * 0.1}, {"b", 0.2}}), true);
        data.emplace_back(fv({{"a", 0.1}, {"b", 1.0 + k * 0.1}}), false);
    }
    const auto c = train_classifier(data);
    for (const auto& [f, y] : data) EXPECT_EQ(c.predict(f), y);
}

TEST(Classifier, ZeroIterationsIsBiasOnly) {
    ClassifierConfig cfg;
    cfg.iterations = 0;
    const auto c = train_classifier({{fv({{"a", 1}}), true}, {fv({{"b", 1}}), false}}, cfg);
    for (const auto& [name, w] : c.weights) EXPECT_EQ(w, 0.0) << name;
    EXPECT_EQ(c.bias, 0.0);
    EXPECT_EQ(c.score(fv({{"a", 5}})), 0.5);
}

TEST(Classifier, DuplicatedDataSamePredictions) {
    std::vector<std::pair<FeatureVector, bool>> data;
    Rng rng(5);
    for (int k = 0; k < 30; ++k) {
        const bool y = k % 3 == 0;
        data.emplace_back(fv({{"a", rng.uniform() + (y ? 0.5 : 0.0)}, {"b", rng.uniform()}}), y);
    }
    auto doubled = data;
    doubled.insert(doubled.end(), data.begin(), data.end());
    // class-balanced weights make the doubled objective identical
    const auto a = train_classifier(data), b = train_classifier(doubled);
    for (const auto& [f, y] : data) EXPECT_EQ(a.predict(f), b.predict(f));
}

TEST(Classifier, DegenerateLabels) {
    EXPECT_THROW(train_classifier({}), DegenerateLabels);
    EXPECT_THROW(train_classifier({{fv({{"a", 1}}), true}}), DegenerateLabels);
}

TEST(Techniques, Names) {
    for (auto t : {Technique::SoftwareMetrics, Technique::Imports, Technique::FunctionCalls, Technique::TextMining})
        EXPECT_EQ(parse_technique(technique_name(t)), t);
    EXPECT_THROW(parse_technique("svm"), ConfigError);
}

TEST(Techniques, FeaturesDependOnlyOnSource) {
    auto a = component(fixtures::kIgmpVulnerable);
    auto b = a;
    b.path = "other.c";
    b.label = corpus::Label::Vulnerable;
    for (auto t : {Technique::SoftwareMetrics, Technique::Imports, Technique::FunctionCalls, Technique::TextMining})
        EXPECT_EQ(features(t, a, 10).values, features(t, b, 10).values);
    EXPECT_TRUE(features(Technique::FunctionCalls, component("int f(void) { \"open"), 10).values.empty());
}

TEST(RunBaseline, ReportsPerTechnique) {
    synthetic::SynthesisSpec spec;
    spec.nReleases = 3;
    spec.componentsPerRelease = 30;
    const auto c = synthetic::generate_synthetic_corpus(6, spec);
    BaselineConfig cfg;
    cfg.classifier.iterations = 500;
    for (auto t : {Technique::SoftwareMetrics, Technique::Imports, Technique::FunctionCalls, Technique::TextMining}) {
        const auto r = run_baseline(c, t, corpus::Setting::Clean, cfg);
        ASSERT_EQ(r.size(), 2u);
        EXPECT_EQ(r[0].technique, technique_name(t));
        EXPECT_NO_THROW(evaluate::check_report_schema(evaluate::report_jsonl(r)));
    }
}

TEST(RunBaseline, PlantedCallSignal) {
    synthetic::SynthesisSpec spec;
    spec.nReleases = 2;
    spec.plantSignal = true;
    const auto c = synthetic::generate_synthetic_corpus(1, spec);
    const auto r = run_baseline(c, Technique::FunctionCalls, corpus::Setting::Clean);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_GE(r[0].mcc, 0.9);
}
