#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "vulnmt/evaluate.hpp"
#include "vulnmt/synthetic.hpp"

using namespace vulnmt;
using namespace vulnmt::evaluate;

namespace {

std::map<std::string, corpus::Label> truth(int vuln, int clean) {
    std::map<std::string, corpus::Label> t;
    for (int k = 0; k < vuln; ++k) t["v" + std::to_string(k)] = corpus::Label::Vulnerable;
    for (int k = 0; k < clean; ++k) t["n" + std::to_string(k)] = corpus::Label::NonVulnerable;
    return t;
}

Verdicts verdicts_from(const std::map<std::string, corpus::Label>& t, bool invert) {
    Verdicts v;
    for (const auto& [path, label] : t) v.emplace_back(path, (label == corpus::Label::Vulnerable) != invert);
    return v;
}

}  // namespace

TEST(Confusion, AllCorrectAndInverted) {
    const auto t = truth(3, 7);
    EXPECT_EQ(confusion(verdicts_from(t, false), t), (ConfusionMatrix{3, 0, 7, 0}));
    EXPECT_EQ(confusion(verdicts_from(t, true), t), (ConfusionMatrix{0, 7, 0, 3}));
    EXPECT_THROW(confusion(Verdicts{{"missing", true}}, t), MissingLabel);
}

TEST(Confusion, RandomVerdictsMatchTally) {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const auto t = truth(static_cast<int>(rng.index(20)), static_cast<int>(rng.index(20)));
        Verdicts v;
        long tp = 0, fp = 0, tn = 0, fn = 0;
        for (const auto& [path, label] : t) {
            const bool pred = rng.bernoulli(0.5);
            v.emplace_back(path, pred);
            const bool actual = label == corpus::Label::Vulnerable;
            tp += actual && pred;
            fp += !actual && pred;
            tn += !actual && !pred;
            fn += actual && !pred;
        }
        EXPECT_EQ(confusion(v, t), (ConfusionMatrix{tp, fp, tn, fn}));
    }
}

TEST(Metrics, PerfectAndInverse) {
    const auto p = metrics({5, 0, 5, 0});
    EXPECT_EQ(p.precision, 1.0);
    EXPECT_EQ(p.recall, 1.0);
    EXPECT_EQ(p.fMeasure, 1.0);
    EXPECT_EQ(p.mcc, 1.0);
    EXPECT_EQ(metrics({0, 5, 0, 5}).mcc, -1.0);
}

TEST(Metrics, HandEvaluated) {
    // 3*90 - 2*5 = 260 over sqrt(5*8*92*95)
    EXPECT_NEAR(metrics({3, 2, 90, 5}).mcc, 260.0 / std::sqrt(5.0 * 8 * 92 * 95), 1e-15);
    EXPECT_NEAR(metrics({3, 2, 90, 5}).mcc, 0.4397, 1e-4);
}

TEST(Metrics, ZeroDenominators) {
    const auto m = metrics({0, 0, 10, 0});
    EXPECT_EQ(m.precision, 0.0);
    EXPECT_EQ(m.recall, 0.0);
    EXPECT_EQ(m.fMeasure, 0.0);
    EXPECT_EQ(m.mcc, 0.0);
    EXPECT_EQ(metrics({}).mcc, 0.0);
}

TEST(Metrics, RandomMatricesAgainstOracle) {
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        const long tp = static_cast<long>(rng.index(50)), fp = static_cast<long>(rng.index(50));
        const long tn = static_cast<long>(rng.index(500)), fn = static_cast<long>(rng.index(50));
        const auto m = metrics({tp, fp, tn, fn});
        const auto o = oracles::confusion_scores(tp, fp, tn, fn);
        EXPECT_NEAR(m.precision, o.precision, 1e-12);
        EXPECT_NEAR(m.recall, o.recall, 1e-12);
        EXPECT_NEAR(m.fMeasure, o.fMeasure, 1e-12);
        EXPECT_NEAR(m.mcc, o.mcc, 1e-12);
    }
}

TEST(Breakdown, ExistingAndNovel) {
    corpus::Release train{"a", Date::parse("2020-01-01"), {}}, test{"b", Date::parse("2020-06-01"), {}};
    auto comp = [](const std::string& p, bool v) {
        return corpus::ComponentRecord{p, "int x;", v ? corpus::Label::Vulnerable : corpus::Label::NonVulnerable,
                                       v ? std::optional<std::string>("int y;") : std::nullopt, {}};
    };
    train.components = {comp("e1", true), comp("e2", true), comp("n1", false), comp("n2", false)};
    test.components = {comp("e1", true), comp("e2", true), comp("n1", true), comp("n2", false)};
    const auto b = novel_existing_breakdown({{"e1", true}, {"e2", false}, {"n1", true}, {"n2", true}}, test, train);
    EXPECT_DOUBLE_EQ(*b.existingDetectedPct, 50.0);
    EXPECT_DOUBLE_EQ(*b.novelDetectedPct, 100.0);

    test.components = {comp("e1", true), comp("n1", false)};
    const auto onlyExisting = novel_existing_breakdown({{"e1", true}, {"n1", false}}, test, train);
    EXPECT_FALSE(onlyExisting.novelDetectedPct);
    EXPECT_DOUBLE_EQ(*onlyExisting.existingDetectedPct, 100.0);

    test.components = {comp("n1", true)};
    EXPECT_FALSE(novel_existing_breakdown({{"n1", true}}, test, train).existingDetectedPct);
}

// Set-membership tally on a synthetic corpus with persistence.
TEST(Breakdown, SyntheticTally) {
    synthetic::SynthesisSpec spec;
    spec.persistence = 0.6;
    const auto c = synthetic::generate_synthetic_corpus(8, spec);
    Rng rng(2);
    for (std::size_t i = 0; i + 1 < c.releases.size(); ++i) {
        Verdicts v;
        for (const auto& comp : c.releases[i + 1].components) v.emplace_back(comp.path, rng.bernoulli(0.5));
        long ex = 0, exHit = 0, nov = 0, novHit = 0;
        for (const auto& [path, pred] : v) {
            const auto* now = c.releases[i + 1].find(path);
            if (now->label != corpus::Label::Vulnerable) continue;
            const auto* before = c.releases[i].find(path);
            const bool existing = before && before->label == corpus::Label::Vulnerable;
            (existing ? ex : nov) += 1;
            (existing ? exHit : novHit) += pred;
        }
        const auto b = novel_existing_breakdown(v, c.releases[i + 1], c.releases[i]);
        ASSERT_GT(ex, 0);
        ASSERT_GT(nov, 0);
        EXPECT_DOUBLE_EQ(*b.existingDetectedPct, 100.0 * exHit / ex);
        EXPECT_DOUBLE_EQ(*b.novelDetectedPct, 100.0 * novHit / nov);
    }
}

TEST(Protocol, ReleasePairCounts) {
    synthetic::SynthesisSpec spec;
    spec.componentsPerRelease = 10;
    for (int n : {2, 3, 5}) {
        spec.nReleases = n;
        const auto c = synthetic::generate_synthetic_corpus(1, spec);
        const Predictor allPositive = [](const corpus::TrainingMaterial&, const corpus::Release& test, std::size_t) {
            Verdicts v;
            for (const auto& comp : test.components) v.emplace_back(comp.path, true);
            return v;
        };
        const auto reports = run_protocol(c, corpus::Setting::Clean, "const", allPositive);
        ASSERT_EQ(reports.size(), static_cast<std::size_t>(n - 1));
        for (std::size_t i = 0; i < reports.size(); ++i) {
            EXPECT_EQ(reports[i].trainRelease, c.releases[i].name);
            EXPECT_EQ(reports[i].testRelease, c.releases[i + 1].name);
            EXPECT_EQ(reports[i].recall, 1.0);
        }
        EXPECT_EQ(run_protocol(c, corpus::Setting::Realistic, "const", allPositive, 3).size(), static_cast<std::size_t>(n - 1));
    }
    corpus::Corpus one;
    one.releases.push_back({"only", Date::parse("2020-01-01"), {}});
    EXPECT_THROW(run_protocol(one, corpus::Setting::Clean, "x", {}), IndexError);
}

TEST(Protocol, FailedPairsAreReported) {
    synthetic::SynthesisSpec spec;
    spec.componentsPerRelease = 10;
    spec.nReleases = 3;
    const auto c = synthetic::generate_synthetic_corpus(1, spec);
    const auto reports = run_protocol(c, corpus::Setting::Clean, "flaky", [](const corpus::TrainingMaterial&, const corpus::Release& t, std::size_t i) {
        if (i == 0) throw DegenerateLabels("nothing to learn");
        Verdicts v;
        for (const auto& comp : t.components) v.emplace_back(comp.path, false);
        return v;
    });
    ASSERT_EQ(reports.size(), 2u);
    EXPECT_TRUE(reports[0].failed);
    EXPECT_EQ(reports[0].error, "nothing to learn");
    EXPECT_FALSE(reports[1].failed);
    const auto text = report_jsonl(reports);
    EXPECT_NO_THROW(check_report_schema(text));
    EXPECT_NE(text.find("\"failed\":1"), std::string::npos);
    const auto csv = report_csv(reports);
    EXPECT_NE(csv.find(reports[0].testRelease + ",NA,NA,NA,NA"), std::string::npos);
}

TEST(Reports, SummaryAverageAndMedian) {
    std::vector<EvaluationReport> rs(3);
    const double mccs[] = {0.2, 0.9, 0.4};
    for (int k = 0; k < 3; ++k) {
        rs[k].technique = "t";
        rs[k].testRelease = "r" + std::to_string(k);
        rs[k].mcc = mccs[k];
    }
    const auto [avg, med] = summarize(rs);
    EXPECT_NEAR(*avg.mcc, 0.5, 1e-15);
    EXPECT_EQ(*med.mcc, 0.4);
    EXPECT_FALSE(avg.novelDetectedPct);
    const auto csv = report_csv(rs);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "Release,MCC,F-measure,Precision,Recall");
    EXPECT_NE(csv.find("r1,0.900,0.000,0.000,0.000"), std::string::npos);
    EXPECT_NE(csv.find("Average,0.500,"), std::string::npos);
    EXPECT_NE(csv.find("Median,0.400,"), std::string::npos);
}

TEST(Reports, SchemaChecks) {
    EXPECT_THROW(check_report_schema(""), ParseError);
    EXPECT_THROW(check_report_schema("{\"kind\":\"release_pair\"}\n"), ParseError);
    EXPECT_THROW(check_report_schema("not json\n"), ParseError);
    std::vector<EvaluationReport> rs(1);
    rs[0].technique = "t";
    const auto good = report_jsonl(rs);
    EXPECT_NO_THROW(check_report_schema(good));
    EXPECT_THROW(check_report_schema(good + good), ParseError);
}

TEST(Experiment, TwoReleaseCorpusOnePair) {
    synthetic::SynthesisSpec spec;
    spec.nReleases = 2;
    spec.componentsPerRelease = 10;
    const auto c = synthetic::generate_synthetic_corpus(2, spec);
    ExperimentConfig cfg;
    cfg.training.maxSteps = 20;
    cfg.training.iterationSteps = 10;
    const auto reports = run_experiment(c, corpus::Setting::Clean, cfg);
    ASSERT_EQ(reports.size(), 1u);
    EXPECT_FALSE(reports[0].failed) << reports[0].error;
    EXPECT_EQ(reports[0].technique, "translation");
    EXPECT_EQ(reports[0].matrix.total(), 10);
}
