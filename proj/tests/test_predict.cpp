#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "fixtures.hpp"
#include "vulnmt/pairing.hpp"
#include "vulnmt/predict.hpp"
#include "vulnmt/seq2seq.hpp"

using namespace vulnmt;

namespace {

// Trained once: the guard-insertion fix of the fixture plus identity pairs
// for every other function in sight.
class GuardModel : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        corpus::ComponentRecord vuln{"net/igmp.c", fixtures::kIgmpVulnerable, corpus::Label::Vulnerable, fixtures::kIgmpFixed, {"V"}};
        corpus::ComponentRecord plain{"net/dev.c", fixtures::kDevLoad, corpus::Label::NonVulnerable, std::nullopt, {}};
        pairing::PairingConfig pc;
        pc.nonVulnRatio = 10;
        const auto pairs = pairing::build_training_pairs(pairing::label_material({"r", {vuln, plain}}, pc), pc);
        seq2seq::ModelConfig mc;
        seq2seq::TrainConfig tc;
        tc.iterationSteps = 100;
        tc.maxSteps = 1500;
        tc.patience = 100;
        auto r = seq2seq::train(pairs, pairs, mc, tc);
        rate_ = seq2seq::exact_match_rate(r.model, pairs);
        model_ = new seq2seq::Seq2SeqModel(std::move(r.model));
    }
    static void TearDownTestSuite() {
        delete model_;
        model_ = nullptr;
    }
    static const seq2seq::Seq2SeqModel& model() { return *model_; }

    static inline seq2seq::Seq2SeqModel* model_ = nullptr;
    static inline double rate_ = 0.0;
};

}  // namespace

TEST_F(GuardModel, MemorizedTrainingPairs) { EXPECT_EQ(rate_, 1.0); }

TEST_F(GuardModel, UnguardedSourceIsVulnerable) {
    const auto v = predict::predict_source(model(), "igmp.c", fixtures::kIgmpVulnerable);
    EXPECT_TRUE(v.predictedVulnerable);
    ASSERT_FALSE(v.modifiedSequences.empty());
    for (const auto& m : v.modifiedSequences) EXPECT_EQ(m.functionName, "igmp_heard_query");
    EXPECT_GT(v.totalSequences, v.modifiedSequences.size());
}

TEST_F(GuardModel, GuardedSourceIsClean) {
    const auto v = predict::predict_source(model(), "igmp.c", fixtures::kIgmpFixed);
    EXPECT_FALSE(v.predictedVulnerable);
    EXPECT_TRUE(v.modifiedSequences.empty());
}

TEST_F(GuardModel, IdentityTrainedReleaseHasNoPositives) {
    corpus::Release r{"r", Date::parse("2020-01-01"), {}};
    r.components.push_back({"a.c", fixtures::kIgmpFixed, corpus::Label::NonVulnerable, std::nullopt, {}});
    r.components.push_back({"b.c", fixtures::kDevLoad, corpus::Label::NonVulnerable, std::nullopt, {}});
    for (const auto& v : predict::predict_release(model(), r)) EXPECT_FALSE(v.predictedVulnerable) << v.path;
}

TEST_F(GuardModel, ReleaseOrderAndJobs) {
    corpus::Release r{"r", Date::parse("2020-01-01"), {}};
    r.components.push_back({"a.c", fixtures::kIgmpVulnerable, corpus::Label::NonVulnerable, std::nullopt, {}});
    r.components.push_back({"b.c", fixtures::kDevLoad, corpus::Label::NonVulnerable, std::nullopt, {}});
    r.components.push_back({"c.c", fixtures::kIgmpFixed, corpus::Label::NonVulnerable, std::nullopt, {}});
    r.components.push_back({"d.c", "int broken(void) { ", corpus::Label::NonVulnerable, std::nullopt, {}});
    const auto base = predict::predict_release(model(), r);
    ASSERT_EQ(base.size(), 4u);
    for (std::size_t k = 0; k < base.size(); ++k) EXPECT_EQ(base[k].path, r.components[k].path);
    EXPECT_EQ(predict::predict_release(model(), r, 3), base);

    auto shuffled = r;
    std::reverse(shuffled.components.begin(), shuffled.components.end());
    std::map<std::string, bool> a, b;
    for (const auto& v : base) a[v.path] = v.predictedVulnerable;
    for (const auto& v : predict::predict_release(model(), shuffled)) b[v.path] = v.predictedVulnerable;
    EXPECT_EQ(a, b);
    EXPECT_FALSE(base[3].predictedVulnerable);  // unparseable
}

TEST_F(GuardModel, EmptySource) {
    const auto v = predict::predict_source(model(), "empty.c", "");
    EXPECT_FALSE(v.predictedVulnerable);
    EXPECT_TRUE(v.modifiedSequences.empty());
    EXPECT_EQ(v.totalSequences, 0u);
}

TEST_F(GuardModel, JsonShape) {
    const auto j = predict::to_json(predict::predict_source(model(), "igmp.c", fixtures::kIgmpVulnerable));
    EXPECT_EQ(j.at("path"), "igmp.c");
    EXPECT_EQ(j.at("vulnerable"), true);
    EXPECT_EQ(j.at("modified").at(0).at("function"), "igmp_heard_query");
    EXPECT_TRUE(j.at("modified").at(0).at("chunk").is_number_unsigned());
    EXPECT_TRUE(j.at("total_sequences").is_number_unsigned());
}
