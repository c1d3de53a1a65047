#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "vulnmt/seq2seq.hpp"

using namespace vulnmt;
using namespace vulnmt::seq2seq;

namespace {

pairing::TrainingPair pair_of(const std::string& in, const std::string& out) {
    auto split = [](const std::string& s) {
        std::vector<std::string> t;
        std::string cur;
        for (char ch : s) {
            if (ch == ' ') {
                if (!cur.empty()) t.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        if (!cur.empty()) t.push_back(cur);
        return t;
    };
    pairing::TrainingPair p;
    p.input.tokens = split(in);
    p.target.tokens = split(out);
    p.kind = in == out ? pairing::PairKind::NonVulnToSelf : pairing::PairKind::VulnToFixed;
    return p;
}

Seq2SeqModel tiny(int hidden = 8, std::uint64_t seed = 3) {
    ModelConfig c;
    c.embeddingDim = 6;
    c.hiddenUnits = hidden;
    c.seed = seed;
    return Seq2SeqModel::initialize(c, Vocabulary::from_tokens({"F_1", "V_1", "if", "(", ")", "return", ";"}));
}

std::filesystem::path temp_path(const std::string& name) { return std::filesystem::temp_directory_path() / ("vulnmt_test_" + name); }

}  // namespace

TEST(Vocabulary, FiveTokens) {
    const auto v = build_vocabulary(std::vector<std::vector<std::string>>{{"F_1", "(", ")"}, {"if", "(", "V_1", ")"}});
    EXPECT_EQ(v.size(), static_cast<std::size_t>(kReserved) + 5);
    EXPECT_EQ(v.token(kReserved), "(");  // most frequent first, ties by spelling
    EXPECT_EQ(v.token(kReserved + 1), ")");
}

TEST(Vocabulary, MinCountCutoff) {
    const auto v = build_vocabulary(std::vector<std::vector<std::string>>{{"a", "b", "b"}}, 2);
    EXPECT_EQ(v.size(), static_cast<std::size_t>(kReserved) + 1);
    EXPECT_EQ(v.id("a"), kUnk);
    EXPECT_EQ(v.id("<s>"), kUnk);
    EXPECT_THROW(build_vocabulary(std::vector<std::vector<std::string>>{{}}), EmptyCorpus);
}

TEST(RecurrentCell, ZeroParameters) {
    const Vector x = Vector::Random(3), h = Vector::Random(2), c = Vector::Zero(2);
    const auto [h2, c2] = recurrent_cell(x, h, c, Matrix::Zero(8, 3), Matrix::Zero(8, 2), Vector::Zero(8));
    EXPECT_EQ(h2, Vector::Zero(2));
    EXPECT_EQ(c2, Vector::Zero(2));
}

TEST(RecurrentCell, SingleUnitClosedForm) {
    Matrix W(4, 1), U(4, 1);
    Vector b(4);
    W << 0.5, -0.3, 0.8, 0.2;
    U << 0.1, 0.4, -0.6, 0.9;
    b << 0.0, 1.0, -0.2, 0.3;
    Vector x(1), h(1), c(1);
    x << 0.7;
    h << -0.4;
    c << 0.25;
    auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
    const double i = sig(0.5 * 0.7 + 0.1 * -0.4 + 0.0);
    const double f = sig(-0.3 * 0.7 + 0.4 * -0.4 + 1.0);
    const double o = sig(0.8 * 0.7 + -0.6 * -0.4 - 0.2);
    const double g = std::tanh(0.2 * 0.7 + 0.9 * -0.4 + 0.3);
    const double cNew = f * 0.25 + i * g;
    const auto [h2, c2] = recurrent_cell(x, h, c, W, U, b);
    EXPECT_NEAR(c2(0), cNew, 1e-15);
    EXPECT_NEAR(h2(0), o * std::tanh(cNew), 1e-15);
    EXPECT_THROW(recurrent_cell(Vector::Zero(2), h, c, W, U, b), ShapeError);
}

TEST(RecurrentCell, JacobianMatchesFiniteDifferences) {
    Rng rng(11);
    const Index H = 3, X = 4;
    auto rnd = [&rng](Index r, Index c) {
        Matrix m(r, c);
        for (Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-1, 1);
        return m;
    };
    const Matrix W = rnd(4 * H, X), U = rnd(4 * H, H);
    const Vector b = rnd(4 * H, 1).col(0), x = rnd(X, 1).col(0), h = rnd(H, 1).col(0), c = rnd(H, 1).col(0);
    const auto J = recurrent_cell_jacobian(x, h, c, W, U, b);
    double worst = 0;
    auto probe = [&](Vector base, int which, const Matrix& dh, const Matrix& dc) {
        for (Index k = 0; k < base.size(); ++k) {
            const double eps = 1e-6;
            Vector up = base, dn = base;
            up(k) += eps;
            dn(k) -= eps;
            auto eval = [&](const Vector& v) {
                return which == 0 ? recurrent_cell(v, h, c, W, U, b) : which == 1 ? recurrent_cell(x, v, c, W, U, b) : recurrent_cell(x, h, v, W, U, b);
            };
            const auto [hu, cu] = eval(up);
            const auto [hd, cd] = eval(dn);
            const Vector nh = (hu - hd) / (2 * eps), nc = (cu - cd) / (2 * eps);
            for (Index r = 0; r < H; ++r) {
                worst = std::max(worst, std::abs(nh(r) - dh(r, k)) / std::max({std::abs(nh(r)), std::abs(dh(r, k)), 1e-6}));
                worst = std::max(worst, std::abs(nc(r) - dc(r, k)) / std::max({std::abs(nc(r)), std::abs(dc(r, k)), 1e-6}));
            }
        }
    };
    probe(x, 0, J.dh_dx, J.dc_dx);
    probe(h, 1, J.dh_dh, J.dc_dh);
    probe(c, 2, J.dh_dc, J.dc_dc);
    EXPECT_LT(worst, 1e-4);
}

TEST(Encode, LengthOne) {
    const auto m = tiny();
    const auto r = encode(m, {5});
    ASSERT_EQ(r.outputs.size(), 1u);
    EXPECT_EQ(r.outputs[0].size(), 2 * m.hidden());
    EXPECT_EQ(r.finalState.h.size(), static_cast<std::size_t>(m.config.decoderLayers));
}

TEST(Encode, ReversalSwapsDirections) {
    const auto m = tiny();
    auto swapped = m;
    const auto& dirs = m.layout.encoder[0];
    for (auto slot : {&LstmSlots::W, &LstmSlots::U, &LstmSlots::b}) std::swap(swapped.params[dirs[0].*slot], swapped.params[dirs[1].*slot]);
    const std::vector<int> x = {4, 7, 9, 5, 10};
    const auto a = encode(m, x).outputs;
    const auto b = encode(swapped, {x.rbegin(), x.rend()}).outputs;
    const Index H = m.hidden();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto& o = b[x.size() - 1 - i];
        EXPECT_LT((a[i].head(H) - o.tail(H)).norm(), 1e-14);
        EXPECT_LT((a[i].tail(H) - o.head(H)).norm(), 1e-14);
    }
}

TEST(Encode, PaddingEquivalence) {
    const auto m = tiny();
    const std::vector<std::vector<int>> batch = {{4, 5}, {6, 7, 8, 9, 10}, {4}};
    const auto out = encode_batch(m, batch);
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const auto single = encode(m, batch[j]).outputs;
        ASSERT_EQ(out[j].size(), single.size());
        for (std::size_t t = 0; t < single.size(); ++t) EXPECT_LT((out[j][t] - single[t]).norm(), 1e-12);
    }
    // padded batch losses agree with per-example losses
    std::vector<Example> ex = {{{4, 5}, {6}}, {{6, 7, 8, 9, 10}, {4, 4}}, {{4}, {}}};
    double sum = 0;
    for (const auto& e : ex) sum += loss(m, {e});
    EXPECT_NEAR(loss(m, ex), sum / 3.0, 1e-12);
}

TEST(Decode, ForcedEosGivesEmptyOutput) {
    auto m = tiny();
    m.params[m.layout.outb](kEos, 0) = 1e6;
    EXPECT_TRUE(translate(m, {4, 5, 6}).empty());
}

TEST(Decode, LengthCapAndSoftmax) {
    auto m = tiny();
    m.params[m.layout.outb](kReserved, 0) = 1e3;  // never emits EOS
    double worst = 0;
    const auto out = decode_greedy(m, encode(m, {4, 5}).finalState, [&worst](const Vector& p) { worst = std::max(worst, std::abs(p.sum() - 1.0)); });
    EXPECT_EQ(out.size(), static_cast<std::size_t>(m.config.maxDecodeLength));
    EXPECT_LT(worst, 1e-6);
}

TEST(Training, LossDecreasesOnIdentityPairs) {
    ModelConfig mc;
    mc.seed = 5;
    const std::vector<pairing::TrainingPair> pairs = {pair_of("if ( V_1 ) return ;", "if ( V_1 ) return ;"),
                                                      pair_of("F_1 ( V_1 ) ;", "F_1 ( V_1 ) ;")};
    auto m = Seq2SeqModel::initialize(mc, build_vocabulary(pairs));
    std::vector<Example> batch;
    for (const auto& p : pairs) batch.push_back(to_example(m.vocabulary, p));
    TrainingState st;
    TrainConfig tc;
    const double first = loss(m, batch);
    for (int s = 0; s < 200; ++s) train_step(m, st, batch, tc);
    EXPECT_LT(loss(m, batch), first);
    EXPECT_LT(loss(m, batch), 0.1 * first);
}

TEST(Training, ZeroLearningRateKeepsParameters) {
    for (auto opt : {Optimizer::Sgd, Optimizer::Adam}) {
        auto m = tiny();
        m.config.learningRate = 0.0;
        const auto before = m.params;
        TrainingState st;
        TrainConfig tc;
        tc.optimizer = opt;
        train_step(m, st, gradcheck::small_batch(), tc);
        EXPECT_EQ(m.params, before);
    }
}

TEST(Training, NonFiniteLossRaises) {
    auto m = tiny();
    m.params[m.layout.outW](0, 0) = std::nan("");
    TrainingState st;
    EXPECT_THROW(train_step(m, st, {{{4}, {5}}}, {}), NumericalError);
    EXPECT_THROW(train_step(m, st, {}, {}), ShapeError);
}

TEST(Training, GradientCheckFourUnits) {
    const auto res = gradcheck::check(gradcheck::small_model(), gradcheck::small_batch(), 25, 99);
    EXPECT_EQ(res.size(), 5u);
    for (const auto& [group, r] : res) {
        EXPECT_GE(r.sampled, 25u) << group;
        EXPECT_LT(r.worst, 1e-4) << group;
    }
}

TEST(Training, ZeroStepsReturnsInitialization) {
    const std::vector<pairing::TrainingPair> pairs = {pair_of("a b", "a c")};
    ModelConfig mc;
    TrainConfig tc;
    tc.maxSteps = 0;
    const auto r = train(pairs, {}, mc, tc);
    EXPECT_EQ(r.state.step, 0);
    EXPECT_EQ(r.model.params, Seq2SeqModel::initialize(mc, build_vocabulary(pairs)).params);
}

TEST(Training, OverfitSinglePairAndDeterminism) {
    const std::vector<pairing::TrainingPair> pairs = {pair_of("if ( V_1 ) F_1 ( ) ;", "if ( ! V_1 ) F_1 ( ) ;")};
    ModelConfig mc;
    mc.hiddenUnits = 16;
    mc.embeddingDim = 16;
    TrainConfig tc;
    tc.iterationSteps = 50;
    tc.maxSteps = 300;
    const auto a = train(pairs, pairs, mc, tc);
    const auto b = train(pairs, pairs, mc, tc);
    EXPECT_EQ(serialize_model(a.model), serialize_model(b.model));
    EXPECT_EQ(exact_match_rate(a.model, pairs), 1.0);
    EXPECT_EQ(a.model.vocabulary.decode(translate(a.model, a.model.vocabulary.encode(pairs[0].input.tokens))), pairs[0].target.tokens);
}

TEST(Training, ValidationSplit) {
    std::vector<pairing::TrainingPair> pairs;
    for (int k = 0; k < 50; ++k) pairs.push_back(pair_of("t" + std::to_string(k), "t" + std::to_string(k)));
    const auto [tr, va] = split_validation(pairs, 0.1, 4);
    EXPECT_EQ(va.size(), 5u);
    EXPECT_EQ(tr.size(), 45u);
    EXPECT_EQ(split_validation(std::vector<pairing::TrainingPair>(pairs.begin(), pairs.begin() + 2), 0.1, 4).second.size(), 1u);
    const auto [tr2, va2] = split_validation(pairs, 0.1, 4);
    for (std::size_t k = 0; k < va.size(); ++k) EXPECT_EQ(va[k].input.tokens, va2[k].input.tokens);
}

TEST(Config, Validation) {
    ModelConfig c;
    c.maxDecodeLength = 40;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.hiddenUnits = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    TrainConfig t;
    t.patience = 0;
    EXPECT_THROW(t.validate(), ConfigError);
    EXPECT_EQ(model_config_from_json(to_json(ModelConfig{})), ModelConfig{});
    EXPECT_THROW(parse_optimizer("rmsprop"), ConfigError);
}

TEST(Checkpoint, RoundTripIsExact) {
    const auto m = tiny(8, 21);
    const auto path = temp_path("roundtrip.ck");
    save_model(m, path, {{"note", "x"}});
    const auto back = load_model(path);
    EXPECT_EQ(back.config, m.config);
    EXPECT_EQ(back.vocabulary, m.vocabulary);
    EXPECT_EQ(back.layout.names, m.layout.names);
    ASSERT_EQ(back.params.size(), m.params.size());
    for (std::size_t k = 0; k < m.params.size(); ++k)
        EXPECT_EQ(std::memcmp(back.params[k].data(), m.params[k].data(), sizeof(double) * static_cast<std::size_t>(m.params[k].size())), 0);
    for (const auto& probe : std::vector<std::vector<int>>{{4}, {5, 6, 7}, {10, 9, 8, 7, 6, 5, 4}}) EXPECT_EQ(translate(back, probe), translate(m, probe));
    EXPECT_EQ(deserialize_model(serialize_model(m, {{"note", "x"}})).training.at("note"), "x");
    std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionDetected) {
    const auto bytes = serialize_model(tiny());
    EXPECT_THROW(deserialize_model(bytes.substr(0, bytes.size() / 2)), CorruptCheckpoint);
    EXPECT_THROW(deserialize_model(bytes.substr(0, 10)), CorruptCheckpoint);
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x01;
    EXPECT_THROW(deserialize_model(flipped), CorruptCheckpoint);
}

TEST(Checkpoint, VocabularyMismatch) {
    const auto path = temp_path("vocab.ck");
    save_model(tiny(), path);
    EXPECT_THROW(load_model(path, Vocabulary::from_tokens({"x", "y"})), VersionError);
    EXPECT_NO_THROW(load_model(path, tiny().vocabulary));
    std::filesystem::remove(path);
}

TEST(Checkpoint, VersionChecked) {
    auto bytes = serialize_model(tiny());
    bytes[8] = 2;  // version field follows the magic
    const auto body = bytes.substr(0, bytes.size() - 32);
    std::string digest;
    {
        const auto hex = sha256_hex(body);
        for (std::size_t k = 0; k < hex.size(); k += 2) digest += static_cast<char>(std::stoi(hex.substr(k, 2), nullptr, 16));
    }
    EXPECT_THROW(deserialize_model(body + digest), VersionError);
}
