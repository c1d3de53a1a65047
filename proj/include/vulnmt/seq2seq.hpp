#pragma once

// LSTM encoder-decoder written out by hand: shared token embedding, a
// bidirectional encoder, a bridge from the encoder's final states to the
// decoder's initial states, a stacked decoder and a softmax output layer.
// Training uses teacher forcing, mean token cross-entropy and clipped
// gradient steps; inference is greedy.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <filesystem>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vulnmt/abstraction.hpp"
#include "vulnmt/errors.hpp"
#include "vulnmt/pairing.hpp"
#include "vulnmt/util.hpp"

namespace vulnmt::seq2seq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

inline constexpr int kPad = 0;
inline constexpr int kSos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kReserved = 4;

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
public:
    Vocabulary() : tokens_{"<pad>", "<s>", "</s>", "<unk>"} { reindex(); }

    /// Builds from non-reserved tokens in index order.
    static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
        Vocabulary v;
        for (const auto& t : tokens) v.tokens_.push_back(t);
        v.reindex();
        if (v.index_.size() != v.tokens_.size()) throw ConfigError("vocabulary tokens must be distinct");
        return v;
    }

    int id(const std::string& token) const {
        auto it = index_.find(token);
        return (it == index_.end() || it->second < kReserved) ? kUnk : it->second;
    }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::vector<int> encode(const std::vector<std::string>& seq) const {
        std::vector<int> out;
        out.reserve(seq.size());
        for (const auto& t : seq) out.push_back(id(t));
        return out;
    }
    std::vector<std::string> decode(const std::vector<int>& ids) const {
        std::vector<std::string> out;
        for (int i : ids) out.push_back(token(i));
        return out;
    }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
    void reindex() {
        index_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

/// Tokens seen at least minCount times, ordered by (count desc, token asc).
inline Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& sequences, int minCount = 1) {
    std::map<std::string, long> counts;
    for (const auto& s : sequences)
        for (const auto& t : s) ++counts[t];
    if (counts.empty()) throw EmptyCorpus("no tokens to build a vocabulary from");
    std::vector<std::pair<std::string, long>> entries(counts.begin(), counts.end());
    std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> kept;
    for (const auto& [tok, n] : entries)
        if (n >= minCount) kept.push_back(tok);
    return Vocabulary::from_tokens(kept);
}

inline Vocabulary build_vocabulary(const std::vector<abstraction::AbstractedSequence>& sequences, int minCount = 1) {
    std::vector<std::vector<std::string>> raw;
    for (const auto& s : sequences) raw.push_back(s.tokens);
    return build_vocabulary(raw, minCount);
}

inline Vocabulary build_vocabulary(const std::vector<pairing::TrainingPair>& pairs, int minCount = 1) {
    std::vector<std::vector<std::string>> raw;
    for (const auto& p : pairs) {
        raw.push_back(p.input.tokens);
        raw.push_back(p.target.tokens);
    }
    return build_vocabulary(raw, minCount);
}

// ---------------------------------------------------------------------------
// Configuration

struct ModelConfig {
    int embeddingDim = 32;
    int hiddenUnits = 32;
    int encoderLayers = 1;
    int decoderLayers = 2;
    int maxDecodeLength = 64;
    double learningRate = 0.01;
    int batchSize = 16;
    /// Added to every LSTM forget-gate bias at initialization.
    double forgetBias = 1.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (embeddingDim <= 0 || hiddenUnits <= 0 || encoderLayers <= 0 || decoderLayers <= 0 || batchSize <= 0)
            throw ConfigError("model dimensions, layer counts and batch size must be positive");
        if (maxDecodeLength < 52) throw ConfigError("maxDecodeLength must be at least 52");
        if (!(learningRate >= 0.0) || !std::isfinite(learningRate)) throw ConfigError("learningRate must be finite and >= 0");
        if (!std::isfinite(forgetBias)) throw ConfigError("forgetBias must be finite");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"batch_size", c.batchSize},         {"decoder_layers", c.decoderLayers},   {"embedding_dim", c.embeddingDim},
            {"forget_bias", c.forgetBias},
            {"encoder_layers", c.encoderLayers}, {"hidden_units", c.hiddenUnits},       {"learning_rate", c.learningRate},
            {"max_decode_length", c.maxDecodeLength}, {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
    c.batchSize = j.value("batch_size", c.batchSize);
    c.decoderLayers = j.value("decoder_layers", c.decoderLayers);
    c.embeddingDim = j.value("embedding_dim", c.embeddingDim);
    c.encoderLayers = j.value("encoder_layers", c.encoderLayers);
    c.forgetBias = j.value("forget_bias", c.forgetBias);
    c.hiddenUnits = j.value("hidden_units", c.hiddenUnits);
    c.learningRate = j.value("learning_rate", c.learningRate);
    c.maxDecodeLength = j.value("max_decode_length", c.maxDecodeLength);
    c.seed = j.value("seed", c.seed);
    return c;
}

// ---------------------------------------------------------------------------
// Parameters

struct LstmSlots {
    std::size_t W = 0, U = 0, b = 0;
};
struct BridgeSlots {
    std::size_t hW = 0, hb = 0, cW = 0, cb = 0;
};

/// Positions of every tensor in declaration order.
struct Layout {
    std::size_t embedding = 0;
    std::vector<std::array<LstmSlots, 2>> encoder;  // [layer][forward, backward]
    std::vector<BridgeSlots> bridge;                // per decoder layer
    std::vector<LstmSlots> decoder;
    std::size_t outW = 0, outb = 0;

    std::vector<std::string> names;
    std::vector<std::pair<Index, Index>> shapes;

    static Layout make(const ModelConfig& c, std::size_t vocabSize) {
        Layout L;
        const Index H = c.hiddenUnits, E = c.embeddingDim, V = static_cast<Index>(vocabSize);
        auto add = [&L](std::string name, Index r, Index cols) {
            L.names.push_back(std::move(name));
            L.shapes.emplace_back(r, cols);
            return L.names.size() - 1;
        };
        L.embedding = add("embedding", E, V);
        for (int l = 0; l < c.encoderLayers; ++l) {
            std::array<LstmSlots, 2> dirs;
            for (int d = 0; d < 2; ++d) {
                const auto p = "encoder.l" + std::to_string(l) + (d == 0 ? ".fwd" : ".bwd");
                dirs[d].W = add(p + ".W", 4 * H, l == 0 ? E : 2 * H);
                dirs[d].U = add(p + ".U", 4 * H, H);
                dirs[d].b = add(p + ".b", 4 * H, 1);
            }
            L.encoder.push_back(dirs);
        }
        for (int l = 0; l < c.decoderLayers; ++l) {
            const auto p = "bridge.l" + std::to_string(l);
            BridgeSlots s;
            s.hW = add(p + ".h.W", H, 2 * H);
            s.hb = add(p + ".h.b", H, 1);
            s.cW = add(p + ".c.W", H, 2 * H);
            s.cb = add(p + ".c.b", H, 1);
            L.bridge.push_back(s);
        }
        for (int l = 0; l < c.decoderLayers; ++l) {
            const auto p = "decoder.l" + std::to_string(l);
            LstmSlots s;
            s.W = add(p + ".W", 4 * H, l == 0 ? E : H);
            s.U = add(p + ".U", 4 * H, H);
            s.b = add(p + ".b", 4 * H, 1);
            L.decoder.push_back(s);
        }
        L.outW = add("output.W", V, H);
        L.outb = add("output.b", V, 1);
        return L;
    }
};

using Tensors = std::vector<Matrix>;

inline Tensors zeros_like(const Tensors& t) {
    Tensors out;
    out.reserve(t.size());
    for (const auto& m : t) out.push_back(Matrix::Zero(m.rows(), m.cols()));
    return out;
}

struct Seq2SeqModel {
    ModelConfig config;
    Vocabulary vocabulary;
    Layout layout;
    Tensors params;

    /// Uniform init in [-1/sqrt(H), 1/sqrt(H)] from the config seed, then
    /// forgetBias added to the forget-gate rows of each LSTM bias.
    static Seq2SeqModel initialize(const ModelConfig& config, Vocabulary vocabulary) {
        config.validate();
        Seq2SeqModel m;
        m.config = config;
        m.vocabulary = std::move(vocabulary);
        m.layout = Layout::make(config, m.vocabulary.size());
        Rng rng(mix64(config.seed ^ 0x5eed5eedULL));
        const double r = 1.0 / std::sqrt(static_cast<double>(config.hiddenUnits));
        for (const auto& [rows, cols] : m.layout.shapes) {
            Matrix t(rows, cols);
            for (Index j = 0; j < cols; ++j)
                for (Index i = 0; i < rows; ++i) t(i, j) = rng.uniform(-r, r);
            m.params.push_back(std::move(t));
        }
        const Index H = config.hiddenUnits;
        std::vector<std::size_t> biases;
        for (const auto& dirs : m.layout.encoder)
            for (const auto& s : dirs) biases.push_back(s.b);
        for (const auto& s : m.layout.decoder) biases.push_back(s.b);
        for (auto b : biases) m.params[b].middleRows(H, H).array() += config.forgetBias;
        return m;
    }

    const Matrix& p(std::size_t slot) const { return params[slot]; }
    Index hidden() const { return config.hiddenUnits; }
};

// ---------------------------------------------------------------------------
// LSTM cell (gate rows: input, forget, output, candidate)

namespace detail {

inline Matrix sigmoid(const Matrix& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

struct StepCache {
    Matrix x, hPrev, cPrev;
    Matrix gates;  // activated, 4H × B
    Matrix c, tanhC;
    Matrix hOut, cOut;  // after masking
    RowVector mask;     // empty when every column is live
};

inline void step_forward(const Matrix& W, const Matrix& U, const Matrix& b, StepCache& s) {
    const Index H = U.cols();
    Matrix z = W * s.x;
    z.noalias() += U * s.hPrev;
    z.colwise() += b.col(0);
    s.gates.resize(z.rows(), z.cols());
    s.gates.topRows(3 * H) = sigmoid(z.topRows(3 * H));
    s.gates.bottomRows(H) = z.bottomRows(H).array().tanh().matrix();
    s.c = s.gates.middleRows(H, H).cwiseProduct(s.cPrev) + s.gates.topRows(H).cwiseProduct(s.gates.bottomRows(H));
    s.tanhC = s.c.array().tanh().matrix();
    Matrix h = s.gates.middleRows(2 * H, H).cwiseProduct(s.tanhC);
    if (s.mask.size() == 0) {
        s.hOut = std::move(h);
        s.cOut = s.c;
    } else {
        const RowVector keep = RowVector::Ones(s.mask.size()) - s.mask;
        s.hOut = (h.array().rowwise() * s.mask.array() + s.hPrev.array().rowwise() * keep.array()).matrix();
        s.cOut = (s.c.array().rowwise() * s.mask.array() + s.cPrev.array().rowwise() * keep.array()).matrix();
    }
}

struct StepGrads {
    Matrix dx, dhPrev, dcPrev;
};

/// Back-propagates through one step; accumulates into dW, dU, db.
inline StepGrads step_backward(const Matrix& W, const Matrix& U, const StepCache& s, Matrix dh, Matrix dc, Matrix& dW,
                               Matrix& dU, Matrix& db, bool needDx = true) {
    const Index H = U.cols();
    Matrix dhDirect, dcDirect;
    if (s.mask.size() != 0) {
        const RowVector keep = RowVector::Ones(s.mask.size()) - s.mask;
        dhDirect = (dh.array().rowwise() * keep.array()).matrix();
        dcDirect = (dc.array().rowwise() * keep.array()).matrix();
        dh = (dh.array().rowwise() * s.mask.array()).matrix();
        dc = (dc.array().rowwise() * s.mask.array()).matrix();
    }
    const auto i = s.gates.topRows(H).array();
    const auto f = s.gates.middleRows(H, H).array();
    const auto o = s.gates.middleRows(2 * H, H).array();
    const auto g = s.gates.bottomRows(H).array();
    const auto tc = s.tanhC.array();

    const Matrix dcTotal = (dc.array() + dh.array() * o * (1.0 - tc.square())).matrix();
    Matrix dz(4 * H, dh.cols());
    dz.topRows(H) = (dcTotal.array() * g * i * (1.0 - i)).matrix();
    dz.middleRows(H, H) = (dcTotal.array() * s.cPrev.array() * f * (1.0 - f)).matrix();
    dz.middleRows(2 * H, H) = (dh.array() * tc * o * (1.0 - o)).matrix();
    dz.bottomRows(H) = (dcTotal.array() * i * (1.0 - g.square())).matrix();

    dW.noalias() += dz * s.x.transpose();
    dU.noalias() += dz * s.hPrev.transpose();
    db.col(0) += dz.rowwise().sum();

    StepGrads out;
    if (needDx) out.dx.noalias() = W.transpose() * dz;
    out.dhPrev.noalias() = U.transpose() * dz;
    out.dcPrev = (dcTotal.array() * f).matrix();
    if (s.mask.size() != 0) {
        out.dhPrev += dhDirect;
        out.dcPrev += dcDirect;
    }
    return out;
}

}  // namespace detail

/// One LSTM step for a single vector: returns (h', c').
inline std::pair<Vector, Vector> recurrent_cell(const Vector& x, const Vector& h, const Vector& c, const Matrix& W, const Matrix& U,
                                                const Vector& b) {
    const Index H = U.cols();
    if (U.rows() != 4 * H || W.rows() != 4 * H || b.size() != 4 * H || W.cols() != x.size() || h.size() != H || c.size() != H)
        throw ShapeError("recurrent_cell: dimension mismatch");
    detail::StepCache s;
    s.x = x;
    s.hPrev = h;
    s.cPrev = c;
    detail::step_forward(W, U, Matrix(b), s);
    return {s.hOut.col(0), s.cOut.col(0)};
}

/// Jacobians of (h', c') with respect to (x, h, c), rows indexed by output.
struct CellJacobian {
    Matrix dh_dx, dh_dh, dh_dc, dc_dx, dc_dh, dc_dc;
};

inline CellJacobian recurrent_cell_jacobian(const Vector& x, const Vector& h, const Vector& c, const Matrix& W, const Matrix& U,
                                            const Vector& b) {
    const Index H = U.cols();
    detail::StepCache s;
    s.x = x;
    s.hPrev = h;
    s.cPrev = c;
    detail::step_forward(W, U, Matrix(b), s);
    CellJacobian J{Matrix(H, x.size()), Matrix(H, H), Matrix(H, H), Matrix(H, x.size()), Matrix(H, H), Matrix(H, H)};
    Matrix dW = Matrix::Zero(W.rows(), W.cols()), dU = Matrix::Zero(U.rows(), U.cols()), db = Matrix::Zero(b.size(), 1);
    for (Index k = 0; k < H; ++k) {
        Matrix e = Matrix::Zero(H, 1);
        e(k, 0) = 1.0;
        auto gh = detail::step_backward(W, U, s, e, Matrix::Zero(H, 1), dW, dU, db);
        J.dh_dx.row(k) = gh.dx.col(0).transpose();
        J.dh_dh.row(k) = gh.dhPrev.col(0).transpose();
        J.dh_dc.row(k) = gh.dcPrev.col(0).transpose();
        auto gc = detail::step_backward(W, U, s, Matrix::Zero(H, 1), e, dW, dU, db);
        J.dc_dx.row(k) = gc.dx.col(0).transpose();
        J.dc_dh.row(k) = gc.dhPrev.col(0).transpose();
        J.dc_dc.row(k) = gc.dcPrev.col(0).transpose();
    }
    return J;
}

// ---------------------------------------------------------------------------
// Encoder

namespace detail {

struct EncoderPass {
    Index steps = 0, batch = 0;
    std::vector<std::vector<int>> ids;           // padded, [batch][steps]
    std::vector<RowVector> masks;                // per step
    std::vector<std::array<std::vector<StepCache>, 2>> layers;  // [layer][dir][step]
    std::vector<Matrix> topOutputs;              // per step, 2H × B
    Matrix finalH, finalC;                       // 2H × B: [forward; backward]
};

inline EncoderPass encoder_forward(const Seq2SeqModel& m, const std::vector<std::vector<int>>& inputs) {
    EncoderPass P;
    P.batch = static_cast<Index>(inputs.size());
    for (const auto& s : inputs) P.steps = std::max<Index>(P.steps, static_cast<Index>(s.size()));
    const Index H = m.hidden(), B = P.batch, T = P.steps;
    const auto& emb = m.p(m.layout.embedding);
    P.masks.assign(static_cast<std::size_t>(T), RowVector::Zero(B));
    for (Index t = 0; t < T; ++t)
        for (Index j = 0; j < B; ++j)
            if (t < static_cast<Index>(inputs[static_cast<std::size_t>(j)].size())) P.masks[static_cast<std::size_t>(t)](j) = 1.0;

    std::vector<Matrix> layerInput(static_cast<std::size_t>(T));
    for (Index t = 0; t < T; ++t) {
        Matrix x(emb.rows(), B);
        for (Index j = 0; j < B; ++j) {
            const auto& s = inputs[static_cast<std::size_t>(j)];
            const int id = t < static_cast<Index>(s.size()) ? s[static_cast<std::size_t>(t)] : kPad;
            x.col(j) = emb.col(id);
        }
        layerInput[static_cast<std::size_t>(t)] = std::move(x);
    }

    P.finalH = Matrix::Zero(2 * H, B);
    P.finalC = Matrix::Zero(2 * H, B);
    for (std::size_t l = 0; l < m.layout.encoder.size(); ++l) {
        std::array<std::vector<StepCache>, 2> caches;
        std::vector<Matrix> outputs(static_cast<std::size_t>(T), Matrix(2 * H, B));
        for (int d = 0; d < 2; ++d) {
            const auto& slots = m.layout.encoder[l][static_cast<std::size_t>(d)];
            auto& cache = caches[static_cast<std::size_t>(d)];
            cache.resize(static_cast<std::size_t>(T));
            Matrix h = Matrix::Zero(H, B), c = Matrix::Zero(H, B);
            for (Index k = 0; k < T; ++k) {
                const auto t = static_cast<std::size_t>(d == 0 ? k : T - 1 - k);
                auto& s = cache[t];
                s.x = layerInput[t];
                s.hPrev = h;
                s.cPrev = c;
                s.mask = P.masks[t];
                step_forward(m.p(slots.W), m.p(slots.U), m.p(slots.b), s);
                h = s.hOut;
                c = s.cOut;
                outputs[t].middleRows(d * H, H) = h;
            }
            P.finalH.middleRows(d * H, H) = h;
            P.finalC.middleRows(d * H, H) = c;
        }
        P.layers.push_back(std::move(caches));
        layerInput = outputs;
        if (l + 1 == m.layout.encoder.size()) P.topOutputs = std::move(outputs);
    }
    return P;
}

}  // namespace detail

struct DecoderState {
    std::vector<Vector> h;
    std::vector<Vector> c;
};

struct EncoderResult {
    std::vector<Vector> outputs;  // one 2H vector per input position
    DecoderState finalState;      // bridged to the decoder's layers
};

namespace detail {

struct BridgeOut {
    std::vector<Matrix> h0, c0;  // per decoder layer, H × B
};

inline BridgeOut bridge_forward(const Seq2SeqModel& m, const Matrix& finalH, const Matrix& finalC) {
    BridgeOut out;
    for (const auto& s : m.layout.bridge) {
        Matrix h = m.p(s.hW) * finalH;
        h.colwise() += m.p(s.hb).col(0);
        out.h0.push_back(h.array().tanh().matrix());
        Matrix c = m.p(s.cW) * finalC;
        c.colwise() += m.p(s.cb).col(0);
        out.c0.push_back(std::move(c));
    }
    return out;
}

}  // namespace detail

/// Bidirectional encoding of one id sequence.
inline EncoderResult encode(const Seq2SeqModel& m, const std::vector<int>& ids) {
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= m.vocabulary.size()) throw ShapeError("token id outside the vocabulary");
    const auto P = detail::encoder_forward(m, {ids});
    EncoderResult r;
    for (const auto& o : P.topOutputs) r.outputs.push_back(o.col(0));
    const auto br = detail::bridge_forward(m, P.finalH, P.finalC);
    for (std::size_t l = 0; l < br.h0.size(); ++l) {
        r.finalState.h.push_back(br.h0[l].col(0));
        r.finalState.c.push_back(br.c0[l].col(0));
    }
    return r;
}

/// Top-layer encoder outputs for a padded batch: [sequence][position].
inline std::vector<std::vector<Vector>> encode_batch(const Seq2SeqModel& m, const std::vector<std::vector<int>>& batch) {
    const auto P = detail::encoder_forward(m, batch);
    std::vector<std::vector<Vector>> out(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j)
        for (std::size_t t = 0; t < batch[j].size(); ++t) out[j].push_back(P.topOutputs[t].col(static_cast<Index>(j)));
    return out;
}

// ---------------------------------------------------------------------------
// Decoder

/// Softmax over the output layer for the top hidden state.
inline Vector output_distribution(const Seq2SeqModel& m, const Vector& hTop) {
    Vector logits = m.p(m.layout.outW) * hTop + m.p(m.layout.outb).col(0);
    const double mx = logits.maxCoeff();
    Vector e = (logits.array() - mx).exp().matrix();
    return e / e.sum();
}

/// Greedy decoding: argmax per step (lowest index wins ties) until EOS or
/// maxDecodeLength tokens. SOS/EOS are not included in the result. The
/// optional observer sees every step's distribution.
inline std::vector<int> decode_greedy(const Seq2SeqModel& m, DecoderState state,
                                      const std::function<void(const Vector&)>& observe = {}) {
    std::vector<int> out;
    int prev = kSos;
    const auto& emb = m.p(m.layout.embedding);
    for (int step = 0; step < m.config.maxDecodeLength; ++step) {
        Vector x = emb.col(prev);
        for (std::size_t l = 0; l < m.layout.decoder.size(); ++l) {
            const auto& s = m.layout.decoder[l];
            auto [h, c] = recurrent_cell(x, state.h[l], state.c[l], m.p(s.W), m.p(s.U), m.p(s.b).col(0));
            state.h[l] = h;
            state.c[l] = c;
            x = std::move(h);
        }
        const Vector probs = output_distribution(m, x);
        if (observe) observe(probs);
        Index best = 0;
        for (Index k = 1; k < probs.size(); ++k)
            if (probs(k) > probs(best)) best = k;
        if (best == kEos) break;
        out.push_back(static_cast<int>(best));
        prev = static_cast<int>(best);
    }
    return out;
}

inline std::vector<int> translate(const Seq2SeqModel& m, const std::vector<int>& ids) { return decode_greedy(m, encode(m, ids).finalState); }

// ---------------------------------------------------------------------------
// Loss and gradients

struct Example {
    std::vector<int> input;
    std::vector<int> target;  // without SOS/EOS
};

inline Example to_example(const Vocabulary& v, const pairing::TrainingPair& p) {
    return {v.encode(p.input.tokens), v.encode(p.target.tokens)};
}

/// Mean over examples of each example's mean token cross-entropy (target
/// tokens plus EOS). Fills `grads` (same layout as params) when given.
inline double loss_and_gradients(const Seq2SeqModel& m, const std::vector<Example>& batch, Tensors* grads) {
    using detail::StepCache;
    const Index H = m.hidden();
    const auto B = static_cast<Index>(batch.size());
    if (B == 0) throw ShapeError("empty batch");
    std::vector<std::vector<int>> inputs;
    Index T = 0;
    for (const auto& e : batch) {
        inputs.push_back(e.input);
        T = std::max<Index>(T, static_cast<Index>(e.target.size()) + 1);
    }
    const auto enc = detail::encoder_forward(m, inputs);
    const auto br = detail::bridge_forward(m, enc.finalH, enc.finalC);
    const auto& emb = m.p(m.layout.embedding);
    const auto& outW = m.p(m.layout.outW);
    const auto& outb = m.p(m.layout.outb);
    const std::size_t L = m.layout.decoder.size();

    RowVector weight(B);
    for (Index j = 0; j < B; ++j)
        weight(j) = 1.0 / (static_cast<double>(batch[static_cast<std::size_t>(j)].target.size() + 1) * static_cast<double>(B));

    std::vector<std::vector<StepCache>> dec(L, std::vector<StepCache>(static_cast<std::size_t>(T)));
    std::vector<Matrix> dLogits(static_cast<std::size_t>(T));
    std::vector<Matrix> hTop(static_cast<std::size_t>(T));
    std::vector<Matrix> h = br.h0, c = br.c0;
    double loss = 0.0;
    for (Index t = 0; t < T; ++t) {
        Matrix x(emb.rows(), B);
        std::vector<int> want(static_cast<std::size_t>(B), -1);
        for (Index j = 0; j < B; ++j) {
            const auto& tgt = batch[static_cast<std::size_t>(j)].target;
            const auto len = static_cast<Index>(tgt.size());
            const int in = t == 0 ? kSos : (t - 1 < len ? tgt[static_cast<std::size_t>(t - 1)] : kPad);
            x.col(j) = emb.col(in);
            if (t < len) want[static_cast<std::size_t>(j)] = tgt[static_cast<std::size_t>(t)];
            else if (t == len) want[static_cast<std::size_t>(j)] = kEos;
        }
        for (std::size_t l = 0; l < L; ++l) {
            auto& s = dec[l][static_cast<std::size_t>(t)];
            s.x = std::move(x);
            s.hPrev = h[l];
            s.cPrev = c[l];
            const auto& slots = m.layout.decoder[l];
            detail::step_forward(m.p(slots.W), m.p(slots.U), m.p(slots.b), s);
            h[l] = s.hOut;
            c[l] = s.cOut;
            x = s.hOut;
        }
        hTop[static_cast<std::size_t>(t)] = x;
        Matrix logits = outW * x;
        logits.colwise() += outb.col(0);
        Matrix d = Matrix::Zero(logits.rows(), B);
        for (Index j = 0; j < B; ++j) {
            const int y = want[static_cast<std::size_t>(j)];
            if (y < 0) continue;
            const double mx = logits.col(j).maxCoeff();
            Vector e = (logits.col(j).array() - mx).exp().matrix();
            const double z = e.sum();
            loss -= weight(j) * (logits(y, j) - mx - std::log(z));
            d.col(j) = e / z * weight(j);
            d(y, j) -= weight(j);
        }
        dLogits[static_cast<std::size_t>(t)] = std::move(d);
    }
    if (!grads) return loss;

    Tensors& g = *grads;
    g = zeros_like(m.params);
    std::vector<Matrix> dh(L, Matrix::Zero(H, B)), dc(L, Matrix::Zero(H, B));
    for (Index t = T - 1; t >= 0; --t) {
        const auto& d = dLogits[static_cast<std::size_t>(t)];
        g[m.layout.outW].noalias() += d * hTop[static_cast<std::size_t>(t)].transpose();
        g[m.layout.outb].col(0) += d.rowwise().sum();
        Matrix fromAbove = outW.transpose() * d;
        for (std::size_t l = L; l-- > 0;) {
            const auto& slots = m.layout.decoder[l];
            const auto& s = dec[l][static_cast<std::size_t>(t)];
            auto sg = detail::step_backward(m.p(slots.W), m.p(slots.U), s, dh[l] + fromAbove, dc[l], g[slots.W], g[slots.U], g[slots.b]);
            dh[l] = std::move(sg.dhPrev);
            dc[l] = std::move(sg.dcPrev);
            fromAbove = std::move(sg.dx);
        }
        // fromAbove is now d(embedding of the step's input token)
        for (Index j = 0; j < B; ++j) {
            const auto& tgt = batch[static_cast<std::size_t>(j)].target;
            const auto len = static_cast<Index>(tgt.size());
            const int in = t == 0 ? kSos : (t - 1 < len ? tgt[static_cast<std::size_t>(t - 1)] : kPad);
            g[m.layout.embedding].col(in) += fromAbove.col(j);
        }
    }

    Matrix dFinalH = Matrix::Zero(2 * H, B), dFinalC = Matrix::Zero(2 * H, B);
    for (std::size_t l = 0; l < L; ++l) {
        const auto& s = m.layout.bridge[l];
        const Matrix dPre = (dh[l].array() * (1.0 - br.h0[l].array().square())).matrix();
        g[s.hW].noalias() += dPre * enc.finalH.transpose();
        g[s.hb].col(0) += dPre.rowwise().sum();
        dFinalH.noalias() += m.p(s.hW).transpose() * dPre;
        g[s.cW].noalias() += dc[l] * enc.finalC.transpose();
        g[s.cb].col(0) += dc[l].rowwise().sum();
        dFinalC.noalias() += m.p(s.cW).transpose() * dc[l];
    }

    const Index TE = enc.steps;
    std::vector<Matrix> dOut(static_cast<std::size_t>(TE), Matrix::Zero(2 * H, B));
    for (std::size_t l = m.layout.encoder.size(); l-- > 0;) {
        std::vector<Matrix> dIn(static_cast<std::size_t>(TE));
        const bool top = l + 1 == m.layout.encoder.size();
        for (int d = 0; d < 2; ++d) {
            const auto& slots = m.layout.encoder[l][static_cast<std::size_t>(d)];
            const auto& cache = enc.layers[l][static_cast<std::size_t>(d)];
            Matrix dhc = top ? Matrix(dFinalH.middleRows(d * H, H)) : Matrix::Zero(H, B);
            Matrix dcc = top ? Matrix(dFinalC.middleRows(d * H, H)) : Matrix::Zero(H, B);
            for (Index k = 0; k < TE; ++k) {
                // reverse of this direction's forward order
                const auto t = static_cast<std::size_t>(d == 0 ? TE - 1 - k : k);
                Matrix dhTotal = dhc + dOut[t].middleRows(d * H, H);
                auto sg = detail::step_backward(m.p(slots.W), m.p(slots.U), cache[t], std::move(dhTotal), dcc, g[slots.W], g[slots.U],
                                                g[slots.b]);
                dhc = std::move(sg.dhPrev);
                dcc = std::move(sg.dcPrev);
                if (dIn[t].size() == 0) dIn[t] = std::move(sg.dx);
                else dIn[t] += sg.dx;
            }
        }
        if (l == 0) {
            for (Index t = 0; t < TE; ++t)
                for (Index j = 0; j < B; ++j) {
                    const auto& s = inputs[static_cast<std::size_t>(j)];
                    const int id = t < static_cast<Index>(s.size()) ? s[static_cast<std::size_t>(t)] : kPad;
                    g[m.layout.embedding].col(id) += dIn[static_cast<std::size_t>(t)].col(j);
                }
        } else {
            dOut = std::move(dIn);
        }
    }
    return loss;
}

inline double loss(const Seq2SeqModel& m, const std::vector<Example>& batch) { return loss_and_gradients(m, batch, nullptr); }

// ---------------------------------------------------------------------------
// Optimization

enum class Optimizer { Sgd, Adam };

inline std::string_view optimizer_name(Optimizer o) { return o == Optimizer::Sgd ? "sgd" : "adam"; }

inline Optimizer parse_optimizer(std::string_view s) {
    if (s == "sgd") return Optimizer::Sgd;
    if (s == "adam") return Optimizer::Adam;
    throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected sgd|adam)");
}

struct TrainConfig {
    long iterationSteps = 500;
    long maxSteps = 5000;
    double clipNorm = 5.0;
    Optimizer optimizer = Optimizer::Adam;
    int minCount = 1;
    /// Iterations without validation improvement tolerated before stopping.
    int patience = 1;
    /// Learning-rate multiplier applied after every iteration.
    double lrDecay = 1.0;

    void validate() const {
        if (iterationSteps <= 0) throw ConfigError("iterationSteps must be positive");
        if (maxSteps < 0) throw ConfigError("maxSteps must be non-negative");
        if (!(clipNorm > 0.0)) throw ConfigError("clipNorm must be positive");
        if (minCount < 1) throw ConfigError("minCount must be at least 1");
        if (patience < 1) throw ConfigError("patience must be at least 1");
        if (!(lrDecay > 0.0 && lrDecay <= 1.0)) throw ConfigError("lrDecay must be in (0, 1]");
    }
};

struct TrainingState {
    long step = 0;
    double lrScale = 1.0;
    Tensors firstMoment;   // Adam only
    Tensors secondMoment;  // Adam only
    std::vector<std::pair<long, double>> validationHistory;
};

/// One clipped gradient step on `batch`; returns the batch loss before the update.
inline double train_step(Seq2SeqModel& m, TrainingState& state, const std::vector<Example>& batch, const TrainConfig& tc) {
    if (batch.empty()) throw ShapeError("train_step needs a non-empty batch");
    Tensors g;
    const double l = loss_and_gradients(m, batch, &g);
    if (!std::isfinite(l)) throw NumericalError(state.step + 1, "non-finite loss");
    double sq = 0.0;
    for (const auto& t : g) sq += t.squaredNorm();
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError(state.step + 1, "non-finite gradient");
    const double scale = norm > tc.clipNorm ? tc.clipNorm / norm : 1.0;
    const double lr = m.config.learningRate * state.lrScale;
    ++state.step;
    if (tc.optimizer == Optimizer::Sgd) {
        for (std::size_t k = 0; k < g.size(); ++k) m.params[k] -= (lr * scale) * g[k];
    } else {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        if (state.firstMoment.empty()) {
            state.firstMoment = zeros_like(m.params);
            state.secondMoment = zeros_like(m.params);
        }
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
        for (std::size_t k = 0; k < g.size(); ++k) {
            const Matrix gk = scale * g[k];
            state.firstMoment[k] = b1 * state.firstMoment[k] + (1.0 - b1) * gk;
            state.secondMoment[k] = b2 * state.secondMoment[k] + (1.0 - b2) * gk.cwiseAbs2();
            m.params[k].array() -= lr * (state.firstMoment[k].array() / c1) / ((state.secondMoment[k].array() / c2).sqrt() + eps);
        }
    }
    return l;
}

/// Share of pairs whose greedy translation equals the target exactly.
inline double exact_match_rate(const Seq2SeqModel& m, const std::vector<Example>& examples) {
    if (examples.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& e : examples)
        if (translate(m, e.input) == e.target) ++hits;
    return static_cast<double>(hits) / static_cast<double>(examples.size());
}

inline double exact_match_rate(const Seq2SeqModel& m, const std::vector<pairing::TrainingPair>& pairs) {
    std::vector<Example> ex;
    for (const auto& p : pairs) ex.push_back(to_example(m.vocabulary, p));
    return exact_match_rate(m, ex);
}

/// Mean per-pair loss over `examples`, evaluated in chunks.
inline double mean_loss(const Seq2SeqModel& m, const std::vector<Example>& examples, std::size_t chunk = 64) {
    if (examples.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t start = 0; start < examples.size(); start += chunk) {
        const auto end = std::min(examples.size(), start + chunk);
        const std::vector<Example> part(examples.begin() + static_cast<std::ptrdiff_t>(start), examples.begin() + static_cast<std::ptrdiff_t>(end));
        total += loss(m, part) * static_cast<double>(part.size());
    }
    return total / static_cast<double>(examples.size());
}

struct TrainResult {
    Seq2SeqModel model;
    TrainingState state;
    long bestStep = 0;
    double bestValidation = 0.0;
};

/// Trains in iterations of iterationSteps. After each iteration the
/// validation exact-match rate is measured (an equal rate with lower
/// validation loss also counts as improvement); training stops once it has
/// failed to improve `patience` times in a row, or at maxSteps. The best-scoring
/// parameters are returned. With an empty validation set the final
/// parameters are returned.
inline TrainResult train(const std::vector<pairing::TrainingPair>& pairs, const std::vector<pairing::TrainingPair>& validation,
                         const ModelConfig& mc, const TrainConfig& tc,
                         const std::function<void(long, double, double)>& progress = {}) {
    mc.validate();
    tc.validate();
    if (pairs.empty()) throw EmptyCorpus("no training pairs");
    auto vocab = build_vocabulary(pairs, tc.minCount);
    TrainResult r{Seq2SeqModel::initialize(mc, std::move(vocab)), {}, 0, 0.0};
    if (tc.maxSteps == 0) return r;

    std::vector<Example> train, valid;
    for (const auto& p : pairs) train.push_back(to_example(r.model.vocabulary, p));
    for (const auto& p : validation) valid.push_back(to_example(r.model.vocabulary, p));

    Rng rng(mix64(mc.seed ^ 0x7a11ULL));
    std::vector<std::size_t> order(train.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    rng.shuffle(order);
    std::size_t cursor = 0;

    Tensors best = r.model.params;
    double bestRate = -1.0;
    double bestLoss = std::numeric_limits<double>::infinity();
    int misses = 0;
    while (r.state.step < tc.maxSteps) {
        double lossSum = 0.0;
        long n = 0;
        for (long s = 0; s < tc.iterationSteps && r.state.step < tc.maxSteps; ++s) {
            std::vector<Example> batch;
            for (int b = 0; b < mc.batchSize; ++b) {
                if (cursor == order.size()) {
                    rng.shuffle(order);
                    cursor = 0;
                }
                batch.push_back(train[order[cursor++]]);
                if (static_cast<std::size_t>(b + 1) >= train.size()) break;
            }
            lossSum += train_step(r.model, r.state, batch, tc);
            ++n;
        }
        r.state.lrScale *= tc.lrDecay;
        if (valid.empty()) {
            if (progress) progress(r.state.step, lossSum / static_cast<double>(std::max(1L, n)), -1.0);
            continue;
        }
        const double rate = exact_match_rate(r.model, valid);
        const double vloss = mean_loss(r.model, valid);
        r.state.validationHistory.emplace_back(r.state.step, rate);
        if (progress) progress(r.state.step, lossSum / static_cast<double>(std::max(1L, n)), rate);
        if (rate > bestRate || (rate == bestRate && vloss < bestLoss)) {
            bestRate = rate;
            bestLoss = vloss;
            best = r.model.params;
            r.bestStep = r.state.step;
            misses = 0;
        } else if (++misses >= tc.patience) {
            break;
        }
    }
    if (valid.empty()) {
        r.bestStep = r.state.step;
        return r;
    }
    r.model.params = std::move(best);
    r.bestValidation = bestRate;
    return r;
}

/// Seeded hold-out: `fraction` of the pairs (at least one when there are two
/// or more) go to validation, order otherwise preserved.
inline std::pair<std::vector<pairing::TrainingPair>, std::vector<pairing::TrainingPair>> split_validation(
    const std::vector<pairing::TrainingPair>& pairs, double fraction, std::uint64_t seed) {
    std::vector<std::size_t> idx(pairs.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    Rng rng(mix64(seed ^ 0xda7aULL));
    rng.shuffle(idx);
    std::size_t nValid = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pairs.size())));
    if (fraction > 0.0 && nValid == 0 && pairs.size() >= 2) nValid = 1;
    std::vector<bool> isValid(pairs.size(), false);
    for (std::size_t k = 0; k < nValid; ++k) isValid[idx[k]] = true;
    std::pair<std::vector<pairing::TrainingPair>, std::vector<pairing::TrainingPair>> out;
    for (std::size_t k = 0; k < pairs.size(); ++k) (isValid[k] ? out.second : out.first).push_back(pairs[k]);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (little-endian):
//   "VULNMTCK" | u32 version | u64 len, metadata JSON | u64 count, (u32 len, token)* |
//   u64 count, (u32 len, name, u64 rows, u64 cols, f64 data column-major)* | 32-byte SHA-256 of all preceding bytes

inline constexpr char kCheckpointMagic[8] = {'V', 'U', 'L', 'N', 'M', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
    for (std::size_t k = 0; k < sizeof(T); ++k) out += static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * k)) & 0xff);
}

inline void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    put_le(out, bits);
}

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}
    template <typename T>
    T get() {
        need(sizeof(T));
        std::uint64_t v = 0;
        for (std::size_t k = 0; k < sizeof(T); ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
        pos_ += sizeof(T);
        return static_cast<T>(v);
    }
    double f64() {
        const auto bits = get<std::uint64_t>();
        double d;
        std::memcpy(&d, &bits, sizeof d);
        return d;
    }
    std::string bytes(std::uint64_t n) {
        need(n);
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::uint64_t n) const {
        if (n > data_.size() - pos_) throw CorruptCheckpoint("checkpoint ends prematurely");
    }
    std::string_view data_;
    std::size_t pos_ = 0;
};

inline std::string digest_bytes(std::string_view body) {
    const auto hex = sha256_hex(body);
    std::string raw;
    for (std::size_t k = 0; k < hex.size(); k += 2) raw += static_cast<char>(std::stoi(hex.substr(k, 2), nullptr, 16));
    return raw;
}

}  // namespace detail

/// Serializes model (and optional training metadata) to checkpoint bytes.
inline std::string serialize_model(const Seq2SeqModel& m, const nlohmann::json& training = nlohmann::json::object()) {
    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    const nlohmann::json meta = {{"model", to_json(m.config)}, {"training", training}, {"vocabulary_size", m.vocabulary.size()}};
    const auto metaText = meta.dump();
    detail::put_le<std::uint64_t>(out, metaText.size());
    out += metaText;
    detail::put_le<std::uint64_t>(out, m.vocabulary.size());
    for (const auto& t : m.vocabulary.tokens()) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.size()));
        out += t;
    }
    detail::put_le<std::uint64_t>(out, m.params.size());
    for (std::size_t k = 0; k < m.params.size(); ++k) {
        const auto& name = m.layout.names[k];
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.params[k].rows()));
        detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.params[k].cols()));
        const double* d = m.params[k].data();
        for (Index i = 0; i < m.params[k].size(); ++i) detail::put_f64(out, d[i]);
    }
    out += detail::digest_bytes(out);
    return out;
}

struct LoadedCheckpoint {
    Seq2SeqModel model;
    nlohmann::json training;
};

inline LoadedCheckpoint deserialize_model(std::string_view bytes) {
    constexpr std::size_t kDigest = 32;
    if (bytes.size() < sizeof kCheckpointMagic + 4 + kDigest) throw CorruptCheckpoint("checkpoint too short");
    const auto body = bytes.substr(0, bytes.size() - kDigest);
    if (detail::digest_bytes(body) != bytes.substr(bytes.size() - kDigest)) throw CorruptCheckpoint("checkpoint digest mismatch");
    if (body.substr(0, sizeof kCheckpointMagic) != std::string_view(kCheckpointMagic, sizeof kCheckpointMagic))
        throw CorruptCheckpoint("not a checkpoint file");
    detail::Reader in(body.substr(sizeof kCheckpointMagic));
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion) throw VersionError("unsupported checkpoint version " + std::to_string(version));
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(in.bytes(in.get<std::uint64_t>()));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint(std::string("bad checkpoint metadata: ") + e.what());
    }
    const auto config = model_config_from_json(meta.at("model"));
    const auto nTokens = in.get<std::uint64_t>();
    std::vector<std::string> tokens;
    for (std::uint64_t k = 0; k < nTokens; ++k) tokens.push_back(in.bytes(in.get<std::uint32_t>()));
    if (tokens.size() < kReserved || meta.value("vocabulary_size", std::size_t{0}) != tokens.size())
        throw VersionError("checkpoint vocabulary does not match its metadata");
    Seq2SeqModel m;
    m.config = config;
    m.vocabulary = Vocabulary::from_tokens({tokens.begin() + kReserved, tokens.end()});
    m.layout = Layout::make(config, m.vocabulary.size());
    const auto nTensors = in.get<std::uint64_t>();
    if (nTensors != m.layout.names.size()) throw VersionError("checkpoint tensors do not match its configuration");
    for (std::size_t k = 0; k < nTensors; ++k) {
        const auto name = in.bytes(in.get<std::uint32_t>());
        const auto rows = static_cast<Index>(in.get<std::uint64_t>());
        const auto cols = static_cast<Index>(in.get<std::uint64_t>());
        if (name != m.layout.names[k] || rows != m.layout.shapes[k].first || cols != m.layout.shapes[k].second)
            throw VersionError("tensor " + name + " does not match the configuration and vocabulary");
        Matrix t(rows, cols);
        for (Index i = 0; i < t.size(); ++i) t.data()[i] = in.f64();
        m.params.push_back(std::move(t));
    }
    if (!in.done()) throw CorruptCheckpoint("trailing bytes in checkpoint");
    return {std::move(m), meta.value("training", nlohmann::json::object())};
}

inline void save_model(const Seq2SeqModel& m, const std::filesystem::path& path,
                       const nlohmann::json& training = nlohmann::json::object()) {
    write_file_atomic(path, serialize_model(m, training));
}

inline Seq2SeqModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)).model; }

/// Loads and insists on a specific vocabulary.
inline Seq2SeqModel load_model(const std::filesystem::path& path, const Vocabulary& expected) {
    auto m = load_model(path);
    if (!(m.vocabulary == expected)) throw VersionError("checkpoint vocabulary differs from the expected vocabulary");
    return m;
}

}  // namespace vulnmt::seq2seq
