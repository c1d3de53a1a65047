#pragma once

// Comparison techniques: text mining (binned bag of words), imports, function
// calls and static software metrics, each feeding one logistic classifier.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "vulnmt/corpus.hpp"
#include "vulnmt/cparse.hpp"
#include "vulnmt/errors.hpp"
#include "vulnmt/evaluate.hpp"
#include "vulnmt/util.hpp"

namespace vulnmt::baselines {

struct FeatureVector {
    std::string componentPath;
    std::map<std::string, double> values;
    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Frequencies of the non-punctuator significant tokens.
inline std::map<std::string, long> token_counts(std::string_view source) {
    std::map<std::string, long> counts;
    for (const auto& t : cparse::tokenize(source))
        if (!t.noise() && t.kind != cparse::TokenKind::Punctuator) ++counts[t.text];
    return counts;
}

/// Frequencies at or above this share the top bin.
inline constexpr double kBinCap = 1024.0;

/// Equal-width bins over log(frequency) on [log 1, log kBinCap].
inline int frequency_bin(long frequency, int bins) {
    if (bins <= 1 || frequency <= 1) return 0;
    const double pos = std::log(static_cast<double>(frequency)) / std::log(kBinCap);
    // frequencies sitting exactly on a bin edge belong to the upper bin
    return std::min(bins - 1, static_cast<int>(std::floor(pos * bins + 1e-9)));
}

inline FeatureVector bow_features(const corpus::ComponentRecord& c, int bins = 10) {
    if (bins < 1) throw ConfigError("bins must be at least 1");
    FeatureVector f{c.path, {}};
    for (const auto& [tok, n] : token_counts(c.source)) f.values["bow:" + tok] = frequency_bin(n, bins);
    return f;
}

inline FeatureVector import_features(const corpus::ComponentRecord& c) {
    FeatureVector f{c.path, {}};
    for (const auto& h : cparse::include_targets(cparse::tokenize(c.source))) f.values["imp:" + h] = 1.0;
    return f;
}

/// Names in call position, minus the component's own functions.
inline std::set<std::string> called_functions(std::string_view source) {
    const auto functions = cparse::extract_functions(cparse::tokenize(source));
    std::set<std::string> own, calls;
    for (const auto& fn : functions) own.insert(fn.name);
    for (const auto& fn : functions) {
        const auto sig = fn.significant();
        for (const auto& [idx, role] : cparse::classify_identifier_roles(sig))
            if (role == cparse::IdentifierRole::FunctionName && !own.count(sig[idx].text)) calls.insert(sig[idx].text);
    }
    return calls;
}

inline FeatureVector call_features(const corpus::ComponentRecord& c) {
    FeatureVector f{c.path, {}};
    for (const auto& name : called_functions(c.source)) f.values["call:" + name] = 1.0;
    return f;
}

struct StaticMetrics {
    long loc = 0, cyclomatic = 0, maxNesting = 0, nFunctions = 0;
};

inline StaticMetrics static_metrics(std::string_view source) {
    StaticMetrics m;
    std::size_t start = 0;
    while (start < source.size()) {
        auto end = source.find('\n', start);
        if (end == std::string_view::npos) end = source.size();
        const auto line = source.substr(start, end - start);
        if (line.find_first_not_of(" \t\r\f\v") != std::string_view::npos) ++m.loc;
        start = end + 1;
    }
    for (const auto& fn : cparse::extract_functions(cparse::tokenize(source))) {
        ++m.nFunctions;
        long cc = 1, depth = 0;
        for (const auto& t : fn.bodyTokens) {
            if (t.noise()) continue;
            if ((t.kind == cparse::TokenKind::Keyword && (t.text == "if" || t.text == "while" || t.text == "for" || t.text == "case")) ||
                t.is("&&") || t.is("||"))
                ++cc;
            if (t.is("{")) m.maxNesting = std::max(m.maxNesting, ++depth);
            if (t.is("}")) --depth;
        }
        m.cyclomatic += cc;
    }
    return m;
}

inline FeatureVector static_metric_features(const corpus::ComponentRecord& c) {
    const auto m = static_metrics(c.source);
    return {c.path,
            {{"met:loc", static_cast<double>(m.loc)},
             {"met:cyclomatic", static_cast<double>(m.cyclomatic)},
             {"met:maxNesting", static_cast<double>(m.maxNesting)},
             {"met:nFunctions", static_cast<double>(m.nFunctions)}}};
}

// ---------------------------------------------------------------------------
// Classifier

struct ClassifierConfig {
    int iterations = 20000;
    double learningRate = 0.5;
    double l2 = 1e-4;
    double threshold = 0.5;
};

/// Model inputs: binned bag-of-words values become one indicator per
/// (token, bin); metric values enter as log1p; others as given.
inline std::map<std::string, double> expand(const FeatureVector& f) {
    std::map<std::string, double> out;
    for (const auto& [name, v] : f.values) {
        if (name.rfind("bow:", 0) == 0) out[name + "#" + std::to_string(static_cast<long>(v))] = 1.0;
        else if (name.rfind("met:", 0) == 0) out[name] = std::log1p(std::max(0.0, v));
        else out[name] = v;
    }
    return out;
}

class LinearClassifier {
public:
    std::map<std::string, double> weights;
    double bias = 0.0;
    double threshold = 0.5;

    double score(const FeatureVector& f) const {
        double z = bias;
        for (const auto& [name, v] : expand(f)) {
            auto it = weights.find(name);
            if (it != weights.end()) z += it->second * v;
        }
        return 1.0 / (1.0 + std::exp(-z));
    }
    bool predict(const FeatureVector& f) const { return score(f) >= threshold; }
};

/// Class-balanced logistic regression with L2, full-batch gradient descent
/// from zero weights.
inline LinearClassifier train_classifier(const std::vector<std::pair<FeatureVector, bool>>& data, const ClassifierConfig& cfg = {}) {
    if (data.empty()) throw DegenerateLabels("no training data");
    const auto nPos = std::count_if(data.begin(), data.end(), [](const auto& d) { return d.second; });
    const auto nNeg = static_cast<long>(data.size()) - nPos;
    if (nPos == 0 || nNeg == 0) throw DegenerateLabels("training data has a single class");

    std::map<std::string, std::size_t> index;
    std::vector<std::vector<std::pair<std::size_t, double>>> rows;
    for (const auto& [f, y] : data) {
        std::vector<std::pair<std::size_t, double>> row;
        for (const auto& [name, v] : expand(f)) {
            auto it = index.emplace(name, index.size()).first;
            row.emplace_back(it->second, v);
        }
        rows.push_back(std::move(row));
    }
    std::vector<double> sampleWeight;
    for (const auto& d : data) sampleWeight.push_back(0.5 / static_cast<double>(d.second ? nPos : nNeg));

    std::vector<double> w(index.size(), 0.0), grad(index.size());
    double b = 0.0;
    for (int it = 0; it < cfg.iterations; ++it) {
        for (std::size_t k = 0; k < w.size(); ++k) grad[k] = cfg.l2 * w[k];
        double gb = 0.0;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            double z = b;
            for (const auto& [k, v] : rows[r]) z += w[k] * v;
            const double err = (1.0 / (1.0 + std::exp(-z)) - (data[r].second ? 1.0 : 0.0)) * sampleWeight[r];
            for (const auto& [k, v] : rows[r]) grad[k] += err * v;
            gb += err;
        }
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= cfg.learningRate * grad[k];
        b -= cfg.learningRate * gb;
    }
    LinearClassifier c;
    c.bias = b;
    c.threshold = cfg.threshold;
    for (const auto& [name, k] : index) c.weights[name] = w[k];
    return c;
}

// ---------------------------------------------------------------------------
// Techniques

enum class Technique { SoftwareMetrics, Imports, FunctionCalls, TextMining };

inline std::string_view technique_name(Technique t) {
    switch (t) {
        case Technique::SoftwareMetrics: return "metrics";
        case Technique::Imports: return "imports";
        case Technique::FunctionCalls: return "calls";
        case Technique::TextMining: return "textmining";
    }
    return "?";
}

inline Technique parse_technique(std::string_view s) {
    for (auto t : {Technique::SoftwareMetrics, Technique::Imports, Technique::FunctionCalls, Technique::TextMining})
        if (technique_name(t) == s) return t;
    throw ConfigError("unknown technique '" + std::string(s) + "' (expected metrics|imports|calls|textmining)");
}

struct BaselineConfig {
    int bins = 10;
    ClassifierConfig classifier;
    /// Also train on each fix's after-version, labeled non-vulnerable.
    bool fixedAsNegatives = true;
    corpus::MaterialOptions material;
    unsigned jobs = 1;
};

/// Features of one component; unparseable sources give an empty vector.
inline FeatureVector features(Technique t, const corpus::ComponentRecord& c, int bins) {
    try {
        switch (t) {
            case Technique::SoftwareMetrics: return static_metric_features(c);
            case Technique::Imports: return import_features(c);
            case Technique::FunctionCalls: return call_features(c);
            case Technique::TextMining: return bow_features(c, bins);
        }
    } catch (const LexError&) {
    } catch (const StructureError&) {
    }
    return {c.path, {}};
}

inline std::vector<evaluate::EvaluationReport> run_baseline(const corpus::Corpus& corpus, Technique technique, corpus::Setting setting,
                                                            const BaselineConfig& cfg = {}) {
    return evaluate::run_protocol(
        corpus, setting, std::string(technique_name(technique)),
        [&](const corpus::TrainingMaterial& material, const corpus::Release& test, std::size_t) {
            std::vector<std::pair<FeatureVector, bool>> data;
            for (const auto& c : material.components) {
                data.emplace_back(features(technique, c, cfg.bins), c.label == corpus::Label::Vulnerable);
                if (cfg.fixedAsNegatives && c.fixedSource) {
                    auto fixed = c;
                    fixed.source = *c.fixedSource;
                    data.emplace_back(features(technique, fixed, cfg.bins), false);
                }
            }
            const auto model = train_classifier(data, cfg.classifier);
            evaluate::Verdicts out;
            for (const auto& c : test.components) out.emplace_back(c.path, model.predict(features(technique, c, cfg.bins)));
            return out;
        },
        cfg.jobs, cfg.material);
}

}  // namespace vulnmt::baselines
