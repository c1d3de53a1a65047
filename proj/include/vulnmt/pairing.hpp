#pragma once

// Pairs before-fix and after-fix functions, labels them, and turns them into
// the three kinds of training pairs (vulnerable→fixed, fixed→fixed,
// non-vulnerable→itself).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vulnmt/abstraction.hpp"
#include "vulnmt/corpus.hpp"
#include "vulnmt/cparse.hpp"
#include "vulnmt/errors.hpp"
#include "vulnmt/util.hpp"

namespace vulnmt::pairing {

using abstraction::AbstractedSequence;
using cparse::FunctionUnit;

struct FunctionPair {
    FunctionUnit before;
    FunctionUnit after;
    std::string signatureKey;
};

struct PairingResult {
    std::vector<FunctionPair> pairs;
    std::vector<FunctionUnit> discardedBefore;
    std::vector<FunctionUnit> discardedAfter;
};

/// Matches functions by signature key. Duplicate keys on one side are matched
/// in file order; anything left over is discarded.
inline PairingResult pair_functions(const std::vector<FunctionUnit>& before, const std::vector<FunctionUnit>& after) {
    std::map<std::string, std::vector<std::size_t>> afterByKey;
    for (std::size_t k = 0; k < after.size(); ++k) afterByKey[after[k].signatureKey].push_back(k);
    std::map<std::string, std::size_t> taken;
    std::vector<bool> usedAfter(after.size(), false);
    PairingResult out;
    for (const auto& b : before) {
        auto it = afterByKey.find(b.signatureKey);
        auto& next = taken[b.signatureKey];
        if (it == afterByKey.end() || next >= it->second.size()) {
            out.discardedBefore.push_back(b);
            continue;
        }
        const auto a = it->second[next++];
        usedAfter[a] = true;
        out.pairs.push_back({b, after[a], b.signatureKey});
    }
    for (std::size_t k = 0; k < after.size(); ++k)
        if (!usedAfter[k]) out.discardedAfter.push_back(after[k]);
    return out;
}

enum class FunctionLabel { Vulnerable, NonVulnerable };

struct LabeledFunction {
    FunctionLabel label = FunctionLabel::NonVulnerable;
    FunctionUnit before;               // the only copy when NonVulnerable
    std::optional<FunctionUnit> after;  // present iff Vulnerable
    std::string path;
    std::string functionName;
};

/// Vulnerable iff the comment/whitespace-free token texts differ.
inline LabeledFunction label_pair(const FunctionPair& pair, std::string path = {}) {
    const auto a = cparse::strip_noise(pair.before.headerTokens);
    const auto b = cparse::strip_noise(pair.after.headerTokens);
    const auto ab = cparse::strip_noise(pair.before.bodyTokens);
    const auto bb = cparse::strip_noise(pair.after.bodyTokens);
    auto texts = [](const cparse::TokenList& t) {
        std::vector<std::string> out;
        for (const auto& x : t) out.push_back(x.text);
        return out;
    };
    const bool differ = texts(a) != texts(b) || texts(ab) != texts(bb);
    LabeledFunction out;
    out.path = std::move(path);
    out.functionName = pair.before.name;
    out.before = pair.before;
    if (differ) {
        out.label = FunctionLabel::Vulnerable;
        out.after = pair.after;
    }
    return out;
}

enum class PairKind { VulnToFixed, FixedToFixed, NonVulnToSelf };

inline std::string_view kind_name(PairKind k) {
    switch (k) {
        case PairKind::VulnToFixed: return "vuln_to_fixed";
        case PairKind::FixedToFixed: return "fixed_to_fixed";
        case PairKind::NonVulnToSelf: return "nonvuln_to_self";
    }
    return "?";
}

struct TrainingPair {
    AbstractedSequence input;
    AbstractedSequence target;
    PairKind kind = PairKind::NonVulnToSelf;
};

struct PairingConfig {
    /// Non-vulnerable identity pairs kept per vulnerable→fixed pair.
    double nonVulnRatio = 5.0;
    std::uint64_t seed = 1;
    /// Also draw identity pairs from components that have no fix.
    bool includeNonVulnerableComponents = true;
};

/// Chunk-aligned pairs. Surplus before-chunks map to an empty target; every
/// after-chunk also yields an identity pair. Non-vulnerable identity pairs are
/// capped at nonVulnRatio × (#vulnerable→fixed) by a keyed hash sample, so the
/// selection does not depend on input order.
inline std::vector<TrainingPair> build_training_pairs(const std::vector<LabeledFunction>& labeled, const PairingConfig& cfg) {
    if (!(cfg.nonVulnRatio > 0.0)) throw ConfigError("nonVulnRatio must be positive");
    using abstraction::SequenceRole;
    std::vector<TrainingPair> fixPairs;
    std::vector<TrainingPair> identity;
    for (const auto& lf : labeled) {
        if (lf.label == FunctionLabel::Vulnerable) {
            auto [beforeTokens, map] = abstraction::abstract_function(lf.before);
            auto [afterTokens, shared] = abstraction::abstract_function(*lf.after, std::move(map));
            if (beforeTokens.empty() || afterTokens.empty()) continue;
            const auto before = abstraction::to_sequences(beforeTokens, {lf.path, lf.functionName, SequenceRole::VulnBefore});
            const auto after = abstraction::to_sequences(afterTokens, {lf.path, lf.functionName, SequenceRole::FixedAfter});
            for (std::size_t k = 0; k < before.size(); ++k) {
                AbstractedSequence target;
                if (k < after.size()) {
                    target = after[k];
                } else {
                    target.sourcePath = lf.path;
                    target.functionName = lf.functionName;
                    target.chunkIndex = k;
                    target.role = SequenceRole::FixedAfter;
                }
                fixPairs.push_back({before[k], std::move(target), PairKind::VulnToFixed});
            }
            for (const auto& a : after) fixPairs.push_back({a, a, PairKind::FixedToFixed});
        } else {
            auto [tokens, map] = abstraction::abstract_function(lf.before);
            if (tokens.empty()) continue;
            for (const auto& s : abstraction::to_sequences(tokens, {lf.path, lf.functionName, SequenceRole::NonVulnerable}))
                identity.push_back({s, s, PairKind::NonVulnToSelf});
        }
    }

    const auto nVuln = static_cast<double>(
        std::count_if(fixPairs.begin(), fixPairs.end(), [](const TrainingPair& p) { return p.kind == PairKind::VulnToFixed; }));
    const auto keep = static_cast<std::size_t>(std::floor(cfg.nonVulnRatio * nVuln + 1e-9));
    if (identity.size() > keep) {
        std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
        for (std::size_t k = 0; k < identity.size(); ++k) {
            const auto& s = identity[k].input;
            const auto key = mix64(hash_string(s.functionName, hash_string(s.sourcePath, mix64(cfg.seed))) ^ s.chunkIndex);
            keyed.emplace_back(key, k);
        }
        std::sort(keyed.begin(), keyed.end());
        keyed.resize(keep);
        std::vector<std::size_t> chosen;
        for (const auto& kv : keyed) chosen.push_back(kv.second);
        std::sort(chosen.begin(), chosen.end());
        std::vector<TrainingPair> sampled;
        for (auto k : chosen) sampled.push_back(std::move(identity[k]));
        identity = std::move(sampled);
    }
    fixPairs.insert(fixPairs.end(), std::make_move_iterator(identity.begin()), std::make_move_iterator(identity.end()));
    return fixPairs;
}

struct LabelingStats {
    std::size_t components = 0;
    std::size_t skippedComponents = 0;  // lexing or structure errors
    std::size_t discardedFunctions = 0;
};

/// Labeled functions of a vulnerable component's (source, fix) pair.
inline std::vector<LabeledFunction> label_component(const corpus::ComponentRecord& c) {
    const auto before = cparse::extract_functions(cparse::tokenize(c.source));
    const auto after = cparse::extract_functions(cparse::tokenize(*c.fixedSource));
    std::vector<LabeledFunction> out;
    for (const auto& p : pair_functions(before, after).pairs) out.push_back(label_pair(p, c.path));
    return out;
}

/// All labeled functions of a release's training material.
inline std::vector<LabeledFunction> label_material(const corpus::TrainingMaterial& material, const PairingConfig& cfg,
                                                   LabelingStats* stats = nullptr) {
    std::vector<LabeledFunction> out;
    LabelingStats local;
    for (const auto& c : material.components) {
        ++local.components;
        try {
            if (c.label == corpus::Label::Vulnerable) {
                const auto before = cparse::extract_functions(cparse::tokenize(c.source));
                const auto after = cparse::extract_functions(cparse::tokenize(*c.fixedSource));
                const auto paired = pair_functions(before, after);
                local.discardedFunctions += paired.discardedBefore.size() + paired.discardedAfter.size();
                for (const auto& p : paired.pairs) out.push_back(label_pair(p, c.path));
            } else if (cfg.includeNonVulnerableComponents) {
                for (const auto& fn : cparse::extract_functions(cparse::tokenize(c.source))) {
                    LabeledFunction lf;
                    lf.before = fn;
                    lf.path = c.path;
                    lf.functionName = fn.name;
                    out.push_back(std::move(lf));
                }
            }
        } catch (const LexError&) {
            ++local.skippedComponents;
        } catch (const StructureError&) {
            ++local.skippedComponents;
        }
    }
    if (stats) *stats = local;
    return out;
}

/// `kind\tinput\ttarget` line for the pair subcommand.
inline std::string format_pair(const TrainingPair& p) {
    return std::string(kind_name(p.kind)) + "\t" + p.input.text() + "\t" + p.target.text();
}

}  // namespace vulnmt::pairing
