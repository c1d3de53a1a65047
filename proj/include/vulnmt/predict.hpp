#pragma once

// Component verdicts: a component is vulnerable iff the model rewrites any of
// its abstracted sequences.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vulnmt/abstraction.hpp"
#include "vulnmt/corpus.hpp"
#include "vulnmt/cparse.hpp"
#include "vulnmt/seq2seq.hpp"
#include "vulnmt/util.hpp"

namespace vulnmt::predict {

struct ModifiedSequence {
    std::string functionName;
    std::size_t chunkIndex = 0;
    friend bool operator==(const ModifiedSequence&, const ModifiedSequence&) = default;
};

struct ComponentVerdict {
    std::string path;
    bool predictedVulnerable = false;
    std::vector<ModifiedSequence> modifiedSequences;
    std::size_t totalSequences = 0;
    std::size_t skippedFunctions = 0;

    friend bool operator==(const ComponentVerdict&, const ComponentVerdict&) = default;
};

/// True iff decoding changes the chunk (index space, after UNK mapping).
inline bool sequence_modified(const seq2seq::Seq2SeqModel& model, const std::vector<std::string>& tokens) {
    const auto ids = model.vocabulary.encode(tokens);
    return seq2seq::translate(model, ids) != ids;
}

inline ComponentVerdict predict_source(const seq2seq::Seq2SeqModel& model, const std::string& path, std::string_view source) {
    ComponentVerdict v;
    v.path = path;
    std::vector<cparse::FunctionUnit> functions;
    try {
        functions = cparse::extract_functions(cparse::tokenize(source));
    } catch (const Error&) {
        return v;
    }
    for (const auto& fn : functions) {
        auto [tokens, map] = abstraction::abstract_function(fn);
        if (tokens.empty()) {
            ++v.skippedFunctions;
            continue;
        }
        for (const auto& seq : abstraction::to_sequences(tokens, {path, fn.name, abstraction::SequenceRole::NonVulnerable})) {
            ++v.totalSequences;
            if (sequence_modified(model, seq.tokens)) v.modifiedSequences.push_back({seq.functionName, seq.chunkIndex});
        }
    }
    v.predictedVulnerable = !v.modifiedSequences.empty();
    return v;
}

inline ComponentVerdict predict_component(const seq2seq::Seq2SeqModel& model, const corpus::ComponentRecord& component) {
    return predict_source(model, component.path, component.source);
}

/// One verdict per component, in release order.
inline std::vector<ComponentVerdict> predict_release(const seq2seq::Seq2SeqModel& model, const corpus::Release& release,
                                                     unsigned jobs = 1) {
    return parallel_map<ComponentVerdict>(release.components.size(), jobs,
                                          [&](std::size_t k) { return predict_component(model, release.components[k]); });
}

inline nlohmann::ordered_json to_json(const ComponentVerdict& v) {
    nlohmann::ordered_json modified = nlohmann::ordered_json::array();
    for (const auto& m : v.modifiedSequences) modified.push_back({{"function", m.functionName}, {"chunk", m.chunkIndex}});
    return {{"path", v.path}, {"vulnerable", v.predictedVulnerable}, {"modified", modified}, {"total_sequences", v.totalSequences}};
}

}  // namespace vulnmt::predict
