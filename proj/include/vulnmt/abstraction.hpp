#pragma once

// Replaces user-defined names and literals with positional IDs (F_n, T_n,
// V_n, L_n) and cuts the result into sequences of at most 50 tokens.

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vulnmt/cparse.hpp"
#include "vulnmt/errors.hpp"

namespace vulnmt::abstraction {

inline constexpr std::size_t kMaxSequenceTokens = 50;

enum class EntityRole : std::size_t { Function = 0, Type = 1, Variable = 2, Literal = 3 };

inline constexpr std::array<char, 4> kRolePrefix = {'F', 'T', 'V', 'L'};

/// Per-role spelling → ID tables. IDs are dense from 1 in first-seen order.
class IdMap {
public:
    /// Returns the ID for `spelling`, allocating the next one if unseen.
    std::string id_for(EntityRole role, const std::string& spelling) {
        auto& table = tables_[static_cast<std::size_t>(role)];
        auto it = table.find(spelling);
        if (it == table.end()) {
            auto& next = next_[static_cast<std::size_t>(role)];
            it = table.emplace(spelling, next++).first;
        }
        return format(role, it->second);
    }

    std::optional<std::string> lookup(EntityRole role, const std::string& spelling) const {
        const auto& table = tables_[static_cast<std::size_t>(role)];
        auto it = table.find(spelling);
        if (it == table.end()) return std::nullopt;
        return format(role, it->second);
    }

    std::size_t size(EntityRole role) const { return tables_[static_cast<std::size_t>(role)].size(); }

    /// Spelling → numeric ID for one role.
    const std::map<std::string, int>& table(EntityRole role) const { return tables_[static_cast<std::size_t>(role)]; }

    /// A map in which every ID-shaped token of `tokens` maps to itself.
    static IdMap seeded_identity(const std::vector<std::string>& tokens) {
        IdMap m;
        for (const auto& t : tokens) {
            if (auto parsed = parse_id(t)) {
                const auto r = static_cast<std::size_t>(parsed->first);
                m.tables_[r].emplace(t, parsed->second);
                m.next_[r] = std::max(m.next_[r], parsed->second + 1);
            }
        }
        return m;
    }

    /// Splits "V_12" into (Variable, 12).
    static std::optional<std::pair<EntityRole, int>> parse_id(std::string_view s) {
        if (s.size() < 3 || s[1] != '_') return std::nullopt;
        std::size_t r = 0;
        while (r < 4 && kRolePrefix[r] != s[0]) ++r;
        if (r == 4) return std::nullopt;
        int v = 0;
        for (std::size_t i = 2; i < s.size(); ++i) {
            if (s[i] < '0' || s[i] > '9' || v > 100000000) return std::nullopt;
            v = v * 10 + (s[i] - '0');
        }
        return std::pair{static_cast<EntityRole>(r), v};
    }

    static std::string format(EntityRole role, int id) {
        return std::string(1, kRolePrefix[static_cast<std::size_t>(role)]) + "_" + std::to_string(id);
    }

    friend bool operator==(const IdMap&, const IdMap&) = default;

private:
    std::array<std::map<std::string, int>, 4> tables_;
    std::array<int, 4> next_ = {1, 1, 1, 1};
};

inline EntityRole entity_role(cparse::IdentifierRole r) {
    switch (r) {
        case cparse::IdentifierRole::FunctionName: return EntityRole::Function;
        case cparse::IdentifierRole::TypeName: return EntityRole::Type;
        case cparse::IdentifierRole::VariableName: return EntityRole::Variable;
    }
    return EntityRole::Variable;
}

/// Abstracts an already noise-free token list.
inline std::pair<std::vector<std::string>, IdMap> abstract_tokens(const cparse::TokenList& sig, std::optional<IdMap> shared = {}) {
    IdMap map = shared ? std::move(*shared) : IdMap{};
    const auto roles = cparse::classify_identifier_roles(sig);
    std::vector<std::string> out;
    out.reserve(sig.size());
    for (std::size_t k = 0; k < sig.size(); ++k) {
        const auto& t = sig[k];
        switch (t.kind) {
            case cparse::TokenKind::Identifier: {
                const auto role = entity_role(roles.at(k));
                if (map.lookup(role, t.text)) {
                    out.push_back(*map.lookup(role, t.text));
                } else if (auto id = IdMap::parse_id(t.text); id && map.lookup(id->first, t.text)) {
                    // An ID seeded into the map keeps its own role.
                    out.push_back(t.text);
                } else {
                    out.push_back(map.id_for(role, t.text));
                }
                break;
            }
            case cparse::TokenKind::StringLiteral:
            case cparse::TokenKind::CharLiteral:
                out.push_back(map.id_for(EntityRole::Literal, t.text));
                break;
            case cparse::TokenKind::Comment:
            case cparse::TokenKind::Whitespace:
                break;
            default:
                out.push_back(t.text);
        }
    }
    return {std::move(out), std::move(map)};
}

/// Abstracts one function. Pass the before-fix map as `shared` when
/// abstracting the after-fix copy so both copies use the same IDs.
inline std::pair<std::vector<std::string>, IdMap> abstract_function(const cparse::FunctionUnit& fn,
                                                                    std::optional<IdMap> shared = {}) {
    return abstract_tokens(fn.significant(), std::move(shared));
}

enum class SequenceRole { VulnBefore, FixedAfter, NonVulnerable };

struct AbstractedSequence {
    std::vector<std::string> tokens;
    std::string sourcePath;
    std::string functionName;
    std::size_t chunkIndex = 0;
    SequenceRole role = SequenceRole::NonVulnerable;

    /// Space-joined text form, without the trailing newline.
    std::string text() const {
        std::string s;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (i) s += ' ';
            s += tokens[i];
        }
        return s;
    }

    friend bool operator==(const AbstractedSequence&, const AbstractedSequence&) = default;
};

struct SequenceMeta {
    std::string sourcePath;
    std::string functionName;
    SequenceRole role = SequenceRole::NonVulnerable;
};

/// Greedy left-to-right split into ceil(n/50) chunks.
inline std::vector<AbstractedSequence> to_sequences(const std::vector<std::string>& tokens, const SequenceMeta& meta) {
    if (tokens.empty()) throw EmptyFunction("function '" + meta.functionName + "' has no tokens");
    std::vector<AbstractedSequence> out;
    for (std::size_t start = 0, chunk = 0; start < tokens.size(); start += kMaxSequenceTokens, ++chunk) {
        const auto end = std::min(tokens.size(), start + kMaxSequenceTokens);
        out.push_back({{tokens.begin() + static_cast<std::ptrdiff_t>(start), tokens.begin() + static_cast<std::ptrdiff_t>(end)},
                       meta.sourcePath,
                       meta.functionName,
                       chunk,
                       meta.role});
    }
    return out;
}

/// True if `tok` belongs to the abstracted alphabet: a C keyword, an ID, or a
/// single punctuator / number literal.
inline bool in_abstract_alphabet(const std::string& tok) {
    static const std::regex kId("(F|T|V|L)_[0-9]+");
    if (cparse::is_keyword(tok) || std::regex_match(tok, kId)) return true;
    try {
        const auto lexed = cparse::tokenize(tok);
        return lexed.size() == 1 && (lexed[0].kind == cparse::TokenKind::Punctuator ||
                                     lexed[0].kind == cparse::TokenKind::NumberLiteral);
    } catch (const LexError&) {
        return false;
    }
}

/// Sequences of one source text: every extracted function, abstracted with a
/// fresh map and chunked. Functions with no tokens are skipped.
inline std::vector<AbstractedSequence> sequences_for_source(std::string_view source, const std::string& path,
                                                            SequenceRole role = SequenceRole::NonVulnerable) {
    std::vector<AbstractedSequence> out;
    for (const auto& fn : cparse::extract_functions(cparse::tokenize(source))) {
        auto [tokens, map] = abstract_function(fn);
        if (tokens.empty()) continue;
        auto seqs = to_sequences(tokens, {path, fn.name, role});
        out.insert(out.end(), seqs.begin(), seqs.end());
    }
    return out;
}

}  // namespace vulnmt::abstraction
