#pragma once

// Lossless C tokenizer, top-level function extraction and a heuristic
// identifier-role classifier. No preprocessing is performed: directives are
// lexed as ordinary tokens and macros are ordinary identifiers.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vulnmt/errors.hpp"

namespace vulnmt::cparse {

enum class TokenKind { Keyword, Identifier, StringLiteral, CharLiteral, NumberLiteral, Punctuator, Comment, Whitespace };

inline std::string_view kind_name(TokenKind k) {
    switch (k) {
        case TokenKind::Keyword: return "KEYWORD";
        case TokenKind::Identifier: return "IDENTIFIER";
        case TokenKind::StringLiteral: return "STRING";
        case TokenKind::CharLiteral: return "CHAR";
        case TokenKind::NumberLiteral: return "NUMBER";
        case TokenKind::Punctuator: return "PUNCT";
        case TokenKind::Comment: return "COMMENT";
        case TokenKind::Whitespace: return "WHITESPACE";
    }
    return "?";
}

struct Token {
    std::string text;
    TokenKind kind;

    bool is(std::string_view s) const { return text == s && kind != TokenKind::StringLiteral && kind != TokenKind::CharLiteral; }
    bool noise() const { return kind == TokenKind::Comment || kind == TokenKind::Whitespace; }
    friend bool operator==(const Token&, const Token&) = default;
};

using TokenList = std::vector<Token>;

// C89 + C99 keyword table.
inline constexpr std::array<std::string_view, 37> kKeywords = {
    "auto",     "break",    "case",     "char",   "const",    "continue", "default",   "do",
    "double",   "else",     "enum",     "extern", "float",    "for",      "goto",      "if",
    "inline",   "int",      "long",     "register", "restrict", "return", "short",     "signed",
    "sizeof",   "static",   "struct",   "switch", "typedef",  "union",    "unsigned",  "void",
    "volatile", "while",    "_Bool",    "_Complex", "_Imaginary"};

inline bool is_keyword(std::string_view s) {
    return std::find(kKeywords.begin(), kKeywords.end(), s) != kKeywords.end();
}

// Longest first so greedy matching picks the longest punctuator.
inline constexpr std::array<std::string_view, 29> kMultiPunctuators = {
    "%:%:", "...", "<<=", ">>=", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&",
    "||",   "*=",  "/=",  "%=",  "+=", "-=", "&=", "^=", "|=", "##", "<:", ":>", "<%", "%>", "%:"};

namespace detail {

inline bool ident_start(unsigned char c) { return std::isalpha(c) || c == '_' || c >= 0x80; }
inline bool ident_char(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

// Scans a quoted literal starting at `pos` (the opening quote); returns the
// offset one past the closing quote. Newline or EOF before the close is an error.
inline std::size_t scan_quoted(std::string_view src, std::size_t start, std::size_t pos, char quote) {
    ++pos;
    while (pos < src.size()) {
        const char c = src[pos];
        if (c == '\\') {
            pos += 2;
            continue;
        }
        if (c == '\n') break;
        if (c == quote) return pos + 1;
        ++pos;
    }
    throw LexError(start, quote == '"' ? "unterminated string literal" : "unterminated character literal");
}

}  // namespace detail

/// Splits `source` into tokens whose concatenated text reproduces it exactly.
inline TokenList tokenize(std::string_view src) {
    TokenList out;
    std::size_t i = 0;
    const std::size_t n = src.size();
    auto emit = [&](std::size_t from, std::size_t to, TokenKind k) {
        out.push_back({std::string(src.substr(from, to - from)), k});
    };
    while (i < n) {
        const std::size_t start = i;
        const auto c = static_cast<unsigned char>(src[i]);

        // Whitespace, with backslash-newline folded in.
        if (std::isspace(c) || (c == '\\' && i + 1 < n && (src[i + 1] == '\n' || src[i + 1] == '\r'))) {
            while (i < n) {
                const auto d = static_cast<unsigned char>(src[i]);
                if (std::isspace(d)) {
                    ++i;
                } else if (d == '\\' && i + 1 < n && (src[i + 1] == '\n' || src[i + 1] == '\r')) {
                    i += 2;
                } else {
                    break;
                }
            }
            emit(start, i, TokenKind::Whitespace);
            continue;
        }

        if (c == '/' && i + 1 < n && src[i + 1] == '/') {
            while (i < n && src[i] != '\n') ++i;
            emit(start, i, TokenKind::Comment);
            continue;
        }
        if (c == '/' && i + 1 < n && src[i + 1] == '*') {
            const auto close = src.find("*/", i + 2);
            if (close == std::string_view::npos) throw LexError(start, "unterminated block comment");
            i = close + 2;
            emit(start, i, TokenKind::Comment);
            continue;
        }

        if (detail::ident_start(c)) {
            while (i < n && detail::ident_char(static_cast<unsigned char>(src[i]))) ++i;
            const auto word = src.substr(start, i - start);
            // Encoding prefixes glue onto a following literal.
            if (i < n && (src[i] == '"' || src[i] == '\'') &&
                (word == "L" || word == "u" || word == "U" || word == "u8")) {
                const char q = src[i];
                i = detail::scan_quoted(src, start, i, q);
                emit(start, i, q == '"' ? TokenKind::StringLiteral : TokenKind::CharLiteral);
                continue;
            }
            emit(start, i, is_keyword(word) ? TokenKind::Keyword : TokenKind::Identifier);
            continue;
        }

        if (c == '"' || c == '\'') {
            i = detail::scan_quoted(src, start, i, static_cast<char>(c));
            emit(start, i, c == '"' ? TokenKind::StringLiteral : TokenKind::CharLiteral);
            continue;
        }

        // pp-number
        if (std::isdigit(c) || (c == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
            ++i;
            while (i < n) {
                const auto d = static_cast<unsigned char>(src[i]);
                if ((d == '+' || d == '-') && (src[i - 1] == 'e' || src[i - 1] == 'E' || src[i - 1] == 'p' || src[i - 1] == 'P')) {
                    ++i;
                } else if (std::isalnum(d) || d == '_' || d == '.') {
                    ++i;
                } else {
                    break;
                }
            }
            emit(start, i, TokenKind::NumberLiteral);
            continue;
        }

        std::size_t len = 1;
        for (auto p : kMultiPunctuators) {
            if (src.substr(i, p.size()) == p) {
                len = p.size();
                break;
            }
        }
        i += len;
        emit(start, i, TokenKind::Punctuator);
    }
    return out;
}

/// Drops comments and whitespace, preserving order.
inline TokenList strip_noise(const TokenList& tokens) {
    TokenList out;
    out.reserve(tokens.size());
    for (const auto& t : tokens)
        if (!t.noise()) out.push_back(t);
    return out;
}

inline std::string join_text(const TokenList& tokens, std::string_view sep = "") {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += sep;
        out += tokens[i].text;
    }
    return out;
}

struct FunctionUnit {
    std::string name;
    std::string signatureKey;
    TokenList headerTokens;
    TokenList bodyTokens;

    /// Header followed by body, comments and whitespace removed.
    TokenList significant() const {
        auto out = strip_noise(headerTokens);
        auto body = strip_noise(bodyTokens);
        out.insert(out.end(), body.begin(), body.end());
        return out;
    }
};

namespace detail {

inline bool ends_line(const Token& t) {
    if (t.kind != TokenKind::Whitespace) return false;
    for (std::size_t i = 0; i < t.text.size(); ++i) {
        if (t.text[i] == '\n' && (i == 0 || t.text[i - 1] != '\\') &&
            !(i >= 2 && t.text[i - 1] == '\r' && t.text[i - 2] == '\\'))
            return true;
    }
    return false;
}

// Return type + name + parameter types; parameter names are dropped.
inline std::string signature_key(const TokenList& header, std::size_t nameIdx) {
    std::string key;
    auto append = [&key](std::string_view s) {
        if (!key.empty()) key += ' ';
        key += s;
    };
    for (std::size_t i = 0; i <= nameIdx; ++i) append(header[i].text);
    append("(");

    // Split the parameter list at top-level commas.
    std::vector<TokenList> params(1);
    int depth = 0;
    for (std::size_t i = nameIdx + 2; i < header.size(); ++i) {
        const auto& t = header[i];
        if (t.is("(") || t.is("[")) ++depth;
        if (t.is(")") || t.is("]")) {
            if (depth == 0) break;
            --depth;
        }
        if (depth == 0 && t.is(",")) {
            params.emplace_back();
            continue;
        }
        params.back().push_back(t);
    }
    bool first = true;
    for (const auto& p : params) {
        if (!first) append(",");
        first = false;
        std::ptrdiff_t drop = -1;
        if (p.size() > 1) {
            for (std::ptrdiff_t k = static_cast<std::ptrdiff_t>(p.size()) - 1; k > 0; --k) {
                if (p[k].kind != TokenKind::Identifier) continue;
                const auto& prev = p[k - 1];
                if (!(prev.is("struct") || prev.is("union") || prev.is("enum"))) drop = k;
                break;
            }
        }
        for (std::size_t k = 0; k < p.size(); ++k)
            if (static_cast<std::ptrdiff_t>(k) != drop) append(p[k].text);
    }
    append(")");
    return key;
}

}  // namespace detail

/// Finds every file-scope `identifier ( params ) {` definition with a balanced
/// body. Declarations, struct bodies, initializers and unrecognized shapes
/// (K&R definitions, function-pointer returns) are skipped.
inline std::vector<FunctionUnit> extract_functions(const TokenList& tokens) {
    std::vector<FunctionUnit> out;
    std::size_t headerStart = 0;  // first raw index after the last file-scope boundary
    bool atLineStart = true;
    std::size_t i = 0;
    const std::size_t n = tokens.size();

    auto next_sig = [&](std::size_t from) {
        while (from < n && tokens[from].noise()) ++from;
        return from;
    };
    auto skip_braces = [&](std::size_t open) {  // returns index of the matching '}'
        int depth = 0;
        for (std::size_t k = open; k < n; ++k) {
            if (tokens[k].is("{")) ++depth;
            if (tokens[k].is("}") && --depth == 0) return k;
        }
        throw StructureError("unbalanced braces: '{' never closed");
    };

    while (i < n) {
        const auto& t = tokens[i];
        if (t.noise()) {
            if (detail::ends_line(t)) atLineStart = true;
            ++i;
            continue;
        }
        if (atLineStart && t.is("#")) {
            while (i < n && !detail::ends_line(tokens[i])) ++i;
            headerStart = i;
            continue;
        }
        atLineStart = false;
        if (t.is(";")) {
            headerStart = ++i;
            continue;
        }
        if (t.is("}")) throw StructureError("unbalanced braces: unexpected '}' at file scope");
        if (t.is("{")) {
            const auto close = skip_braces(i);
            headerStart = i = close + 1;
            continue;
        }
        if (t.kind == TokenKind::Identifier) {
            const auto open = next_sig(i + 1);
            if (open < n && tokens[open].is("(")) {
                int depth = 0;
                std::size_t k = open;
                for (; k < n; ++k) {
                    if (tokens[k].is("(")) ++depth;
                    if (tokens[k].is(")") && --depth == 0) break;
                }
                if (k < n) {
                    const auto brace = next_sig(k + 1);
                    if (brace < n && tokens[brace].is("{")) {
                        const auto close = skip_braces(brace);
                        FunctionUnit fn;
                        fn.name = t.text;
                        auto hs = next_sig(headerStart);
                        for (std::size_t h = hs; h <= k; ++h) fn.headerTokens.push_back(tokens[h]);
                        for (std::size_t b = brace; b <= close; ++b) fn.bodyTokens.push_back(tokens[b]);
                        const auto sig = strip_noise(fn.headerTokens);
                        std::size_t nameIdx = 0;
                        for (std::size_t h = 0, raw = hs; raw <= i; ++raw)
                            if (!tokens[raw].noise()) nameIdx = h++;
                        fn.signatureKey = detail::signature_key(sig, nameIdx);
                        out.push_back(std::move(fn));
                        headerStart = i = close + 1;
                        continue;
                    }
                    i = k + 1;
                    continue;
                }
            }
        }
        ++i;
    }
    return out;
}

enum class IdentifierRole { FunctionName, TypeName, VariableName };

/// Role per identifier occurrence, keyed by index into fn.significant().
using RoleMap = std::map<std::size_t, IdentifierRole>;

/// Heuristic classification:
///  - followed by "(" is a function name (macros included);
///  - after struct/union/enum, in a `( X * )` cast, or leading a declaration
///    (`X name`, `X *name;`) is a type name;
///  - everything else is a variable name.
/// All occurrences of one spelling then take the role of the first
/// occurrence, except that a function-name occurrence overrides a variable one.
inline RoleMap classify_identifier_roles(const TokenList& sig) {
    const std::size_t n = sig.size();
    auto at = [&](std::ptrdiff_t k) -> const Token* {
        return (k >= 0 && static_cast<std::size_t>(k) < n) ? &sig[k] : nullptr;
    };
    auto is = [&](std::ptrdiff_t k, std::string_view s) {
        const auto* t = at(k);
        return t && t->is(s);
    };

    // Parameter list span: the parenthesis right after the function name,
    // which is the last identifier before the first "{".
    std::size_t paramOpen = n, paramClose = n;
    for (std::size_t k = 0; k + 1 < n; ++k) {
        if (sig[k].is("{")) break;
        if (sig[k].kind == TokenKind::Identifier && sig[k + 1].is("(")) paramOpen = k + 1;
    }
    if (paramOpen < n) {
        int depth = 0;
        for (std::size_t k = paramOpen; k < n; ++k) {
            if (sig[k].is("(")) ++depth;
            if (sig[k].is(")") && --depth == 0) {
                paramClose = k;
                break;
            }
        }
    }
    auto in_params = [&](std::size_t k) { return k > paramOpen && k < paramClose; };

    static constexpr std::array<std::string_view, 7> kDeclLead = {"const", "volatile", "static", "extern",
                                                                  "register", "auto", "inline"};
    auto declaration_context = [&](std::size_t k) {
        const auto* p = at(static_cast<std::ptrdiff_t>(k) - 1);
        if (!p) return true;
        if (p->is("{") || p->is(";") || p->is("}")) return true;
        if ((p->is("(") || p->is(",")) && in_params(k)) return true;
        if (p->kind == TokenKind::Keyword)
            return std::find(kDeclLead.begin(), kDeclLead.end(), p->text) != kDeclLead.end();
        return false;
    };
    auto declarator_follows = [&](std::size_t k) {
        std::size_t j = k + 1;
        if (j < n && sig[j].kind == TokenKind::Identifier) return true;
        bool star = false;
        while (j < n && (sig[j].is("*") || sig[j].is("const") || sig[j].is("volatile") || sig[j].is("restrict"))) {
            star = star || sig[j].is("*");
            ++j;
        }
        if (!star || j >= n || sig[j].kind != TokenKind::Identifier) return false;
        const auto* after = at(static_cast<std::ptrdiff_t>(j) + 1);
        return after && (after->is(";") || after->is("=") || after->is(",") || after->is(")") || after->is("["));
    };

    RoleMap local;
    for (std::size_t k = 0; k < n; ++k) {
        if (sig[k].kind != TokenKind::Identifier) continue;
        const auto sk = static_cast<std::ptrdiff_t>(k);
        IdentifierRole role = IdentifierRole::VariableName;
        if (is(sk + 1, "(")) {
            role = IdentifierRole::FunctionName;
        } else if (is(sk - 1, "struct") || is(sk - 1, "union") || is(sk - 1, "enum")) {
            role = IdentifierRole::TypeName;
        } else if (is(sk - 1, "(") && is(sk + 1, "*")) {
            std::size_t j = k + 1;
            while (j < n && sig[j].is("*")) ++j;
            if (j < n && sig[j].is(")")) role = IdentifierRole::TypeName;
        }
        if (role == IdentifierRole::VariableName && declaration_context(k) && declarator_follows(k))
            role = IdentifierRole::TypeName;
        local[k] = role;
    }

    std::unordered_map<std::string, IdentifierRole> bySpelling;
    for (const auto& [k, role] : local) {
        auto [it, inserted] = bySpelling.emplace(sig[k].text, role);
        if (!inserted && it->second == IdentifierRole::VariableName && role == IdentifierRole::FunctionName)
            it->second = IdentifierRole::FunctionName;
    }
    RoleMap out;
    for (const auto& [k, role] : local) out[k] = bySpelling.at(sig[k].text);
    return out;
}

inline RoleMap classify_identifier_roles(const FunctionUnit& fn) { return classify_identifier_roles(fn.significant()); }

/// `#include` targets in file order, e.g. "linux/igmp.h" for `<linux/igmp.h>`.
inline std::vector<std::string> include_targets(const TokenList& tokens) {
    std::vector<std::string> out;
    const auto sig = strip_noise(tokens);
    for (std::size_t k = 0; k + 2 < sig.size(); ++k) {
        if (!sig[k].is("#") || !sig[k + 1].is("include")) continue;
        const auto& t = sig[k + 2];
        if (t.kind == TokenKind::StringLiteral && t.text.size() >= 2) {
            out.push_back(t.text.substr(1, t.text.size() - 2));
        } else if (t.is("<")) {
            std::string target;
            std::size_t j = k + 3;
            for (; j < sig.size() && !sig[j].is(">"); ++j) target += sig[j].text;
            if (j < sig.size()) out.push_back(target);
        }
    }
    return out;
}

/// Escapes a token for single-line display (backslash, tab, CR, LF).
inline std::string escape_text(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace vulnmt::cparse
