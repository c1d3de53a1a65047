#pragma once

// Release-indexed corpora: data model, JSON-lines ingestion, clean/realistic
// training material and the deterministic synthetic corpus generator.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vulnmt/errors.hpp"
#include "vulnmt/util.hpp"

namespace vulnmt::corpus {

inline constexpr int kFormatVersion = 1;

enum class Label { Vulnerable, NonVulnerable };

inline std::string_view label_name(Label l) { return l == Label::Vulnerable ? "vulnerable" : "non_vulnerable"; }

struct ComponentRecord {
    std::string path;
    std::string source;
    Label label = Label::NonVulnerable;
    std::optional<std::string> fixedSource;
    std::vector<std::string> vulnIds;

    friend bool operator==(const ComponentRecord&, const ComponentRecord&) = default;
};

struct Release {
    std::string name;
    Date releaseDate;
    std::vector<ComponentRecord> components;

    const ComponentRecord* find(std::string_view path) const {
        for (const auto& c : components)
            if (c.path == path) return &c;
        return nullptr;
    }

    friend bool operator==(const Release&, const Release&) = default;
};

struct AffectedPath {
    std::string release;
    std::string path;
    friend auto operator<=>(const AffectedPath&, const AffectedPath&) = default;
};

struct VulnerabilityRecord {
    std::string vulnId;
    Date detectionDate;
    std::vector<AffectedPath> affectedPaths;

    friend bool operator==(const VulnerabilityRecord&, const VulnerabilityRecord&) = default;
};

struct Corpus {
    std::string projectName;
    std::vector<Release> releases;
    std::vector<VulnerabilityRecord> vulnerabilities;

    const VulnerabilityRecord* vulnerability(std::string_view id) const {
        for (const auto& v : vulnerabilities)
            if (v.vulnId == id) return &v;
        return nullptr;
    }

    friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// Collapses whitespace runs to one space and trims the ends.
inline std::string normalize_whitespace(std::string_view s) {
    std::string out;
    bool pending = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            pending = !out.empty();
            continue;
        }
        if (pending) out += ' ';
        pending = false;
        out += static_cast<char>(c);
    }
    return out;
}

/// Checks every corpus invariant; throws IntegrityError on the first violation.
inline void validate(const Corpus& corpus) {
    std::set<std::string> ids;
    for (const auto& v : corpus.vulnerabilities) {
        if (!ids.insert(v.vulnId).second) throw IntegrityError("duplicate vulnerability id " + v.vulnId);
    }
    std::set<std::string> releaseNames;
    for (std::size_t r = 0; r < corpus.releases.size(); ++r) {
        const auto& rel = corpus.releases[r];
        if (!releaseNames.insert(rel.name).second) throw IntegrityError("duplicate release " + rel.name);
        if (r > 0 && !(corpus.releases[r - 1].releaseDate < rel.releaseDate))
            throw IntegrityError("release dates must strictly increase at " + rel.name);
        std::set<std::string> paths;
        for (const auto& c : rel.components) {
            const auto where = rel.name + ":" + c.path;
            if (!paths.insert(c.path).second) throw IntegrityError("duplicate component path " + where);
            if (c.label == Label::Vulnerable && !c.fixedSource)
                throw IntegrityError("vulnerable component lacks fixed source: " + where);
            if (c.label == Label::NonVulnerable && c.fixedSource)
                throw IntegrityError("non-vulnerable component carries a fixed source: " + where);
            if (c.fixedSource && normalize_whitespace(*c.fixedSource) == normalize_whitespace(c.source))
                throw IntegrityError("fixed source equals vulnerable source: " + where);
            for (const auto& id : c.vulnIds)
                if (!ids.count(id)) throw IntegrityError("dangling vulnerability id " + id + " in " + where);
        }
    }
    for (const auto& v : corpus.vulnerabilities) {
        for (const auto& ap : v.affectedPaths) {
            const Release* rel = nullptr;
            for (const auto& r : corpus.releases)
                if (r.name == ap.release) rel = &r;
            const auto* comp = rel ? rel->find(ap.path) : nullptr;
            if (!comp || comp->label != Label::Vulnerable)
                throw IntegrityError(v.vulnId + " references " + ap.release + ":" + ap.path +
                                     ", which is not a vulnerable component");
        }
    }
}

/// Serializes to the JSON-lines corpus format.
inline std::string save_corpus(const Corpus& corpus) {
    using nlohmann::ordered_json;
    std::string out;
    auto line = [&out](const ordered_json& j) {
        out += j.dump();
        out += '\n';
    };
    line({{"kind", "header"}, {"format_version", kFormatVersion}, {"project", corpus.projectName}});
    for (const auto& rel : corpus.releases) {
        line({{"kind", "release"}, {"name", rel.name}, {"date", rel.releaseDate.str()}});
        for (const auto& c : rel.components) {
            ordered_json j{{"kind", "component"}, {"release", rel.name}, {"path", c.path}, {"label", label_name(c.label)}};
            j["source"] = c.source;
            if (c.fixedSource) j["fixed_source"] = *c.fixedSource;
            j["vuln_ids"] = c.vulnIds;
            line(j);
        }
    }
    for (const auto& v : corpus.vulnerabilities) {
        ordered_json affected = ordered_json::array();
        for (const auto& ap : v.affectedPaths) affected.push_back({ap.release, ap.path});
        line({{"kind", "vuln"}, {"id", v.vulnId}, {"detection_date", v.detectionDate.str()}, {"affected", affected}});
    }
    return out;
}

/// Parses and validates a corpus file body.
inline Corpus parse_corpus(std::string_view text) {
    using nlohmann::json;
    Corpus corpus;
    bool sawHeader = false;
    std::map<std::string, std::size_t> releaseIndex;
    std::size_t lineNo = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++lineNo;
        if (normalize_whitespace(raw).empty()) continue;
        json j;
        try {
            j = json::parse(raw);
        } catch (const json::exception& e) {
            throw ParseError(lineNo, std::string("invalid JSON: ") + e.what());
        }
        try {
            const auto kind = j.at("kind").get<std::string>();
            if (!sawHeader) {
                if (kind != "header") throw ParseError(lineNo, "first record must be the format header");
                const auto version = j.at("format_version").get<int>();
                if (version != kFormatVersion)
                    throw ParseError(lineNo, "unsupported format_version " + std::to_string(version));
                corpus.projectName = j.value("project", std::string{});
                sawHeader = true;
            } else if (kind == "release") {
                Release rel;
                rel.name = j.at("name").get<std::string>();
                try {
                    rel.releaseDate = Date::parse(j.at("date").get<std::string>());
                } catch (const ConfigError& e) {
                    throw ParseError(lineNo, e.what());
                }
                if (releaseIndex.count(rel.name)) throw ParseError(lineNo, "duplicate release " + rel.name);
                releaseIndex[rel.name] = corpus.releases.size();
                corpus.releases.push_back(std::move(rel));
            } else if (kind == "component") {
                const auto relName = j.at("release").get<std::string>();
                auto it = releaseIndex.find(relName);
                if (it == releaseIndex.end()) throw IntegrityError("component refers to undeclared release " + relName);
                ComponentRecord c;
                c.path = j.at("path").get<std::string>();
                const auto label = j.at("label").get<std::string>();
                if (label == "vulnerable") {
                    c.label = Label::Vulnerable;
                } else if (label == "non_vulnerable") {
                    c.label = Label::NonVulnerable;
                } else {
                    throw ParseError(lineNo, "unknown label " + label);
                }
                c.source = j.at("source").get<std::string>();
                if (j.contains("fixed_source") && !j["fixed_source"].is_null())
                    c.fixedSource = j["fixed_source"].get<std::string>();
                if (j.contains("vuln_ids")) c.vulnIds = j["vuln_ids"].get<std::vector<std::string>>();
                corpus.releases[it->second].components.push_back(std::move(c));
            } else if (kind == "vuln") {
                VulnerabilityRecord v;
                v.vulnId = j.at("id").get<std::string>();
                try {
                    v.detectionDate = Date::parse(j.at("detection_date").get<std::string>());
                } catch (const ConfigError& e) {
                    throw ParseError(lineNo, e.what());
                }
                for (const auto& a : j.at("affected")) {
                    if (!a.is_array() || a.size() != 2) throw ParseError(lineNo, "affected entries are [release, path]");
                    v.affectedPaths.push_back({a[0].get<std::string>(), a[1].get<std::string>()});
                }
                corpus.vulnerabilities.push_back(std::move(v));
            } else {
                throw ParseError(lineNo, "unknown record kind " + kind);
            }
        } catch (const json::exception& e) {
            throw ParseError(lineNo, std::string("malformed record: ") + e.what());
        }
    }
    if (!sawHeader) throw ParseError(lineNo == 0 ? 1 : lineNo, "missing format header");
    validate(corpus);
    return corpus;
}

inline Corpus load_corpus(const std::filesystem::path& path) { return parse_corpus(read_file(path)); }

// ---------------------------------------------------------------------------
// Training material

struct FixPair {
    std::string path;
    std::string before;
    std::string after;
    friend auto operator<=>(const FixPair&, const FixPair&) = default;
};

/// Components of one release as a training setting sees them. In the
/// realistic setting, components whose vulnerabilities were not yet known are
/// relabeled NonVulnerable and lose their fix.
struct TrainingMaterial {
    std::string releaseName;
    std::vector<ComponentRecord> components;

    std::vector<FixPair> fix_pairs() const {
        std::vector<FixPair> out;
        for (const auto& c : components)
            if (c.label == Label::Vulnerable) out.push_back({c.path, c.source, *c.fixedSource});
        return out;
    }
};

struct MaterialOptions {
    /// Keep a fix pair whose component is still vulnerable (same vulnerability)
    /// in the following release. When false, such pairs are left out of
    /// training and the component only counts as test ground truth.
    bool keepPersistent = true;
};

namespace detail {

inline void check_index(const Corpus& corpus, std::size_t releaseIndex) {
    if (corpus.releases.size() < 2) throw IndexError("an experiment needs at least two releases");
    if (releaseIndex + 1 >= corpus.releases.size())
        throw IndexError("release index " + std::to_string(releaseIndex) + " has no following release");
}

inline bool persists(const Corpus& corpus, std::size_t releaseIndex, const ComponentRecord& c) {
    const auto* next = corpus.releases[releaseIndex + 1].find(c.path);
    if (!next || next->label != Label::Vulnerable) return false;
    for (const auto& id : c.vulnIds)
        if (std::find(next->vulnIds.begin(), next->vulnIds.end(), id) != next->vulnIds.end()) return true;
    return false;
}

}  // namespace detail

/// Every vulnerable component of release i with its fix, regardless of when
/// the vulnerability became known, plus all non-vulnerable components.
inline TrainingMaterial clean_training_set(const Corpus& corpus, std::size_t releaseIndex, MaterialOptions opts = {}) {
    detail::check_index(corpus, releaseIndex);
    const auto& rel = corpus.releases[releaseIndex];
    TrainingMaterial m{rel.name, {}};
    for (const auto& c : rel.components) {
        if (c.label == Label::Vulnerable && !opts.keepPersistent && detail::persists(corpus, releaseIndex, c)) continue;
        m.components.push_back(c);
    }
    return m;
}

/// Earliest detection date over a component's vulnerabilities.
inline Date earliest_detection(const Corpus& corpus, const ComponentRecord& c) {
    std::optional<Date> best;
    for (const auto& id : c.vulnIds) {
        const auto* v = corpus.vulnerability(id);
        if (!v) throw IntegrityError("unresolvable vulnerability id " + id + " in " + c.path);
        if (!best || v->detectionDate < *best) best = v->detectionDate;
    }
    if (!best) throw IntegrityError("vulnerable component " + c.path + " has no vulnerability ids");
    return *best;
}

/// Only fixes of vulnerabilities detected strictly before the next release
/// date are kept; the rest of release i's vulnerable components are labeled
/// NonVulnerable.
inline TrainingMaterial realistic_training_set(const Corpus& corpus, std::size_t releaseIndex, MaterialOptions opts = {}) {
    detail::check_index(corpus, releaseIndex);
    const auto& rel = corpus.releases[releaseIndex];
    const auto cutoff = corpus.releases[releaseIndex + 1].releaseDate;
    TrainingMaterial m{rel.name, {}};
    for (const auto& c : rel.components) {
        if (c.label != Label::Vulnerable) {
            m.components.push_back(c);
            continue;
        }
        if (!(earliest_detection(corpus, c) < cutoff)) {
            auto relabeled = c;
            relabeled.label = Label::NonVulnerable;
            relabeled.fixedSource.reset();
            m.components.push_back(std::move(relabeled));
            continue;
        }
        if (!opts.keepPersistent && detail::persists(corpus, releaseIndex, c)) continue;
        m.components.push_back(c);
    }
    return m;
}

enum class Setting { Clean, Realistic };

inline std::string_view setting_name(Setting s) { return s == Setting::Clean ? "clean" : "realistic"; }

inline Setting parse_setting(std::string_view s) {
    if (s == "clean") return Setting::Clean;
    if (s == "realistic") return Setting::Realistic;
    throw ConfigError("unknown setting '" + std::string(s) + "' (expected clean|realistic)");
}

inline TrainingMaterial training_set(const Corpus& corpus, std::size_t releaseIndex, Setting setting, MaterialOptions opts = {}) {
    return setting == Setting::Clean ? clean_training_set(corpus, releaseIndex, opts)
                                     : realistic_training_set(corpus, releaseIndex, opts);
}

/// Test-time ground truth: the corpus labels of a release (full hindsight).
inline std::map<std::string, Label> ground_truth(const Release& rel) {
    std::map<std::string, Label> out;
    for (const auto& c : rel.components) out[c.path] = c.label;
    return out;
}

}  // namespace vulnmt::corpus
