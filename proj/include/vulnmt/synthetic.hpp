#pragma once

// Deterministic synthetic corpora. Vulnerable components carry a division or
// modulo whose denominator is never checked; their fix inserts an if-guard in
// front of it, the same shape as the divide-by-zero fix of CVE-2012-0207.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vulnmt/cparse.hpp"
#include "vulnmt/corpus.hpp"
#include "vulnmt/util.hpp"

namespace vulnmt::synthetic {

struct SynthesisSpec {
    int nReleases = 4;
    int componentsPerRelease = 60;
    double vulnFraction = 0.2;
    /// Zipf exponent for identifier choice; 0 draws names uniformly.
    double vocabularySkew = 1.0;
    int detectionLagDays = 90;
    int releaseSpacingDays = 180;
    /// Probability that a vulnerable component is still unfixed in the next release.
    double persistence = 0.3;
    /// Vulnerable code additionally calls a sentinel function.
    bool plantSignal = false;
    std::string projectName = "synthetic";
    std::string firstReleaseDate = "2015-01-05";
};

inline constexpr const char* kSentinelCall = "legacy_ratio_unchecked";

/// Ground truth the generator knows about one rendered function.
struct RenderedFunction {
    std::string text;
    std::string name;
    std::set<std::string> calls;
    std::map<std::string, cparse::IdentifierRole> roles;
};

struct RenderedComponent {
    std::string source;
    std::vector<std::string> functionNames;
    std::set<std::string> calls;  // excluding the component's own functions
    std::vector<std::string> includes;
    std::map<std::string, cparse::IdentifierRole> roles;  // per function, merged
    std::vector<std::map<std::string, cparse::IdentifierRole>> functionRoles;
};

enum class Template { DivGetter, ModTimer, DivField, DivAverage, Init, LoopCall, CheckString, Log, Release, Dispatch };

inline constexpr int kDivTemplates = 4;
inline constexpr int kPlainTemplates = 6;

/// Names and literal choices of one function, fixed across releases.
struct FunctionDesign {
    Template tmpl = Template::Init;
    std::vector<std::string> names;  // template-specific slots
    int literalChoice = 0;
};

namespace detail {

inline const std::vector<std::string>& stems() {
    static const std::vector<std::string> v = {
        "dev",  "net",   "buf",  "ctx",   "pkt",  "sock", "req",  "conn", "queue", "timer", "cache", "page",
        "node", "frame", "hdr",  "msg",   "port", "chan", "link", "rx",   "tx",    "irq",   "dma",   "ring",
        "slot", "peer",  "flow", "route", "zone", "map",  "key",  "tbl",  "stat",  "cfg",   "pool",  "blk"};
    return v;
}
inline const std::vector<std::string>& verbs() {
    static const std::vector<std::string> v = {"get",   "set",    "init",  "update", "calc",  "read",
                                               "write", "flush",  "alloc", "check",  "parse", "process",
                                               "handle", "start", "stop",  "reset",  "scan",  "sync"};
    return v;
}
inline const std::vector<std::string>& nouns() {
    static const std::vector<std::string> v = {"count", "len",   "size",  "total", "delay", "rate",  "limit",
                                               "value", "index", "state", "flags", "mask",  "shift", "width",
                                               "depth", "ticks", "bytes", "slots", "users", "errs",  "period"};
    return v;
}
inline const std::vector<std::string>& suffixes() {
    static const std::vector<std::string> v = {"info", "state", "ctx", "desc", "entry", "table", "priv", "ops"};
    return v;
}
inline const std::vector<std::string>& headers() {
    static const std::vector<std::string> v = {"linux/kernel.h", "linux/slab.h",   "linux/module.h", "linux/timer.h",
                                               "net/sock.h",     "linux/string.h", "linux/errno.h",  "linux/types.h",
                                               "linux/skbuff.h", "linux/spinlock.h"};
    return v;
}

/// Zipf-skewed choice from a pool.
inline const std::string& zipf_pick(Rng& rng, const std::vector<std::string>& pool, double skew) {
    std::vector<double> cdf(pool.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        acc += 1.0 / std::pow(static_cast<double>(i + 1), skew);
        cdf[i] = acc;
    }
    const double u = rng.uniform() * acc;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return pool[std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), pool.size() - 1)];
}

/// Draws one distinct identifier per character of `kinds`:
/// 'f' function, 't' type tag, 'v' variable, 'm' macro constant.
inline std::vector<std::string> draw_names(Rng& rng, const std::string& kinds, double skew) {
    std::set<std::string> used;
    std::vector<std::string> out;
    for (char k : kinds) {
        std::string name;
        for (int attempt = 0;; ++attempt) {
            switch (k) {
                case 'f': name = zipf_pick(rng, stems(), skew) + "_" + zipf_pick(rng, verbs(), skew); break;
                case 't': name = zipf_pick(rng, stems(), skew) + "_" + zipf_pick(rng, suffixes(), skew); break;
                case 'm': {
                    name = zipf_pick(rng, stems(), skew) + "_" + zipf_pick(rng, nouns(), skew);
                    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::toupper(c); });
                    break;
                }
                default: name = zipf_pick(rng, nouns(), skew); break;
            }
            if (attempt > 20) name += "_" + std::to_string(attempt);
            if (!cparse::is_keyword(name) && used.insert(name).second) break;
        }
        out.push_back(name);
    }
    return out;
}

// Slot layout per template.
inline const char* slot_kinds(Template t) {
    switch (t) {
        case Template::DivGetter: return "ftvvvf";    // fn type arg total cnt getter
        case Template::ModTimer: return "ftvvvffvvfvv";  // fn type arg delay tv rand mod jiffies timer inc ref running
        case Template::DivField: return "ftvvv";      // fn type arg bytes interval
        case Template::DivAverage: return "fvvvv";    // fn vals n sum i
        case Template::Init: return "ftvvvfv";        // fn type arg f1 f2 lock lk
        case Template::LoopCall: return "ftvvvf";     // fn type arg n i helper
        case Template::CheckString: return "fvmf";    // fn s errno len
        case Template::Log: return "ftvfv";           // fn type arg print field
        case Template::Release: return "ftvfv";       // fn type arg free buf
        case Template::Dispatch: return "fvmmff";     // fn cmd c1 c2 h1 h2
    }
    return "";
}

}  // namespace detail

inline FunctionDesign design_function(Rng& rng, Template t, double skew) {
    FunctionDesign d;
    d.tmpl = t;
    d.names = detail::draw_names(rng, detail::slot_kinds(t), skew);
    d.literalChoice = static_cast<int>(rng.index(3));
    return d;
}

inline bool is_division_template(Template t) { return static_cast<int>(t) < kDivTemplates; }

/// Renders a function. `guarded` only matters for division templates; a
/// `sentinel` adds a call to kSentinelCall.
inline RenderedFunction render_function(const FunctionDesign& d, bool guarded, bool sentinel = false) {
    using R = cparse::IdentifierRole;
    const auto& n = d.names;
    RenderedFunction f;
    f.name = n[0];
    std::string s;
    auto role = [&f](const std::string& name, R r) { f.roles[name] = r; };
    auto call = [&](const std::string& name) {
        f.calls.insert(name);
        role(name, R::FunctionName);
    };
    const std::string sent = sentinel ? std::string("\t") + kSentinelCall + "();\n" : "";
    if (sentinel) call(kSentinelCall);
    role(n[0], R::FunctionName);

    switch (d.tmpl) {
        case Template::DivGetter:
            s = "static int " + n[0] + "(struct " + n[1] + " *" + n[2] + ", int " + n[3] + ")\n{\n\tint " + n[4] + ";\n\n" + sent +
                "\t" + n[4] + " = " + n[5] + "(" + n[2] + ");\n";
            if (guarded) s += "\tif (!" + n[4] + ")\n\t\t" + n[4] + " = 1;\n";
            s += "\treturn " + n[3] + " / " + n[4] + ";\n}\n";
            role(n[1], R::TypeName);
            for (int k : {2, 3, 4}) role(n[k], R::VariableName);
            call(n[5]);
            break;
        case Template::ModTimer:
            s = "static void " + n[0] + "(struct " + n[1] + " *" + n[2] + ", int " + n[3] + ")\n{\n\tint " + n[4] + ";\n\n" + sent;
            if (guarded) s += "\tif (!" + n[3] + ")\n\t\t" + n[3] + " = 1;\n";
            s += "\t" + n[4] + " = " + n[5] + "() % " + n[3] + ";\n";
            s += "\t" + n[2] + "->" + n[11] + " = 1;\n";
            s += "\tif (!" + n[6] + "(&" + n[2] + "->" + n[8] + ", " + n[7] + " + " + n[4] + " + 2))\n";
            s += "\t\t" + n[9] + "(&" + n[2] + "->" + n[10] + ");\n}\n";
            role(n[1], R::TypeName);
            for (int k : {2, 3, 4, 7, 8, 10, 11}) role(n[k], R::VariableName);
            for (int k : {5, 6, 9}) call(n[k]);
            break;
        case Template::DivField: {
            const char* scale[] = {"8", "1000", "8"};
            s = "int " + n[0] + "(struct " + n[1] + " *" + n[2] + ")\n{\n" + sent;
            if (guarded) s += "\tif (!" + n[2] + "->" + n[4] + ")\n\t\treturn 0;\n";
            s += "\treturn " + n[2] + "->" + n[3] + " * " + scale[d.literalChoice] + " / " + n[2] + "->" + n[4] + ";\n}\n";
            role(n[1], R::TypeName);
            for (int k : {2, 3, 4}) role(n[k], R::VariableName);
            break;
        }
        case Template::DivAverage:
            s = "static long " + n[0] + "(const long *" + n[1] + ", int " + n[2] + ")\n{\n\tlong " + n[3] + " = 0;\n\tint " + n[4] +
                ";\n\n" + sent;
            if (guarded) s += "\tif (" + n[2] + " <= 0)\n\t\treturn 0;\n";
            s += "\tfor (" + n[4] + " = 0; " + n[4] + " < " + n[2] + "; " + n[4] + "++)\n\t\t" + n[3] + " += " + n[1] + "[" + n[4] +
                 "];\n";
            s += "\treturn " + n[3] + " / " + n[2] + ";\n}\n";
            for (int k : {1, 2, 3, 4}) role(n[k], R::VariableName);
            break;
        case Template::Init:
            s = "void " + n[0] + "(struct " + n[1] + " *" + n[2] + ")\n{\n\t" + n[2] + "->" + n[3] + " = 0;\n\t" + n[2] + "->" + n[4] +
                " = NULL;\n\t" + n[5] + "(&" + n[2] + "->" + n[6] + ");\n}\n";
            role(n[1], R::TypeName);
            for (int k : {2, 3, 4, 6}) role(n[k], R::VariableName);
            role("NULL", R::VariableName);
            call(n[5]);
            break;
        case Template::LoopCall:
            s = "static void " + n[0] + "(struct " + n[1] + " *" + n[2] + ", int " + n[3] + ")\n{\n\tint " + n[4] + ";\n\n\tfor (" +
                n[4] + " = 0; " + n[4] + " < " + n[3] + "; " + n[4] + "++)\n\t\t" + n[5] + "(" + n[2] + ", " + n[4] + ");\n}\n";
            role(n[1], R::TypeName);
            for (int k : {2, 3, 4}) role(n[k], R::VariableName);
            call(n[5]);
            break;
        case Template::CheckString: {
            const char* limit[] = {"16", "32", "64"};
            s = "int " + n[0] + "(const char *" + n[1] + ")\n{\n\tif (!" + n[1] + ")\n\t\treturn -" + n[2] + ";\n\treturn " + n[3] +
                "(" + n[1] + ") > " + limit[d.literalChoice] + ";\n}\n";
            for (int k : {1, 2}) role(n[k], R::VariableName);
            call(n[3]);
            break;
        }
        case Template::Log: {
            const char* fmt[] = {"\"%s: ready\\n\"", "\"%s: link up\\n\"", "\"%s: reset\\n\""};
            s = "static void " + n[0] + "(struct " + n[1] + " *" + n[2] + ")\n{\n\t" + n[3] + "(" + fmt[d.literalChoice] + ", " + n[2] +
                "->" + n[4] + ");\n}\n";
            role(n[1], R::TypeName);
            for (int k : {2, 4}) role(n[k], R::VariableName);
            call(n[3]);
            break;
        }
        case Template::Release:
            s = "void " + n[0] + "(struct " + n[1] + " *" + n[2] + ")\n{\n\tif (!" + n[2] + ")\n\t\treturn;\n\t" + n[3] + "(" + n[2] +
                "->" + n[4] + ");\n\t" + n[2] + "->" + n[4] + " = NULL;\n}\n";
            role(n[1], R::TypeName);
            for (int k : {2, 4}) role(n[k], R::VariableName);
            role("NULL", R::VariableName);
            call(n[3]);
            break;
        case Template::Dispatch:
            s = "static int " + n[0] + "(int " + n[1] + ")\n{\n\tswitch (" + n[1] + ") {\n\tcase " + n[2] + ":\n\t\treturn " + n[4] +
                "();\n\tcase " + n[3] + ":\n\t\treturn " + n[5] + "();\n\tdefault:\n\t\treturn -1;\n\t}\n}\n";
            for (int k : {1, 2, 3}) role(n[k], R::VariableName);
            call(n[4]);
            call(n[5]);
            break;
    }
    f.text = std::move(s);
    return f;
}

/// Per-path design: includes, plain functions, and one division function
/// that is present only in some components.
struct ComponentDesign {
    std::string path;
    std::vector<std::string> includes;
    std::vector<FunctionDesign> functions;
    FunctionDesign division;
    std::size_t divisionSlot = 0;  // position among the functions
    bool hasDivision = false;
    bool hasPrototype = false;
};

inline ComponentDesign design_component(Rng& rng, const std::string& path, double skew) {
    ComponentDesign c;
    c.path = path;
    const auto nIncludes = 1 + rng.index(3);
    std::set<std::string> inc;
    while (inc.size() < nIncludes) inc.insert(rng.pick(detail::headers()));
    c.includes.assign(inc.begin(), inc.end());
    const auto nPlain = 1 + rng.index(3);
    std::set<std::string> usedNames;
    for (std::size_t k = 0; k < nPlain; ++k) {
        for (;;) {
            auto fd = design_function(rng, static_cast<Template>(kDivTemplates + static_cast<int>(rng.index(kPlainTemplates))), skew);
            if (usedNames.insert(fd.names[0]).second) {
                c.functions.push_back(std::move(fd));
                break;
            }
        }
    }
    for (;;) {
        c.division = design_function(rng, static_cast<Template>(rng.index(kDivTemplates)), skew);
        if (!usedNames.count(c.division.names[0])) break;
    }
    c.divisionSlot = rng.index(c.functions.size() + 1);
    c.hasDivision = rng.bernoulli(0.6);
    c.hasPrototype = rng.bernoulli(0.3);
    return c;
}

enum class DivisionState { Absent, Guarded, Unguarded };

inline RenderedComponent render_component(const ComponentDesign& d, DivisionState div, bool sentinel = false) {
    RenderedComponent out;
    std::string s = "/*\n * " + d.path + "\n */\n";
    for (const auto& h : d.includes) {
        s += "#include <" + h + ">\n";
        out.includes.push_back(h);
    }
    s += "\n";
    std::vector<RenderedFunction> fns;
    for (std::size_t k = 0; k <= d.functions.size(); ++k) {
        if (k == d.divisionSlot && div != DivisionState::Absent)
            fns.push_back(render_function(d.division, div == DivisionState::Guarded, sentinel && div == DivisionState::Unguarded));
        if (k < d.functions.size()) fns.push_back(render_function(d.functions[k], false));
    }
    if (d.hasPrototype && !fns.empty()) s += "static int " + fns.back().name + "_hook(void *data);\n\n";
    std::set<std::string> own;
    for (std::size_t k = 0; k < fns.size(); ++k) {
        if (k) s += "\n";
        s += fns[k].text;
        out.functionNames.push_back(fns[k].name);
        own.insert(fns[k].name);
        out.functionRoles.push_back(fns[k].roles);
        for (const auto& [name, r] : fns[k].roles) out.roles[name] = r;
    }
    for (const auto& f : fns)
        for (const auto& c : f.calls)
            if (!own.count(c)) out.calls.insert(c);
    out.source = std::move(s);
    return out;
}

/// Generates a full corpus; a pure function of (seed, spec).
inline corpus::Corpus generate_synthetic_corpus(std::uint64_t seed, const SynthesisSpec& spec) {
    if (spec.nReleases < 2) throw ConfigError("nReleases must be at least 2");
    if (spec.componentsPerRelease < 2) throw ConfigError("componentsPerRelease must be at least 2");
    if (!(spec.vulnFraction > 0.0 && spec.vulnFraction < 1.0)) throw ConfigError("vulnFraction must lie in (0, 1)");
    if (spec.vocabularySkew < 0.0) throw ConfigError("vocabularySkew must be non-negative");
    if (spec.detectionLagDays < 0) throw ConfigError("detectionLagDays must be non-negative");
    if (spec.releaseSpacingDays < 1) throw ConfigError("releaseSpacingDays must be positive");
    if (!(spec.persistence >= 0.0 && spec.persistence <= 1.0)) throw ConfigError("persistence must lie in [0, 1]");
    const auto firstDate = Date::parse(spec.firstReleaseDate);

    const auto nComp = static_cast<std::size_t>(spec.componentsPerRelease);
    const auto nVuln = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(spec.vulnFraction * static_cast<double>(nComp))), 1, nComp - 1);

    Rng rng(seed);
    std::vector<ComponentDesign> designs;
    std::set<std::string> paths;
    const std::vector<std::string> dirs = {"net", "drivers", "fs", "kernel", "lib", "crypto", "sound", "mm"};
    while (designs.size() < nComp) {
        const auto path = rng.pick(dirs) + "/" + detail::zipf_pick(rng, detail::stems(), spec.vocabularySkew) + "_" +
                          detail::zipf_pick(rng, detail::verbs(), spec.vocabularySkew) + "_" + std::to_string(designs.size()) + ".c";
        if (!paths.insert(path).second) continue;
        Rng local(mix64(seed ^ hash_string(path)));
        designs.push_back(design_component(local, path, spec.vocabularySkew));
    }

    corpus::Corpus c;
    c.projectName = spec.projectName;
    std::vector<int> episode(nComp, -1);  // open vulnerability per component
    std::vector<std::string> episodeIds;
    std::vector<Date> episodeIntro;
    std::vector<std::vector<corpus::AffectedPath>> episodeAffected;
    std::vector<bool> prevVuln(nComp, false);

    for (int r = 0; r < spec.nReleases; ++r) {
        corpus::Release rel;
        rel.name = "v1." + std::to_string(r);
        rel.releaseDate = firstDate.plus_days(static_cast<long>(r) * spec.releaseSpacingDays);

        // Choose exactly nVuln vulnerable components.
        std::vector<std::size_t> chosen;
        for (std::size_t k = 0; k < nComp; ++k)
            if (prevVuln[k] && rng.bernoulli(spec.persistence) && chosen.size() < nVuln) chosen.push_back(k);
        std::vector<std::size_t> fresh;
        for (std::size_t k = 0; k < nComp; ++k)
            if (!prevVuln[k]) fresh.push_back(k);
        rng.shuffle(fresh);
        for (std::size_t k = 0; chosen.size() < nVuln && k < fresh.size(); ++k) chosen.push_back(fresh[k]);
        std::vector<bool> vuln(nComp, false);
        for (auto k : chosen) vuln[k] = true;

        for (std::size_t k = 0; k < nComp; ++k) {
            if (!vuln[k]) episode[k] = -1;
            if (vuln[k] && episode[k] < 0) {
                episode[k] = static_cast<int>(episodeIds.size());
                episodeIds.push_back("CVE-" + rel.releaseDate.str().substr(0, 4) + "-" + std::to_string(1000 + episodeIds.size()));
                episodeIntro.push_back(rel.releaseDate);
                episodeAffected.emplace_back();
            }
        }

        for (std::size_t k = 0; k < nComp; ++k) {
            auto d = designs[k];
            // Light churn in plain functions between releases.
            Rng churn(mix64(seed ^ hash_string(d.path) ^ static_cast<std::uint64_t>(r + 1) * 0x9e37ULL));
            if (r > 0 && churn.bernoulli(0.15) && !d.functions.empty()) {
                auto& f = d.functions[churn.index(d.functions.size())];
                f.literalChoice = static_cast<int>(churn.index(3));
            }
            corpus::ComponentRecord rec;
            rec.path = d.path;
            if (vuln[k]) {
                rec.label = corpus::Label::Vulnerable;
                rec.source = render_component(d, DivisionState::Unguarded, spec.plantSignal).source;
                rec.fixedSource = render_component(d, DivisionState::Guarded).source;
                rec.vulnIds = {episodeIds[static_cast<std::size_t>(episode[k])]};
                episodeAffected[static_cast<std::size_t>(episode[k])].push_back({rel.name, d.path});
            } else {
                rec.label = corpus::Label::NonVulnerable;
                rec.source = render_component(d, d.hasDivision ? DivisionState::Guarded : DivisionState::Absent).source;
            }
            rel.components.push_back(std::move(rec));
        }
        c.releases.push_back(std::move(rel));
        prevVuln = vuln;
    }

    const long jitter = spec.detectionLagDays / 5;
    for (std::size_t e = 0; e < episodeIds.size(); ++e) {
        const long lag = spec.detectionLagDays + (jitter > 0 ? static_cast<long>(rng.index(2 * jitter + 1)) - jitter : 0);
        c.vulnerabilities.push_back({episodeIds[e], episodeIntro[e].plus_days(std::max(0L, lag)), episodeAffected[e]});
    }
    corpus::validate(c);
    return c;
}

}  // namespace vulnmt::synthetic
