#pragma once

// Confusion matrices, precision/recall/F/MCC, the release-pair protocol
// (train on release i, test on release i+1) and report files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vulnmt/corpus.hpp"
#include "vulnmt/errors.hpp"
#include "vulnmt/pairing.hpp"
#include "vulnmt/predict.hpp"
#include "vulnmt/seq2seq.hpp"
#include "vulnmt/util.hpp"

namespace vulnmt::evaluate {

struct ConfusionMatrix {
    long tp = 0, fp = 0, tn = 0, fn = 0;
    long total() const { return tp + fp + tn + fn; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// (path, predicted vulnerable) in component order.
using Verdicts = std::vector<std::pair<std::string, bool>>;

inline Verdicts as_verdicts(const std::vector<predict::ComponentVerdict>& v) {
    Verdicts out;
    for (const auto& c : v) out.emplace_back(c.path, c.predictedVulnerable);
    return out;
}

inline ConfusionMatrix confusion(const Verdicts& verdicts, const std::map<std::string, corpus::Label>& truth) {
    ConfusionMatrix cm;
    for (const auto& [path, predicted] : verdicts) {
        auto it = truth.find(path);
        if (it == truth.end()) throw MissingLabel("no ground-truth label for " + path);
        const bool actual = it->second == corpus::Label::Vulnerable;
        if (actual && predicted) ++cm.tp;
        else if (actual) ++cm.fn;
        else if (predicted) ++cm.fp;
        else ++cm.tn;
    }
    return cm;
}

inline ConfusionMatrix confusion(const std::vector<predict::ComponentVerdict>& verdicts,
                                 const std::map<std::string, corpus::Label>& truth) {
    return confusion(as_verdicts(verdicts), truth);
}

struct Metrics {
    double precision = 0.0, recall = 0.0, fMeasure = 0.0, mcc = 0.0;
};

/// Zero denominators give 0.
inline Metrics metrics(const ConfusionMatrix& cm) {
    const double tp = static_cast<double>(cm.tp), fp = static_cast<double>(cm.fp);
    const double tn = static_cast<double>(cm.tn), fn = static_cast<double>(cm.fn);
    Metrics m;
    m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    m.fMeasure = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    const double d = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    m.mcc = d > 0 ? (tp * tn - fp * fn) / std::sqrt(d) : 0.0;
    return m;
}

struct Breakdown {
    std::optional<double> existingDetectedPct;
    std::optional<double> novelDetectedPct;
};

/// Splits the test release's vulnerable components into existing (same path
/// vulnerable in the training release) and novel, and reports the detected
/// percentage of each. An empty class stays undefined.
inline Breakdown novel_existing_breakdown(const Verdicts& verdicts, const corpus::Release& testRelease,
                                          const corpus::Release& trainRelease) {
    const auto trainTruth = corpus::ground_truth(trainRelease);
    const auto testTruth = corpus::ground_truth(testRelease);
    long existing = 0, existingHit = 0, novel = 0, novelHit = 0;
    for (const auto& [path, predicted] : verdicts) {
        auto it = testTruth.find(path);
        if (it == testTruth.end() || it->second != corpus::Label::Vulnerable) continue;
        auto prev = trainTruth.find(path);
        if (prev != trainTruth.end() && prev->second == corpus::Label::Vulnerable) {
            ++existing;
            existingHit += predicted;
        } else {
            ++novel;
            novelHit += predicted;
        }
    }
    Breakdown b;
    if (existing) b.existingDetectedPct = 100.0 * static_cast<double>(existingHit) / static_cast<double>(existing);
    if (novel) b.novelDetectedPct = 100.0 * static_cast<double>(novelHit) / static_cast<double>(novel);
    return b;
}

struct EvaluationReport {
    std::string technique;
    std::string trainRelease, testRelease;
    corpus::Setting setting = corpus::Setting::Clean;
    bool failed = false;
    std::string error;
    ConfusionMatrix matrix;
    double precision = 0.0, recall = 0.0, fMeasure = 0.0, mcc = 0.0;
    std::optional<double> existingDetectedPct, novelDetectedPct;
};

inline EvaluationReport make_report(std::string technique, const corpus::Release& train, const corpus::Release& test,
                                    corpus::Setting setting, const Verdicts& verdicts) {
    EvaluationReport r;
    r.technique = std::move(technique);
    r.trainRelease = train.name;
    r.testRelease = test.name;
    r.setting = setting;
    r.matrix = confusion(verdicts, corpus::ground_truth(test));
    const auto m = metrics(r.matrix);
    r.precision = m.precision;
    r.recall = m.recall;
    r.fMeasure = m.fMeasure;
    r.mcc = m.mcc;
    const auto b = novel_existing_breakdown(verdicts, test, train);
    r.existingDetectedPct = b.existingDetectedPct;
    r.novelDetectedPct = b.novelDetectedPct;
    return r;
}

/// Trains on the material of one release and returns verdicts for the next.
using Predictor = std::function<Verdicts(const corpus::TrainingMaterial&, const corpus::Release&, std::size_t releaseIndex)>;

/// The (n-1) release pairs of `corpus`. A pair that throws becomes a failed
/// report; pairs run concurrently when jobs > 1 and are merged in order.
inline std::vector<EvaluationReport> run_protocol(const corpus::Corpus& corpus, corpus::Setting setting, const std::string& technique,
                                                  const Predictor& predictor, unsigned jobs = 1,
                                                  corpus::MaterialOptions opts = {}) {
    if (corpus.releases.size() < 2) throw IndexError("an experiment needs at least two releases");
    const auto n = corpus.releases.size() - 1;
    return parallel_map<EvaluationReport>(n, jobs, [&](std::size_t i) {
        const auto& train = corpus.releases[i];
        const auto& test = corpus.releases[i + 1];
        try {
            const auto material = corpus::training_set(corpus, i, setting, opts);
            return make_report(technique, train, test, setting, predictor(material, test, i));
        } catch (const std::exception& e) {
            EvaluationReport r;
            r.technique = technique;
            r.trainRelease = train.name;
            r.testRelease = test.name;
            r.setting = setting;
            r.failed = true;
            r.error = e.what();
            return r;
        }
    });
}

struct ExperimentConfig {
    seq2seq::ModelConfig model;
    seq2seq::TrainConfig training;
    pairing::PairingConfig pairing;
    double validationFraction = 0.1;
    corpus::MaterialOptions material;
    unsigned jobs = 1;
};

/// Training pairs and validation hold-out for one release's material.
inline std::pair<std::vector<pairing::TrainingPair>, std::vector<pairing::TrainingPair>> prepare_pairs(
    const corpus::TrainingMaterial& material, const ExperimentConfig& cfg) {
    const auto labeled = pairing::label_material(material, cfg.pairing);
    const auto pairs = pairing::build_training_pairs(labeled, cfg.pairing);
    if (pairs.empty()) throw EmptyCorpus("release " + material.releaseName + " yields no training pairs");
    return seq2seq::split_validation(pairs, cfg.validationFraction, cfg.model.seed);
}

inline seq2seq::TrainResult train_on_material(const corpus::TrainingMaterial& material, const ExperimentConfig& cfg) {
    const auto [train, valid] = prepare_pairs(material, cfg);
    return seq2seq::train(train, valid, cfg.model, cfg.training);
}

inline std::vector<EvaluationReport> run_experiment(const corpus::Corpus& corpus, corpus::Setting setting, const ExperimentConfig& cfg) {
    return run_protocol(
        corpus, setting, "translation",
        [&](const corpus::TrainingMaterial& material, const corpus::Release& test, std::size_t) {
            const auto model = train_on_material(material, cfg).model;
            return as_verdicts(predict::predict_release(model, test, 1));
        },
        cfg.jobs, cfg.material);
}

// ---------------------------------------------------------------------------
// Summaries and report files

struct SummaryRow {
    std::optional<double> mcc, fMeasure, precision, recall, existingDetectedPct, novelDetectedPct;
};

namespace detail {

inline std::optional<double> mean(std::vector<double> v) {
    if (v.empty()) return std::nullopt;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline std::optional<double> median(std::vector<double> v) {
    if (v.empty()) return std::nullopt;
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

template <typename Get>
std::vector<double> column(const std::vector<EvaluationReport>& reports, Get get) {
    std::vector<double> out;
    for (const auto& r : reports)
        if (!r.failed)
            if (std::optional<double> v = get(r)) out.push_back(*v);
    return out;
}

inline SummaryRow aggregate(const std::vector<EvaluationReport>& reports,
                            const std::function<std::optional<double>(std::vector<double>)>& f) {
    SummaryRow s;
    s.mcc = f(column(reports, [](const EvaluationReport& r) { return std::optional(r.mcc); }));
    s.fMeasure = f(column(reports, [](const EvaluationReport& r) { return std::optional(r.fMeasure); }));
    s.precision = f(column(reports, [](const EvaluationReport& r) { return std::optional(r.precision); }));
    s.recall = f(column(reports, [](const EvaluationReport& r) { return std::optional(r.recall); }));
    s.existingDetectedPct = f(column(reports, [](const EvaluationReport& r) { return r.existingDetectedPct; }));
    s.novelDetectedPct = f(column(reports, [](const EvaluationReport& r) { return r.novelDetectedPct; }));
    return s;
}

inline nlohmann::ordered_json opt(const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); }

}  // namespace detail

/// Average and median over successful release pairs (macro averages).
inline std::pair<SummaryRow, SummaryRow> summarize(const std::vector<EvaluationReport>& reports) {
    return {detail::aggregate(reports, detail::mean), detail::aggregate(reports, detail::median)};
}

inline nlohmann::ordered_json to_json(const EvaluationReport& r) {
    nlohmann::ordered_json j = {{"kind", "release_pair"},
                                {"technique", r.technique},
                                {"setting", corpus::setting_name(r.setting)},
                                {"train_release", r.trainRelease},
                                {"test_release", r.testRelease},
                                {"status", r.failed ? "failed" : "ok"}};
    if (r.failed) {
        j["error"] = r.error;
        return j;
    }
    j["tp"] = r.matrix.tp;
    j["fp"] = r.matrix.fp;
    j["tn"] = r.matrix.tn;
    j["fn"] = r.matrix.fn;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f_measure"] = r.fMeasure;
    j["mcc"] = r.mcc;
    j["existing_detected_pct"] = detail::opt(r.existingDetectedPct);
    j["novel_detected_pct"] = detail::opt(r.novelDetectedPct);
    return j;
}

inline nlohmann::ordered_json to_json(const SummaryRow& s) {
    return {{"mcc", detail::opt(s.mcc)},
            {"f_measure", detail::opt(s.fMeasure)},
            {"precision", detail::opt(s.precision)},
            {"recall", detail::opt(s.recall)},
            {"existing_detected_pct", detail::opt(s.existingDetectedPct)},
            {"novel_detected_pct", detail::opt(s.novelDetectedPct)}};
}

/// JSON lines: one per release pair, then a summary line.
inline std::string report_jsonl(const std::vector<EvaluationReport>& reports) {
    std::string out;
    for (const auto& r : reports) out += to_json(r).dump() + "\n";
    const auto [avg, med] = summarize(reports);
    nlohmann::ordered_json s = {{"kind", "summary"},
                                {"technique", reports.empty() ? std::string() : reports.front().technique},
                                {"setting", reports.empty() ? std::string() : std::string(corpus::setting_name(reports.front().setting))},
                                {"release_pairs", reports.size()},
                                {"failed", std::count_if(reports.begin(), reports.end(), [](const auto& r) { return r.failed; })},
                                {"average", to_json(avg)},
                                {"median", to_json(med)}};
    out += s.dump() + "\n";
    return out;
}

namespace detail {

inline std::string cell(const std::optional<double>& v) {
    if (!v) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", *v);
    return buf;
}

}  // namespace detail

/// Release, MCC, F-measure, Precision, Recall; then Average and Median rows.
inline std::string report_csv(const std::vector<EvaluationReport>& reports) {
    std::string out = "Release,MCC,F-measure,Precision,Recall\n";
    for (const auto& r : reports) {
        auto v = [&](double x) { return r.failed ? std::string("NA") : detail::cell(x); };
        out += r.testRelease + "," + v(r.mcc) + "," + v(r.fMeasure) + "," + v(r.precision) + "," + v(r.recall) + "\n";
    }
    const auto [avg, med] = summarize(reports);
    for (const auto& [name, row] : {std::pair{"Average", avg}, std::pair{"Median", med}})
        out += std::string(name) + "," + detail::cell(row.mcc) + "," + detail::cell(row.fMeasure) + "," + detail::cell(row.precision) +
               "," + detail::cell(row.recall) + "\n";
    return out;
}

/// Checks a JSON-lines report: release_pair lines with the expected fields and
/// types, ending in exactly one summary line. Throws ParseError.
inline void check_report_schema(std::string_view text) {
    std::size_t lineNo = 0, pairs = 0;
    bool summary = false;
    std::size_t start = 0;
    auto numberOrNull = [](const nlohmann::json& j, const char* key) {
        return j.contains(key) && (j[key].is_number() || j[key].is_null());
    };
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const auto line = text.substr(start, end - start);
        start = end + 1;
        ++lineNo;
        if (line.empty()) continue;
        if (summary) throw ParseError(lineNo, "content after the summary line");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(lineNo, e.what());
        }
        const auto kind = j.value("kind", std::string());
        if (kind == "release_pair") {
            for (const char* k : {"technique", "setting", "train_release", "test_release", "status"})
                if (!j.contains(k) || !j[k].is_string()) throw ParseError(lineNo, std::string("missing string field ") + k);
            if (j["status"] == "ok") {
                for (const char* k : {"tp", "fp", "tn", "fn"})
                    if (!j.contains(k) || !j[k].is_number_integer() || j[k].get<long>() < 0)
                        throw ParseError(lineNo, std::string("bad count ") + k);
                for (const char* k : {"precision", "recall", "f_measure", "mcc"})
                    if (!j.contains(k) || !j[k].is_number()) throw ParseError(lineNo, std::string("missing metric ") + k);
                if (j["mcc"].get<double>() < -1.0 || j["mcc"].get<double>() > 1.0) throw ParseError(lineNo, "mcc out of range");
                for (const char* k : {"precision", "recall", "f_measure"})
                    if (j[k].get<double>() < 0.0 || j[k].get<double>() > 1.0) throw ParseError(lineNo, std::string(k) + " out of range");
                for (const char* k : {"existing_detected_pct", "novel_detected_pct"})
                    if (!numberOrNull(j, k)) throw ParseError(lineNo, std::string("missing field ") + k);
            } else if (j["status"] != "failed" || !j.contains("error")) {
                throw ParseError(lineNo, "bad status");
            }
            ++pairs;
        } else if (kind == "summary") {
            for (const char* row : {"average", "median"}) {
                if (!j.contains(row) || !j[row].is_object()) throw ParseError(lineNo, std::string("missing ") + row);
                for (const char* k : {"mcc", "f_measure", "precision", "recall", "existing_detected_pct", "novel_detected_pct"})
                    if (!numberOrNull(j[row], k)) throw ParseError(lineNo, std::string("missing summary field ") + k);
            }
            if (j.value("release_pairs", std::size_t{0}) != pairs) throw ParseError(lineNo, "summary count disagrees with rows");
            summary = true;
        } else {
            throw ParseError(lineNo, "unknown record kind '" + kind + "'");
        }
    }
    if (!summary) throw ParseError(lineNo, "missing summary line");
}

}  // namespace vulnmt::evaluate
