#pragma once

// Command-line entry point. Settings resolve as: flags, then the --config
// JSON file, then the profile defaults.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vulnmt/abstraction.hpp"
#include "vulnmt/baselines.hpp"
#include "vulnmt/corpus.hpp"
#include "vulnmt/cparse.hpp"
#include "vulnmt/errors.hpp"
#include "vulnmt/evaluate.hpp"
#include "vulnmt/pairing.hpp"
#include "vulnmt/predict.hpp"
#include "vulnmt/seq2seq.hpp"
#include "vulnmt/synthetic.hpp"
#include "vulnmt/util.hpp"

namespace vulnmt::cli {

enum class Profile { Desk, Paper };

inline Profile parse_profile(std::string_view s) {
    if (s == "desk") return Profile::Desk;
    if (s == "paper") return Profile::Paper;
    throw ConfigError("unknown profile '" + std::string(s) + "' (expected desk|paper)");
}

struct RunConfig {
    std::uint64_t seed = 1;
    Profile profile = Profile::Desk;
    unsigned jobs = 1;
    seq2seq::ModelConfig model;
    seq2seq::TrainConfig training;
    pairing::PairingConfig pairing;
    double validationFraction = 0.1;
    corpus::MaterialOptions material;
    baselines::BaselineConfig baseline;
    synthetic::SynthesisSpec synth;

    evaluate::ExperimentConfig experiment() const {
        evaluate::ExperimentConfig e;
        e.model = model;
        e.training = training;
        e.pairing = pairing;
        e.validationFraction = validationFraction;
        e.material = material;
        e.jobs = jobs;
        return e;
    }
};

inline RunConfig profile_defaults(Profile p) {
    RunConfig c;
    c.profile = p;
    if (p == Profile::Paper) {
        c.model.hiddenUnits = 256;
        c.training.maxSteps = 50000;
        c.training.iterationSteps = 5000;
    }
    return c;
}

/// Overlays the keys present in a config document.
inline void apply_json(RunConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    try {
        c.seed = j.value("seed", c.seed);
        c.jobs = j.value("jobs", c.jobs);
        c.validationFraction = j.value("validation_fraction", c.validationFraction);
        if (j.contains("model")) c.model = seq2seq::model_config_from_json(j.at("model"), c.model);
        if (j.contains("training")) {
            const auto& t = j.at("training");
            c.training.iterationSteps = t.value("iteration_steps", c.training.iterationSteps);
            c.training.maxSteps = t.value("max_steps", c.training.maxSteps);
            c.training.clipNorm = t.value("clip_norm", c.training.clipNorm);
            c.training.minCount = t.value("min_count", c.training.minCount);
            c.training.patience = t.value("patience", c.training.patience);
            c.training.lrDecay = t.value("lr_decay", c.training.lrDecay);
            if (t.contains("optimizer")) c.training.optimizer = seq2seq::parse_optimizer(t.at("optimizer").get<std::string>());
        }
        if (j.contains("pairing")) {
            const auto& p = j.at("pairing");
            c.pairing.nonVulnRatio = p.value("non_vuln_ratio", c.pairing.nonVulnRatio);
            c.pairing.includeNonVulnerableComponents =
                p.value("include_non_vulnerable_components", c.pairing.includeNonVulnerableComponents);
        }
        c.material.keepPersistent = j.value("keep_persistent", c.material.keepPersistent);
        if (j.contains("baseline")) {
            const auto& b = j.at("baseline");
            c.baseline.bins = b.value("bins", c.baseline.bins);
            c.baseline.fixedAsNegatives = b.value("fixed_as_negatives", c.baseline.fixedAsNegatives);
            c.baseline.classifier.iterations = b.value("iterations", c.baseline.classifier.iterations);
            c.baseline.classifier.learningRate = b.value("learning_rate", c.baseline.classifier.learningRate);
            c.baseline.classifier.l2 = b.value("l2", c.baseline.classifier.l2);
            c.baseline.classifier.threshold = b.value("threshold", c.baseline.classifier.threshold);
        }
        if (j.contains("synth")) {
            const auto& s = j.at("synth");
            c.synth.nReleases = s.value("releases", c.synth.nReleases);
            c.synth.componentsPerRelease = s.value("components", c.synth.componentsPerRelease);
            c.synth.vulnFraction = s.value("vuln_fraction", c.synth.vulnFraction);
            c.synth.vocabularySkew = s.value("skew", c.synth.vocabularySkew);
            c.synth.detectionLagDays = s.value("detection_lag_days", c.synth.detectionLagDays);
            c.synth.releaseSpacingDays = s.value("release_spacing_days", c.synth.releaseSpacingDays);
            c.synth.persistence = s.value("persistence", c.synth.persistence);
            c.synth.plantSignal = s.value("plant_signal", c.synth.plantSignal);
            c.synth.projectName = s.value("project", c.synth.projectName);
            c.synth.firstReleaseDate = s.value("first_release_date", c.synth.firstReleaseDate);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

/// Flag values; unset ones leave the lower layers alone.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> profile;
    std::optional<unsigned> jobs;
    std::optional<int> hiddenUnits, embeddingDim, batchSize, patience, bins;
    std::optional<long> maxSteps, iterationSteps;
    std::optional<double> learningRate, nonVulnRatio, validationFraction;
    std::optional<std::string> optimizer;
    std::optional<int> releases, components, detectionLag, releaseSpacing;
    std::optional<double> vulnFraction, persistence;
    bool plantSignal = false;
};

inline RunConfig resolve(const Overrides& o, const std::optional<nlohmann::json>& config) {
    std::string profileName = "desk";
    if (config && config->is_object() && config->contains("profile")) profileName = config->at("profile").get<std::string>();
    if (o.profile) profileName = *o.profile;
    RunConfig c = profile_defaults(parse_profile(profileName));
    if (config) apply_json(c, *config);

    if (o.seed) c.seed = *o.seed;
    if (o.jobs) c.jobs = *o.jobs;
    if (o.hiddenUnits) c.model.hiddenUnits = *o.hiddenUnits;
    if (o.embeddingDim) c.model.embeddingDim = *o.embeddingDim;
    if (o.batchSize) c.model.batchSize = *o.batchSize;
    if (o.learningRate) c.model.learningRate = *o.learningRate;
    if (o.maxSteps) c.training.maxSteps = *o.maxSteps;
    if (o.iterationSteps) c.training.iterationSteps = *o.iterationSteps;
    if (o.patience) c.training.patience = *o.patience;
    if (o.optimizer) c.training.optimizer = seq2seq::parse_optimizer(*o.optimizer);
    if (o.nonVulnRatio) c.pairing.nonVulnRatio = *o.nonVulnRatio;
    if (o.validationFraction) c.validationFraction = *o.validationFraction;
    if (o.bins) c.baseline.bins = *o.bins;
    if (o.releases) c.synth.nReleases = *o.releases;
    if (o.components) c.synth.componentsPerRelease = *o.components;
    if (o.detectionLag) c.synth.detectionLagDays = *o.detectionLag;
    if (o.releaseSpacing) c.synth.releaseSpacingDays = *o.releaseSpacing;
    if (o.vulnFraction) c.synth.vulnFraction = *o.vulnFraction;
    if (o.persistence) c.synth.persistence = *o.persistence;
    if (o.plantSignal) c.synth.plantSignal = true;

    // one seed drives every random choice
    c.model.seed = c.seed;
    c.pairing.seed = c.seed;
    c.baseline.jobs = c.jobs;
    c.baseline.material = c.material;
    if (c.jobs < 1) throw ConfigError("--jobs must be at least 1");
    if (!(c.validationFraction >= 0.0 && c.validationFraction < 1.0)) throw ConfigError("validation fraction must lie in [0, 1)");
    c.model.validate();
    c.training.validate();
    return c;
}

/// Release by name, or by 0-based index when no name matches.
inline std::size_t find_release(const corpus::Corpus& c, const std::string& key) {
    for (std::size_t i = 0; i < c.releases.size(); ++i)
        if (c.releases[i].name == key) return i;
    std::size_t idx = 0;
    try {
        std::size_t used = 0;
        idx = std::stoul(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
    } catch (const std::logic_error&) {
        throw IndexError("no release named '" + key + "'");
    }
    if (idx >= c.releases.size()) throw IndexError("release index " + key + " out of range");
    return idx;
}

/// Writes atomically to `path`, or to `out` when the path is empty.
inline void emit(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty()) out << text;
    else write_file_atomic(path, text);
}

/// Exit status: 1 for input, usage and validation problems, 2 for internal ones.
inline int exit_code(const std::exception& e) {
    if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return 2;
    if (dynamic_cast<const Error*>(&e)) return 1;
    return 2;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Vulnerability prediction as neural machine translation", "vulnmt"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "vulnmt 1.0");

    Overrides o;
    std::string configPath;
    app.add_option("--seed", o.seed, "Seed for every random choice (default 1)");
    app.add_option("--jobs", o.jobs, "Worker threads; 1 gives byte-identical outputs (default 1)");
    app.add_option("--config", configPath, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--profile", o.profile, "desk or paper (default desk)")->check(CLI::IsMember({"desk", "paper"}));

    std::string input, output, corpusPath, modelPath, release, setting = "clean", format = "jsonl", technique;

    auto addModelFlags = [&o](CLI::App* s) {
        s->add_option("--hidden-units", o.hiddenUnits, "LSTM units per layer (desk 32, paper 256)");
        s->add_option("--embedding-dim", o.embeddingDim, "Embedding size (default 32)");
        s->add_option("--batch-size", o.batchSize, "Pairs per step (default 16)");
        s->add_option("--learning-rate", o.learningRate, "Step size (default 0.01)");
        s->add_option("--optimizer", o.optimizer, "adam or sgd (default adam)")->check(CLI::IsMember({"adam", "sgd"}));
        s->add_option("--max-steps", o.maxSteps, "Step budget (desk 5000, paper 50000)");
        s->add_option("--iteration-steps", o.iterationSteps, "Steps between validations (desk 500, paper 5000)");
        s->add_option("--patience", o.patience, "Validations without improvement before stopping (default 1)");
        s->add_option("--non-vuln-ratio", o.nonVulnRatio, "Identity pairs per fix pair (default 5)");
        s->add_option("--validation-fraction", o.validationFraction, "Held-out share of training pairs (default 0.1)");
    };
    auto addSetting = [&setting](CLI::App* s) {
        s->add_option("--setting", setting, "clean or realistic")->capture_default_str()->check(CLI::IsMember({"clean", "realistic"}));
    };

    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
    synth->add_option("-o,--output", output, "Corpus file")->required();
    synth->add_option("--releases", o.releases, "Number of releases (default 4)");
    synth->add_option("--components", o.components, "Components per release (default 60)");
    synth->add_option("--vuln-fraction", o.vulnFraction, "Share of vulnerable components (default 0.2)");
    synth->add_option("--detection-lag", o.detectionLag, "Days from release to detection (default 90)");
    synth->add_option("--release-spacing", o.releaseSpacing, "Days between releases (default 180)");
    synth->add_option("--persistence", o.persistence, "Chance a vulnerability survives into the next release (default 0.3)");
    synth->add_flag("--plant-signal", o.plantSignal, "Plant a token and call that mark vulnerable components");

    auto* ingest = app.add_subcommand("ingest", "Validate a corpus file and print a summary");
    ingest->add_option("-i,--input", input, "Corpus file")->required()->check(CLI::ExistingFile);
    ingest->add_option("-o,--output", output, "Re-save the canonical form here");

    auto* abstract = app.add_subcommand("abstract", "Print the abstracted sequences of a C file");
    abstract->add_option("-i,--input", input, "C source file")->required()->check(CLI::ExistingFile);
    abstract->add_option("-o,--output", output, "Output file (default stdout)");

    auto* dump = app.add_subcommand("dump-tokens", "Print the tokens of a C file");
    dump->add_option("-i,--input", input, "C source file")->required()->check(CLI::ExistingFile);
    dump->add_option("-o,--output", output, "Output file (default stdout)");

    auto* pair = app.add_subcommand("pair", "Print the training pairs of a release");
    pair->add_option("--corpus", corpusPath, "Corpus file")->required()->check(CLI::ExistingFile);
    pair->add_option("--release", release, "Training release (name or index)")->required();
    pair->add_option("--non-vuln-ratio", o.nonVulnRatio, "Identity pairs per fix pair (default 5)");
    pair->add_option("-o,--output", output, "Output file (default stdout)");
    addSetting(pair);

    auto* train = app.add_subcommand("train", "Train a model on one release and save a checkpoint");
    train->add_option("--corpus", corpusPath, "Corpus file")->required()->check(CLI::ExistingFile);
    train->add_option("--release", release, "Training release (name or index)")->required();
    train->add_option("-o,--output", output, "Checkpoint file")->required();
    addSetting(train);
    addModelFlags(train);

    auto* pred = app.add_subcommand("predict", "Classify components with a trained model");
    pred->add_option("--model", modelPath, "Checkpoint file")->required()->check(CLI::ExistingFile);
    auto* predCorpus = pred->add_option("--corpus", corpusPath, "Corpus file")->check(CLI::ExistingFile);
    pred->add_option("--release", release, "Release to classify (name or index)")->needs(predCorpus);
    pred->add_option("-i,--input", input, "Single C source file instead of a corpus release")->check(CLI::ExistingFile)->excludes(predCorpus);
    pred->add_option("-o,--output", output, "Output file (default stdout)");

    auto* eval = app.add_subcommand("evaluate", "Run the release-pair protocol with the translation model");
    eval->add_option("--corpus", corpusPath, "Corpus file")->required()->check(CLI::ExistingFile);
    eval->add_option("--format", format, "jsonl or csv")->capture_default_str()->check(CLI::IsMember({"jsonl", "csv"}));
    eval->add_option("-o,--output", output, "Report file (default stdout)");
    addSetting(eval);
    addModelFlags(eval);

    auto* base = app.add_subcommand("baseline", "Run the release-pair protocol with a comparison technique");
    base->add_option("--corpus", corpusPath, "Corpus file")->required()->check(CLI::ExistingFile);
    base->add_option("--technique", technique, "metrics, imports, calls or textmining")
        ->required()
        ->check(CLI::IsMember({"metrics", "imports", "calls", "textmining"}));
    base->add_option("--bins", o.bins, "Frequency bins for textmining (default 10)");
    base->add_option("--format", format, "jsonl or csv")->capture_default_str()->check(CLI::IsMember({"jsonl", "csv"}));
    base->add_option("-o,--output", output, "Report file (default stdout)");
    addSetting(base);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? 0 : 1;
    }

    try {
        std::optional<nlohmann::json> config;
        if (!configPath.empty()) {
            try {
                config = nlohmann::json::parse(read_file(configPath));
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError("config " + configPath + ": " + e.what());
            }
        }
        const RunConfig cfg = resolve(o, config);
        const auto report = [&](const std::vector<evaluate::EvaluationReport>& rows) {
            emit(output, format == "csv" ? evaluate::report_csv(rows) : evaluate::report_jsonl(rows), out);
        };

        if (*synth) {
            write_file_atomic(output, corpus::save_corpus(synthetic::generate_synthetic_corpus(cfg.seed, cfg.synth)));
        } else if (*ingest) {
            const auto c = corpus::load_corpus(input);
            corpus::validate(c);
            std::size_t components = 0, vulnerable = 0;
            for (const auto& r : c.releases)
                for (const auto& comp : r.components) {
                    ++components;
                    vulnerable += comp.label == corpus::Label::Vulnerable;
                }
            const auto canonical = corpus::save_corpus(c);
            nlohmann::ordered_json s = {{"project", c.projectName},         {"releases", c.releases.size()},
                                        {"components", components},         {"vulnerable_components", vulnerable},
                                        {"vulnerabilities", c.vulnerabilities.size()}, {"sha256", sha256_hex(canonical)}};
            out << s.dump() << "\n";
            if (!output.empty()) write_file_atomic(output, canonical);
        } else if (*abstract) {
            std::string text;
            for (const auto& seq : abstraction::sequences_for_source(read_file(input), input)) text += seq.text() + "\n";
            emit(output, text, out);
        } else if (*dump) {
            std::string text;
            for (const auto& t : cparse::tokenize(read_file(input)))
                if (t.kind != cparse::TokenKind::Whitespace) text += std::string(cparse::kind_name(t.kind)) + "\t" + cparse::escape_text(t.text) + "\n";
            emit(output, text, out);
        } else if (*pair) {
            const auto c = corpus::load_corpus(corpusPath);
            const auto material = corpus::training_set(c, find_release(c, release), corpus::parse_setting(setting), cfg.material);
            std::string text;
            for (const auto& p : pairing::build_training_pairs(pairing::label_material(material, cfg.pairing), cfg.pairing))
                text += pairing::format_pair(p) + "\n";
            emit(output, text, out);
        } else if (*train) {
            const auto c = corpus::load_corpus(corpusPath);
            const auto idx = find_release(c, release);
            const auto material = corpus::training_set(c, idx, corpus::parse_setting(setting), cfg.material);
            const auto exp = cfg.experiment();
            const auto [trainPairs, validPairs] = evaluate::prepare_pairs(material, exp);
            const auto result = seq2seq::train(trainPairs, validPairs, cfg.model, cfg.training, [&err](long step, double loss, double rate) {
                err << "step " << step << " loss " << loss;
                if (rate >= 0.0) err << " validation " << rate;
                err << "\n";
            });
            nlohmann::json meta = {{"release", c.releases[idx].name},
                                   {"setting", setting},
                                   {"steps", result.state.step},
                                   {"best_step", result.bestStep},
                                   {"best_validation", result.bestValidation},
                                   {"training_pairs", trainPairs.size()},
                                   {"validation_pairs", validPairs.size()},
                                   {"optimizer", seq2seq::optimizer_name(cfg.training.optimizer)}};
            seq2seq::save_model(result.model, output, meta);
        } else if (*pred) {
            const auto model = seq2seq::load_model(modelPath);
            std::vector<predict::ComponentVerdict> verdicts;
            if (!input.empty()) {
                verdicts.push_back(predict::predict_source(model, input, read_file(input)));
            } else {
                if (corpusPath.empty()) throw ConfigError("predict needs --input or --corpus");
                const auto c = corpus::load_corpus(corpusPath);
                if (c.releases.empty()) throw EmptyCorpus("corpus has no releases");
                const auto idx = release.empty() ? c.releases.size() - 1 : find_release(c, release);
                verdicts = predict::predict_release(model, c.releases[idx], cfg.jobs);
            }
            std::string text;
            for (const auto& v : verdicts) text += predict::to_json(v).dump() + "\n";
            emit(output, text, out);
        } else if (*eval) {
            const auto c = corpus::load_corpus(corpusPath);
            report(evaluate::run_experiment(c, corpus::parse_setting(setting), cfg.experiment()));
        } else if (*base) {
            const auto c = corpus::load_corpus(corpusPath);
            report(baselines::run_baseline(c, baselines::parse_technique(technique), corpus::parse_setting(setting), cfg.baseline));
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code(e);
    }
    return 0;
}

}  // namespace vulnmt::cli
