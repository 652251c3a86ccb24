#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tdlm/training.hpp"

namespace tdlm {

struct WordVectorTable {
    std::size_t dim = 0;
    std::unordered_map<std::string, std::vector<double>> vectors;
    std::size_t size() const { return vectors.size(); }
};

/// "word f1 ... fD" per line; the first line fixes D. Duplicate words keep the
/// last occurrence and are reported through warnings.
WordVectorTable parse_word_vectors(std::string_view content, std::vector<std::string>* warnings = nullptr);
WordVectorTable load_word_vectors(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
/// Sorted by word so output is reproducible.
void save_word_vectors(const std::filesystem::path& path, const WordVectorTable& table);

/// Lowercased whitespace tokens.
std::vector<std::string> paragraph_tokens(std::string_view text);

struct AveragedEmbedding {
    std::vector<double> vector;
    std::size_t in_vocabulary = 0;
    bool all_oov = false;
};

AveragedEmbedding embed_average(std::span<const std::string> tokens, const WordVectorTable& table);

struct LabeledParagraph {
    std::string text;
    int label = 0;  // 0 original, 1 paraphrased
    std::string source;
};

std::vector<LabeledParagraph> parse_labeled_paragraphs(const std::vector<nlohmann::json>& rows);
std::vector<LabeledParagraph> load_labeled_paragraphs(const std::filesystem::path& path);
void save_labeled_paragraphs(const std::filesystem::path& path, const std::vector<LabeledParagraph>& rows);

struct FeatureMatrix {
    RowMatrix x;
    std::vector<int> y;
    std::size_t all_oov_rows = 0;
};

FeatureMatrix build_features(const std::vector<LabeledParagraph>& paragraphs, const WordVectorTable& table);
/// CSV: f0..fD-1,label.
void write_features_csv(const std::filesystem::path& path, const FeatureMatrix& features);

enum class ClassifierKind { logreg, naive_bayes, svm };

struct Classifier {
    ClassifierKind kind = ClassifierKind::logreg;
    /// Linear models: score = w.x + b.
    Eigen::VectorXd weights;
    double bias = 0.0;
    /// Gaussian naive Bayes: per-class means, variances and log priors (row c = class c).
    RowMatrix means, variances;
    double log_prior[2] = {0.0, 0.0};

    /// Probability of class 1 (the SVM maps its margin through a sigmoid).
    double probability(std::span<const double> x) const;
    double decision(std::span<const double> x) const;
    int predict(std::span<const double> x) const { return decision(x) > 0.0 ? 1 : 0; }
    std::vector<int> predict(const RowMatrix& x) const;
};

/// Optimizer variants standing in for the four solver names of the grid.
enum class Solver { plain, backtracking, momentum, momentum_backtracking };
Solver solver_from_name(std::string_view name);

enum class MultiClass { ovr, multinomial };
MultiClass multi_class_from_name(std::string_view name);

struct LogRegConfig {
    double learning_rate = 0.5;
    double tolerance = 1e-4;
    std::size_t max_iter = 1000;
    double l2 = 0.0;
    Solver solver = Solver::backtracking;
    /// Binary tasks: one sigmoid, or a two-class softmax with one weight row per class.
    MultiClass multi_class = MultiClass::ovr;
};

struct LogRegResult {
    Classifier classifier;
    std::vector<double> loss_history;
};

/// Full-batch gradient descent on the L2-regularized mean log-loss; stops when
/// the loss improves by less than the tolerance.
LogRegResult train_logreg(const RowMatrix& x, std::span<const int> y, const LogRegConfig& config);
/// Gaussian class-conditionals with a variance floor.
Classifier train_nb(const RowMatrix& x, std::span<const int> y, double variance_floor = 1e-9);

struct SvmConfig {
    double c = 1.0;
    double tolerance = 1e-4;
    std::size_t max_iter = 1000;
    double learning_rate = 0.5;
};

/// Mean hinge loss plus |w|^2 / (2C) by full-batch subgradient descent with averaged iterates.
Classifier train_linear_svm(const RowMatrix& x, std::span<const int> y, const SvmConfig& config);

struct GridSpec {
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    std::size_t cells() const;
};

/// Four solvers x three iteration caps x two multi-class modes x four tolerances.
GridSpec logreg_grid();

using GridCell = std::map<std::string, std::string>;
using GridTrainer = std::function<Classifier(const GridCell& cell, const RowMatrix& x, std::span<const int> y)>;

struct GridResult {
    std::vector<std::vector<std::string>> cells;  // values in axis order
    std::vector<double> metric;
    std::size_t best = 0;
};

/// Exhaustive search in axis order (last axis fastest); best by F1-micro, ties to the earliest cell.
GridResult grid_search(const GridTrainer& trainer, const GridSpec& spec, const FeatureMatrix& train,
                       const FeatureMatrix& validation);
void write_grid_csv(const std::filesystem::path& path, const GridSpec& spec, const GridResult& result);
GridTrainer logreg_grid_trainer(double l2 = 0.0);

struct FinetuneConfig {
    std::size_t epochs = 1;
    std::size_t batch_size = 8;
    AdamWConfig optim{2e-5, 0.9, 0.999, 1e-8, 0.01};
    bool freeze_encoder = false;
    std::uint64_t seed = 0;
};

struct FinetuneResult {
    double f1 = 0.0;
    std::vector<double> epoch_loss;
};

/// [CLS] tokens [SEP], truncated to the model's maximum length.
std::vector<std::int32_t> encode_paragraph(const Tokenizer& tokenizer, const std::string& text, std::size_t max_len);

/// Binary cross-entropy fine-tuning on the aggregate token; F1-micro on the held-out set.
FinetuneResult finetune_classifier(Model& model, const Tokenizer& tokenizer,
                                   const std::vector<LabeledParagraph>& train,
                                   const std::vector<LabeledParagraph>& held_out, const FinetuneConfig& config);
std::vector<int> classify_paragraphs(const Model& model, const Tokenizer& tokenizer,
                                     const std::vector<LabeledParagraph>& paragraphs);

/// word -> substitutes.
using SynonymTable = std::map<std::string, std::vector<std::string>>;
SynonymTable load_synonyms(const std::filesystem::path& path);
void save_synonyms(const std::filesystem::path& path, const SynonymTable& table);

/// Replace ratios of the two spinning tools the presets mirror.
inline constexpr double kRatioDocumentFrequency = 0.125;
inline constexpr double kRatioIntermediateFrequency = 0.19;

struct SynthResult {
    std::vector<LabeledParagraph> pairs;
    std::size_t replaceable = 0;
    std::size_t replaced = 0;
    double realized_ratio() const
    {
        return replaceable == 0 ? 0.0 : static_cast<double>(replaced) / static_cast<double>(replaceable);
    }
};

/// Each paragraph yields itself (label 0) and a copy whose replaceable words
/// are independently substituted with probability replace_ratio (label 1).
SynthResult synth_paraphrase(const std::vector<std::string>& paragraphs, const SynonymTable& synonyms,
                             double replace_ratio, std::uint64_t seed);

} // namespace tdlm
