#include "tdlm/paraphrase.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "tdlm/jsonl.hpp"
#include "tdlm/metrics.hpp"
#include "tdlm/random.hpp"
#include "tdlm/text.hpp"

namespace tdlm {

namespace {

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z)
{
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void check_binary(const RowMatrix& x, std::span<const int> y, const char* who)
{
    if (static_cast<std::size_t>(x.rows()) != y.size()) {
        throw DimensionError(std::string(who) + ": " + std::to_string(x.rows()) + " rows for " +
                             std::to_string(y.size()) + " labels");
    }
    if (y.size() < 2) throw ValidationError(std::string(who) + ": need at least two samples");
    bool seen[2] = {false, false};
    for (int label : y) {
        if (label != 0 && label != 1) throw ValidationError(std::string(who) + ": labels must be 0 or 1");
        seen[label] = true;
    }
    if (!seen[0] || !seen[1]) throw ValidationError(std::string(who) + ": both classes must be present");
    if (!x.allFinite()) throw ValidationError(std::string(who) + ": features contain NaN or Inf");
}

/// Column standardization folded back into the linear model after training.
struct Standardizer {
    Eigen::RowVectorXd mean, scale;

    explicit Standardizer(const RowMatrix& x)
    {
        const double n = static_cast<double>(x.rows());
        mean = x.colwise().sum() / n;
        scale = ((x.rowwise() - mean).array().square().colwise().sum() / n).sqrt().matrix();
        for (Eigen::Index j = 0; j < scale.size(); ++j)
            if (!(scale[j] > 1e-12)) scale[j] = 1.0;
    }
    RowMatrix apply(const RowMatrix& x) const
    {
        return ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
    }
    void fold(Classifier& c) const
    {
        c.weights = (c.weights.array() / scale.transpose().array()).matrix();
        c.bias -= mean.dot(c.weights);
    }
};

/// Loss and gradient of a linear model over a flat parameter vector.
using Objective = std::function<double(const Eigen::VectorXd& theta, Eigen::VectorXd* grad)>;

std::vector<double> minimize(const Objective& f, Eigen::VectorXd& theta, const LogRegConfig& config)
{
    std::vector<double> history;
    Eigen::VectorXd grad(theta.size()), velocity = Eigen::VectorXd::Zero(theta.size());
    double loss = f(theta, &grad);
    history.push_back(loss);
    const bool use_momentum = config.solver == Solver::momentum || config.solver == Solver::momentum_backtracking;
    const bool use_backtracking =
        config.solver == Solver::backtracking || config.solver == Solver::momentum_backtracking;
    const auto backtrack = [&](Eigen::VectorXd& candidate) {
        double step = config.learning_rate;
        const double g2 = grad.squaredNorm();
        for (int i = 0; i < 60; ++i) {
            candidate = theta - step * grad;
            const double value = f(candidate, nullptr);
            if (value <= loss - 0.5 * step * g2) return;
            step *= 0.5;
        }
        candidate = theta;
    };

    for (std::size_t iter = 0; iter < config.max_iter; ++iter) {
        Eigen::VectorXd next;
        if (use_momentum) {
            velocity = 0.9 * velocity - config.learning_rate * grad;
            next = theta + velocity;
            if (use_backtracking && f(next, nullptr) > loss) {
                velocity.setZero();
                backtrack(next);
            }
        } else if (use_backtracking) {
            backtrack(next);
        } else {
            next = theta - config.learning_rate * grad;
        }
        theta = std::move(next);
        const double previous = loss;
        loss = f(theta, &grad);
        history.push_back(loss);
        if (std::abs(previous - loss) < config.tolerance) break;
    }
    return history;
}

} // namespace

WordVectorTable parse_word_vectors(std::string_view content, std::vector<std::string>* warnings)
{
    WordVectorTable table;
    std::size_t line_no = 0, start = 0;
    while (start < content.size()) {
        std::size_t end = content.find('\n', start);
        if (end == std::string_view::npos) end = content.size();
        std::string_view line = content.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        const auto fields = text::split_whitespace(line);
        if (fields.empty()) continue;
        std::vector<double> values;
        for (std::size_t i = 1; i < fields.size(); ++i) {
            double v = 0.0;
            const auto* first = fields[i].data();
            const auto* last = first + fields[i].size();
            const auto [ptr, ec] = std::from_chars(first, last, v);
            if (ec != std::errc() || ptr != last) {
                throw FormatError("word vectors line " + std::to_string(line_no) + ": bad number '" + fields[i] + "'");
            }
            values.push_back(v);
        }
        if (values.empty()) throw FormatError("word vectors line " + std::to_string(line_no) + ": no values");
        if (table.dim == 0) table.dim = values.size();
        if (values.size() != table.dim) {
            throw FormatError("word vectors line " + std::to_string(line_no) + ": " + std::to_string(values.size()) +
                              " values, expected " + std::to_string(table.dim));
        }
        const auto [it, inserted] = table.vectors.insert_or_assign(fields[0], std::move(values));
        if (!inserted && warnings) warnings->push_back("duplicate word '" + fields[0] + "' on line " +
                                                       std::to_string(line_no) + "; keeping the last vector");
    }
    if (table.vectors.empty()) throw FormatError("word vector file is empty");
    return table;
}

WordVectorTable load_word_vectors(const std::filesystem::path& path, std::vector<std::string>* warnings)
{
    try {
        return parse_word_vectors(read_file(path), warnings);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void save_word_vectors(const std::filesystem::path& path, const WordVectorTable& table)
{
    std::vector<const std::string*> words;
    for (const auto& [w, v] : table.vectors) words.push_back(&w);
    std::sort(words.begin(), words.end(), [](const auto* a, const auto* b) { return *a < *b; });
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << std::setprecision(17);
    for (const auto* w : words) {
        out << *w;
        for (double v : table.vectors.at(*w)) out << ' ' << v;
        out << '\n';
    }
}

std::vector<std::string> paragraph_tokens(std::string_view text_in)
{
    return text::split_whitespace(text::to_lower(text_in));
}

AveragedEmbedding embed_average(std::span<const std::string> tokens, const WordVectorTable& table)
{
    AveragedEmbedding out;
    out.vector.assign(table.dim, 0.0);
    for (const auto& t : tokens) {
        const auto it = table.vectors.find(t);
        if (it == table.vectors.end()) continue;
        for (std::size_t j = 0; j < table.dim; ++j) out.vector[j] += it->second[j];
        ++out.in_vocabulary;
    }
    if (out.in_vocabulary == 0) {
        out.all_oov = true;
        return out;
    }
    for (double& v : out.vector) v /= static_cast<double>(out.in_vocabulary);
    return out;
}

std::vector<LabeledParagraph> parse_labeled_paragraphs(const std::vector<nlohmann::json>& rows)
{
    std::vector<LabeledParagraph> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        try {
            LabeledParagraph p;
            p.text = rows[i].at("text").get<std::string>();
            p.label = rows[i].at("label").get<int>();
            p.source = rows[i].value("source", "");
            if (p.label != 0 && p.label != 1) throw FormatError("label must be 0 or 1");
            out.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("line " + std::to_string(i + 1) + ": " + e.what());
        } catch (const FormatError& e) {
            throw FormatError("line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return out;
}

std::vector<LabeledParagraph> load_labeled_paragraphs(const std::filesystem::path& path)
{
    try {
        return parse_labeled_paragraphs(read_jsonl(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void save_labeled_paragraphs(const std::filesystem::path& path, const std::vector<LabeledParagraph>& rows)
{
    std::vector<nlohmann::json> out;
    for (const auto& p : rows) out.push_back({{"text", p.text}, {"label", p.label}, {"source", p.source}});
    write_jsonl(path, out);
}

FeatureMatrix build_features(const std::vector<LabeledParagraph>& paragraphs, const WordVectorTable& table)
{
    FeatureMatrix f;
    f.x.resize(static_cast<Eigen::Index>(paragraphs.size()), static_cast<Eigen::Index>(table.dim));
    for (std::size_t i = 0; i < paragraphs.size(); ++i) {
        const auto e = embed_average(paragraph_tokens(paragraphs[i].text), table);
        f.all_oov_rows += e.all_oov;
        for (std::size_t j = 0; j < table.dim; ++j)
            f.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = e.vector[j];
        f.y.push_back(paragraphs[i].label);
    }
    return f;
}

void write_features_csv(const std::filesystem::path& path, const FeatureMatrix& features)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    for (Eigen::Index j = 0; j < features.x.cols(); ++j) out << 'f' << j << ',';
    out << "label\n" << std::setprecision(17);
    for (Eigen::Index i = 0; i < features.x.rows(); ++i) {
        for (Eigen::Index j = 0; j < features.x.cols(); ++j) out << features.x(i, j) << ',';
        out << features.y[static_cast<std::size_t>(i)] << '\n';
    }
}

double Classifier::decision(std::span<const double> x) const
{
    if (kind != ClassifierKind::naive_bayes) {
        if (x.size() != static_cast<std::size_t>(weights.size())) throw DimensionError("classifier: feature width");
        return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())).dot(weights) + bias;
    }
    if (x.size() != static_cast<std::size_t>(means.cols())) throw DimensionError("classifier: feature width");
    double lp[2];
    for (int c = 0; c < 2; ++c) {
        double s = log_prior[c];
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double var = variances(c, static_cast<Eigen::Index>(j));
            const double d = x[j] - means(c, static_cast<Eigen::Index>(j));
            s -= 0.5 * (std::log(2.0 * M_PI * var) + d * d / var);
        }
        lp[c] = s;
    }
    return lp[1] - lp[0];
}

double Classifier::probability(std::span<const double> x) const { return sigmoid(decision(x)); }

std::vector<int> Classifier::predict(const RowMatrix& x) const
{
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Eigen::RowVectorXd row = x.row(i);
        out[static_cast<std::size_t>(i)] = predict(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
    }
    return out;
}

Solver solver_from_name(std::string_view name)
{
    if (name == "newton-cg" || name == "plain") return Solver::plain;
    if (name == "lbfgs" || name == "backtracking") return Solver::backtracking;
    if (name == "sag" || name == "momentum") return Solver::momentum;
    if (name == "saga" || name == "momentum-backtracking") return Solver::momentum_backtracking;
    throw ConfigError("unknown solver '" + std::string(name) + "'");
}

MultiClass multi_class_from_name(std::string_view name)
{
    if (name == "ovr") return MultiClass::ovr;
    if (name == "multinomial") return MultiClass::multinomial;
    throw ConfigError("unknown multi-class mode '" + std::string(name) + "'");
}

LogRegResult train_logreg(const RowMatrix& x_raw, std::span<const int> y, const LogRegConfig& config)
{
    check_binary(x_raw, y, "train_logreg");
    if (!(config.learning_rate > 0.0)) throw ParameterError("train_logreg: learning rate must be positive");
    if (config.l2 < 0.0) throw ParameterError("train_logreg: l2 must be non-negative");
    const Standardizer standardizer(x_raw);
    const RowMatrix x = standardizer.apply(x_raw);
    const Eigen::Index n = x.rows(), d = x.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    Eigen::VectorXd yv(n);
    for (Eigen::Index i = 0; i < n; ++i) yv[i] = y[static_cast<std::size_t>(i)];

    LogRegResult result;
    result.classifier.kind = ClassifierKind::logreg;
    if (config.multi_class == MultiClass::ovr) {
        const Objective f = [&](const Eigen::VectorXd& theta, Eigen::VectorXd* grad) {
            const auto w = theta.head(d);
            const Eigen::VectorXd z = (x * w).array() + theta[d];
            double loss = 0.0;
            Eigen::VectorXd residual(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                loss += softplus(z[i]) - yv[i] * z[i];
                residual[i] = sigmoid(z[i]) - yv[i];
            }
            loss = loss * inv_n + 0.5 * config.l2 * w.squaredNorm();
            if (grad) {
                grad->resize(d + 1);
                grad->head(d) = x.transpose() * residual * inv_n + config.l2 * w;
                (*grad)[d] = residual.sum() * inv_n;
            }
            return loss;
        };
        Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
        result.loss_history = minimize(f, theta, config);
        result.classifier.weights = theta.head(d);
        result.classifier.bias = theta[d];
    } else {
        // theta = [w0, w1, b0, b1].
        const Objective f = [&](const Eigen::VectorXd& theta, Eigen::VectorXd* grad) {
            const auto w0 = theta.segment(0, d), w1 = theta.segment(d, d);
            const Eigen::VectorXd z0 = (x * w0).array() + theta[2 * d];
            const Eigen::VectorXd z1 = (x * w1).array() + theta[2 * d + 1];
            double loss = 0.0;
            Eigen::VectorXd r1(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double diff = z1[i] - z0[i];
                // -log softmax of the true class, as a softplus of the margin.
                loss += yv[i] > 0.5 ? softplus(-diff) : softplus(diff);
                r1[i] = sigmoid(diff) - yv[i];
            }
            loss = loss * inv_n + 0.5 * config.l2 * (w0.squaredNorm() + w1.squaredNorm());
            if (grad) {
                grad->resize(2 * d + 2);
                const Eigen::VectorXd g = x.transpose() * r1 * inv_n;
                grad->segment(0, d) = -g + config.l2 * w0;
                grad->segment(d, d) = g + config.l2 * w1;
                (*grad)[2 * d] = -r1.sum() * inv_n;
                (*grad)[2 * d + 1] = r1.sum() * inv_n;
            }
            return loss;
        };
        Eigen::VectorXd theta = Eigen::VectorXd::Zero(2 * d + 2);
        result.loss_history = minimize(f, theta, config);
        result.classifier.weights = theta.segment(d, d) - theta.segment(0, d);
        result.classifier.bias = theta[2 * d + 1] - theta[2 * d];
    }
    standardizer.fold(result.classifier);
    return result;
}

Classifier train_nb(const RowMatrix& x, std::span<const int> y, double variance_floor)
{
    check_binary(x, y, "train_nb");
    if (!(variance_floor > 0.0)) throw ParameterError("train_nb: variance floor must be positive");
    const Eigen::Index d = x.cols();
    Classifier c;
    c.kind = ClassifierKind::naive_bayes;
    c.means = RowMatrix::Zero(2, d);
    c.variances = RowMatrix::Zero(2, d);
    double counts[2] = {0.0, 0.0};
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const int label = y[static_cast<std::size_t>(i)];
        c.means.row(label) += x.row(i);
        counts[label] += 1.0;
    }
    for (int k = 0; k < 2; ++k) c.means.row(k) /= counts[k];
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const int label = y[static_cast<std::size_t>(i)];
        c.variances.row(label) += (x.row(i) - c.means.row(label)).array().square().matrix();
    }
    for (int k = 0; k < 2; ++k) {
        c.variances.row(k) /= counts[k];
        c.variances.row(k) = c.variances.row(k).cwiseMax(variance_floor);
        c.log_prior[k] = std::log(counts[k] / static_cast<double>(x.rows()));
    }
    return c;
}

Classifier train_linear_svm(const RowMatrix& x_raw, std::span<const int> y, const SvmConfig& config)
{
    check_binary(x_raw, y, "train_linear_svm");
    if (!(config.c > 0.0)) throw ParameterError("train_linear_svm: C must be positive");
    const Standardizer standardizer(x_raw);
    const RowMatrix x = standardizer.apply(x_raw);
    const Eigen::Index n = x.rows(), d = x.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    Eigen::VectorXd s(n);
    for (Eigen::Index i = 0; i < n; ++i) s[i] = y[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;

    const auto objective = [&](const Eigen::VectorXd& w, double b) {
        const Eigen::VectorXd margin = s.cwiseProduct((x * w).array().matrix() + Eigen::VectorXd::Constant(n, b));
        return (1.0 - margin.array()).max(0.0).sum() * inv_n + w.squaredNorm() / (2.0 * config.c);
    };

    Eigen::VectorXd w = Eigen::VectorXd::Zero(d), w_avg = w;
    double b = 0.0, b_avg = 0.0;
    double previous = objective(w_avg, b_avg);
    for (std::size_t t = 1; t <= config.max_iter; ++t) {
        const Eigen::VectorXd margin = s.cwiseProduct((x * w).array().matrix() + Eigen::VectorXd::Constant(n, b));
        Eigen::VectorXd active(n);
        for (Eigen::Index i = 0; i < n; ++i) active[i] = margin[i] < 1.0 ? s[i] : 0.0;
        const Eigen::VectorXd gw = -(x.transpose() * active) * inv_n;
        const double gb = -active.sum() * inv_n;
        const double eta = config.learning_rate / std::sqrt(static_cast<double>(t));
        // The L2 term is applied as an exact shrink so tiny C cannot overshoot.
        w = (w - eta * gw) / (1.0 + eta / config.c);
        b -= eta * gb;
        const double k = static_cast<double>(t);
        w_avg += (w - w_avg) / k;
        b_avg += (b - b_avg) / k;
        const double current = objective(w_avg, b_avg);
        if (t > 10 && std::abs(previous - current) < config.tolerance) break;
        previous = current;
    }
    Classifier c;
    c.kind = ClassifierKind::svm;
    c.weights = w_avg;
    c.bias = b_avg;
    standardizer.fold(c);
    return c;
}

std::size_t GridSpec::cells() const
{
    std::size_t n = 1;
    for (const auto& [name, values] : axes) n *= values.size();
    return n;
}

GridSpec logreg_grid()
{
    return {{{"solver", {"newton-cg", "lbfgs", "sag", "saga"}},
             {"max_iter", {"500", "1000", "1500"}},
             {"multi_class", {"ovr", "multinomial"}},
             {"tol", {"0.01", "0.001", "0.0001", "0.00001"}}}};
}

GridTrainer logreg_grid_trainer(double l2)
{
    return [l2](const GridCell& cell, const RowMatrix& x, std::span<const int> y) {
        LogRegConfig config;
        config.l2 = l2;
        for (const auto& [axis, value] : cell) {
            if (axis == "solver") config.solver = solver_from_name(value);
            else if (axis == "max_iter") config.max_iter = std::stoul(value);
            else if (axis == "multi_class") config.multi_class = multi_class_from_name(value);
            else if (axis == "tol") config.tolerance = std::stod(value);
            else if (axis == "lr") config.learning_rate = std::stod(value);
            else if (axis == "l2") config.l2 = std::stod(value);
            else throw ConfigError("logreg grid: unknown axis '" + axis + "'");
        }
        return train_logreg(x, y, config).classifier;
    };
}

GridResult grid_search(const GridTrainer& trainer, const GridSpec& spec, const FeatureMatrix& train,
                       const FeatureMatrix& validation)
{
    if (spec.axes.empty()) throw ConfigError("grid_search: no axes");
    for (const auto& [name, values] : spec.axes)
        if (values.empty()) throw ConfigError("grid_search: axis '" + name + "' is empty");
    const std::size_t total = spec.cells();
    GridResult result;
    result.cells.resize(total);
    result.metric.resize(total);
    for (std::size_t i = 0; i < total; ++i) {
        std::size_t rest = i;
        std::vector<std::string> values(spec.axes.size());
        for (std::size_t a = spec.axes.size(); a-- > 0;) {
            const auto& axis = spec.axes[a].second;
            values[a] = axis[rest % axis.size()];
            rest /= axis.size();
        }
        result.cells[i] = std::move(values);
    }
    parallel_for(total, [&](std::size_t i) {
        GridCell cell;
        for (std::size_t a = 0; a < spec.axes.size(); ++a) cell[spec.axes[a].first] = result.cells[i][a];
        const Classifier c = trainer(cell, train.x, train.y);
        result.metric[i] = f1_micro(c.predict(validation.x), validation.y);
    });
    for (std::size_t i = 1; i < total; ++i)
        if (result.metric[i] > result.metric[result.best]) result.best = i;
    return result;
}

void write_grid_csv(const std::filesystem::path& path, const GridSpec& spec, const GridResult& result)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& [name, values] : spec.axes) out << name << ',';
    out << "f1_micro\n" << std::setprecision(17);
    for (std::size_t i = 0; i < result.cells.size(); ++i) {
        for (const auto& v : result.cells[i]) out << v << ',';
        out << result.metric[i] << '\n';
    }
}

std::vector<std::int32_t> encode_paragraph(const Tokenizer& tokenizer, const std::string& text_in, std::size_t max_len)
{
    if (max_len < 3) throw ParameterError("encode_paragraph: max length too small");
    auto body = tokenizer.encode(text_in);
    if (body.size() > max_len - 2) body.resize(max_len - 2);
    std::vector<std::int32_t> ids{kClsId};
    ids.insert(ids.end(), body.begin(), body.end());
    ids.push_back(kSepId);
    return ids;
}

std::vector<int> classify_paragraphs(const Model& model, const Tokenizer& tokenizer,
                                     const std::vector<LabeledParagraph>& paragraphs)
{
    if (!model.params.head) throw ConfigError("classify_paragraphs: model has no classification head");
    std::vector<int> out(paragraphs.size());
    parallel_for(paragraphs.size(), [&](std::size_t i) {
        const std::vector<std::vector<std::int32_t>> seq{encode_paragraph(tokenizer, paragraphs[i].text, model.config.max_seq)};
        const std::size_t which[1] = {0};
        Tape& tape = inference_tape();
        const ForwardOutput f = encode(tape, model, collate(seq, which));
        const Tensor probs = cls_head_forward(tape, f.aggregate, *model.params.head, HeadKind::classify);
        out[i] = probs[1] > probs[0] ? 1 : 0;
    });
    return out;
}

FinetuneResult finetune_classifier(Model& model, const Tokenizer& tokenizer, const std::vector<LabeledParagraph>& train,
                                   const std::vector<LabeledParagraph>& held_out, const FinetuneConfig& config)
{
    if (train.empty() || held_out.empty()) throw ValidationError("finetune_classifier: empty dataset");
    if (config.batch_size == 0) throw ConfigError("finetune_classifier: batch size must be positive");
    if (!model.params.head) add_head(model, 2, config.seed);
    model.params.set_requires_grad(!config.freeze_encoder);
    model.params.head->weight.set_requires_grad(true);
    model.params.head->bias.set_requires_grad(true);
    std::vector<Tensor> params;
    if (config.freeze_encoder) params = {model.params.head->weight, model.params.head->bias};
    else params = model.params.list();

    std::vector<std::vector<std::int32_t>> encoded;
    for (const auto& p : train) encoded.push_back(encode_paragraph(tokenizer, p.text, model.config.max_seq));
    FinetuneResult result;
    AdamWState state;
    std::uint64_t counter = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng(derive_seed(config.seed, epoch)).shuffle(order);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++counter) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const std::span<const std::size_t> which(order.data() + start, end - start);
            std::vector<std::int32_t> labels;
            for (std::size_t i : which) labels.push_back(train[i].label);
            Rng rng(derive_seed(config.seed ^ 0x64726f70ULL, counter));
            Tape tape;
            const ForwardOutput f = encode(tape, model, collate(encoded, which), {true, &rng});
            const Tensor probs = cls_head_forward(tape, f.aggregate, *model.params.head, HeadKind::classify);
            const Tensor loss = cross_entropy(tape, probs, labels, false);
            total += loss.item() * static_cast<double>(which.size());
            tape.backward(loss);
            adamw_step(params, state, config.optim);
            zero_grad(params);
        }
        result.epoch_loss.push_back(total / static_cast<double>(train.size()));
    }
    std::vector<int> gold;
    for (const auto& p : held_out) gold.push_back(p.label);
    result.f1 = f1_micro(classify_paragraphs(model, tokenizer, held_out), gold);
    return result;
}

SynonymTable load_synonyms(const std::filesystem::path& path)
{
    SynonymTable table;
    try {
        const auto j = nlohmann::json::parse(read_file(path));
        for (const auto& [word, subs] : j.items()) table[word] = subs.get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return table;
}

void save_synonyms(const std::filesystem::path& path, const SynonymTable& table)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [word, subs] : table) j[word] = subs;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(1) << '\n';
}

SynthResult synth_paraphrase(const std::vector<std::string>& paragraphs, const SynonymTable& synonyms,
                             double replace_ratio, std::uint64_t seed)
{
    if (synonyms.empty()) throw ParameterError("synth_paraphrase: synonym table is empty");
    if (!(replace_ratio > 0.0 && replace_ratio < 1.0)) {
        throw ParameterError("synth_paraphrase: replace ratio must be in (0, 1)");
    }
    SynthResult result;
    Rng rng(seed);
    for (std::size_t p = 0; p < paragraphs.size(); ++p) {
        const auto words = text::split_whitespace(paragraphs[p]);
        std::string original, spun;
        for (const auto& w : words) {
            const auto it = synonyms.find(text::to_lower(w));
            std::string out_word = w;
            if (it != synonyms.end() && !it->second.empty()) {
                ++result.replaceable;
                if (rng.bernoulli(replace_ratio)) {
                    out_word = it->second[rng.below(it->second.size())];
                    ++result.replaced;
                }
            }
            if (!original.empty()) {
                original += ' ';
                spun += ' ';
            }
            original += w;
            spun += out_word;
        }
        const std::string source = "synthetic:" + std::to_string(p);
        result.pairs.push_back({std::move(original), 0, source});
        result.pairs.push_back({std::move(spun), 1, source});
    }
    return result;
}

} // namespace tdlm
