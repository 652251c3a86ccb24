#include "tdlm/distill.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "tdlm/random.hpp"

namespace tdlm {

void DistillConfig::validate() const
{
    if (!(temperature > 0.0)) throw ConfigError("distill: temperature must be positive");
    if (ground_truth_step < 1) throw ConfigError("distill: ground-truth step must be at least 1");
    if (feature_weight < 0.0) throw ConfigError("distill: feature weight must be non-negative");
}

std::size_t TeacherSet::hidden() const
{
    if (teachers.empty()) throw ConfigError("teacher set is empty");
    return teachers.front()->config.hidden;
}

void TeacherSet::validate(const Model& student) const
{
    if (teachers.empty()) throw ConfigError("teacher set is empty");
    const Model& first = *teachers.front();
    for (const Model* t : teachers) {
        if (t->config.vocab_size != student.config.vocab_size || t->vocab_hash != student.vocab_hash) {
            throw ConfigError("teacher and student vocabularies differ");
        }
        if (t->config.hidden != first.config.hidden) {
            throw ConfigError("teachers disagree on hidden size (" + std::to_string(t->config.hidden) + " vs " +
                              std::to_string(first.config.hidden) + ")");
        }
    }
}

TeacherOutputs teacher_forward_all(const TeacherSet& teachers, const MaskedBatch& batch, double temperature,
                                   std::size_t threads)
{
    if (!(temperature > 0.0)) throw ParameterError("teacher_forward_all: temperature must be positive");
    const std::size_t n = teachers.size();
    TeacherOutputs out;
    out.distributions.resize(n);
    out.hidden.resize(n);
    const auto run = [&](std::size_t i) {
        Tape& tape = inference_tape();
        const ForwardOutput f = mlm_forward(tape, *teachers.teachers[i], batch);
        if (f.mlm_logits.defined()) out.distributions[i] = softmax_temperature(tape, f.mlm_logits, temperature);
        out.hidden[i] = f.hidden;
    };
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) run(i);
    } else {
        std::vector<std::jthread> workers;
        std::vector<std::exception_ptr> errors(n);
        for (std::size_t i = 0; i < n; ++i) {
            workers.emplace_back([&, i] {
                try { run(i); } catch (...) { errors[i] = std::current_exception(); }
            });
        }
        workers.clear();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    return out;
}

std::vector<double> confidence_weights(const std::vector<std::span<const double>>& teacher_dists,
                                       std::int32_t gold, WeightingMode mode)
{
    const std::size_t n = teacher_dists.size();
    if (n == 0) throw ValidationError("confidence_weights: no teachers");
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (gold < 0 || static_cast<std::size_t>(gold) >= teacher_dists[i].size()) {
            throw IndexError("confidence_weights: gold index outside distribution");
        }
    }
    if (mode == WeightingMode::confidence) {
        // D_i = KL(onehot || y_i) = -log y_i[gold]; w = softmax(-D).
        std::vector<double> neg_div(n);
        for (std::size_t i = 0; i < n; ++i)
            neg_div[i] = std::log(std::clamp(teacher_dists[i][static_cast<std::size_t>(gold)], kProbabilityFloor, 1.0));
        const double top = *std::max_element(neg_div.begin(), neg_div.end());
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += (w[i] = std::exp(neg_div[i] - top));
        for (double& x : w) x /= total;
        return w;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double kl = 0.0;
        for (std::size_t j = 0; j < teacher_dists[i].size(); ++j) {
            const double p = std::clamp(teacher_dists[i][j], kProbabilityFloor, 1.0);
            const double y = static_cast<std::int32_t>(j) == gold ? 1.0 : kProbabilityFloor;
            kl += p * std::log(p / y);
        }
        w[i] = std::max(kl, 0.0);
        total += w[i];
    }
    if (total <= 0.0) return std::vector<double>(n, 1.0 / static_cast<double>(n));
    for (double& x : w) x /= total;
    return w;
}

std::vector<double> weighted_target(const std::vector<std::span<const double>>& teacher_dists,
                                    std::span<const double> weights)
{
    if (teacher_dists.size() != weights.size()) {
        throw DimensionError("weighted_target: " + std::to_string(weights.size()) + " weights for " +
                             std::to_string(teacher_dists.size()) + " teachers");
    }
    if (teacher_dists.empty()) throw ValidationError("weighted_target: no teachers");
    const std::size_t v = teacher_dists.front().size();
    std::vector<double> target(v, 0.0);
    for (std::size_t i = 0; i < teacher_dists.size(); ++i) {
        if (teacher_dists[i].size() != v) throw DimensionError("weighted_target: distribution lengths differ");
        for (std::size_t j = 0; j < v; ++j) target[j] += weights[i] * teacher_dists[i][j];
    }
    return target;
}

Tensor feature_target(const std::vector<Tensor>& teacher_hiddens, const RowMatrix& weights)
{
    if (teacher_hiddens.empty()) throw ValidationError("feature_target: no teachers");
    const std::size_t rows = teacher_hiddens.front().rows();
    const std::size_t width = teacher_hiddens.front().cols();
    for (const auto& h : teacher_hiddens) {
        if (h.cols() != width) throw ConfigError("feature_target: teachers disagree on hidden size");
        if (h.rows() != rows) throw DimensionError("feature_target: teachers disagree on row count");
    }
    if (static_cast<std::size_t>(weights.rows()) != rows ||
        static_cast<std::size_t>(weights.cols()) != teacher_hiddens.size()) {
        throw DimensionError("feature_target: weight matrix must be rows x teachers");
    }
    RowMatrix out = RowMatrix::Zero(rows, width);
    for (std::size_t i = 0; i < teacher_hiddens.size(); ++i)
        out += weights.col(i).asDiagonal() * teacher_hiddens[i].matrix();
    return Tensor::from_matrix(out);
}

DistillTargets build_targets(const TeacherOutputs& outputs, const MaskedBatch& batch, WeightingMode mode)
{
    const std::size_t n = outputs.hidden.size();
    const auto positions = batch.target_positions();
    const auto gold = batch.target_ids();
    DistillTargets targets;

    // Uniform weights everywhere, overwritten at masked positions.
    RowMatrix token_weights = RowMatrix::Constant(batch.tokens(), n, 1.0 / static_cast<double>(n));
    if (!positions.empty()) {
        const std::size_t v = outputs.distributions.front().cols();
        targets.weights.resize(positions.size(), n);
        std::vector<double> soft(positions.size() * v);
        std::vector<std::span<const double>> rows(n);
        for (std::size_t m = 0; m < positions.size(); ++m) {
            for (std::size_t i = 0; i < n; ++i) rows[i] = outputs.distributions[i].values().subspan(m * v, v);
            const auto w = confidence_weights(rows, gold[m], mode);
            const auto t = weighted_target(rows, w);
            std::copy(t.begin(), t.end(), soft.begin() + static_cast<std::ptrdiff_t>(m * v));
            for (std::size_t i = 0; i < n; ++i) {
                targets.weights(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(i)) = w[i];
                token_weights(static_cast<Eigen::Index>(positions[m]), static_cast<Eigen::Index>(i)) = w[i];
            }
        }
        targets.soft_target = Tensor({positions.size(), v}, std::move(soft));
    }

    for (std::size_t i = 0; i < batch.tokens(); ++i)
        if (batch.pad.empty() || !batch.pad[i]) targets.feature_rows.push_back(i);
    std::vector<Tensor> selected;
    for (const auto& h : outputs.hidden) selected.push_back(gather_rows(inference_tape(), h, targets.feature_rows));
    RowMatrix row_weights(targets.feature_rows.size(), n);
    for (std::size_t r = 0; r < targets.feature_rows.size(); ++r)
        row_weights.row(static_cast<Eigen::Index>(r)) = token_weights.row(static_cast<Eigen::Index>(targets.feature_rows[r]));
    targets.feature_target = feature_target(selected, row_weights);
    return targets;
}

std::vector<Tensor> Student::trainable() const
{
    auto params = model.params.list();
    if (projection.defined()) params.push_back(projection);
    return params;
}

Student make_student(Model model, std::size_t teacher_hidden, std::uint64_t seed)
{
    Student s{std::move(model), Tensor()};
    if (s.model.config.hidden != teacher_hidden) {
        Rng rng(derive_seed(seed, 0x70726f6aULL));
        const std::size_t hs = s.model.config.hidden;
        std::vector<double> values(hs * teacher_hidden);
        const double stddev = 1.0 / std::sqrt(static_cast<double>(hs));
        for (double& x : values) x = rng.normal(0.0, stddev);
        s.projection = Tensor({hs, teacher_hidden}, std::move(values), true);
    }
    return s;
}

Tensor distill_loss(Tape& tape, const Student& student, const MaskedBatch& batch, const DistillTargets& targets,
                    const DistillConfig& config, std::size_t k, const ForwardOptions& options)
{
    if (k < 1) throw ParameterError("distill_loss: step index starts at 1");
    const auto gold = batch.target_ids();
    const ForwardOutput out = mlm_forward(tape, student.model, batch, options);
    if (is_ground_truth_step(k, config.ground_truth_step)) {
        if (gold.empty()) return Tensor();
        return cross_entropy(tape, out.mlm_logits, gold, true);
    }

    Tensor loss;
    if (!gold.empty()) {
        const double t = config.temperature;
        loss = scale(tape, cross_entropy(tape, out.mlm_logits, targets.soft_target, true, t), t * t);
    }
    if (config.feature_weight > 0.0 && !targets.feature_rows.empty()) {
        Tensor h = gather_rows(tape, out.hidden, targets.feature_rows);
        if (student.projection.defined()) h = matmul(tape, h, student.projection);
        const Tensor feature = scale(tape, mse(tape, h, targets.feature_target), config.feature_weight);
        loss = loss.defined() ? add(tape, loss, feature) : feature;
    }
    return loss;
}

std::vector<LossRecord> train_distill(Student& student, const TeacherSet& teachers,
                                      const std::vector<Document>& train,
                                      const std::vector<MaskedBatch>& validation, const DistillConfig& config)
{
    config.validate();
    teachers.validate(student.model);
    if (student.projection.defined() && student.projection.dim(1) != teachers.hidden()) {
        throw ConfigError("distill: projection width differs from teacher hidden size");
    }
    if (!student.projection.defined() && student.model.config.hidden != teachers.hidden()) {
        throw ConfigError("distill: student needs a projection to the teacher hidden size");
    }
    const auto sequences = pack_sequences(train, std::min(config.train.seq_len, student.model.config.max_seq));
    student.model.params.set_requires_grad(true);
    const StepLoss loss = [&](Tape& tape, const MaskedBatch& batch, std::size_t k, Rng& rng) {
        DistillTargets targets;
        if (!is_ground_truth_step(k, config.ground_truth_step)) {
            const TeacherOutputs outputs = teacher_forward_all(teachers, batch, config.temperature, config.threads);
            targets = build_targets(outputs, batch, config.weighting);
        }
        ForwardOptions options{true, &rng};
        return distill_loss(tape, student, batch, targets, config, k, options);
    };
    const BranchName branch = [&config](std::size_t k) {
        return std::string(is_ground_truth_step(k, config.ground_truth_step) ? "gt" : "distill");
    };
    return run_training(student.trainable(), student.model, sequences, validation, config.train, loss, branch);
}

} // namespace tdlm
