#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tdlm/training.hpp"

namespace tdlm {

/// How teacher distributions are weighted into the soft target.
enum class WeightingMode {
    /// softmax over teachers of -KL(onehot(gold) || y_i), i.e. y_i[gold] / sum_j y_j[gold].
    confidence,
    /// w_i proportional to KL(y_i || onehot(gold)) with clamping, normalized to sum 1.
    paper_literal,
};

struct DistillConfig {
    double temperature = 2.5;
    /// Every ground_truth_step-th step trains on the gold tokens instead of the teachers.
    std::size_t ground_truth_step = 100;
    /// Weight of the hidden-feature MSE term.
    double feature_weight = 1.0;
    WeightingMode weighting = WeightingMode::confidence;
    TrainConfig train;
    /// Teachers evaluated concurrently (outputs are reduced in list order).
    std::size_t threads = 1;

    void validate() const;
};

/// Frozen teachers sharing one vocabulary and one hidden size.
struct TeacherSet {
    std::vector<const Model*> teachers;

    std::size_t size() const { return teachers.size(); }
    std::size_t hidden() const;
    /// Throws ConfigError unless all teachers match each other and the student.
    void validate(const Model& student) const;
};

/// Per-teacher softened distributions at masked positions (M x V) and final hidden states.
struct TeacherOutputs {
    std::vector<Tensor> distributions;
    std::vector<Tensor> hidden;
};

TeacherOutputs teacher_forward_all(const TeacherSet& teachers, const MaskedBatch& batch, double temperature,
                                   std::size_t threads = 1);

/// One weight per teacher for one masked position; sums to 1.
std::vector<double> confidence_weights(const std::vector<std::span<const double>>& teacher_dists,
                                       std::int32_t gold, WeightingMode mode = WeightingMode::confidence);

/// Convex combination sum_i w_i y_i.
std::vector<double> weighted_target(const std::vector<std::span<const double>>& teacher_dists,
                                    std::span<const double> weights);

/// Per-row convex combination of teacher hidden states (rows x H_t); weights is rows x n.
Tensor feature_target(const std::vector<Tensor>& teacher_hiddens, const RowMatrix& weights);

struct DistillTargets {
    Tensor soft_target;                    // M x V
    RowMatrix weights;                     // M x n
    Tensor feature_target;                 // non-pad positions x H_t
    std::vector<std::size_t> feature_rows; // flattened non-pad positions
};

DistillTargets build_targets(const TeacherOutputs& outputs, const MaskedBatch& batch, WeightingMode mode);

/// Student plus the learned map from its hidden size to the teachers'.
struct Student {
    Model model;
    /// H_s x H_t; undefined when the sizes agree (identity).
    Tensor projection;

    std::vector<Tensor> trainable() const;
};

Student make_student(Model model, std::size_t teacher_hidden, std::uint64_t seed);

inline bool is_ground_truth_step(std::size_t k, std::size_t ground_truth_step)
{
    return k % ground_truth_step == 0;
}

/// Loss of step k: hard CE on gold tokens when k mod l == 0, otherwise
/// T^2 * CE(student at T, soft target) + feature_weight * MSE(projected student, feature target).
Tensor distill_loss(Tape& tape, const Student& student, const MaskedBatch& batch, const DistillTargets& targets,
                    const DistillConfig& config, std::size_t k, const ForwardOptions& options = {});

/// Runs the multi-teacher distillation loop over the masked-batch stream.
std::vector<LossRecord> train_distill(Student& student, const TeacherSet& teachers,
                                      const std::vector<Document>& train,
                                      const std::vector<MaskedBatch>& validation, const DistillConfig& config);

} // namespace tdlm
