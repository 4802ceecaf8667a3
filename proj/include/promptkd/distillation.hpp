#pragma once

#include <map>
#include <string>
#include <vector>

#include "promptkd/encoder.hpp"
#include "promptkd/prompting.hpp"

namespace promptkd {

struct KDConfig {
  double temperature = 10.0;
  double alpha = 0.5;   // response loss balance, in (0,1)
  double beta = 5e-4;   // feature loss weight, >= 0
  bool t_squared_scaling = false;

  void validate() const {
    check(temperature > 0.0, "distillation temperature must be positive");
    check(alpha > 0.0 && alpha < 1.0, "alpha must be in (0,1)");
    check(beta >= 0.0, "beta must be nonnegative");
  }
};

struct SoftLabelStore {
  double temperature = 0.0;
  uint64_t teacher_hash = 0;
  std::map<std::string, std::vector<double>> labels;  // instance id -> probs

  void save(const std::string& path) const;
  static SoftLabelStore load(const std::string& path);
};

struct FeatureStore {
  uint64_t teacher_hash = 0;
  std::map<std::string, std::vector<double>> features;  // instance id -> d-vector

  void save(const std::string& path) const;
  static FeatureStore load(const std::string& path);
};

// Slot-position logits restricted to the answer tokens, in answer order.
template <typename T>
std::vector<double> answer_logits(const ForwardOutput<T>& output, int slot_pos,
                                  const AnswerSpace& space) {
  check(slot_pos >= 0 && slot_pos < output.logits.rows, "slot position out of range");
  std::vector<double> out;
  out.reserve(static_cast<size_t>(space.n()));
  for (const AnswerGroup& g : space.answers) {
    check(g.token_id >= 0 && g.token_id < output.logits.cols,
          "answer token id outside vocabulary");
    out.push_back(static_cast<double>(output.logits.at(slot_pos, g.token_id)));
  }
  return out;
}

// Temperature softmax with max subtraction.
std::vector<double> soften(const std::vector<double>& logits, double temperature);

double shannon_entropy(const std::vector<double>& probs);

// Mean cross entropy between softmax(logits) and the gold answer indices.
double loss_hard(const std::vector<std::vector<double>>& answer_logit_batch,
                 const std::vector<int>& gold);

// Mean KL(soft_target || softmax(logits / T)); optionally scaled by T^2.
double loss_soft(const std::vector<std::vector<double>>& answer_logit_batch,
                 const std::vector<std::vector<double>>& soft_targets, double temperature,
                 bool t_squared_scaling = false);

double response_loss(double hard, double soft, double alpha);

// Mean over the batch of per-item mean squared error.
double feature_loss(const std::vector<std::vector<double>>& student_hidden,
                    const std::vector<std::vector<double>>& teacher_features);

double feature_student_loss(double hard, double feat, double beta);

struct FusedPrediction {
  std::vector<double> probs;
  RelationScores relation;
};
// Elementwise mean of the two students' answer logits, softmax at T=1, then
// relation aggregation.
FusedPrediction fuse_predict(const std::vector<double>& logits_rd,
                             const std::vector<double>& logits_fd, const AnswerSpace& space);

struct TeacherKnowledge {
  SoftLabelStore soft_labels;
  FeatureStore features;
};

// Deterministic eval-mode pass of the teacher over the training split,
// saving softened answer distributions and slot hidden states per instance.
template <typename T>
TeacherKnowledge extract_teacher_knowledge(const EncoderParams<T>& teacher,
                                           const Corpus& corpus, const AnswerSpace& space,
                                           const ConnectiveInventory& inventory,
                                           const Vocabulary& vocab, const TemplateSpec& tmpl,
                                           double temperature, uint64_t teacher_hash = 0) {
  check(temperature > 0.0, "distillation temperature must be positive");
  TeacherKnowledge out;
  out.soft_labels.temperature = temperature;
  out.soft_labels.teacher_hash = teacher_hash;
  out.features.teacher_hash = teacher_hash;
  std::vector<Mat<T>> scratch = teacher.make_grad_buffer();
  const std::vector<int> answer_ids = space.token_ids();
  for (const Instance* inst : corpus.split_view(Split::kTrain)) {
    const PromptInstance prompt = build_teacher_prompt(*inst, tmpl, vocab, inventory);
    Tape<T> tape(&teacher.tensors, &scratch);
    int hidden = encoder_body(tape, teacher, prompt.ids, prompt.attn_mask,
                              /*train_mode=*/false, 0);
    int logits = mlm_logits(tape, teacher, hidden, {prompt.slot_pos});
    int ans = tape.select_cols(logits, answer_ids);
    std::vector<double> a(static_cast<size_t>(space.n()));
    for (int i = 0; i < space.n(); ++i) a[static_cast<size_t>(i)] = tape.val(ans).at(0, i);
    out.soft_labels.labels[inst->id] = soften(a, temperature);
    const Mat<T>& h = tape.val(hidden);
    std::vector<double> feat(static_cast<size_t>(h.cols));
    for (int c = 0; c < h.cols; ++c)
      feat[static_cast<size_t>(c)] = static_cast<double>(h.at(prompt.slot_pos, c));
    out.features.features[inst->id] = std::move(feat);
  }
  return out;
}

}  // namespace promptkd
