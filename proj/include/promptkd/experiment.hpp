#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "promptkd/corpus.hpp"
#include "promptkd/distillation.hpp"
#include "promptkd/encoder.hpp"
#include "promptkd/prompting.hpp"
#include "promptkd/vocab.hpp"

namespace promptkd {

struct TrainConfig {
  std::vector<double> lr_grid = {5e-5, 2e-5, 1e-5, 5e-6};
  int batch_size = 32;
  int max_epochs = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  uint64_t seed = 0;
  int threads = 1;
  KDConfig kd;

  void validate() const {
    check(!lr_grid.empty() && batch_size >= 1 && max_epochs >= 0, "bad train config");
    kd.validate();
  }
};

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<double, kNumTopRelations> precision{};
  std::array<double, kNumTopRelations> recall{};
  std::array<double, kNumTopRelations> f1{};
  std::array<std::array<int, kNumTopRelations>, kNumTopRelations> confusion{};  // [gold][pred]
  int total = 0;
};

Metrics metrics_from_confusion(
    const std::array<std::array<int, kNumTopRelations>, kNumTopRelations>& confusion);

struct EpochRecord {
  double lr = 0.0;
  int epoch = 0;  // 1-based
  Metrics dev;
};

struct RunRecord {
  std::string variant;
  uint64_t seed = 0;
  double selected_lr = 0.0;
  double temperature = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  std::vector<EpochRecord> epochs;
  std::string selected_checkpoint;
  Metrics test;
  double wall_clock_sec = 0.0;
};

// AdamW with decoupled weight decay over a tensor registry.
template <typename T>
class AdamW {
 public:
  AdamW(const std::vector<Mat<T>>& shapes, double lr, double beta1, double beta2,
        double eps, double weight_decay)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
    for (const Mat<T>& s : shapes) {
      m_.emplace_back(s.rows, s.cols);
      v_.emplace_back(s.rows, s.cols);
    }
  }

  void step(std::vector<Mat<T>>& tensors, const std::vector<Mat<T>>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < tensors.size(); ++i) {
      T* w = tensors[i].data();
      const T* g = grads[i].data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      const size_t n = tensors[i].size();
      for (size_t j = 0; j < n; ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = beta1_ * m[j] + (1.0 - beta1_) * gj;
        const double vj = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double update = (mj / bc1) / (std::sqrt(vj / bc2) + eps_) + wd_ * w[j];
        w[j] = static_cast<T>(w[j] - lr_ * update);
      }
    }
  }

  int steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_, wd_;
  int t_ = 0;
  std::vector<Mat<T>> m_, v_;
};

struct PretrainConfig {
  int epochs = 3;
  double lr = 1e-3;
  double mask_rate = 0.15;
  int batch_size = 32;
  double weight_decay = 0.01;
  uint64_t seed = 0;
  int threads = 1;
};

// Masked-token prediction over concatenated arg1 + connective + arg2 text.
void pretrain_mlm(EncoderParams<float>& params, const Corpus& corpus,
                  const Vocabulary& vocab, const PretrainConfig& cfg);
// Mean masked-prediction loss on a split with a fixed masking seed.
double mlm_heldout_loss(const EncoderParams<float>& params, const Corpus& corpus,
                        const Vocabulary& vocab, Split split, double mask_rate,
                        uint64_t seed);

enum class StudentKind { kResponse, kFeature, kPlain, kInjection };
std::string student_kind_name(StudentKind kind);

struct PipelineConfig {
  EncoderConfig encoder;  // vocab_size is filled during setup
  TemplateSpec tmpl;
  AnswerGranularity granularity = AnswerGranularity::kPaper21;
  int vocab_min_count = 1;
  PretrainConfig pretrain;
  TrainConfig train;
  uint64_t seed = 0;
  std::string out_dir;  // when set, stages save checkpoints/stores there
};

// Per-instance answer logits of one model over a list of prompts.
std::vector<std::vector<double>> batch_answer_logits(const EncoderParams<float>& params,
                                                     const std::vector<PromptInstance>& prompts,
                                                     const AnswerSpace& space);
Metrics evaluate_predictions(const std::vector<std::vector<double>>& answer_logit_rows,
                             const std::vector<int>& gold_tops, const AnswerSpace& space);

// Staged pipeline over one corpus: masked-token pretraining, template and
// answer token registration, embedding initializers, teacher training,
// knowledge extraction, student training and fusion. Stages cache so that
// sweeps can share a teacher.
class Pipeline {
 public:
  Pipeline(Corpus corpus, SenseHierarchy hierarchy, MappingTable mapping, PipelineConfig cfg);

  void setup();
  RunRecord& train_teacher_model();
  void extract_knowledge();
  void set_temperature(double temperature);  // re-softens from the shared teacher
  RunRecord train_student_model(StudentKind kind);

  Metrics evaluate_model(const EncoderParams<float>& params, Split split,
                         bool teacher_prompts) const;
  Metrics fused_test_metrics(const EncoderParams<float>& response,
                             const EncoderParams<float>& feature) const;

  const Vocabulary& vocab() const { return vocab_; }
  const AnswerSpace& space() const { return space_; }
  const ConnectiveInventory& inventory() const { return inventory_; }
  const EncoderParams<float>& base_params() const { return base_; }
  const EncoderParams<float>& teacher_params() const { return teacher_; }
  const TeacherKnowledge& knowledge() const { return knowledge_; }
  const Corpus& corpus() const { return corpus_; }
  const PipelineConfig& config() const { return cfg_; }
  const EncoderParams<float>& student_params(StudentKind kind) const;

 private:
  std::vector<PromptInstance> split_prompts(Split split, bool teacher_prompts) const;
  std::vector<int> split_gold_tops(Split split) const;
  TemplateSpec student_template() const;
  TemplateSpec teacher_template() const;

  Corpus corpus_;
  SenseHierarchy hierarchy_;
  MappingTable mapping_;
  PipelineConfig cfg_;

  Vocabulary vocab_;
  EncoderParams<float> base_;
  ConnectiveInventory inventory_;
  AnswerSpace space_;
  bool setup_done_ = false;

  EncoderParams<float> teacher_;
  RunRecord teacher_record_;
  bool teacher_done_ = false;

  TeacherKnowledge knowledge_;
  bool knowledge_done_ = false;

  std::map<std::string, EncoderParams<float>> students_;  // by kind name
};

struct PipelineResult {
  RunRecord teacher;
  RunRecord response;
  RunRecord feature;
  RunRecord fused;  // test metrics of the fused prediction
};

PipelineResult run_pipeline(const Corpus& corpus, const SenseHierarchy& hierarchy,
                            const MappingTable& mapping, const PipelineConfig& cfg);

struct AblationSpec {
  bool use_response_student = true;
  bool use_feature_student = true;
  bool continuous_template = true;
  bool virtual_answers = true;
  bool knowledge_injection = false;

  // Removing both students leaves the plain hard-label student; injection
  // replaces the teacher-student setup entirely.
  void validate() const {
    check(!(knowledge_injection && (!use_response_student || !use_feature_student)),
          "contradictory ablation spec: injection replaces the student arms");
  }
  std::string name() const;
  static AblationSpec from_name(const std::string& name);
};

RunRecord run_ablation(const AblationSpec& spec, const Corpus& corpus,
                       const SenseHierarchy& hierarchy, const MappingTable& mapping,
                       const PipelineConfig& cfg);

std::vector<std::pair<double, RunRecord>> sweep_temperature(
    const std::vector<double>& values, const Corpus& corpus, const SenseHierarchy& hierarchy,
    const MappingTable& mapping, const PipelineConfig& cfg);

struct VerbalizerResult {
  AnswerGranularity granularity;
  std::string mode;  // fused / response / feature
  RunRecord record;
};
std::vector<VerbalizerResult> compare_verbalizers(
    const std::vector<AnswerGranularity>& granularities, const Corpus& corpus,
    const SenseHierarchy& hierarchy, const MappingTable& mapping, const PipelineConfig& cfg);

// Fixed-column summary rows (variant, seed, lr, T, alpha, beta, acc,
// macro_f1, per-class F1s).
std::string summary_csv_header();
std::string summary_csv_row(const RunRecord& record);
std::string record_to_json(const RunRecord& record);

uint64_t hash_params(const EncoderParams<float>& params);

}  // namespace promptkd
