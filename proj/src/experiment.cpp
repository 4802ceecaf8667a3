#include "promptkd/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace promptkd {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string format_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string format_f6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

Metrics metrics_from_confusion(
    const std::array<std::array<int, kNumTopRelations>, kNumTopRelations>& confusion) {
  Metrics m;
  m.confusion = confusion;
  int correct = 0;
  std::array<int, kNumTopRelations> gold_totals{}, pred_totals{};
  for (int g = 0; g < kNumTopRelations; ++g)
    for (int p = 0; p < kNumTopRelations; ++p) {
      m.total += confusion[g][p];
      gold_totals[g] += confusion[g][p];
      pred_totals[p] += confusion[g][p];
      if (g == p) correct += confusion[g][p];
    }
  m.accuracy = m.total ? static_cast<double>(correct) / m.total : 0.0;
  double f1_sum = 0.0;
  for (int c = 0; c < kNumTopRelations; ++c) {
    const double tp = confusion[c][c];
    m.precision[c] = pred_totals[c] ? tp / pred_totals[c] : 0.0;
    m.recall[c] = gold_totals[c] ? tp / gold_totals[c] : 0.0;
    const double pr = m.precision[c] + m.recall[c];
    m.f1[c] = pr > 0.0 ? 2.0 * m.precision[c] * m.recall[c] / pr : 0.0;
    f1_sum += m.f1[c];
  }
  m.macro_f1 = f1_sum / kNumTopRelations;
  return m;
}

std::string student_kind_name(StudentKind kind) {
  switch (kind) {
    case StudentKind::kResponse: return "response";
    case StudentKind::kFeature: return "feature";
    case StudentKind::kPlain: return "plain";
    case StudentKind::kInjection: return "injection";
  }
  throw std::runtime_error("bad student kind");
}

// ---------------------------------------------------------------------------
// deterministic shard-parallel batch processing

namespace {

constexpr int kGradShards = 8;

using LossBuilder = std::function<int(Tape<float>&, int item_index, uint64_t drop_seed)>;

struct ShardWorkspace {
  std::vector<std::vector<Mat<float>>> bufs;

  explicit ShardWorkspace(const EncoderParams<float>& params) {
    bufs.reserve(kGradShards);
    for (int s = 0; s < kGradShards; ++s) bufs.push_back(params.make_grad_buffer());
  }
};

// Runs a mini-batch, accumulating mean-loss gradients into `grads`. Items
// are split over a fixed number of shards and reduced in shard order, so the
// result is independent of the worker thread count.
double run_batch(const EncoderParams<float>& params, const std::vector<int>& order,
                 size_t begin, size_t end, ShardWorkspace& ws, std::vector<Mat<float>>& grads,
                 int threads, uint64_t epoch_seed, const LossBuilder& build) {
  const int batch = static_cast<int>(end - begin);
  const int per_shard = (batch + kGradShards - 1) / kGradShards;
  std::array<double, kGradShards> shard_loss{};
  auto run_shard = [&](int s) {
    auto& buf = ws.bufs[static_cast<size_t>(s)];
    for (auto& m : buf) m.zero();
    double local = 0.0;
    const int lo = s * per_shard;
    const int hi = std::min(batch, (s + 1) * per_shard);
    for (int i = lo; i < hi; ++i) {
      const int item = order[begin + static_cast<size_t>(i)];
      Tape<float> tape(&params.tensors, &buf);
      const uint64_t drop_seed = mix_seed(epoch_seed, 0xd7, begin + static_cast<size_t>(i));
      const int loss = build(tape, item, drop_seed);
      const float lv = tape.val(loss).a[0];
      check(std::isfinite(lv), "training diverged: non-finite loss");
      local += static_cast<double>(lv);
      tape.backward(loss, 1.0f / static_cast<float>(batch));
    }
    shard_loss[static_cast<size_t>(s)] = local;
  };
  if (threads <= 1) {
    for (int s = 0; s < kGradShards; ++s) run_shard(s);
  } else {
    const int workers = std::min(threads, kGradShards);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (int s = w; s < kGradShards; s += workers) run_shard(s);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& g : grads) g.zero();
  for (int s = 0; s < kGradShards; ++s)
    for (size_t t = 0; t < grads.size(); ++t)
      for (size_t j = 0; j < grads[t].size(); ++j)
        grads[t].a[j] += ws.bufs[static_cast<size_t>(s)][t].a[j];
  double total = 0.0;
  for (double l : shard_loss) total += l;
  return total / batch;
}

enum class LossMode { kHardOnly, kResponse, kFeature };

struct TrainItem {
  PromptInstance prompt;
  int gold = 0;
  Mat<float> soft;     // 1 x n_answers (response students)
  Mat<float> feature;  // 1 x d (feature students)
};

int build_item_loss(Tape<float>& tape, const EncoderParams<float>& params,
                    const TrainItem& item, const std::vector<int>& answer_ids,
                    LossMode mode, const KDConfig& kd, uint64_t drop_seed) {
  const int hidden = encoder_body(tape, params, item.prompt.ids, item.prompt.attn_mask,
                                  /*train_mode=*/true, drop_seed);
  const int logits = mlm_logits(tape, params, hidden, {item.prompt.slot_pos});
  const int ans = tape.select_cols(logits, answer_ids);
  const int hard = tape.cross_entropy(ans, {item.gold});
  switch (mode) {
    case LossMode::kHardOnly:
      return hard;
    case LossMode::kResponse: {
      const int soft = tape.kl_to_target(ans, item.soft,
                                         static_cast<float>(kd.temperature),
                                         kd.t_squared_scaling);
      return tape.affine2(hard, static_cast<float>(kd.alpha), soft,
                          static_cast<float>(1.0 - kd.alpha));
    }
    case LossMode::kFeature: {
      const int slot_h = tape.select_rows(hidden, {item.prompt.slot_pos});
      const int feat = tape.mse_to_target(slot_h, item.feature);
      return tape.affine2(hard, 1.0f, feat, static_cast<float>(kd.beta));
    }
  }
  throw std::runtime_error("bad loss mode");
}

struct TrainOutcome {
  EncoderParams<float> params;
  RunRecord record;
};

// Learning-rate grid search with per-epoch dev selection: best dev macro-F1,
// ties broken by accuracy, then by the earlier epoch/grid position.
TrainOutcome train_model(const EncoderParams<float>& init, const std::vector<TrainItem>& items,
                         const std::vector<int>& answer_ids, LossMode mode,
                         const TrainConfig& cfg,
                         const std::function<Metrics(const EncoderParams<float>&)>& dev_eval,
                         const std::string& variant) {
  cfg.validate();
  check(!items.empty(), "no training items for " + variant);
  const auto t0 = Clock::now();

  RunRecord record;
  record.variant = variant;
  record.seed = cfg.seed;
  record.temperature = cfg.kd.temperature;
  record.alpha = cfg.kd.alpha;
  record.beta = cfg.kd.beta;

  TrainOutcome best;
  best.params = init;
  best.record = record;
  double best_f1 = -1.0, best_acc = -1.0;
  std::string best_ckpt = variant + "_init";
  double best_lr = cfg.lr_grid.front();

  ShardWorkspace ws(init);
  for (double lr : cfg.lr_grid) {
    EncoderParams<float> params = init;
    std::vector<Mat<float>> grads = params.make_grad_buffer();
    AdamW<float> opt(params.tensors, lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                     cfg.weight_decay);
    std::vector<int> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
      const uint64_t epoch_seed = mix_seed(cfg.seed, 0xe9, static_cast<uint64_t>(epoch));
      Rng shuffle_rng(mix_seed(cfg.seed, 0x5f, static_cast<uint64_t>(epoch)));
      shuffle_rng.shuffle(order);
      for (size_t b = 0; b < order.size(); b += static_cast<size_t>(cfg.batch_size)) {
        const size_t e = std::min(order.size(), b + static_cast<size_t>(cfg.batch_size));
        run_batch(params, order, b, e, ws, grads, cfg.threads, epoch_seed,
                  [&](Tape<float>& tape, int idx, uint64_t drop_seed) {
                    return build_item_loss(tape, params, items[static_cast<size_t>(idx)],
                                           answer_ids, mode, cfg.kd, drop_seed);
                  });
        opt.step(params.tensors, grads);
      }
      const Metrics dev = dev_eval(params);
      record.epochs.push_back({lr, epoch, dev});
      if (dev.macro_f1 > best_f1 ||
          (dev.macro_f1 == best_f1 && dev.accuracy > best_acc)) {
        best_f1 = dev.macro_f1;
        best_acc = dev.accuracy;
        best_lr = lr;
        best_ckpt = variant + "_lr" + format_g(lr) + "_epoch" + std::to_string(epoch);
        best.params = params;
      }
    }
  }
  record.selected_lr = best_lr;
  record.selected_checkpoint = best_ckpt;
  record.wall_clock_sec = seconds_since(t0);
  best.record = std::move(record);
  return best;
}

}  // namespace

// ---------------------------------------------------------------------------
// masked-token pretraining

namespace {

struct MlmItem {
  std::vector<int> ids;  // [CLS] tokens [SEP]
};

std::vector<MlmItem> mlm_items(const Corpus& corpus, const Vocabulary& vocab, Split split,
                               int max_len) {
  std::vector<MlmItem> items;
  for (const Instance* inst : corpus.split_view(split)) {
    std::vector<int> toks =
        tokenize(vocab, inst->arg1 + " " + inst->connective + " " + inst->arg2);
    if (static_cast<int>(toks.size()) > max_len - 2)
      toks.resize(static_cast<size_t>(max_len - 2));
    MlmItem item;
    item.ids.push_back(Vocabulary::kCls);
    item.ids.insert(item.ids.end(), toks.begin(), toks.end());
    item.ids.push_back(Vocabulary::kSep);
    items.push_back(std::move(item));
  }
  return items;
}

struct MaskedInput {
  std::vector<int> ids;
  std::vector<int> positions;
  std::vector<int> golds;
};

MaskedInput mask_item(const MlmItem& item, const Vocabulary& vocab, double mask_rate,
                      uint64_t seed) {
  Rng rng(seed);
  MaskedInput out;
  out.ids = item.ids;
  const int content = static_cast<int>(item.ids.size()) - 2;
  for (int p = 1; p <= content; ++p) {
    if (!rng.bernoulli(mask_rate)) continue;
    out.positions.push_back(p);
  }
  if (out.positions.empty())
    out.positions.push_back(1 + static_cast<int>(rng.below(static_cast<uint64_t>(content))));
  for (int p : out.positions) {
    out.golds.push_back(out.ids[static_cast<size_t>(p)]);
    const double u = rng.uniform();
    if (u < 0.8) {
      out.ids[static_cast<size_t>(p)] = Vocabulary::kMask;
    } else if (u < 0.9) {
      const int base = vocab.frozen_base_size() - Vocabulary::kNumSpecials;
      if (base > 0)
        out.ids[static_cast<size_t>(p)] =
            Vocabulary::kNumSpecials + static_cast<int>(rng.below(static_cast<uint64_t>(base)));
    }  // else keep the original token
  }
  return out;
}

int build_mlm_loss(Tape<float>& tape, const EncoderParams<float>& params,
                   const MaskedInput& masked, uint64_t drop_seed, bool train_mode) {
  std::vector<uint8_t> attn(masked.ids.size(), 1);
  const int hidden = encoder_body(tape, params, masked.ids, attn, train_mode, drop_seed);
  const int logits = mlm_logits(tape, params, hidden, masked.positions);
  return tape.cross_entropy(logits, masked.golds);
}

}  // namespace

void pretrain_mlm(EncoderParams<float>& params, const Corpus& corpus,
                  const Vocabulary& vocab, const PretrainConfig& cfg) {
  if (cfg.epochs <= 0) return;
  check(!corpus.split_view(Split::kTrain).empty(), "pretraining needs a train split");
  const std::vector<MlmItem> items = mlm_items(corpus, vocab, Split::kTrain,
                                               params.config.max_len);
  ShardWorkspace ws(params);
  std::vector<Mat<float>> grads = params.make_grad_buffer();
  AdamW<float> opt(params.tensors, cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
  std::vector<int> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const uint64_t epoch_seed = mix_seed(cfg.seed, 0x31a, static_cast<uint64_t>(epoch));
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5a3, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    for (size_t b = 0; b < order.size(); b += static_cast<size_t>(cfg.batch_size)) {
      const size_t e = std::min(order.size(), b + static_cast<size_t>(cfg.batch_size));
      run_batch(params, order, b, e, ws, grads, cfg.threads, epoch_seed,
                [&](Tape<float>& tape, int idx, uint64_t drop_seed) {
                  const MaskedInput masked =
                      mask_item(items[static_cast<size_t>(idx)], vocab, cfg.mask_rate,
                                mix_seed(epoch_seed, 0x3a5, static_cast<uint64_t>(idx)));
                  return build_mlm_loss(tape, params, masked, drop_seed, true);
                });
      opt.step(params.tensors, grads);
    }
  }
}

double mlm_heldout_loss(const EncoderParams<float>& params, const Corpus& corpus,
                        const Vocabulary& vocab, Split split, double mask_rate,
                        uint64_t seed) {
  const std::vector<MlmItem> items = mlm_items(corpus, vocab, split, params.config.max_len);
  check(!items.empty(), "empty split for held-out masked loss");
  std::vector<Mat<float>> scratch = params.make_grad_buffer();
  double total = 0.0;
  for (size_t i = 0; i < items.size(); ++i) {
    const MaskedInput masked =
        mask_item(items[i], vocab, mask_rate, mix_seed(seed, 0x77, i));
    Tape<float> tape(&params.tensors, &scratch);
    total += static_cast<double>(
        tape.val(build_mlm_loss(tape, params, masked, 0, false)).a[0]);
  }
  return total / static_cast<double>(items.size());
}

// ---------------------------------------------------------------------------
// evaluation

std::vector<std::vector<double>> batch_answer_logits(const EncoderParams<float>& params,
                                                     const std::vector<PromptInstance>& prompts,
                                                     const AnswerSpace& space) {
  std::vector<Mat<float>> scratch = params.make_grad_buffer();
  const std::vector<int> answer_ids = space.token_ids();
  std::vector<std::vector<double>> rows;
  rows.reserve(prompts.size());
  for (const PromptInstance& prompt : prompts) {
    Tape<float> tape(&params.tensors, &scratch);
    const int hidden = encoder_body(tape, params, prompt.ids, prompt.attn_mask, false, 0);
    const int logits = mlm_logits(tape, params, hidden, {prompt.slot_pos});
    const int ans = tape.select_cols(logits, answer_ids);
    std::vector<double> row(static_cast<size_t>(space.n()));
    for (int i = 0; i < space.n(); ++i) row[static_cast<size_t>(i)] = tape.val(ans).at(0, i);
    rows.push_back(std::move(row));
  }
  return rows;
}

Metrics evaluate_predictions(const std::vector<std::vector<double>>& answer_logit_rows,
                             const std::vector<int>& gold_tops, const AnswerSpace& space) {
  check(answer_logit_rows.size() == gold_tops.size(), "predictions/gold size mismatch");
  std::array<std::array<int, kNumTopRelations>, kNumTopRelations> confusion{};
  for (size_t i = 0; i < answer_logit_rows.size(); ++i) {
    const RelationScores rel =
        aggregate_relation_scores(soften(answer_logit_rows[i], 1.0), space);
    ++confusion[static_cast<size_t>(gold_tops[i])][static_cast<size_t>(rel.predicted)];
  }
  return metrics_from_confusion(confusion);
}

// ---------------------------------------------------------------------------
// pipeline

Pipeline::Pipeline(Corpus corpus, SenseHierarchy hierarchy, MappingTable mapping,
                   PipelineConfig cfg)
    : corpus_(std::move(corpus)),
      hierarchy_(std::move(hierarchy)),
      mapping_(std::move(mapping)),
      cfg_(std::move(cfg)) {}

TemplateSpec Pipeline::student_template() const {
  TemplateSpec t = cfg_.tmpl;
  t.kind = t.continuous() ? TemplateKind::kContinuousStudent : TemplateKind::kDiscreteStudent;
  return t;
}

TemplateSpec Pipeline::teacher_template() const {
  TemplateSpec t = cfg_.tmpl;
  t.kind = t.continuous() ? TemplateKind::kContinuousTeacher : TemplateKind::kDiscreteStudent;
  return t;
}

void Pipeline::setup() {
  if (setup_done_) return;
  cfg_.train.validate();
  cfg_.tmpl.validate();
  mapping_.validate_against(hierarchy_);
  check(!corpus_.split_view(Split::kTrain).empty(), "corpus has no training split");

  vocab_ = build_vocabulary(corpus_, cfg_.vocab_min_count);
  EncoderConfig ecfg = cfg_.encoder;
  ecfg.vocab_size = vocab_.size();
  base_ = init_params<float>(ecfg, mix_seed(cfg_.seed, 0x1417));

  PretrainConfig pcfg = cfg_.pretrain;
  pcfg.seed = mix_seed(cfg_.seed, 0x93e7);
  pcfg.threads = cfg_.train.threads;
  pretrain_mlm(base_, corpus_, vocab_, pcfg);

  if (cfg_.tmpl.continuous())
    add_virtual_template_tokens(vocab_, cfg_.tmpl.m, base_, mix_seed(cfg_.seed, 0x17));
  inventory_ = register_integrated_connectives(corpus_, vocab_, base_);
  space_ = build_answer_space(hierarchy_, mapping_, cfg_.granularity, vocab_, &corpus_);
  if (cfg_.granularity != AnswerGranularity::kSubstantive) {
    Rng rng(mix_seed(cfg_.seed, 0xa5));
    base_.grow_vocab(vocab_.size(), rng);
    init_virtual_answers(space_, corpus_, inventory_, base_);
  }
  if (!cfg_.out_dir.empty()) {
    std::filesystem::create_directories(cfg_.out_dir);
    vocab_.save(cfg_.out_dir + "/vocab.txt");
    save_checkpoint(base_, cfg_.out_dir + "/base.ckpt");
  }
  setup_done_ = true;
}

std::vector<PromptInstance> Pipeline::split_prompts(Split split, bool teacher_prompts) const {
  std::vector<PromptInstance> prompts;
  for (const Instance* inst : corpus_.split_view(split))
    prompts.push_back(teacher_prompts
                          ? build_teacher_prompt(*inst, teacher_template(), vocab_, inventory_)
                          : build_student_prompt(*inst, student_template(), vocab_));
  return prompts;
}

std::vector<int> Pipeline::split_gold_tops(Split split) const {
  std::vector<int> tops;
  for (const Instance* inst : corpus_.split_view(split))
    tops.push_back(top_relation_index(inst->first_sense().top));
  return tops;
}

Metrics Pipeline::evaluate_model(const EncoderParams<float>& params, Split split,
                                 bool teacher_prompts) const {
  return evaluate_predictions(
      batch_answer_logits(params, split_prompts(split, teacher_prompts), space_),
      split_gold_tops(split), space_);
}

RunRecord& Pipeline::train_teacher_model() {
  setup();
  if (teacher_done_) return teacher_record_;
  std::vector<TrainItem> items;
  for (const Instance* inst : corpus_.split_view(Split::kTrain)) {
    TrainItem item;
    item.prompt = build_teacher_prompt(*inst, teacher_template(), vocab_, inventory_);
    item.gold = gold_answer(*inst, space_);
    items.push_back(std::move(item));
  }
  TrainConfig tc = cfg_.train;
  tc.seed = mix_seed(cfg_.seed, 0x7e);
  TrainOutcome out = train_model(
      base_, items, space_.token_ids(), LossMode::kHardOnly, tc,
      [this](const EncoderParams<float>& p) { return evaluate_model(p, Split::kDev, true); },
      "teacher");
  teacher_ = std::move(out.params);
  teacher_record_ = std::move(out.record);
  teacher_record_.test = evaluate_model(teacher_, Split::kTest, true);
  if (!cfg_.out_dir.empty()) save_checkpoint(teacher_, cfg_.out_dir + "/teacher.ckpt");
  teacher_done_ = true;
  return teacher_record_;
}

void Pipeline::extract_knowledge() {
  train_teacher_model();
  if (knowledge_done_) return;
  knowledge_ = extract_teacher_knowledge(teacher_, corpus_, space_, inventory_, vocab_,
                                         teacher_template(), cfg_.train.kd.temperature,
                                         hash_params(teacher_));
  if (!cfg_.out_dir.empty()) {
    knowledge_.soft_labels.save(cfg_.out_dir + "/soft_labels.bin");
    knowledge_.features.save(cfg_.out_dir + "/features.bin");
  }
  knowledge_done_ = true;
}

void Pipeline::set_temperature(double temperature) {
  check(temperature > 0.0, "temperature must be positive");
  if (cfg_.train.kd.temperature == temperature && knowledge_done_) return;
  cfg_.train.kd.temperature = temperature;
  knowledge_done_ = false;
}

RunRecord Pipeline::train_student_model(StudentKind kind) {
  setup();
  const bool needs_soft = kind == StudentKind::kResponse;
  const bool needs_feature = kind == StudentKind::kFeature;
  if (needs_soft || needs_feature) extract_knowledge();
  if (needs_soft)
    check(knowledge_.soft_labels.temperature == cfg_.train.kd.temperature,
          "soft label store temperature does not match the configured temperature");

  std::vector<TrainItem> items;
  for (const Instance* inst : corpus_.split_view(Split::kTrain)) {
    TrainItem item;
    item.prompt = kind == StudentKind::kInjection
                      ? build_teacher_prompt(*inst, teacher_template(), vocab_, inventory_)
                      : build_student_prompt(*inst, student_template(), vocab_);
    item.gold = gold_answer(*inst, space_);
    if (needs_soft) {
      auto it = knowledge_.soft_labels.labels.find(inst->id);
      check(it != knowledge_.soft_labels.labels.end(),
            "missing soft label for instance " + inst->id);
      item.soft = Mat<float>(1, static_cast<int>(it->second.size()));
      for (size_t i = 0; i < it->second.size(); ++i)
        item.soft.a[i] = static_cast<float>(it->second[i]);
    }
    if (needs_feature) {
      auto it = knowledge_.features.features.find(inst->id);
      check(it != knowledge_.features.features.end(),
            "missing feature vector for instance " + inst->id);
      item.feature = Mat<float>(1, static_cast<int>(it->second.size()));
      for (size_t i = 0; i < it->second.size(); ++i)
        item.feature.a[i] = static_cast<float>(it->second[i]);
    }
    items.push_back(std::move(item));
  }

  LossMode mode = LossMode::kHardOnly;
  uint64_t salt = 0xae;
  if (kind == StudentKind::kResponse) {
    mode = LossMode::kResponse;
    salt = 0x8e;
  } else if (kind == StudentKind::kFeature) {
    mode = LossMode::kFeature;
    salt = 0x9e;
  } else if (kind == StudentKind::kInjection) {
    salt = 0xbe;
  }
  TrainConfig tc = cfg_.train;
  tc.seed = mix_seed(cfg_.seed, salt);
  TrainOutcome out = train_model(
      base_, items, space_.token_ids(), mode, tc,
      [this](const EncoderParams<float>& p) { return evaluate_model(p, Split::kDev, false); },
      student_kind_name(kind));
  out.record.test = evaluate_model(out.params, Split::kTest, false);
  if (!cfg_.out_dir.empty())
    save_checkpoint(out.params, cfg_.out_dir + "/" + student_kind_name(kind) + ".ckpt");
  students_.insert_or_assign(student_kind_name(kind), std::move(out.params));
  return out.record;
}

const EncoderParams<float>& Pipeline::student_params(StudentKind kind) const {
  auto it = students_.find(student_kind_name(kind));
  check(it != students_.end(), "student not trained: " + student_kind_name(kind));
  return it->second;
}

Metrics Pipeline::fused_test_metrics(const EncoderParams<float>& response,
                                     const EncoderParams<float>& feature) const {
  const std::vector<PromptInstance> prompts = split_prompts(Split::kTest, false);
  const std::vector<int> gold = split_gold_tops(Split::kTest);
  const auto rows_r = batch_answer_logits(response, prompts, space_);
  const auto rows_f = batch_answer_logits(feature, prompts, space_);
  std::array<std::array<int, kNumTopRelations>, kNumTopRelations> confusion{};
  for (size_t i = 0; i < prompts.size(); ++i) {
    const FusedPrediction fp = fuse_predict(rows_r[i], rows_f[i], space_);
    ++confusion[static_cast<size_t>(gold[i])][static_cast<size_t>(fp.relation.predicted)];
  }
  return metrics_from_confusion(confusion);
}

PipelineResult run_pipeline(const Corpus& corpus, const SenseHierarchy& hierarchy,
                            const MappingTable& mapping, const PipelineConfig& cfg) {
  Pipeline p(corpus, hierarchy, mapping, cfg);
  PipelineResult result;
  result.teacher = p.train_teacher_model();
  p.extract_knowledge();
  result.response = p.train_student_model(StudentKind::kResponse);
  result.feature = p.train_student_model(StudentKind::kFeature);
  result.fused.variant = "fused";
  result.fused.seed = cfg.seed;
  result.fused.selected_lr = result.response.selected_lr;
  result.fused.temperature = cfg.train.kd.temperature;
  result.fused.alpha = cfg.train.kd.alpha;
  result.fused.beta = cfg.train.kd.beta;
  result.fused.selected_checkpoint = "fused(response,feature)";
  result.fused.test = p.fused_test_metrics(p.student_params(StudentKind::kResponse),
                                           p.student_params(StudentKind::kFeature));
  return result;
}

std::string AblationSpec::name() const {
  if (knowledge_injection) return "injection";
  std::string out;
  if (!continuous_template) out += "-CPT";
  if (!virtual_answers) out += "-VAS";
  if (!use_response_student) out += "-RD";
  if (!use_feature_student) out += "-FD";
  return out.empty() ? "full" : out;
}

AblationSpec AblationSpec::from_name(const std::string& name) {
  AblationSpec spec;
  if (name == "full" || name.empty()) return spec;
  if (name == "injection" || name == "INJ") {
    spec.knowledge_injection = true;
    return spec;
  }
  std::string rest = name;
  if (!rest.empty() && rest.front() == '-') rest.erase(0, 1);
  std::istringstream ss(rest);
  std::string tok;
  while (std::getline(ss, tok, '-')) {
    if (tok == "RD") spec.use_response_student = false;
    else if (tok == "FD") spec.use_feature_student = false;
    else if (tok == "CPT") spec.continuous_template = false;
    else if (tok == "VAS") spec.virtual_answers = false;
    else throw std::runtime_error("unknown ablation variant token: " + tok);
  }
  return spec;
}

RunRecord run_ablation(const AblationSpec& spec, const Corpus& corpus,
                       const SenseHierarchy& hierarchy, const MappingTable& mapping,
                       const PipelineConfig& cfg) {
  spec.validate();
  PipelineConfig acfg = cfg;
  if (!spec.continuous_template) acfg.tmpl.kind = TemplateKind::kDiscreteStudent;
  if (!spec.virtual_answers) acfg.granularity = AnswerGranularity::kSubstantive;
  Pipeline p(corpus, hierarchy, mapping, acfg);

  RunRecord record;
  if (spec.knowledge_injection) {
    record = p.train_student_model(StudentKind::kInjection);
  } else if (!spec.use_response_student && !spec.use_feature_student) {
    record = p.train_student_model(StudentKind::kPlain);
  } else if (spec.use_response_student && !spec.use_feature_student) {
    record = p.train_student_model(StudentKind::kResponse);
  } else if (!spec.use_response_student && spec.use_feature_student) {
    record = p.train_student_model(StudentKind::kFeature);
  } else {
    const RunRecord response = p.train_student_model(StudentKind::kResponse);
    const RunRecord feature = p.train_student_model(StudentKind::kFeature);
    record = response;
    record.epochs.insert(record.epochs.end(), feature.epochs.begin(), feature.epochs.end());
    record.selected_checkpoint = "fused(response,feature)";
    record.wall_clock_sec += feature.wall_clock_sec;
    record.test = p.fused_test_metrics(p.student_params(StudentKind::kResponse),
                                       p.student_params(StudentKind::kFeature));
  }
  record.variant = spec.name();
  record.seed = cfg.seed;
  return record;
}

std::vector<std::pair<double, RunRecord>> sweep_temperature(
    const std::vector<double>& values, const Corpus& corpus, const SenseHierarchy& hierarchy,
    const MappingTable& mapping, const PipelineConfig& cfg) {
  for (double v : values) check(v > 0.0, "temperatures must be positive");
  Pipeline p(corpus, hierarchy, mapping, cfg);
  p.train_teacher_model();
  std::vector<std::pair<double, RunRecord>> out;
  for (double temperature : values) {
    p.set_temperature(temperature);
    RunRecord rec = p.train_student_model(StudentKind::kResponse);
    out.emplace_back(temperature, std::move(rec));
  }
  return out;
}

std::vector<VerbalizerResult> compare_verbalizers(
    const std::vector<AnswerGranularity>& granularities, const Corpus& corpus,
    const SenseHierarchy& hierarchy, const MappingTable& mapping, const PipelineConfig& cfg) {
  std::vector<VerbalizerResult> out;
  for (AnswerGranularity g : granularities) {
    PipelineConfig gcfg = cfg;
    gcfg.granularity = g;
    Pipeline p(corpus, hierarchy, mapping, gcfg);
    p.extract_knowledge();
    const RunRecord response = p.train_student_model(StudentKind::kResponse);
    const RunRecord feature = p.train_student_model(StudentKind::kFeature);
    RunRecord fused = response;
    fused.variant = granularity_name(g) + "_fused";
    fused.selected_checkpoint = "fused(response,feature)";
    fused.test = p.fused_test_metrics(p.student_params(StudentKind::kResponse),
                                      p.student_params(StudentKind::kFeature));
    out.push_back({g, "fused", fused});
    out.push_back({g, "response", response});
    out.push_back({g, "feature", feature});
  }
  return out;
}

// ---------------------------------------------------------------------------
// serialization

std::string summary_csv_header() {
  return "variant,seed,lr,T,alpha,beta,acc,macro_f1,"
         "f1_comparison,f1_contingency,f1_expansion,f1_temporal\n";
}

std::string summary_csv_row(const RunRecord& r) {
  std::ostringstream out;
  out << r.variant << "," << r.seed << "," << format_g(r.selected_lr) << ","
      << format_g(r.temperature) << "," << format_g(r.alpha) << "," << format_g(r.beta)
      << "," << format_f6(r.test.accuracy) << "," << format_f6(r.test.macro_f1);
  for (int c = 0; c < kNumTopRelations; ++c) out << "," << format_f6(r.test.f1[c]);
  out << "\n";
  return out.str();
}

namespace {

nlohmann::ordered_json metrics_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["accuracy"] = m.accuracy;
  j["macro_f1"] = m.macro_f1;
  j["total"] = m.total;
  for (int c = 0; c < kNumTopRelations; ++c) {
    nlohmann::ordered_json cls;
    cls["precision"] = m.precision[c];
    cls["recall"] = m.recall[c];
    cls["f1"] = m.f1[c];
    j["classes"][kTopRelationNames[c]] = cls;
  }
  j["confusion"] = m.confusion;
  return j;
}

}  // namespace

std::string record_to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["variant"] = r.variant;
  j["seed"] = r.seed;
  j["selected_lr"] = r.selected_lr;
  j["temperature"] = r.temperature;
  j["alpha"] = r.alpha;
  j["beta"] = r.beta;
  j["selected_checkpoint"] = r.selected_checkpoint;
  nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
  for (const EpochRecord& e : r.epochs) {
    nlohmann::ordered_json je;
    je["lr"] = e.lr;
    je["epoch"] = e.epoch;
    je["dev_accuracy"] = e.dev.accuracy;
    je["dev_macro_f1"] = e.dev.macro_f1;
    epochs.push_back(je);
  }
  j["epochs"] = epochs;
  j["test"] = metrics_json(r.test);
  j["wall_clock_sec"] = r.wall_clock_sec;
  return j.dump(2);
}

uint64_t hash_params(const EncoderParams<float>& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_bytes = [&h](const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    mix_bytes(params.names[i].data(), params.names[i].size());
    mix_bytes(params.tensors[i].data(), params.tensors[i].size() * sizeof(float));
  }
  return h;
}

}  // namespace promptkd
