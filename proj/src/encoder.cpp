#include "promptkd/encoder.hpp"

#include <cmath>

namespace promptkd {

namespace {

struct CheckInstance {
  std::vector<int> ids;
  std::vector<uint8_t> mask;
  int slot_pos;
  int gold;                    // index into answer_ids
  std::vector<double> soft;    // simplex over answers
  std::vector<double> feature; // d-vector target
};

// Builds the composite loss for one instance and returns the loss node.
int build_loss(Tape<double>& tape, const EncoderParams<double>& params,
               const CheckInstance& inst, const std::vector<int>& answer_ids,
               LossKind kind) {
  int hidden = encoder_body(tape, params, inst.ids, inst.mask, /*train_mode=*/false, 0);
  int logits = mlm_logits(tape, params, hidden, {inst.slot_pos});
  int ans = tape.select_cols(logits, answer_ids);
  int hard = tape.cross_entropy(ans, {inst.gold});
  switch (kind) {
    case LossKind::kHard:
      return hard;
    case LossKind::kSoft: {
      Mat<double> target(1, static_cast<int>(inst.soft.size()));
      std::copy(inst.soft.begin(), inst.soft.end(), target.a.begin());
      int soft = tape.kl_to_target(ans, std::move(target), 10.0, false);
      return tape.affine2(hard, 0.5, soft, 0.5);
    }
    case LossKind::kFeature: {
      int slot_h = tape.select_rows(hidden, {inst.slot_pos});
      Mat<double> target(1, static_cast<int>(inst.feature.size()));
      std::copy(inst.feature.begin(), inst.feature.end(), target.a.begin());
      int feat = tape.mse_to_target(slot_h, std::move(target));
      return tape.affine2(hard, 1.0, feat, 1.0);
    }
  }
  throw std::runtime_error("bad loss kind");
}

}  // namespace

double grad_check(const EncoderConfig& config, LossKind loss_kind, uint64_t seed) {
  EncoderConfig cfg = config;
  cfg.dropout_rate = 0.0;
  cfg.validate();
  check(cfg.vocab_size <= 64 && cfg.d_model <= 32, "grad_check expects a tiny config");

  EncoderParams<double> params = init_params<double>(cfg, seed);
  Rng rng(mix_seed(seed, 0xc8ec));

  const int n_answers = 5;
  std::vector<int> answer_ids;
  for (int i = 0; i < n_answers; ++i)
    answer_ids.push_back(cfg.vocab_size - n_answers + i);

  const int batch = 3;
  const int seq_len = std::min(cfg.max_len, 10);
  std::vector<CheckInstance> instances;
  for (int b = 0; b < batch; ++b) {
    CheckInstance inst;
    inst.ids.resize(static_cast<size_t>(seq_len));
    inst.mask.assign(static_cast<size_t>(seq_len), 1);
    inst.mask.back() = 0;  // one padded position
    for (auto& id : inst.ids)
      id = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.vocab_size)));
    inst.slot_pos = rng.range_int(1, seq_len - 3);
    inst.gold = static_cast<int>(rng.below(n_answers));
    double sum = 0.0;
    for (int i = 0; i < n_answers; ++i) {
      inst.soft.push_back(rng.uniform() + 1e-3);
      sum += inst.soft.back();
    }
    for (auto& v : inst.soft) v /= sum;
    for (int i = 0; i < cfg.d_model; ++i) inst.feature.push_back(rng.normal(0.0, 0.5));
    instances.push_back(std::move(inst));
  }

  auto batch_loss = [&](const EncoderParams<double>& p) {
    std::vector<Mat<double>> scratch = p.make_grad_buffer();
    double total = 0.0;
    for (const CheckInstance& inst : instances) {
      Tape<double> tape(&p.tensors, &scratch);
      int loss = build_loss(tape, p, inst, answer_ids, loss_kind);
      const double v = tape.val(loss).a[0];
      check(std::isfinite(v), "non-finite loss in grad_check");
      total += v;
    }
    return total / batch;
  };

  // analytic gradients
  std::vector<Mat<double>> grads = params.make_grad_buffer();
  for (const CheckInstance& inst : instances) {
    Tape<double> tape(&params.tensors, &grads);
    int loss = build_loss(tape, params, inst, answer_ids, loss_kind);
    tape.backward(loss, 1.0 / batch);
  }

  // central finite differences, step 1e-5
  const double h = 1e-5;
  double max_rel = 0.0;
  for (size_t t = 0; t < params.tensors.size(); ++t) {
    Mat<double>& m = params.tensors[t];
    for (size_t i = 0; i < m.size(); ++i) {
      const double orig = m.a[i];
      m.a[i] = orig + h;
      const double up = batch_loss(params);
      m.a[i] = orig - h;
      const double down = batch_loss(params);
      m.a[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double rel =
          std::abs(grads[t].a[i] - numeric) / std::max(std::abs(numeric), 1e-8);
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace promptkd
