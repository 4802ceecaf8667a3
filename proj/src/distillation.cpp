#include "promptkd/distillation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace promptkd {

namespace {

void write_store(std::ofstream& out, const std::map<std::string, std::vector<double>>& m) {
  detail::write_pod<uint64_t>(out, m.size());
  for (const auto& [id, vec] : m) {
    detail::write_pod<uint32_t>(out, static_cast<uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    detail::write_pod<uint32_t>(out, static_cast<uint32_t>(vec.size()));
    out.write(reinterpret_cast<const char*>(vec.data()),
              static_cast<std::streamsize>(vec.size() * sizeof(double)));
  }
}

std::map<std::string, std::vector<double>> read_store(std::ifstream& in) {
  std::map<std::string, std::vector<double>> m;
  const uint64_t n = detail::read_pod<uint64_t>(in);
  for (uint64_t i = 0; i < n; ++i) {
    const uint32_t len = detail::read_pod<uint32_t>(in);
    std::string id(len, '\0');
    in.read(id.data(), len);
    const uint32_t dim = detail::read_pod<uint32_t>(in);
    std::vector<double> vec(dim);
    in.read(reinterpret_cast<char*>(vec.data()),
            static_cast<std::streamsize>(dim * sizeof(double)));
    check(static_cast<bool>(in), "truncated store file");
    m.emplace(std::move(id), std::move(vec));
  }
  return m;
}

}  // namespace

void SoftLabelStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot write soft label store: " + path);
  out.write("PKDSOFT1", 8);
  detail::write_pod<double>(out, temperature);
  detail::write_pod<uint64_t>(out, teacher_hash);
  write_store(out, labels);
}

SoftLabelStore SoftLabelStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open soft label store: " + path);
  char magic[8];
  in.read(magic, 8);
  check(in.good() && std::memcmp(magic, "PKDSOFT1", 8) == 0, "not a soft label store: " + path);
  SoftLabelStore s;
  s.temperature = detail::read_pod<double>(in);
  s.teacher_hash = detail::read_pod<uint64_t>(in);
  s.labels = read_store(in);
  return s;
}

void FeatureStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot write feature store: " + path);
  out.write("PKDFEAT1", 8);
  detail::write_pod<uint64_t>(out, teacher_hash);
  write_store(out, features);
}

FeatureStore FeatureStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open feature store: " + path);
  char magic[8];
  in.read(magic, 8);
  check(in.good() && std::memcmp(magic, "PKDFEAT1", 8) == 0, "not a feature store: " + path);
  FeatureStore s;
  s.teacher_hash = detail::read_pod<uint64_t>(in);
  s.features = read_store(in);
  return s;
}

std::vector<double> soften(const std::vector<double>& logits, double temperature) {
  check(temperature > 0.0, "temperature must be positive");
  check(!logits.empty(), "cannot soften an empty logit vector");
  for (double v : logits) check(std::isfinite(v), "non-finite logit");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / temperature);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

double shannon_entropy(const std::vector<double>& probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

double loss_hard(const std::vector<std::vector<double>>& answer_logit_batch,
                 const std::vector<int>& gold) {
  check(!answer_logit_batch.empty(), "empty batch");
  check(answer_logit_batch.size() == gold.size(), "batch/gold size mismatch");
  double total = 0.0;
  for (size_t k = 0; k < answer_logit_batch.size(); ++k) {
    const auto& a = answer_logit_batch[k];
    check(gold[k] >= 0 && gold[k] < static_cast<int>(a.size()), "gold index out of range");
    const double mx = *std::max_element(a.begin(), a.end());
    double z = 0.0;
    for (double v : a) z += std::exp(v - mx);
    total += mx + std::log(z) - a[static_cast<size_t>(gold[k])];
  }
  return total / static_cast<double>(answer_logit_batch.size());
}

double loss_soft(const std::vector<std::vector<double>>& answer_logit_batch,
                 const std::vector<std::vector<double>>& soft_targets, double temperature,
                 bool t_squared_scaling) {
  check(temperature > 0.0, "temperature must be positive");
  check(!answer_logit_batch.empty(), "empty batch");
  check(answer_logit_batch.size() == soft_targets.size(), "batch/target size mismatch");
  double total = 0.0;
  for (size_t k = 0; k < answer_logit_batch.size(); ++k) {
    const std::vector<double> p = soften(answer_logit_batch[k], temperature);
    const auto& t = soft_targets[k];
    check(t.size() == p.size(), "soft target length mismatch");
    for (size_t i = 0; i < p.size(); ++i)
      if (t[i] > 0.0) total += t[i] * (std::log(t[i]) - std::log(p[i]));
  }
  const double scale = t_squared_scaling ? temperature * temperature : 1.0;
  return scale * total / static_cast<double>(answer_logit_batch.size());
}

double response_loss(double hard, double soft, double alpha) {
  check(alpha > 0.0 && alpha < 1.0, "alpha must be in (0,1)");
  return alpha * hard + (1.0 - alpha) * soft;
}

double feature_loss(const std::vector<std::vector<double>>& student_hidden,
                    const std::vector<std::vector<double>>& teacher_features) {
  check(!student_hidden.empty(), "empty batch");
  check(student_hidden.size() == teacher_features.size(), "batch size mismatch");
  double total = 0.0;
  for (size_t k = 0; k < student_hidden.size(); ++k) {
    const auto& s = student_hidden[k];
    const auto& t = teacher_features[k];
    check(s.size() == t.size(), "feature dimension mismatch");
    double item = 0.0;
    for (size_t i = 0; i < s.size(); ++i) {
      const double d = s[i] - t[i];
      item += d * d;
    }
    total += item / static_cast<double>(s.size());
  }
  return total / static_cast<double>(student_hidden.size());
}

double feature_student_loss(double hard, double feat, double beta) {
  check(beta >= 0.0, "beta must be nonnegative");
  return hard + beta * feat;
}

FusedPrediction fuse_predict(const std::vector<double>& logits_rd,
                             const std::vector<double>& logits_fd, const AnswerSpace& space) {
  check(logits_rd.size() == logits_fd.size(), "fused logit length mismatch");
  check(static_cast<int>(logits_rd.size()) == space.n(), "logits do not match answer space");
  std::vector<double> mean(logits_rd.size());
  for (size_t i = 0; i < mean.size(); ++i) mean[i] = 0.5 * (logits_rd[i] + logits_fd[i]);
  FusedPrediction out;
  out.probs = soften(mean, 1.0);
  out.relation = aggregate_relation_scores(out.probs, space);
  return out;
}

}  // namespace promptkd
