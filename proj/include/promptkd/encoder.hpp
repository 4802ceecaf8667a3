#pragma once

#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "promptkd/mat.hpp"
#include "promptkd/rng.hpp"
#include "promptkd/tape.hpp"

namespace promptkd {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStddev = 0.02;

struct EncoderConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_len = 100;
  int vocab_size = 0;
  double dropout_rate = 0.1;
  bool tie_output = true;

  void validate() const {
    check(d_model > 0 && n_layers > 0 && n_heads > 0 && d_ff > 0, "bad encoder dims");
    check(d_model % n_heads == 0, "d_model must be divisible by n_heads");
    check(max_len > 0 && vocab_size > 0, "bad max_len/vocab_size");
    check(dropout_rate >= 0.0 && dropout_rate < 1.0, "bad dropout_rate");
  }
};

// Configurations of the reference pretrained masked language models; usable
// as EncoderConfig shapes, never loaded with pretrained weights here.
struct PlmReference {
  std::string name;
  int vocab_size;
  int n_layers;
  int d_model;
};
inline std::vector<PlmReference> reference_plm_configs() {
  return {{"bert-base-uncased", 30522, 12, 768},
          {"roberta-base", 50265, 12, 768},
          {"deberta-base", 50265, 12, 768}};
}

// All trainable tensors, stored in a flat registry so optimizers and
// gradient buffers can mirror them index-by-index.
template <typename T>
struct EncoderParams {
  EncoderConfig config;
  std::vector<Mat<T>> tensors;
  std::vector<std::string> names;

  struct LayerRefs {
    int wq, bq, wk, bk, wv, bv, wo, bo;
    int ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
  };
  int emb = -1;
  int pos = -1;
  std::vector<LayerRefs> layers;
  int lnf_g = -1, lnf_b = -1;
  int head_w = -1, head_b = -1, head_ln_g = -1, head_ln_b = -1;
  int out_bias = -1;
  int out_w = -1;  // only when tie_output is off

  int output_matrix() const { return config.tie_output ? emb : out_w; }

  Mat<T>& tensor(int idx) { return tensors[static_cast<size_t>(idx)]; }
  const Mat<T>& tensor(int idx) const { return tensors[static_cast<size_t>(idx)]; }

  std::vector<Mat<T>> make_grad_buffer() const {
    std::vector<Mat<T>> g;
    g.reserve(tensors.size());
    for (const Mat<T>& t : tensors) g.emplace_back(t.rows, t.cols);
    return g;
  }

  size_t num_scalars() const {
    size_t n = 0;
    for (const Mat<T>& t : tensors) n += t.size();
    return n;
  }

  // Extends the vocabulary-sized tensors for newly added tokens. New
  // embedding rows are Gaussian(0, 0.02); new output biases are zero.
  void grow_vocab(int new_vocab_size, Rng& rng) {
    check(new_vocab_size >= config.vocab_size, "vocabulary cannot shrink");
    const int old = config.vocab_size;
    auto grow_rows = [&](int idx, bool gaussian) {
      Mat<T>& m = tensor(idx);
      Mat<T> next(new_vocab_size, m.cols);
      std::copy(m.a.begin(), m.a.end(), next.a.begin());
      if (gaussian)
        for (int r = old; r < new_vocab_size; ++r)
          for (int c = 0; c < next.cols; ++c)
            next.at(r, c) = static_cast<T>(rng.normal(0.0, kInitStddev));
      m = std::move(next);
    };
    grow_rows(emb, true);
    if (out_w >= 0) grow_rows(out_w, true);
    Mat<T>& b = tensor(out_bias);
    Mat<T> nb(1, new_vocab_size);
    std::copy(b.a.begin(), b.a.end(), nb.a.begin());
    tensor(out_bias) = std::move(nb);
    config.vocab_size = new_vocab_size;
  }
};

template <typename T>
struct ForwardOutput {
  Mat<T> hidden;  // L x d, final encoder layer output
  Mat<T> logits;  // L x vocab_size
};

template <typename T>
EncoderParams<T> init_params(const EncoderConfig& config, uint64_t seed) {
  config.validate();
  EncoderParams<T> p;
  p.config = config;
  Rng rng(seed);
  auto randn = [&](const std::string& name, int r, int c) {
    p.names.push_back(name);
    p.tensors.push_back(Mat<T>::randn(r, c, rng, static_cast<T>(kInitStddev)));
    return static_cast<int>(p.tensors.size()) - 1;
  };
  auto fill = [&](const std::string& name, int r, int c, T v) {
    p.names.push_back(name);
    p.tensors.push_back(Mat<T>::constant(r, c, v));
    return static_cast<int>(p.tensors.size()) - 1;
  };
  const int d = config.d_model;
  p.emb = randn("emb", config.vocab_size, d);
  p.pos = randn("pos", config.max_len, d);
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    typename EncoderParams<T>::LayerRefs lr;
    lr.wq = randn(pre + "wq", d, d);
    lr.bq = fill(pre + "bq", 1, d, T(0));
    lr.wk = randn(pre + "wk", d, d);
    lr.bk = fill(pre + "bk", 1, d, T(0));
    lr.wv = randn(pre + "wv", d, d);
    lr.bv = fill(pre + "bv", 1, d, T(0));
    lr.wo = randn(pre + "wo", d, d);
    lr.bo = fill(pre + "bo", 1, d, T(0));
    lr.ln1_g = fill(pre + "ln1_g", 1, d, T(1));
    lr.ln1_b = fill(pre + "ln1_b", 1, d, T(0));
    lr.w1 = randn(pre + "w1", d, config.d_ff);
    lr.b1 = fill(pre + "b1", 1, config.d_ff, T(0));
    lr.w2 = randn(pre + "w2", config.d_ff, d);
    lr.b2 = fill(pre + "b2", 1, d, T(0));
    lr.ln2_g = fill(pre + "ln2_g", 1, d, T(1));
    lr.ln2_b = fill(pre + "ln2_b", 1, d, T(0));
    p.layers.push_back(lr);
  }
  p.lnf_g = fill("lnf_g", 1, d, T(1));
  p.lnf_b = fill("lnf_b", 1, d, T(0));
  p.head_w = randn("head_w", d, d);
  p.head_b = fill("head_b", 1, d, T(0));
  p.head_ln_g = fill("head_ln_g", 1, d, T(1));
  p.head_ln_b = fill("head_ln_b", 1, d, T(0));
  p.out_bias = fill("out_bias", 1, config.vocab_size, T(0));
  if (!config.tie_output) p.out_w = randn("out_w", config.vocab_size, d);
  return p;
}

template <typename T>
std::vector<T> get_token_embedding(const EncoderParams<T>& params, int id) {
  const Mat<T>& E = params.tensor(params.emb);
  check(id >= 0 && id < E.rows, "token id out of range: " + std::to_string(id));
  return std::vector<T>(E.row(id), E.row(id) + E.cols);
}

template <typename T>
void set_token_embedding(EncoderParams<T>& params, int id, const std::vector<T>& v) {
  Mat<T>& E = params.tensor(params.emb);
  check(id >= 0 && id < E.rows, "token id out of range: " + std::to_string(id));
  check(static_cast<int>(v.size()) == E.cols, "embedding length mismatch");
  std::copy(v.begin(), v.end(), E.row(id));
}

// Builds the pre-layer-norm transformer body on a tape; returns the node id
// of the final hidden states (L x d).
template <typename T>
int encoder_body(Tape<T>& tape, const EncoderParams<T>& p, const std::vector<int>& ids,
                 const std::vector<uint8_t>& attn_mask, bool train_mode,
                 uint64_t dropout_seed) {
  const EncoderConfig& cfg = p.config;
  check(ids.size() == attn_mask.size(), "ids/attn_mask length mismatch");
  check(static_cast<int>(ids.size()) <= cfg.max_len, "sequence length overflow");
  const T eps = static_cast<T>(kLayerNormEps);
  const T rate = static_cast<T>(cfg.dropout_rate);
  std::vector<int> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);

  int x = tape.add(tape.embed_rows(p.emb, ids), tape.embed_rows(p.pos, positions));
  x = tape.dropout(x, rate, mix_seed(dropout_seed, 0xe0, 0), train_mode);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& lr = p.layers[static_cast<size_t>(l)];
    int a = tape.layer_norm(x, lr.ln1_g, lr.ln1_b, eps);
    int att = tape.attention(tape.linear(a, lr.wq, lr.bq), tape.linear(a, lr.wk, lr.bk),
                             tape.linear(a, lr.wv, lr.bv), attn_mask, cfg.n_heads);
    int o = tape.dropout(tape.linear(att, lr.wo, lr.bo), rate,
                         mix_seed(dropout_seed, 0xa1, static_cast<uint64_t>(l)), train_mode);
    x = tape.add(x, o);
    int f = tape.layer_norm(x, lr.ln2_g, lr.ln2_b, eps);
    int f2 = tape.linear(tape.gelu(tape.linear(f, lr.w1, lr.b1)), lr.w2, lr.b2);
    f2 = tape.dropout(f2, rate, mix_seed(dropout_seed, 0xf2, static_cast<uint64_t>(l)),
                      train_mode);
    x = tape.add(x, f2);
  }
  return tape.layer_norm(x, p.lnf_g, p.lnf_b, eps);
}

// Masked-token prediction head (dense -> GELU -> layer norm -> vocabulary
// projection) applied to selected positions of the hidden states.
template <typename T>
int mlm_logits(Tape<T>& tape, const EncoderParams<T>& p, int hidden,
               const std::vector<int>& positions) {
  int h = tape.select_rows(hidden, positions);
  int t = tape.layer_norm(tape.gelu(tape.linear(h, p.head_w, p.head_b)), p.head_ln_g,
                          p.head_ln_b, static_cast<T>(kLayerNormEps));
  return tape.proj_nt(t, p.output_matrix(), p.out_bias);
}

template <typename T>
ForwardOutput<T> forward(const EncoderParams<T>& params, const std::vector<int>& ids,
                         const std::vector<uint8_t>& attn_mask, bool train_mode,
                         uint64_t dropout_seed = 0) {
  std::vector<Mat<T>> scratch_grads = params.make_grad_buffer();
  Tape<T> tape(&params.tensors, &scratch_grads);
  int hidden = encoder_body(tape, params, ids, attn_mask, train_mode, dropout_seed);
  std::vector<int> all_positions(ids.size());
  std::iota(all_positions.begin(), all_positions.end(), 0);
  int logits = mlm_logits(tape, params, hidden, all_positions);
  ForwardOutput<T> out;
  out.hidden = tape.val(hidden);
  out.logits = tape.val(logits);
  return out;
}

enum class LossKind { kHard, kSoft, kFeature };

// Compares analytic gradients of a composite loss against central finite
// differences on a tiny double-precision encoder; returns the max relative
// error over all parameters.
double grad_check(const EncoderConfig& config, LossKind loss_kind, uint64_t seed);

// ---- checkpoint io (exact byte round trip) ----

namespace detail {
template <typename V>
void write_pod(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <typename V>
V read_pod(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  check(static_cast<bool>(in), "truncated checkpoint");
  return v;
}
}  // namespace detail

template <typename T>
void save_checkpoint(const EncoderParams<T>& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot write checkpoint: " + path);
  out.write("PKDCKPT1", 8);
  detail::write_pod<uint8_t>(out, sizeof(T));
  detail::write_pod<int32_t>(out, p.config.d_model);
  detail::write_pod<int32_t>(out, p.config.n_layers);
  detail::write_pod<int32_t>(out, p.config.n_heads);
  detail::write_pod<int32_t>(out, p.config.d_ff);
  detail::write_pod<int32_t>(out, p.config.max_len);
  detail::write_pod<int32_t>(out, p.config.vocab_size);
  detail::write_pod<double>(out, p.config.dropout_rate);
  detail::write_pod<uint8_t>(out, p.config.tie_output ? 1 : 0);
  detail::write_pod<uint32_t>(out, static_cast<uint32_t>(p.tensors.size()));
  for (size_t i = 0; i < p.tensors.size(); ++i) {
    const std::string& name = p.names[i];
    detail::write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<int32_t>(out, p.tensors[i].rows);
    detail::write_pod<int32_t>(out, p.tensors[i].cols);
    out.write(reinterpret_cast<const char*>(p.tensors[i].data()),
              static_cast<std::streamsize>(p.tensors[i].size() * sizeof(T)));
  }
  check(out.good(), "checkpoint write failed: " + path);
}

template <typename T>
EncoderParams<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  check(in.good() && std::memcmp(magic, "PKDCKPT1", 8) == 0,
        "not a checkpoint file: " + path);
  check(detail::read_pod<uint8_t>(in) == sizeof(T), "checkpoint precision mismatch");
  EncoderConfig cfg;
  cfg.d_model = detail::read_pod<int32_t>(in);
  cfg.n_layers = detail::read_pod<int32_t>(in);
  cfg.n_heads = detail::read_pod<int32_t>(in);
  cfg.d_ff = detail::read_pod<int32_t>(in);
  cfg.max_len = detail::read_pod<int32_t>(in);
  cfg.vocab_size = detail::read_pod<int32_t>(in);
  cfg.dropout_rate = detail::read_pod<double>(in);
  cfg.tie_output = detail::read_pod<uint8_t>(in) != 0;
  EncoderParams<T> p = init_params<T>(cfg, 0);
  const uint32_t n = detail::read_pod<uint32_t>(in);
  check(n == p.tensors.size(), "checkpoint tensor count mismatch");
  for (size_t i = 0; i < p.tensors.size(); ++i) {
    const uint32_t len = detail::read_pod<uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    check(name == p.names[i], "checkpoint tensor order mismatch at " + name);
    const int32_t rows = detail::read_pod<int32_t>(in);
    const int32_t cols = detail::read_pod<int32_t>(in);
    check(rows == p.tensors[i].rows && cols == p.tensors[i].cols,
          "checkpoint tensor shape mismatch at " + name);
    in.read(reinterpret_cast<char*>(p.tensors[i].data()),
            static_cast<std::streamsize>(p.tensors[i].size() * sizeof(T)));
    check(static_cast<bool>(in), "truncated checkpoint: " + path);
  }
  return p;
}

}  // namespace promptkd
