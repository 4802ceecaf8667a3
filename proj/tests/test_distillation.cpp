#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "promptkd/distillation.hpp"
#include "promptkd/experiment.hpp"

using namespace promptkd;

namespace {

const std::string kDataDir = PROMPTKD_TEST_DATA_DIR;

std::vector<double> random_logits(Rng& rng, int n, double scale = 3.0) {
  std::vector<double> out(static_cast<size_t>(n));
  for (auto& v : out) v = rng.normal(0.0, scale);
  return out;
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

AnswerSpace paper_space(Vocabulary& vocab) {
  const SenseHierarchy h = SenseHierarchy::load(kDataDir + "/sense_hierarchy.tsv");
  const MappingTable m = MappingTable::load(kDataDir + "/mapping_table.tsv");
  return build_answer_space(h, m, AnswerGranularity::kPaper21, vocab);
}

}  // namespace

TEST_CASE("soften closed-form values") {
  CHECK(soften({0.0, 0.0}, 1.0)[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(soften({0.0, 0.0}, 17.0)[1] == doctest::Approx(0.5).epsilon(1e-12));
  const auto p = soften({1.0, 0.0}, 1.0);
  CHECK(std::abs(p[0] - 0.73106) < 1e-4);
  CHECK(std::abs(p[1] - 0.26894) < 1e-4);
  const auto flat = soften({1.0, 0.0}, 1000.0);
  CHECK(std::abs(flat[0] - 0.5) < 1e-3);
  CHECK(std::abs(flat[1] - 0.5) < 1e-3);
  CHECK_THROWS(soften({1.0, 0.0}, 0.0));
  CHECK_THROWS(soften({1.0, 0.0}, -2.0));
  CHECK_THROWS(soften({std::numeric_limits<double>::infinity(), 0.0}, 1.0));
  CHECK_THROWS(soften({}, 1.0));
  // extreme logits stay finite thanks to max subtraction
  const auto wide = soften({1000.0, -1000.0}, 1.0);
  CHECK(wide[0] == doctest::Approx(1.0));
  CHECK(std::isfinite(wide[1]));
}

TEST_CASE("soften preserves the argmax for every temperature") {
  Rng rng(404);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_logits(rng, 21);
    const int top = argmax(a);
    for (double t : {0.5, 1.0, 10.0, 20.0, 100.0}) CHECK(argmax(soften(a, t)) == top);
  }
}

TEST_CASE("entropy is nondecreasing in the temperature") {
  Rng rng(405);
  for (int i = 0; i < 300; ++i) {
    const auto a = random_logits(rng, 21);
    double prev = -1.0;
    for (double t : {1.0, 5.0, 10.0, 15.0, 20.0, 50.0}) {
      const double h = shannon_entropy(soften(a, t));
      CHECK(h >= prev - 1e-12);
      prev = h;
    }
  }
}

TEST_CASE("answer_logits gathers slot logits in answer order") {
  Vocabulary vocab;
  AnswerSpace space = paper_space(vocab);
  ForwardOutput<float> out;
  out.hidden = Mat<float>(3, 4);
  out.logits = Mat<float>(3, vocab.size());
  for (int c = 0; c < out.logits.cols; ++c) out.logits.at(1, c) = static_cast<float>(c);

  const std::vector<double> a = answer_logits(out, 1, space);
  REQUIRE(static_cast<int>(a.size()) == 21);
  for (int i = 0; i < 21; ++i)
    CHECK(a[static_cast<size_t>(i)] ==
          doctest::Approx(space.answers[static_cast<size_t>(i)].token_id));

  SUBCASE("reordering the space reorders the output") {
    AnswerSpace reversed = space;
    std::reverse(reversed.answers.begin(), reversed.answers.end());
    const std::vector<double> b = answer_logits(out, 1, reversed);
    for (int i = 0; i < 21; ++i) CHECK(b[static_cast<size_t>(i)] == a[static_cast<size_t>(20 - i)]);
  }
  SUBCASE("constant logits give constant answer scores") {
    for (int c = 0; c < out.logits.cols; ++c) out.logits.at(0, c) = 2.5f;
    for (double v : answer_logits(out, 0, space)) CHECK(v == doctest::Approx(2.5));
  }
  SUBCASE("slot position is validated") {
    CHECK_THROWS(answer_logits(out, 3, space));
  }
  SUBCASE("answer ids must fit the logits width") {
    ForwardOutput<float> narrow;
    narrow.logits = Mat<float>(1, 3);
    CHECK_THROWS_WITH_AS(answer_logits(narrow, 0, space),
                         doctest::Contains("outside vocabulary"), std::runtime_error);
  }
}

TEST_CASE("hard loss oracle values") {
  // probability one on gold -> zero loss
  std::vector<double> confident(21, -50.0);
  confident[4] = 50.0;
  CHECK(loss_hard({confident}, {4}) == doctest::Approx(0.0).epsilon(1e-9));
  // uniform logits over 21 answers -> ln 21
  const std::vector<double> uniform(21, 0.7);
  CHECK(std::abs(loss_hard({uniform}, {0}) - std::log(21.0)) < 1e-3);
  // two-item batch averages item losses
  CHECK(loss_hard({confident, uniform}, {4, 0}) ==
        doctest::Approx(std::log(21.0) / 2.0).epsilon(1e-6));
  CHECK_THROWS(loss_hard({uniform}, {21}));
  CHECK_THROWS(loss_hard({}, {}));
}

TEST_CASE("soft loss oracle values") {
  // prediction equal to target -> zero KL
  Rng rng(7);
  const auto logits = random_logits(rng, 21);
  const auto target = soften(logits, 10.0);
  CHECK(loss_soft({logits}, {target}, 10.0) == doctest::Approx(0.0).epsilon(1e-12));
  // KL([1,0] || [0.5,0.5]) = ln 2
  const std::vector<double> even = {2.0, 2.0};
  const std::vector<double> onehot = {1.0, 0.0};
  CHECK(std::abs(loss_soft({even}, {onehot}, 1.0) - std::log(2.0)) < 1e-4);
  // a zero target component contributes zero, not NaN
  CHECK(std::isfinite(loss_soft({{10.0, -10.0}}, {{1.0, 0.0}}, 1.0)));
  // optional T^2 rescaling
  CHECK(loss_soft({even}, {{0.5, 0.5}}, 10.0, true) == doctest::Approx(0.0));
  CHECK(loss_soft({even}, {onehot}, 10.0, true) ==
        doctest::Approx(100.0 * loss_soft({even}, {onehot}, 10.0, false)).epsilon(1e-9));
  CHECK_THROWS(loss_soft({even}, {onehot}, 0.0));
}

TEST_CASE("soft loss is nonnegative and zero only at equality") {
  Rng rng(406);
  for (int i = 0; i < 200; ++i) {
    const auto logits = random_logits(rng, 8);
    const auto target = soften(random_logits(rng, 8), 5.0);
    const double kl = loss_soft({logits}, {target}, 5.0);
    CHECK(kl >= -1e-12);
  }
}

TEST_CASE("one-hot soft labels at T=1 reduce the soft loss to the hard loss") {
  Rng rng(407);
  for (int i = 0; i < 100; ++i) {
    const auto logits = random_logits(rng, 21);
    const int gold = static_cast<int>(rng.below(21));
    std::vector<double> onehot(21, 0.0);
    onehot[static_cast<size_t>(gold)] = 1.0;
    const double hard = loss_hard({logits}, {gold});
    const double soft = loss_soft({logits}, {onehot}, 1.0);
    CHECK(soft == doctest::Approx(hard).epsilon(1e-9));
    // hence the response composite equals the hard loss for any alpha
    for (double alpha : {0.3, 0.5, 0.7})
      CHECK(response_loss(hard, soft, alpha) == doctest::Approx(hard).epsilon(1e-9));
  }
}

TEST_CASE("composite losses are exact affine combinations") {
  CHECK(response_loss(2.0, 1.0, 0.5) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(response_loss(1.0, 0.0, 0.3) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(response_loss(1.7, 1.7, 0.42) == doctest::Approx(1.7).epsilon(1e-15));
  CHECK_THROWS(response_loss(1.0, 1.0, 0.0));
  CHECK_THROWS(response_loss(1.0, 1.0, 1.0));
  CHECK(feature_student_loss(1.0, 2.0, 0.0) == doctest::Approx(1.0));
  CHECK(feature_student_loss(1.0, 2.0, 5e-4) == doctest::Approx(1.001).epsilon(1e-12));
  CHECK(feature_student_loss(0.0, 0.0, 3.0) == doctest::Approx(0.0));
  CHECK_THROWS(feature_student_loss(1.0, 1.0, -0.1));
  // verified linearity over random components
  Rng rng(408);
  for (int i = 0; i < 50; ++i) {
    const double h = rng.uniform() * 4;
    const double s = rng.uniform() * 4;
    const double a = 0.01 + 0.98 * rng.uniform();
    CHECK(response_loss(h, s, a) == doctest::Approx(a * h + (1 - a) * s).epsilon(1e-12));
    const double b = rng.uniform() * 2;
    CHECK(feature_student_loss(h, s, b) == doctest::Approx(h + b * s).epsilon(1e-12));
  }
}

TEST_CASE("feature loss oracle values") {
  CHECK(feature_loss({{1.0, 2.0}}, {{1.0, 2.0}}) == doctest::Approx(0.0));
  CHECK(feature_loss({{0.0, 0.0}}, {{2.0, 0.0}}) == doctest::Approx(2.0).epsilon(1e-15));
  // batch of per-item MSEs 2 and 0 averages to 1
  CHECK(feature_loss({{0.0, 0.0}, {1.0, 1.0}}, {{2.0, 0.0}, {1.0, 1.0}}) ==
        doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS(feature_loss({{1.0}}, {{1.0, 2.0}}));
}

TEST_CASE("fusion averages logits then softmaxes") {
  Vocabulary vocab;
  const AnswerSpace space = paper_space(vocab);
  Rng rng(409);
  const auto a = random_logits(rng, 21);

  SUBCASE("identical inputs reduce to the softmax of either") {
    const FusedPrediction fp = fuse_predict(a, a, space);
    const auto expected = soften(a, 1.0);
    for (int i = 0; i < 21; ++i)
      CHECK(fp.probs[static_cast<size_t>(i)] ==
            doctest::Approx(expected[static_cast<size_t>(i)]).epsilon(1e-12));
  }
  SUBCASE("symmetric disagreement gives equal top probabilities") {
    std::vector<double> x(21, 0.0), y(21, 0.0);
    x[0] = 2.0;
    y[1] = 2.0;
    const FusedPrediction fp = fuse_predict(x, y, space);
    CHECK(fp.probs[0] == doctest::Approx(fp.probs[1]).epsilon(1e-12));
    CHECK(fp.probs[0] > fp.probs[2]);
  }
  SUBCASE("adding a constant to both inputs changes nothing") {
    const auto b = random_logits(rng, 21);
    const FusedPrediction base = fuse_predict(a, b, space);
    std::vector<double> ac = a, bc = b;
    for (auto& v : ac) v += 7.25;
    for (auto& v : bc) v += 7.25;
    const FusedPrediction shifted = fuse_predict(ac, bc, space);
    for (int i = 0; i < 21; ++i)
      CHECK(shifted.probs[static_cast<size_t>(i)] ==
            doctest::Approx(base.probs[static_cast<size_t>(i)]).epsilon(1e-9));
    CHECK(shifted.relation.predicted == base.relation.predicted);
  }
  SUBCASE("length mismatch is rejected") {
    CHECK_THROWS(fuse_predict(std::vector<double>(20, 0.0), a, space));
  }
}

TEST_CASE("tape losses agree with the reference loss functions") {
  // dual route: the autograd ops used in training must reproduce the plain
  // double-precision loss implementations
  Rng rng(410);
  std::vector<Mat<double>> params = {Mat<double>::randn(2, 9, rng, 2.0)};
  std::vector<Mat<double>> grads = {Mat<double>(2, 9)};
  std::vector<std::vector<double>> rows = {
      std::vector<double>(params[0].row(0), params[0].row(0) + 9),
      std::vector<double>(params[0].row(1), params[0].row(1) + 9)};

  Tape<double> tape(&params, &grads);
  const int z = tape.embed_rows(0, {0, 1});
  CHECK(tape.val(tape.cross_entropy(z, {3, 7})).a[0] ==
        doctest::Approx(loss_hard(rows, {3, 7})).epsilon(1e-12));

  Mat<double> target(2, 9);
  std::vector<std::vector<double>> target_rows;
  for (int r = 0; r < 2; ++r) {
    const auto t = soften(random_logits(rng, 9), 4.0);
    target_rows.push_back(t);
    for (int c = 0; c < 9; ++c) target.at(r, c) = t[static_cast<size_t>(c)];
  }
  CHECK(tape.val(tape.kl_to_target(z, target, 4.0, false)).a[0] ==
        doctest::Approx(loss_soft(rows, target_rows, 4.0)).epsilon(1e-12));

  Mat<double> feat_target(1, 9);
  for (int c = 0; c < 9; ++c) feat_target.at(0, c) = rng.normal(0.0, 1.0);
  const int row0 = tape.select_rows(z, {0});
  CHECK(tape.val(tape.mse_to_target(row0, feat_target)).a[0] ==
        doctest::Approx(feature_loss(
                            {rows[0]},
                            {std::vector<double>(feat_target.row(0), feat_target.row(0) + 9)}))
            .epsilon(1e-12));
}

TEST_CASE("teacher knowledge extraction is deterministic and normalized") {
  const SenseHierarchy h = SenseHierarchy::load(kDataDir + "/sense_hierarchy.tsv");
  const MappingTable m = MappingTable::load(kDataDir + "/mapping_table.tsv");
  SyntheticSpec spec;
  spec.seed = 51;
  spec.n_train = 24;
  spec.n_dev = 4;
  spec.n_test = 4;
  spec.arg_len_min = 3;
  spec.arg_len_max = 6;
  Corpus corpus = generate_synthetic(spec, h);
  Vocabulary vocab = build_vocabulary(corpus, 1);
  EncoderConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_len = 40;
  cfg.vocab_size = vocab.size();
  auto params = init_params<float>(cfg, 3);
  add_virtual_template_tokens(vocab, 6, params, 4);
  const ConnectiveInventory inv = register_integrated_connectives(corpus, vocab, params);
  AnswerSpace space = build_answer_space(h, m, AnswerGranularity::kPaper21, vocab);
  Rng grow_rng(5);
  params.grow_vocab(vocab.size(), grow_rng);
  init_virtual_answers(space, corpus, inv, params);

  TemplateSpec tmpl;
  tmpl.kind = TemplateKind::kContinuousTeacher;
  tmpl.total_len = 24;

  const TeacherKnowledge k1 =
      extract_teacher_knowledge(params, corpus, space, inv, vocab, tmpl, 10.0, 777);
  CHECK(k1.soft_labels.labels.size() == 24);
  CHECK(k1.features.features.size() == 24);
  CHECK(k1.soft_labels.temperature == 10.0);
  CHECK(k1.soft_labels.teacher_hash == 777);
  for (const auto& [id, probs] : k1.soft_labels.labels) {
    double sum = 0.0;
    for (double p : probs) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
    CHECK(probs.size() == 21);
  }
  for (const auto& [id, feat] : k1.features.features) {
    CHECK(feat.size() == 16);
    for (double v : feat) CHECK(std::isfinite(v));
  }

  const TeacherKnowledge k2 =
      extract_teacher_knowledge(params, corpus, space, inv, vocab, tmpl, 10.0, 777);
  CHECK(k1.soft_labels.labels == k2.soft_labels.labels);
  CHECK(k1.features.features == k2.features.features);

  SUBCASE("stores round trip through their files") {
    const auto dir = std::filesystem::temp_directory_path();
    const std::string soft_path = (dir / "pkd_soft.bin").string();
    const std::string feat_path = (dir / "pkd_feat.bin").string();
    k1.soft_labels.save(soft_path);
    k1.features.save(feat_path);
    const SoftLabelStore soft = SoftLabelStore::load(soft_path);
    const FeatureStore feat = FeatureStore::load(feat_path);
    CHECK(soft.temperature == k1.soft_labels.temperature);
    CHECK(soft.teacher_hash == 777);
    CHECK(soft.labels == k1.soft_labels.labels);
    CHECK(feat.features == k1.features.features);
    CHECK_THROWS(SoftLabelStore::load(feat_path));  // wrong magic
  }
}
