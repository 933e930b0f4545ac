#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "p2g/pipeline.hpp"

using namespace p2g;

namespace {

Mat random_mat(int r, int c, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

struct Rig {
  Vocabulary vocab;
  ParamSet params;
  Backbone backbone;
  Verbalizer verbalizer;
  Rig(int d, int l, uint64_t seed, int extra_tokens = 7)
      : vocab(Vocabulary::build([&] {
          std::vector<std::string> t;
          for (int i = 0; i < extra_tokens; ++i) t.push_back("w" + std::to_string(i));
          return t;
        }())),
        backbone(
            [&] {
              BackboneConfig bc;
              bc.hidden_size = d;
              bc.layer_count = 1;
              bc.head_count = 2;
              bc.feed_forward_size = 2 * d;
              bc.max_sequence_length = 16;
              return bc;
            }(),
            vocab.size(), params),
        verbalizer(d, l, params) {
    params.initialize(seed);
  }
};

// Independent oracle for Eq. 5-6 style aggregation, kept apart from the
// implementation route on purpose.
LabelGaussian aggregate_oracle(const std::vector<LabelGaussian>& gs, double lambda,
                               double variance_floor) {
  const Eigen::Index v = gs[0].mean.size();
  LabelGaussian out{Vec::Zero(v), Vec::Zero(v)};
  for (const LabelGaussian& g : gs) {
    for (Eigen::Index c = 0; c < v; ++c) {
      double sigma = std::sqrt(std::max(g.variance[c], variance_floor));
      double kappa = std::exp(-lambda * sigma);
      out.mean[c] += kappa * g.mean[c];
      out.variance[c] += kappa * kappa * g.variance[c];
    }
  }
  return out;
}

}  // namespace

TEST_CASE("estimate_label_gaussian: zero token maps to zero mean and unit variance") {
  Rig rig(8, 3, 11);
  // b_mu, b_sigma, and the MLM-head bias are zero-initialized; v = 0 kills
  // the matmul terms, ReLU(0) = 0, and head(0) = bias = 0, so mean = 0 and
  // variance = exp(0) = 1.
  LabelGaussian g = rig.verbalizer.estimate(rig.params, Vec::Zero(8), rig.backbone);
  CHECK(g.mean.size() == rig.vocab.size());
  CHECK(g.variance.size() == rig.vocab.size());
  CHECK(g.mean.norm() == 0.0);
  CHECK((g.variance - Vec::Ones(rig.vocab.size())).norm() == 0.0);
}

TEST_CASE("estimate_label_gaussian: positive variance and |V| widths for random tokens") {
  Rig rig(8, 3, 13);
  for (uint64_t s = 0; s < 4; ++s) {
    LabelGaussian g =
        rig.verbalizer.estimate(rig.params, random_mat(8, 1, 300 + s, 2.0).col(0), rig.backbone);
    CHECK(g.mean.size() == rig.vocab.size());
    CHECK(g.variance.minCoeff() > 0.0);
  }
}

TEST_CASE("aggregate reproduces the hand-derived kappa=0.5 case") {
  // Component with (mu=1, sigma=0) and (mu=1, sigma=0.6931): kappa_2 =
  // exp(-0.6931) = 0.5, mu_hat = 1 + 0.5 = 1.5, var_hat = 0.25 * 0.6931^2.
  const double sigma2 = 0.6931;
  std::vector<LabelGaussian> gs(2);
  gs[0] = {Vec::Constant(1, 1.0), Vec::Constant(1, 0.0)};
  gs[1] = {Vec::Constant(1, 1.0), Vec::Constant(1, sigma2 * sigma2)};
  LabelGaussian out = Verbalizer::aggregate(gs, 1.0, 0.0);
  const double kappa2 = std::exp(-sigma2);
  CHECK(std::abs(out.mean[0] - (1.0 + kappa2 * 1.0)) < 1e-9);
  CHECK(std::abs(out.variance[0] - kappa2 * kappa2 * sigma2 * sigma2) < 1e-9);
  CHECK(out.mean[0] == doctest::Approx(1.5).epsilon(1e-4));
  CHECK(out.variance[0] == doctest::Approx(0.1201).epsilon(2e-3));
}

TEST_CASE("aggregate matches the independent oracle on random inputs") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    int l = 1 + rng.uniform_int(5);
    int v = 2 + rng.uniform_int(49);
    double lambda = 0.1 + rng.uniform() * 2.0;
    std::vector<LabelGaussian> gs(l);
    for (int i = 0; i < l; ++i) {
      gs[i].mean = random_mat(v, 1, mix_key({1u, (uint64_t)trial, (uint64_t)i}), 2.0).col(0);
      gs[i].variance = random_mat(v, 1, mix_key({2u, (uint64_t)trial, (uint64_t)i}), 1.0)
                           .col(0)
                           .array()
                           .abs()
                           .matrix();
    }
    LabelGaussian impl = Verbalizer::aggregate(gs, lambda, 1e-8);
    LabelGaussian oracle = aggregate_oracle(gs, lambda, 1e-8);
    CHECK((impl.mean - oracle.mean).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((impl.variance - oracle.variance).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(impl.variance.minCoeff() >= 0.0);
  }
}

TEST_CASE("plain-sum aggregation forces kappa to 1") {
  std::vector<LabelGaussian> gs(3);
  for (int i = 0; i < 3; ++i)
    gs[i] = {random_mat(4, 1, 400 + i).col(0),
             random_mat(4, 1, 500 + i).col(0).array().abs().matrix()};
  LabelGaussian out = Verbalizer::aggregate(gs, 1.0, 1e-8, /*plain_sum=*/true);
  Vec mu = gs[0].mean + gs[1].mean + gs[2].mean;
  Vec var = gs[0].variance + gs[1].variance + gs[2].variance;
  CHECK((out.mean - mu).norm() < 1e-12);
  CHECK((out.variance - var).norm() < 1e-12);
}

TEST_CASE("kappa lies in (0,1] and decreases as sigma grows") {
  // Monotonicity: raising one sigma component strictly lowers its kappa and
  // weakly lowers that component's contribution to the aggregated mean.
  std::vector<LabelGaussian> gs(2);
  gs[0] = {Vec::Constant(3, 2.0), Vec::Constant(3, 0.04)};
  gs[1] = {Vec::Constant(3, 2.0), Vec::Constant(3, 0.04)};
  LabelGaussian before = Verbalizer::aggregate(gs, 1.0, 0.0);
  gs[1].variance[1] = 1.0;
  LabelGaussian after = Verbalizer::aggregate(gs, 1.0, 0.0);
  CHECK(after.mean[1] < before.mean[1]);
  CHECK(after.mean[0] == before.mean[0]);
  double kappa_small = std::exp(-0.2), kappa_big = std::exp(-1.0);
  CHECK(kappa_small <= 1.0);
  CHECK(kappa_big > 0.0);
  CHECK(kappa_big < kappa_small);
}

TEST_CASE("identical sigmas reduce to one shared kappa scaling") {
  Vec shared_var = Vec::Constant(5, 0.25);
  std::vector<LabelGaussian> gs(3);
  Vec mu_sum = Vec::Zero(5);
  for (int i = 0; i < 3; ++i) {
    gs[i] = {random_mat(5, 1, 600 + i).col(0), shared_var};
    mu_sum += gs[i].mean;
  }
  LabelGaussian out = Verbalizer::aggregate(gs, 1.3, 0.0);
  double kappa = std::exp(-1.3 * 0.5);
  CHECK((out.mean - kappa * mu_sum).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sample_label: zero noise and zero mean give the uniform distribution") {
  LabelGaussian g{Vec::Zero(6), Vec::Constant(6, 0.5)};
  Vec p = Verbalizer::sample_label(g, Vec::Zero(6), 1e-8);
  CHECK((p - Vec::Constant(6, 1.0 / 6.0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sample_label sums to one for random inputs") {
  for (uint64_t s = 0; s < 5; ++s) {
    LabelGaussian g{random_mat(12, 1, 700 + s, 3.0).col(0),
                    random_mat(12, 1, 800 + s).col(0).array().abs().matrix()};
    Vec p = Verbalizer::sample_label(g, gaussian_vector(mix_key({900u, s}), 12), 1e-8);
    CHECK(std::abs(p.sum() - 1.0) < 1e-6);
    CHECK(p.minCoeff() >= 0.0);
  }
}

TEST_CASE("sample_label: mu=[2,0,0] with vanishing variance") {
  LabelGaussian g{Vec::Zero(3), Vec::Zero(3)};
  g.mean[0] = 2.0;
  Vec p = Verbalizer::sample_label(g, gaussian_vector(1, 3), 0.0);
  const double e2 = std::exp(2.0);
  CHECK(p[0] == doctest::Approx(e2 / (e2 + 2.0)).epsilon(1e-9));
  CHECK(p[1] == doctest::Approx(1.0 / (e2 + 2.0)).epsilon(1e-9));
  CHECK(p[0] == doctest::Approx(0.7870).epsilon(1e-3));
  CHECK(p[1] == doctest::Approx(0.1065).epsilon(1e-3));
}

TEST_CASE("softmax shift invariance of the label distribution") {
  LabelGaussian g{random_mat(9, 1, 950, 2.0).col(0),
                  random_mat(9, 1, 951).col(0).array().abs().matrix()};
  Vec noise = gaussian_vector(3, 9);
  Vec p1 = Verbalizer::sample_label(g, noise, 1e-8);
  LabelGaussian shifted = g;
  shifted.mean.array() += 7.3;
  Vec p2 = Verbalizer::sample_label(shifted, noise, 1e-8);
  CHECK((p1 - p2).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("gradients through estimate, aggregate, and sample match finite differences") {
  Rig rig(8, 3, 19);  // |V| = 20
  REQUIRE(rig.vocab.size() == 20);
  // Move the ReLU pre-activations away from zero; finite differences are not
  // a valid oracle across the kink.
  auto scale = [&](const char* name, double s) {
    rig.params.at(rig.params.find(name)).value *= s;
  };
  scale("verbalizer/label_tokens", 5.0);
  scale("verbalizer/W_mu", 5.0);
  scale("verbalizer/W_sigma", 5.0);
  rig.params.at(rig.params.find("verbalizer/b_mu")).value.setConstant(0.1);
  rig.params.at(rig.params.find("verbalizer/b_sigma")).value.setConstant(0.1);
  Vec noise = gaussian_vector(77, rig.vocab.size());
  Mat weight = random_mat(1, rig.vocab.size(), 78);

  auto loss_of = [&](bool backward) {
    Tape tape;
    ParamBinding bind(tape, rig.params);
    std::vector<Verbalizer::LG> gs;
    for (int i = 0; i < 3; ++i)
      gs.push_back(rig.verbalizer.estimate(
          tape, bind, rig.verbalizer.label_token_row(tape, bind, i), rig.backbone));
    Verbalizer::LG agg = Verbalizer::aggregate(tape, gs, 1.0, 1e-8);
    Var v_v = Verbalizer::sample(tape, agg, noise, 1e-8);
    Var p_v = tape.softmax_rows(v_v);
    Var loss = tape.sum(tape.cmul(p_v, tape.constant(weight)));
    if (backward) tape.backward(loss);
    return loss.value()(0, 0);
  };

  rig.params.zero_grads();
  loss_of(true);

  const double h = 1e-5;
  Rng pick(81);
  double max_rel = 0.0;
  int checked = 0;
  while (checked < 14) {
    int t = pick.uniform_int(rig.params.count());
    Tensor& ten = rig.params.at(t);
    const std::string& name = ten.name;
    bool relevant = name.rfind("verbalizer/", 0) == 0 || name.rfind("backbone/mlm_head/", 0) == 0;
    if (!relevant) continue;
    int r = pick.uniform_int((int)ten.value.rows());
    int c = pick.uniform_int((int)ten.value.cols());
    if (std::abs(ten.grad(r, c)) < 1e-12) continue;
    double saved = ten.value(r, c);
    ten.value(r, c) = saved + h;
    double fp = loss_of(false);
    ten.value(r, c) = saved - h;
    double fm = loss_of(false);
    ten.value(r, c) = saved;
    double fd = (fp - fm) / (2 * h);
    double an = ten.grad(r, c);
    max_rel = std::max(max_rel, std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)));
    ++checked;
  }
  CHECK(max_rel < 1e-3);
}
