#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "p2g/pipeline.hpp"

using namespace p2g;

namespace {

std::unique_ptr<Model> tiny_model(RunConfig rc, uint64_t seed = 7) {
  Vocabulary vocab =
      Vocabulary::build({"alice", "bob", "order", "eat", "pay", "food", "fork", "bill"});
  BackboneConfig bc;
  bc.hidden_size = 8;
  bc.layer_count = 1;
  bc.head_count = 2;
  bc.feed_forward_size = 16;
  bc.max_sequence_length = 32;
  auto m = std::make_unique<Model>(bc, vocab, rc);
  m->init(seed);
  return m;
}

ScriptInstance tiny_instance() {
  ScriptInstance inst;
  inst.chain = {{"alice", "order", "food", "NULL"}, {"alice", "eat", "food", "fork"}};
  inst.candidates = {{"alice", "pay", "bill", "NULL"},
                     {"bob", "eat", "fork", "NULL"},
                     {"alice", "order", "alice", "NULL"}};
  inst.gold = 0;
  return inst;
}

// Hand route for the spec's m=2, |V|=2 example.
double kl(const Vec& p, const Vec& q) {
  double d = 0.0;
  for (int i = 0; i < p.size(); ++i) d += p[i] * (std::log(p[i]) - std::log(q[i]));
  return d;
}

}  // namespace

TEST_CASE("KL scoring matches the worked m=2 |V|=2 example in both conventions") {
  Vec p_v(2), p1(2), p2(2);
  p_v << 0.5, 0.5;
  p1 << 0.5, 0.5;
  p2 << 0.9, 0.1;

  const double d1 = kl(p1, p_v);
  const double d2 = kl(p2, p_v);
  CHECK(d1 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(d2 == doctest::Approx(0.9 * std::log(1.8) + 0.1 * std::log(0.2)).epsilon(1e-12));
  CHECK(d2 == doctest::Approx(0.3680).epsilon(1e-3));

  Vec neg = score_candidates({p1, p2}, p_v, SignConvention::Negated);
  const double z = std::exp(-d1) + std::exp(-d2);
  CHECK(neg[0] == doctest::Approx(std::exp(-d1) / z).epsilon(1e-6));
  CHECK(neg[1] == doctest::Approx(std::exp(-d2) / z).epsilon(1e-6));
  CHECK(neg[0] == doctest::Approx(0.5910).epsilon(2e-4));
  CHECK(neg[1] == doctest::Approx(0.4090).epsilon(2e-4));

  Vec lit = score_candidates({p1, p2}, p_v, SignConvention::PaperLiteral);
  CHECK(lit[0] == doctest::Approx(0.4090).epsilon(2e-4));
  CHECK(lit[1] == doctest::Approx(0.5910).epsilon(2e-4));

  // flipping the convention exactly reverses the m=2 ordering
  CHECK(lit[0] == doctest::Approx(neg[1]).epsilon(1e-12));
  CHECK(lit[1] == doctest::Approx(neg[0]).epsilon(1e-12));
}

TEST_CASE("identical candidate distributions score uniformly") {
  Vec p(3);
  p << 0.2, 0.5, 0.3;
  Vec p_v(3);
  p_v << 0.6, 0.3, 0.1;
  Vec scores = score_candidates({p, p, p, p}, p_v, SignConvention::Negated);
  for (int j = 0; j < 4; ++j) CHECK(scores[j] == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("score vectors are normalized with components in (0,1)") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    int m = 2 + rng.uniform_int(5);
    int v = 2 + rng.uniform_int(20);
    std::vector<Vec> ps;
    for (int j = 0; j < m; ++j) {
      Vec raw(v);
      for (int i = 0; i < v; ++i) raw[i] = rng.uniform() + 1e-3;
      ps.push_back(raw / raw.sum());
    }
    Vec raw(v);
    for (int i = 0; i < v; ++i) raw[i] = rng.uniform() + 1e-3;
    Vec p_v = raw / raw.sum();
    SignConvention sign = trial % 2 == 0 ? SignConvention::Negated : SignConvention::PaperLiteral;
    Vec scores = score_candidates(ps, p_v, sign);
    CHECK(std::abs(scores.sum() - 1.0) < 1e-6);
    CHECK(scores.minCoeff() > 0.0);
    CHECK(scores.maxCoeff() < 1.0);
  }
}

TEST_CASE("sign flip exactly reverses two-candidate orderings") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Vec a(4), b(4), v(4);
    for (int i = 0; i < 4; ++i) {
      a[i] = rng.uniform() + 1e-3;
      b[i] = rng.uniform() + 1e-3;
      v[i] = rng.uniform() + 1e-3;
    }
    a /= a.sum();
    b /= b.sum();
    v /= v.sum();
    Vec neg = score_candidates({a, b}, v, SignConvention::Negated);
    Vec lit = score_candidates({a, b}, v, SignConvention::PaperLiteral);
    CHECK(neg[0] == doctest::Approx(lit[1]).epsilon(1e-9));
    CHECK((neg[0] > neg[1]) == (lit[1] > lit[0]));
  }
}

TEST_CASE("predict takes the argmax with lowest-index tie-breaking") {
  Vec s(3);
  s << 0.1, 0.5, 0.4;
  CHECK(predict(s) == 1);
  Vec tie(2);
  tie << 0.5, 0.5;
  CHECK(predict(tie) == 0);
  Vec uniform = Vec::Constant(5, 0.2);
  CHECK(predict(uniform) == 0);
}

TEST_CASE("instance_loss values") {
  Vec uniform = Vec::Constant(5, 0.2);
  CHECK(instance_loss(uniform, 3) == doctest::Approx(1.6094).epsilon(1e-4));
  CHECK(instance_loss(uniform, 3) == doctest::Approx(-std::log(0.2)).epsilon(1e-12));
  Vec sure(2);
  sure << 1.0, 0.0;
  CHECK(instance_loss(sure, 0) == doctest::Approx(0.0));
  // floored: large but finite
  CHECK(instance_loss(sure, 1) == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));
  CHECK(std::isfinite(instance_loss(sure, 1)));
  CHECK_THROWS_AS(instance_loss(sure, 2), Error);
}

TEST_CASE("candidate distributions normalize and are deterministic") {
  RunConfig rc;
  auto model = tiny_model(rc);
  ScriptInstance inst = tiny_instance();
  ForwardOptions opts;
  SeededNoise n1(42), n2(42), n3(43);
  Vec p1 = candidate_distribution(*model, inst, 1, n1, opts);
  CHECK(std::abs(p1.sum() - 1.0) < 1e-6);
  CHECK(p1.minCoeff() >= 0.0);
  Vec p2 = candidate_distribution(*model, inst, 1, n2, opts);
  CHECK((p1 - p2).norm() == 0.0);  // same stream position, same result
  Vec p3 = candidate_distribution(*model, inst, 1, n3, opts);
  CHECK((p1 - p3).norm() > 0.0);
}

TEST_CASE("no_pe_variance and no_ve_variance collapse sampling to the mean path") {
  RunConfig rc;
  rc.ablation.no_pe_variance = true;
  rc.ablation.no_ve_variance = true;
  auto model = tiny_model(rc);
  ScriptInstance inst = tiny_instance();
  SeededNoise noisy(99);
  ZeroNoise zero;
  ForwardOptions opts;
  Tape t1, t2;
  ParamBinding b1(t1, model->params), b2(t2, model->params);
  InstanceForward f1 = forward_instance(t1, b1, *model, inst, noisy, opts);
  InstanceForward f2 = forward_instance(t2, b2, *model, inst, zero, opts);
  CHECK((f1.scores - f2.scores).norm() == 0.0);
  CHECK((f1.label_probs - f2.label_probs).norm() == 0.0);
}

TEST_CASE("single_label_token uses exactly one label gaussian") {
  RunConfig rc;
  rc.ablation.single_label_token = true;
  auto model = tiny_model(rc);
  CHECK(model->effective_label_tokens() == 1);
  // Changing the unused label tokens must not move the outputs.
  ScriptInstance inst = tiny_instance();
  ZeroNoise zero;
  ForwardOptions opts;
  Tape t1;
  ParamBinding b1(t1, model->params);
  Vec before = forward_instance(t1, b1, *model, inst, zero, opts).scores;
  model->params.at(model->verbalizer.label_tokens_id()).value.row(2).setConstant(5.0);
  Tape t2;
  ParamBinding b2(t2, model->params);
  Vec after = forward_instance(t2, b2, *model, inst, zero, opts).scores;
  CHECK((before - after).norm() == 0.0);
}

TEST_CASE("manual_pvp and learnable_prompt_lr use a one-hot label distribution") {
  for (bool manual : {true, false}) {
    RunConfig rc;
    rc.ablation.manual_pvp = manual;
    rc.ablation.learnable_prompt_lr = !manual;
    auto model = tiny_model(rc);
    ScriptInstance inst = tiny_instance();
    ZeroNoise zero;
    ForwardOptions opts;
    Tape tape;
    ParamBinding bind(tape, model->params);
    InstanceForward fwd = forward_instance(tape, bind, *model, inst, zero, opts);
    int then_id = model->vocab.id("then");
    CHECK(fwd.label_probs[then_id] == doctest::Approx(1.0));
    CHECK(fwd.label_probs.sum() == doctest::Approx(1.0));
  }
}

TEST_CASE("gradient check passes on the tiny fixture") {
  GradCheckReport report = gradient_check(31, 6);
  CHECK(report.pass);
  CHECK(report.max_rel_error < 1e-3);
  CHECK(report.families.size() == 7);
  for (const auto& f : report.families) {
    CAPTURE(f.family);
    CAPTURE(f.worst_parameter);
    CHECK(f.pass);
    CHECK(f.checked >= 1);
  }
}

TEST_CASE("gradient check harness catches a corrupted gradient and names the family") {
  GradCheckReport report = gradient_check(31, 6, "verbalizer/label_tokens");
  CHECK(!report.pass);
  CHECK(report.failing_family == "label_tokens");
}

TEST_CASE("forward pass distribution invariants over random tiny models") {
  Rng rng(13);
  for (uint64_t trial = 0; trial < 10; ++trial) {
    RunConfig rc;
    rc.sign = trial % 2 == 0 ? SignConvention::Negated : SignConvention::PaperLiteral;
    auto model = tiny_model(rc, 100 + trial);
    ScriptInstance inst = tiny_instance();
    SeededNoise noise(mix_key({17u, trial}));
    ForwardOptions opts;
    opts.samples = 1 + static_cast<int>(trial % 3);
    Tape tape;
    ParamBinding bind(tape, model->params);
    InstanceForward fwd = forward_instance(tape, bind, *model, inst, noise, opts);
    CHECK(std::abs(fwd.scores.sum() - 1.0) < 1e-6);
    CHECK(fwd.scores.minCoeff() >= 0.0);
    for (const Vec& p : fwd.candidate_probs) {
      CHECK(std::abs(p.sum() - 1.0) < 1e-6);
      CHECK(p.minCoeff() >= 0.0);
    }
    CHECK(std::abs(fwd.label_probs.sum() - 1.0) < 1e-6);
    CHECK(fwd.label_probs.minCoeff() >= 0.0);
    (void)rng;
  }
}
