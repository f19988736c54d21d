#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sustain/engine.hpp"
#include "sustain/errors.hpp"

using namespace sustain;
namespace fs = std::filesystem;

namespace {

DatasetSpec tiny_spec() {
  DatasetSpec spec;
  spec.classes = 3;
  spec.train_bags = 40;
  spec.val_bags = 16;
  spec.test_bags = 16;
  spec.frames = 64;
  spec.feature_dim = 8;
  spec.template_len = 16;
  spec.priors = {0.5};
  spec.seed = 7;
  return spec;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.feature_dim = 8;
  cfg.classes = 3;
  cfg.conv1_channels = 4;
  cfg.conv1_kernel = 4;
  cfg.conv1_stride = 2;
  cfg.conv2_channels = 4;
  cfg.conv2_kernel = 3;
  cfg.conv2_stride = 2;
  cfg.embed_dim = 8;
  cfg.embed_kernel = 3;
  cfg.embed_stride = 2;
  return cfg;
}

CascadeConfig tiny_config(std::uint64_t seed = 11) {
  CascadeConfig config;
  config.model = tiny_model();
  config.seed = seed;
  config.stop_early = false;
  return config;
}

std::vector<StagePlan> tiny_schedule(std::size_t stages) {
  auto sched = decreasing_schedule(stages, 1, 2);
  for (auto& p : sched) p.minibatch = 8;
  return sched;
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

bool same_params(const WeanetModel& a, const WeanetModel& b) {
  const auto& ea = a.params().entries();
  const auto& eb = b.params().entries();
  if (ea.size() != eb.size()) return false;
  for (std::size_t i = 0; i < ea.size(); ++i)
    if (ea[i].name != eb[i].name || !same_values(ea[i].node->val, eb[i].node->val)) return false;
  return true;
}

}  // namespace

TEST_CASE("blended targets form the stated convex combinations") {
  Tensor y({1, 2});
  y[0] = 1.0;
  y[1] = 0.0;
  Tensor p({1, 2});
  p[0] = 0.6;
  p[1] = 0.2;

  SUBCASE("interior blend") {
    Tensor out = blend_targets(y, {&p}, {0.3, 0.7});
    CHECK(out[0] == doctest::Approx(0.72).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.14).epsilon(1e-12));
  }
  SUBCASE("all mass on the observed labels returns them bitwise") {
    Tensor out = blend_targets(y, {&p}, {1.0, 0.0});
    CHECK(same_values(out, y));
    Tensor solo = blend_targets(y, {}, {1.0});
    CHECK(same_values(solo, y));
  }
  SUBCASE("all mass on a single teacher returns its predictions") {
    Tensor out = blend_targets(y, {&p}, {0.0, 1.0});
    CHECK(same_values(out, p));
  }
  SUBCASE("two teachers average with their own weights") {
    Tensor q({1, 2});
    q[0] = 0.0;
    q[1] = 1.0;
    Tensor out = blend_targets(y, {&p, &q}, {0.5, 0.25, 0.25});
    CHECK(out[0] == doctest::Approx(0.5 + 0.25 * 0.6).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.25 * 0.2 + 0.25).epsilon(1e-12));
  }
  SUBCASE("boundary teacher values stay inside the unit interval") {
    Tensor ext({1, 2});
    ext[0] = 1.0;
    ext[1] = 0.0;
    Tensor out = blend_targets(y, {&ext}, {0.3, 0.7});
    CHECK(out[0] <= 1.0);
    CHECK(out[1] >= 0.0);
  }
}

TEST_CASE("alpha vectors outside the simplex are rejected with the offending sum") {
  Tensor y({1, 1});
  Tensor p({1, 1});
  CHECK_THROWS_WITH_AS(blend_targets(y, {&p}, {0.3, 0.6}),
                       doctest::Contains("0.9"), ConfigError);
  CHECK_THROWS_AS(blend_targets(y, {&p}, {-0.1, 1.1}), ConfigError);
  CHECK_THROWS_AS(blend_targets(y, {&p}, {0.5}), ConfigError);        // count mismatch
  CHECK_THROWS_AS(blend_targets(y, {}, {0.5, 0.5}), ConfigError);     // missing teacher
  Tensor bad({1, 1});
  bad[0] = 1.5;
  CHECK_THROWS_AS(blend_targets(y, {&bad}, {0.5, 0.5}), ConfigError);  // not a probability
}

TEST_CASE("stopping rule halts on saturation and reports the argmax stage") {
  SUBCASE("strictly increasing history continues") {
    StopDecision d = stopping_rule({0.30, 0.35, 0.40}, 0.002);
    CHECK_FALSE(d.stop);
    CHECK(d.best_stage == 2);
  }
  SUBCASE("marginal improvement below tolerance stops") {
    StopDecision d = stopping_rule({0.30, 0.35, 0.351}, 0.002);
    CHECK(d.stop);
    CHECK(d.best_stage == 2);
  }
  SUBCASE("a drop right after the first stage stops with the teacher on top") {
    StopDecision d = stopping_rule({0.40, 0.35}, 0.002);
    CHECK(d.stop);
    CHECK(d.best_stage == 0);
  }
  SUBCASE("a single entry never stops") {
    StopDecision d = stopping_rule({0.10}, 0.002);
    CHECK_FALSE(d.stop);
    CHECK(d.best_stage == 0);
  }
  SUBCASE("empty history is a usage error") {
    CHECK_THROWS_AS(stopping_rule({}, 0.002), UsageError);
  }
}

TEST_CASE("schedule constructors produce the decreasing pattern and teacher windows") {
  SUBCASE("two-teacher window") {
    auto sched = decreasing_schedule(5, 2, 4);
    REQUIRE(sched.size() == 5);
    const double pattern[] = {1.0, 0.3, 0.2, 0.1, 0.05};
    for (std::size_t t = 0; t < 5; ++t) {
      CHECK(sched[t].stage == t);
      CHECK(sched[t].epochs == 4);
      CHECK(sched[t].alphas[0] == doctest::Approx(pattern[t]).epsilon(1e-12));
      sched[t].validate();
    }
    CHECK(sched[0].teachers.empty());
    CHECK(sched[1].teachers == std::vector<std::size_t>{0});
    CHECK(sched[2].teachers == std::vector<std::size_t>{0, 1});
    CHECK(sched[3].teachers == std::vector<std::size_t>{1, 2});
    CHECK(sched[4].teachers == std::vector<std::size_t>{2, 3});
    CHECK(sched[3].alphas[1] == doctest::Approx(0.45).epsilon(1e-12));
    CHECK(sched[3].alphas[2] == doctest::Approx(0.45).epsilon(1e-12));
  }
  SUBCASE("single-teacher window holds the tail alpha") {
    auto sched = decreasing_schedule(7, 1, 4);
    REQUIRE(sched.size() == 7);
    CHECK(sched[6].teachers == std::vector<std::size_t>{5});
    CHECK(sched[5].alphas[0] == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(sched[6].alphas[0] == doctest::Approx(0.05).epsilon(1e-12));
  }
  SUBCASE("fixed alpha schedule") {
    auto sched = fixed_alpha_schedule(3, 0.3, 4);
    CHECK(sched[0].alphas == std::vector<double>{1.0});
    CHECK(sched[1].alphas[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(sched[2].alphas[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(sched[2].teachers == std::vector<std::size_t>{1});
  }
  SUBCASE("zero stages rejected") {
    CHECK_THROWS_AS(decreasing_schedule(0, 1, 4), ConfigError);
  }
}

TEST_CASE("plan validation rejects malformed stage descriptions") {
  StagePlan plan;
  plan.stage = 2;
  plan.teachers = {0, 1};
  plan.alphas = {0.5, 0.25, 0.25};
  plan.epochs = 2;
  plan.validate();

  SUBCASE("teacher at or past the stage") {
    plan.teachers = {0, 2};
    CHECK_THROWS_AS(plan.validate(), ConfigError);
  }
  SUBCASE("duplicate teachers") {
    plan.teachers = {1, 1};
    CHECK_THROWS_AS(plan.validate(), ConfigError);
  }
  SUBCASE("alpha count must be teachers plus one") {
    plan.alphas = {0.5, 0.5};
    CHECK_THROWS_AS(plan.validate(), ConfigError);
  }
  SUBCASE("zero epochs") {
    plan.epochs = 0;
    CHECK_THROWS_AS(plan.validate(), ConfigError);
  }
  SUBCASE("warmup fraction out of range") {
    plan.attention_warmup = 1.5;
    CHECK_THROWS_AS(plan.validate(), ConfigError);
  }
}

TEST_CASE("a cascade of pure-label plans reduces to independent supervised baselines") {
  Dataset data = generate_dataset(tiny_spec());
  CascadeConfig config = tiny_config();

  // A: two stages, the second formally referencing a teacher with zero weight.
  Cascade a;
  a.config = config;
  StagePlan p0;
  p0.stage = 0;
  p0.epochs = 2;
  p0.minibatch = 8;
  run_stage(a, p0, data);
  StagePlan p1 = p0;
  p1.stage = 1;
  p1.teachers = {0};
  p1.alphas = {1.0, 0.0};
  run_stage(a, p1, data);

  // B: the same second stage trained with no teacher at all.
  Cascade b;
  b.config = config;
  run_stage(b, p0, data);
  StagePlan q1 = p0;
  q1.stage = 1;
  run_stage(b, q1, data);

  CHECK(same_params(a.models[1], b.models[1]));
  CHECK(same_values(a.train_predictions[1], b.train_predictions[1]));
  CHECK(same_values(a.stage_targets[1], b.stage_targets[1]));
  // Pure-label targets are the observed matrix itself.
  for (std::size_t bag = 0; bag < data.train.bags.size(); ++bag)
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(a.stage_targets[1].at(bag, c) == data.train.bags[bag].observed[c]);
}

TEST_CASE("cached stage targets are reproducible after later stages run") {
  Dataset data = generate_dataset(tiny_spec());
  Cascade cascade = run_cascade(data, tiny_schedule(3), tiny_config());
  REQUIRE(cascade.models.size() == 3);

  for (std::size_t t = 1; t < 3; ++t) {
    const StagePlan& plan = cascade.plans[t];
    std::vector<const Tensor*> preds;
    for (std::size_t teacher : plan.teachers) preds.push_back(&cascade.train_predictions[teacher]);
    Tensor observed({data.train.bags.size(), std::size_t{3}});
    for (std::size_t bag = 0; bag < data.train.bags.size(); ++bag)
      for (std::size_t c = 0; c < 3; ++c) observed.at(bag, c) = data.train.bags[bag].observed[c];
    Tensor rebuilt = blend_targets(observed, preds, plan.alphas);
    CHECK(same_values(rebuilt, cascade.stage_targets[t]));
  }
}

TEST_CASE("stage plans that do not match the cascade state are rejected") {
  Dataset data = generate_dataset(tiny_spec());
  Cascade cascade;
  cascade.config = tiny_config();

  SUBCASE("first plan must put all mass on the labels") {
    StagePlan p;
    p.stage = 0;
    p.alphas = {0.9};
    CHECK_THROWS_AS(run_stage(cascade, p, data), ConfigError);
  }
  SUBCASE("stage index must equal the number of trained stages") {
    StagePlan p;
    p.stage = 1;
    p.teachers = {0};
    p.alphas = {0.5, 0.5};
    p.epochs = 2;
    CHECK_THROWS_AS(run_stage(cascade, p, data), UsageError);
  }
  SUBCASE("model class count must match the dataset") {
    CascadeConfig narrow = tiny_config();
    narrow.model.classes = 2;
    Cascade c2;
    c2.config = narrow;
    StagePlan p;
    p.stage = 0;
    p.epochs = 1;
    CHECK_THROWS_AS(run_stage(c2, p, data), ConfigError);
  }
  SUBCASE("empty schedule") {
    CHECK_THROWS_AS(run_cascade(data, {}, tiny_config()), ConfigError);
  }
}

TEST_CASE("training is deterministic for a fixed configuration seed") {
  Dataset data = generate_dataset(tiny_spec());
  Cascade first = run_cascade(data, tiny_schedule(2), tiny_config());
  Cascade second = run_cascade(data, tiny_schedule(2), tiny_config());
  REQUIRE(first.models.size() == second.models.size());
  for (std::size_t t = 0; t < first.models.size(); ++t) {
    CHECK(same_params(first.models[t], second.models[t]));
    CHECK(same_values(first.train_predictions[t], second.train_predictions[t]));
    CHECK(first.results[t].selection_metric == second.results[t].selection_metric);
  }
}

TEST_CASE("alpha search shares its teacher and covers the grid") {
  Dataset data = generate_dataset(tiny_spec());
  CascadeConfig config = tiny_config();
  StagePlan student;
  student.epochs = 2;
  student.minibatch = 8;

  AlphaSearchResult res = alpha_search(data, {0.0, 0.5, 1.0}, config, student);
  REQUIRE(res.rows.size() == 3);
  CHECK(res.rows[0].alpha0 == 0.0);
  CHECK(res.rows[2].alpha0 == 1.0);

  // The shared teacher is exactly the stage-0 run of the same configuration.
  Cascade manual;
  manual.config = config;
  StagePlan p0 = student;
  p0.stage = 0;
  p0.alphas = {1.0};
  StageResult base = run_stage(manual, p0, data);
  CHECK(res.baseline_val_map == base.val_observed.map.value_or(-1));
  CHECK(res.baseline_test_map == base.test_observed.map.value_or(-1));

  // The alpha0 = 1 row trains on pure labels at the student seed, nothing else.
  StagePlan pure = student;
  pure.stage = 1;
  pure.teachers = {0};
  pure.alphas = {1.0, 0.0};
  StageResult row = run_stage(manual, pure, data);
  CHECK(res.rows[2].val_map == row.val_observed.map.value_or(-1));
  CHECK(res.rows[2].test_map == row.test_observed.map.value_or(-1));

  // Best alpha0 belongs to the grid and maximizes validation mAP.
  double best_val = -1.0;
  for (const auto& r : res.rows) best_val = std::max(best_val, r.val_map);
  bool found = false;
  for (const auto& r : res.rows)
    if (r.alpha0 == res.best_alpha0) {
      found = true;
      CHECK(r.val_map == best_val);
    }
  CHECK(found);

  SUBCASE("degenerate grids are rejected") {
    CHECK_THROWS_AS(alpha_search(data, {}, config, student), ConfigError);
    CHECK_THROWS_AS(alpha_search(data, {1.2}, config, student), ConfigError);
  }
}

TEST_CASE("cascade round-trips through its directory format") {
  Dataset data = generate_dataset(tiny_spec());
  CascadeConfig config = tiny_config(23);
  config.stop_early = true;
  Cascade cascade = run_cascade(data, tiny_schedule(3), config);

  fs::path dir = fs::temp_directory_path() / "sustain_cascade_rt";
  fs::remove_all(dir);
  save_cascade(cascade, dir.string());
  Cascade back = load_cascade(dir.string());

  CHECK(back.config.seed == cascade.config.seed);
  CHECK(back.config.tau_sat == cascade.config.tau_sat);
  CHECK(back.config.stop_early == cascade.config.stop_early);
  CHECK(back.stopped_at == cascade.stopped_at);
  REQUIRE(back.models.size() == cascade.models.size());
  for (std::size_t t = 0; t < cascade.models.size(); ++t) {
    CHECK(same_params(back.models[t], cascade.models[t]));
    CHECK(same_values(back.train_predictions[t], cascade.train_predictions[t]));
    CHECK(back.plans[t].alphas == cascade.plans[t].alphas);
    CHECK(back.plans[t].teachers == cascade.plans[t].teachers);
    CHECK(back.plans[t].epochs == cascade.plans[t].epochs);
    CHECK(back.results[t].selection_metric == cascade.results[t].selection_metric);
    CHECK(back.results[t].best_epoch == cascade.results[t].best_epoch);
    CHECK(back.results[t].test_observed.map == cascade.results[t].test_observed.map);
  }

  SUBCASE("missing manifest is a format error") {
    fs::remove(dir / "manifest.json");
    CHECK_THROWS_AS(load_cascade(dir.string()), FormatError);
  }
  fs::remove_all(dir);
}

TEST_CASE("evaluating against truth equals observed labels when no noise is injected") {
  DatasetSpec spec = tiny_spec();
  spec.delta = {1.0};
  Dataset data = generate_dataset(spec);
  WeanetModel model(tiny_model(), 99);
  MetricsReport obs = evaluate_model(model, data.test, false);
  MetricsReport tru = evaluate_model(model, data.test, true);
  CHECK(obs.map == tru.map);
  CHECK(obs.mauc == tru.mauc);
}

TEST_CASE("probe training separates a linearly separable toy set") {
  // Two clusters on a line; class 0 fires left, class 1 fires right.
  const std::size_t n = 64;
  Tensor rows({n, 2});
  Tensor labels({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const double sign = (i % 2 == 0) ? 1.0 : -1.0;
    rows.at(i, 0) = sign * (1.0 + 0.01 * static_cast<double>(i));
    rows.at(i, 1) = -sign;
    labels.at(i, 0) = sign > 0 ? 1.0 : 0.0;
    labels.at(i, 1) = sign > 0 ? 0.0 : 1.0;
  }
  ProbeConfig pc;
  pc.epochs = 60;
  pc.seed = 3;
  LinearProbe probe = train_probe(rows, labels, pc);
  Tensor scores = probe.predict(rows);
  CHECK(argmax_accuracy(scores, labels) == 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK((scores.at(i, 0) > 0.5) == (labels.at(i, 0) > 0.5));
  }

  SUBCASE("shape mismatches are rejected") {
    CHECK_THROWS_AS(train_probe(rows, Tensor({n + 1, 2}), pc), UsageError);
    CHECK_THROWS_AS(probe.predict(Tensor({4, 3})), UsageError);
    CHECK_THROWS_AS(argmax_accuracy(scores, Tensor({n, 3})), UsageError);
  }
}

TEST_CASE("mean feature rows average frames exactly") {
  std::vector<Bag> bags(2);
  bags[0].features = Tensor({2, 3});
  for (std::size_t i = 0; i < 6; ++i) bags[0].features[i] = static_cast<double>(i);
  bags[1].features = Tensor({3, 3});
  for (std::size_t i = 0; i < 9; ++i) bags[1].features[i] = 1.0;
  Tensor rows = mean_feature_rows(bags);
  REQUIRE(rows.shape() == Shape{2, 3});
  CHECK(rows.at(0, 0) == doctest::Approx(1.5));  // mean of 0 and 3
  CHECK(rows.at(0, 2) == doctest::Approx(3.5));  // mean of 2 and 5
  CHECK(rows.at(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("bag embeddings align row by row with the per-bag extraction") {
  Dataset data = generate_dataset(tiny_spec());
  WeanetModel model(tiny_model(), 5);
  auto subset = std::vector<Bag>(data.test.bags.begin(), data.test.bags.begin() + 4);
  Tensor rows = extract_embeddings(model, subset);
  REQUIRE(rows.shape() == Shape{4, 8});
  for (std::size_t b = 0; b < 4; ++b) {
    Tensor single = model.extract_embedding(subset[b].features);
    for (std::size_t i = 0; i < 8; ++i) CHECK(rows.at(b, i) == single[i]);
  }
}

TEST_CASE("clean mean features linearly separate the planted classes") {
  DatasetSpec spec = standard_benchmark_spec();
  spec.train_bags = 300;
  spec.val_bags = 8;
  spec.test_bags = 150;
  spec.multi_label = false;
  spec.overlap_prob = 0.0;
  spec.feature_noise = 0.0;
  spec.priors = std::vector<double>(8, 0.125);
  spec.seed = 13;
  Dataset data = generate_dataset(spec);

  Tensor train_labels({data.train.bags.size(), std::size_t{8}});
  for (std::size_t b = 0; b < data.train.bags.size(); ++b)
    for (std::size_t c = 0; c < 8; ++c) train_labels.at(b, c) = data.train.bags[b].true_labels[c];
  Tensor test_labels({data.test.bags.size(), std::size_t{8}});
  for (std::size_t b = 0; b < data.test.bags.size(); ++b)
    for (std::size_t c = 0; c < 8; ++c) test_labels.at(b, c) = data.test.bags[b].true_labels[c];

  ProbeConfig pc;
  pc.seed = 13;
  LinearProbe probe = train_probe(mean_feature_rows(data.train.bags), train_labels, pc);
  Tensor scores = probe.predict(mean_feature_rows(data.test.bags));
  CHECK(argmax_accuracy(scores, test_labels) >= 0.95);
}

TEST_CASE("generated bags carry the planted event spans") {
  Dataset data = generate_dataset(tiny_spec());
  std::size_t with_events = 0;
  for (const auto& bag : data.train.bags) {
    double positives = 0.0;
    for (std::size_t c = 0; c < 3; ++c) positives += bag.true_labels[c];
    if (positives == 0.0) {
      CHECK(bag.events.empty());
      continue;
    }
    CHECK(bag.events.size() >= static_cast<std::size_t>(positives));
    ++with_events;
    for (const auto& ev : bag.events) {
      CHECK(ev.class_index < 3);
      CHECK(ev.length == 16);
      CHECK(ev.offset + ev.length <= 64);
      CHECK(bag.true_labels[ev.class_index] == 1.0);
    }
  }
  CHECK(with_events > 0);
}
