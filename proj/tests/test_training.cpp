#include "seornet/training.hpp"

#include <gtest/gtest.h>

#include "tiny_config.hpp"

using namespace seornet;
namespace fs = std::filesystem;

namespace {

std::vector<ShapePair> tiny_data(int pairs, int points, std::uint64_t seed = 7) {
  SynthOptions o;
  o.pairs = pairs;
  o.points = points;
  o.seed = seed;
  return synthesize_dataset(o);
}

template <class T>
bool same_weights(const ParamStore<T>& a, const ParamStore<T>& b) {
  if (a.size() != b.size()) return false;
  for (ParamId i = 0; i < a.size(); ++i)
    if (a.value(i) != b.value(i)) return false;
  return true;
}

template <class T>
double mean_loss(Trainer<T>& tr, const std::vector<ShapePair>& data) {
  double sum = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    sum += tr.pair_losses(data[i].source, data[i].target, derive_seed(99, i)).total;
  return sum / double(data.size());
}

}  // namespace

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  ParamStore<double> s;
  s.add("w", Mat<double>::Constant(1, 3, 1.0));
  Optimizer<double> opt(OptimizerKind::Adam, 0.01, s);
  s.grad(0) << 0.5, -2.0, 1e-3;
  opt.step(s);
  EXPECT_NEAR(s.value(0)(0, 0), 0.99, 1e-6);
  EXPECT_NEAR(s.value(0)(0, 1), 1.01, 1e-6);
  EXPECT_NEAR(s.value(0)(0, 2), 0.99, 1e-4);
  Optimizer<double> sgd(OptimizerKind::Sgd, 0.1, s);
  s.grad(0) << 1, 1, 1;
  const double before = s.value(0)(0, 0);
  sgd.step(s);
  EXPECT_DOUBLE_EQ(s.value(0)(0, 0), before - 0.1);
}

TEST(EmaSchedule, RampsThenHolds) {
  SelfEnsembleConfig c;
  EXPECT_DOUBLE_EQ(ema_decay_at(c, 0, 1000), 0.99);
  EXPECT_NEAR(ema_decay_at(c, 50, 1000), 0.9945, 1e-12);
  EXPECT_DOUBLE_EQ(ema_decay_at(c, 100, 1000), 0.999);
  EXPECT_DOUBLE_EQ(ema_decay_at(c, 900, 1000), 0.999);
  c.ema_ramp = false;
  EXPECT_DOUBLE_EQ(ema_decay_at(c, 0, 1000), 0.999);
}

TEST(Trainer, TeacherStartsAsStudentAndConsistencyIsZero) {
  auto cfg = tiny_config();
  cfg.ablation.transform = false;
  Trainer<double> tr(cfg);
  EXPECT_TRUE(same_weights(tr.student(), tr.teacher()));
  const auto data = tiny_data(1, 32);
  const auto l = tr.pair_losses(data[0].source, data[0].target, 5);
  ASSERT_TRUE(l.ccs && l.css);
  EXPECT_EQ(*l.ccs, 0.0);
  EXPECT_EQ(*l.css, 0.0);
  EXPECT_TRUE(std::isfinite(l.total));
}

TEST(Trainer, OnlyStudentReceivesGradients) {
  Trainer<double> tr(tiny_config());
  const auto data = tiny_data(1, 32);
  tr.student().zero_grad();
  tr.teacher().zero_grad();
  tr.pair_losses(data[0].source, data[0].target, 5, 1.0);
  double student = 0, teacher = 0;
  for (ParamId i = 0; i < tr.student().size(); ++i) {
    student += tr.student().grad(i).cwiseAbs().sum();
    teacher += tr.teacher().grad(i).cwiseAbs().sum();
  }
  EXPECT_GT(student, 0.0);
  EXPECT_EQ(teacher, 0.0);
}

TEST(Trainer, TeacherFollowsEma) {
  auto cfg = tiny_config();
  cfg.se.ema_ramp = false;
  cfg.se.ema_decay = 0.5;
  Trainer<double> tr(cfg);
  const auto data = tiny_data(2, 32);
  const auto before = tr.teacher();
  tr.train_step(data);
  for (ParamId i = 0; i < tr.student().size(); ++i) {
    const Mat<double> expect = 0.5 * before.value(i) + 0.5 * tr.student().value(i);
    EXPECT_LT((tr.teacher().value(i) - expect).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Trainer, RunsAreBitwiseDeterministic) {
  const auto data = tiny_data(3, 32);
  auto run = [&] {
    Trainer<float> tr(tiny_config());
    std::vector<double> totals;
    tr.fit(data, 5, [&](const StepMetrics& m) { totals.push_back(m.total); });
    return std::pair{totals, tr.serialize()};
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  auto other = tiny_config();
  other.seed = 4;
  Trainer<float> tr(other);
  std::vector<double> totals;
  tr.fit(data, 5, [&](const StepMetrics& m) { totals.push_back(m.total); });
  EXPECT_NE(totals, a.first);
}

TEST(Trainer, LossDecreasesOnSmallDataset) {
  auto cfg = tiny_config();
  const auto data = tiny_data(4, 64);
  Trainer<float> tr(cfg);
  const double before = mean_loss(tr, data);
  tr.fit(data, 50);
  const double after = mean_loss(tr, data);
  EXPECT_LT(after, before);
}

TEST(Trainer, BatchIndicesDeterministicAndInRange) {
  auto cfg = tiny_config();
  cfg.batch_size = 4;
  Trainer<float> tr(cfg);
  for (long s = 0; s < 20; ++s) {
    const auto idx = tr.batch_indices(10, s);
    EXPECT_EQ(idx, tr.batch_indices(10, s));
    EXPECT_EQ(idx.size(), 4u);
    for (int i : idx) EXPECT_TRUE(i >= 0 && i < 10);
  }
  EXPECT_THROW(tr.batch_indices(0, 0), Error);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  Trainer<float> tr(tiny_config());
  tr.fit(tiny_data(2, 32), 2);
  const auto path = fs::temp_directory_path() / "seornet_ckpt_roundtrip.seor";
  tr.save(path);
  const auto back = Trainer<float>::load(path);
  EXPECT_EQ(back.serialize(), tr.serialize());
  EXPECT_EQ(back.step(), 2);
  EXPECT_TRUE(same_weights(back.teacher(), tr.teacher()));
}

TEST(Checkpoint, CorruptionAndMismatchesAreReported) {
  Trainer<float> tr(tiny_config());
  const std::string good = tr.serialize();
  std::string flipped = good;
  flipped[good.size() / 2] ^= 0x40;
  EXPECT_THROW(Trainer<float>::deserialize(flipped), Error);
  EXPECT_THROW(Trainer<float>::deserialize(good.substr(0, good.size() - 20)), Error);
  std::string magic = good;
  magic[0] = 'X';
  EXPECT_THROW(Trainer<float>::deserialize(magic), Error);
  std::string version = good;
  version[5] = 2;
  try {
    Trainer<float>::deserialize(version, "ckpt.seor");
    FAIL() << "future version accepted";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  try {
    Trainer<double>::deserialize(good, "ckpt.seor");
    FAIL() << "width mismatch accepted";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("4-byte"), std::string::npos);
  }
  EXPECT_THROW(Trainer<float>::load("/nonexistent/ckpt.seor"), Error);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const auto data = tiny_data(3, 32);
  Trainer<double> straight(tiny_config());
  straight.fit(data, 6);
  Trainer<double> first(tiny_config());
  first.fit(data, 3);
  auto resumed = Trainer<double>::deserialize(first.serialize());
  resumed.fit(data, 6);
  for (ParamId i = 0; i < straight.student().size(); ++i) {
    EXPECT_EQ(resumed.student().value(i), straight.student().value(i));
    EXPECT_EQ(resumed.teacher().value(i), straight.teacher().value(i));
  }
}

TEST(Trainer, OemOnlyComputesAngleLossAlone) {
  auto cfg = tiny_config();
  cfg.oem_only = true;
  Trainer<float> tr(cfg);
  const auto data = tiny_data(1, 32);
  const auto l = tr.pair_losses(data[0].source, data[0].target, 3);
  EXPECT_TRUE(l.angle.has_value());
  EXPECT_FALSE(l.cons || l.norm || l.ccs || l.domain);
  EXPECT_NEAR(l.total, *l.angle, 1e-6);
  EXPECT_GE(l.label_bin, 0);
}

TEST(PrepareDataset, DownsamplesKeepingGroundTruth) {
  PairOptions opt;
  const auto t = ShapeTemplate::make(0);
  std::vector<ShapePair> data{generate_pair(t, DeformParams{}, DeformParams{}, 100, 1, opt)};
  const auto small = prepare_dataset(data, 40, 2);
  ASSERT_EQ(small[0].source.n(), 40);
  for (int i = 0; i < 40; ++i)
    EXPECT_EQ(small[0].source.point(i), small[0].target.point(small[0].gt->target_index[i]));
}
