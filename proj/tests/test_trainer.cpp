#include <gtest/gtest.h>

#include <sstream>

#include "pedger/checkpoint.hpp"
#include "pedger/data.hpp"
#include "pedger/trainer.hpp"

using namespace pedger;

namespace {

TrainConfig tiny(AblationMode mode, int epochs = 2) {
  TrainConfig c;
  c.total_epochs = epochs;
  c.warmup_epochs = epochs > 1 ? 1 : 0;
  c.accumulate_to_batch = 4;
  c.ablation_mode = mode;
  c.seed = 3;
  c.loss.alpha_convention = AlphaConvention::hed;
  c.recurrent = {3, 4, 6, 4};
  c.nonrecurrent = {{4, 6, 8, 8}, 4};
  return c;
}

const std::vector<Sample>& data8() {
  static const auto ds = [] {
    SynthConfig s;
    s.image_size = 32;
    s.count = 8;
    s.seed = 21;
    return synthesize(s).noisy;
  }();
  return ds;
}

}  // namespace

TEST(Trainer, Epoch0TargetsAreHardLabels) {
  int seen = 0;
  TrainHooks h;
  h.on_target = [&](const TargetRecord& r) {
    if (r.epoch != 0) return;
    ++seen;
    EXPECT_EQ(r.eta, 0.0);
    EXPECT_FALSE(r.m.has_value());
    EXPECT_EQ(r.y_soft_recurrent, to_prob(r.y));
    EXPECT_EQ(r.y_soft_nonrecurrent, to_prob(r.y));
  };
  train(data8(), tiny(AblationMode::full), h);
  EXPECT_EQ(seen, 8);
}

TEST(Trainer, MomentumCopiesAfterEpoch0AndAveragesAfter) {
  TrainState s = init_state(tiny(AblationMode::full, 3));
  train_epoch(s, data8());
  EXPECT_TRUE(s.has_twins);
  EXPECT_EQ(s.momentum_recurrent, s.recurrent);
  EXPECT_EQ(s.momentum_nonrecurrent, s.nonrecurrent);

  const Params prev_r = s.momentum_recurrent, prev_n = s.momentum_nonrecurrent;
  TrainHooks h;
  h.on_step = [&](const StepRecord&) {
    EXPECT_EQ(s.momentum_recurrent, prev_r);
    EXPECT_EQ(s.momentum_nonrecurrent, prev_n);
  };
  train_epoch(s, data8(), h);
  EXPECT_EQ(s.momentum_recurrent, momentum_update(s.recurrent, prev_r));
  EXPECT_EQ(s.momentum_nonrecurrent, momentum_update(s.nonrecurrent, prev_n));
  EXPECT_EQ(&s.deployable(), &s.momentum_nonrecurrent);
}

TEST(Trainer, Epoch1TargetsMatchOracle) {
  const auto cfg = tiny(AblationMode::full);
  int seen = 0;
  TrainHooks h;
  h.on_target = [&](const TargetRecord& r) {
    if (r.epoch != 1) return;
    ++seen;
    ASSERT_TRUE(r.m_recurrent && r.m_nonrecurrent && r.m);
    const double eta = cfg.eta_final * 1 / cfg.total_epochs;
    EXPECT_EQ(r.eta, eta);
    for (std::size_t i = 0; i < r.y.size(); ++i) {
      const double a = (*r.m_recurrent)[i], b = (*r.m_nonrecurrent)[i];
      const double da = std::abs(a - 0.5), db = std::abs(b - 0.5);
      const double m = da + db < 1e-8 ? 0.5 * (a + b) : (a * da + b * db) / (da + db);
      EXPECT_NEAR((*r.m)[i], m, 1e-12);
      EXPECT_NEAR(r.y_soft_nonrecurrent[i], eta * m + (1 - eta) * r.y[i], 1e-12);
    }
  };
  train(data8(), cfg, h);
  EXPECT_EQ(seen, 8);
}

TEST(Trainer, OneOptimizerStepPerAccumulatedBatch) {
  auto cfg = tiny(AblationMode::baseline, 1);
  cfg.accumulate_to_batch = 16;
  SynthConfig s;
  s.image_size = 16;
  s.count = 16;
  auto data = synthesize(s).noisy;
  EXPECT_EQ(train(data, cfg).total_steps, 1);
  s.count = 17;
  EXPECT_EQ(train(synthesize(s).noisy, cfg).total_steps, 2);
}

TEST(Trainer, BaselineTouchesNoMomentumMachinery) {
  int targets = 0;
  TrainHooks h;
  h.on_target = [&](const TargetRecord& r) {
    ++targets;
    EXPECT_FALSE(r.m_nonrecurrent.has_value());
    EXPECT_EQ(r.y_soft_nonrecurrent, to_prob(r.y));
    EXPECT_TRUE(r.y_soft_recurrent.empty());
  };
  auto s = train(data8(), tiny(AblationMode::baseline), h);
  EXPECT_EQ(targets, 16);
  EXPECT_FALSE(s.has_recurrent);
  EXPECT_FALSE(s.has_twins);
  EXPECT_EQ(s.momentum_nonrecurrent.size(), 0u);
  EXPECT_EQ(&s.deployable(), &s.nonrecurrent);
}

TEST(Trainer, DeterministicForSeed) {
  std::vector<double> a, b;
  TrainHooks ha, hb;
  ha.on_step = [&](const StepRecord& r) { a.push_back(r.loss_nonrecurrent); };
  hb.on_step = [&](const StepRecord& r) { b.push_back(r.loss_nonrecurrent); };
  auto sa = train(data8(), tiny(AblationMode::full), ha);
  auto sb = train(data8(), tiny(AblationMode::full), hb);
  EXPECT_EQ(a, b);
  EXPECT_EQ(sa.momentum_nonrecurrent, sb.momentum_nonrecurrent);
}

TEST(Trainer, EveryAblationModeRuns) {
  for (auto mode : {AblationMode::nims, AblationMode::eadm, AblationMode::eads, AblationMode::mlhs,
                    AblationMode::average, AblationMode::two_stage}) {
    bool corrected = false;
    TrainHooks h;
    h.on_target = [&](const TargetRecord& r) {
      if (r.eta > 0) corrected = true;
      if (mode == AblationMode::mlhs && r.eta > 0) {
        EXPECT_EQ(r.y_soft_nonrecurrent, soft_target(*r.m_recurrent, r.y, r.eta));
        EXPECT_EQ(r.y_soft_recurrent, soft_target(*r.m_nonrecurrent, r.y, r.eta));
      }
      if (mode == AblationMode::average && r.m)
        EXPECT_EQ(*r.m, average(*r.m_recurrent, *r.m_nonrecurrent));
    };
    auto s = train(data8(), tiny(mode), h);
    EXPECT_TRUE(corrected) << to_string(mode);
    EXPECT_EQ(s.epoch, scheduled_epochs(s.config));
    EXPECT_TRUE(s.nonrecurrent.all_finite());
  }
}

TEST(Trainer, TwoStageFreezesRecurrentPair) {
  auto cfg = tiny(AblationMode::two_stage);
  TrainState s = init_state(cfg);
  train_epoch(s, data8());
  train_epoch(s, data8());
  const Params r = s.recurrent, rm = s.momentum_recurrent, n0 = s.nonrecurrent;
  train_epoch(s, data8());
  train_epoch(s, data8());
  EXPECT_EQ(s.recurrent, r);
  EXPECT_EQ(s.momentum_recurrent, rm);
  EXPECT_FALSE(s.nonrecurrent == n0);
  EXPECT_THROW(train_epoch(s, data8()), InvalidArgument);
}

TEST(Trainer, NonFiniteLossNamesSample) {
  TrainState s = init_state(tiny(AblationMode::baseline));
  s.nonrecurrent.at("fuse.bias").values[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train_epoch(s, data8());
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("synth_train_"), std::string::npos);
  }
}

TEST(Trainer, StepLogIsJsonLines) {
  std::ostringstream os;
  TrainHooks h;
  h.on_step = [&](const StepRecord& r) { write_step_log(os, r); };
  train(data8(), tiny(AblationMode::baseline), h);
  std::istringstream is(os.str());
  int n = 0;
  for (std::string line; std::getline(is, line); ++n) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("lr") && j.contains("eta") && j.contains("loss_nonr"));
    EXPECT_TRUE(j["loss_r"].is_null());
  }
  EXPECT_EQ(n, 4);
}

TEST(Trainer, ConfigValidation) {
  auto c = tiny(AblationMode::full);
  c.warmup_epochs = c.total_epochs;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = tiny(AblationMode::full);
  c.accumulate_to_batch = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  EXPECT_THROW(parse_ablation_mode("fancy"), InvalidArgument);
  EXPECT_EQ(train_config_from_json(to_json(tiny(AblationMode::eads))).ablation_mode, AblationMode::eads);
}

TEST(Checkpoint, RoundTripFull) {
  auto s = train(data8(), tiny(AblationMode::full));
  auto path = fs::temp_directory_path() / ("pedger_ck_" + std::to_string(::getpid()));
  save_checkpoint(path, s);
  auto l = load_checkpoint(path);
  EXPECT_EQ(stored_network_count(l), 4);
  EXPECT_EQ(l.recurrent, s.recurrent);
  EXPECT_EQ(l.nonrecurrent, s.nonrecurrent);
  EXPECT_EQ(l.momentum_recurrent, s.momentum_recurrent);
  EXPECT_EQ(l.momentum_nonrecurrent, s.momentum_nonrecurrent);
  EXPECT_EQ(l.epoch, s.epoch);
  const auto& img = data8()[0].image;
  EXPECT_EQ(predict(l, img), predict(s, img));
  EXPECT_EQ(predict(l, img, NetworkChoice::recurrent), predict(s, img, NetworkChoice::recurrent));

  // Corrupt the version field.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  EXPECT_THROW(load_checkpoint(path), LoadError);
  fs::remove(path);
  EXPECT_THROW(load_checkpoint(path), LoadError);
}

TEST(Checkpoint, BaselineHoldsOneNetwork) {
  auto s = train(data8(), tiny(AblationMode::baseline, 1));
  auto path = fs::temp_directory_path() / ("pedger_ckb_" + std::to_string(::getpid()));
  save_checkpoint(path, s);
  auto l = load_checkpoint(path);
  EXPECT_EQ(stored_network_count(l), 1);
  EXPECT_THROW(predict(l, data8()[0].image, NetworkChoice::recurrent), InvalidArgument);
  EXPECT_NE(model_card(l).find("deployable network: nonrecurrent"), std::string::npos);
  fs::remove(path);
}

TEST(Predict, OutputMatchesInputSizeAndIsDeterministic) {
  auto s = init_state(tiny(AblationMode::baseline));
  SynthConfig sc;
  sc.image_size = 40;
  sc.count = 1;
  auto img = synthesize(sc).noisy[0].image;
  auto a = predict(s, img), b = predict(s, img);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.height(), 40);
  EXPECT_EQ(a.width(), 40);
}
