#include "oracles.hpp"
#include "test_util.hpp"

using namespace cirp;

namespace {

Matrix unit_rows(Matrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

double relative_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

/// Flattened view of every parameter, in visit() order.
std::vector<double*> flat(EncoderParams& p) {
  std::vector<double*> out;
  p.visit([&](Matrix& m, TensorKind, const std::string&) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  });
  return out;
}

/// Central-difference check of total_loss_and_grad; returns relative error.
double gradient_error(const std::vector<Edge>& edges, EncoderParams params, const MomentumState* momentum,
                      const FeatureTables& f, double alpha, LossMode mode) {
  EncoderParams grad = params.zeros_like();
  total_loss_and_grad(edges, params, momentum, f, alpha, mode, grad);
  auto slots = flat(params);
  auto gslots = flat(grad);
  const double h = 1e-4;
  double diff2 = 0, norm_a = 0, norm_n = 0;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const double keep = *slots[k];
    *slots[k] = keep + h;
    const double up = total_loss(edges, params, momentum, f, alpha, mode).total;
    *slots[k] = keep - h;
    const double down = total_loss(edges, params, momentum, f, alpha, mode).total;
    *slots[k] = keep;
    const double fd = (up - down) / (2 * h);
    diff2 += (fd - *gslots[k]) * (fd - *gslots[k]);
    norm_a += *gslots[k] * *gslots[k];
    norm_n += fd * fd;
  }
  return std::sqrt(diff2) / std::max({std::sqrt(norm_a), std::sqrt(norm_n), 1e-12});
}

struct Toy {
  Matrix image, text;
  std::vector<Edge> edges;
};

Toy toy(Rng& rng, std::size_t items = 6, Eigen::Index dim = 5) {
  Toy t;
  t.image = cirp::test::random_matrix(static_cast<Eigen::Index>(items), dim, rng);
  t.text = cirp::test::random_matrix(static_cast<Eigen::Index>(items), dim, rng);
  t.edges = {{0, 1, 1}, {2, 3, 1}, {4, 5, 1}};
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// encode

TEST(Encode, IdentityLayerPassesUnitInput) {
  const auto p = identity_encoder(3);
  Vector x(3);
  x << 0.6, 0.8, 0.0;
  const auto [v, t] = encode(p, x, x);
  EXPECT_LT((v - x).norm(), 1e-15);
  EXPECT_LT((t - x).norm(), 1e-15);
}

TEST(Encode, OutputsAreUnitNorm) {
  Rng rng(1);
  for (std::size_t hidden : {0u, 7u}) {
    const auto p = init_encoder({6, 4, hidden}, rng, 0.5);
    for (int t = 0; t < 20; ++t) {
      const Vector x = cirp::test::random_matrix(6, 1, rng, 3.0), y = cirp::test::random_matrix(6, 1, rng);
      const auto [v, tt] = encode(p, x, y);
      EXPECT_NEAR(v.norm(), 1.0, 1e-6);
      EXPECT_NEAR(tt.norm(), 1.0, 1e-6);
    }
  }
}

TEST(Encode, ScaleInvarianceWithoutBias) {
  Rng rng(2);
  const auto p = init_encoder({5, 3, 0}, rng, 1.0);
  for (double c : {2.0, 0.1, 37.0}) {
    const Vector x = cirp::test::random_matrix(5, 1, rng);
    const auto [v1, t1] = encode(p, x, x);
    const auto [v2, t2] = encode(p, c * x, c * x);
    EXPECT_LT((v1 - v2).norm(), 1e-12);
    EXPECT_LT((t1 - t2).norm(), 1e-12);
  }
}

TEST(Encode, NanInputIsDataError) {
  const auto p = identity_encoder(2);
  Vector x(2);
  x << 1, std::nan("");
  EXPECT_THROW(encode(p, x, Vector::Ones(2)), DataError);
}

TEST(EmbedAll, IdentityNormalizesRowsAndIsRepeatable) {
  Rng rng(3);
  const Matrix img = cirp::test::random_matrix(7, 4, rng), txt = cirp::test::random_matrix(7, 4, rng);
  const auto p = identity_encoder(4);
  const auto [v, t] = embed_all(p, img, txt);
  EXPECT_EQ(v.rows(), 7);
  EXPECT_LT((v - unit_rows(img)).norm(), 1e-14);
  const auto [v2, t2] = embed_all(p, img, txt);
  EXPECT_EQ(v, v2);
  EXPECT_EQ(t, t2);
}

// ---------------------------------------------------------------------------
// contrast

TEST(Contrast, SingletonBatchIsZero) {
  Matrix a(1, 2), b(1, 2);
  a << 1, 0;
  b << 0, 1;
  EXPECT_EQ(contrast(a, b, 0.07, 0.0), 0.0);
}

TEST(Contrast, IdenticalAnchorsContributeLn2) {
  // Both A rows are the same vector and score the two B rows equally.
  Matrix a(2, 2), b(2, 2);
  a << 1, 0, 1, 0;
  b << 0.6, 0.8, 0.6, -0.8;
  const auto r = detail::contrast_direction(a, b, nullptr, nullptr, nullptr, 1.0, 1.0, 0.0);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
}

TEST(Contrast, TwoByTwoByHand) {
  const Matrix a = Matrix::Identity(2, 2), b = Matrix::Identity(2, 2);
  EXPECT_NEAR(contrast(a, b, 1.0, 0.0), std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(contrast(a, b, 1.0, 0.0), 0.313262, 1e-6);
}

TEST(Contrast, MatchesPlainInfoNce) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(8));
    const Matrix a = unit_rows(cirp::test::random_matrix(n, 5, rng));
    const Matrix b = unit_rows(cirp::test::random_matrix(n, 5, rng));
    const double tau = 0.05 + rng.uniform();
    EXPECT_NEAR(contrast(a, b, tau, 0.0), oracle::info_nce(a, b, tau), 1e-10);
  }
}

TEST(Contrast, SoftTargetsAndQueueMatchLoopOracle) {
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(6));
    const auto q = static_cast<Eigen::Index>(rng.below(4));
    auto u = [&](Eigen::Index r) { return unit_rows(cirp::test::random_matrix(r, 4, rng)); };
    const Matrix a = u(n), b = u(n), am = u(n), bm = u(n);
    const Matrix qa = q ? u(q) : Matrix(0, 4), qb = q ? u(q) : Matrix(0, 4);
    const double tau = 0.1 + rng.uniform(), tau_m = 0.1 + rng.uniform(), alpha = rng.uniform();
    ContrastSide side{&am, &bm, &qa, &qb, tau_m};
    EXPECT_NEAR(contrast(a, b, tau, alpha, side), oracle::soft_contrast(a, b, am, bm, qa, qb, tau, tau_m, alpha),
                1e-10);
  }
}

TEST(Contrast, NonNegativeWithOneHotTargets) {
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(8));
    const Matrix a = unit_rows(cirp::test::random_matrix(n, 3, rng)), b = unit_rows(cirp::test::random_matrix(n, 3, rng));
    EXPECT_GE(contrast(a, b, 0.07, 0.0), 0.0);
  }
}

TEST(Contrast, Errors) {
  EXPECT_THROW(contrast(Matrix(0, 2), Matrix(0, 2), 1.0, 0.0), ConfigError);
  EXPECT_THROW(contrast(Matrix::Ones(2, 2), Matrix::Ones(3, 2), 1.0, 0.0), ConfigError);
  EXPECT_THROW(contrast(Matrix::Ones(2, 2), Matrix::Ones(2, 2), 1.0, 0.4), ConfigError);  // no momentum features
}

TEST(Contrast, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  const Matrix a = unit_rows(cirp::test::random_matrix(4, 3, rng)), b = unit_rows(cirp::test::random_matrix(4, 3, rng));
  const Matrix am = unit_rows(cirp::test::random_matrix(4, 3, rng)), bm = unit_rows(cirp::test::random_matrix(4, 3, rng));
  const Matrix qa = unit_rows(cirp::test::random_matrix(2, 3, rng)), qb = unit_rows(cirp::test::random_matrix(2, 3, rng));
  const ContrastSide side{&am, &bm, &qa, &qb, 0.2};
  const double tau = 0.3, alpha = 0.4, h = 1e-5;
  const auto r = contrast_with_grad(a, b, tau, alpha, side);
  Matrix fa(a.rows(), a.cols()), fb(b.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    Matrix p = a, m = a;
    p.data()[i] += h;
    m.data()[i] -= h;
    fa.data()[i] = (contrast(p, b, tau, alpha, side) - contrast(m, b, tau, alpha, side)) / (2 * h);
    p = b;
    m = b;
    p.data()[i] += h;
    m.data()[i] -= h;
    fb.data()[i] = (contrast(a, p, tau, alpha, side) - contrast(a, m, tau, alpha, side)) / (2 * h);
  }
  EXPECT_LT(relative_error(r.grad_a, fa), 1e-6);
  EXPECT_LT(relative_error(r.grad_b, fb), 1e-6);
  const double lt = std::log(tau);
  const double fd_tau =
      (contrast(a, b, std::exp(lt + h), alpha, side) - contrast(a, b, std::exp(lt - h), alpha, side)) / (2 * h);
  EXPECT_NEAR(r.grad_log_tau, fd_tau, 1e-6 * std::max(1.0, std::abs(fd_tau)));
}

// ---------------------------------------------------------------------------
// itc / cic / total

TEST(Itc, SingleItemIsZero) {
  const Matrix f = Matrix::Identity(3, 3);
  EXPECT_EQ(itc_loss({1}, identity_encoder(3), nullptr, {f, f}, 0.0), 0.0);
}

TEST(Itc, AlignedDistinctDirectionsAtLowTemperature) {
  const Matrix f = Matrix::Identity(3, 3);
  EXPECT_LT(itc_loss({0, 1, 2}, identity_encoder(3, 0.01), nullptr, {f, f}, 0.0), 1e-30);
}

TEST(Itc, ThreeOrthogonalItemsMatchOracle) {
  const Matrix f = Matrix::Identity(3, 3);
  const double got = itc_loss({0, 1, 2}, identity_encoder(3, 1.0), nullptr, {f, f}, 0.0);
  EXPECT_NEAR(got, oracle::info_nce(f, f, 1.0), 1e-14);
  EXPECT_NEAR(got, std::log(std::exp(1.0) + 2.0) - 1.0, 1e-14);
}

TEST(Cic, SingleEdgeIsZero) {
  Rng rng(8);
  const Matrix f = cirp::test::random_matrix(2, 3, rng);
  EXPECT_EQ(cic_loss({{0, 1, 1}}, identity_encoder(3), nullptr, {f, f}, 0.0), 0.0);
}

TEST(Cic, CopiedFeaturesReduceToItc) {
  Rng rng(9);
  Matrix img = cirp::test::random_matrix(6, 4, rng), txt = cirp::test::random_matrix(6, 4, rng);
  // items 3..5 carry copies of items 0..2
  img.bottomRows(3) = img.topRows(3);
  txt.bottomRows(3) = txt.topRows(3);
  const auto p = identity_encoder(4, 0.5);
  const FeatureTables f{img, txt};
  const double itc = itc_loss({0, 1, 2}, p, nullptr, f, 0.0);
  EXPECT_NEAR(cic_loss({{0, 3, 1}, {1, 4, 1}, {2, 5, 1}}, p, nullptr, f, 0.0), 2 * itc, 1e-12);
}

TEST(Cic, TwoEdgesOnFourItemsMatchOracle) {
  Rng rng(10);
  const Matrix img = cirp::test::random_matrix(4, 3, rng), txt = cirp::test::random_matrix(4, 3, rng);
  const auto p = identity_encoder(3, 1.0);
  const Matrix v = unit_rows(img), t = unit_rows(txt);
  // edges (0,2) and (1,3): Contrast(v_{0,1}, t_{2,3}) + Contrast(t_{0,1}, v_{2,3})
  const Matrix vi = v.topRows(2), ti = t.topRows(2), vj = v.bottomRows(2), tj = t.bottomRows(2);
  const double expected = oracle::info_nce(vi, tj, 1.0) + oracle::info_nce(ti, vj, 1.0);
  EXPECT_NEAR(cic_loss({{0, 2, 1}, {1, 3, 1}}, p, nullptr, {img, txt}, 0.0), expected, 1e-12);
}

TEST(TotalLoss, ModeContracts) {
  Rng rng(11);
  auto t = toy(rng);
  const auto p = init_encoder({5, 4, 0}, rng, 0.5);
  const FeatureTables f{t.image, t.text};
  const auto full = total_loss(t.edges, p, nullptr, f, 0.0, LossMode::itc_and_cic);
  const auto itc = total_loss(t.edges, p, nullptr, f, 0.0, LossMode::itc_only);
  const auto cic = total_loss(t.edges, p, nullptr, f, 0.0, LossMode::cic_only);
  EXPECT_EQ(itc.total, itc.itc_i + itc.itc_j);
  EXPECT_EQ(itc.cic, 0.0);
  EXPECT_EQ(cic.total, cic.cic);
  EXPECT_EQ(cic.itc_i + cic.itc_j, 0.0);
  EXPECT_NEAR(full.total, itc.total + cic.total, 1e-12);
  EXPECT_NEAR(itc.itc_i, itc_loss({0, 2, 4}, p, nullptr, f, 0.0), 1e-12);
  EXPECT_NEAR(itc.itc_j, itc_loss({1, 3, 5}, p, nullptr, f, 0.0), 1e-12);
  EXPECT_NEAR(cic.cic, cic_loss(t.edges, p, nullptr, f, 0.0), 1e-12);
  EXPECT_EQ(total_loss({{0, 1, 1}}, p, nullptr, f, 0.0, LossMode::itc_and_cic).total, 0.0);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  for (int trial = 0; trial < 4; ++trial) {
    auto t = toy(rng);
    const std::size_t hidden = trial % 2 ? 6 : 0;
    const auto p = init_encoder({5, 4, hidden}, rng, 0.4, 0.3 + 0.2 * rng.uniform());
    const FeatureTables f{t.image, t.text};
    for (auto mode : {LossMode::itc_and_cic, LossMode::itc_only, LossMode::cic_only})
      EXPECT_LT(gradient_error(t.edges, p, nullptr, f, 0.0, mode), 1e-4);
    // soft targets from a perturbed shadow with its own temperature, plus queues
    MomentumState ms(init_encoder({5, 4, hidden}, rng, 0.4, 0.2), 0.995, 3);
    ms.image_queue.push(unit_rows(cirp::test::random_matrix(3, 4, rng)));
    ms.text_queue.push(unit_rows(cirp::test::random_matrix(2, 4, rng)));
    EXPECT_LT(gradient_error(t.edges, p, &ms, f, 0.4, LossMode::itc_and_cic), 1e-4);
  }
}

// ---------------------------------------------------------------------------
// momentum

TEST(Momentum, Examples) {
  EncoderParams live = identity_encoder(2), shadow = identity_encoder(2);
  live.image.layers[0].weight.setConstant(2.0);
  shadow.image.layers[0].weight.setZero();
  const auto before = shadow;
  momentum_update(live, shadow, 1.0);
  EXPECT_EQ(shadow.image.layers[0].weight, before.image.layers[0].weight);
  momentum_update(live, shadow, 0.5);
  EXPECT_EQ(shadow.image.layers[0].weight, Matrix::Constant(2, 2, 1.0));
  momentum_update(live, shadow, 0.0);
  EXPECT_EQ(shadow.image.layers[0].weight, live.image.layers[0].weight);
}

TEST(Momentum, ShapeMismatchAndRange) {
  EncoderParams a = identity_encoder(2), b = identity_encoder(3);
  EXPECT_THROW(momentum_update(a, b, 0.5), ConfigError);
  EXPECT_THROW(momentum_update(a, a, 1.5), ConfigError);
}

TEST(Momentum, ShadowConvergesGeometrically) {
  Rng rng(13);
  const auto live = init_encoder({3, 2, 0}, rng, 1.0);
  auto shadow = init_encoder({3, 2, 0}, rng, 1.0);
  const double m = 0.9;
  const double d0 = (live.image.layers[0].weight - shadow.image.layers[0].weight).norm();
  for (int t = 1; t <= 20; ++t) {
    momentum_update(live, shadow, m);
    const double dt = (live.image.layers[0].weight - shadow.image.layers[0].weight).norm();
    EXPECT_NEAR(dt, d0 * std::pow(m, t), 1e-12 * d0);
  }
}

TEST(Queue, FifoNewestFirst) {
  FeatureQueue q(3);
  Matrix rows(4, 1);
  rows << 1, 2, 3, 4;
  q.push(rows);
  EXPECT_EQ(q.size(), 3u);
  const Matrix m = q.matrix(1);
  EXPECT_EQ(m(0, 0), 4);
  EXPECT_EQ(m(2, 0), 2);
  FeatureQueue off(0);
  off.push(rows);
  EXPECT_EQ(off.size(), 0u);
}

// ---------------------------------------------------------------------------
// optimizer and training

TEST(AdamWTest, DecayTouchesWeightsOnly) {
  auto p = identity_encoder(2);
  p.image.layers[0].bias.setConstant(1.0);
  AdamW opt(p, 0.9, 0.999, 1e-8, 0.05);
  opt.step(p, p.zeros_like(), 0.1);
  EXPECT_NEAR(p.image.layers[0].weight(0, 0), 1.0 - 0.1 * 0.05, 1e-15);
  EXPECT_EQ(p.image.layers[0].bias(0, 0), 1.0);
  EXPECT_EQ(p.tau(), identity_encoder(2).tau());
}

TEST(Schedule, MultiplicativeAndLinear) {
  ContrastConfig c;
  c.learning_rate = 1.0;
  EXPECT_NEAR(scheduled_lr(c, 2), 0.81, 1e-15);
  c.lr_schedule = LrSchedule::linear;
  EXPECT_NEAR(scheduled_lr(c, 2), 0.8, 1e-15);
  EXPECT_EQ(scheduled_lr(c, 20), 0.0);
}

namespace {
struct SmallBench {
  SyntheticData data;
  ItemIndex index;
  Matrix image, text;
  ItemGraph graph;
};

SmallBench small_bench() {
  SyntheticConfig sc;
  sc.num_items = 200;
  sc.num_users = 400;
  sc.bundle_count = 0;
  SmallBench b{generate_synthetic(sc), {}, {}, {}, {}};
  b.index = ItemIndex(b.data.image.ids);
  b.image = align_features(b.data.image, b.index);
  b.text = align_features(b.data.text, b.index);
  b.graph = build_graph(b.data.interactions, b.index);
  return b;
}
}  // namespace

TEST(Pretrain, Deterministic) {
  const auto b = small_bench();
  ContrastConfig c;
  c.epochs = 2;
  const auto r1 = pretrain(b.graph, b.image, b.text, c), r2 = pretrain(b.graph, b.image, b.text, c);
  std::vector<double> x, y;
  r1.params.visit([&](const Matrix& m, TensorKind, const std::string&) { x.insert(x.end(), m.data(), m.data() + m.size()); });
  r2.params.visit([&](const Matrix& m, TensorKind, const std::string&) { y.insert(y.end(), m.data(), m.data() + m.size()); });
  EXPECT_EQ(x, y);
}

TEST(Pretrain, FirstEpochLossFallsAtDefaultRate) {
  const auto b = small_bench();
  ContrastConfig c;  // lr 3e-5
  c.epochs = 1;
  const auto r = pretrain(b.graph, b.image, b.text, c);
  ASSERT_GT(r.log.size(), 10u);
  auto mean = [&](std::size_t from, std::size_t to) {
    double s = 0;
    for (std::size_t k = from; k < to; ++k) s += r.log[k].loss;
    return s / static_cast<double>(to - from);
  };
  const std::size_t w = 5;
  EXPECT_LT(mean(r.log.size() - w, r.log.size()), mean(0, w));
}

TEST(Pretrain, ComplementaryPairsMoveCloser) {
  const auto b = small_bench();
  ContrastConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 64;
  auto mean_pair_cosine = [&](const EncoderParams& p) {
    const auto [v, t] = embed_all(p, b.image, b.text);
    const Matrix x = item_reprs(v, t);
    double s = 0;
    std::size_t n = 0;
    for (const auto& e : b.graph.edges()) {
      if (b.data.cluster_of[e.a] / 2 != b.data.cluster_of[e.b] / 2 || b.data.cluster_of[e.a] == b.data.cluster_of[e.b])
        continue;
      s += x.row(e.a).dot(x.row(e.b)) / (x.row(e.a).norm() * x.row(e.b).norm());
      ++n;
    }
    return s / static_cast<double>(n);
  };
  PipelineConfig pc;
  pc.contrast = c;  // baseline_params repeats pretrain's initial draw
  const auto before = mean_pair_cosine(baseline_params(pc, 32));
  const auto after = mean_pair_cosine(pretrain(b.graph, b.image, b.text, c).params);
  EXPECT_GT(after, before);
}

TEST(Pretrain, TemperatureStaysInRange) {
  const auto b = small_bench();
  ContrastConfig c;
  c.learning_rate = 0.5;
  c.epochs = 2;
  c.tau_min = 0.05;
  c.tau_max = 0.1;
  const auto r = pretrain(b.graph, b.image, b.text, c);
  EXPECT_GE(r.params.tau(), 0.05 - 1e-12);
  EXPECT_LE(r.params.tau(), 0.1 + 1e-12);
}

TEST(Pretrain, EmptyGraphModes) {
  const auto b = small_bench();
  const auto empty = ItemGraph::from_edges(b.graph.num_items(), {});
  ContrastConfig c;
  c.epochs = 1;
  EXPECT_THROW(pretrain(empty, b.image, b.text, c), ConfigError);
  c.loss_mode = LossMode::cic_only;
  EXPECT_THROW(pretrain(empty, b.image, b.text, c), ConfigError);
  c.loss_mode = LossMode::itc_only;
  EXPECT_NO_THROW(pretrain(empty, b.image, b.text, c));
}

TEST(Pretrain, QueueHiddenLayerAndWeightedSampling) {
  const auto b = small_bench();
  ContrastConfig c;
  c.epochs = 1;
  c.queue_size = 32;
  c.hidden_dim = 16;
  c.weighted_sampling = true;
  const auto r = pretrain(b.graph, b.image, b.text, c);
  EXPECT_TRUE(r.params.all_finite());
  EXPECT_EQ(r.momentum.image_queue.size(), 32u);
  const auto [v, t] = embed_all(r.params, b.image, b.text);
  for (Eigen::Index i = 0; i < v.rows(); ++i) EXPECT_NEAR(v.row(i).norm(), 1.0, 1e-9);
}

TEST(Checkpoint, RoundTripAtFloatPrecision) {
  cirp::test::TempDir dir("ckpt");
  Rng rng(14);
  const auto p = init_encoder({5, 3, 4}, rng, 0.3, 0.11);
  save_checkpoint(p, dir.path(), {{"seed", 14}});
  nlohmann::json header;
  const auto back = load_checkpoint(dir.path(), &header);
  EXPECT_EQ(header["seed"], 14);
  const auto rounded = round_to_float(p);
  std::vector<double> x, y;
  rounded.visit([&](const Matrix& m, TensorKind, const std::string&) { x.insert(x.end(), m.data(), m.data() + m.size()); });
  back.visit([&](const Matrix& m, TensorKind, const std::string&) { y.insert(y.end(), m.data(), m.data() + m.size()); });
  EXPECT_EQ(x, y);
  EXPECT_THROW(load_checkpoint(dir / "missing"), DataError);
}

TEST(ContrastConfigTest, ValidationAndJson) {
  ContrastConfig c;
  c.alpha = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.momentum = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.loss_mode = LossMode::cic_only;
  c.queue_size = 7;
  EXPECT_EQ(nlohmann::json(nlohmann::json(c).get<ContrastConfig>()), nlohmann::json(c));
}
