#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "aftsel/model_selection.hpp"
#include "aftsel/rng.hpp"
#include "support/oracles.hpp"

using namespace aftsel;

namespace {
SurvivalDataset make(std::vector<double> y, std::vector<int> delta, Index p = 0) {
  SurvivalDataset d;
  const Index n = static_cast<Index>(y.size());
  d.y = Eigen::Map<Vector>(y.data(), n);
  d.delta.resize(n);
  for (Index i = 0; i < n; ++i) d.delta[i] = delta[static_cast<std::size_t>(i)];
  d.x = Matrix::Zero(n, p);
  return d;
}

SurvivalDataset make_p0(const SurvivalDataset& d) {
  SurvivalDataset out = d;
  out.x = Matrix::Zero(d.n(), 0);
  return out;
}
}  // namespace

TEST_CASE("lambda grid shape") {
  Rng rng(1);
  auto d = oracle::random_censored_dataset(rng, 50, 4);
  const auto grid = lambda_grid(d, LossSpec::squared(), PenaltyKind::Lasso);
  REQUIRE(grid.size() == 50);
  const double ratio = grid[1] / grid[0];
  for (std::size_t i = 1; i < grid.size(); ++i) {
    CHECK(grid[i] < grid[i - 1]);
    CHECK_THAT(grid[i] / grid[i - 1], Catch::Matchers::WithinRel(ratio, 1e-10));
  }
  CHECK_THAT(grid.back() / grid.front(), Catch::Matchers::WithinRel(1e-3, 1e-9));
}

TEST_CASE("squared-loss lambda_max equals the KKT formula at beta = 0") {
  Rng rng(2);
  auto d = oracle::random_censored_dataset(rng, 40, 3);
  const double lmax = lasso_lambda_max(d, LossSpec::squared());
  // brute: max_j |2 sum w x (y - ybar_w)| over the first augmented dataset
  const auto aug = augment(d, default_init(d, LossSpec::squared()));
  double sw = 0.0, sy = 0.0;
  for (Index k = 0; k < aug.size(); ++k) {
    sw += aug.w_new[k];
    sy += aug.w_new[k] * aug.y_new[k];
  }
  const double ybar = sy / sw;
  double brute = 0.0;
  for (Index j = 0; j < 3; ++j) {
    double acc = 0.0;
    for (Index k = 0; k < aug.size(); ++k)
      acc += 2.0 * aug.w_new[k] * aug.xv(k, j) * (aug.y_new[k] - ybar);
    brute = std::max(brute, std::abs(acc));
  }
  // equal up to the documented 1e-10 knife-edge safety factor
  CHECK_THAT(lmax, Catch::Matchers::WithinRel(brute, 1e-9));
}

TEST_CASE("fitting at lambda_max from the zero-beta start keeps the support empty") {
  Rng rng(3);
  for (const auto& loss :
       {LossSpec::squared(), LossSpec::absolute(), LossSpec::huber(), LossSpec::tukey()}) {
    for (int trial = 0; trial < 3; ++trial) {
      auto d = oracle::random_censored_dataset(rng, 40, 4);
      const auto anchor = lasso_lambda_anchor(d, loss);
      const Theta init(anchor.alpha0, Vector::Zero(4));
      const auto fit = em_fit(d, loss, PenaltySpec::lasso(anchor.lambda_max), init);
      INFO(loss.name() << " trial " << trial);
      CHECK(fit.theta.beta.cwiseAbs().maxCoeff() == 0.0);
      CHECK(fit.converged);
    }
  }
}

TEST_CASE("the first path point at lambda_max has an empty support") {
  Rng rng(30);
  TuneOptions topt;
  topt.grid_size = 8;
  for (const auto& loss : {LossSpec::squared(), LossSpec::absolute(), LossSpec::huber()}) {
    auto d = oracle::random_censored_dataset(rng, 40, 4);
    const auto path = fit_lambda_path(d, loss, PenaltyKind::Lasso, topt);
    INFO(loss.name());
    CHECK(path.points.front().theta.beta.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("ve1 pinned examples") {
  SECTION("zero residuals") {
    auto d = make({1, 2, 3}, {1, 1, 1});
    CHECK(ve1(d, Theta(0.0, Vector(0)), LossSpec::squared()) ==
          (1.0 + 4.0 + 9.0) / 3.0);
    // a perfect fit needs covariates; check through the residual directly
    auto d2 = make({2, 2}, {1, 1});
    CHECK(ve1(d2, Theta(2.0, Vector(0)), LossSpec::squared()) == 0.0);
  }
  SECTION("mean of squares over uncensored rows only") {
    auto d = make({1, -1, 100}, {1, 1, 0});
    CHECK_THAT(ve1(d, Theta(0.0, Vector(0)), LossSpec::squared()),
               Catch::Matchers::WithinAbs(1.0, 1e-15));
  }
  SECTION("five-row hand example, absolute loss") {
    auto d = make({1.0, 2.0, 3.0, 4.0, 10.0}, {1, 0, 1, 1, 0});
    // uncensored residuals under alpha = 2: (-1, 1, 2); VE1 = 4/3
    CHECK_THAT(ve1(d, Theta(2.0, Vector(0)), LossSpec::absolute()),
               Catch::Matchers::WithinAbs(4.0 / 3.0, 1e-15));
  }
  SECTION("needs an uncensored row") {
    auto d = make({1, 2}, {0, 0});
    CHECK_THROWS_AS(ve1(d, Theta(0.0, Vector(0)), LossSpec::squared()), std::invalid_argument);
  }
}

TEST_CASE("ve2 pinned examples") {
  SECTION("fully uncensored equals the plain mean loss") {
    Rng rng(4);
    auto d = oracle::random_censored_dataset(rng, 25, 2);
    for (Index i = 0; i < d.n(); ++i) d.delta[i] = 1;
    const Theta th(0.3, Vector::Constant(2, 0.2));
    const double v2 = ve2(d, th, LossSpec::huber());
    const double v1 = ve1(d, th, LossSpec::huber());
    CHECK_THAT(v2, Catch::Matchers::WithinAbs(v1, 1e-13));
  }
  SECTION("single censored row with a singleton tail") {
    auto d = make({1, 2}, {0, 1});
    // censored residual 1, tail = {2} with weight 1 -> contributes L(e=2)
    const double v = ve2(d, Theta(0.0, Vector(0)), LossSpec::squared());
    CHECK_THAT(v, Catch::Matchers::WithinAbs((4.0 + 4.0) / 2.0, 1e-15));
  }
  SECTION("four-row hand example via the tail-weight formula") {
    auto d = make({1, 2, 3, 4}, {1, 0, 1, 1});
    // residual order (1,2,3,4), masses (1/4, 0, 3/8, 3/8); censored rank 1
    // contributes (L(3) + L(4))/2 under squared loss at theta = 0
    const double v = ve2(d, Theta(0.0, Vector(0)), LossSpec::squared());
    const double want = (1.0 + (9.0 + 16.0) / 2.0 + 9.0 + 16.0) / 4.0;
    CHECK_THAT(v, Catch::Matchers::WithinAbs(want, 1e-14));
  }
}

TEST_CASE("validation errors are invariant under row permutation") {
  Rng rng(5);
  auto d = oracle::random_censored_dataset(rng, 20, 2);
  SurvivalDataset rev;
  const Index n = d.n();
  rev.y.resize(n);
  rev.delta.resize(n);
  rev.x.resize(n, 2);
  for (Index i = 0; i < n; ++i) {
    rev.y[i] = d.y[n - 1 - i];
    rev.delta[i] = d.delta[n - 1 - i];
    rev.x.row(i) = d.x.row(n - 1 - i);
  }
  const Theta th(0.1, Vector::Constant(2, -0.4));
  for (const auto& loss : {LossSpec::squared(), LossSpec::absolute()}) {
    CHECK_THAT(ve1(rev, th, loss), Catch::Matchers::WithinAbs(ve1(d, th, loss), 1e-13));
    CHECK_THAT(ve2(rev, th, loss), Catch::Matchers::WithinAbs(ve2(d, th, loss), 1e-13));
  }
}

TEST_CASE("training-reference ve2 matches the evaluation variant when uncensored") {
  Rng rng(6);
  auto val = oracle::random_censored_dataset(rng, 20, 2);
  for (Index i = 0; i < val.n(); ++i) val.delta[i] = 1;
  auto train = oracle::random_censored_dataset(rng, 30, 2);
  const Theta th(0.2, Vector::Constant(2, 0.1));
  const auto ref = residual_distribution(train, th);
  CHECK_THAT(ve2_with_reference(val, th, LossSpec::squared(), ref),
             Catch::Matchers::WithinAbs(ve2(val, th, LossSpec::squared()), 1e-12));
}

TEST_CASE("tune with a single-lambda grid selects it") {
  Rng rng(7);
  auto train = oracle::random_censored_dataset(rng, 40, 3);
  auto val = oracle::random_censored_dataset(rng, 25, 3);
  TuneOptions topt;
  topt.grid_size = 1;
  const auto res = tune(train, val, LossSpec::squared(), PenaltyKind::Lasso, false, Tuning::VE2, topt);
  REQUIRE(res.lambdas.size() == 1);
  CHECK(res.selected_index == 0);
  CHECK(res.selected_lambda == res.lambdas[0]);
}

TEST_CASE("refit pinned behaviors") {
  Rng rng(8);
  auto d = oracle::random_censored_dataset(rng, 40, 3);
  SECTION("empty support gives the intercept-only location estimate") {
    const Theta th = refit(d, {}, LossSpec::squared());
    CHECK(th.beta.cwiseAbs().sum() == 0.0);
    const auto loc = em_fit(make_p0(d), LossSpec::squared(), PenaltySpec::lasso(0.0),
                            default_init(make_p0(d), LossSpec::squared()));
    CHECK_THAT(th.alpha, Catch::Matchers::WithinAbs(loc.theta.alpha, 1e-10));
  }
  SECTION("full support equals the unpenalized fit") {
    const Theta th = refit(d, {0, 1, 2}, LossSpec::squared());
    const auto full = em_fit(d, LossSpec::squared(), PenaltySpec::lasso(0.0),
                             default_init(d, LossSpec::squared()));
    CHECK(th.sup_distance(full.theta) < 1e-10);
  }
}

TEST_CASE("signal-free tuning keeps the support empty most of the time") {
  int empty = 0;
  const int reps = 50;
  TuneOptions topt;
  topt.grid_size = 25;
  for (int r = 0; r < reps; ++r) {
    Rng rng(1000 + static_cast<std::uint64_t>(r));
    SurvivalDataset train, val;
    auto draw = [&](Index n) {
      SurvivalDataset d;
      d.y.resize(n);
      d.delta.resize(n);
      d.x.resize(n, 5);
      for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < 5; ++j) d.x(i, j) = rng.normal();
        const double t = rng.normal();  // beta_true = 0
        const double c = 0.7 + rng.normal();
        d.y[i] = std::min(t, c);
        d.delta[i] = t <= c ? 1 : 0;
      }
      if ((d.delta.array() == 1).count() == 0) d.delta[0] = 1;
      return d;
    };
    train = draw(60);
    val = draw(40);
    const auto res = tune(train, val, LossSpec::squared(), PenaltyKind::Lasso, false, Tuning::VE2, topt);
    if (res.support.empty()) ++empty;
  }
  CHECK(empty >= static_cast<int>(0.8 * reps));
}

TEST_CASE("somers_d pinned examples and properties") {
  Vector y(3), f(3), g(3);
  y << 1, 2, 3;
  f << 1, 2, 3;
  g << 3, 2, 1;
  IntVector all1(3);
  all1 << 1, 1, 1;
  CHECK(somers_d(f, y, all1) == 1.0);
  CHECK(somers_d(g, y, all1) == -1.0);

  // pair whose smaller observed time is censored is unusable
  Vector y2(2), f2(2);
  y2 << 1, 2;
  f2 << 5, 7;
  IntVector d2(2);
  d2 << 0, 1;
  CHECK_THROWS_AS(somers_d(f2, y2, d2), std::invalid_argument);

  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    auto d = oracle::random_censored_dataset(rng, 30, 1);
    const double a = somers_d(d.x.col(0), d.y, d.delta);
    const double b = somers_d(-d.x.col(0), d.y, d.delta);
    CHECK(a == -b);
    CHECK(a >= -1.0);
    CHECK(a <= 1.0);
  }
}

TEST_CASE("screen pinned behaviors") {
  SECTION("default keep count follows floor(n / ln n)") {
    CHECK(default_screen_count(252) == 45);
  }
  SECTION("keeps everything when p <= d_n") {
    Rng rng(10);
    auto d = oracle::random_censored_dataset(rng, 100, 3);
    const auto res = screen(d);
    CHECK(res.kept.size() == 3);
  }
  SECTION("a perfectly concordant feature wins at d_n = 1") {
    Rng rng(11);
    auto d = oracle::random_censored_dataset(rng, 60, 4);
    d.x.col(2) = d.y;  // perfect concordance with the observed times
    const auto res = screen(d, Index{1});
    REQUIRE(res.kept.size() == 1);
    CHECK(res.kept[0] == 2);
  }
  SECTION("monotone transformations do not change the scores") {
    Rng rng(12);
    auto d = oracle::random_censored_dataset(rng, 40, 2);
    auto d2 = d;
    d2.x.col(0) = d.x.col(0).array().exp();
    const auto a = screen(d, Index{2});
    const auto b = screen(d2, Index{2});
    CHECK(a.scores[0] == b.scores[0]);
    CHECK(a.kept == b.kept);
  }
}

TEST_CASE("standardization returns coefficients on the input scale") {
  Rng rng(13);
  auto train = oracle::random_censored_dataset(rng, 60, 3);
  auto scaled = train;
  scaled.x.col(1) *= 1000.0;
  TuneOptions topt;
  topt.grid_size = 12;
  const auto path = fit_lambda_path(train, LossSpec::squared(), PenaltyKind::Lasso, topt);
  const auto path2 = fit_lambda_path(scaled, LossSpec::squared(), PenaltyKind::Lasso, topt);
  REQUIRE(path.points.size() == path2.points.size());
  for (std::size_t i = 0; i < path.points.size(); ++i) {
    const auto& a = path.points[i].theta;
    const auto& b = path2.points[i].theta;
    CHECK_THAT(b.alpha, Catch::Matchers::WithinAbs(a.alpha, 1e-7));
    CHECK_THAT(b.beta[0], Catch::Matchers::WithinAbs(a.beta[0], 1e-7));
    CHECK_THAT(b.beta[1] * 1000.0, Catch::Matchers::WithinAbs(a.beta[1], 1e-7));
    CHECK_THAT(b.beta[2], Catch::Matchers::WithinAbs(a.beta[2], 1e-7));
  }
}
