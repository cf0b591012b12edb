#include "doctest.h"
#include "desk_pipeline.hpp"

#include "osproto/eval.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

using namespace osproto;

namespace {

double pairwise_auroc(const std::vector<double>& open, const std::vector<double>& closed) {
  double s = 0.0;
  for (double o : open)
    for (double c : closed) s += o > c ? 1.0 : (o == c ? 0.5 : 0.0);
  return s / double(open.size() * closed.size());
}

std::vector<double> draw_scores(RngStream& rng, std::size_t n, bool coarse) {
  std::vector<double> v(n);
  for (auto& x : v) x = coarse ? double(rng.uniform_index(6)) / 5.0 : rng.uniform();
  return v;
}

Mat columns(std::initializer_list<std::initializer_list<double>> cols) {
  Mat m(Eigen::Index(cols.begin()->size()), Eigen::Index(cols.size()));
  Eigen::Index j = 0;
  for (const auto& c : cols) {
    Eigen::Index i = 0;
    for (double x : c) m(i++, j) = x;
    ++j;
  }
  return m;
}

Vec v3(double a, double b, double c) { return (Vec(3) << a, b, c).finished(); }

}  // namespace

TEST_CASE("top1_acc examples") {
  CHECK(top1_acc(columns({{0.2, 0.3, 0.5}}), {1}) == 1.0);
  CHECK(top1_acc(columns({{1, 0, 0}, {0, 1, 0}}), {0, 1}) == 1.0);
  CHECK(top1_acc(columns({{0.6, 0.4, 0}, {0.4, 0.6, 0}}), {1, 1}) == 0.5);
  CHECK_THROWS_AS(top1_acc(Mat(3, 0), {}), Error);
  CHECK_THROWS_AS(top1_acc(columns({{0.2, 0.3, 0.5}}), {2}), Error);
}

TEST_CASE("auroc examples") {
  CHECK(auroc({0.9, 0.8}, {0.1, 0.2}) == 1.0);
  CHECK(auroc({0.9, 0.3}, {0.5, 0.1}) == 0.75);
  CHECK(auroc({0.5}, {0.5}) == 0.5);
  CHECK_THROWS_AS(auroc({}, {0.5}), Error);
  CHECK_THROWS_AS(auroc({0.5}, {}), Error);
}

TEST_CASE("auroc matches the exhaustive pairwise count") {
  RngStream rng(0, "auroc-oracle", 0);
  for (int trial = 0; trial < 100; ++trial) {
    const bool coarse = trial % 3 == 0;
    const auto open = draw_scores(rng, 1 + rng.uniform_index(200), coarse);
    const auto closed = draw_scores(rng, 1 + rng.uniform_index(200), coarse);
    const double a = auroc(open, closed);
    CHECK(std::abs(a - pairwise_auroc(open, closed)) <= 1e-12);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);

    auto squash = [](std::vector<double> v) {
      for (auto& x : v) x = std::exp(3.0 * x) - 7.0;
      return v;
    };
    CHECK(auroc(squash(open), squash(closed)) == a);
  }
}

TEST_CASE("threshold_free_detect examples and argmax property") {
  CHECK(threshold_free_detect(v3(0.3, 0.3, 0.4)));
  CHECK_FALSE(threshold_free_detect(v3(0.5, 0.0, 0.5)));
  CHECK_FALSE(threshold_free_detect(v3(0.665241, 0.244728, 0.090031)));

  RngStream rng(1, "detect", 0);
  for (int trial = 0; trial < 500; ++trial) {
    const auto n = Eigen::Index(1 + rng.uniform_index(6));
    Vec l(n + 1);
    for (Eigen::Index i = 0; i <= n; ++i) l(i) = double(rng.uniform_index(4));
    const Vec p = softmax(l);
    Eigen::Index arg = 0;
    p.maxCoeff(&arg);
    CHECK(threshold_free_detect(p) == (arg == n));
  }
}

TEST_CASE("f1_open examples") {
  CHECK(f1_open({true, false, true}, {true, false, true}) == 1.0);
  CHECK(f1_open({true, false, true, false}, {true, true, false, false}) == 0.5);
  CHECK(f1_open({false, false}, {false, false}) == 0.0);
  CHECK_THROWS_AS(f1_open({true}, {true, false}), Error);
}

TEST_CASE("ci95 examples") {
  auto r = ci95({1, 1, 1});
  CHECK(r.mean == 1.0);
  CHECK(r.half_width == 0.0);
  r = ci95({0, 2});
  CHECK(r.mean == 1.0);
  CHECK(r.half_width == doctest::Approx(1.96).epsilon(1e-15));
  r = ci95({5});
  CHECK(r.mean == 5.0);
  CHECK(r.half_width == 0.0);
  CHECK_THROWS_AS(ci95({}), Error);
}

TEST_CASE("variant names") {
  for (auto v : {EvalVariant::oal_ofl, EvalVariant::lite, EvalVariant::naive, EvalVariant::stage1_only,
                 EvalVariant::stage2_only})
    CHECK(parse_eval_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_eval_variant("stage3"), Error);
}

TEST_CASE("histogram binning") {
  Histogram h;
  h.add(0.0, false);
  h.add(0.049, false);
  h.add(0.05, true);
  h.add(1.0, true);
  CHECK(h.closed[0] == 2);
  CHECK(h.open[1] == 1);
  CHECK(h.open[19] == 1);
  CHECK(h.total() == 4);
}

TEST_CASE("aggregate recomposes per-task values") {
  RngStream rng(2, "agg", 0);
  std::vector<TaskMetrics> per;
  for (int i = 0; i < 37; ++i) per.push_back({rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()});
  const auto r = aggregate(per, Histogram{});
  double acc = 0, au = 0, det = 0, f1 = 0;
  for (const auto& t : per) acc += t.acc, au += t.auroc, det += t.detect_acc, f1 += t.f1;
  CHECK(std::abs(r.acc.mean - acc / 37) <= 1e-12);
  CHECK(std::abs(r.auroc.mean - au / 37) <= 1e-12);
  CHECK(std::abs(r.detect_acc.mean - det / 37) <= 1e-12);
  CHECK(std::abs(r.f1.mean - f1 / 37) <= 1e-12);
  CHECK(r.task_count == 37);
}

TEST_CASE("evaluate_tasks on a collapsed encoder") {
  const auto ds = gen_synthetic(SyntheticSpec{});
  Stage1Model m;
  m.encoder = EncoderParams::zeros({16, 8, 4});
  m.head.c_phi = Vec::Zero(4);
  EvalConfig cfg;
  cfg.variant = EvalVariant::oal_ofl;
  cfg.stage2.iterations = 0;
  cfg.task_count = 1;
  const auto r = evaluate_tasks(ds, m, cfg);
  REQUIRE(r.per_task.size() == 1u);
  CHECK(r.per_task[0].acc == doctest::Approx(0.2));
  CHECK(r.per_task[0].auroc == 0.5);
  CHECK(r.per_task[0].detect_acc == 0.5);
  CHECK(r.per_task[0].f1 == 0.0);
  CHECK(r.histogram.total() == 150);
}

TEST_CASE("evaluate_tasks is deterministic and independent of workers") {
  const auto ds = gen_synthetic(SyntheticSpec{});
  Stage1Model m;
  m.encoder = pretrain(ds, PretrainConfig{}, 0).encoder;
  RngStream rng(0, "head", 0);
  m.head = OpenSetHead::init(16, rng);
  EvalConfig cfg;
  cfg.stage2.iterations = 20;
  cfg.task_count = 9;
  for (auto v : {EvalVariant::oal_ofl, EvalVariant::lite, EvalVariant::naive, EvalVariant::stage2_only}) {
    cfg.variant = v;
    cfg.workers = 1;
    const auto one = evaluate_tasks(ds, m, cfg);
    cfg.workers = 4;
    const auto four = evaluate_tasks(ds, m, cfg);
    CHECK(one == four);
    CHECK(one.histogram.total() == 9 * 150);
  }
  cfg.master_seed = 1;
  const auto other = evaluate_tasks(ds, m, cfg);
  cfg.master_seed = 0;
  CHECK_FALSE(other == evaluate_tasks(ds, m, cfg));

  cfg.task_count = 0;
  CHECK_THROWS_AS(evaluate_tasks(ds, m, cfg), Error);
}

TEST_CASE("evaluate_tasks reports the failing task") {
  const auto ds = gen_synthetic(SyntheticSpec{});
  Stage1Model m;
  m.encoder = EncoderParams::zeros({16, 4});
  m.head.c_phi = Vec::Zero(4);
  EvalConfig cfg;
  cfg.variant = EvalVariant::lite;
  cfg.shape.n_way = 1;
  cfg.task_count = 3;
  try {
    evaluate_tasks(ds, m, cfg);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("task 0") != std::string::npos);
  }
}

TEST_CASE("metrics and histogram csv layout") {
  const auto dir = std::filesystem::temp_directory_path() / "osproto_eval_csv";
  std::filesystem::create_directories(dir);
  Histogram h;
  h.add(0.5, true);
  const auto r = aggregate({{1, 0.5, 0.25, 0}, {0.5, 1, 0.75, 1}}, h);
  write_metrics_csv(r, dir / "m.csv");
  write_histogram_csv(h, dir / "h.csv");
  std::ifstream m(dir / "m.csv");
  const std::string mtext{std::istreambuf_iterator<char>(m), {}};
  const std::string body = "task,acc,auroc,detect_acc,f1\n0,1,0.5,0.25,0\n1,0.5,1,0.75,1\nmean,0.75,0.75,0.5,0.5\n";
  REQUIRE(mtext.rfind(body, 0) == 0);
  // Two values at distance d: half width 1.96 * (d / sqrt 2) / sqrt 2 = 0.98 d.
  const std::string footer = mtext.substr(body.size());
  REQUIRE(footer.rfind("ci95,", 0) == 0);
  std::vector<double> hw;
  std::size_t pos = 5;
  while (pos < footer.size()) {
    const auto end = footer.find_first_of(",\n", pos);
    hw.push_back(parse_double(footer.substr(pos, end - pos)));
    pos = end + 1;
  }
  REQUIRE(hw.size() == 4u);
  CHECK(hw[0] == doctest::Approx(0.49).epsilon(1e-14));
  CHECK(hw[1] == doctest::Approx(0.49).epsilon(1e-14));
  CHECK(hw[2] == doctest::Approx(0.49).epsilon(1e-14));
  CHECK(hw[3] == doctest::Approx(0.98).epsilon(1e-14));
  std::ifstream hs(dir / "h.csv");
  std::string line;
  int rows = 0;
  std::getline(hs, line);
  CHECK(line == "bin_lo,bin_hi,closed_count,open_count");
  while (std::getline(hs, line)) {
    ++rows;
    if (rows == 11) CHECK(line == "0.5,0.55,0,1");
  }
  CHECK(rows == 20);
}

TEST_CASE("lite accuracy is at least that of the Stage-1 classifier") {
  const auto run = desk::run(0);
  const auto s1 = desk::evaluate(run, EvalVariant::stage1_only);
  const auto lite = desk::evaluate(run, EvalVariant::lite);
  INFO("stage1-only acc " << s1.acc.mean << ", lite acc " << lite.acc.mean);
  CHECK(lite.acc.mean >= s1.acc.mean);
}
