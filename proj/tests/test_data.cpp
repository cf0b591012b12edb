#include "doctest.h"

#include "osproto/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

using namespace osproto;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "osproto_test_data";
  fs::create_directories(dir);
  return dir / name;
}

const Dataset& default_dataset() {
  static const Dataset ds = gen_synthetic(SyntheticSpec{});
  return ds;
}

std::set<int> as_set(const std::vector<int>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("gen_synthetic defaults") {
  const auto& ds = default_dataset();
  CHECK(ds.size() == 6000);
  CHECK(ds.dim == 16);
  CHECK(ds.split.base.size() == 64);
  CHECK(ds.split.val.size() == 16);
  CHECK(ds.split.test.size() == 20);

  std::set<int> all;
  for (const auto* g : {&ds.split.base, &ds.split.val, &ds.split.test})
    for (int c : *g) CHECK(all.insert(c).second);
  CHECK(all.size() == 100u);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 99);
  for (const auto& members : ds.by_category()) CHECK(members.size() == 60u);
}

TEST_CASE("gen_synthetic is deterministic") {
  SyntheticSpec spec;
  spec.n_categories = 12;
  spec.per_category = 25;
  spec.seed = 4;
  save_dataset(gen_synthetic(spec), scratch("a.txt"));
  save_dataset(gen_synthetic(spec), scratch("b.txt"));
  CHECK(slurp(scratch("a.txt")) == slurp(scratch("b.txt")));
  spec.seed = 5;
  save_dataset(gen_synthetic(spec), scratch("c.txt"));
  CHECK(slurp(scratch("a.txt")) != slurp(scratch("c.txt")));
}

TEST_CASE("zero intra-class scale collapses categories to their means") {
  SyntheticSpec spec;
  spec.n_categories = 8;
  spec.per_category = 10;
  spec.intra_scale = 0.0;
  const auto ds = gen_synthetic(spec);
  for (const auto& members : ds.by_category())
    for (int i : members) CHECK(identical(ds.inputs.col(i), ds.inputs.col(members.front())));
  CHECK_FALSE(identical(ds.inputs.col(ds.by_category()[0][0]), ds.inputs.col(ds.by_category()[1][0])));
}

TEST_CASE("gen_synthetic rejects infeasible requests") {
  SyntheticSpec spec;
  spec.n_categories = 2;
  CHECK_THROWS_AS(gen_synthetic(spec), Error);
  spec = SyntheticSpec{};
  spec.split_fractions = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(gen_synthetic(spec), Error);
  spec.split_fractions = {1.0, 0.0, 0.0};
  CHECK_THROWS_AS(gen_synthetic(spec), Error);
  spec = SyntheticSpec{};
  spec.intra_scale = -1;
  CHECK_THROWS_AS(gen_synthetic(spec), Error);
}

TEST_CASE("dataset file format") {
  SyntheticSpec spec;
  spec.n_categories = 5;
  spec.per_category = 3;
  spec.dim = 2;
  spec.split_fractions = {0.6, 0.2, 0.2};
  const auto ds = gen_synthetic(spec);
  const auto path = scratch("fmt.txt");
  save_dataset(ds, path);

  std::istringstream in(slurp(path));
  std::string line;
  std::getline(in, line);
  CHECK(line == "OSPROTO-DATA v1");
  std::getline(in, line);
  CHECK(line == "classes=5 dim=2");
  std::getline(in, line);
  CHECK(line.rfind("split.base=", 0) == 0);
  std::getline(in, line);
  CHECK(line.rfind("split.val=", 0) == 0);
  std::getline(in, line);
  CHECK(line.rfind("split.test=", 0) == 0);
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    int cat = -1;
    double x = 0, y = 0;
    CHECK(bool(row >> cat >> x >> y));
    ++rows;
  }
  CHECK(rows == 15);

  const auto back = load_dataset(path);
  CHECK(identical(back.inputs, ds.inputs));
  CHECK(back.labels == ds.labels);
  CHECK(back.split.base == ds.split.base);
  CHECK(back.split.test == ds.split.test);
}

TEST_CASE("load_dataset diagnostics") {
  auto write = [](const std::string& name, const std::string& body) {
    const auto p = scratch(name);
    std::ofstream(p, std::ios::binary) << body;
    return p;
  };
  const std::string head = "OSPROTO-DATA v1\nclasses=3 dim=2\nsplit.base=0\nsplit.val=1\nsplit.test=2\n";
  CHECK_NOTHROW(load_dataset(write("ok.txt", head + "0 1 2\n1 3 4\n2 5 6\n")));
  CHECK_THROWS_AS(load_dataset(write("v2.txt", "OSPROTO-DATA v2\n")), Error);
  CHECK_THROWS_AS(load_dataset(write("short.txt", head + "0 1\n")), Error);
  CHECK_THROWS_AS(load_dataset(write("label.txt", head + "7 1 2\n")), Error);
  CHECK_THROWS_AS(load_dataset(write("twice.txt",
                                     "OSPROTO-DATA v1\nclasses=3 dim=2\nsplit.base=0 1\nsplit.val=1\n"
                                     "split.test=2\n0 1 2\n")),
                  Error);
  CHECK_THROWS_AS(load_dataset(write("cover.txt",
                                     "OSPROTO-DATA v1\nclasses=3 dim=2\nsplit.base=0\nsplit.val=\n"
                                     "split.test=2\n0 1 2\n")),
                  Error);
  CHECK_THROWS_AS(load_dataset(scratch("missing.txt")), Error);
}

TEST_CASE("sample_episode shape") {
  const auto& ds = default_dataset();
  RngStream rng(0, "eval-task", 0);
  const auto t = sample_episode(ds, Pool::test, EpisodeShape{}, rng);
  CHECK(t.support.cols() == 5);
  CHECK(t.closed_queries.cols() == 75);
  CHECK(t.open_queries.cols() == 75);
  CHECK(t.support_labels == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(t.closed_labels.size() == 75u);

  RngStream r2(0, "eval-task", 0);
  const auto closed_only = sample_episode(ds, Pool::test, EpisodeShape{5, 1, 15, 0, 0}, r2);
  CHECK(closed_only.open_queries.cols() == 0);
  CHECK(closed_only.open_categories.empty());
}

TEST_CASE("sample_episode determinism") {
  const auto& ds = default_dataset();
  RngStream a(3, "episode", 7), b(3, "episode", 7), c(3, "episode", 8);
  const auto ta = sample_episode(ds, Pool::base, EpisodeShape{}, a);
  const auto tb = sample_episode(ds, Pool::base, EpisodeShape{}, b);
  const auto tc = sample_episode(ds, Pool::base, EpisodeShape{}, c);
  CHECK(ta.support_index == tb.support_index);
  CHECK(ta.closed_index == tb.closed_index);
  CHECK(ta.open_index == tb.open_index);
  CHECK(identical(ta.support, tb.support));
  CHECK(ta.closed_categories != tc.closed_categories);
}

TEST_CASE("sampled episodes satisfy the task invariants") {
  const auto& ds = default_dataset();
  const EpisodeShape shapes[] = {{5, 1, 15, 5, 15}, {5, 5, 10, 5, 10}, {2, 3, 4, 7, 2}};
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto& shape = shapes[i % 3];
    const Pool pool = (i % 2 == 0) ? Pool::base : Pool::test;
    RngStream rng(11, "invariants", i);
    const auto t = sample_episode(ds, pool, shape, rng);
    const auto closed = as_set(t.closed_categories);
    const auto open = as_set(t.open_categories);
    const auto pool_set = as_set(ds.split.pool(pool));
    REQUIRE(closed.size() == std::size_t(shape.n_way));
    REQUIRE(open.size() == std::size_t(shape.n_open));
    for (int c : open) CHECK(closed.count(c) == 0);
    for (int c : closed) CHECK(pool_set.count(c) == 1);
    for (int c : open) CHECK(pool_set.count(c) == 1);

    std::set<int> used;
    for (const auto* idx : {&t.support_index, &t.closed_index, &t.open_index})
      for (int e : *idx) CHECK(used.insert(e).second);
    for (std::size_t j = 0; j < t.support_index.size(); ++j)
      CHECK(ds.labels[std::size_t(t.support_index[j])] ==
            t.closed_categories[std::size_t(t.support_labels[j])]);
    for (std::size_t j = 0; j < t.closed_index.size(); ++j)
      CHECK(ds.labels[std::size_t(t.closed_index[j])] ==
            t.closed_categories[std::size_t(t.closed_labels[j])]);
    for (int e : t.open_index) CHECK(open.count(ds.labels[std::size_t(e)]) == 1);
  }
}

TEST_CASE("sample_episode errors") {
  const auto& ds = default_dataset();
  RngStream rng(0, "err", 0);
  CHECK_THROWS_AS(sample_episode(ds, Pool::test, EpisodeShape{15, 1, 15, 6, 15}, rng), Error);
  CHECK_THROWS_AS(sample_episode(ds, Pool::base, EpisodeShape{5, 50, 15, 5, 15}, rng), Error);
  CHECK_THROWS_AS(sample_episode(ds, Pool::base, EpisodeShape{5, 1, 15, 5, 61}, rng), Error);
  CHECK_THROWS_AS(sample_episode(ds, Pool::base, EpisodeShape{0, 1, 15, 5, 15}, rng), Error);
}

TEST_CASE("sample_base_openset") {
  const auto& ds = default_dataset();
  RngStream rng(0, "stage2-open", 0);
  CHECK(sample_base_openset(ds, 0, rng).cols() == 0);

  RngStream a(1, "stage2-open", 3), b(1, "stage2-open", 3);
  const Mat x = sample_base_openset(ds, 25, a);
  CHECK(identical(x, sample_base_openset(ds, 25, b)));
  REQUIRE(x.cols() == 25);

  const auto base = as_set(ds.split.base);
  std::set<int> picked;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    int match = -1;
    for (Eigen::Index e = 0; e < ds.size(); ++e)
      if (identical(ds.inputs.col(e), x.col(j))) match = int(e);
    REQUIRE(match >= 0);
    CHECK(base.count(ds.labels[std::size_t(match)]) == 1);
    CHECK(picked.insert(match).second);
  }

  RngStream c(2, "stage2-open", 0);
  const Mat limited = sample_base_openset(ds, 30, c, 1);
  const auto& members = ds.by_category()[std::size_t(ds.split.base.front())];
  for (Eigen::Index j = 0; j < limited.cols(); ++j) {
    bool found = false;
    for (int e : members) found = found || identical(ds.inputs.col(e), limited.col(j));
    CHECK(found);
  }

  CHECK_THROWS_AS(sample_base_openset(ds, 64 * 60 + 1, rng), Error);
  CHECK_THROWS_AS(sample_base_openset(ds, 61, rng, 1), Error);
  CHECK(sample_base_openset(ds, 5, rng, 64).cols() == 5);
  CHECK_THROWS_AS(sample_base_openset(ds, 5, rng, 65), Error);
}

TEST_CASE("pseudo_partition") {
  const auto& ds = default_dataset();
  RngStream trng(0, "task", 0);
  const auto t = sample_episode(ds, Pool::test, EpisodeShape{5, 5, 15, 5, 15}, trng);

  bool saw_three = false;
  for (std::uint64_t i = 0; i < 100 && !saw_three; ++i) {
    RngStream rng(0, "stage2-pseudo", i);
    const auto part = pseudo_partition(t, rng);
    if (part.held_out != 3) continue;
    saw_three = true;
    CHECK(part.retained_support.cols() == 20);
    CHECK(part.pseudo_open_support.cols() == 5);
    CHECK(as_set(part.retained_labels) == std::set<int>{0, 1, 2, 4});
    for (int k = 0; k < 5; ++k)
      CHECK(identical(part.pseudo_open_support.col(k), t.support.col(15 + k)));
  }
  CHECK(saw_three);

  RngStream t2rng(0, "task", 1);
  const auto t2 = sample_episode(ds, Pool::test, EpisodeShape{2, 1, 15, 2, 15}, t2rng);
  RngStream prng(0, "p", 0);
  const auto p2 = pseudo_partition(t2, prng);
  CHECK(p2.retained_support.cols() == 1);
  CHECK(p2.pseudo_open_support.cols() == 1);
  CHECK(p2.retained_labels.front() != p2.held_out);

  RngStream f1(0, "task", 2);
  const auto t1 = sample_episode(ds, Pool::test, EpisodeShape{1, 1, 15, 2, 15}, f1);
  CHECK_THROWS_AS(pseudo_partition(t1, prng), Error);
}

TEST_CASE("pseudo_partition holds out uniformly") {
  const auto& ds = default_dataset();
  RngStream trng(0, "task", 0);
  const auto t = sample_episode(ds, Pool::test, EpisodeShape{}, trng);
  RngStream rng(0, "stage2-pseudo", 0);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 10000; ++i) ++counts[std::size_t(pseudo_partition(t, rng).held_out)];
  for (int c : counts) CHECK(std::abs(c / 10000.0 - 0.2) <= 0.02);
}
