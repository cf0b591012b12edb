#include "osproto/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace osproto {

const std::vector<int>& Split::pool(Pool p) const {
  switch (p) {
    case Pool::base: return base;
    case Pool::val: return val;
    case Pool::test: return test;
  }
  throw Error("unknown pool");
}

std::vector<int> Dataset::pool_examples(Pool p) const {
  std::vector<int> out;
  for (int c : split.pool(p)) {
    const auto& idx = by_category_.at(std::size_t(c));
    out.insert(out.end(), idx.begin(), idx.end());
  }
  return out;
}

void Dataset::finalize() {
  require(dim >= 1, "dataset: dim must be positive");
  require(n_categories >= 1, "dataset: no categories");
  require(inputs.rows() == dim, "dataset: input rows != dim");
  require(std::size_t(inputs.cols()) == labels.size(), "dataset: label count mismatch");
  require(inputs.allFinite(), "dataset: non-finite input");

  std::set<int> seen;
  for (const auto* group : {&split.base, &split.val, &split.test})
    for (int c : *group) {
      require(c >= 0 && c < n_categories, "dataset: split id out of range: " + std::to_string(c));
      require(seen.insert(c).second, "dataset: category " + std::to_string(c) + " in two splits");
    }
  require(int(seen.size()) == n_categories, "dataset: splits do not cover every category");

  by_category_.assign(std::size_t(n_categories), {});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    require(c >= 0 && c < n_categories, "dataset: label out of range: " + std::to_string(c));
    by_category_[std::size_t(c)].push_back(int(i));
  }
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  require(spec.n_categories >= 3, "gen_synthetic: need at least 3 categories");
  require(spec.per_category >= 1, "gen_synthetic: per_category must be positive");
  require(spec.dim >= 1, "gen_synthetic: dim must be positive");
  require(spec.mean_scale >= 0.0 && spec.intra_scale >= 0.0, "gen_synthetic: negative scale");
  double frac_sum = 0.0;
  for (double f : spec.split_fractions) {
    require(f >= 0.0, "gen_synthetic: negative split fraction");
    frac_sum += f;
  }
  require(std::abs(frac_sum - 1.0) < 1e-9, "gen_synthetic: split fractions must sum to 1");

  const int n = spec.n_categories;
  const int n_base = int(std::lround(spec.split_fractions[0] * n));
  const int n_val = int(std::lround(spec.split_fractions[1] * n));
  const int n_test = n - n_base - n_val;
  require(n_base >= 1 && n_val >= 0 && n_test >= 1, "gen_synthetic: infeasible split sizes");

  Dataset ds;
  ds.dim = spec.dim;
  ds.n_categories = n;

  auto mean_rng = rng_stream(spec.seed, "synthetic-means", 0);
  const Mat means = normal_matrix(mean_rng, spec.dim, n, spec.mean_scale);

  ds.inputs.resize(spec.dim, Eigen::Index(n) * spec.per_category);
  ds.labels.reserve(std::size_t(n) * std::size_t(spec.per_category));
  for (int c = 0; c < n; ++c) {
    auto rng = rng_stream(spec.seed, "synthetic-samples", std::uint64_t(c));
    for (int k = 0; k < spec.per_category; ++k) {
      const auto col = Eigen::Index(c) * spec.per_category + k;
      for (Eigen::Index j = 0; j < spec.dim; ++j)
        ds.inputs(j, col) = means(j, c) + spec.intra_scale * rng.normal();
      ds.labels.push_back(c);
    }
  }

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) order[std::size_t(c)] = c;
  auto split_rng = rng_stream(spec.seed, "synthetic-split", 0);
  split_rng.shuffle(order.begin(), order.end());
  ds.split.base.assign(order.begin(), order.begin() + n_base);
  ds.split.val.assign(order.begin() + n_base, order.begin() + n_base + n_val);
  ds.split.test.assign(order.begin() + n_base + n_val, order.end());
  for (auto* g : {&ds.split.base, &ds.split.val, &ds.split.test}) std::sort(g->begin(), g->end());

  ds.finalize();
  return ds;
}

namespace {

std::string join_ids(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += std::to_string(ids[i]);
  }
  return out;
}

std::vector<int> parse_ids(const std::string& text) {
  std::vector<int> ids;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == tok.size(), "dataset: malformed id '" + tok + "'");
    ids.push_back(v);
  }
  return ids;
}

std::string expect_prefix(const std::string& line, const std::string& prefix, int line_no) {
  require(line.rfind(prefix, 0) == 0,
          "dataset line " + std::to_string(line_no) + ": expected '" + prefix + "'");
  return line.substr(prefix.size());
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), "cannot write dataset file " + path.string());
  out << "OSPROTO-DATA v1\n";
  out << "classes=" << ds.n_categories << " dim=" << ds.dim << "\n";
  out << "split.base=" << join_ids(ds.split.base) << "\n";
  out << "split.val=" << join_ids(ds.split.val) << "\n";
  out << "split.test=" << join_ids(ds.split.test) << "\n";
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    out << ds.labels[std::size_t(i)];
    for (Eigen::Index j = 0; j < ds.dim; ++j) out << ' ' << format_double(ds.inputs(j, i));
    out << '\n';
  }
  require(bool(out), "failed writing dataset file " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), "cannot read dataset file " + path.string());
  std::string line;
  require(bool(std::getline(in, line)), "dataset: empty file");
  require(line == "OSPROTO-DATA v1", "dataset: unsupported header '" + line + "'");

  Dataset ds;
  require(bool(std::getline(in, line)), "dataset: missing classes/dim line");
  {
    int classes = 0;
    long dim = 0;
    char trailing = 0;
    require(std::sscanf(line.c_str(), "classes=%d dim=%ld%c", &classes, &dim, &trailing) == 2,
            "dataset line 2: expected 'classes=<int> dim=<int>'");
    ds.n_categories = classes;
    ds.dim = dim;
  }
  const char* keys[] = {"split.base=", "split.val=", "split.test="};
  std::vector<int>* groups[] = {&ds.split.base, &ds.split.val, &ds.split.test};
  for (int i = 0; i < 3; ++i) {
    require(bool(std::getline(in, line)), "dataset: missing split line");
    *groups[i] = parse_ids(expect_prefix(line, keys[i], 3 + i));
  }

  std::vector<double> values;
  int line_no = 5;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string tok;
    require(bool(row >> tok), "dataset line " + std::to_string(line_no) + ": empty row");
    ds.labels.push_back(parse_ids(tok).at(0));
    Eigen::Index count = 0;
    while (row >> tok) {
      values.push_back(parse_double(tok));
      ++count;
    }
    require(count == ds.dim, "dataset line " + std::to_string(line_no) + ": expected " +
                                 std::to_string(ds.dim) + " values, got " + std::to_string(count));
  }
  ds.inputs = Eigen::Map<const Mat>(values.data(), ds.dim, Eigen::Index(ds.labels.size()));
  ds.finalize();
  return ds;
}

namespace {

std::vector<int> draw_without_replacement(const std::vector<int>& from, int count, RngStream& rng) {
  require(count >= 0 && std::size_t(count) <= from.size(), "sampler: not enough items");
  std::vector<int> pool = from;
  // Partial Fisher-Yates: first `count` slots become the sample.
  for (int i = 0; i < count; ++i) {
    const auto j = std::size_t(i) + rng.uniform_index(pool.size() - std::size_t(i));
    std::swap(pool[std::size_t(i)], pool[j]);
  }
  pool.resize(std::size_t(count));
  return pool;
}

Mat gather(const Dataset& ds, const std::vector<int>& idx) {
  Mat out(ds.dim, Eigen::Index(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(Eigen::Index(j)) = ds.inputs.col(idx[j]);
  return out;
}

}  // namespace

Task sample_episode(const Dataset& ds, Pool pool, const EpisodeShape& shape, RngStream& rng) {
  require(shape.n_way >= 1 && shape.k_shot >= 1, "sample_episode: n_way and k_shot must be >= 1");
  require(shape.q_closed >= 0 && shape.n_open >= 0 && shape.q_open >= 0,
          "sample_episode: negative query counts");
  const auto& cats = ds.split.pool(pool);
  require(int(cats.size()) >= shape.n_way + shape.n_open,
          "sample_episode: pool has " + std::to_string(cats.size()) + " categories, need " +
              std::to_string(shape.n_way + shape.n_open));

  const auto chosen = draw_without_replacement(cats, shape.n_way + shape.n_open, rng);
  Task t;
  t.n_way = shape.n_way;
  t.k_shot = shape.k_shot;
  t.closed_categories.assign(chosen.begin(), chosen.begin() + shape.n_way);
  t.open_categories.assign(chosen.begin() + shape.n_way, chosen.end());

  for (int n = 0; n < shape.n_way; ++n) {
    const auto& members = ds.by_category()[std::size_t(t.closed_categories[std::size_t(n)])];
    require(int(members.size()) >= shape.k_shot + shape.q_closed,
            "sample_episode: category " + std::to_string(t.closed_categories[std::size_t(n)]) +
                " has too few examples");
    const auto picks = draw_without_replacement(members, shape.k_shot + shape.q_closed, rng);
    for (int k = 0; k < shape.k_shot; ++k) {
      t.support_index.push_back(picks[std::size_t(k)]);
      t.support_labels.push_back(n);
    }
    for (int q = shape.k_shot; q < shape.k_shot + shape.q_closed; ++q) {
      t.closed_index.push_back(picks[std::size_t(q)]);
      t.closed_labels.push_back(n);
    }
  }
  for (int c : t.open_categories) {
    const auto& members = ds.by_category()[std::size_t(c)];
    require(int(members.size()) >= shape.q_open,
            "sample_episode: open category " + std::to_string(c) + " has too few examples");
    const auto picks = draw_without_replacement(members, shape.q_open, rng);
    t.open_index.insert(t.open_index.end(), picks.begin(), picks.end());
  }
  t.support = gather(ds, t.support_index);
  t.closed_queries = gather(ds, t.closed_index);
  t.open_queries = gather(ds, t.open_index);
  return t;
}

Mat sample_base_openset(const Dataset& ds, int m, RngStream& rng, int category_limit) {
  std::vector<int> eligible;
  const auto& base = ds.split.base;
  require(category_limit < 0 || std::size_t(category_limit) <= base.size(),
          "sample_base_openset: category limit " + std::to_string(category_limit) + " exceeds " +
              std::to_string(base.size()) + " base categories");
  const std::size_t cats = category_limit < 0 ? base.size() : std::size_t(category_limit);
  for (std::size_t i = 0; i < cats; ++i) {
    const auto& idx = ds.by_category()[std::size_t(base[i])];
    eligible.insert(eligible.end(), idx.begin(), idx.end());
  }
  if (m == 0) return Mat(ds.dim, 0);
  require(!eligible.empty(), "sample_base_openset: base split is empty");
  require(m > 0 && std::size_t(m) <= eligible.size(),
          "sample_base_openset: requested " + std::to_string(m) + " of " +
              std::to_string(eligible.size()) + " base examples");
  return gather(ds, draw_without_replacement(eligible, m, rng));
}

PseudoPartition pseudo_partition(const Task& task, RngStream& rng) {
  require(task.n_way >= 2, "pseudo_partition: need n_way >= 2");
  PseudoPartition part;
  part.held_out = int(rng.uniform_index(std::uint64_t(task.n_way)));
  std::vector<Eigen::Index> kept, open;
  for (std::size_t j = 0; j < task.support_labels.size(); ++j) {
    if (task.support_labels[j] == part.held_out) {
      open.push_back(Eigen::Index(j));
    } else {
      kept.push_back(Eigen::Index(j));
      part.retained_labels.push_back(task.support_labels[j]);
    }
  }
  part.retained_support = task.support(Eigen::all, kept);
  part.pseudo_open_support = task.support(Eigen::all, open);
  return part;
}

}  // namespace osproto
