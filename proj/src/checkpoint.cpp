#include "osproto/checkpoint.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace osproto {

namespace {

std::string row_major(const Mat& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (!out.empty()) out.push_back(' ');
      out += format_double(m(i, j));
    }
  return out;
}

void put(std::ostringstream& out, const std::string& key, const std::string& value) {
  out << key << " = " << value << '\n';
}

class Reader {
 public:
  explicit Reader(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    require(bool(std::getline(in, line)), "checkpoint: empty file");
    if (line != kCheckpointHeader) {
      if (line.rfind("OSPROTO-CKPT ", 0) == 0)
        throw Error("checkpoint: unsupported version '" + line.substr(13) + "' (reader is v1)");
      throw Error("checkpoint: missing header");
    }
    int line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto eq = line.find(" = ");
      require(eq != std::string::npos,
              "checkpoint line " + std::to_string(line_no) + ": expected 'key = value'");
      const auto key = line.substr(0, eq);
      require(values_.emplace(key, line.substr(eq + 3)).second,
              "checkpoint: duplicate key '" + key + "'");
    }
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  const std::string& raw(const std::string& key) {
    const auto it = values_.find(key);
    require(it != values_.end(), "checkpoint: missing key '" + key + "' (truncated file?)");
    used_.insert(key);
    return it->second;
  }

  std::vector<double> numbers(const std::string& key) {
    std::vector<double> out;
    std::istringstream in(raw(key));
    std::string tok;
    while (in >> tok) {
      try {
        out.push_back(parse_double(tok));
      } catch (const Error& e) {
        throw Error("checkpoint: key '" + key + "': " + e.what());
      }
    }
    return out;
  }

  double scalar(const std::string& key) {
    const auto v = numbers(key);
    require(v.size() == 1, "checkpoint: key '" + key + "' expects one value");
    return v[0];
  }

  long integer(const std::string& key) {
    const auto& s = raw(key);
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == s.size() && !s.empty(), "checkpoint: key '" + key + "' expects an integer");
    return v;
  }

  Mat matrix(const std::string& key, Eigen::Index rows, Eigen::Index cols) {
    const auto v = numbers(key);
    require(Eigen::Index(v.size()) == rows * cols,
            "checkpoint: shape mismatch for '" + key + "': declared " + std::to_string(rows) + "x" +
                std::to_string(cols) + ", found " + std::to_string(v.size()) + " values");
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[std::size_t(i * cols + j)];
    return m;
  }

  void check_all_used() const {
    for (const auto& [k, v] : values_)
      require(used_.count(k) > 0, "checkpoint: unknown key '" + k + "'");
  }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

}  // namespace

std::string checkpoint_to_string(const Checkpoint& ckpt) {
  ckpt.encoder.validate();
  std::ostringstream out;
  out << kCheckpointHeader << '\n';
  std::string dims;
  for (auto d : ckpt.encoder.layer_dims) dims += (dims.empty() ? "" : " ") + std::to_string(d);
  put(out, "encoder.layer_dims", dims);
  for (std::size_t l = 0; l < ckpt.encoder.num_layers(); ++l) {
    put(out, "encoder.W" + std::to_string(l), row_major(ckpt.encoder.weights[l]));
    put(out, "encoder.b" + std::to_string(l), row_major(ckpt.encoder.biases[l]));
  }
  put(out, "has_head", ckpt.head ? "1" : "0");
  if (ckpt.head) {
    put(out, "head.c_phi", row_major(ckpt.head->c_phi));
    put(out, "head.a", format_double(ckpt.head->a));
    put(out, "head.b", format_double(ckpt.head->b));
  }
  put(out, "has_classifier", ckpt.classifier ? "1" : "0");
  if (const auto& c = ckpt.classifier) {
    put(out, "classifier.kind", std::string(to_string(c->kind)));
    put(out, "classifier.n_way", std::to_string(c->n_way()));
    put(out, "classifier.dim", std::to_string(c->w.rows()));
    // Stored as (N+1) x D: one classifier vector per line-major row.
    put(out, "classifier.w", row_major(c->w.transpose()));
    put(out, "classifier.a", format_double(c->a));
    put(out, "classifier.b", format_double(c->b));
    put(out, "classifier.linear_bias", row_major(c->linear_bias));
    put(out, "classifier.frozen_open", c->frozen_open ? "1" : "0");
    put(out, "classifier.closed_only", c->closed_only ? "1" : "0");
  }
  put(out, "provenance.config_hash", ckpt.config_hash.empty() ? "-" : ckpt.config_hash);
  put(out, "provenance.seed", std::to_string(ckpt.seed));
  put(out, "provenance.episodes", std::to_string(ckpt.episodes));
  return out.str();
}

Checkpoint checkpoint_from_string(const std::string& text) {
  Reader r(text);
  Checkpoint ck;
  std::vector<Eigen::Index> dims;
  for (double d : r.numbers("encoder.layer_dims")) {
    require(d >= 1 && d == std::floor(d), "checkpoint: bad encoder.layer_dims entry");
    dims.push_back(Eigen::Index(d));
  }
  ck.encoder = EncoderParams::zeros(dims);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    ck.encoder.weights[l] = r.matrix("encoder.W" + std::to_string(l), dims[l + 1], dims[l]);
    ck.encoder.biases[l] = r.matrix("encoder.b" + std::to_string(l), dims[l + 1], 1);
  }
  const auto dim = dims.back();
  if (r.integer("has_head")) {
    OpenSetHead h;
    h.c_phi = r.matrix("head.c_phi", dim, 1);
    h.a = r.scalar("head.a");
    h.b = r.scalar("head.b");
    ck.head = h;
  }
  if (r.integer("has_classifier")) {
    TaskClassifier c;
    c.kind = parse_head_kind(r.raw("classifier.kind"));
    const auto n = r.integer("classifier.n_way");
    const auto cdim = r.integer("classifier.dim");
    require(n >= 1 && cdim >= 1, "checkpoint: bad classifier shape");
    c.w = r.matrix("classifier.w", n + 1, cdim).transpose();
    c.a = r.scalar("classifier.a");
    c.b = r.scalar("classifier.b");
    c.linear_bias = r.matrix("classifier.linear_bias", n + 1, 1);
    c.frozen_open = r.integer("classifier.frozen_open") != 0;
    c.closed_only = r.integer("classifier.closed_only") != 0;
    ck.classifier = c;
  }
  ck.config_hash = r.raw("provenance.config_hash");
  if (ck.config_hash == "-") ck.config_hash.clear();
  ck.seed = std::stoull(r.raw("provenance.seed"));
  ck.episodes = r.integer("provenance.episodes");
  r.check_all_used();
  ck.encoder.validate();
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto text = checkpoint_to_string(ckpt);
  std::ofstream out(path, std::ios::binary);
  require(bool(out), "cannot write checkpoint " + path.string());
  out << text;
  require(bool(out), "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), "cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_string(buf.str());
}

}  // namespace osproto
