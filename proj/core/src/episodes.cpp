#include "mtm/episodes.hpp"

#include <algorithm>
#include <limits>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mtm/error.hpp"

namespace mtm {

using json = nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
  case Split::train: return "train";
  case Split::val: return "val";
  case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

LabeledExample ClassRecord::example(std::size_t i) const {
  auto row = examples.row(i);
  return {std::vector<double>(row.begin(), row.end()), class_id, coarse_id};
}

// ---------------------------------------------------------------------------
// Dataset

void Dataset::validate() const {
  if (feature_dim == 0) throw DataError("dataset '" + name + "': feature_dim must be positive");

  std::map<int, const ClassRecord*> by_id;
  for (const auto& c : classes) {
    if (!by_id.emplace(c.class_id, &c).second) {
      throw DataError("duplicate class id " + std::to_string(c.class_id));
    }
    if (c.examples.rows() > 0 && c.examples.cols() != feature_dim) {
      throw DataError("class " + std::to_string(c.class_id) + ": rows have " +
                      std::to_string(c.examples.cols()) + " features, expected " +
                      std::to_string(feature_dim));
    }
    if (!all_finite(c.examples)) {
      throw DataError("class " + std::to_string(c.class_id) + " contains non-finite features");
    }
    if (c.coarse_id) {
      if (*c.coarse_id < 0 ||
          (coarse_groups && static_cast<std::size_t>(*c.coarse_id) >= *coarse_groups)) {
        throw DataError("class " + std::to_string(c.class_id) + ": unknown coarse_id " +
                        std::to_string(*c.coarse_id));
      }
    }
  }

  std::map<int, Split> owner;
  for (int s = 0; s < 3; ++s) {
    const auto split_name = to_string(static_cast<Split>(s));
    for (int id : splits[s]) {
      if (!by_id.contains(id)) {
        throw DataError("split '" + split_name + "' references unknown class id " +
                        std::to_string(id));
      }
      auto [it, inserted] = owner.emplace(id, static_cast<Split>(s));
      if (!inserted) {
        throw DataError("class id " + std::to_string(id) + " appears in both '" +
                        to_string(it->second) + "' and '" + split_name + "' splits");
      }
    }
  }
}

const ClassRecord& Dataset::find(int class_id) const {
  for (const auto& c : classes) {
    if (c.class_id == class_id) return c;
  }
  throw DataError("unknown class id " + std::to_string(class_id));
}

std::size_t Dataset::num_examples() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.examples.rows();
  return n;
}

std::size_t Dataset::num_coarse() const {
  if (coarse_groups) return *coarse_groups;
  int max_id = -1;
  for (const auto& c : classes) {
    if (c.coarse_id) max_id = std::max(max_id, *c.coarse_id);
  }
  return static_cast<std::size_t>(max_id + 1);
}

bool Dataset::has_coarse_ids() const {
  return !classes.empty() &&
         std::all_of(classes.begin(), classes.end(), [](const auto& c) { return c.coarse_id; });
}

namespace {

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ull;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  }
  template <class T>
  void value(const T& v) {
    bytes(&v, sizeof v);
  }
};

} // namespace

std::uint64_t Dataset::content_hash() const {
  Fnv1a f;
  f.bytes(name.data(), name.size());
  f.value(static_cast<std::uint64_t>(feature_dim));
  for (const auto& c : classes) {
    f.value(static_cast<std::int64_t>(c.class_id));
    f.value(static_cast<std::int64_t>(c.coarse_id.value_or(-1)));
    f.value(static_cast<std::uint64_t>(c.examples.rows()));
    for (double x : c.examples.data()) f.value(std::bit_cast<std::uint64_t>(x));
  }
  for (const auto& s : splits) {
    f.value(static_cast<std::uint64_t>(s.size()));
    for (int id : s) f.value(static_cast<std::int64_t>(id));
  }
  return f.h;
}

// ---------------------------------------------------------------------------
// Episodic sampling

void EpisodeSpec::validate() const {
  if (n_way < 2) throw ConfigError("n_way must be at least 2");
  if (n_shot < 1) throw ConfigError("n_shot must be at least 1");
  if (n_query < 1) throw ConfigError("n_query must be at least 1");
  if (tasks_per_episode < 1) throw ConfigError("tasks_per_episode must be at least 1");
}

std::set<int> Task::coarse_ids_present() const {
  std::set<int> out;
  for (const auto& c : coarse_of) {
    if (c) out.insert(*c);
  }
  return out;
}

namespace {

void check_split_supports(const Dataset& dataset, Split split, const EpisodeSpec& spec) {
  spec.validate();
  const auto& ids = dataset.split(split);
  if (ids.empty()) throw DataError("split '" + to_string(split) + "' has no classes");
  if (spec.n_way > ids.size()) {
    throw DataError("n_way " + std::to_string(spec.n_way) + " exceeds the " +
                    std::to_string(ids.size()) + " classes of split '" + to_string(split) + "'");
  }
  const std::size_t need = spec.n_shot + spec.n_query;
  for (int id : ids) {
    const auto& c = dataset.find(id);
    if (c.examples.rows() < need) {
      throw DataError("class " + std::to_string(id) + " has " +
                      std::to_string(c.examples.rows()) + " examples but an episode needs " +
                      std::to_string(need));
    }
  }
}

// First k entries of `pool` become a uniform draw without replacement.
template <class T>
void partial_shuffle(std::vector<T>& pool, std::size_t k, RngStream& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
}

Task draw_task(const Dataset& dataset, Split split, const EpisodeSpec& spec, RngStream& rng) {
  std::vector<int> pool = dataset.split(split);
  partial_shuffle(pool, spec.n_way, rng);

  Task task;
  task.class_ids.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.n_way));
  const std::size_t d = dataset.feature_dim;
  task.support = Matrix(spec.n_way * spec.n_shot, d);
  task.query = Matrix(spec.n_way * spec.n_query, d);

  for (std::size_t local = 0; local < spec.n_way; ++local) {
    const ClassRecord& c = dataset.find(task.class_ids[local]);
    task.coarse_of.push_back(c.coarse_id);
    std::vector<std::size_t> idx(c.examples.rows());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    partial_shuffle(idx, spec.n_shot + spec.n_query, rng);
    for (std::size_t j = 0; j < spec.n_shot + spec.n_query; ++j) {
      const bool is_support = j < spec.n_shot;
      auto src = c.examples.row(idx[j]);
      const std::size_t row =
          is_support ? local * spec.n_shot + j : local * spec.n_query + (j - spec.n_shot);
      auto dst = is_support ? task.support.row(row) : task.query.row(row);
      std::copy(src.begin(), src.end(), dst.begin());
      const ExampleRef ref{c.class_id, idx[j]};
      if (is_support) {
        task.support_labels.push_back(static_cast<int>(local));
        task.support_refs.push_back(ref);
      } else {
        task.query_labels.push_back(static_cast<int>(local));
        task.query_refs.push_back(ref);
      }
    }
  }
  return task;
}

} // namespace

Task sample_task(const Dataset& dataset, Split split, const EpisodeSpec& spec, RngStream& rng) {
  check_split_supports(dataset, split, spec);
  return draw_task(dataset, split, spec, rng);
}

Episode sample_episode(const Dataset& dataset, Split split, const EpisodeSpec& spec,
                       RngStream& rng, std::size_t episode_index) {
  check_split_supports(dataset, split, spec);
  Episode ep;
  ep.index = episode_index;
  ep.tasks.reserve(spec.tasks_per_episode);
  for (std::size_t i = 0; i < spec.tasks_per_episode; ++i) {
    ep.tasks.push_back(draw_task(dataset, split, spec, rng));
  }
  return ep;
}

// ---------------------------------------------------------------------------
// File ingestion

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Matrix read_class_csv(const std::filesystem::path& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw DataError("missing class file " + path.string());
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t fields = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (true) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      double x = 0.0;
      auto [next, ec] = std::from_chars(p, end, x);
      if (ec != std::errc()) {
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": cannot parse field " + std::to_string(fields + 1));
      }
      if (!std::isfinite(x)) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": non-finite value");
      }
      values.push_back(x);
      ++fields;
      p = next;
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      if (p == end) break;
      if (*p != ',') {
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": expected ',' after field " + std::to_string(fields));
      }
      ++p;
    }
    if (fields != dim) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": row has " +
                      std::to_string(fields) + " values, feature_dim is " + std::to_string(dim));
    }
    ++rows;
  }
  return Matrix(rows, dim, std::move(values));
}

} // namespace

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const json m = read_json(manifest_path);
  const auto base = manifest_path.parent_path();
  const std::string where = manifest_path.string();
  Dataset ds;
  try {
    ds.name = m.at("name").get<std::string>();
    const auto dim = m.at("feature_dim").get<long long>();
    if (dim <= 0) throw DataError(where + ": feature_dim must be positive");
    ds.feature_dim = static_cast<std::size_t>(dim);
    if (m.contains("num_coarse") && !m["num_coarse"].is_null()) {
      ds.coarse_groups = m["num_coarse"].get<std::size_t>();
    }
    for (const auto& c : m.at("classes")) {
      ClassRecord rec;
      rec.class_id = c.at("id").get<int>();
      if (c.contains("coarse_id") && !c["coarse_id"].is_null()) {
        rec.coarse_id = c["coarse_id"].get<int>();
      }
      rec.examples = read_class_csv(base / c.at("file").get<std::string>(), ds.feature_dim);
      ds.classes.push_back(std::move(rec));
    }
    const auto& splits = m.at("splits");
    for (auto it = splits.begin(); it != splits.end(); ++it) {
      const Split s = split_from_string(it.key());
      ds.splits[static_cast<int>(s)] = it.value().get<std::vector<int>>();
    }
  } catch (const json::exception& e) {
    throw DataError(where + ": malformed manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(where + ": " + e.what());
  }
  try {
    ds.validate();
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  }
  return ds;
}

std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json m;
  m["name"] = dataset.name;
  m["feature_dim"] = dataset.feature_dim;
  if (dataset.has_coarse_ids()) m["num_coarse"] = dataset.num_coarse();
  m["classes"] = json::array();
  for (const auto& c : dataset.classes) {
    const std::string file = "class_" + std::to_string(c.class_id) + ".csv";
    json entry;
    entry["id"] = c.class_id;
    entry["coarse_id"] = c.coarse_id ? json(*c.coarse_id) : json(nullptr);
    entry["file"] = file;
    m["classes"].push_back(entry);

    std::ofstream out(dir / file);
    char buf[32];
    for (std::size_t r = 0; r < c.examples.rows(); ++r) {
      auto row = c.examples.row(r);
      for (std::size_t k = 0; k < row.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", row[k]);
        if (k) out << ',';
        out << buf;
      }
      out << '\n';
    }
  }
  m["splits"] = {{"train", dataset.split(Split::train)},
                 {"val", dataset.split(Split::val)},
                 {"test", dataset.split(Split::test)}};
  const auto manifest = dir / "manifest.json";
  std::ofstream(manifest) << m.dump(2) << '\n';
  return manifest;
}

// ---------------------------------------------------------------------------
// Synthetic data

Dataset gen_synthetic(const SyntheticParams& p) {
  if (p.num_classes < 1 || p.dim < 1 || p.per_class < 1) {
    throw ConfigError("num_classes, dim and per_class must be positive");
  }
  if (p.coarse_groups < 1 || p.coarse_groups > p.num_classes) {
    throw ConfigError("need num_classes >= coarse_groups >= 1");
  }
  if (!(p.cluster_radius > 0.0)) throw ConfigError("cluster radius must be positive");
  if (!(p.noise_sigma >= 0.0)) throw ConfigError("noise sigma must be nonnegative");
  if (p.signal_dim > p.dim) throw ConfigError("signal_dim exceeds dim");

  RngStream rng(p.seed, StreamId::synthetic);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t C = p.num_classes;
  const std::size_t signal = p.signal_dim == 0 ? p.dim : p.signal_dim;

  std::vector<std::vector<double>> means(C, std::vector<double>(p.dim, 0.0));
  for (auto& mu : means) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (std::size_t j = 0; j < signal; ++j) {
        mu[j] = normal(rng);
        norm2 += mu[j] * mu[j];
      }
    } while (norm2 == 0.0);
    const double scale = p.cluster_radius / std::sqrt(norm2);
    for (double& x : mu) x *= scale;
  }

  // Anchors are K distinct classes; every class joins its nearest anchor,
  // so an anchor always lands in its own group and K == C is a bijection.
  std::vector<std::size_t> order(C);
  std::iota(order.begin(), order.end(), std::size_t{0});
  partial_shuffle(order, p.coarse_groups, rng);
  std::vector<std::size_t> anchors(order.begin(),
                                   order.begin() + static_cast<std::ptrdiff_t>(p.coarse_groups));

  Dataset ds;
  ds.name = "gaussian_blobs";
  ds.feature_dim = p.dim;
  ds.coarse_groups = p.coarse_groups;
  for (std::size_t c = 0; c < C; ++c) {
    ClassRecord rec;
    rec.class_id = static_cast<int>(c);
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < anchors.size(); ++k) {
      double d = 0.0;
      for (std::size_t j = 0; j < p.dim; ++j) {
        const double diff = means[c][j] - means[anchors[k]][j];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    rec.coarse_id = best;
    rec.examples = Matrix(p.per_class, p.dim);
    for (std::size_t r = 0; r < p.per_class; ++r) {
      for (std::size_t j = 0; j < p.dim; ++j) {
        rec.examples(r, j) = means[c][j] + p.noise_sigma * normal(rng);
      }
    }
    ds.classes.push_back(std::move(rec));
  }

  std::array<std::size_t, 3> sizes = p.split_sizes;
  if (sizes[0] + sizes[1] + sizes[2] == 0) {
    sizes[0] = static_cast<std::size_t>(std::lround(static_cast<double>(C) * 20.0 / 34.0));
    sizes[1] = static_cast<std::size_t>(std::lround(static_cast<double>(C) * 6.0 / 34.0));
    sizes[0] = std::min(sizes[0], C);
    sizes[1] = std::min(sizes[1], C - sizes[0]);
    sizes[2] = C - sizes[0] - sizes[1];
  }
  if (sizes[0] + sizes[1] + sizes[2] > C) {
    throw ConfigError("split sizes exceed num_classes");
  }
  int next = 0;
  for (int s = 0; s < 3; ++s) {
    for (std::size_t k = 0; k < sizes[s]; ++k) ds.splits[s].push_back(next++);
  }
  ds.validate();
  return ds;
}

} // namespace mtm
