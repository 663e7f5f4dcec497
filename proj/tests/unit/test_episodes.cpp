#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "helpers.hpp"
#include "mtm/episodes.hpp"

using namespace mtm;

namespace {

Dataset uniform_dataset(std::size_t classes, std::size_t per_class, std::size_t dim = 2) {
  Dataset ds;
  ds.name = "uniform";
  ds.feature_dim = dim;
  for (std::size_t c = 0; c < classes; ++c) {
    ClassRecord r;
    r.class_id = static_cast<int>(c);
    r.examples = Matrix(per_class, dim);
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t j = 0; j < dim; ++j) r.examples(i, j) = static_cast<double>(c * 1000 + i);
    }
    ds.classes.push_back(std::move(r));
    ds.splits[0].push_back(static_cast<int>(c));
  }
  return ds;
}

void check_task_invariants(const Task& t, const EpisodeSpec& spec) {
  REQUIRE(t.n_way() == spec.n_way);
  CHECK(t.support.rows() == spec.n_way * spec.n_shot);
  CHECK(t.query.rows() == spec.n_way * spec.n_query);
  CHECK(std::set<int>(t.class_ids.begin(), t.class_ids.end()).size() == spec.n_way);
  std::vector<int> s = t.support_labels, q = t.query_labels;
  std::sort(s.begin(), s.end());
  std::vector<int> su(s.begin(), std::unique(s.begin(), s.end()));
  std::sort(q.begin(), q.end());
  std::vector<int> qu(q.begin(), std::unique(q.begin(), q.end()));
  std::vector<int> expect(spec.n_way);
  for (std::size_t k = 0; k < spec.n_way; ++k) expect[k] = static_cast<int>(k);
  CHECK(su == expect);
  CHECK(qu == expect);
  std::set<ExampleRef> support(t.support_refs.begin(), t.support_refs.end());
  for (const auto& r : t.query_refs) CHECK_FALSE(support.contains(r));
  std::set<ExampleRef> all(t.support_refs.begin(), t.support_refs.end());
  all.insert(t.query_refs.begin(), t.query_refs.end());
  CHECK(all.size() == t.support_refs.size() + t.query_refs.size());
  for (std::size_t r = 0; r < t.query_refs.size(); ++r) {
    CHECK(t.class_ids[static_cast<std::size_t>(t.query_labels[r])] == t.query_refs[r].class_id);
  }
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("fixture manifest loads") {
  const Dataset ds = load_dataset(testutil::data_dir() / "three_class" / "manifest.json");
  CHECK(ds.num_examples() == 30);
  CHECK(ds.feature_dim == 2);
  CHECK(ds.classes.size() == 3);
  CHECK(ds.find(1).examples(2, 0) == 4.5);
  CHECK(ds.find(0).coarse_id == 0);
  CHECK_FALSE(ds.find(2).coarse_id.has_value());
  CHECK_FALSE(ds.has_coarse_ids());
  CHECK(ds.split(Split::test) == std::vector<int>{2});
}

TEST_CASE("manifest errors") {
  const auto dir = testutil::scratch_dir("manifest_errors");
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
  };
  write("a.csv", "1,2\n3,4\n");
  write("b.csv", "1,2\n3\n");

  SUBCASE("overlapping splits name the class and both splits") {
    write("m.json", R"({"name":"x","feature_dim":2,"classes":[{"id":0,"coarse_id":null,"file":"a.csv"},
      {"id":7,"coarse_id":null,"file":"a.csv"}],"splits":{"train":[0,7],"val":[],"test":[7]}})");
    try {
      (void)load_dataset(dir / "m.json");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("7") != std::string::npos);
      CHECK(msg.find("train") != std::string::npos);
      CHECK(msg.find("test") != std::string::npos);
    }
  }
  SUBCASE("missing class file names the path") {
    write("m.json", R"({"name":"x","feature_dim":2,"classes":[{"id":0,"file":"nope.csv"}],
      "splits":{"train":[0],"val":[],"test":[]}})");
    try {
      (void)load_dataset(dir / "m.json");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("nope.csv") != std::string::npos);
    }
  }
  SUBCASE("short row reports file and line") {
    write("m.json", R"({"name":"x","feature_dim":2,"classes":[{"id":0,"file":"b.csv"}],
      "splits":{"train":[0],"val":[],"test":[]}})");
    try {
      (void)load_dataset(dir / "m.json");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("b.csv:2") != std::string::npos);
    }
  }
  SUBCASE("coarse id outside the declared groups") {
    write("m.json", R"({"name":"x","feature_dim":2,"num_coarse":2,
      "classes":[{"id":0,"coarse_id":5,"file":"a.csv"}],"splits":{"train":[0],"val":[],"test":[]}})");
    CHECK_THROWS_AS(load_dataset(dir / "m.json"), DataError);
  }
  SUBCASE("split references an unknown class") {
    write("m.json", R"({"name":"x","feature_dim":2,"classes":[{"id":0,"file":"a.csv"}],
      "splits":{"train":[0,3],"val":[],"test":[]}})");
    CHECK_THROWS_AS(load_dataset(dir / "m.json"), DataError);
  }
}

TEST_CASE("five-way one-shot episode shape") {
  const Dataset ds = gen_synthetic({});
  RngStream rng(1, StreamId::train_sampling);
  const EpisodeSpec spec{5, 1, 15, 4};
  const Episode ep = sample_episode(ds, Split::train, spec, rng, 3);
  CHECK(ep.index == 3);
  REQUIRE(ep.tasks.size() == 4);
  for (const Task& t : ep.tasks) {
    CHECK(t.support.rows() == 5);
    CHECK(t.query.rows() == 75);
    check_task_invariants(t, spec);
  }
}

TEST_CASE("minimal episode covers four distinct examples") {
  const Dataset ds = uniform_dataset(2, 2);
  RngStream rng(5, 1);
  const Task t = sample_task(ds, Split::train, {2, 1, 1, 1}, rng);
  std::set<ExampleRef> refs(t.support_refs.begin(), t.support_refs.end());
  refs.insert(t.query_refs.begin(), t.query_refs.end());
  CHECK(refs.size() == 4);
}

TEST_CASE("sampling replays for a seed and varies across seeds") {
  const Dataset ds = gen_synthetic({});
  const EpisodeSpec spec{5, 1, 15, 4};
  RngStream a(9, StreamId::train_sampling), b(9, StreamId::train_sampling);
  const Episode ea = sample_episode(ds, Split::train, spec, a);
  const Episode eb = sample_episode(ds, Split::train, spec, b);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(ea.tasks[i].support == eb.tasks[i].support);
    CHECK(ea.tasks[i].query == eb.tasks[i].query);
    CHECK(ea.tasks[i].query_refs == eb.tasks[i].query_refs);
  }
  int same = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    RngStream x(s, StreamId::train_sampling), y(s + 1000, StreamId::train_sampling);
    same += sample_task(ds, Split::train, spec, x).support_refs ==
            sample_task(ds, Split::train, spec, y).support_refs;
  }
  CHECK(same == 0);
}

TEST_CASE("sampling errors") {
  Dataset ds = uniform_dataset(4, 10);
  ds.classes[2].examples = Matrix(3, 2, 0.0);
  RngStream rng(1, 1);
  try {
    (void)sample_task(ds, Split::train, {2, 1, 5, 1}, rng);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("class 2") != std::string::npos);
  }
  CHECK_THROWS_AS(sample_task(ds, Split::train, {5, 1, 1, 1}, rng), DataError);
  CHECK_THROWS_AS(sample_task(ds, Split::test, {2, 1, 1, 1}, rng), DataError);
  CHECK_THROWS(sample_task(ds, Split::train, {1, 1, 1, 1}, rng));
  CHECK_THROWS(sample_task(ds, Split::train, {2, 0, 1, 1}, rng));
}

TEST_CASE("task invariants hold on random episodes") {
  const Dataset ds = gen_synthetic({});
  RngStream rng(2, 2);
  for (const EpisodeSpec spec : {EpisodeSpec{5, 1, 15, 2}, EpisodeSpec{3, 4, 6, 3},
                                 EpisodeSpec{2, 5, 5, 1}}) {
    for (int i = 0; i < 50; ++i) {
      for (const Task& t : sample_episode(ds, Split::train, spec, rng).tasks) {
        check_task_invariants(t, spec);
      }
    }
  }
}

TEST_CASE("class marginals are uniform") {
  const std::size_t C = 10, n_way = 3, tasks = 10000;
  const Dataset ds = uniform_dataset(C, 4);
  RngStream rng(17, StreamId::train_sampling);
  std::map<int, int> count;
  std::map<std::pair<int, std::size_t>, int> example_count;
  for (std::size_t i = 0; i < tasks; ++i) {
    const Task t = sample_task(ds, Split::train, {n_way, 1, 1, 1}, rng);
    for (int id : t.class_ids) ++count[id];
    for (const auto& r : t.support_refs) ++example_count[{r.class_id, r.index}];
  }
  const double p = static_cast<double>(n_way) / C;
  const double se = std::sqrt(p * (1 - p) / tasks);
  for (std::size_t c = 0; c < C; ++c) {
    const double f = count[static_cast<int>(c)] / static_cast<double>(tasks);
    CHECK(std::abs(f - p) < 3.5 * se);
  }
  // Within a class, each of the 4 examples is the support with probability 1/4.
  const double per_class = tasks * p;
  for (const auto& [key, n] : example_count) {
    const double q = 0.25;
    CHECK(std::abs(n / per_class - q) < 4.0 * std::sqrt(q * (1 - q) / per_class));
  }
}

TEST_CASE("synthetic generator") {
  SUBCASE("zero noise makes every example its class mean") {
    SyntheticParams p;
    p.noise_sigma = 0.0;
    p.num_classes = 6;
    p.coarse_groups = 2;
    const Dataset ds = gen_synthetic(p);
    for (const auto& c : ds.classes) {
      double norm2 = 0.0;
      for (std::size_t j = 0; j < ds.feature_dim; ++j) {
        CHECK(c.examples(5, j) == c.examples(0, j));
        norm2 += c.examples(0, j) * c.examples(0, j);
      }
      CHECK(std::sqrt(norm2) == doctest::Approx(p.cluster_radius).epsilon(1e-12));
      for (std::size_t j = p.signal_dim; j < ds.feature_dim; ++j) CHECK(c.examples(0, j) == 0.0);
    }
  }
  SUBCASE("K equal to the class count is a bijection") {
    SyntheticParams p;
    p.num_classes = 12;
    p.coarse_groups = 12;
    const Dataset ds = gen_synthetic(p);
    std::set<int> ids;
    for (const auto& c : ds.classes) ids.insert(*c.coarse_id);
    CHECK(ids.size() == 12);
    CHECK(ds.num_coarse() == 12);
  }
  SUBCASE("content hash is a function of the seed") {
    SyntheticParams p;
    p.seed = 4;
    CHECK(gen_synthetic(p).content_hash() == gen_synthetic(p).content_hash());
    SyntheticParams q = p;
    q.seed = 5;
    CHECK(gen_synthetic(p).content_hash() != gen_synthetic(q).content_hash());
  }
  SUBCASE("default splits follow 20:6:8 and are disjoint") {
    const Dataset ds = gen_synthetic({});
    CHECK(ds.split(Split::train).size() == 20);
    CHECK(ds.split(Split::val).size() == 6);
    CHECK(ds.split(Split::test).size() == 8);
    CHECK_NOTHROW(ds.validate());
    CHECK(ds.has_coarse_ids());
  }
  SUBCASE("invalid parameters") {
    SyntheticParams p;
    p.cluster_radius = 0.0;
    CHECK_THROWS_AS(gen_synthetic(p), ConfigError);
    p = {};
    p.noise_sigma = -1.0;
    CHECK_THROWS_AS(gen_synthetic(p), ConfigError);
    p = {};
    p.coarse_groups = p.num_classes + 1;
    CHECK_THROWS_AS(gen_synthetic(p), ConfigError);
    p = {};
    p.signal_dim = p.dim + 1;
    CHECK_THROWS_AS(gen_synthetic(p), ConfigError);
  }
}

TEST_CASE("write then load round-trips bitwise") {
  SyntheticParams p;
  p.num_classes = 8;
  p.per_class = 5;
  p.coarse_groups = 3;
  const Dataset ds = gen_synthetic(p);
  const auto dir = testutil::scratch_dir("roundtrip");
  const auto manifest = write_dataset(ds, dir);
  const Dataset back = load_dataset(manifest);
  CHECK(back.content_hash() == ds.content_hash());
  CHECK(back.find(3).examples == ds.find(3).examples);
  CHECK(read_all(manifest).find("coarse_id") != std::string::npos);
}
