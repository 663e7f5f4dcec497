#pragma once

#include <filesystem>
#include <string>

#include "mtm/mlp.hpp"
#include "mtm/tensor.hpp"
#include "oracles.hpp"

namespace testutil {

inline mtm::Matrix to_matrix(const oracle::Rows& rows) {
  mtm::Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

inline oracle::Rows to_rows(const mtm::Matrix& m) {
  oracle::Rows out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r].assign(m.row(r).begin(), m.row(r).end());
  return out;
}

inline mtm::Backbone seeded_net(std::vector<std::size_t> dims, std::uint64_t seed,
                                mtm::Activation act = mtm::Activation::tanh) {
  mtm::RngStream rng(seed, mtm::StreamId::init);
  return mtm::Backbone::initialized(mtm::MlpShape(std::move(dims), act), rng);
}

inline std::filesystem::path data_dir() { return MTM_TEST_DATA_DIR; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mtm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

} // namespace testutil
