#include "demix/inference/diagnostics.hpp"

#include "demix/error.hpp"

#include <cmath>
#include <cstring>

namespace demix {

namespace {

const DomainBlocks& find_set(const std::vector<DomainBlocks>& sets, const std::string& name) {
  for (const auto& s : sets) {
    if (s.domain.name == name) {
      if (s.blocks.empty()) throw DataError("empty test set for domain '" + name + "'");
      return s;
    }
  }
  throw DataError("missing test set for domain '" + name + "'");
}

std::span<const SequenceBlock> head(const DomainBlocks& s, std::size_t max_blocks) {
  std::span<const SequenceBlock> all(s.blocks);
  return max_blocks && max_blocks < all.size() ? all.first(max_blocks) : all;
}

}  // namespace

bool LabeledMatrix::operator==(const LabeledMatrix& other) const {
  if (rows != other.rows || cols != other.cols || values.size() != other.values.size()) return false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].size() != other.values[i].size()) return false;
    if (!values[i].empty() &&
        std::memcmp(values[i].data(), other.values[i].data(), values[i].size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

void to_json(nlohmann::json& j, const LabeledMatrix& m) {
  nlohmann::json values = nlohmann::json::array();
  for (const auto& row : m.values) {
    nlohmann::json r = nlohmann::json::array();
    for (double v : row) r.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    values.push_back(std::move(r));
  }
  j = nlohmann::json{{"rows", m.rows}, {"cols", m.cols}, {"values", std::move(values)}};
}

void from_json(const nlohmann::json& j, LabeledMatrix& m) {
  j.at("rows").get_to(m.rows);
  j.at("cols").get_to(m.cols);
  m.values.clear();
  for (const auto& row : j.at("values")) {
    std::vector<double> r;
    for (const auto& v : row) r.push_back(v.is_null() ? std::nan("") : v.get<double>());
    m.values.push_back(std::move(r));
  }
}

LabeledMatrix affinity_matrix(const DemixModel& model, const std::vector<DomainBlocks>& test_sets,
                              std::size_t max_blocks) {
  const std::vector<DomainLabel> conds = eval_conditions(model);
  const std::size_t n = conds.size();
  std::vector<std::vector<double>> ppl(n, std::vector<double>(n));
  for (std::size_t j = 0; j < n; ++j) {
    auto blocks = head(find_set(test_sets, conds[j].name), max_blocks);
    for (std::size_t i = 0; i < n; ++i) ppl[i][j] = evaluate_perplexity(model, blocks, EvalMode::naive(conds[i])).perplexity;
  }
  LabeledMatrix m;
  for (const auto& c : conds) {
    m.rows.push_back(c.name);
    m.cols.push_back(c.name);
  }
  m.values.assign(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m.values[i][j] = i == j ? 1.0 : ppl[i][j] / ppl[j][j];
  }
  return m;
}

LabeledMatrix posterior_matrix(const DemixModel& model, const std::vector<DomainBlocks>& dev_sets,
                               std::size_t blocks_per_dataset, double lambda) {
  const std::vector<DomainLabel> conds = eval_conditions(model);
  LabeledMatrix m;
  for (const auto& c : conds) m.cols.push_back(c.name);
  for (const auto& set : dev_sets) {
    if (set.blocks.empty()) throw DataError("empty dev set for domain '" + set.domain.name + "'");
    auto blocks = head(set, blocks_per_dataset);
    PerplexityResult r =
        evaluate_perplexity(model, blocks, EvalMode::weighted(DomainPrior::updating(conds.size(), lambda)));
    m.rows.push_back(set.domain.name);
    m.values.push_back(r.blocks.back().posterior);
  }
  return m;
}

double affinity_overlap_correlation(const LabeledMatrix& affinity, const std::vector<std::vector<double>>& overlap) {
  const std::size_t n = affinity.values.size();
  if (n < 3) throw DataError("correlation needs at least 3 domains");
  if (overlap.size() != n) throw DataError("affinity and overlap matrices differ in shape");
  std::vector<double> x, y;
  for (std::size_t i = 0; i < n; ++i) {
    if (affinity.values[i].size() != n || overlap[i].size() != n) {
      throw DataError("affinity and overlap matrices differ in shape");
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      x.push_back(-affinity.values[i][j]);
      y.push_back(overlap[i][j]);
    }
  }
  const double k = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= k;
  my /= k;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DataError("zero variance");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace demix
