#pragma once

#include "demix/corpus/blocks.hpp"
#include "demix/inference/evaluate.hpp"
#include "demix/model/model.hpp"

#include <json.hpp>
#include <string>
#include <vector>

namespace demix {

struct LabeledMatrix {
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  std::vector<std::vector<double>> values;

  /// Labels equal and values equal bitwise (so NaN cells compare equal).
  bool operator==(const LabeledMatrix& other) const;
};

/// NaN cells serialize as null and read back as NaN.
void to_json(nlohmann::json& j, const LabeledMatrix& m);
void from_json(const nlohmann::json& j, LabeledMatrix& m);

/// Rows are experts i, columns domains j over the active experts:
/// PPL(expert i on domain j) / PPL(expert j on domain j). Test sets are
/// matched to experts by domain name; the diagonal is exactly 1.
LabeledMatrix affinity_matrix(const DemixModel& model, const std::vector<DomainBlocks>& test_sets,
                              std::size_t max_blocks = 0);

/// Rows are datasets, columns active experts: the posterior of the last of
/// the first `blocks_per_dataset` blocks under the updating prior.
LabeledMatrix posterior_matrix(const DemixModel& model, const std::vector<DomainBlocks>& dev_sets,
                               std::size_t blocks_per_dataset = 100, double lambda = 0.3);

/// Pearson r between -affinity and overlap over off-diagonal cells.
/// Throws DataError "zero variance" when either side is constant.
double affinity_overlap_correlation(const LabeledMatrix& affinity, const std::vector<std::vector<double>>& overlap);

}  // namespace demix
