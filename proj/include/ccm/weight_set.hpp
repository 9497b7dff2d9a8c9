#pragma once

// Named parameter tensors and the canonical flat view used by all merge
// arithmetic. Tensors are dense row-major float64 arrays.

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace ccm {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims);
  Tensor(std::vector<int> dims, std::vector<double> values);

  std::size_t size() const noexcept { return data.size(); }
  bool operator==(const Tensor&) const = default;
};

std::size_t element_count(const std::vector<int>& shape);

// Iteration order of std::map is the lexicographic name order, which is
// also the canonical flatten order.
using WeightSet = std::map<std::string, Tensor>;

struct SchemaEntry {
  std::string name;
  std::vector<int> shape;
  bool operator==(const SchemaEntry&) const = default;
};
using Schema = std::vector<SchemaEntry>;

Schema schema_of(const WeightSet& ws);
std::string schema_hash(const Schema& schema);
std::string schema_hash(const WeightSet& ws);
std::size_t parameter_count(const WeightSet& ws);
std::size_t parameter_count(const Schema& schema);

// Throws SchemaMismatch naming the first differing entry.
void require_same_schema(const WeightSet& a, const WeightSet& b,
                         const std::string& context = {});

struct FlatWeights {
  Schema schema;
  std::vector<double> values;
};

FlatWeights flatten(const WeightSet& ws);
WeightSet unflatten(const std::vector<double>& values, const Schema& schema);

WeightSet zeros_like(const WeightSet& ws);
bool all_finite(const WeightSet& ws);
double max_abs_difference(const WeightSet& a, const WeightSet& b);
double max_abs_value(const WeightSet& ws);
double l2_norm(const WeightSet& ws);

WeightSet add(const WeightSet& a, const WeightSet& b);
WeightSet subtract(const WeightSet& a, const WeightSet& b);
WeightSet scale(const WeightSet& a, double c);
// y += c * x
void axpy(WeightSet& y, double c, const WeightSet& x);

}  // namespace ccm
