#include "ccm/weight_set.hpp"

#include <algorithm>
#include <cmath>

#include "ccm/digest.hpp"
#include "ccm/error.hpp"

namespace ccm {

namespace {

std::string shape_text(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (k) s += ",";
    s += std::to_string(shape[k]);
  }
  return s + "]";
}

template <typename Fn>
WeightSet zip(const WeightSet& a, const WeightSet& b, Fn fn) {
  require_same_schema(a, b);
  WeightSet out;
  auto ib = b.begin();
  for (const auto& [name, ta] : a) {
    Tensor t(ta.shape);
    const auto& tb = (ib++)->second;
    for (std::size_t k = 0; k < t.data.size(); ++k) t.data[k] = fn(ta.data[k], tb.data[k]);
    out.emplace(name, std::move(t));
  }
  return out;
}

}  // namespace

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw InvalidArgument("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> dims)
    : shape(std::move(dims)), data(element_count(shape), 0.0) {}

Tensor::Tensor(std::vector<int> dims, std::vector<double> values)
    : shape(std::move(dims)), data(std::move(values)) {
  if (data.size() != element_count(shape)) {
    throw InvalidArgument("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_text(shape));
  }
}

Schema schema_of(const WeightSet& ws) {
  Schema s;
  s.reserve(ws.size());
  for (const auto& [name, t] : ws) s.push_back({name, t.shape});
  return s;
}

std::string schema_hash(const Schema& schema) {
  Sha256 h;
  h.update_u64(schema.size());
  for (const auto& e : schema) {
    h.update_u64(e.name.size());
    h.update(e.name);
    h.update_u64(e.shape.size());
    for (int d : e.shape) h.update_u64(static_cast<std::uint64_t>(d));
  }
  return h.finish_hex();
}

std::string schema_hash(const WeightSet& ws) { return schema_hash(schema_of(ws)); }

std::size_t parameter_count(const Schema& schema) {
  std::size_t n = 0;
  for (const auto& e : schema) n += element_count(e.shape);
  return n;
}

std::size_t parameter_count(const WeightSet& ws) {
  std::size_t n = 0;
  for (const auto& [name, t] : ws) n += t.size();
  return n;
}

void require_same_schema(const WeightSet& a, const WeightSet& b,
                         const std::string& context) {
  const std::string prefix = context.empty() ? "" : context + ": ";
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end() && ib != b.end(); ++ia, ++ib) {
    if (ia->first != ib->first) {
      throw SchemaMismatch(prefix + "tensor names differ ('" + ia->first + "' vs '" +
                           ib->first + "')");
    }
    if (ia->second.shape != ib->second.shape) {
      throw SchemaMismatch(prefix + "tensor '" + ia->first + "' has shape " +
                           shape_text(ia->second.shape) + " vs " +
                           shape_text(ib->second.shape));
    }
  }
  if (ia != a.end() || ib != b.end()) {
    throw SchemaMismatch(prefix + "tensor counts differ (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
  }
}

FlatWeights flatten(const WeightSet& ws) {
  FlatWeights flat;
  flat.schema = schema_of(ws);
  flat.values.reserve(parameter_count(ws));
  for (const auto& [name, t] : ws) {
    flat.values.insert(flat.values.end(), t.data.begin(), t.data.end());
  }
  return flat;
}

WeightSet unflatten(const std::vector<double>& values, const Schema& schema) {
  const std::size_t expected = parameter_count(schema);
  if (values.size() != expected) {
    throw SchemaMismatch("flat vector has " + std::to_string(values.size()) +
                         " values, schema needs " + std::to_string(expected));
  }
  for (std::size_t k = 1; k < schema.size(); ++k) {
    if (!(schema[k - 1].name < schema[k].name)) {
      throw SchemaMismatch("schema names must be unique and sorted");
    }
  }
  WeightSet ws;
  std::size_t offset = 0;
  for (const auto& e : schema) {
    const std::size_t n = element_count(e.shape);
    ws.emplace(e.name, Tensor(e.shape, std::vector<double>(values.begin() + offset,
                                                           values.begin() + offset + n)));
    offset += n;
  }
  return ws;
}

WeightSet zeros_like(const WeightSet& ws) {
  WeightSet out;
  for (const auto& [name, t] : ws) out.emplace(name, Tensor(t.shape));
  return out;
}

bool all_finite(const WeightSet& ws) {
  for (const auto& [name, t] : ws) {
    for (double v : t.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

double max_abs_difference(const WeightSet& a, const WeightSet& b) {
  require_same_schema(a, b);
  double m = 0.0;
  auto ib = b.begin();
  for (const auto& [name, ta] : a) {
    const auto& tb = (ib++)->second;
    for (std::size_t k = 0; k < ta.data.size(); ++k) {
      m = std::max(m, std::abs(ta.data[k] - tb.data[k]));
    }
  }
  return m;
}

double max_abs_value(const WeightSet& ws) {
  double m = 0.0;
  for (const auto& [name, t] : ws) {
    for (double v : t.data) m = std::max(m, std::abs(v));
  }
  return m;
}

double l2_norm(const WeightSet& ws) {
  double s = 0.0;
  for (const auto& [name, t] : ws) {
    for (double v : t.data) s += v * v;
  }
  return std::sqrt(s);
}

WeightSet add(const WeightSet& a, const WeightSet& b) {
  return zip(a, b, [](double x, double y) { return x + y; });
}

WeightSet subtract(const WeightSet& a, const WeightSet& b) {
  return zip(a, b, [](double x, double y) { return x - y; });
}

WeightSet scale(const WeightSet& a, double c) {
  WeightSet out = a;
  for (auto& [name, t] : out) {
    for (double& v : t.data) v *= c;
  }
  return out;
}

void axpy(WeightSet& y, double c, const WeightSet& x) {
  require_same_schema(y, x);
  auto ix = x.begin();
  for (auto& [name, ty] : y) {
    const auto& tx = (ix++)->second;
    for (std::size_t k = 0; k < ty.data.size(); ++k) ty.data[k] += c * tx.data[k];
  }
}

}  // namespace ccm
