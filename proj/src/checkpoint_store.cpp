#include "ccm/checkpoint_store.hpp"

#include <string_view>

#include "ccm/byte_io.hpp"
#include "ccm/digest.hpp"
#include "ccm/error.hpp"
#include "json.hpp"

namespace ccm {

namespace {

constexpr std::string_view kMagic{"CCMCKPT\0", 8};
constexpr std::size_t kHashBytes = 32;

using json = nlohmann::json;

void put_schema(ByteWriter& w, const Schema& schema) {
  w.put_u32(static_cast<std::uint32_t>(schema.size()));
  for (const auto& e : schema) {
    w.put_string(e.name);
    w.put_u32(static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) w.put_u32(static_cast<std::uint32_t>(d));
  }
}

void put_values(ByteWriter& w, const std::vector<double>& values) {
  w.put_u64(values.size());
  for (double v : values) w.put_f64(v);
}

json lineage_to_json(const Lineage& l) {
  json j;
  j["role"] = to_string(l.role);
  j["family"] = l.family;
  j["lambda"] = l.lambda ? json(*l.lambda) : json(nullptr);
  j["parent_hash"] = l.parent_hash;
  j["anchor_hash"] = l.anchor_hash;
  j["seed"] = l.seed;
  j["config_digest"] = l.config_digest;
  j["alpha"] = l.alpha ? json(*l.alpha) : json(nullptr);
  j["sources"] = l.sources;
  j["method"] = l.method;
  j["hyperparameters"] = json::array();
  for (const auto& [k, v] : l.hyperparameters) j["hyperparameters"].push_back({k, v});
  j["created_by"] = l.created_by;
  return j;
}

Lineage lineage_from_json(const json& j) {
  Lineage l;
  l.role = checkpoint_role_from_string(j.at("role").get<std::string>());
  l.family = j.at("family").get<std::string>();
  if (!j.at("lambda").is_null()) l.lambda = j.at("lambda").get<double>();
  l.parent_hash = j.at("parent_hash").get<std::string>();
  l.anchor_hash = j.at("anchor_hash").get<std::string>();
  l.seed = j.at("seed").get<std::uint64_t>();
  l.config_digest = j.at("config_digest").get<std::string>();
  if (!j.at("alpha").is_null()) l.alpha = j.at("alpha").get<double>();
  l.sources = j.at("sources").get<std::vector<std::string>>();
  l.method = j.at("method").get<std::string>();
  for (const auto& hp : j.at("hyperparameters")) {
    l.hyperparameters.emplace_back(hp.at(0).get<std::string>(), hp.at(1).get<double>());
  }
  l.created_by = j.at("created_by").get<std::string>();
  return l;
}

json metadata_json(const Checkpoint& c) {
  json j;
  j["lineage"] = lineage_to_json(c.lineage);
  const auto& oc = c.config;
  j["operator"] = {{"channels", oc.channels}, {"width", oc.width},   {"modes", oc.modes},
                   {"layers", oc.layers},     {"grid_h", oc.grid_h}, {"grid_w", oc.grid_w}};
  j["normalizer"] = {{"mean", c.normalizer.mean},
                     {"std", c.normalizer.std},
                     {"step_scale", c.normalizer.step_scale}};
  return j;
}

void apply_metadata(const json& j, Checkpoint& c) {
  c.lineage = lineage_from_json(j.at("lineage"));
  const auto& o = j.at("operator");
  c.config.channels = o.at("channels").get<int>();
  c.config.width = o.at("width").get<int>();
  c.config.modes = o.at("modes").get<int>();
  c.config.layers = o.at("layers").get<int>();
  c.config.grid_h = o.at("grid_h").get<int>();
  c.config.grid_w = o.at("grid_w").get<int>();
  const auto& n = j.at("normalizer");
  c.normalizer.mean = n.at("mean").get<std::vector<double>>();
  c.normalizer.std = n.at("std").get<std::vector<double>>();
  c.normalizer.step_scale = n.at("step_scale").get<std::vector<double>>();
}

}  // namespace

std::string to_string(CheckpointRole role) {
  switch (role) {
    case CheckpointRole::anchor: return "anchor";
    case CheckpointRole::endpoint_low: return "endpoint-low";
    case CheckpointRole::endpoint_high: return "endpoint-high";
    case CheckpointRole::merged: return "merged";
    case CheckpointRole::baseline: return "baseline";
  }
  return "unknown";
}

CheckpointRole checkpoint_role_from_string(const std::string& text) {
  for (auto r : {CheckpointRole::anchor, CheckpointRole::endpoint_low, CheckpointRole::endpoint_high,
                 CheckpointRole::merged, CheckpointRole::baseline}) {
    if (to_string(r) == text) return r;
  }
  throw InvalidArgument("unknown checkpoint role '" + text + "'");
}

std::string content_hash(const WeightSet& weights) {
  const auto flat = flatten(weights);
  ByteWriter w;
  put_schema(w, flat.schema);
  put_values(w, flat.values);
  return sha256_hex(w.bytes());
}

std::string anchor_of(const Checkpoint& ckpt) {
  if (ckpt.lineage.role == CheckpointRole::anchor) return content_hash(ckpt);
  return ckpt.lineage.anchor_hash;
}

Checkpoint make_checkpoint(const OperatorModel& model, Lineage lineage) {
  return Checkpoint{model.weights, std::move(lineage), model.config, model.normalizer};
}

OperatorModel to_model(const Checkpoint& ckpt) {
  OperatorModel m{ckpt.config, ckpt.normalizer, ckpt.weights};
  check_model(m);
  return m;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  const auto flat = flatten(ckpt.weights);
  ByteWriter w;
  w.put_bytes(kMagic);
  w.put_u32(kCheckpointVersion);
  put_schema(w, flat.schema);
  put_values(w, flat.values);
  w.put_string(metadata_json(ckpt).dump());
  Sha256 h;
  h.update(w.bytes());
  w.put_bytes(h.finish_raw());
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagic.size() + 4 + kHashBytes) {
    throw CorruptCheckpoint("checkpoint truncated (" + std::to_string(bytes.size()) + " bytes)");
  }
  if (std::string_view(bytes).substr(0, kMagic.size()) != kMagic) {
    throw CorruptCheckpoint("bad checkpoint magic");
  }
  {
    ByteReader<CorruptCheckpoint> head(std::string_view(bytes).substr(kMagic.size(), 4));
    const auto version = head.get_u32();
    if (version != kCheckpointVersion) {
      throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected " +
                            std::to_string(kCheckpointVersion));
    }
  }
  const std::string_view body(bytes.data(), bytes.size() - kHashBytes);
  Sha256 h;
  h.update(body);
  if (h.finish_raw() != std::string_view(bytes).substr(body.size())) {
    throw CorruptCheckpoint("checkpoint hash mismatch");
  }

  ByteReader<CorruptCheckpoint> r(body);
  r.get_bytes(kMagic.size() + 4);
  Schema schema(r.get_u32());
  for (auto& e : schema) {
    e.name = r.get_string();
    e.shape.resize(r.get_u32());
    for (int& d : e.shape) d = static_cast<int>(r.get_u32());
  }
  const auto n = r.get_u64();
  if (n > r.remaining() / 8) throw CorruptCheckpoint("value count exceeds file size");
  std::vector<double> values(n);
  for (double& v : values) v = r.get_f64();
  const auto meta_text = r.get_string();
  if (r.remaining() != 0) throw CorruptCheckpoint("trailing bytes after metadata");

  Checkpoint c;
  c.weights = unflatten(values, schema);
  try {
    apply_metadata(json::parse(meta_text), c);
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(std::string("checkpoint metadata: ") + e.what());
  }
  return c;
}

std::string save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
  return content_hash(ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file_bytes(path));
  } catch (const CorruptCheckpoint& e) {
    throw CorruptCheckpoint(path.string() + ": " + e.what());
  }
}

void assert_same_lineage(const Checkpoint& a, const Checkpoint& b) {
  const auto sa = schema_hash(a.weights);
  const auto sb = schema_hash(b.weights);
  if (sa != sb) {
    throw LineageMismatch("schema differs (" + sa.substr(0, 12) + " vs " + sb.substr(0, 12) + ")");
  }
  if (!(a.config == b.config)) throw LineageMismatch("operator configuration differs");
  if (!(a.normalizer == b.normalizer)) throw LineageMismatch("normalizer differs");
  const auto aa = anchor_of(a);
  const auto ab = anchor_of(b);
  if (aa.empty() || ab.empty()) throw LineageMismatch("checkpoint without anchor hash");
  if (aa != ab) {
    throw LineageMismatch("anchors differ (" + aa.substr(0, 12) + " vs " + ab.substr(0, 12) + ")");
  }
}

}  // namespace ccm
