#pragma once

// Versioned checkpoint files with lineage metadata.
//
// Layout (all integers little-endian):
//   "CCMCKPT\0"                  8 bytes
//   version                      u32
//   schema: count u32, then per entry name (u32 length + bytes), rank u32, dims u32...
//   values: count u64, then float64 bit patterns in flatten order
//   metadata: u32 length + JSON text (lineage, operator config, normalizer)
//   SHA-256 of every preceding byte, 32 raw bytes

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ccm/neural_operator.hpp"
#include "ccm/weight_set.hpp"

namespace ccm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointRole { anchor, endpoint_low, endpoint_high, merged, baseline };

std::string to_string(CheckpointRole role);
CheckpointRole checkpoint_role_from_string(const std::string& text);

struct Lineage {
  CheckpointRole role = CheckpointRole::anchor;
  std::string family;
  std::optional<double> lambda;  // endpoint coordinate
  std::string parent_hash;       // empty for anchors
  std::string anchor_hash;       // empty for anchors (they are their own anchor)
  std::uint64_t seed = 0;
  std::string config_digest;
  std::optional<double> alpha;        // merged checkpoints
  std::vector<std::string> sources;   // content hashes the merge was built from
  std::string method;                 // e.g. "coordinate-line", "ties"
  std::vector<std::pair<std::string, double>> hyperparameters;
  std::string created_by;             // producing stage

  bool operator==(const Lineage&) const = default;
};

struct Checkpoint {
  WeightSet weights;
  Lineage lineage;
  OperatorConfig config;
  Normalizer normalizer;

  bool operator==(const Checkpoint&) const = default;
};

// SHA-256 over the canonical schema and value encoding; metadata excluded.
std::string content_hash(const WeightSet& weights);
inline std::string content_hash(const Checkpoint& ckpt) { return content_hash(ckpt.weights); }

// The anchor hash this checkpoint descends from (its own hash for anchors).
std::string anchor_of(const Checkpoint& ckpt);

Checkpoint make_checkpoint(const OperatorModel& model, Lineage lineage);
OperatorModel to_model(const Checkpoint& ckpt);

std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws CorruptCheckpoint, VersionMismatch or SchemaMismatch; never returns
// a partially decoded checkpoint.
Checkpoint decode_checkpoint(const std::string& bytes);

// Returns the content hash.
std::string save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Throws LineageMismatch naming the divergence unless both checkpoints share
// schema, normalizer and anchor.
void assert_same_lineage(const Checkpoint& a, const Checkpoint& b);

}  // namespace ccm
