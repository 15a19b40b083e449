#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmd/data/synth.hpp"

namespace dmd {

enum class Split { kTrain, kTest };

std::string_view to_string(Split s);
Split parse_split(std::string_view tag);

struct ManifestRecord {
  int id = 0;
  Variation variation = Variation::kNeutral;
  std::string clean;     // relative to the manifest directory
  std::string degraded;  // relative to the manifest directory
  Split split = Split::kTrain;
};

/// Identity-labelled clean/degraded pairs; train and test never share a subject.
struct Manifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path root;  // directory the relative paths resolve against

  std::vector<const ManifestRecord*> select(Split split) const;
  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
  /// Throws DataError if an identity appears in both splits.
  void check_subject_exclusive() const;
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct SynthOptions {
  int identities = 80;
  int test_identities = 16;
  int per_identity = 4;
  std::uint64_t seed = 0;
  DegradeConfig degrade;
};

/// Writes clean/ and degraded/ `.dmf` trees plus manifest.json under `out_dir`.
/// Test subjects are a seeded random subset; sample k of a subject has variation k mod 4.
Manifest synthesize_dataset(const SynthOptions& opts, const std::filesystem::path& out_dir);

}  // namespace dmd
