#include "dmd/data/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "dmd/core/rng.hpp"

namespace dmd {

using nlohmann::json;

std::string_view to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

Split parse_split(std::string_view tag) {
  if (tag == "train") return Split::kTrain;
  if (tag == "test") return Split::kTest;
  throw FormatError("unknown split '" + std::string(tag) + "'");
}

std::vector<const ManifestRecord*> Manifest::select(Split split) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(&r);
  }
  return out;
}

void Manifest::check_subject_exclusive() const {
  std::map<int, Split> seen;
  for (const auto& r : records) {
    auto [it, inserted] = seen.emplace(r.id, r.split);
    if (!inserted && it->second != r.split) {
      throw DataError("manifest: identity " + std::to_string(r.id) + " appears in both splits");
    }
  }
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw FormatError("manifest must be a JSON array");
  Manifest m;
  m.root = path.parent_path();
  for (const auto& rec : doc) {
    try {
      ManifestRecord r;
      r.id = rec.at("id").get<int>();
      const std::string variation = rec.at("variation").get<std::string>();
      try {
        r.variation = parse_variation(variation);
      } catch (const ConfigError& e) {
        throw FormatError(e.what());
      }
      r.clean = rec.at("clean").get<std::string>();
      r.degraded = rec.at("degraded").get<std::string>();
      r.split = parse_split(rec.at("split").get<std::string>());
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError("manifest record: " + std::string(e.what()));
    }
  }
  m.check_subject_exclusive();
  return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  json doc = json::array();
  for (const auto& r : manifest.records) {
    doc.push_back({{"id", r.id},
                   {"variation", std::string(to_string(r.variation))},
                   {"clean", r.clean},
                   {"degraded", r.degraded},
                   {"split", std::string(to_string(r.split))}});
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << doc.dump(1) << '\n';
}

Manifest synthesize_dataset(const SynthOptions& opts, const std::filesystem::path& out_dir) {
  if (opts.identities < 1 || opts.per_identity < 1) throw ConfigError("synth: need >= 1 identity and sample");
  if (opts.test_identities < 0 || opts.test_identities > opts.identities) {
    throw ConfigError("synth: test_identities out of range");
  }
  std::vector<int> order(opts.identities);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(mix_seed(opts.seed, 0x5e1));
  shuffle(order, split_rng);
  std::set<int> test_ids(order.begin(), order.begin() + opts.test_identities);

  Manifest m;
  m.root = out_dir;
  for (int id = 0; id < opts.identities; ++id) {
    const IdentityParams params = identity_params(id, opts.seed);
    const Split split = test_ids.contains(id) ? Split::kTest : Split::kTrain;
    for (int k = 0; k < opts.per_identity; ++k) {
      const Variation v = kAllVariations[k % 4];
      const DepthMap clean = synth_face(params, v, mix_seed(opts.seed, 0xface, static_cast<std::uint64_t>(k)));
      const DepthMap noisy =
          degrade(clean, opts.degrade, mix_seed(opts.seed, 0xde6 + static_cast<std::uint64_t>(id), k));
      char name[64];
      std::snprintf(name, sizeof name, "id%04d_s%02d_%s.dmf", id, k, std::string(to_string(v)).c_str());
      ManifestRecord r{id, v, std::string("clean/") + name, std::string("degraded/") + name, split};
      save_depth(clean, m.resolve(r.clean));
      save_depth(noisy, m.resolve(r.degraded));
      m.records.push_back(std::move(r));
    }
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace dmd
