#include "dmd/train/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dmd::train {

namespace {

constexpr char kMagic[8] = {'D', 'M', 'D', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("checkpoint: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

static_assert(sizeof(float) == 4);

}  // namespace

const Tensor<float>* Archive::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_archive(const std::filesystem::path& path, const std::string& kind, const Json& meta,
                  const NamedTensors& tensors) {
  Json header;
  header["schema"] = kCheckpointSchema;
  header["kind"] = kind;
  header["meta"] = meta;
  header["tensors"] = Json::array();
  for (const auto& [name, t] : tensors) header["tensors"].push_back({{"name", name}, {"shape", t->shape()}});
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot write '" + tmp.string() + "'");
    out.write(kMagic, sizeof kMagic);
    put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors) {
      out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
    }
    if (!out) throw DataError("checkpoint: write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Archive load_archive(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw DataError("checkpoint: no such file '" + path.string() + "'");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path.string() + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw FormatError("checkpoint: '" + path.string() + "' is not a checkpoint archive");
  }
  const std::uint64_t len = get_u64(in);
  if (len > (1u << 26)) throw FormatError("checkpoint: header length " + std::to_string(len) + " is implausible");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint: truncated header");
  const Json header = Json::parse(text, nullptr, false);
  if (header.is_discarded() || !header.is_object()) throw FormatError("checkpoint: header is not JSON");
  if (header.value("schema", 0) != kCheckpointSchema) {
    throw FormatError("checkpoint: unsupported schema in '" + path.string() + "'");
  }
  Archive a;
  try {
    a.kind = header.at("kind").get<std::string>();
    a.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
      Tensor<float> v(t.at("shape").get<std::vector<int>>());
      if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)))) {
        throw FormatError("checkpoint: payload truncated at '" + t.at("name").get<std::string>() + "'");
      }
      a.tensors.emplace_back(t.at("name").get<std::string>(), std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("checkpoint: bad tensor shape: ") + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  return a;
}

void restore(const Archive& a, const std::vector<std::pair<std::string, Tensor<float>*>>& dst) {
  for (const auto& [name, t] : dst) {
    const Tensor<float>* src = a.find(name);
    if (!src) throw FormatError("checkpoint: missing tensor '" + name + "'");
    if (!src->same_shape(*t)) {
      throw FormatError("checkpoint: '" + name + "' has shape " + shape_string(src->shape()) + ", expected " +
                        shape_string(t->shape()));
    }
    *t = *src;
  }
}

std::vector<std::pair<std::string, Tensor<float>*>> named_state(const nn::ParamList<float>& params,
                                                                const nn::BufferList<float>& buffers) {
  std::vector<std::pair<std::string, Tensor<float>*>> out;
  for (auto* p : params) out.emplace_back(p->name, &p->value);
  for (const auto& b : buffers) out.emplace_back(b.name, b.tensor);
  return out;
}

diif::Dmdnet<float> load_denoiser(const std::filesystem::path& path) {
  const Archive a = load_archive(path);
  if (a.kind != "denoiser") throw FormatError("checkpoint: '" + path.string() + "' holds a " + a.kind);
  diif::DenoiserConfig cfg;
  try {
    cfg = denoiser_from_json(a.meta.at("denoiser"));
    cfg.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint: bad denoiser config: ") + e.what());
  }
  diif::Dmdnet<float> net(cfg);
  restore(a, named_state(net.parameters()));
  return net;
}

LoadedRecognizer load_recognizer(const std::filesystem::path& path) {
  const Archive a = load_archive(path);
  if (a.kind != "recognizer") throw FormatError("checkpoint: '" + path.string() + "' holds a " + a.kind);
  LoadedRecognizer r;
  ldnf::RecognizerConfig cfg;
  try {
    cfg = recognizer_from_json(a.meta.at("recognizer"));
    cfg.validate();
    r.classes = a.meta.at("classes").get<std::vector<int>>();
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint: bad recognizer config: ") + e.what());
  }
  if (static_cast<int>(r.classes.size()) != cfg.num_classes) throw FormatError("checkpoint: class list mismatch");
  r.net = ldnf::LdnfNet<float>(cfg);
  restore(a, named_state(r.net.parameters(), r.net.buffers()));
  return r;
}

std::uint64_t weights_hash(const nn::ParamList<float>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    for (std::size_t i = 0; i < p->value.size() * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace dmd::train
