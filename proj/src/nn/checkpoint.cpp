#include "oar/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace oar::nn {

namespace {
constexpr char kMagic[8] = {'O', 'A', 'R', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                     BlobDtype dtype) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["meta"] = meta;
  manifest["tensors"] = nlohmann::json::array();

  std::size_t elem_size = dtype == BlobDtype::f32 ? 4 : 8;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = t->shape();
    entry["dtype"] = dtype == BlobDtype::f32 ? "f32" : "f64";
    entry["offset"] = offset;
    std::uint64_t bytes = static_cast<std::uint64_t>(t->numel()) * elem_size;
    entry["bytes"] = bytes;
    manifest["tensors"].push_back(entry);
    offset += bytes;
  }

  std::string manifest_str = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  out.write(kMagic, 8);
  std::uint64_t mlen = manifest_str.size();
  out.write(reinterpret_cast<const char*>(&mlen), 8);
  out.write(manifest_str.data(), static_cast<std::streamsize>(mlen));
  for (const auto& [name, t] : tensors) {
    (void)name;
    if (dtype == BlobDtype::f32) {
      std::vector<float> buf(static_cast<std::size_t>(t->numel()));
      for (std::int64_t i = 0; i < t->numel(); ++i) buf[static_cast<std::size_t>(i)] =
          static_cast<float>((*t)[i]);
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * 4));
    } else {
      out.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(t->numel() * 8));
    }
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

const Tensor& Checkpoint::require(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end())
    throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), 8);
  std::string manifest_str(mlen, '\0');
  in.read(manifest_str.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw std::runtime_error("load_checkpoint: truncated manifest in " + path.string());
  nlohmann::json manifest = nlohmann::json::parse(manifest_str);

  Checkpoint ckpt;
  ckpt.meta = manifest.value("meta", nlohmann::json::object());
  std::streampos blob_start = in.tellg();
  for (const auto& entry : manifest["tensors"]) {
    std::string name = entry["name"];
    std::vector<std::int64_t> shape = entry["shape"].get<std::vector<std::int64_t>>();
    std::string dt = entry["dtype"];
    std::uint64_t offset = entry["offset"];
    Tensor t(shape);
    in.seekg(blob_start + static_cast<std::streamoff>(offset));
    if (dt == "f32") {
      std::vector<float> buf(static_cast<std::size_t>(t.numel()));
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
      for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = buf[static_cast<std::size_t>(i)];
    } else if (dt == "f64") {
      in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
    } else {
      throw std::runtime_error("load_checkpoint: unknown dtype " + dt);
    }
    if (!in) throw std::runtime_error("load_checkpoint: truncated blob for tensor " + name);
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace oar::nn
