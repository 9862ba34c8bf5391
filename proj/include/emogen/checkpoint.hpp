#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "emogen/tensor.hpp"

namespace emogen {

// Parameters persist as two files: <prefix>.json holds the manifest (entry
// names, shapes, byte offsets into the blob, plus free-form metadata) and
// <prefix>.bin holds raw f64 values. Doubles are written byte-for-byte, so
// a load reproduces the saved state exactly.
static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian raw doubles");

using ordered_json = nlohmann::ordered_json;

inline void save_checkpoint(const std::string& prefix, const ParamStore& store,
                            const ordered_json& meta = ordered_json::object()) {
  ordered_json manifest;
  manifest["format"] = "emogen-ckpt-v1";
  manifest["rng_seed"] = store.rng_seed();
  manifest["meta"] = meta;
  ordered_json entries = ordered_json::array();
  size_t offset = 0;
  for (int i = 0; i < static_cast<int>(store.size()); ++i) {
    const auto& ent = store.entry(i);
    ordered_json e;
    e["name"] = ent.name;
    e["shape"] = ent.value.shape;
    e["dtype"] = "f64";
    e["byte_offset"] = offset;
    entries.push_back(std::move(e));
    offset += ent.value.v.size() * sizeof(double);
  }
  manifest["entries"] = std::move(entries);

  std::ofstream mf(prefix + ".json", std::ios::binary);
  if (!mf) throw DataError("cannot write " + prefix + ".json");
  mf << manifest.dump(2) << "\n";
  mf.close();
  if (!mf) throw DataError("write failed for " + prefix + ".json");

  std::ofstream bf(prefix + ".bin", std::ios::binary);
  if (!bf) throw DataError("cannot write " + prefix + ".bin");
  for (int i = 0; i < static_cast<int>(store.size()); ++i) {
    const auto& v = store.entry(i).value.v;
    bf.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  bf.close();
  if (!bf) throw DataError("write failed for " + prefix + ".bin");
}

inline ParamStore load_checkpoint(const std::string& prefix, ordered_json* meta_out = nullptr) {
  std::ifstream mf(prefix + ".json", std::ios::binary);
  if (!mf) throw DataError("cannot open " + prefix + ".json");
  ordered_json manifest;
  try {
    mf >> manifest;
  } catch (const std::exception& e) {
    throw DataError("bad manifest " + prefix + ".json: " + e.what());
  }
  if (manifest.value("format", "") != "emogen-ckpt-v1")
    throw DataError("unrecognized checkpoint format in " + prefix + ".json");

  std::ifstream bf(prefix + ".bin", std::ios::binary);
  if (!bf) throw DataError("cannot open " + prefix + ".bin");
  std::vector<char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  ParamStore store;
  store.set_rng_seed(manifest.value("rng_seed", uint64_t{0}));
  for (const auto& e : manifest.at("entries")) {
    std::string name = e.at("name").get<std::string>();
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    if (e.at("dtype").get<std::string>() != "f64")
      throw DataError("unsupported dtype for entry " + name);
    size_t offset = e.at("byte_offset").get<size_t>();
    Tensor& t = store.add(name, shape);
    size_t nbytes = t.v.size() * sizeof(double);
    if (offset + nbytes > blob.size()) throw DataError("checkpoint blob truncated at entry " + name);
    std::memcpy(t.v.data(), blob.data() + offset, nbytes);
  }
  if (meta_out) *meta_out = manifest.value("meta", ordered_json::object());
  return store;
}

}  // namespace emogen
