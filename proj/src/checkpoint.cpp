#include "odflow/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace odflow::ad {

namespace {

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const std::string& s, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

std::uint32_t get_u32_le(const std::string& s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("cannot open checkpoint file: " + path);
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return s;
}

}  // namespace

void save_checkpoint(const std::string& stem, const std::vector<ParamEntry>& params, long step,
                     const nlohmann::json& extra, const std::string& dtype) {
  if (dtype != "f64" && dtype != "f32") throw contract_error("checkpoint dtype must be f64 or f32");

  std::string blob = "ODFLOWCK";
  nlohmann::json manifest;
  manifest["dtype"] = dtype;
  manifest["step"] = step;
  manifest["extra"] = extra;
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = blob.size();
  for (const ParamEntry& p : params) {
    nlohmann::json t;
    t["name"] = p.name;
    t["shape"] = p.tensor.shape();
    t["offset"] = offset;
    tensors.push_back(t);
    for (double v : p.tensor.values()) {
      if (dtype == "f64") {
        put_u64_le(blob, std::bit_cast<std::uint64_t>(v));
        offset += 8;
      } else {
        put_u32_le(blob, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        offset += 4;
      }
    }
  }
  manifest["tensors"] = tensors;

  std::ofstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw validation_error("cannot write checkpoint: " + stem + ".bin");
  bin << blob;
  std::ofstream js(stem + ".json", std::ios::binary);
  if (!js) throw validation_error("cannot write checkpoint: " + stem + ".json");
  js << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& stem) {
  std::string blob = read_all(stem + ".bin");
  if (blob.size() < 8 || blob.substr(0, 8) != "ODFLOWCK")
    throw integrity_error("bad checkpoint magic in " + stem + ".bin");
  nlohmann::json manifest = nlohmann::json::parse(read_all(stem + ".json"));

  Checkpoint ck;
  ck.step = manifest.at("step").get<long>();
  ck.extra = manifest.value("extra", nlohmann::json::object());
  const std::string dtype = manifest.at("dtype").get<std::string>();
  for (const auto& t : manifest.at("tensors")) {
    ParamEntry e;
    e.name = t.at("name").get<std::string>();
    Shape shape = t.at("shape").get<Shape>();
    std::uint64_t offset = t.at("offset").get<std::uint64_t>();
    Tensor tensor = Tensor::zeros(shape, true);
    const std::size_t width = dtype == "f64" ? 8 : 4;
    if (offset + tensor.numel() * width > blob.size())
      throw integrity_error("checkpoint blob truncated for tensor '" + e.name + "'");
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      if (dtype == "f64")
        tensor.values()[i] = std::bit_cast<double>(get_u64_le(blob, offset + 8 * i));
      else
        tensor.values()[i] = static_cast<double>(std::bit_cast<float>(get_u32_le(blob, offset + 4 * i)));
    }
    e.tensor = tensor;
    ck.params.push_back(std::move(e));
  }
  return ck;
}

}  // namespace odflow::ad
