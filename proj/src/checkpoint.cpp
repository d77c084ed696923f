#include "lcirc/checkpoint.hpp"

#include <fstream>

namespace lcirc {

const TensorRecord* Container::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void write_container(const std::string& path, const std::string& magic, nlohmann::json header,
                     const std::vector<TensorRecord>& tensors) {
  auto list = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    list.push_back({{"name", t.name},
                    {"dtype", t.dtype},
                    {"shape", t.shape},
                    {"byte_offset", offset},
                    {"byte_len", t.bytes.size()}});
    offset += t.bytes.size();
  }
  header["tensors"] = std::move(list);
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : tensors) out.write(t.bytes.data(), static_cast<std::streamsize>(t.bytes.size()));
  if (!out) throw FormatError("write to " + path + " failed");
}

Container read_container(const std::string& path, const std::string& magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!in || got != magic) throw FormatError(path + ": bad magic, expected " + magic);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (std::uint64_t{1} << 32)) throw FormatError(path + ": bad header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError(path + ": truncated header");
  Container c;
  try {
    c.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": header is not valid JSON: " + e.what());
  }
  const auto payload_start = in.tellg();
  for (const auto& entry : c.header.at("tensors")) {
    TensorRecord r;
    r.name = entry.at("name").get<std::string>();
    r.dtype = entry.at("dtype").get<std::string>();
    r.shape = entry.at("shape").get<Shape>();
    const auto off = entry.at("byte_offset").get<std::uint64_t>();
    const auto n = entry.at("byte_len").get<std::uint64_t>();
    r.bytes.resize(n);
    in.seekg(payload_start + static_cast<std::streamoff>(off));
    in.read(r.bytes.data(), static_cast<std::streamsize>(n));
    if (!in) throw FormatError(path + ": truncated payload for '" + r.name + "'");
    c.tensors.push_back(std::move(r));
  }
  return c;
}

}  // namespace lcirc
