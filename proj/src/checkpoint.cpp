#include "lobemil/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace lobemil {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

using json = nlohmann::json;

void save_checkpoint(const std::string& path,
                     const std::map<std::string, Tensor>& tensors) {
  json header = json::object();
  uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    header[name] = {{"shape", t.shape()},
                    {"dtype", "f64"},
                    {"offset", offset}};
    offset += uint64_t(t.numel()) * sizeof(double);
  }
  std::string head = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  uint64_t head_len = head.size();
  out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
  out.write(head.data(), std::streamsize(head.size()));
  for (const auto& [name, t] : tensors)
    out.write(reinterpret_cast<const char*>(t.data().data()),
              std::streamsize(t.data().size() * sizeof(double)));
  if (!out) throw std::runtime_error("short write to " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  uint64_t head_len = 0;
  in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
  if (!in || head_len == 0 || head_len > (64u << 20))
    throw std::runtime_error("corrupt checkpoint header in " + path);
  std::string head(head_len, '\0');
  in.read(head.data(), std::streamsize(head_len));
  if (!in) throw std::runtime_error("corrupt checkpoint header in " + path);
  json header = json::parse(head, nullptr, false);
  if (header.is_discarded() || !header.is_object())
    throw std::runtime_error("corrupt checkpoint header in " + path);

  std::streampos payload_start = in.tellg();
  std::map<std::string, Tensor> out;
  for (auto& [name, meta] : header.items()) {
    Shape shape = meta.at("shape").get<Shape>();
    if (meta.at("dtype").get<std::string>() != "f64")
      throw std::runtime_error("unsupported dtype in checkpoint " + path);
    uint64_t off = meta.at("offset").get<uint64_t>();
    int64_t n = shape_numel(shape);
    std::vector<double> data(size_t(n), 0.0);
    in.seekg(payload_start + std::streamoff(off));
    in.read(reinterpret_cast<char*>(data.data()),
            std::streamsize(size_t(n) * sizeof(double)));
    if (!in)
      throw std::runtime_error("truncated checkpoint payload in " + path +
                               " for tensor " + name);
    out.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace lobemil
