#include "star/core/checkpoint.hpp"

#include <cstring>

#include "star/core/binary_io.hpp"
#include "star/core/error.hpp"

namespace star::core {

std::vector<unsigned char> encode_checkpoint(const NamedTensors& tensors) {
  ByteWriter w;
  w.put_bytes(std::string_view(kCheckpointMagic, 4));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(tensors.size());
  for (const auto& [name, t] : tensors) {
    w.put_string(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.put<std::uint64_t>(e);
    for (double x : t.values()) w.put<double>(x);
  }
  return std::move(w.bytes());
}

NamedTensors decode_checkpoint(const std::vector<unsigned char>& bytes) {
  ByteReader r(bytes.data(), bytes.size(), "checkpoint");
  if (r.get_bytes(4) != std::string_view(kCheckpointMagic, 4)) throw FormatError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto count = r.get<std::uint64_t>();
  NamedTensors out;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError("checkpoint: implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& e : shape) e = r.get<std::uint64_t>();
    const std::size_t n = shape_numel(shape);
    if (n * sizeof(double) > r.remaining()) throw FormatError("checkpoint: truncated data for '" + name + "'");
    std::vector<double> data(n);
    for (auto& x : data) x = r.get<double>();
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  write_file_atomic(path, encode_checkpoint(tensors));
}

NamedTensors load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

NamedTensors to_named(const ParameterSet& params) {
  NamedTensors out;
  out.reserve(params.size());
  for (const auto& e : params.entries()) out.emplace_back(e.name, e.value);
  return out;
}

const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint: missing tensor '" + name + "'");
}

void assign_from(ParameterSet& params, const NamedTensors& tensors) {
  for (auto& e : params.entries()) {
    const Tensor& t = find_tensor(tensors, e.name);
    if (t.shape() != e.value.shape()) {
      throw ShapeError("checkpoint tensor '" + e.name + "' has shape " + shape_str(t.shape()) + ", expected " +
                       shape_str(e.value.shape()));
    }
    e.value = t;
  }
}

}  // namespace star::core
