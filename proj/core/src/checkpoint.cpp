#include <fstream>

#include "binio.hpp"
#include "mtl/model.hpp"

namespace mtl {

namespace {
constexpr char kMagic[4] = {'M', 'T', 'L', 'A'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path.string());
  binio::write_magic(out, kMagic);
  binio::write_le<std::uint32_t>(out, kVersion);
  binio::write_le<std::uint64_t>(out, model.digest());
  const auto& entries = model.params().entries();
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape& shape = tensor.shape();
    binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) binio::write_le<std::uint64_t>(out, d);
    for (double v : tensor.values()) binio::write_le<double>(out, v);
  }
  if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, Model& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  binio::expect_magic(in, kMagic, "checkpoint " + path.string());
  const auto version = binio::read_le<std::uint32_t>(in, "checkpoint version");
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto digest = binio::read_le<std::uint64_t>(in, "checkpoint digest");
  if (digest != model.digest())
    throw ConfigError("checkpoint digest mismatch: the checkpoint was written by a "
                      "different model architecture");
  const auto count = binio::read_le<std::uint32_t>(in, "parameter count");
  const auto& entries = model.params().entries();
  if (count != entries.size())
    throw DataError("checkpoint parameter count " + std::to_string(count) +
                    " does not match the model's " + std::to_string(entries.size()));
  for (const auto& [name, tensor] : entries) {
    const auto name_len = binio::read_le<std::uint32_t>(in, "parameter name length");
    std::string stored(name_len, '\0');
    if (!in.read(stored.data(), name_len))
      throw DataError("unexpected end of checkpoint while reading a name");
    if (stored != name)
      throw DataError("checkpoint parameter '" + stored + "' does not match expected '" +
                      name + "'");
    const auto rank = binio::read_le<std::uint32_t>(in, "parameter rank");
    Shape shape(rank);
    for (auto& d : shape)
      d = static_cast<std::size_t>(binio::read_le<std::uint64_t>(in, "parameter extent"));
    if (shape != tensor.shape())
      throw DataError("checkpoint shape " + shape_str(shape) + " for '" + name +
                      "' does not match model shape " + shape_str(tensor.shape()));
    Tensor t = tensor;  // handle onto shared storage
    for (double& v : t.values()) v = binio::read_le<double>(in, "parameter value");
  }
}

std::uint64_t read_checkpoint_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  binio::expect_magic(in, kMagic, "checkpoint " + path.string());
  (void)binio::read_le<std::uint32_t>(in, "checkpoint version");
  return binio::read_le<std::uint64_t>(in, "checkpoint digest");
}

}  // namespace mtl
