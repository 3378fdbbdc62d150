#include "pdeco/checkpoint.hpp"

#include "pdeco/binary_io.hpp"

namespace pdeco {

namespace {
constexpr std::string_view kMagic = "RNO1";
}

std::string serialize_checkpoint(const RnoConfig& cfg, const RnoParams& params) {
  io::ByteWriter w;
  w.bytes(kMagic);
  const std::string json = cfg.to_json();
  w.u64(json.size());
  w.bytes(json);
  for (const auto& t : params.tensors()) {
    w.u32(static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.shape()) w.u64(d);
    w.f64s(t.data());
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(kMagic.size(), "checkpoint magic") != kMagic) throw FormatError("not an RNO1 checkpoint", 0);
  const std::uint64_t json_len = r.u64("config length");
  if (json_len > r.remaining()) throw FormatError("config block length exceeds file size", r.offset());
  Checkpoint ck;
  ck.config = RnoConfig::from_json(std::string(r.bytes(json_len, "config block")));
  // The config fixes the tensor layout; build a template and fill it in order.
  const RnoParams layout = make_rno_params(ck.config, 0);
  std::size_t index = 0;
  ck.params = map_params(layout, [&](const Tensor& t) {
    const std::string what = "tensor " + std::to_string(index++);
    const std::size_t start = r.offset();
    const std::uint32_t ndim = r.u32(what);
    Shape shape(ndim);
    for (auto& d : shape) d = r.u64(what);
    if (shape != t.shape()) {
      throw FormatError(what + " has shape " + to_string(shape) + ", config expects " + to_string(t.shape()), start);
    }
    return Tensor(shape, r.f64s(numel(shape), what), true);
  });
  if (!r.at_end()) throw FormatError("trailing bytes after the last tensor", r.offset());
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const RnoConfig& cfg, const RnoParams& params) {
  io::write_file_atomic(path, serialize_checkpoint(cfg, params));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(io::read_file(path)); }

}  // namespace pdeco
