#include "meanse/checkpoint.hpp"

#include <fstream>

#include "meanse/binary_io.hpp"

namespace meanse::io {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace meanse::io

namespace meanse::ckpt {

namespace {
constexpr char kMagic[8] = {'M', 'S', 'E', 'C', 'K', 'P', 'T', '\0'};
}

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size, std::uint64_t hash) {
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= data[i];
    hash *= 0x100000001b3ull;
  }
  return hash;
}

std::vector<std::uint8_t> serialize(const NetworkCheckpoint& ckpt) {
  io::ByteWriter w;
  w.put_raw(kMagic, sizeof kMagic);
  w.put(kFormatVersion);
  w.put(static_cast<std::uint8_t>(ckpt.network.mode()));
  const auto& c = ckpt.network.config();
  w.put<std::uint64_t>(c.n_bins);
  w.put<std::uint64_t>(c.patch_frames);
  w.put<std::uint64_t>(c.hidden);
  w.put<std::uint64_t>(c.blocks);
  w.put<std::uint64_t>(c.embed_dim);
  w.put_f64(c.fourier_scale);

  const auto& m = ckpt.meta;
  w.put(m.seed);
  w.put(m.stage);
  w.put_f64(m.max_width);
  w.put_f64(m.flow_ratio);
  w.put_f64(m.val_loss);
  w.put_f64(m.sigma);
  w.put(m.step);
  w.put(m.n_fft);
  w.put(m.hop);
  w.put(m.sample_rate_hz);
  w.put_f64(m.spec_scale);

  const auto freqs = ckpt.network.frequencies().values();
  w.put<std::uint64_t>(freqs.size());
  w.put_f64s(freqs);

  const auto& p = ckpt.network.params();
  w.put<std::uint64_t>(p.arrays.size());
  for (std::size_t i = 0; i < p.arrays.size(); ++i) {
    w.put_string(p.names[i]);
    const auto& shape = p.arrays[i].shape();
    w.put(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.put<std::uint64_t>(d);
    w.put_f64s(p.arrays[i].values());
  }
  const auto sum = fnv1a(w.bytes().data(), w.bytes().size());
  w.put(sum);
  return std::move(w.bytes());
}

NetworkCheckpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kMagic + 12) throw FormatError("checkpoint too short");
  const std::size_t body = bytes.size() - 8;
  io::ByteReader tail(std::span<const std::uint8_t>(bytes).subspan(body));
  if (tail.get<std::uint64_t>() != fnv1a(bytes.data(), body)) throw FormatError("checkpoint checksum mismatch");

  try {
    io::ByteReader r(std::span<const std::uint8_t>(bytes).first(body));
    char magic[8];
    r.get_raw(magic, sizeof magic);
    if (!std::equal(magic, magic + 8, kMagic)) throw FormatError("not a checkpoint file");
    const auto version = r.get<std::uint32_t>();
    if (version != kFormatVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto mode_tag = r.get<std::uint8_t>();
    if (mode_tag > 1) throw FormatError("unknown mode tag");
    const auto mode = static_cast<net::Mode>(mode_tag);

    net::NetworkConfig c;
    c.n_bins = r.get<std::uint64_t>();
    c.patch_frames = r.get<std::uint64_t>();
    c.hidden = r.get<std::uint64_t>();
    c.blocks = r.get<std::uint64_t>();
    c.embed_dim = r.get<std::uint64_t>();
    c.fourier_scale = r.get_f64();

    CheckpointMeta m;
    m.seed = r.get<std::uint64_t>();
    m.stage = r.get<std::int32_t>();
    m.max_width = r.get_f64();
    m.flow_ratio = r.get_f64();
    m.val_loss = r.get_f64();
    m.sigma = r.get_f64();
    m.step = r.get<std::uint64_t>();
    m.n_fft = r.get<std::uint32_t>();
    m.hop = r.get<std::uint32_t>();
    m.sample_rate_hz = r.get<std::uint32_t>();
    m.spec_scale = r.get_f64();

    const auto n_freq = r.get<std::uint64_t>();
    ad::NdArray freqs(ad::Shape{1, n_freq}, r.get_f64s(n_freq));

    net::NetworkParams p;
    const auto n_arrays = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n_arrays; ++i) {
      p.names.push_back(r.get_string());
      const auto rank = r.get<std::uint32_t>();
      if (rank > 4) throw FormatError("implausible array rank");
      ad::Shape shape(rank);
      for (auto& d : shape) d = r.get<std::uint64_t>();
      const auto n = ad::shape_size(shape);
      if (n * 8 > r.remaining()) throw FormatError("array payload truncated");
      p.arrays.emplace_back(shape, r.get_f64s(n));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes in checkpoint");
    return NetworkCheckpoint{net::VelocityNetwork(c, mode, std::move(freqs), std::move(p)), m};
  } catch (const std::out_of_range&) {
    throw FormatError("checkpoint truncated");
  } catch (const net::GeometryError& e) {
    throw FormatError(std::string("inconsistent checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid checkpoint geometry: ") + e.what());
  }
}

void save(const std::filesystem::path& path, const NetworkCheckpoint& ckpt) {
  io::write_file(path, serialize(ckpt));
}

NetworkCheckpoint load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

}  // namespace meanse::ckpt
