#include "geodist/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "geodist/errors.hpp"

namespace geodist {

const DenoiserModel& Checkpoint::denoiser() const {
  if (!is_denoiser()) throw ConfigError("checkpoint holds a vector-field model, not a denoiser");
  return std::get<DenoiserModel>(model);
}

const VectorFieldModel& Checkpoint::vector_field() const {
  if (is_denoiser()) throw ConfigError("checkpoint holds a denoiser, not a vector-field model");
  return std::get<VectorFieldModel>(model);
}

nlohmann::json to_json(const NormalizationTransform& transform) {
  return {{"shift", {transform.shift.x(), transform.shift.y(), transform.shift.z()}}, {"scale", transform.scale}};
}

NormalizationTransform transform_from_json(const nlohmann::json& j) {
  NormalizationTransform t;
  try {
    const auto& shift = j.at("shift");
    if (!shift.is_array() || shift.size() != 3) throw ParseError("normalization shift must have 3 entries");
    for (int k = 0; k < 3; ++k) t.shift(k) = shift.at(k).get<double>();
    t.scale = j.at("scale").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad normalization transform: ") + e.what());
  }
  if (!(t.scale > 0.0)) throw ParseError("normalization scale must be positive");
  return t;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
}

std::uint32_t crc32_of(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw ParseError("checkpoint truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t uint(int width) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(static_cast<std::size_t>(width)));
    std::uint64_t v = 0;
    for (int k = 0; k < width; ++k) v |= static_cast<std::uint64_t>(p[k]) << (8 * k);
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

const std::vector<ParamSegment>& segments_of(const Checkpoint& c) {
  return std::visit([](const auto& m) -> const std::vector<ParamSegment>& { return m.segments(); }, c.model);
}

const Eigen::VectorXf& params_of(const Checkpoint& c) {
  return std::visit([](const auto& m) -> const Eigen::VectorXf& { return m.params(); }, c.model);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  nlohmann::json header;
  if (checkpoint.is_denoiser()) {
    const auto& cfg = checkpoint.denoiser().config();
    header["model"] = "geodist";
    header["denoiser"] = {{"channels", cfg.channels},
                          {"n_blocks", cfg.n_blocks},
                          {"d_in", cfg.d_in},
                          {"fourier_bands", cfg.fourier_bands},
                          {"sigma_data", cfg.sigma_data}};
  } else {
    header["model"] = "vector_field";
    header["vector_field"] = {{"hidden", checkpoint.vector_field().hidden()}};
  }
  header["normalization"] = to_json(checkpoint.transform);
  header["info"] = checkpoint.info;
  const std::string text = header.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const auto& segments = segments_of(checkpoint);
  put_u32(out, static_cast<std::uint32_t>(segments.size()));
  for (const auto& seg : segments) {
    put_u32(out, static_cast<std::uint32_t>(seg.name.size()));
    out += seg.name;
    put_u64(out, static_cast<std::uint64_t>(seg.offset));
    put_u64(out, static_cast<std::uint64_t>(seg.size()));
  }
  const Eigen::VectorXf& params = params_of(checkpoint);
  for (Eigen::Index i = 0; i < params.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(params(i)));
  put_u32(out, crc32_of(out.data(), out.size()));
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) + 16) throw ParseError("checkpoint too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw ParseError("not a checkpoint (bad magic)");
  const std::size_t body = bytes.size() - 4;
  Reader crc_reader(bytes, bytes.size());
  crc_reader.take(body);
  if (crc_reader.uint(4) != crc32_of(bytes.data(), body)) throw ParseError("checkpoint CRC mismatch");

  Reader in(bytes, body);
  in.take(sizeof(kCheckpointMagic));
  const auto version = in.uint(4);
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = static_cast<std::size_t>(in.uint(4));
  const char* header_text = in.take(header_len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text, header_text + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad checkpoint header: ") + e.what());
  }

  struct Entry {
    std::string name;
    std::uint64_t offset;
    std::uint64_t length;
  };
  const auto entries = static_cast<std::size_t>(in.uint(4));
  if (entries > (body - in.pos()) / 20) throw ParseError("segment table larger than the file");
  std::vector<Entry> table(entries);
  for (auto& e : table) {
    const auto len = static_cast<std::size_t>(in.uint(4));
    e.name.assign(in.take(len), len);
    e.offset = in.uint(8);
    e.length = in.uint(8);
  }
  const std::size_t blob_bytes = body - in.pos();
  if (blob_bytes % 4 != 0) throw ParseError("parameter blob is not a whole number of float32 values");
  const auto count = static_cast<Eigen::Index>(blob_bytes / 4);
  std::uint64_t cursor = 0;
  for (const auto& e : table) {
    if (e.offset != cursor) throw ParseError("segment '" + e.name + "' leaves a gap or overlaps");
    cursor += e.length;
  }
  if (cursor != static_cast<std::uint64_t>(count)) throw ParseError("segment table does not cover the parameter blob");
  Eigen::VectorXf params(count);
  for (Eigen::Index i = 0; i < count; ++i) params(i) = std::bit_cast<float>(static_cast<std::uint32_t>(in.uint(4)));

  auto build = [&]() -> Checkpoint {
    const std::string kind = header.at("model").get<std::string>();
    NormalizationTransform transform = transform_from_json(header.at("normalization"));
    nlohmann::json info = header.value("info", nlohmann::json::object());
    if (kind == "geodist") {
      const auto& d = header.at("denoiser");
      DenoiserConfig cfg;
      cfg.channels = d.at("channels").get<int>();
      cfg.n_blocks = d.at("n_blocks").get<int>();
      cfg.d_in = d.at("d_in").get<int>();
      cfg.fourier_bands = d.at("fourier_bands").get<int>();
      cfg.sigma_data = d.at("sigma_data").get<double>();
      cfg.validate();
      return {DenoiserModel(cfg, std::move(params)), transform, std::move(info)};
    }
    if (kind == "vector_field") {
      auto hidden = header.at("vector_field").at("hidden").get<std::vector<int>>();
      for (int w : hidden)
        if (w < 1) throw ParseError("vector-field widths must be positive");
      if (hidden.empty()) throw ParseError("vector-field model needs a hidden layer");
      return {VectorFieldModel(std::move(hidden), std::move(params)), transform, std::move(info)};
    }
    throw ParseError("unknown model type '" + kind + "'");
  };
  std::optional<Checkpoint> result;
  try {
    result.emplace(build());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("bad checkpoint config: ") + e.what());
  } catch (const ShapeError& e) {
    throw ParseError(std::string("checkpoint parameters do not fit the model: ") + e.what());
  }

  const auto& segments = segments_of(*result);
  if (segments.size() != table.size()) throw ParseError("segment table does not match the model layout");
  for (std::size_t s = 0; s < table.size(); ++s) {
    if (table[s].name != segments[s].name || table[s].length != static_cast<std::uint64_t>(segments[s].size()))
      throw ParseError("segment '" + table[s].name + "' does not match the model layout");
  }
  return std::move(*result);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_checkpoint(bytes);
  } catch (const ParseError& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

}  // namespace geodist
