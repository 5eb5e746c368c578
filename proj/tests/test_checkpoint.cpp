#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "geodist/checkpoint.hpp"
#include "geodist/errors.hpp"

using namespace geodist;
namespace fs = std::filesystem;

namespace {

// Bitwise CRC-32 (reflected, polynomial 0xEDB88320).
std::uint32_t reference_crc32(const std::string& bytes) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (unsigned char c : bytes) {
    crc ^= c;
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

std::uint32_t read_u32(const std::string& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int k = 3; k >= 0; --k) v = (v << 8) | static_cast<unsigned char>(b[at + static_cast<std::size_t>(k)]);
  return v;
}

void write_u32(std::string& b, std::size_t at, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) b[at + static_cast<std::size_t>(k)] = static_cast<char>((v >> (8 * k)) & 0xFF);
}

// Replaces the trailing CRC so that only the intended corruption remains.
std::string reseal(std::string b) {
  write_u32(b, b.size() - 4, reference_crc32(b.substr(0, b.size() - 4)));
  return b;
}

Checkpoint denoiser_checkpoint() {
  DenoiserConfig cfg;
  cfg.channels = 16;
  cfg.n_blocks = 2;
  cfg.fourier_bands = 5;
  Checkpoint ckpt{DenoiserModel::initialize(cfg, 3), {}, {{"epoch", 12}, {"note", "unit"}}};
  ckpt.transform.shift = Eigen::Vector3d(0.25, -1.5, 3.0);
  ckpt.transform.scale = 0.7;
  return ckpt;
}

}  // namespace

TEST_CASE("denoiser checkpoint round trip is bit identical") {
  const Checkpoint ckpt = denoiser_checkpoint();
  const fs::path path = fs::temp_directory_path() / "geodist_test_checkpoint" / "model.ckpt";
  fs::create_directories(path.parent_path());
  save_checkpoint(path, ckpt);
  const Checkpoint back = load_checkpoint(path);
  REQUIRE(back.is_denoiser());
  CHECK(back.denoiser().params() == ckpt.denoiser().params());
  CHECK(back.denoiser().config().channels == 16);
  CHECK(back.denoiser().config().n_blocks == 2);
  CHECK(back.denoiser().config().fourier_bands == 5);
  CHECK(back.transform.shift == ckpt.transform.shift);
  CHECK(back.transform.scale == ckpt.transform.scale);
  CHECK(back.info == ckpt.info);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(ckpt));
  CHECK_FALSE(fs::exists(path.string() + ".tmp"));
  CHECK_THROWS_AS(back.vector_field(), ConfigError);
}

TEST_CASE("vector field checkpoint round trip") {
  const Checkpoint ckpt{VectorFieldModel::initialize({24, 8}, 4), {}, {}};
  const Checkpoint back = parse_checkpoint(serialize_checkpoint(ckpt));
  REQUIRE_FALSE(back.is_denoiser());
  CHECK(back.vector_field().hidden() == std::vector<int>{24, 8});
  CHECK(back.vector_field().params() == ckpt.vector_field().params());
  CHECK_THROWS_AS(back.denoiser(), ConfigError);
}

TEST_CASE("byte layout") {
  const Checkpoint ckpt = denoiser_checkpoint();
  const std::string b = serialize_checkpoint(ckpt);
  CHECK(b.substr(0, 8) == "GEODIST1");
  CHECK(read_u32(b, 8) == 1);
  const std::uint32_t header_len = read_u32(b, 12);
  const auto header = nlohmann::json::parse(b.substr(16, header_len));
  CHECK(header.at("model") == "geodist");
  CHECK(header.at("denoiser").at("channels") == 16);
  const std::size_t table = 16 + header_len;
  const std::uint32_t entries = read_u32(b, table);
  CHECK(entries == ckpt.denoiser().segments().size());
  CHECK(read_u32(b, b.size() - 4) == reference_crc32(b.substr(0, b.size() - 4)));

  // Blob is the tail before the CRC: float32 little-endian parameters in order.
  const Eigen::Index n = ckpt.denoiser().param_count();
  const std::size_t blob = b.size() - 4 - static_cast<std::size_t>(n) * 4;
  float first = 0.0f, last = 0.0f;
  std::memcpy(&first, b.data() + blob, 4);
  std::memcpy(&last, b.data() + blob + static_cast<std::size_t>(n - 1) * 4, 4);
  CHECK(first == ckpt.denoiser().params()(0));
  CHECK(last == ckpt.denoiser().params()(n - 1));
}

TEST_CASE("any flipped byte is rejected") {
  const std::string good = serialize_checkpoint(denoiser_checkpoint());
  for (std::size_t at = 0; at < good.size(); at += 1 + at / 16) {
    std::string bad = good;
    bad[at] = static_cast<char>(bad[at] ^ 0x5A);
    CHECK_THROWS_AS(parse_checkpoint(bad), ParseError);
  }
}

TEST_CASE("truncated files are rejected") {
  const std::string good = serialize_checkpoint(denoiser_checkpoint());
  for (std::size_t len : {std::size_t{0}, std::size_t{7}, std::size_t{20}, good.size() / 2, good.size() - 1}) {
    CHECK_THROWS_AS(parse_checkpoint(good.substr(0, len)), ParseError);
  }
}

TEST_CASE("structural violations with a valid CRC are rejected") {
  const Checkpoint ckpt = denoiser_checkpoint();
  const std::string good = serialize_checkpoint(ckpt);
  CHECK_NOTHROW(parse_checkpoint(reseal(good)));

  std::string version = good;
  write_u32(version, 8, 2);
  CHECK_THROWS_AS(parse_checkpoint(reseal(version)), ParseError);

  const std::uint32_t header_len = read_u32(good, 12);
  const std::size_t table = 16 + header_len;
  std::string huge_table = good;
  write_u32(huge_table, table, 0x7FFFFFFF);
  CHECK_THROWS_AS(parse_checkpoint(reseal(huge_table)), ParseError);

  // First entry: u32 name length, name, u64 offset, u64 length.
  const std::uint32_t name_len = read_u32(good, table + 4);
  const std::size_t offset_at = table + 8 + name_len;
  std::string gap = good;
  write_u32(gap, offset_at, 1);
  CHECK_THROWS_AS(parse_checkpoint(reseal(gap)), ParseError);

  std::string renamed = good;
  renamed[table + 8] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(reseal(renamed)), ParseError);

  std::string header = good;
  const std::size_t channels = good.find("\"channels\":16");
  REQUIRE(channels != std::string::npos);
  header.replace(channels, 13, "\"channels\":32");
  CHECK_THROWS_AS(parse_checkpoint(reseal(header)), ParseError);
}

TEST_CASE("missing and garbage files") {
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.ckpt"), IoError);
  const fs::path path = fs::temp_directory_path() / "geodist_test_checkpoint" / "garbage.ckpt";
  fs::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    out << "this is not a checkpoint at all, just text";
  }
  try {
    load_checkpoint(path);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("garbage.ckpt") != std::string::npos);
  }
}

TEST_CASE("normalization transform json") {
  NormalizationTransform t;
  t.shift = Eigen::Vector3d(1, 2, 3);
  t.scale = 0.5;
  const NormalizationTransform back = transform_from_json(to_json(t));
  CHECK(back.shift == t.shift);
  CHECK(back.scale == t.scale);
  CHECK_THROWS_AS(transform_from_json({{"shift", {1, 2}}, {"scale", 1.0}}), ParseError);
  CHECK_THROWS_AS(transform_from_json({{"shift", {1, 2, 3}}, {"scale", -1.0}}), ParseError);
}
