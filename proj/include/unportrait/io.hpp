#pragma once

#include "unportrait/flow.hpp"
#include "unportrait/image.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace unportrait {

// ---- flow files -------------------------------------------------------------
// Layout: magic "FLW1", u32 width, u32 height, u8 flags (bit0: validity plane
// present), then row-major little-endian f32 (dx, dy) pairs, then the optional
// u8 validity plane. Round trips are byte-exact.

void write_flow(const std::filesystem::path& path, const FlowMap& flow, bool with_validity = true);
FlowMap read_flow(const std::filesystem::path& path);

// ---- images -----------------------------------------------------------------
// 8- or 16-bit RGBA PNG with straight alpha. When the buffer carries a coverage
// mask it is written as the alpha channel; reads surface the alpha both as
// rgba[3] and as the mask plane.

void write_png(const std::filesystem::path& path, const ImageBuffer& img, int bit_depth = 8);
ImageBuffer read_png(const std::filesystem::path& path);

// ---- manifests / reports ----------------------------------------------------
// UTF-8 key-value text: a "# <kind> v<N>" header line, then one record per
// line as space-separated key=value tokens. Keys and values must not contain
// whitespace, '=' is allowed in values.

struct Record {
  std::vector<std::pair<std::string, std::string>> fields;

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long get_long(const std::string& key) const;
  void set(const std::string& key, std::string value);
  void set_double(const std::string& key, double value);  // fixed %.6f formatting
  void set_long(const std::string& key, long value);
};

struct KeyValueFile {
  std::string kind;  // e.g. "unportrait-manifest"
  int version = 1;
  std::vector<Record> records;
};

void write_keyvalue(const std::filesystem::path& path, const KeyValueFile& file);
KeyValueFile read_keyvalue(const std::filesystem::path& path, const std::string& expected_kind);

// ---- model checkpoints --------------------------------------------------------
// Layout: magic "UPDM", u32 version, u64 parameter count, little-endian f32
// parameters. Identical bytes for identical parameter vectors on any platform.

void write_checkpoint(const std::filesystem::path& path, const std::vector<float>& params);
std::vector<float> read_checkpoint(const std::filesystem::path& path);

constexpr uint32_t kCheckpointVersion = 1;

}  // namespace unportrait
