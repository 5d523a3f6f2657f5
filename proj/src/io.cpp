#include "unportrait/io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace unportrait {

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
  uint32_t v;
  static_assert(sizeof(v) == sizeof(f));
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

class ByteReader {
public:
  ByteReader(std::string data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

  uint32_t u32() { return uint32_t(u8()) | uint32_t(u8()) << 8 | uint32_t(u8()) << 16 | uint32_t(u8()) << 24; }
  uint64_t u64() {
    uint64_t lo = u32();
    return lo | uint64_t(u32()) << 32;
  }
  uint8_t u8() {
    if (pos_ >= data_.size()) throw std::runtime_error(name_ + ": truncated file");
    return uint8_t(data_[pos_++]);
  }
  float f32() {
    uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  bool at_end() const { return pos_ == data_.size(); }
  const std::string& name() const { return name_; }

private:
  std::string data_;
  std::string name_;
  size_t pos_ = 0;
};

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path.string() + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

}  // namespace

void write_flow(const std::filesystem::path& path, const FlowMap& flow, bool with_validity) {
  if (flow.width <= 0 || flow.height <= 0) throw std::invalid_argument("write_flow: empty flow");
  std::string out;
  out.reserve(13 + size_t(flow.width) * size_t(flow.height) * (8 + (with_validity ? 1 : 0)));
  out += "FLW1";
  put_u32(out, uint32_t(flow.width));
  put_u32(out, uint32_t(flow.height));
  out.push_back(with_validity ? char(1) : char(0));
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      put_f32(out, flow.dx(y, x));
      put_f32(out, flow.dy(y, x));
    }
  }
  if (with_validity) {
    for (int y = 0; y < flow.height; ++y)
      for (int x = 0; x < flow.width; ++x) out.push_back(char(flow.valid(y, x)));
  }
  write_file_bytes(path, out);
}

FlowMap read_flow(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path), path.string());
  char magic[4];
  for (char& c : magic) c = char(r.u8());
  if (std::memcmp(magic, "FLW1", 4) != 0) throw std::runtime_error(path.string() + ": bad flow magic");
  const uint32_t w = r.u32();
  const uint32_t h = r.u32();
  if (w == 0 || h == 0 || w > (1u << 20) || h > (1u << 20))
    throw std::runtime_error(path.string() + ": implausible flow dimensions");
  const uint8_t flags = r.u8();
  if (flags & ~uint8_t(1)) throw std::runtime_error(path.string() + ": unknown flow flags");
  FlowMap flow{int(w), int(h)};
  for (uint32_t y = 0; y < h; ++y) {
    for (uint32_t x = 0; x < w; ++x) {
      flow.dx(y, x) = r.f32();
      flow.dy(y, x) = r.f32();
    }
  }
  if (flags & 1) {
    for (uint32_t y = 0; y < h; ++y)
      for (uint32_t x = 0; x < w; ++x) flow.valid(y, x) = r.u8();
  }
  if (!r.at_end()) throw std::runtime_error(path.string() + ": trailing bytes");
  return flow;
}

namespace {

struct PngWriteCtx {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteCtx() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngReadCtx {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadCtx() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

}  // namespace

void write_png(const std::filesystem::path& path, const ImageBuffer& img, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("write_png: bit depth must be 8 or 16");
  if (img.width <= 0 || img.height <= 0) throw std::invalid_argument("write_png: empty image");

  PngWriteCtx ctx;
  ctx.fp = std::fopen(path.string().c_str(), "wb");
  if (!ctx.fp) throw std::runtime_error(path.string() + ": cannot open for writing");
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) throw std::runtime_error("png_create_write_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw std::runtime_error("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(ctx.png))) throw std::runtime_error(path.string() + ": png write error");

  png_init_io(ctx.png, ctx.fp);
  png_set_compression_level(ctx.png, 6);
  png_set_IHDR(ctx.png, ctx.info, png_uint_32(img.width), png_uint_32(img.height), bit_depth,
               PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);

  const Plane& alpha = img.has_mask() ? img.mask : img.rgba[3];
  const double scale = bit_depth == 8 ? 255.0 : 65535.0;
  if (bit_depth == 8) {
    std::vector<uint8_t> row(size_t(img.width) * 4);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        for (int c = 0; c < 3; ++c)
          row[size_t(x) * 4 + size_t(c)] =
              uint8_t(std::lround(std::clamp(double(img.rgba[size_t(c)](y, x)), 0.0, 1.0) * scale));
        row[size_t(x) * 4 + 3] = uint8_t(std::lround(std::clamp(double(alpha(y, x)), 0.0, 1.0) * scale));
      }
      png_write_row(ctx.png, row.data());
    }
  } else {
    std::vector<uint16_t> row(size_t(img.width) * 4);
    png_set_swap(ctx.png);  // file stores big-endian samples
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        for (int c = 0; c < 3; ++c)
          row[size_t(x) * 4 + size_t(c)] =
              uint16_t(std::lround(std::clamp(double(img.rgba[size_t(c)](y, x)), 0.0, 1.0) * scale));
        row[size_t(x) * 4 + 3] = uint16_t(std::lround(std::clamp(double(alpha(y, x)), 0.0, 1.0) * scale));
      }
      png_write_row(ctx.png, reinterpret_cast<png_bytep>(row.data()));
    }
  }
  png_write_end(ctx.png, ctx.info);
}

ImageBuffer read_png(const std::filesystem::path& path) {
  PngReadCtx ctx;
  ctx.fp = std::fopen(path.string().c_str(), "rb");
  if (!ctx.fp) throw std::runtime_error(path.string() + ": cannot open for reading");
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) throw std::runtime_error("png_create_read_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw std::runtime_error("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(ctx.png))) throw std::runtime_error(path.string() + ": png read error");

  png_init_io(ctx.png, ctx.fp);
  png_read_info(ctx.png, ctx.info);

  const png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
  const png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
  const int depth = png_get_bit_depth(ctx.png, ctx.info);
  const int color = png_get_color_type(ctx.png, ctx.info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
  if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(ctx.png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(ctx.png);
  if (!(color & PNG_COLOR_MASK_ALPHA) && !png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS))
    png_set_filler(ctx.png, depth == 16 ? 0xffff : 0xff, PNG_FILLER_AFTER);
  if (depth == 16) png_set_swap(ctx.png);
  png_read_update_info(ctx.png, ctx.info);

  const int out_depth = png_get_bit_depth(ctx.png, ctx.info);
  const double scale = out_depth == 8 ? 255.0 : 65535.0;
  ImageBuffer img(int(w), int(h), true);
  if (out_depth == 8) {
    std::vector<uint8_t> row(size_t(w) * 4);
    for (png_uint_32 y = 0; y < h; ++y) {
      png_read_row(ctx.png, row.data(), nullptr);
      for (png_uint_32 x = 0; x < w; ++x)
        for (int c = 0; c < 4; ++c)
          img.rgba[size_t(c)](y, x) = float(row[size_t(x) * 4 + size_t(c)] / scale);
    }
  } else {
    std::vector<uint16_t> row(size_t(w) * 4);
    for (png_uint_32 y = 0; y < h; ++y) {
      png_read_row(ctx.png, reinterpret_cast<png_bytep>(row.data()), nullptr);
      for (png_uint_32 x = 0; x < w; ++x)
        for (int c = 0; c < 4; ++c)
          img.rgba[size_t(c)](y, x) = float(row[size_t(x) * 4 + size_t(c)] / scale);
    }
  }
  png_read_end(ctx.png, nullptr);
  img.mask = img.rgba[3];
  return img;
}

bool Record::has(const std::string& key) const {
  for (const auto& [k, v] : fields)
    if (k == key) return true;
  return false;
}

const std::string& Record::get(const std::string& key) const {
  for (const auto& [k, v] : fields)
    if (k == key) return v;
  throw std::runtime_error("record: missing key '" + key + "'");
}

double Record::get_double(const std::string& key) const {
  const std::string& s = get(key);
  size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::runtime_error("record: key '" + key + "' is not a number");
  return v;
}

long Record::get_long(const std::string& key) const {
  const std::string& s = get(key);
  size_t pos = 0;
  const long v = std::stol(s, &pos);
  if (pos != s.size()) throw std::runtime_error("record: key '" + key + "' is not an integer");
  return v;
}

void Record::set(const std::string& key, std::string value) {
  if (key.empty() || key.find_first_of(" \t\n=") != std::string::npos)
    throw std::invalid_argument("record: invalid key '" + key + "'");
  if (value.empty() || value.find_first_of(" \t\n") != std::string::npos)
    throw std::invalid_argument("record: invalid value for key '" + key + "'");
  for (auto& [k, v] : fields) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  fields.emplace_back(key, std::move(value));
}

void Record::set_double(const std::string& key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  set(key, buf);
}

void Record::set_long(const std::string& key, long value) { set(key, std::to_string(value)); }

void write_keyvalue(const std::filesystem::path& path, const KeyValueFile& file) {
  if (file.kind.empty() || file.kind.find_first_of(" \t\n") != std::string::npos)
    throw std::invalid_argument("write_keyvalue: invalid kind");
  std::string out = "# " + file.kind + " v" + std::to_string(file.version) + "\n";
  for (const Record& rec : file.records) {
    bool first = true;
    for (const auto& [k, v] : rec.fields) {
      if (!first) out += ' ';
      out += k;
      out += '=';
      out += v;
      first = false;
    }
    out += '\n';
  }
  write_file_bytes(path, out);
}

KeyValueFile read_keyvalue(const std::filesystem::path& path, const std::string& expected_kind) {
  std::string data = read_file_bytes(path);
  std::istringstream in(data);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");

  KeyValueFile file;
  {
    std::istringstream hs(line);
    std::string hash, kind, ver;
    if (!(hs >> hash >> kind >> ver) || hash != "#" || ver.size() < 2 || ver[0] != 'v')
      throw std::runtime_error(path.string() + ": malformed header line");
    file.kind = kind;
    file.version = std::stoi(ver.substr(1));
  }
  if (!expected_kind.empty() && file.kind != expected_kind)
    throw std::runtime_error(path.string() + ": expected kind '" + expected_kind + "', found '" +
                             file.kind + "'");

  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Record rec;
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      const size_t eq = tok.find('=');
      if (eq == std::string::npos || eq == 0)
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                                 ": token is not key=value: '" + tok + "'");
      rec.fields.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
    }
    if (!rec.fields.empty()) file.records.push_back(std::move(rec));
  }
  return file;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<float>& params) {
  std::string out;
  out.reserve(16 + params.size() * 4);
  out += "UPDM";
  put_u32(out, kCheckpointVersion);
  put_u64(out, params.size());
  for (float f : params) put_f32(out, f);
  write_file_bytes(path, out);
}

std::vector<float> read_checkpoint(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path), path.string());
  char magic[4];
  for (char& c : magic) c = char(r.u8());
  if (std::memcmp(magic, "UPDM", 4) != 0)
    throw std::runtime_error(path.string() + ": bad checkpoint magic");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const uint64_t count = r.u64();
  std::vector<float> params(count);
  for (uint64_t i = 0; i < count; ++i) params[i] = r.f32();
  if (!r.at_end()) throw std::runtime_error(path.string() + ": trailing bytes");
  return params;
}

}  // namespace unportrait
